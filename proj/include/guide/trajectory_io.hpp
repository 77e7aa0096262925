#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "guide/scenario.hpp"

namespace guide {

// One JSON Lines record per control step:
// {t, bandit:{pos,vel,mass_total,mass_prop}, lady:{pos,vel}, guards:[{pos,vel}],
//  command:{throttle,duration}}. Doubles round-trip exactly.
nlohmann::json sample_to_json(const TrajectorySample& sample);
TrajectorySample sample_from_json(const nlohmann::json& j);

nlohmann::json vec_to_json(const Vec3& v);
Vec3 vec_from_json(const nlohmann::json& j, const std::string& path);

std::string trajectory_to_jsonl(const Trajectory& trajectory);
Trajectory trajectory_from_jsonl(const std::string& text);

void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory);
Trajectory read_trajectory(const std::filesystem::path& path);

}  // namespace guide
