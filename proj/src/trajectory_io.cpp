#include "guide/trajectory_io.hpp"

#include <sstream>

#include "guide/error.hpp"
#include "guide/fs_util.hpp"

namespace guide {

using nlohmann::json;

json vec_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from_json(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) {
    throw ParseError(path, "expected array of 3 numbers");
  }
  Vec3 v;
  for (int i = 0; i < 3; ++i) {
    if (!j[i].is_number()) {
      throw ParseError(path + "/" + std::to_string(i), "expected number");
    }
    v[i] = j[i].get<double>();
  }
  return v;
}

namespace {

double number_at(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || !j.at(key).is_number()) {
    throw ParseError(path + "/" + key, "expected number");
  }
  return j.at(key).get<double>();
}

json kinematics(const SpacecraftState& s) {
  return {{"pos", vec_to_json(s.position)}, {"vel", vec_to_json(s.velocity)}};
}

void read_kinematics(const json& j, const std::string& path, SpacecraftState& s) {
  if (!j.is_object()) {
    throw ParseError(path, "expected object");
  }
  s.position = vec_from_json(j.value("pos", json()), path + "/pos");
  s.velocity = vec_from_json(j.value("vel", json()), path + "/vel");
}

}  // namespace

json sample_to_json(const TrajectorySample& sample) {
  const auto& o = sample.obs;
  json bandit = kinematics(o.bandit);
  bandit["mass_total"] = o.bandit.total_mass;
  bandit["mass_prop"] = o.bandit.prop_mass;
  json guards = json::array();
  for (const auto& g : o.guards) {
    guards.push_back(kinematics(g));
  }
  return {{"t", o.t},
          {"bandit", std::move(bandit)},
          {"lady", kinematics(o.lady)},
          {"guards", std::move(guards)},
          {"command",
           {{"throttle", vec_to_json(sample.command.throttle)},
            {"duration", sample.command.duration}}}};
}

TrajectorySample sample_from_json(const json& j) {
  if (!j.is_object()) {
    throw ParseError("", "expected object");
  }
  TrajectorySample s;
  s.obs.t = number_at(j, "t", "");
  const json& bandit = j.value("bandit", json());
  read_kinematics(bandit, "/bandit", s.obs.bandit);
  s.obs.bandit.total_mass = number_at(bandit, "mass_total", "/bandit");
  s.obs.bandit.prop_mass = number_at(bandit, "mass_prop", "/bandit");
  read_kinematics(j.value("lady", json()), "/lady", s.obs.lady);
  const json& guards = j.value("guards", json());
  if (!guards.is_array() || guards.empty()) {
    throw ParseError("/guards", "expected non-empty array");
  }
  for (std::size_t i = 0; i < guards.size(); ++i) {
    SpacecraftState g;
    read_kinematics(guards[i], "/guards/" + std::to_string(i), g);
    s.obs.guards.push_back(g);
  }
  const json& cmd = j.value("command", json());
  if (!cmd.is_object()) {
    throw ParseError("/command", "expected object");
  }
  s.command.throttle = vec_from_json(cmd.value("throttle", json()), "/command/throttle");
  s.command.duration = number_at(cmd, "duration", "/command");
  return s;
}

std::string trajectory_to_jsonl(const Trajectory& trajectory) {
  std::string out;
  for (const auto& sample : trajectory) {
    out += sample_to_json(sample).dump();
    out += '\n';
  }
  return out;
}

Trajectory trajectory_from_jsonl(const std::string& text) {
  Trajectory out;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      continue;
    }
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no), e.what());
    }
    try {
      out.push_back(sample_from_json(j));
    } catch (const ParseError& e) {
      throw ParseError("line " + std::to_string(line_no) + e.path(), e.what());
    }
  }
  return out;
}

void write_trajectory(const std::filesystem::path& path, const Trajectory& trajectory) {
  write_file_atomic(path, trajectory_to_jsonl(trajectory));
}

Trajectory read_trajectory(const std::filesystem::path& path) {
  return trajectory_from_jsonl(read_file(path));
}

}  // namespace guide
