#include <set>

#include <nlohmann/json.hpp>

#include "guide/error.hpp"
#include "guide/playbook.hpp"

namespace guide {

using nlohmann::json;

namespace {

json range_to_json(const RangeBound& r) {
  json j = json::object();
  if (r.min) j["min"] = *r.min;
  if (r.max) j["max"] = *r.max;
  return j;
}

}  // namespace

json conditions_to_json(const ConditionBlock& c) {
  json j = json::object();
  if (c.time) j["time"] = range_to_json(*c.time);
  if (c.guard_distance) j["guard_distance"] = range_to_json(*c.guard_distance);
  if (c.target_distance) j["target_distance"] = range_to_json(*c.target_distance);
  if (c.velocity) j["velocity"] = range_to_json(*c.velocity);
  if (c.guard_approaching) j["guard_approaching"] = *c.guard_approaching;
  if (c.approaching) j["approaching"] = *c.approaching;
  return j;
}

namespace {

json bullet_to_json(const Bullet& b) {
  json states = json::array();
  for (const auto& s : b.states) {
    states.push_back({{"t", s.t}, {"d_lady", s.d_lady}, {"v", s.v}, {"d_guard", s.d_guard}});
  }
  return {{"id", b.id},
          {"section", b.section},
          {"type", to_string(b.type)},
          {"text", b.text},
          {"conditions", conditions_to_json(b.conditions)},
          {"states", std::move(states)},
          {"evidence", b.evidence},
          {"episode_history", b.episode_history},
          {"occurrence_count", b.occurrence_count}};
}

// Schema reader that tracks the JSON path of every value it touches.
class Reader {
 public:
  static void expect_object(const json& j, const std::string& path,
                            std::initializer_list<const char*> allowed,
                            std::initializer_list<const char*> required) {
    if (!j.is_object()) {
      throw ParseError(path, "expected object");
    }
    std::set<std::string> keys(allowed.begin(), allowed.end());
    for (const auto& item : j.items()) {
      if (!keys.count(item.key())) {
        throw ParseError(path + "/" + item.key(), "unknown field");
      }
    }
    for (const char* key : required) {
      if (!j.contains(key)) {
        throw ParseError(path + "/" + key, "missing required field");
      }
    }
  }

  static double number(const json& j, const std::string& path) {
    if (!j.is_number()) {
      throw ParseError(path, "expected number");
    }
    return j.get<double>();
  }

  static int integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) {
      throw ParseError(path, "expected integer");
    }
    return j.get<int>();
  }

  static std::string string(const json& j, const std::string& path) {
    if (!j.is_string()) {
      throw ParseError(path, "expected string");
    }
    return j.get<std::string>();
  }

  static bool boolean(const json& j, const std::string& path) {
    if (!j.is_boolean()) {
      throw ParseError(path, "expected boolean");
    }
    return j.get<bool>();
  }

  static std::vector<std::string> strings(const json& j, const std::string& path) {
    if (!j.is_array()) {
      throw ParseError(path, "expected array");
    }
    std::vector<std::string> out;
    for (std::size_t i = 0; i < j.size(); ++i) {
      out.push_back(string(j[i], path + "/" + std::to_string(i)));
    }
    return out;
  }

  static RangeBound range(const json& j, const std::string& path) {
    expect_object(j, path, {"min", "max"}, {});
    RangeBound r;
    if (j.contains("min")) r.min = number(j["min"], path + "/min");
    if (j.contains("max")) r.max = number(j["max"], path + "/max");
    if (r.min && r.max && *r.min > *r.max) {
      throw ParseError(path, "min greater than max");
    }
    return r;
  }

  static ConditionBlock conditions(const json& j, const std::string& path) {
    expect_object(j, path,
                  {"time", "guard_distance", "target_distance", "velocity", "guard_approaching",
                   "approaching"},
                  {});
    ConditionBlock c;
    if (j.contains("time")) c.time = range(j["time"], path + "/time");
    if (j.contains("guard_distance"))
      c.guard_distance = range(j["guard_distance"], path + "/guard_distance");
    if (j.contains("target_distance"))
      c.target_distance = range(j["target_distance"], path + "/target_distance");
    if (j.contains("velocity")) c.velocity = range(j["velocity"], path + "/velocity");
    if (j.contains("guard_approaching"))
      c.guard_approaching = boolean(j["guard_approaching"], path + "/guard_approaching");
    if (j.contains("approaching")) c.approaching = boolean(j["approaching"], path + "/approaching");
    return c;
  }

  static Bullet bullet(const json& j, const std::string& path) {
    static constexpr std::initializer_list<const char*> kFields = {
        "id",     "section",  "type",           "text",           "conditions",
        "states", "evidence", "episode_history", "occurrence_count"};
    expect_object(j, path, kFields, kFields);
    Bullet b;
    b.id = string(j["id"], path + "/id");
    b.section = string(j["section"], path + "/section");
    const std::string type = string(j["type"], path + "/type");
    if (type == "constraint") {
      b.type = BulletType::Constraint;
    } else if (type == "rule") {
      b.type = BulletType::Rule;
    } else {
      throw ParseError(path + "/type", "expected \"constraint\" or \"rule\"");
    }
    b.text = string(j["text"], path + "/text");
    b.conditions = conditions(j["conditions"], path + "/conditions");
    const json& states = j["states"];
    if (!states.is_array()) {
      throw ParseError(path + "/states", "expected array");
    }
    for (std::size_t i = 0; i < states.size(); ++i) {
      const std::string sp = path + "/states/" + std::to_string(i);
      expect_object(states[i], sp, {"t", "d_lady", "v", "d_guard"}, {"t", "d_lady", "v", "d_guard"});
      b.states.push_back({number(states[i]["t"], sp + "/t"), number(states[i]["d_lady"], sp + "/d_lady"),
                          number(states[i]["v"], sp + "/v"),
                          number(states[i]["d_guard"], sp + "/d_guard")});
    }
    b.evidence = string(j["evidence"], path + "/evidence");
    b.episode_history = strings(j["episode_history"], path + "/episode_history");
    b.occurrence_count = integer(j["occurrence_count"], path + "/occurrence_count");
    try {
      validate_bullet(b);
    } catch (const OpError& e) {
      throw ParseError(path, e.what());
    }
    return b;
  }
};

}  // namespace

ConditionBlock conditions_from_json(const json& j, const std::string& path) {
  return Reader::conditions(j, path);
}

std::string serialize(const Playbook& playbook) {
  json bullets = json::array();
  for (const auto& b : playbook.bullets) {
    bullets.push_back(bullet_to_json(b));
  }
  json j = {{"version", playbook.version},
            {"created_from_episodes", playbook.created_from_episodes},
            {"bullets", std::move(bullets)}};
  if (playbook.parent_version) {
    j["parent_version"] = *playbook.parent_version;
  }
  return j.dump(2) + "\n";
}

Playbook deserialize(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("", std::string("invalid JSON: ") + e.what());
  }
  Reader::expect_object(j, "", {"version", "parent_version", "created_from_episodes", "bullets"},
                        {"version", "created_from_episodes", "bullets"});
  Playbook p;
  p.version = Reader::integer(j["version"], "/version");
  if (p.version < 0) {
    throw ParseError("/version", "must be non-negative");
  }
  if (j.contains("parent_version")) {
    p.parent_version = Reader::integer(j["parent_version"], "/parent_version");
  }
  p.created_from_episodes = Reader::strings(j["created_from_episodes"], "/created_from_episodes");
  const json& bullets = j["bullets"];
  if (!bullets.is_array()) {
    throw ParseError("/bullets", "expected array");
  }
  std::set<std::string> seen;
  for (std::size_t i = 0; i < bullets.size(); ++i) {
    const std::string path = "/bullets/" + std::to_string(i);
    Bullet b = Reader::bullet(bullets[i], path);
    if (!seen.insert(b.id).second) {
      throw ParseError(path + "/id", "duplicate bullet id " + b.id);
    }
    p.bullets.push_back(std::move(b));
  }
  if (p.version == 0 && !p.bullets.empty()) {
    throw ParseError("/bullets", "version 0 must be empty");
  }
  return p;
}

}  // namespace guide
