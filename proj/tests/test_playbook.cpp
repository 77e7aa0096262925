#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "guide/error.hpp"
#include "guide/playbook.hpp"
#include "support.hpp"

using namespace guide;
using nlohmann::json;

namespace {

RangeBound lo(double v) { return {v, std::nullopt}; }
RangeBound hi(double v) { return {std::nullopt, v}; }

Bullet example_one() {
  Bullet b;
  b.id = "guard-avoidance-00001";
  b.section = "guard_avoidance";
  b.type = BulletType::Constraint;
  b.text =
      "When the Guard is closing inside ∼220 m, stop all forward pursuit and instead apply continuous "
      "lateral and/or vertical evasive thrust (right/left and up/down only) until the Guard distance "
      "increases above this threshold.";
  b.conditions.time = lo(35);
  b.conditions.guard_distance = hi(220);
  b.conditions.guard_approaching = true;
  b.states = {{125.4, 430.0, 12.0, 230.0}, {137.0, 300.0, 14.0, 16.9}};
  b.evidence =
      "Guard closed from ∼230 m at t≈125.4 s to 16.9 m at t=137.0 s while forward throttle (fx=1.0) was "
      "maintained, causing a proximity violation with guard_distance=30.1 m.";
  b.episode_history = {"episode-2"};
  b.occurrence_count = 1;
  return b;
}

Bullet example_two() {
  Bullet b = example_one();
  b.text = "After the initial phase (t≥35 s), apply a two-tiered guard-avoidance regime.";
  b.conditions.guard_distance = hi(230);
  b.conditions.target_distance = hi(900);
  b.conditions.velocity = hi(25);
  b.episode_history = {"episode-1", "episode-2", "episode-4"};
  b.occurrence_count = 3;
  return b;
}

Bullet example_three() {
  Bullet b;
  b.id = "approach-00002";
  b.section = "approach";
  b.type = BulletType::Constraint;
  b.text =
      "When within ∼120 m of the Lady and still approaching faster than ∼18 m/s, switch to backward "
      "throttle or zero forward throttle until relative speed is reduced below 18 m/s to avoid "
      "overshoot.";
  b.conditions.target_distance = hi(120);
  b.conditions.velocity = lo(18);
  b.conditions.approaching = true;
  b.conditions.time = lo(35);
  b.evidence = "Bandit was 76 m from Lady at 23 m/s with no braking applied, resulting in overshoot.";
  b.episode_history = {"episode-3", "episode-5"};
  b.occurrence_count = 2;
  return b;
}

DerivedFeatures feat(double t, double g, double d, double v, bool guard_closing) {
  DerivedFeatures f;
  f.time = t;
  f.guard_distance = g;
  f.target_distance = d;
  f.velocity = v;
  f.guard_approaching = guard_closing;
  f.approaching = v > 0;
  return f;
}

Observation obs_at(double t, const Vec3& bandit, const Vec3& guard) {
  Observation o;
  o.t = t;
  o.bandit.position = bandit;
  SpacecraftState g;
  g.position = guard;
  o.guards.push_back(g);
  return o;
}

}  // namespace

TEST_CASE("example bullets validate and keep their ids") {
  for (const Bullet& b : {example_one(), example_two(), example_three()}) CHECK_NOTHROW(validate_bullet(b));
  CHECK(make_bullet_id("guard_avoidance", 1) == "guard-avoidance-00001");
  CHECK(make_bullet_id("approach", 2) == "approach-00002");
  CHECK(bullet_counter("approach-00002") == 2);
  CHECK_FALSE(bullet_counter("approach-2").has_value());
  CHECK(section_id_prefix("terminal_phase") == "terminal-phase");
}

TEST_CASE("example bullets serialize to the documented fields") {
  Playbook p;
  p.version = 2;
  p.parent_version = 1;
  p.bullets = {example_one(), example_three()};
  const json j = json::parse(serialize(p));
  const json& b0 = j["bullets"][0];
  CHECK(b0["id"] == "guard-avoidance-00001");
  CHECK(b0["type"] == "constraint");
  CHECK(b0["occurrence_count"] == 1);
  CHECK(b0["conditions"] == json::parse(R"({"time":{"min":35.0},"guard_distance":{"max":220.0},
                                            "guard_approaching":true})"));
  const json& b1 = j["bullets"][1];
  CHECK(b1["conditions"] == json::parse(R"({"target_distance":{"max":120.0},"velocity":{"min":18.0},
                                            "approaching":true,"time":{"min":35.0}})"));
  CHECK(j["parent_version"] == 1);
  CHECK(deserialize(serialize(p)) == p);
}

TEST_CASE("condition evaluation on the example bullets") {
  const Bullet one = example_one();
  CHECK(conditions_satisfied(one.conditions, feat(125.4, 200.0, 430.0, 12.0, true)));
  CHECK_FALSE(conditions_satisfied(one.conditions, feat(125.4, 230.0, 430.0, 12.0, true)));
  CHECK_FALSE(conditions_satisfied(one.conditions, feat(125.4, 200.0, 430.0, 12.0, false)));
  CHECK_FALSE(conditions_satisfied(one.conditions, feat(20.0, 200.0, 430.0, 12.0, true)));
  // Inclusive bounds.
  CHECK(conditions_satisfied(one.conditions, feat(35.0, 220.0, 430.0, 12.0, true)));

  const Bullet two = example_two();
  CHECK(conditions_satisfied(two.conditions, feat(125.4, 230.0, 430.0, 12.0, true)));
  CHECK_FALSE(conditions_satisfied(two.conditions, feat(125.4, 200.0, 950.0, 12.0, true)));
  CHECK_FALSE(conditions_satisfied(two.conditions, feat(125.4, 200.0, 430.0, 26.0, true)));

  const Bullet three = example_three();
  CHECK(conditions_satisfied(three.conditions, feat(100.0, 300.0, 76.0, 23.0, false)));
  CHECK_FALSE(conditions_satisfied(three.conditions, feat(100.0, 300.0, 76.0, 17.0, false)));
  CHECK_FALSE(conditions_satisfied(three.conditions, feat(100.0, 300.0, 121.0, 23.0, false)));
  CHECK(conditions_satisfied(ConditionBlock{}, feat(0, 0, 0, -5, false)));
}

TEST_CASE("derived features from consecutive observations") {
  const Observation prev = obs_at(124.4, Vec3(-430, 0, 0), Vec3(-430, 230, 0));
  const Observation cur = obs_at(125.4, Vec3(-418, 0, 0), Vec3(-418, 200, 0));
  const DerivedFeatures f = derive_features(cur, &prev);
  CHECK(f.time == 125.4);
  CHECK(f.guard_distance == doctest::Approx(200.0));
  CHECK(f.target_distance == doctest::Approx(418.0));
  CHECK(f.velocity == doctest::Approx(12.0));
  CHECK(f.guard_approaching);
  CHECK(f.approaching);
  CHECK(conditions_satisfied(example_one().conditions, f));

  const DerivedFeatures first = derive_features(cur, nullptr);
  CHECK(first.velocity == 0.0);
  CHECK_FALSE(first.guard_approaching);
  CHECK_FALSE(first.approaching);

  // Closing by less than the deadband is not approaching.
  const Observation still = obs_at(126.4, Vec3(-418, 0, 0), Vec3(-418, 199.95, 0));
  CHECK_FALSE(derive_features(still, &cur).guard_approaching);
  CHECK_THROWS_AS(derive_features(prev, &cur), InvalidInput);
}

TEST_CASE("active bullets are the ordered subset whose conditions hold") {
  testing::Gen g(41);
  for (int trial = 0; trial < 500; ++trial) {
    const Playbook p = g.playbook(g.integer(1, 9));
    const DerivedFeatures f = g.features();
    const auto active = active_bullets(p, f);
    std::size_t k = 0;
    for (const auto& b : p.bullets) {
      const bool hold = conditions_satisfied(b.conditions, f);
      if (hold) {
        REQUIRE(k < active.size());
        CHECK(active[k] == &b);
        ++k;
      }
    }
    CHECK(k == active.size());
  }
}

TEST_CASE("adding a bullet never deactivates another") {
  testing::Gen g(42);
  for (int trial = 0; trial < 300; ++trial) {
    const Playbook p = g.playbook(3);
    const DerivedFeatures f = g.features();
    std::set<std::string> before;
    for (const Bullet* b : active_bullets(p, f)) before.insert(b->id);
    const Bullet extra = g.bullet("fuel", next_bullet_counter(p));
    const Playbook q = apply_ops(p, std::vector<CuratorOp>{CuratorOp::add(extra)});
    std::set<std::string> after;
    for (const Bullet* b : active_bullets(q, f)) after.insert(b->id);
    CHECK(std::includes(after.begin(), after.end(), before.begin(), before.end()));
  }
}

TEST_CASE("activation log counts a bullet once per episode") {
  Playbook p;
  p.bullets = {example_one(), example_three()};
  ActivationLog log;
  active_bullets(p, feat(125.4, 200.0, 430.0, 12.0, true), &log);
  active_bullets(p, feat(126.4, 150.0, 76.0, 23.0, true), &log);
  active_bullets(p, feat(127.4, 100.0, 60.0, 20.0, true), &log);
  CHECK(log.first_activation().at("guard-avoidance-00001") == 125.4);
  CHECK(log.first_activation().at("approach-00002") == 126.4);
  CHECK(log.occurrences("guard-avoidance-00001") == 1);
  CHECK(log.occurrences("fuel-00009") == 0);
  CHECK_FALSE(log.record("approach-00002", 130.0));
}

TEST_CASE("ADD and UPDATE on the example guard-avoidance bullet") {
  const Playbook v0;
  Bullet one = example_one();
  const Playbook v1 = apply_ops(v0, std::vector<CuratorOp>{CuratorOp::add(one)});
  CHECK(v1.version == 1);
  CHECK(v1.parent_version == 0);
  REQUIRE(v1.bullets.size() == 1);
  CHECK(v1.bullets[0].occurrence_count == 1);
  CHECK(v1.created_from_episodes == std::vector<std::string>{"episode-2"});

  Bullet refined = example_two();
  refined.episode_history = {"episode-1", "episode-4"};
  refined.occurrence_count = 2;
  const Playbook v2 = apply_ops(v1, std::vector<CuratorOp>{CuratorOp::update(refined)});
  REQUIRE(v2.bullets.size() == 1);
  const Bullet& merged = v2.bullets[0];
  CHECK(merged.occurrence_count == 3);
  CHECK(merged.episode_history.size() == 3);
  CHECK(merged.conditions == example_two().conditions);
  CHECK(v1.bullets[0] == one);  // parent untouched

  const Playbook v3 = apply_ops(v2, std::vector<CuratorOp>{CuratorOp::remove("guard-avoidance-00001")});
  CHECK(v3.bullets.empty());
  CHECK(v3.version == 3);
}

TEST_CASE("an invalid op rejects the whole batch") {
  Playbook base;
  base.bullets = {example_one()};
  Bullet bad_id = example_three();
  bad_id.id = "fuel-00002";
  Bullet low_count = example_three();
  low_count.occurrence_count = 1;  // history has two distinct episodes
  Bullet inverted = example_three();
  inverted.conditions.velocity = RangeBound{30.0, 10.0};
  const std::vector<std::vector<CuratorOp>> batches = {
      {CuratorOp::add(example_three()), CuratorOp::add(example_one())},
      {CuratorOp::add(example_three()), CuratorOp::remove("approach-00099")},
      {CuratorOp::update(example_three())},
      {CuratorOp::add(bad_id)},
      {CuratorOp::add(low_count)},
      {CuratorOp::add(inverted)},
  };
  for (const auto& ops : batches) {
    const Playbook copy = base;
    CHECK_THROWS_AS(apply_ops(base, ops), OpError);
    CHECK(base == copy);
  }
}

TEST_CASE("random playbooks round-trip through JSON") {
  testing::Gen g(43);
  for (int i = 0; i < 1000; ++i) {
    const Playbook p = g.playbook(g.integer(0, 12));
    const std::string text = serialize(p);
    const Playbook q = deserialize(text);
    CHECK(q == p);
    CHECK(serialize(q) == text);
  }
}

TEST_CASE("parse errors name the offending location") {
  Playbook p;
  p.version = 1;
  p.parent_version = 0;
  p.bullets = {example_one()};
  json j = json::parse(serialize(p));

  SUBCASE("non-numeric bound") {
    j["bullets"][0]["conditions"]["guard_distance"]["max"] = "fast";
    try {
      deserialize(j.dump());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.path() == "/bullets/0/conditions/guard_distance/max");
    }
  }
  SUBCASE("unknown field") {
    j["bullets"][0]["priority"] = 3;
    try {
      deserialize(j.dump());
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.path() == "/bullets/0/priority");
    }
  }
  SUBCASE("missing field") {
    j["bullets"][0].erase("evidence");
    CHECK_THROWS_AS(deserialize(j.dump()), ParseError);
  }
  SUBCASE("bad type") {
    j["bullets"][0]["type"] = "hint";
    CHECK_THROWS_AS(deserialize(j.dump()), ParseError);
  }
  SUBCASE("not json") { CHECK_THROWS_AS(deserialize("{\"version\": 1,"), ParseError); }
}

TEST_CASE("lineage follows parent versions back to v0") {
  testing::Gen g(44);
  for (int trial = 0; trial < 50; ++trial) {
    Playbook cur;
    std::vector<Playbook> chain{cur};
    const int depth = g.integer(1, 8);
    for (int i = 0; i < depth; ++i) {
      const Bullet b = g.bullet("approach", next_bullet_counter(cur));
      cur = apply_ops(cur, std::vector<CuratorOp>{CuratorOp::add(b)});
      chain.push_back(cur);
    }
    for (std::size_t k = 1; k < chain.size(); ++k) {
      CHECK(chain[k].parent_version == chain[k - 1].version);
      CHECK(chain[k].version == static_cast<int>(k));
      CHECK(chain[k].bullets.size() == k);
    }
  }
}
