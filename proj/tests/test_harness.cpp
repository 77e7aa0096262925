#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <doctest.h>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guide/fs_util.hpp"
#include "guide/harness.hpp"
#include "support.hpp"

using namespace guide;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

ExperimentConfig small_run(const fs::path& out, ScenarioId scenario = ScenarioId::LG4) {
  ExperimentConfig c;
  c.scenario = scenario;
  c.policies = {PolicyKind::Prograde, PolicyKind::Lqr};
  c.episodes = 3;
  c.seed = 7;
  c.backend = BackendKind::Mock;
  c.out_dir = out;
  return c;
}

ExperimentConfig small_evolve(const fs::path& out) {
  ExperimentConfig c;
  c.scenario = ScenarioId::LG6;
  c.policies = {PolicyKind::ScriptedFollower};
  c.episodes = 3;
  c.seed = 3;
  c.batch_size = 3;
  c.max_versions = 3;
  c.rounds = 4;
  c.backend = BackendKind::Mock;
  c.out_dir = out;
  return c;
}

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

template <typename Fn>
Outcome capture(Fn&& fn) {
  std::ostringstream out, err;
  const int code = fn(out, err);
  return {code, out.str(), err.str()};
}

Outcome run(const ExperimentConfig& c) {
  return capture([&](auto& o, auto& e) { return cmd_run(c, o, e); });
}
Outcome evolve(const ExperimentConfig& c) {
  return capture([&](auto& o, auto& e) { return cmd_evolve(c, o, e); });
}
Outcome replay(const fs::path& p) {
  return capture([&](auto& o, auto& e) { return cmd_replay(p, o, e); });
}

std::set<std::string> files_under(const fs::path& dir) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.insert(e.path().lexically_relative(dir).generic_string());
  }
  return out;
}

class ScopedUnset {
 public:
  explicit ScopedUnset(const char* name) : name_(name) {
    if (const char* v = std::getenv(name)) saved_ = v;
    ::unsetenv(name);
  }
  ~ScopedUnset() {
    if (saved_) ::setenv(name_, saved_->c_str(), 1);
  }

 private:
  const char* name_;
  std::optional<std::string> saved_;
};

}  // namespace

TEST_CASE("config JSON round-trips and flags override file values") {
  ExperimentConfig c = small_evolve("/tmp/x");
  c.seeds = {1, 2, 3};
  c.epsilon = 0.35;
  c.miner.warmup = 20.0;
  const ExperimentConfig back = config_from_json(config_to_json(c));
  CHECK(config_to_json(back) == config_to_json(c));

  const json file = json::parse(R"({"scenario": "lg7", "episodes": 9, "epsilon": 0.5,
                                    "policies": ["llm_playbook"], "backend": "mock"})");
  ExperimentConfig base = config_from_json(file);
  CHECK(base.scenario == ScenarioId::LG7);
  CHECK(base.episodes == 9);
  CHECK(base.epsilon == 0.5);
  CHECK(base.policies == std::vector<PolicyKind>{PolicyKind::LlmPlaybook});
  CHECK(base.seed == ExperimentConfig{}.seed);
  // A flag applied afterwards wins; untouched fields keep the file value.
  base.episodes = 4;
  CHECK(base.episodes == 4);
  CHECK(base.epsilon == 0.5);

  CHECK_THROWS_AS(config_from_json(json::parse(R"({"episodess": 3})")), UsageError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"scenario": "lg9"})")), UsageError);
  CHECK_THROWS_AS(config_from_json(json::parse(R"({"episodes": "many"})")), UsageError);
}

TEST_CASE("config validation names the offending field") {
  ExperimentConfig c;
  c.episodes = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("episodes"), UsageError);
  c = ExperimentConfig{};
  c.epsilon = 1.5;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("epsilon"), UsageError);
  c = ExperimentConfig{};
  c.seeds = {1, 2};
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("seeds"), UsageError);
  c = ExperimentConfig{};
  c.scenario = ScenarioId::Custom;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("episode seeds expand deterministically or come from the list") {
  ExperimentConfig c;
  c.episodes = 5;
  const auto a = episode_seeds(c), b = episode_seeds(c);
  CHECK(a == b);
  CHECK(std::set<std::uint64_t>(a.begin(), a.end()).size() == 5);
  c.seed = 8;
  CHECK(episode_seeds(c) != a);
  c.seeds = {10, 11, 12, 13, 14, 15};
  CHECK(episode_seeds(c) == std::vector<std::uint64_t>{10, 11, 12, 13, 14});
}

TEST_CASE("scenario file overrides geometry") {
  testing::TempDir dir("scen");
  const fs::path file = dir.path() / "geom.json";
  write_file_atomic(file, R"({"bandit": {"position": [-700, 0, 0]}, "episode_duration": 120,
                              "guards": [{"position": [-300, 50, 0], "mode": "defense"}]})");
  ExperimentConfig c;
  c.scenario = ScenarioId::Custom;
  c.scenario_file = file;
  const ScenarioConfig s = scenario_for(c, 1);
  CHECK(s.initial.bandit.position == Vec3(-700, 0, 0));
  CHECK(s.steps() == 120u);
  REQUIRE(s.initial.guards.size() == 1);
  CHECK(s.guard_policies[0].mode == GuardMode::Defense);

  write_file_atomic(file, R"({"bandit": {"mass": 3}})");
  CHECK_THROWS_AS(scenario_for(c, 1), UsageError);
}

TEST_CASE("run writes records, a report and a complete manifest") {
  testing::TempDir dir("run");
  const ExperimentConfig c = small_run(dir.path());
  const Outcome o = run(c);
  REQUIRE(o.code == kExitOk);
  CHECK(o.out.find("prograde") != std::string::npos);
  CHECK(o.out.find("lqr") != std::string::npos);
  const fs::path rd = c.run_dir();
  CHECK(fs::exists(rd / "report.txt"));
  CHECK(read_file(rd / "report.txt") == o.out);

  const RunManifest m = read_manifest(rd);
  CHECK(m.command == "run");
  CHECK(m.code_version == kCodeVersion);
  CHECK(m.episodes.size() == 6);
  CHECK_FALSE(m.created_at.empty());
  std::set<std::string> listed(m.files.begin(), m.files.end());
  listed.insert("manifest.json");
  CHECK(listed == files_under(rd));
  for (const auto& e : m.episodes) {
    CHECK(fs::exists(rd / e.record));
    CHECK(e.episode_id.find(e.policy + "-e") == 0);
  }
}

TEST_CASE("the same run twice gives an identical report and identical records") {
  testing::TempDir a("det-a"), b("det-b");
  const Outcome oa = run(small_run(a.path(), ScenarioId::LG5));
  const Outcome ob = run(small_run(b.path(), ScenarioId::LG5));
  REQUIRE(oa.code == kExitOk);
  REQUIRE(ob.code == kExitOk);
  CHECK(oa.out == ob.out);
  const RunManifest ma = read_manifest(a.path() / "lg5"), mb = read_manifest(b.path() / "lg5");
  REQUIRE(ma.episodes.size() == mb.episodes.size());
  for (std::size_t i = 0; i < ma.episodes.size(); ++i) {
    CHECK(read_file(a.path() / "lg5" / ma.episodes[i].record) ==
          read_file(b.path() / "lg5" / mb.episodes[i].record));
  }
}

TEST_CASE("a run is reproducible from its manifest") {
  testing::TempDir a("man-a"), b("man-b");
  const ExperimentConfig c = small_run(a.path(), ScenarioId::LG7);
  REQUIRE(run(c).code == kExitOk);
  const RunManifest m = read_manifest(c.run_dir());
  ExperimentConfig again = config_from_json(m.config);
  again.out_dir = b.path();
  REQUIRE(run(again).code == kExitOk);
  const RunManifest m2 = read_manifest(again.run_dir());
  REQUIRE(m.episodes.size() == m2.episodes.size());
  for (std::size_t i = 0; i < m.episodes.size(); ++i) {
    CHECK(m.episodes[i].seed == m2.episodes[i].seed);
    CHECK(read_file(c.run_dir() / m.episodes[i].record) == read_file(again.run_dir() / m2.episodes[i].record));
  }
}

TEST_CASE("an LLM policy without backend configuration fails naming the variable") {
  ScopedUnset unset("GUIDE_LLM_BASE_URL");
  testing::TempDir dir("nobackend");
  ExperimentConfig c = small_run(dir.path());
  c.policies = {PolicyKind::LlmStatic};
  c.backend = BackendKind::Http;
  const Outcome o = run(c);
  CHECK(o.code == kExitBackend);
  CHECK(o.err.find("GUIDE_LLM_BASE_URL") != std::string::npos);
  CHECK_FALSE(fs::exists(c.run_dir()));
}

TEST_CASE("an existing run directory is never overwritten without --force") {
  testing::TempDir dir("force");
  ExperimentConfig c = small_run(dir.path());
  REQUIRE(run(c).code == kExitOk);
  const std::string before = read_file(c.run_dir() / "manifest.json");
  const Outcome again = run(c);
  CHECK(again.code == kExitUsage);
  CHECK(again.err.find("--force") != std::string::npos);
  CHECK(read_file(c.run_dir() / "manifest.json") == before);

  write_file_atomic(c.run_dir() / "stray.txt", "left over");
  c.force = true;
  REQUIRE(run(c).code == kExitOk);
  CHECK_FALSE(fs::exists(c.run_dir() / "stray.txt"));
}

TEST_CASE("evolve produces versions, a best-flagged table and plot data") {
  testing::TempDir dir("evolve");
  const ExperimentConfig c = small_evolve(dir.path());
  const Outcome o = evolve(c);
  REQUIRE(o.code == kExitOk);
  const fs::path rd = c.run_dir();
  CHECK(fs::exists(rd / "playbooks" / "v0.json"));
  CHECK(fs::exists(rd / "playbooks" / "v1.json"));
  CHECK(fs::exists(rd / "stats.json"));
  CHECK(fs::exists(rd / "plot.csv"));
  CHECK(o.out.find("*v") != std::string::npos);
  const RunManifest m = read_manifest(rd);
  std::set<std::string> listed(m.files.begin(), m.files.end());
  listed.insert("manifest.json");
  CHECK(listed == files_under(rd));

  const Outcome rep = capture([&](auto& out, auto& err) { return cmd_report(rd, out, err); });
  CHECK(rep.code == kExitOk);
  CHECK(rep.out == o.out);
}

TEST_CASE("evolve with a single version matches a plain run of v0") {
  testing::TempDir dir("single");
  ExperimentConfig e = small_evolve(dir.path() / "evo");
  e.max_versions = 1;
  REQUIRE(evolve(e).code == kExitOk);
  ExperimentConfig r = e;
  r.out_dir = dir.path() / "run";
  REQUIRE(run(r).code == kExitOk);
  const RunManifest me = read_manifest(e.run_dir()), mr = read_manifest(r.run_dir());
  REQUIRE(me.episodes.size() == static_cast<std::size_t>(e.episodes));
  REQUIRE(mr.episodes.size() == me.episodes.size());
  CHECK_FALSE(fs::exists(e.run_dir() / "playbooks" / "v1.json"));
  for (std::size_t i = 0; i < me.episodes.size(); ++i) {
    json a = json::parse(read_file(e.run_dir() / me.episodes[i].record));
    json b = json::parse(read_file(r.run_dir() / mr.episodes[i].record));
    for (auto* j : {&a, &b}) {
      for (const char* k : {"episode_id", "trajectory_path", "trace_path"}) j->erase(k);
    }
    CHECK(a == b);
  }
}

TEST_CASE("resume continues an interrupted evolution without re-running episodes") {
  testing::TempDir dir("resume");
  ExperimentConfig c = small_evolve(dir.path());
  c.max_versions = 8;
  c.rounds = 2;
  REQUIRE(evolve(c).code == kExitOk);
  const fs::path rd = c.run_dir();
  const json stats_after_two = json::parse(read_file(rd / "stats.json"));

  // Stamp every finished episode; a re-run would rewrite the file.
  std::map<fs::path, fs::file_time_type> stamps;
  for (const auto& e : fs::directory_iterator(rd / "episodes")) stamps[e.path()] = e.last_write_time();

  c.rounds = 4;
  const Outcome refused = evolve(c);
  CHECK(refused.code == kExitUsage);
  c.resume = true;
  REQUIRE(evolve(c).code == kExitOk);
  const json stats = json::parse(read_file(rd / "stats.json"));
  CHECK(stats.at("rounds").size() == 4);
  for (const auto& [p, t] : stamps) CHECK(fs::last_write_time(p) == t);
  CHECK(stats.at("rounds")[0] == stats_after_two.at("rounds")[0]);

  // A config that changes results cannot resume.
  ExperimentConfig other = c;
  other.seed = 99;
  CHECK(evolve(other).code == kExitUsage);

  // The resumed run matches one that went straight to four rounds.
  testing::TempDir fresh("resume-fresh");
  ExperimentConfig straight = c;
  straight.resume = false;
  straight.out_dir = fresh.path();
  REQUIRE(evolve(straight).code == kExitOk);
  CHECK(json::parse(read_file(straight.run_dir() / "stats.json")) == stats);
}

TEST_CASE("replay audits records and prints the bullet timeline") {
  testing::TempDir dir("replay");
  ExperimentConfig c = small_evolve(dir.path());
  REQUIRE(evolve(c).code == kExitOk);
  const fs::path rd = c.run_dir();

  const Outcome all = replay(rd);
  CHECK(all.code == kExitOk);
  CHECK(all.out.find("MISMATCH") == std::string::npos);

  // An eval episode of v1 carries a firing timeline matching its trace.
  const fs::path rec = record_path(rd / "eval", "eval-v1-e00");
  REQUIRE(fs::exists(rec));
  const Outcome one = replay(rec);
  CHECK(one.code == kExitOk);
  const Episode ep = load_episode(rd / "eval", "eval-v1-e00");
  for (const auto& [id, t] : ep.record.first_activation) {
    double first = -1;
    for (const auto& tr : ep.trace) {
      if (first < 0 && std::find(tr.active_bullets.begin(), tr.active_bullets.end(), id) != tr.active_bullets.end())
        first = tr.t;
    }
    CHECK(first == t);
    CHECK(one.out.find(fmt::format("{} first active at t={} s", id, t)) != std::string::npos);
  }

  json j = json::parse(read_file(rec));
  const double real_score = j["score"].get<double>();
  j["score"] = 1.0;
  write_file_atomic(rec, j.dump(2));
  const Outcome bad = replay(rec);
  CHECK(bad.code == kExitIntegrity);
  CHECK(bad.out.find("MISMATCH") != std::string::npos);
  CHECK(bad.out.find("stored 1,") != std::string::npos);
  CHECK(bad.out.find(fmt::format("recomputed {}", real_score)) != std::string::npos);
  CHECK(replay(rd).code == kExitIntegrity);
  CHECK(replay(dir.path() / "nowhere").code == kExitUsage);
}

TEST_CASE("policy rows, ordering notes and CSV") {
  std::vector<EpisodeRecord> recs;
  for (int i = 0; i < 4; ++i) {
    EpisodeRecord r;
    r.policy = i % 2 ? "lqr" : "prograde";
    r.score = i % 2 ? 100.0 + i : 500.0 + i;
    r.d_min_lb = 10.0 * i;
    r.d_min_bg = 5.0;
    recs.push_back(r);
  }
  const auto rows = aggregate_policy_rows(recs, {"prograde", "lqr"});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].policy == "prograde");
  CHECK(rows[0].n == 2);
  CHECK(rows[0].mean_score == doctest::Approx(501.0));
  CHECK(rows[1].mean_d_lady == doctest::Approx(20.0));
  // Prograde worse than LQR is the expected order on blocking-guard scenarios only.
  CHECK(baseline_ordering_note(ScenarioId::LG6, rows).empty());
  CHECK_FALSE(baseline_ordering_note(ScenarioId::LG4, rows).empty());
  const std::string table = render_policy_table(ScenarioId::LG4, rows);
  CHECK(table.find("prograde") < table.find("lqr"));
  CHECK(render_policy_csv(rows).find("prograde,2,") != std::string::npos);
}
