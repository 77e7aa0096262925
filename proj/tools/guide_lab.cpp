#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "guide/error.hpp"
#include "guide/fs_util.hpp"
#include "guide/harness.hpp"

namespace {

using guide::ExperimentConfig;

// Flags mirror ExperimentConfig; a flag given on the command line wins over
// the same field in --config.
struct ExperimentFlags {
  std::string config_file;
  std::string scenario;
  std::vector<std::string> policies;
  int episodes = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  double epsilon = 0.0;
  double ucb_c = 0.0;
  int batch_size = 0;
  int max_versions = 0;
  int rounds = 0;
  std::string reflector;
  std::string backend;
  int token_budget = 0;
  int reasoner_cadence = 0;
  std::string out_dir;
  std::string scenario_file;
  std::string playbook_file;
  double guard_proximity = 0.0;
  double warmup = 0.0;
  bool force = false;
  bool resume = false;

  std::vector<std::pair<CLI::Option*, std::function<void(ExperimentConfig&)>>> setters;

  template <typename T, typename Fn>
  void add(CLI::App* app, const std::string& name, T& var, const std::string& help, Fn apply) {
    setters.emplace_back(app->add_option(name, var, help), apply);
  }

  void attach(CLI::App* app, bool evolve) {
    app->add_option("--config", config_file, "JSON file with ExperimentConfig fields")
        ->check(CLI::ExistingFile);
    add(app, "--scenario", scenario, "lg4, lg5, lg6, lg7 or custom", [this](ExperimentConfig& c) {
      const auto id = guide::parse_scenario_id(scenario);
      if (!id) throw guide::UsageError("--scenario: unknown scenario " + scenario);
      c.scenario = *id;
    });
    add(app, "--policy", policies,
        evolve ? "scripted_follower or llm_playbook" : "policy to run; repeat for several",
        [this](ExperimentConfig& c) {
          c.policies.clear();
          for (const auto& p : policies) {
            const auto k = guide::parse_policy_kind(p);
            if (!k) throw guide::UsageError("--policy: unknown policy " + p);
            c.policies.push_back(*k);
          }
        });
    setters.back().first->delimiter(',');
    add(app, "--episodes", episodes, "episodes per policy (evaluation episodes per version)",
        [this](ExperimentConfig& c) { c.episodes = episodes; });
    add(app, "--seed", seed, "master seed", [this](ExperimentConfig& c) { c.seed = seed; });
    add(app, "--seeds", seeds, "explicit episode seeds", [this](ExperimentConfig& c) {
      c.seeds = seeds;
    });
    setters.back().first->delimiter(',');
    add(app, "--backend", backend, "chat backend for llm policies: http or mock",
        [this](ExperimentConfig& c) {
          const auto k = guide::parse_backend_kind(backend);
          if (!k) throw guide::UsageError("--backend: expected http or mock");
          c.backend = *k;
        });
    add(app, "--token-budget", token_budget, "reasoner token budget per step",
        [this](ExperimentConfig& c) { c.token_budget = token_budget; });
    add(app, "--reasoner-cadence", reasoner_cadence, "reason every k-th step",
        [this](ExperimentConfig& c) { c.reasoner_cadence = reasoner_cadence; });
    add(app, "--out-dir", out_dir, "output root; the run lands in <out-dir>/<scenario>",
        [this](ExperimentConfig& c) { c.out_dir = out_dir; });
    add(app, "--scenario-file", scenario_file, "JSON geometry overrides (required for custom)",
        [this](ExperimentConfig& c) { c.scenario_file = scenario_file; });
    add(app, "--guard-proximity", guard_proximity, "guard distance counted as a violation [m]",
        [this](ExperimentConfig& c) { c.miner.thresholds.guard_proximity = guard_proximity; });
    app->add_flag("--force", force, "replace an existing run directory");
    if (evolve) {
      add(app, "--epsilon", epsilon, "probability of reflecting on the best episode",
          [this](ExperimentConfig& c) { c.epsilon = epsilon; });
      add(app, "--ucb-c", ucb_c, "UCB exploration constant",
          [this](ExperimentConfig& c) { c.ucb_c = ucb_c; });
      add(app, "--batch-size", batch_size, "episodes per round",
          [this](ExperimentConfig& c) { c.batch_size = batch_size; });
      add(app, "--max-versions", max_versions, "playbook versions including v0",
          [this](ExperimentConfig& c) { c.max_versions = max_versions; });
      add(app, "--rounds", rounds, "round budget", [this](ExperimentConfig& c) { c.rounds = rounds; });
      add(app, "--reflector", reflector, "heuristic or llm",
          [this](ExperimentConfig& c) { c.reflector = reflector; });
      add(app, "--warmup", warmup, "earliest time mined rules may fire [s]",
          [this](ExperimentConfig& c) { c.miner.warmup = warmup; });
      app->add_flag("--resume", resume, "continue an interrupted evolution in place");
    } else {
      add(app, "--playbook", playbook_file, "playbook for playbook-conditioned policies",
          [this](ExperimentConfig& c) { c.playbook_file = playbook_file; });
    }
  }

  ExperimentConfig build(ExperimentConfig base) const {
    if (!config_file.empty()) {
      auto j = nlohmann::json::parse(guide::read_file(config_file), nullptr, false);
      if (j.is_discarded()) throw guide::UsageError("--config: not valid JSON: " + config_file);
      base = guide::config_from_json(j, base);
    }
    for (const auto& [opt, apply] : setters) {
      if (opt->count() > 0) apply(base);
    }
    if (force) base.force = true;
    if (resume) base.resume = true;
    return base;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pursuit-evasion playbook evolution lab"};
  app.require_subcommand(1);
  app.set_version_flag("--version", guide::kCodeVersion);

  ExperimentFlags run_flags;
  auto* run = app.add_subcommand("run", "run N episodes per policy and report mean ± std");
  run_flags.attach(run, false);

  ExperimentFlags evolve_flags;
  auto* evolve = app.add_subcommand("evolve", "evolve playbook versions and report each version");
  evolve_flags.attach(evolve, true);

  std::string replay_target;
  auto* replay = app.add_subcommand("replay", "audit stored episodes against their trajectories");
  replay->add_option("path", replay_target, "record file or directory of records")->required();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render the report of a run directory");
  report->add_option("run_dir", report_dir, "run directory holding manifest.json")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return guide::kExitUsage;
  }

  try {
    if (*run) {
      return guide::cmd_run(run_flags.build({}), std::cout, std::cerr);
    }
    if (*evolve) {
      ExperimentConfig base;
      base.policies = {guide::PolicyKind::ScriptedFollower};
      return guide::cmd_evolve(evolve_flags.build(base), std::cout, std::cerr);
    }
    if (*replay) {
      return guide::cmd_replay(replay_target, std::cout, std::cerr);
    }
    return guide::cmd_report(report_dir, std::cout, std::cerr);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return guide::kExitUsage;
  }
}
