#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/backend.hpp"
#include "guide/episode.hpp"
#include "guide/error.hpp"
#include "guide/evolution.hpp"
#include "guide/http_backend.hpp"
#include "guide/policy.hpp"
#include "guide/scenario.hpp"

namespace guide {

inline constexpr const char* kCodeVersion = "guide-lab 0.1.0";

enum ExitCode : int { kExitOk = 0, kExitUsage = 1, kExitBackend = 2, kExitIntegrity = 3 };

// Bad flags or config values; maps to kExitUsage.
class UsageError : public Error {
 public:
  using Error::Error;
};

enum class BackendKind { Mock, Http };
std::string to_string(BackendKind kind);
std::optional<BackendKind> parse_backend_kind(std::string_view name);

struct ExperimentConfig {
  ScenarioId scenario = ScenarioId::LG4;
  std::vector<PolicyKind> policies{PolicyKind::Prograde};
  int episodes = 20;
  std::uint64_t seed = 7;
  std::vector<std::uint64_t> seeds;  // explicit episode seeds; else expanded from `seed`

  // Evolution.
  double epsilon = 0.2;
  double ucb_c = 1.4142135623730951;
  int batch_size = 5;
  int max_versions = 6;
  int rounds = 30;
  std::string reflector = "heuristic";  // heuristic | llm
  MinerConfig miner;

  BackendKind backend = BackendKind::Http;
  int token_budget = kDefaultTokenBudget;
  int reasoner_cadence = 1;

  std::filesystem::path out_dir = "runs";
  std::optional<std::filesystem::path> scenario_file;  // geometry overrides, required for custom
  std::optional<std::filesystem::path> playbook_file;  // playbook for run; v0 when absent
  bool force = false;
  bool resume = false;

  // Throws UsageError naming the first bad field.
  void validate() const;
  std::filesystem::path run_dir() const { return out_dir / to_string(scenario); }
};

nlohmann::json config_to_json(const ExperimentConfig& config);
// Fields absent from `j` keep the values already in `base`. Throws UsageError.
ExperimentConfig config_from_json(const nlohmann::json& j, ExperimentConfig base = {});

// Explicit seeds (first `episodes` of them) or `episodes` seeds derived from
// the master seed.
std::vector<std::uint64_t> episode_seeds(const ExperimentConfig& config);

// make_scenario with the overrides of the scenario file applied.
ScenarioConfig scenario_for(const ExperimentConfig& config, std::uint64_t seed);
void apply_scenario_overrides(ScenarioConfig& scenario, const nlohmann::json& j);

// Owns whichever chat backends the configured policies need.
class BackendSet {
 public:
  // Http reads the environment and throws BackendError when it is incomplete.
  explicit BackendSet(BackendKind kind);
  ReasonerBackend& reasoner();
  ActorBackend& actor();

 private:
  std::unique_ptr<MockReasoner> mock_reasoner_;
  std::unique_ptr<MockActor> mock_actor_;
  std::unique_ptr<HttpChatBackend> http_;
};

bool needs_backend(PolicyKind kind);

std::unique_ptr<Policy> make_policy(PolicyKind kind, std::shared_ptr<const Playbook> playbook,
                                    BackendSet* backends, const ExperimentConfig& config);

struct ManifestEpisode {
  std::string episode_id;
  std::string policy;
  int playbook_version = 0;
  std::uint64_t seed = 0;
  std::string record;  // relative to the run directory
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::string code_version = kCodeVersion;
  std::string created_at;
  std::string updated_at;
  std::vector<std::string> files;  // relative to the run directory, in creation order
  std::vector<ManifestEpisode> episodes;

  void add_file(const std::string& rel);
  void add_episode(const ManifestEpisode& ep);
};

nlohmann::json manifest_to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
std::filesystem::path manifest_path(const std::filesystem::path& run_dir);
void write_manifest(const std::filesystem::path& run_dir, RunManifest& manifest);
RunManifest read_manifest(const std::filesystem::path& run_dir);

struct PolicyRow {
  std::string policy;
  std::size_t n = 0;
  double mean_score = 0.0;
  double std_score = 0.0;
  double mean_d_lady = 0.0;
  double mean_d_guard = 0.0;
};

std::vector<PolicyRow> aggregate_policy_rows(const std::vector<EpisodeRecord>& records,
                                             const std::vector<std::string>& policy_order);
// Rows = policies, score as mean +/- std.
std::string render_policy_table(ScenarioId scenario, const std::vector<PolicyRow>& rows);
std::string render_policy_csv(const std::vector<PolicyRow>& rows);
// Empty unless both prograde and lqr rows exist and their ordering differs
// from the expected one for the scenario family.
std::string baseline_ordering_note(ScenarioId scenario, const std::vector<PolicyRow>& rows);

std::string render_lineage(const std::vector<Playbook>& versions);

// Commands write human output to `out` and diagnostics to `err`, and return
// an ExitCode. They never throw.
int cmd_run(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
int cmd_evolve(const ExperimentConfig& config, std::ostream& out, std::ostream& err);
// `target` is a record file or a directory searched recursively for records.
int cmd_replay(const std::filesystem::path& target, std::ostream& out, std::ostream& err);
// Re-aggregates the records listed in a run directory's manifest.
int cmd_report(const std::filesystem::path& run_dir, std::ostream& out, std::ostream& err);

}  // namespace guide
