#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/backend.hpp"
#include "guide/episode.hpp"
#include "guide/playbook.hpp"
#include "guide/rng.hpp"

namespace guide {

// Index into `batch`: the worst (highest score) episode with probability
// 1 - epsilon, the best otherwise. Ties resolve to the earliest episode.
// Throws InvalidInput on an empty batch or epsilon outside [0, 1].
std::size_t select_reflection_episode(std::span<const EpisodeRecord> batch, double epsilon,
                                      Rng& rng);

enum class OutcomeLabel { Failure, Success };
std::string to_string(OutcomeLabel label);

// Median of a non-empty sample (mean of the middle pair for even sizes).
double median(std::vector<double> values);

// Failure when any violation flag is set or the score exceeds the median.
OutcomeLabel label_episode(const EpisodeRecord& record, double running_median);

struct ReflectionInput {
  std::string episode_id;
  OutcomeLabel label = OutcomeLabel::Failure;
  std::vector<std::string> violation_flags;
  double control_period = 1.0;
  std::size_t window_start = 0;  // index of window.front() in the full trajectory
  Trajectory window;
  ReasoningTrace reasoning_excerpt;  // same steps as `window`
};

inline constexpr std::size_t kDefaultWindowSteps = 30;

// Contiguous window of `window_steps` samples centred on the guard-distance
// minimum (failures) or the Lady-distance minimum (successes), shifted to lie
// inside the episode.
ReflectionInput make_reflection_input(const Episode& episode, OutcomeLabel label,
                                      double control_period,
                                      std::size_t window_steps = kDefaultWindowSteps);

struct Proposal {
  std::string correction;
  std::string section;
  BulletType type = BulletType::Constraint;
  std::string text;
  ConditionBlock conditions;
  std::vector<StateSnapshot> states;
  std::string evidence;
  std::string episode_id;

  bool operator==(const Proposal&) const = default;
};

class Reflector {
 public:
  virtual ~Reflector() = default;
  virtual std::string name() const = 0;
  // Never throws; a backend failure yields no proposals.
  virtual std::vector<Proposal> reflect(const ReflectionInput& input) = 0;
};

struct MinerConfig {
  double warmup = 35.0;                // s, becomes time.min
  double rounding = 10.0;              // m, guard threshold grid
  double brake_distance_factor = 1.5;  // target_distance.max = ceil(factor * d)
  double brake_speed_factor = 0.8;     // velocity.min = floor(factor * v)
  ViolationThresholds thresholds;
};

// Deterministic rule miner over the telemetry window.
class HeuristicMiner final : public Reflector {
 public:
  explicit HeuristicMiner(MinerConfig config = {}) : config_(config) {}
  std::string name() const override { return "heuristic"; }
  std::vector<Proposal> reflect(const ReflectionInput& input) override;
  const MinerConfig& config() const { return config_; }

 private:
  MinerConfig config_;
};

// Forwards the window and trace to a chat backend and parses JSON proposals
// of the form {"proposals": [{section, type, text, conditions, evidence,
// correction}]}.
class LlmReflector final : public Reflector {
 public:
  explicit LlmReflector(ReasonerBackend& backend, int max_tokens = 1024)
      : backend_(backend), max_tokens_(max_tokens) {}
  std::string name() const override { return "llm"; }
  std::vector<Proposal> reflect(const ReflectionInput& input) override;

  static std::string render_window(const ReflectionInput& input);
  // Throws ParseError on malformed replies.
  static std::vector<Proposal> parse_reply(const std::string& reply, const std::string& episode_id);

 private:
  ReasonerBackend& backend_;
  int max_tokens_;
};

// Canonical bullet text for the sections the miner emits.
std::string render_bullet_text(const std::string& section, const ConditionBlock& conditions);

// True when every field present in both blocks can be satisfied together.
bool conditions_overlap(const ConditionBlock& a, const ConditionBlock& b);
// Interval hull per field; a field absent from either side is unbounded.
ConditionBlock merge_conditions(const ConditionBlock& a, const ConditionBlock& b);

// Proposals become UPDATEs of an overlapping bullet in the same section, or
// ADDs with fresh sequential ids. Throws OpError if the resulting batch does
// not apply cleanly.
std::vector<CuratorOp> curate(std::span<const Proposal> proposals, const Playbook& current);

struct VersionStats {
  int version = 0;
  std::vector<double> score_history;

  std::size_t n() const { return score_history.size(); }
  double mean_score() const;
  double std_score() const;
};

// reward_k + c sqrt(ln N / n_k) per version, +inf when n_k = 0. reward_k is
// minus the min-max normalised mean score over the tried versions.
std::vector<double> ucb_values(std::span<const VersionStats> stats, double c);
// Index into `stats` of the maximiser; ties go to the lowest index.
std::size_t ucb_select(std::span<const VersionStats> stats, double c);

struct EvolutionConfig {
  double epsilon = 0.2;
  double c = 1.4142135623730951;
  int batch_size = 5;
  int max_versions = 6;
  std::size_t window_steps = kDefaultWindowSteps;
  std::uint64_t seed = 0;
};

struct RoundLog {
  int round = 0;
  int evaluated_version = 0;
  std::vector<std::string> episodes;
  std::string reflected_episode;
  OutcomeLabel label = OutcomeLabel::Failure;
  std::size_t proposals = 0;
  std::size_t ops = 0;
  std::optional<int> created_version;
};

struct EvolutionState {
  std::vector<Playbook> versions;  // versions[k].version == k
  std::vector<VersionStats> stats;
  std::vector<std::vector<std::string>> episodes;  // per version, in evaluation order
  std::vector<RoundLog> rounds;

  int rounds_completed() const { return static_cast<int>(rounds.size()); }
  static EvolutionState initial();
};

nlohmann::json state_to_json(const EvolutionState& state);
// Playbooks are not part of the stats file; `versions` must be supplied.
EvolutionState state_from_json(const nlohmann::json& j, std::vector<Playbook> versions);

// Layout under root: playbooks/v<k>.json, episodes/<id>.*, stats.json.
class VersionStore {
 public:
  explicit VersionStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path playbooks_dir() const { return root_ / "playbooks"; }
  std::filesystem::path episodes_dir() const { return root_ / "episodes"; }
  std::filesystem::path stats_file() const { return root_ / "stats.json"; }

  bool has_state() const;
  // Reads stats.json and every committed playbook; throws IntegrityError if a
  // playbook file is missing or carries the wrong version.
  EvolutionState load() const;
  // Playbooks first, stats.json last: the stats file is the commit point.
  void commit(const EvolutionState& state) const;
  void write_playbook(const Playbook& playbook) const;

 private:
  std::filesystem::path root_;
};

// Produces one finished episode for (playbook, id, seed).
using EpisodeRunner =
    std::function<Episode(const Playbook& playbook, const std::string& episode_id, std::uint64_t seed)>;

std::string round_episode_id(int round, int version, int index);
std::uint64_t round_episode_seed(std::uint64_t master, int round, int index);

// One reflection round. Completed episodes already on disk are reused, so an
// interrupted round resumes without re-running them. Returns the new state
// after it has been committed; on any failure the store's committed state is
// unchanged.
EvolutionState evolve_round(const EvolutionState& state, const VersionStore& store,
                            const EvolutionConfig& config, const EpisodeRunner& runner,
                            Reflector& reflector);

// True when further rounds can still create versions or some version is untried.
bool evolution_open(const EvolutionState& state, const EvolutionConfig& config);

}  // namespace guide
