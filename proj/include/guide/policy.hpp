#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "guide/backend.hpp"
#include "guide/playbook.hpp"
#include "guide/scenario.hpp"

namespace guide {

enum class PolicyKind { LlmStatic, LlmPlaybook, Lqr, Prograde, ScriptedFollower };

std::string to_string(PolicyKind kind);
std::optional<PolicyKind> parse_policy_kind(std::string_view name);

// Fixed domain instructions shared by every playbook version.
extern const std::string kDefaultBaselinePrompt;

struct PromptContext {
  std::string baseline_text;
  std::vector<std::string> active_bullet_texts;  // "[section] text", playbook order
  std::string observation_rendering;

  std::string text() const;
  bool operator==(const PromptContext&) const = default;
};

// Fixed 3-decimal rendering of the observation and its derived features.
std::string render_observation(const Observation& obs, const DerivedFeatures& features);

PromptContext assemble_prompt(const std::string& baseline, std::span<const Bullet* const> active,
                              const Observation& obs, const DerivedFeatures& features);

inline constexpr int kDefaultTokenBudget = 256;
inline constexpr std::string_view kFallbackIntent = "hold pattern: zero thrust";

struct Intent {
  std::string text;
  int token_budget_used = 0;
  bool degraded = false;
};

// Whitespace tokens; the budget unit for the reasoner.
std::vector<std::string_view> split_tokens(std::string_view text);

// Bounded reasoning call. Never throws: failures yield the fallback intent.
Intent reason(const PromptContext& ctx, ReasonerBackend& backend, int token_budget);

struct ActResult {
  ThrustCommand command;
  bool degraded = false;
};

// JSON tool schema for the structured thrust command.
nlohmann::json thrust_tool_schema();

// Structured command call. Never throws; output always satisfies the
// ThrustCommand invariants with duration in (0, max_duration].
ActResult act(const Observation& obs, const Intent& intent, ActorBackend& backend,
              double max_duration);

// Interprets an actor reply; exposed for tests and the HTTP client.
ActResult parse_actor_reply(std::string_view raw, double max_duration);

// Unit vector perpendicular to the Bandit-Guard line with zero x component,
// taken against the nearest guard. Sign follows the Bandit's lateral motion
// relative to that guard.
Vec3 evasive_direction(const Observation& obs);

// Deterministic stand-in for the reasoner/actor pair driven by bullet sections.
ThrustCommand scripted_follower_action(const Observation& obs, const DerivedFeatures& features,
                                       std::span<const Bullet* const> active, double period);

// Full throttle toward the Lady, max-norm normalized. Zero when co-located.
ThrustCommand prograde_action(const Observation& obs, double period);

using Gain = Eigen::Matrix<double, 3, 6>;

struct LqrDesign {
  Gain gain = Gain::Zero();
  Mat6 cost_to_go = Mat6::Zero();
  double residual = 0.0;
  int iterations = 0;
};

struct LqrWeights {
  Mat6 q;
  Eigen::Matrix3d r;
  static LqrWeights defaults();
};

// A^T P + P A - P B R^-1 B^T P + Q.
Mat6 riccati_residual(const Mat6& a, const Mat63& b, const Mat6& q, const Eigen::Matrix3d& r,
                      const Mat6& p);

// Infinite-horizon regulator for the CW pair by Newton-Kleinman iteration.
LqrDesign design_lqr(double mean_motion, const LqrWeights& weights, double tolerance = 1e-12);

// a = -K [r_B - r_L; v_B - v_L], throttle = clamp(a / max_accel, -1, 1).
ThrustCommand lqr_action(const Observation& obs, const Gain& gain, double bandit_max_accel,
                         double period);

struct StepDecision {
  ThrustCommand command;
  std::vector<std::string> active_bullets;
  std::string intent;
  bool degraded = false;
};

class Policy {
 public:
  virtual ~Policy() = default;
  virtual std::string name() const = 0;
  virtual void begin_episode(const ScenarioConfig& config);
  virtual StepDecision decide(const Observation& obs, const Observation* previous) = 0;
  const ActivationLog& activations() const { return activations_; }

 protected:
  ScenarioConfig scenario_;
  ActivationLog activations_;
};

class ProgradePolicy final : public Policy {
 public:
  std::string name() const override { return "prograde"; }
  StepDecision decide(const Observation& obs, const Observation* previous) override;
};

class LqrPolicy final : public Policy {
 public:
  explicit LqrPolicy(LqrWeights weights = LqrWeights::defaults()) : weights_(weights) {}
  std::string name() const override { return "lqr"; }
  void begin_episode(const ScenarioConfig& config) override;
  StepDecision decide(const Observation& obs, const Observation* previous) override;
  const LqrDesign& design() const { return design_; }

 private:
  LqrWeights weights_;
  LqrDesign design_;
  double designed_for_ = -1.0;
};

class ScriptedFollowerPolicy final : public Policy {
 public:
  explicit ScriptedFollowerPolicy(std::shared_ptr<const Playbook> playbook)
      : playbook_(std::move(playbook)) {}
  std::string name() const override { return "scripted_follower"; }
  StepDecision decide(const Observation& obs, const Observation* previous) override;

 private:
  std::shared_ptr<const Playbook> playbook_;
};

struct LlmPolicyConfig {
  std::string baseline = kDefaultBaselinePrompt;
  int token_budget = kDefaultTokenBudget;
  int reasoner_cadence = 1;  // reason every k-th step, reuse the intent between
};

// Reasoner + actor pipeline conditioned on the active playbook bullets. The
// static variant is this policy with the empty v0 playbook.
class LlmPolicy final : public Policy {
 public:
  LlmPolicy(std::shared_ptr<const Playbook> playbook, ReasonerBackend& reasoner,
            ActorBackend& actor, LlmPolicyConfig config = {}, std::string name = "llm_playbook");
  std::string name() const override { return name_; }
  void begin_episode(const ScenarioConfig& config) override;
  StepDecision decide(const Observation& obs, const Observation* previous) override;

 private:
  std::shared_ptr<const Playbook> playbook_;
  ReasonerBackend& reasoner_;
  ActorBackend& actor_;
  LlmPolicyConfig config_;
  std::string name_;
  std::size_t step_ = 0;
  Intent last_intent_;
};

}  // namespace guide
