#include "guide/policy.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "guide/error.hpp"

namespace guide {

std::string to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::LlmStatic: return "llm_static";
    case PolicyKind::LlmPlaybook: return "llm_playbook";
    case PolicyKind::Lqr: return "lqr";
    case PolicyKind::Prograde: return "prograde";
    case PolicyKind::ScriptedFollower: return "scripted_follower";
  }
  return "llm_playbook";
}

std::optional<PolicyKind> parse_policy_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) {
    return c == '-' ? '_' : static_cast<char>(std::tolower(c));
  });
  for (auto k : {PolicyKind::LlmStatic, PolicyKind::LlmPlaybook, PolicyKind::Lqr,
                 PolicyKind::Prograde, PolicyKind::ScriptedFollower}) {
    if (lower == to_string(k)) {
      return k;
    }
  }
  return std::nullopt;
}

const std::string kDefaultBaselinePrompt =
    "You command the Bandit spacecraft in a Hill-frame relative-motion engagement around a "
    "circular orbit. Axes: x radial, y along-track, z cross-track. Your goal is to get as close "
    "as possible to the Lady while keeping away from every Guard; being reached by a Guard is "
    "penalised far more than missing the Lady.\n"
    "Thrust is commanded per axis in [-1, 1] as a fraction of maximum acceleration: "
    "fx forward/back, fy right/left, fz up/down.\n"
    "General guidance: align thrust toward the Lady to intercept, and steer clear of Guards.\n"
    "Answer with a short intent describing the manoeuvre for the next control period.";

std::string PromptContext::text() const {
  std::string out = baseline_text;
  out += "\n\n";
  if (!active_bullet_texts.empty()) {
    out += "## Active playbook rules\n";
    for (const auto& line : active_bullet_texts) {
      out += line;
      out += '\n';
    }
    out += '\n';
  }
  out += observation_rendering;
  return out;
}

namespace {

std::string vec(const Vec3& v) { return fmt::format("[{:.3f}, {:.3f}, {:.3f}]", v.x(), v.y(), v.z()); }

}  // namespace

std::string render_observation(const Observation& obs, const DerivedFeatures& f) {
  std::string out = "## Observation\n";
  out += fmt::format("t = {:.3f} s\n", obs.t);
  out += fmt::format("bandit_position = {} m\n", vec(obs.bandit.position));
  out += fmt::format("bandit_velocity = {} m/s\n", vec(obs.bandit.velocity));
  out += fmt::format("bandit_mass = {:.3f} kg (propellant {:.3f} kg)\n", obs.bandit.total_mass,
                     obs.bandit.prop_mass);
  out += fmt::format("lady_position = {} m\n", vec(obs.lady.position));
  out += fmt::format("lady_velocity = {} m/s\n", vec(obs.lady.velocity));
  for (std::size_t i = 0; i < obs.guards.size(); ++i) {
    out += fmt::format("guard{}_position = {} m\n", i, vec(obs.guards[i].position));
    out += fmt::format("guard{}_velocity = {} m/s\n", i, vec(obs.guards[i].velocity));
  }
  out += fmt::format("guard_distance = {:.3f} m\n", f.guard_distance);
  out += fmt::format("target_distance = {:.3f} m\n", f.target_distance);
  out += fmt::format("closing_speed = {:.3f} m/s\n", f.velocity);
  out += fmt::format("guard_approaching = {}\n", f.guard_approaching);
  out += fmt::format("approaching = {}\n", f.approaching);
  return out;
}

PromptContext assemble_prompt(const std::string& baseline, std::span<const Bullet* const> active,
                              const Observation& obs, const DerivedFeatures& features) {
  PromptContext ctx;
  ctx.baseline_text = baseline;
  ctx.active_bullet_texts.reserve(active.size());
  for (const Bullet* b : active) {
    ctx.active_bullet_texts.push_back("[" + b->section + "] " + b->text);
  }
  ctx.observation_rendering = render_observation(obs, features);
  return ctx;
}

std::vector<std::string_view> split_tokens(std::string_view text) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) out.push_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Intent reason(const PromptContext& ctx, ReasonerBackend& backend, int token_budget) {
  Intent fallback{std::string(kFallbackIntent), 0, true};
  if (token_budget <= 0) {
    return fallback;
  }
  std::string raw;
  try {
    raw = backend.generate({ctx.baseline_text, ctx.text(), token_budget});
  } catch (const std::exception&) {
    return fallback;
  }
  const auto tokens = split_tokens(raw);
  if (tokens.empty()) {
    return fallback;
  }
  const std::size_t keep = std::min<std::size_t>(tokens.size(), token_budget);
  Intent out;
  for (std::size_t i = 0; i < keep; ++i) {
    if (i > 0) out.text += ' ';
    out.text += tokens[i];
  }
  out.token_budget_used = static_cast<int>(keep);
  return out;
}

nlohmann::json thrust_tool_schema() {
  auto axis = [](const char* what) {
    return nlohmann::json{{"type", "number"}, {"minimum", -1.0}, {"maximum", 1.0},
                          {"description", what}};
  };
  return {{"type", "function"},
          {"function",
           {{"name", "set_thrust"},
            {"description", "Set the Bandit thrust for the next control period."},
            {"parameters",
             {{"type", "object"},
              {"properties",
               {{"fx", axis("forward(+)/back(-) throttle")},
                {"fy", axis("right(+)/left(-) throttle")},
                {"fz", axis("up(+)/down(-) throttle")},
                {"duration",
                 {{"type", "number"}, {"exclusiveMinimum", 0.0}, {"description", "burn time, s"}}}}},
              {"required", {"fx", "fy", "fz", "duration"}},
              {"additionalProperties", false}}}}}};
}

ActResult parse_actor_reply(std::string_view raw, double max_duration) {
  ActResult out;
  out.command = ThrustCommand::zero(max_duration);
  nlohmann::json j = nlohmann::json::parse(raw, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    out.degraded = true;
    return out;
  }
  auto number = [&j](const char* key) -> std::optional<double> {
    auto it = j.find(key);
    if (it == j.end() || !it->is_number()) return std::nullopt;
    return it->get<double>();
  };
  const auto fx = number("fx");
  const auto fy = number("fy");
  const auto fz = number("fz");
  if (!fx || !fy || !fz || !std::isfinite(*fx) || !std::isfinite(*fy) || !std::isfinite(*fz)) {
    out.degraded = true;
    return out;
  }
  Vec3 throttle(*fx, *fy, *fz);
  const Vec3 clamped = throttle.cwiseMax(-1.0).cwiseMin(1.0);
  if (clamped != throttle) {
    out.degraded = true;
  }
  double duration = number("duration").value_or(max_duration);
  if (!std::isfinite(duration) || duration <= 0.0) {
    duration = max_duration;
    out.degraded = true;
  } else if (duration > max_duration) {
    duration = max_duration;
  }
  out.command = {clamped, duration};
  return out;
}

ActResult act(const Observation& obs, const Intent& intent, ActorBackend& backend,
              double max_duration) {
  ActorRequest request;
  request.prompt = "Intent: " + intent.text;
  request.tool_schema = thrust_tool_schema();
  request.obs = &obs;
  request.intent = intent.text;
  request.control_period = max_duration;
  std::string raw;
  try {
    raw = backend.call(request);
  } catch (const std::exception&) {
    return {ThrustCommand::zero(max_duration), true};
  }
  return parse_actor_reply(raw, max_duration);
}

Vec3 evasive_direction(const Observation& obs) {
  if (obs.guards.empty()) {
    return Vec3::UnitY();
  }
  std::size_t nearest = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < obs.guards.size(); ++i) {
    const double d = (obs.bandit.position - obs.guards[i].position).norm();
    if (d < best) {
      best = d;
      nearest = i;
    }
  }
  const auto& g = obs.guards[nearest];
  const Vec3 r = obs.bandit.position - g.position;
  Vec3 p(0.0, -r.z(), r.y());
  const double norm = p.norm();
  if (!(norm > 1e-9 * std::max(1.0, r.norm()))) {
    p = Vec3::UnitY();
  } else {
    p /= norm;
  }
  if (p.dot(obs.bandit.velocity - g.velocity) < 0.0) {
    p = -p;
  }
  return p;
}

namespace {

bool has_section(std::span<const Bullet* const> active, std::string_view section) {
  return std::any_of(active.begin(), active.end(),
                     [section](const Bullet* b) { return b->section == section; });
}

Vec3 unit_toward_lady(const Observation& obs) {
  const Vec3 d = obs.lady.position - obs.bandit.position;
  const double n = d.norm();
  return n > 0.0 ? Vec3(d / n) : Vec3::Zero();
}

}  // namespace

ThrustCommand scripted_follower_action(const Observation& obs, const DerivedFeatures&,
                                       std::span<const Bullet* const> active, double period) {
  if (has_section(active, "guard_avoidance")) {
    return {evasive_direction(obs), period};
  }
  if (has_section(active, "approach")) {
    return {-unit_toward_lady(obs), period};
  }
  return {unit_toward_lady(obs), period};
}

ThrustCommand prograde_action(const Observation& obs, double period) {
  const Vec3 d = obs.lady.position - obs.bandit.position;
  const double m = d.cwiseAbs().maxCoeff();
  if (!(m > 0.0)) {
    return ThrustCommand::zero(period);
  }
  return {d / m, period};
}

LqrWeights LqrWeights::defaults() {
  LqrWeights w;
  Vec6 diag;
  diag << 1.0, 1.0, 1.0, 10.0, 10.0, 10.0;
  w.q = (1e-4 * diag).asDiagonal();
  w.r = 1e-2 * Eigen::Matrix3d::Identity();
  return w;
}

Mat6 riccati_residual(const Mat6& a, const Mat63& b, const Mat6& q, const Eigen::Matrix3d& r,
                      const Mat6& p) {
  return a.transpose() * p + p * a - p * b * r.inverse() * b.transpose() * p + q;
}

namespace {

// Solves Ak^T P + P Ak + M = 0 through the Kronecker form.
Mat6 solve_lyapunov(const Mat6& ak, const Mat6& m) {
  using Mat36 = Eigen::Matrix<double, 36, 36>;
  const Mat6 id = Mat6::Identity();
  Mat36 big;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      // vec(Ak^T P) = (I kron Ak^T) vec P ; vec(P Ak) = (Ak^T kron I) vec P
      big.block<6, 6>(6 * i, 6 * j) = id(i, j) * ak.transpose() + ak(j, i) * id;
    }
  }
  Eigen::Matrix<double, 36, 1> rhs = -Eigen::Map<const Eigen::Matrix<double, 36, 1>>(m.data());
  Eigen::Matrix<double, 36, 1> x = big.fullPivLu().solve(rhs);
  Mat6 p = Eigen::Map<Mat6>(x.data());
  return 0.5 * (p + p.transpose());
}

}  // namespace

LqrDesign design_lqr(double n, const LqrWeights& w, double tolerance) {
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw InvalidInput("design_lqr: mean motion must be positive");
  }
  const Mat6 a = cw_system_matrix(n);
  const Mat63 b = cw_input_matrix();
  const Eigen::Matrix3d r_inv = w.r.inverse();

  // Stabilizing start: cancel the CW coupling, add PD.
  Gain k;
  k.leftCols<3>() = a.block<3, 3>(3, 0) + 1e-2 * Eigen::Matrix3d::Identity();
  k.rightCols<3>() = a.block<3, 3>(3, 3) + 0.2 * Eigen::Matrix3d::Identity();

  LqrDesign out;
  Mat6 p_prev = Mat6::Zero();
  for (int it = 1; it <= 100; ++it) {
    const Mat6 ak = a - b * k;
    const Mat6 p = solve_lyapunov(ak, w.q + k.transpose() * w.r * k);
    k = r_inv * b.transpose() * p;
    out.iterations = it;
    out.cost_to_go = p;
    const double change = (p - p_prev).norm() / std::max(1.0, p.norm());
    p_prev = p;
    if (change < tolerance) break;
  }
  out.gain = k;
  out.residual = riccati_residual(a, b, w.q, w.r, out.cost_to_go).norm();
  return out;
}

ThrustCommand lqr_action(const Observation& obs, const Gain& gain, double max_accel,
                         double period) {
  Vec6 x;
  x << obs.bandit.position - obs.lady.position, obs.bandit.velocity - obs.lady.velocity;
  const Vec3 a = -gain * x;
  if (!(max_accel > 0.0)) {
    return ThrustCommand::zero(period);
  }
  return {(a / max_accel).cwiseMax(-1.0).cwiseMin(1.0), period};
}

void Policy::begin_episode(const ScenarioConfig& config) {
  scenario_ = config;
  activations_ = ActivationLog{};
}

StepDecision ProgradePolicy::decide(const Observation& obs, const Observation*) {
  return {prograde_action(obs, scenario_.control_period), {}, "prograde", false};
}

void LqrPolicy::begin_episode(const ScenarioConfig& config) {
  Policy::begin_episode(config);
  if (config.mean_motion != designed_for_) {
    design_ = design_lqr(config.mean_motion, weights_);
    designed_for_ = config.mean_motion;
  }
}

StepDecision LqrPolicy::decide(const Observation& obs, const Observation*) {
  return {lqr_action(obs, design_.gain, scenario_.bandit_max_accel, scenario_.control_period),
          {},
          "lqr",
          false};
}

namespace {

std::vector<std::string> ids_of(const std::vector<const Bullet*>& active) {
  std::vector<std::string> ids;
  ids.reserve(active.size());
  for (const Bullet* b : active) ids.push_back(b->id);
  return ids;
}

}  // namespace

StepDecision ScriptedFollowerPolicy::decide(const Observation& obs, const Observation* previous) {
  const DerivedFeatures f = derive_features(obs, previous);
  const auto active = active_bullets(*playbook_, f, &activations_);
  StepDecision d;
  d.command = scripted_follower_action(obs, f, active, scenario_.control_period);
  d.active_bullets = ids_of(active);
  d.intent = "scripted";
  return d;
}

LlmPolicy::LlmPolicy(std::shared_ptr<const Playbook> playbook, ReasonerBackend& reasoner,
                     ActorBackend& actor, LlmPolicyConfig config, std::string name)
    : playbook_(std::move(playbook)),
      reasoner_(reasoner),
      actor_(actor),
      config_(std::move(config)),
      name_(std::move(name)) {
  if (config_.reasoner_cadence < 1) {
    throw InvalidInput("llm policy: reasoner cadence must be >= 1");
  }
}

void LlmPolicy::begin_episode(const ScenarioConfig& config) {
  Policy::begin_episode(config);
  step_ = 0;
  last_intent_ = {};
}

StepDecision LlmPolicy::decide(const Observation& obs, const Observation* previous) {
  const DerivedFeatures f = derive_features(obs, previous);
  const auto active = active_bullets(*playbook_, f, &activations_);
  const double period = scenario_.control_period;

  StepDecision d;
  d.active_bullets = ids_of(active);
  if (step_ % static_cast<std::size_t>(config_.reasoner_cadence) == 0 || last_intent_.text.empty()) {
    const PromptContext ctx = assemble_prompt(config_.baseline, active, obs, f);
    last_intent_ = reason(ctx, reasoner_, config_.token_budget);
  }
  ++step_;
  d.intent = last_intent_.text;
  if (last_intent_.degraded) {
    d.command = ThrustCommand::zero(period);
    d.degraded = true;
    return d;
  }
  const ActResult r = act(obs, last_intent_, actor_, period);
  d.command = r.command;
  d.degraded = r.degraded;
  return d;
}

}  // namespace guide
