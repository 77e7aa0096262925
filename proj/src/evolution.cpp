#include "guide/evolution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include <fmt/format.h>

#include "guide/error.hpp"
#include "guide/fs_util.hpp"
#include "guide/scoring.hpp"

namespace guide {

using nlohmann::json;

namespace {

constexpr std::uint64_t kEpisodeStream = 11;
constexpr std::uint64_t kSamplerStream = 12;

}  // namespace

std::size_t select_reflection_episode(std::span<const EpisodeRecord> batch, double epsilon,
                                      Rng& rng) {
  if (batch.empty()) {
    throw InvalidInput("select_reflection_episode: empty batch");
  }
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw InvalidInput("select_reflection_episode: epsilon must lie in [0, 1]");
  }
  std::size_t worst = 0;
  std::size_t best = 0;
  for (std::size_t i = 1; i < batch.size(); ++i) {
    if (batch[i].score > batch[worst].score) worst = i;
    if (batch[i].score < batch[best].score) best = i;
  }
  return rng.bernoulli(epsilon) ? best : worst;
}

std::string to_string(OutcomeLabel label) {
  return label == OutcomeLabel::Failure ? "failure" : "success";
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw InvalidInput("median: empty sample");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

OutcomeLabel label_episode(const EpisodeRecord& record, double running_median) {
  return !record.violation_flags.empty() || record.score > running_median ? OutcomeLabel::Failure
                                                                          : OutcomeLabel::Success;
}

ReflectionInput make_reflection_input(const Episode& episode, OutcomeLabel label,
                                      double control_period, std::size_t window_steps) {
  const Trajectory& traj = episode.trajectory;
  if (traj.empty() || window_steps == 0) {
    throw InvalidInput("make_reflection_input: empty trajectory or window");
  }
  if (episode.trace.size() != traj.size()) {
    throw IntegrityError("make_reflection_input: trace and trajectory lengths differ");
  }
  auto distance = [label](const Observation& o) {
    return label == OutcomeLabel::Failure ? min_guard_distance(o) : lady_distance(o);
  };
  std::size_t centre = 0;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    if (distance(traj[i].obs) < distance(traj[centre].obs)) centre = i;
  }
  const std::size_t len = std::min(window_steps, traj.size());
  std::size_t start = centre >= len / 2 ? centre - len / 2 : 0;
  start = std::min(start, traj.size() - len);

  ReflectionInput in;
  in.episode_id = episode.record.episode_id;
  in.label = label;
  in.violation_flags = episode.record.violation_flags;
  in.control_period = control_period;
  in.window_start = start;
  const auto first = static_cast<std::ptrdiff_t>(start);
  const auto last = static_cast<std::ptrdiff_t>(start + len);
  in.window.assign(traj.begin() + first, traj.begin() + last);
  in.reasoning_excerpt.assign(episode.trace.begin() + first, episode.trace.begin() + last);
  return in;
}

namespace {

double round_to(double value, double grid) { return std::round(value / grid) * grid; }
double ceil_to(double value, double grid) { return std::ceil(value / grid) * grid; }

StateSnapshot snapshot(const Observation& obs) {
  return {obs.t, lady_distance(obs), closing_speed(obs), min_guard_distance(obs)};
}

std::string format_range(const char* name, const std::optional<RangeBound>& r, const char* unit) {
  if (!r) return {};
  std::string s;
  if (r->min) s += fmt::format(" {}.min={:g} {}", name, *r->min, unit);
  if (r->max) s += fmt::format(" {}.max={:g} {}", name, *r->max, unit);
  return s;
}

}  // namespace

std::string render_bullet_text(const std::string& section, const ConditionBlock& c) {
  if (section == "guard_avoidance") {
    const double limit = c.guard_distance && c.guard_distance->max ? *c.guard_distance->max : 0.0;
    return fmt::format(
        "When the Guard is closing inside ~{:g} m, stop all forward pursuit and instead apply "
        "continuous lateral and/or vertical evasive thrust (right/left and up/down only) until "
        "the Guard distance increases above this threshold.",
        limit);
  }
  if (section == "approach") {
    const double range = c.target_distance && c.target_distance->max ? *c.target_distance->max : 0.0;
    const double speed = c.velocity && c.velocity->min ? *c.velocity->min : 0.0;
    return fmt::format(
        "When within ~{:g} m of the Lady and still approaching faster than ~{:g} m/s, switch to "
        "backward throttle or zero forward throttle until relative speed is reduced below {:g} "
        "m/s to avoid overshoot.",
        range, speed, speed);
  }
  std::string s = "Apply the " + section + " correction while" +
                  format_range("time", c.time, "s") +
                  format_range("guard_distance", c.guard_distance, "m") +
                  format_range("target_distance", c.target_distance, "m") +
                  format_range("velocity", c.velocity, "m/s") + ".";
  return s;
}

std::vector<Proposal> HeuristicMiner::reflect(const ReflectionInput& input) {
  std::vector<Proposal> out;
  const Trajectory& w = input.window;
  if (w.empty()) {
    return out;
  }

  // Guard proximity: walk back from the closest approach while the range was
  // still shrinking; the range at that point is where closing began.
  std::size_t gmin = 0;
  for (std::size_t i = 1; i < w.size(); ++i) {
    if (min_guard_distance(w[i].obs) < min_guard_distance(w[gmin].obs)) gmin = i;
  }
  const double d_guard_min = min_guard_distance(w[gmin].obs);
  if (d_guard_min < config_.thresholds.guard_proximity) {
    std::size_t start = gmin;
    while (start > 0 && min_guard_distance(w[start - 1].obs) > min_guard_distance(w[start].obs)) {
      --start;
    }
    const double from = min_guard_distance(w[start].obs);
    const double limit = std::max(config_.rounding, round_to(from, config_.rounding));
    double fx = 0.0;
    for (std::size_t i = start; i <= gmin; ++i) fx += w[i].command.throttle.x();
    fx /= static_cast<double>(gmin - start + 1);

    Proposal p;
    p.section = "guard_avoidance";
    p.type = BulletType::Constraint;
    p.conditions.time = RangeBound{config_.warmup, std::nullopt};
    p.conditions.guard_distance = RangeBound{std::nullopt, limit};
    p.conditions.guard_approaching = true;
    p.text = render_bullet_text(p.section, p.conditions);
    p.states = {snapshot(w[start].obs), snapshot(w[gmin].obs)};
    p.evidence = fmt::format(
        "Guard closed from ~{:.0f} m at t={:.1f} s to {:.1f} m at t={:.1f} s while mean "
        "longitudinal throttle was fx={:.1f}, causing a proximity violation.",
        from, w[start].obs.t, d_guard_min, w[gmin].obs.t, fx);
    p.correction = fmt::format("Evade laterally once the Guard closes inside {:g} m.", limit);
    p.episode_id = input.episode_id;
    out.push_back(std::move(p));
  }

  // Overshoot: the Lady minimum lies inside the window, is followed by
  // divergence, and was reached while closing fast.
  std::size_t lmin = 0;
  for (std::size_t i = 1; i < w.size(); ++i) {
    if (lady_distance(w[i].obs) < lady_distance(w[lmin].obs)) lmin = i;
  }
  if (lmin + 1 < w.size() && lady_distance(w[lmin + 1].obs) > lady_distance(w[lmin].obs)) {
    const auto k = static_cast<std::size_t>(
        std::ceil(config_.thresholds.brake_lookback / input.control_period - 1e-9));
    const std::size_t ref = lmin >= k ? lmin - k : 0;
    const double v = closing_speed(w[ref].obs);
    const double d = lady_distance(w[ref].obs);
    if (v >= config_.thresholds.overshoot_speed) {
      Proposal p;
      p.section = "approach";
      p.type = BulletType::Constraint;
      p.conditions.time = RangeBound{config_.warmup, std::nullopt};
      p.conditions.target_distance =
          RangeBound{std::nullopt, ceil_to(config_.brake_distance_factor * d, config_.rounding)};
      p.conditions.velocity = RangeBound{std::floor(config_.brake_speed_factor * v), std::nullopt};
      p.conditions.approaching = true;
      p.text = render_bullet_text(p.section, p.conditions);
      p.states = {snapshot(w[ref].obs), snapshot(w[lmin].obs)};
      p.evidence = fmt::format(
          "Bandit was {:.0f} m from Lady at {:.0f} m/s with no braking applied, resulting in "
          "overshoot past a {:.1f} m minimum.",
          d, v, lady_distance(w[lmin].obs));
      p.correction = "Brake along the Lady line before the closest approach.";
      p.episode_id = input.episode_id;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string LlmReflector::render_window(const ReflectionInput& input) {
  std::string s = fmt::format("episode {} labelled {}; violations:", input.episode_id,
                              to_string(input.label));
  if (input.violation_flags.empty()) s += " none";
  for (const auto& f : input.violation_flags) s += " " + f;
  s += "\n t d_lady closing_speed d_guard fx fy fz | active bullets | intent\n";
  for (std::size_t i = 0; i < input.window.size(); ++i) {
    const auto& o = input.window[i].obs;
    const auto& c = input.window[i].command.throttle;
    std::string active;
    std::string intent;
    if (i < input.reasoning_excerpt.size()) {
      for (const auto& id : input.reasoning_excerpt[i].active_bullets) active += id + " ";
      intent = input.reasoning_excerpt[i].intent;
    }
    s += fmt::format("{:.1f} {:.1f} {:.2f} {:.1f} {:.2f} {:.2f} {:.2f} | {}| {}\n", o.t,
                     lady_distance(o), closing_speed(o), min_guard_distance(o), c.x(), c.y(), c.z(),
                     active, intent);
  }
  return s;
}

std::vector<Proposal> LlmReflector::parse_reply(const std::string& reply,
                                                const std::string& episode_id) {
  const auto open = reply.find('{');
  const auto close = reply.rfind('}');
  if (open == std::string::npos || close == std::string::npos || close < open) {
    throw ParseError("", "reply carries no JSON object");
  }
  json j;
  try {
    j = json::parse(reply.substr(open, close - open + 1));
  } catch (const json::parse_error& e) {
    throw ParseError("", e.what());
  }
  if (!j.is_object() || !j.contains("proposals") || !j["proposals"].is_array()) {
    throw ParseError("/proposals", "expected array");
  }
  std::vector<Proposal> out;
  for (std::size_t i = 0; i < j["proposals"].size(); ++i) {
    const json& pj = j["proposals"][i];
    const std::string path = "/proposals/" + std::to_string(i);
    if (!pj.is_object()) throw ParseError(path, "expected object");
    auto text_field = [&](const char* key, bool required) -> std::string {
      if (!pj.contains(key)) {
        if (required) throw ParseError(path + "/" + key, "missing required field");
        return {};
      }
      if (!pj[key].is_string()) throw ParseError(path + "/" + key, "expected string");
      return pj[key].get<std::string>();
    };
    Proposal p;
    p.section = text_field("section", true);
    const std::string type = text_field("type", false);
    p.type = type == "rule" ? BulletType::Rule : BulletType::Constraint;
    p.text = text_field("text", true);
    p.evidence = text_field("evidence", false);
    p.correction = text_field("correction", false);
    if (!pj.contains("conditions")) throw ParseError(path + "/conditions", "missing required field");
    p.conditions = conditions_from_json(pj["conditions"], path + "/conditions");
    if (p.section.empty() || section_id_prefix(p.section).find_first_not_of(
                                 "abcdefghijklmnopqrstuvwxyz0123456789-") != std::string::npos) {
      throw ParseError(path + "/section", "section must be lower-case snake_case");
    }
    p.episode_id = episode_id;
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Proposal> LlmReflector::reflect(const ReflectionInput& input) {
  static const std::string kSystem =
      "You review one spacecraft interception episode (Bandit pursuing a passive Lady while "
      "Guards defend it). Propose corrective playbook rules as JSON: {\"proposals\": [{\"section\": "
      "snake_case, \"type\": \"constraint\"|\"rule\", \"text\": 1-3 sentences, \"conditions\": "
      "{time, guard_distance, target_distance, velocity: {min, max}; guard_approaching, "
      "approaching: bool}, \"evidence\": causal narrative, \"correction\": summary}]}. Reply with "
      "JSON only; an empty list is allowed.";
  try {
    const std::string reply =
        backend_.generate({kSystem, render_window(input), max_tokens_});
    return parse_reply(reply, input.episode_id);
  } catch (const Error&) {
    return {};
  } catch (const json::exception&) {
    return {};
  }
}

namespace {

bool ranges_overlap(const std::optional<RangeBound>& a, const std::optional<RangeBound>& b) {
  if (!a || !b) return true;
  const double lo = std::max(a->min.value_or(-std::numeric_limits<double>::infinity()),
                             b->min.value_or(-std::numeric_limits<double>::infinity()));
  const double hi = std::min(a->max.value_or(std::numeric_limits<double>::infinity()),
                             b->max.value_or(std::numeric_limits<double>::infinity()));
  return lo <= hi;
}

std::optional<RangeBound> hull(const std::optional<RangeBound>& a,
                               const std::optional<RangeBound>& b) {
  if (!a || !b) return std::nullopt;
  RangeBound r;
  if (a->min && b->min) r.min = std::min(*a->min, *b->min);
  if (a->max && b->max) r.max = std::max(*a->max, *b->max);
  if (!r.min && !r.max) return std::nullopt;
  return r;
}

std::optional<bool> agree(const std::optional<bool>& a, const std::optional<bool>& b) {
  if (a && b && *a == *b) return a;
  return std::nullopt;
}

bool flags_compatible(const std::optional<bool>& a, const std::optional<bool>& b) {
  return !a || !b || *a == *b;
}

}  // namespace

bool conditions_overlap(const ConditionBlock& a, const ConditionBlock& b) {
  return ranges_overlap(a.time, b.time) && ranges_overlap(a.guard_distance, b.guard_distance) &&
         ranges_overlap(a.target_distance, b.target_distance) &&
         ranges_overlap(a.velocity, b.velocity) &&
         flags_compatible(a.guard_approaching, b.guard_approaching) &&
         flags_compatible(a.approaching, b.approaching);
}

ConditionBlock merge_conditions(const ConditionBlock& a, const ConditionBlock& b) {
  ConditionBlock m;
  m.time = hull(a.time, b.time);
  m.guard_distance = hull(a.guard_distance, b.guard_distance);
  m.target_distance = hull(a.target_distance, b.target_distance);
  m.velocity = hull(a.velocity, b.velocity);
  m.guard_approaching = agree(a.guard_approaching, b.guard_approaching);
  m.approaching = agree(a.approaching, b.approaching);
  return m;
}

std::vector<CuratorOp> curate(std::span<const Proposal> proposals, const Playbook& current) {
  // Working copy of every bullet touched so far, keyed by id, in op order.
  std::vector<CuratorOp> ops;
  std::map<std::string, std::size_t> op_of;
  int counter = next_bullet_counter(current);

  auto view = [&](const std::string& id) -> const Bullet* {
    if (auto it = op_of.find(id); it != op_of.end()) return &ops[it->second].bullet;
    return current.find(id);
  };

  for (const Proposal& p : proposals) {
    std::optional<std::string> target;
    auto consider = [&](const Bullet& b) {
      if (!target && b.section == p.section && conditions_overlap(b.conditions, p.conditions)) {
        target = b.id;
      }
    };
    for (const Bullet& b : current.bullets) consider(*view(b.id));
    for (const CuratorOp& op : ops) {
      if (op.kind == CuratorOp::Kind::Add) consider(op.bullet);
    }

    if (!target) {
      Bullet b;
      b.id = make_bullet_id(p.section, counter++);
      b.section = p.section;
      b.type = p.type;
      b.conditions = p.conditions;
      b.text = p.text.empty() ? render_bullet_text(p.section, p.conditions) : p.text;
      b.states = p.states;
      b.evidence = p.evidence;
      if (!p.episode_id.empty()) b.episode_history = {p.episode_id};
      b.occurrence_count = 1;
      op_of[b.id] = ops.size();
      ops.push_back(CuratorOp::add(std::move(b)));
      continue;
    }

    const Bullet& base = *view(*target);
    Bullet merged = base;
    merged.conditions = merge_conditions(base.conditions, p.conditions);
    merged.text = render_bullet_text(merged.section, merged.conditions);
    if (merged.section != "guard_avoidance" && merged.section != "approach" && !p.text.empty()) {
      merged.text = p.text;
    }
    merged.states.insert(merged.states.end(), p.states.begin(), p.states.end());
    if (!p.evidence.empty()) {
      merged.evidence = merged.evidence.empty() ? p.evidence : merged.evidence + " " + p.evidence;
    }

    if (auto it = op_of.find(*target); it != op_of.end()) {
      // Folding into an op of this batch: counts track distinct episodes.
      CuratorOp& op = ops[it->second];
      const bool seen = p.episode_id.empty() ||
                        std::find(op.bullet.episode_history.begin(), op.bullet.episode_history.end(),
                                  p.episode_id) != op.bullet.episode_history.end();
      merged.episode_history = op.bullet.episode_history;
      merged.occurrence_count = op.bullet.occurrence_count;
      if (!seen) {
        merged.episode_history.push_back(p.episode_id);
        ++merged.occurrence_count;
      }
      op.bullet = std::move(merged);
    } else {
      // UPDATE carries deltas; apply_ops unions history and sums counts.
      merged.episode_history.clear();
      if (!p.episode_id.empty()) merged.episode_history.push_back(p.episode_id);
      merged.occurrence_count = 1;
      op_of[merged.id] = ops.size();
      ops.push_back(CuratorOp::update(std::move(merged)));
    }
  }

  (void)apply_ops(current, ops);  // throws OpError on an invalid batch
  return ops;
}

double VersionStats::mean_score() const {
  return score_history.empty() ? 0.0 : mean(score_history);
}

double VersionStats::std_score() const {
  return score_history.size() < 2 ? 0.0 : sample_std(score_history);
}

std::vector<double> ucb_values(std::span<const VersionStats> stats, double c) {
  std::vector<double> out(stats.size(), std::numeric_limits<double>::infinity());
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t total = 0;
  for (const auto& s : stats) {
    total += s.n();
    if (s.n() == 0) continue;
    lo = std::min(lo, s.mean_score());
    hi = std::max(hi, s.mean_score());
  }
  const double log_n = total > 0 ? std::log(static_cast<double>(total)) : 0.0;
  for (std::size_t k = 0; k < stats.size(); ++k) {
    if (stats[k].n() == 0) continue;
    const double normalised = hi > lo ? (stats[k].mean_score() - lo) / (hi - lo) : 0.0;
    out[k] = -normalised + c * std::sqrt(log_n / static_cast<double>(stats[k].n()));
  }
  return out;
}

std::size_t ucb_select(std::span<const VersionStats> stats, double c) {
  if (stats.empty()) {
    throw InvalidInput("ucb_select: no versions");
  }
  if (!(c > 0.0)) {
    throw InvalidInput("ucb_select: exploration constant must be positive");
  }
  const auto values = ucb_values(stats, c);
  std::size_t best = 0;
  for (std::size_t k = 1; k < values.size(); ++k) {
    if (values[k] > values[best]) best = k;
  }
  return best;
}

EvolutionState EvolutionState::initial() {
  EvolutionState s;
  s.versions.push_back(Playbook{});
  s.stats.push_back(VersionStats{0, {}});
  s.episodes.emplace_back();
  return s;
}

json state_to_json(const EvolutionState& state) {
  json versions = json::array();
  for (std::size_t k = 0; k < state.stats.size(); ++k) {
    versions.push_back({{"version", state.stats[k].version},
                        {"scores", state.stats[k].score_history},
                        {"episodes", state.episodes[k]}});
  }
  json rounds = json::array();
  for (const auto& r : state.rounds) {
    json j = {{"round", r.round},
              {"evaluated_version", r.evaluated_version},
              {"episodes", r.episodes},
              {"reflected_episode", r.reflected_episode},
              {"label", to_string(r.label)},
              {"proposals", r.proposals},
              {"ops", r.ops}};
    j["created_version"] = r.created_version ? json(*r.created_version) : json(nullptr);
    rounds.push_back(std::move(j));
  }
  return {{"versions", std::move(versions)}, {"rounds", std::move(rounds)}};
}

EvolutionState state_from_json(const json& j, std::vector<Playbook> versions) {
  EvolutionState s;
  try {
    const json& vs = j.at("versions");
    if (vs.size() != versions.size()) {
      throw IntegrityError(fmt::format("stats lists {} versions, store holds {}", vs.size(),
                                       versions.size()));
    }
    for (std::size_t k = 0; k < vs.size(); ++k) {
      if (vs[k].at("version").get<int>() != static_cast<int>(k)) {
        throw IntegrityError(fmt::format("stats entry {} has the wrong version", k));
      }
      s.stats.push_back({static_cast<int>(k), vs[k].at("scores").get<std::vector<double>>()});
      s.episodes.push_back(vs[k].at("episodes").get<std::vector<std::string>>());
      if (s.episodes.back().size() != s.stats.back().n()) {
        throw IntegrityError(fmt::format("version {}: score and episode counts differ", k));
      }
    }
    for (const auto& rj : j.at("rounds")) {
      RoundLog r;
      r.round = rj.at("round").get<int>();
      r.evaluated_version = rj.at("evaluated_version").get<int>();
      r.episodes = rj.at("episodes").get<std::vector<std::string>>();
      r.reflected_episode = rj.at("reflected_episode").get<std::string>();
      r.label = rj.at("label").get<std::string>() == "success" ? OutcomeLabel::Success
                                                               : OutcomeLabel::Failure;
      r.proposals = rj.at("proposals").get<std::size_t>();
      r.ops = rj.at("ops").get<std::size_t>();
      if (!rj.at("created_version").is_null()) r.created_version = rj["created_version"].get<int>();
      s.rounds.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw ParseError("stats.json", e.what());
  }
  s.versions = std::move(versions);
  return s;
}

bool VersionStore::has_state() const { return std::filesystem::exists(stats_file()); }

namespace {

std::filesystem::path playbook_file(const std::filesystem::path& dir, int version) {
  return dir / ("v" + std::to_string(version) + ".json");
}

}  // namespace

EvolutionState VersionStore::load() const {
  json j;
  try {
    j = json::parse(read_file(stats_file()));
  } catch (const json::parse_error& e) {
    throw ParseError(stats_file().string(), e.what());
  }
  const std::size_t count = j.at("versions").size();
  std::vector<Playbook> versions;
  for (std::size_t k = 0; k < count; ++k) {
    const auto file = playbook_file(playbooks_dir(), static_cast<int>(k));
    if (!std::filesystem::exists(file)) {
      throw IntegrityError("missing playbook " + file.string());
    }
    Playbook p = deserialize(read_file(file));
    if (p.version != static_cast<int>(k)) {
      throw IntegrityError(file.string() + " holds version " + std::to_string(p.version));
    }
    versions.push_back(std::move(p));
  }
  return state_from_json(j, std::move(versions));
}

void VersionStore::write_playbook(const Playbook& playbook) const {
  std::filesystem::create_directories(playbooks_dir());
  write_file_atomic(playbook_file(playbooks_dir(), playbook.version), serialize(playbook));
}

void VersionStore::commit(const EvolutionState& state) const {
  // Committed versions are immutable: an existing file must match exactly.
  const std::size_t committed =
      has_state() ? json::parse(read_file(stats_file())).at("versions").size() : 0;
  for (const auto& p : state.versions) {
    const auto file = playbook_file(playbooks_dir(), p.version);
    if (static_cast<std::size_t>(p.version) < committed && std::filesystem::exists(file)) {
      if (read_file(file) != serialize(p)) {
        throw IntegrityError("refusing to rewrite committed playbook " + file.string());
      }
      continue;
    }
    write_playbook(p);
  }
  write_file_atomic(stats_file(), state_to_json(state).dump(2) + "\n");
}

std::string round_episode_id(int round, int version, int index) {
  return fmt::format("r{:03d}-v{}-e{:02d}", round, version, index);
}

std::uint64_t round_episode_seed(std::uint64_t master, int round, int index) {
  return derive_seed(master, kEpisodeStream,
                     (static_cast<std::uint64_t>(round) << 32) | static_cast<std::uint32_t>(index));
}

bool evolution_open(const EvolutionState& state, const EvolutionConfig& config) {
  if (static_cast<int>(state.versions.size()) < config.max_versions) return true;
  return std::any_of(state.stats.begin(), state.stats.end(),
                     [](const VersionStats& s) { return s.n() == 0; });
}

EvolutionState evolve_round(const EvolutionState& state, const VersionStore& store,
                            const EvolutionConfig& config, const EpisodeRunner& runner,
                            Reflector& reflector) {
  if (state.versions.empty() || state.versions.size() != state.stats.size()) {
    throw InvalidInput("evolve_round: state needs at least v0 and matching stats");
  }
  if (config.batch_size < 1) {
    throw InvalidInput("evolve_round: batch size must be positive");
  }
  EvolutionState next = state;
  const int round = state.rounds_completed();
  const std::size_t k = ucb_select(state.stats, config.c);
  const Playbook& playbook = state.versions[k];

  RoundLog log;
  log.round = round;
  log.evaluated_version = static_cast<int>(k);

  std::vector<Episode> batch;
  for (int i = 0; i < config.batch_size; ++i) {
    const std::string id = round_episode_id(round, static_cast<int>(k), i);
    const std::uint64_t seed = round_episode_seed(config.seed, round, i);
    Episode ep;
    if (std::filesystem::exists(record_path(store.episodes_dir(), id))) {
      ep = load_episode(store.episodes_dir(), id);
      if (ep.record.seed != seed || ep.record.playbook_version != static_cast<int>(k)) {
        throw IntegrityError("stale episode " + id + " does not match this round");
      }
    } else {
      ep = runner(playbook, id, seed);
      save_episode(store.episodes_dir(), ep);
    }
    next.stats[k].score_history.push_back(ep.record.score);
    next.episodes[k].push_back(id);
    log.episodes.push_back(id);
    batch.push_back(std::move(ep));
  }

  std::vector<EpisodeRecord> records;
  std::vector<double> all_scores;
  for (const auto& ep : batch) records.push_back(ep.record);
  for (const auto& s : next.stats) {
    all_scores.insert(all_scores.end(), s.score_history.begin(), s.score_history.end());
  }
  Rng rng = Rng::derive(config.seed, kSamplerStream, static_cast<std::uint64_t>(round));
  const std::size_t chosen = select_reflection_episode(records, config.epsilon, rng);
  const Episode& selected = batch[chosen];
  log.reflected_episode = selected.record.episode_id;
  log.label = label_episode(selected.record, median(all_scores));

  if (static_cast<int>(next.versions.size()) < config.max_versions) {
    const double period =
        selected.trajectory.size() > 1
            ? selected.trajectory[1].obs.t - selected.trajectory[0].obs.t
            : selected.trajectory.front().obs.t;
    const ReflectionInput input =
        make_reflection_input(selected, log.label, period, config.window_steps);
    const auto proposals = reflector.reflect(input);
    log.proposals = proposals.size();
    std::vector<CuratorOp> ops;
    try {
      ops = curate(proposals, playbook);
    } catch (const OpError&) {
      ops.clear();
    }
    log.ops = ops.size();
    if (!ops.empty()) {
      Playbook child = apply_ops(playbook, ops);
      child.version = static_cast<int>(next.versions.size());
      child.parent_version = static_cast<int>(k);
      log.created_version = child.version;
      next.versions.push_back(std::move(child));
      next.stats.push_back({log.created_version.value(), {}});
      next.episodes.emplace_back();
    }
  }
  next.rounds.push_back(std::move(log));
  store.commit(next);
  return next;
}

}  // namespace guide
