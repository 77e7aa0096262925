#include "guide/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include <fmt/format.h>

#include "guide/error.hpp"
#include "guide/playbook.hpp"

namespace guide {

ScoreBreakdown composite_score(double d_min_lb, double d_min_bg) {
  if (!std::isfinite(d_min_lb) || !std::isfinite(d_min_bg) || d_min_lb < 0.0 || d_min_bg < 0.0) {
    throw InvalidInput("composite_score: distances must be finite and non-negative");
  }
  ScoreBreakdown s;
  s.d_min_lb = d_min_lb;
  s.d_min_bg = d_min_bg;
  s.lady_term = d_min_lb * d_min_lb;
  s.guard_term = 1e6 / (d_min_bg + 0.1);
  s.total = s.lady_term + s.guard_term;
  return s;
}

ScoreBreakdown episode_metrics(std::span<const TrajectorySample> trajectory) {
  if (trajectory.empty()) {
    throw InvalidInput("episode_metrics: empty trajectory");
  }
  double lb = std::numeric_limits<double>::infinity();
  double bg = std::numeric_limits<double>::infinity();
  for (const auto& sample : trajectory) {
    lb = std::min(lb, lady_distance(sample.obs));
    bg = std::min(bg, min_guard_distance(sample.obs));
  }
  return composite_score(lb, bg);
}

double mean(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

double sample_std(std::span<const double> values) {
  if (values.size() < 2) return 0.0;
  const double m = mean(values);
  double ss = 0.0;
  for (double v : values) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

std::vector<VersionRow> aggregate_version_stats(std::span<const ScoredEpisode> episodes) {
  struct Columns {
    std::vector<double> score, lady, guard;
  };
  std::map<int, Columns> groups;
  for (const auto& e : episodes) {
    auto& g = groups[e.version];
    g.score.push_back(e.score);
    g.lady.push_back(e.d_min_lb);
    g.guard.push_back(e.d_min_bg);
  }
  std::vector<VersionRow> rows;
  for (const auto& [version, g] : groups) {
    VersionRow r;
    r.version = version;
    r.n = g.score.size();
    r.mean_score = mean(g.score);
    r.std_score = sample_std(g.score);
    r.mean_d_lady = mean(g.lady);
    r.mean_d_guard = mean(g.guard);
    rows.push_back(r);
  }
  auto best = std::min_element(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    return a.mean_score < b.mean_score;
  });
  if (best != rows.end()) best->best = true;
  return rows;
}

std::string format_sci(double value) { return fmt::format("{:.2e}", value); }

std::string render_version_table(std::span<const VersionRow> rows, bool with_n) {
  std::string out;
  if (with_n) {
    out += fmt::format("{:<8} {:>4} {:>10} {:>10} {:>12} {:>12}\n", "Version", "n", "Mean score",
                       "Std", "d_Lady (m)", "d_Guard (m)");
  } else {
    out += fmt::format("{:<8} {:>10} {:>10} {:>12} {:>12}\n", "Version", "Mean score", "Std",
                       "d_Lady (m)", "d_Guard (m)");
  }
  for (const auto& r : rows) {
    const std::string name = fmt::format("{}v{}", r.best ? "*" : " ", r.version);
    if (with_n) {
      out += fmt::format("{:<8} {:>4} {:>10} {:>10} {:>12.1f} {:>12.1f}\n", name, r.n,
                         format_sci(r.mean_score), format_sci(r.std_score), r.mean_d_lady,
                         r.mean_d_guard);
    } else {
      out += fmt::format("{:<8} {:>10} {:>10} {:>12.1f} {:>12.1f}\n", name,
                         format_sci(r.mean_score), format_sci(r.std_score), r.mean_d_lady,
                         r.mean_d_guard);
    }
  }
  return out;
}

std::string render_version_csv(std::span<const VersionRow> rows) {
  std::string out = "version,n,mean_score,std_score,mean_d_lady,mean_d_guard,best\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.17g},{:.17g},{:.17g},{:.17g},{}\n", r.version, r.n, r.mean_score,
                       r.std_score, r.mean_d_lady, r.mean_d_guard, r.best ? 1 : 0);
  }
  return out;
}

std::string render_plot_csv(std::span<const VersionRow> rows) {
  std::string out = "version,mean_score,std_score,log10_mean,log10_lower,log10_upper,best\n";
  for (const auto& r : rows) {
    const double lower = r.mean_score - r.std_score;
    out += fmt::format("{},{:.17g},{:.17g},{:.17g},{},{:.17g},{}\n", r.version, r.mean_score,
                       r.std_score, std::log10(r.mean_score),
                       lower > 0.0 ? fmt::format("{:.17g}", std::log10(lower)) : std::string("nan"),
                       std::log10(r.mean_score + r.std_score), r.best ? 1 : 0);
  }
  return out;
}

}  // namespace guide
