#pragma once

#include <span>
#include <string>
#include <vector>

#include "guide/scenario.hpp"

namespace guide {

struct ScoreBreakdown {
  double d_min_lb = 0.0;
  double d_min_bg = 0.0;
  double lady_term = 0.0;   // d_min_lb^2
  double guard_term = 0.0;  // 1e6 / (d_min_bg + 0.1)
  double total = 0.0;
};

// S = d_LB^2 + 1e6 / (d_BG + 0.1). Lower is better. Throws InvalidInput on
// negative or non-finite distances.
ScoreBreakdown composite_score(double d_min_lb, double d_min_bg);

// Minima over every sample (and over every guard). Throws InvalidInput on an
// empty trajectory.
ScoreBreakdown episode_metrics(std::span<const TrajectorySample> trajectory);

// One scored episode as far as aggregation cares.
struct ScoredEpisode {
  int version = 0;
  double score = 0.0;
  double d_min_lb = 0.0;
  double d_min_bg = 0.0;
};

struct VersionRow {
  int version = 0;
  std::size_t n = 0;
  double mean_score = 0.0;
  double std_score = 0.0;  // sample (n-1) estimator, 0 when n == 1
  double mean_d_lady = 0.0;
  double mean_d_guard = 0.0;
  bool best = false;
};

double mean(std::span<const double> values);
double sample_std(std::span<const double> values);

// Rows sorted by version; `best` marks the minimum mean score.
std::vector<VersionRow> aggregate_version_stats(std::span<const ScoredEpisode> episodes);

// Aligned table: version, [n], mean score (3 s.f. scientific),
// distances to one decimal. Best row is starred.
std::string render_version_table(std::span<const VersionRow> rows, bool with_n);
std::string render_version_csv(std::span<const VersionRow> rows);
// Per-version bar-chart data: mean, std, log10 of mean and of mean +/- std.
std::string render_plot_csv(std::span<const VersionRow> rows);

// "4.15e+05" style, three significant digits.
std::string format_sci(double value);

}  // namespace guide
