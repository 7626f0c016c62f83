#pragma once

/**
 * Measurement procedures over search output: log-linear scaling fits of
 * V_max against iterations, iterations needed for a relative gain, V-Q
 * correlation on a finished tree, rubric-based judging and paired effect-size
 * statistics.
 */

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosmos/backend.hpp"
#include "cosmos/story_tree.hpp"

namespace cosmos {

struct TrajectoryPoint {
  int iteration = 0;
  double v_max = 0.0;
};

struct Trajectory {
  std::string group;
  std::vector<TrajectoryPoint> points;
};

struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double slope_se = 0.0;
  double r_squared = 0.0;
  std::size_t points = 0;
};

struct GroupFit {
  std::string group;
  LineFit fit;
};

/**
 * V_max = b0 + b1 ln k. Each trajectory gets its own OLS line; the pooled line
 * shares one slope across groups with a separate intercept per group (the
 * reported intercept is the grand mean of y minus slope times the grand mean
 * of ln k). The p-value tests slope > 0 with a one-sided t test on
 * n - groups - 1 degrees of freedom.
 */
struct FitResult {
  LineFit pooled;
  std::vector<GroupFit> groups;  // filled only for more than one trajectory
  double t_statistic = 0.0;
  std::optional<double> p_value;  // absent without residual degrees of freedom
  int degrees_of_freedom = 0;
};

/// Each trajectory needs >= 3 points with distinct iterations >= 1.
FitResult loglinear_fit(std::span<const Trajectory> trajectories);

/// Smallest k with V_max(k) >= (1 + gain) V_max(baseline_k). Throws NotFound
/// when baseline_k is not in the trajectory.
std::optional<int> iterations_to_gain(std::span<const TrajectoryPoint> points, double gain,
                                      int baseline_k = 8);

/// k_reference / k_improved.
double speedup(int reference_iterations, int improved_iterations);

/// Pearson r. Throws InvalidArgument on length mismatch, < 2 points or zero variance.
double pearson(std::span<const double> x, std::span<const double> y);

struct VqSample {
  NodeId node = 0;
  double value = 0.0;   // V of the child state
  double q = 0.0;       // Q of its incoming edge
};

/// Evaluated non-root nodes with a visited incoming edge.
std::vector<VqSample> v_q_samples(const SearchTree& tree);
double v_q_correlation(const SearchTree& tree);

struct RubricScores {
  std::array<int, 9> values{};  // in kRubricKeys order
  double mean() const;
};

/// Reads the last JSON object in a judge reply (fenced or bare). It must hold
/// exactly the nine rubric keys with integer values 1..10; ParseError otherwise.
RubricScores parse_rubric(std::string_view reply);

struct RubricRating {
  std::array<double, 9> dimension_means{};
  double overall = 0.0;
  int ratings = 0;
  int misses = 0;   // repeats that never produced a valid reply
  std::vector<RubricScores> samples;
};

/**
 * Asks the judge `repeats` times (one batched request, then single retries for
 * malformed replies, at most `retries` per repeat). Throws MalformedResponse
 * when no repeat yields a valid reply.
 */
RubricRating rate_story(const LanguageService& judge, std::string_view story, int repeats,
                        int retries = 2);

struct WilcoxonResult {
  double statistic = 0.0;  // min(W+, W-)
  double w_plus = 0.0;
  double w_minus = 0.0;
  std::size_t nonzero = 0;
  double p_value = 1.0;    // two-sided
  bool exact = true;
};

/// Signed-rank test on paired differences. Zero differences are dropped, tied
/// magnitudes get average ranks. Exact null distribution for up to 25 nonzero
/// differences, normal approximation with tie and continuity corrections above.
WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences);

/// Phi(d / sqrt 2).
double common_language_effect(double d);

struct EffectReport {
  std::size_t n = 0;
  double mean_a = 0.0, mean_b = 0.0;
  double sd_a = 0.0, sd_b = 0.0;
  double mean_difference = 0.0;  // a - b
  double sd_difference = 0.0;
  std::optional<double> cohens_d;  // absent when the differences have zero spread
  std::optional<double> cles;
  WilcoxonResult wilcoxon;
};

/// Paired comparison of arm A against arm B. Needs equal lengths, n >= 2.
EffectReport effect_stats(std::span<const double> a, std::span<const double> b);

/// Petaflop/s-days for a run time, given sustained device throughput.
double pf_days(double seconds, double teraflops = 35.0, double utilization = 0.3);

}  // namespace cosmos
