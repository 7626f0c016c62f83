#include "cosmos/analytics.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "cosmos/error.hpp"
#include "cosmos/prompts.hpp"
#include "json.hpp"

namespace cosmos {

namespace {

double mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

double sample_sd(std::span<const double> x) {
  if (x.size() < 2) return 0.0;
  const double m = mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

double normal_cdf(double z) { return boost::math::cdf(boost::math::normal(), z); }

LineFit ols(std::span<const double> x, std::span<const double> y) {
  LineFit f;
  f.points = x.size();
  const double mx = mean(x), my = mean(y);
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ssr = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    ssr += r * r;
  }
  f.r_squared = syy > 0 ? 1.0 - ssr / syy : (ssr == 0 ? 1.0 : 0.0);
  f.slope_se = x.size() > 2 ? std::sqrt(ssr / static_cast<double>(x.size() - 2) / sxx) : 0.0;
  return f;
}

}  // namespace

FitResult loglinear_fit(std::span<const Trajectory> trajectories) {
  if (trajectories.empty()) throw InvalidArgument("no trajectories to fit");
  struct Group {
    std::vector<double> x, y;
  };
  std::vector<Group> groups;
  for (const auto& t : trajectories) {
    if (t.points.size() < 3)
      throw InvalidArgument("trajectory '" + t.group + "' has fewer than 3 points");
    Group g;
    std::set<int> ks;
    for (const auto& p : t.points) {
      if (p.iteration < 1) throw InvalidArgument("iteration must be >= 1");
      if (!ks.insert(p.iteration).second)
        throw InvalidArgument("trajectory '" + t.group + "' repeats an iteration");
      g.x.push_back(std::log(static_cast<double>(p.iteration)));
      g.y.push_back(p.v_max);
    }
    groups.push_back(std::move(g));
  }

  FitResult result;
  if (groups.size() > 1)
    for (std::size_t i = 0; i < groups.size(); ++i)
      result.groups.push_back({trajectories[i].group, ols(groups[i].x, groups[i].y)});

  // Common slope with one intercept per group.
  double sxx = 0, sxy = 0, sum_x = 0, sum_y = 0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    const double mx = mean(g.x), my = mean(g.y);
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      sxx += (g.x[i] - mx) * (g.x[i] - mx);
      sxy += (g.x[i] - mx) * (g.y[i] - my);
      sum_x += g.x[i];
      sum_y += g.y[i];
    }
    n += g.x.size();
  }
  const double slope = sxy / sxx;
  const double grand_y = sum_y / static_cast<double>(n);
  double ssr = 0, sst = 0;
  for (const auto& g : groups) {
    const double mx = mean(g.x), my = mean(g.y);
    for (std::size_t i = 0; i < g.x.size(); ++i) {
      const double r = g.y[i] - (my + slope * (g.x[i] - mx));
      ssr += r * r;
      sst += (g.y[i] - grand_y) * (g.y[i] - grand_y);
    }
  }
  LineFit& pooled = result.pooled;
  pooled.points = n;
  pooled.slope = slope;
  pooled.intercept = grand_y - slope * sum_x / static_cast<double>(n);
  pooled.r_squared = sst > 0 ? 1.0 - ssr / sst : (ssr == 0 ? 1.0 : 0.0);

  const int dof = static_cast<int>(n) - static_cast<int>(groups.size()) - 1;
  result.degrees_of_freedom = std::max(dof, 0);
  if (dof > 0) {
    pooled.slope_se = std::sqrt(ssr / dof / sxx);
    if (pooled.slope_se > 0) {
      result.t_statistic = slope / pooled.slope_se;
      const boost::math::students_t dist(dof);
      result.p_value = boost::math::cdf(boost::math::complement(dist, result.t_statistic));
    } else {
      result.t_statistic = slope > 0   ? std::numeric_limits<double>::infinity()
                           : slope < 0 ? -std::numeric_limits<double>::infinity()
                                       : 0.0;
      result.p_value = slope > 0 ? 0.0 : slope < 0 ? 1.0 : 0.5;
    }
  }
  return result;
}

std::optional<int> iterations_to_gain(std::span<const TrajectoryPoint> points, double gain,
                                      int baseline_k) {
  std::vector<TrajectoryPoint> sorted(points.begin(), points.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.iteration < b.iteration; });
  const auto base = std::find_if(sorted.begin(), sorted.end(),
                                 [&](const auto& p) { return p.iteration == baseline_k; });
  if (base == sorted.end())
    throw NotFound("baseline iteration " + std::to_string(baseline_k) + " not in trajectory");
  const double target = (1.0 + gain) * base->v_max;
  for (const auto& p : sorted)
    if (p.iteration >= baseline_k && p.v_max >= target - 1e-12) return p.iteration;
  return std::nullopt;
}

double speedup(int reference_iterations, int improved_iterations) {
  if (reference_iterations <= 0 || improved_iterations <= 0)
    throw InvalidArgument("iteration counts must be positive");
  return static_cast<double>(reference_iterations) / static_cast<double>(improved_iterations);
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw InvalidArgument("pearson inputs differ in length");
  if (x.size() < 2) throw InvalidArgument("pearson needs at least two points");
  const double mx = mean(x), my = mean(y);
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (sxx == 0 || syy == 0) throw InvalidArgument("pearson undefined for zero variance");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

std::vector<VqSample> v_q_samples(const SearchTree& tree) {
  std::vector<VqSample> out;
  for (const auto& n : tree.nodes())
    if (!n.is_root() && n.evaluated_value && n.stats.visits > 0)
      out.push_back({n.id, *n.evaluated_value, n.stats.action_value});
  return out;
}

double v_q_correlation(const SearchTree& tree) {
  const auto samples = v_q_samples(tree);
  std::vector<double> v, q;
  for (const auto& s : samples) v.push_back(s.value), q.push_back(s.q);
  return pearson(v, q);
}

// ---------------------------------------------------------------------------
// Rubric

double RubricScores::mean() const {
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

RubricScores parse_rubric(std::string_view reply) {
  using nlohmann::json;
  const auto close = reply.rfind('}');
  if (close == std::string_view::npos) throw ParseError("judge reply holds no JSON object");
  std::optional<json> obj;
  for (auto open = reply.rfind('{', close); open != std::string_view::npos;
       open = open ? reply.rfind('{', open - 1) : std::string_view::npos) {
    const json j = json::parse(reply.substr(open, close - open + 1), nullptr, false);
    if (!j.is_discarded() && j.is_object()) {
      obj = j;
      break;
    }
    if (open == 0) break;
  }
  if (!obj) throw ParseError("judge reply holds no parseable JSON object");
  if (obj->size() != kRubricKeys.size())
    throw ParseError("rubric object must hold exactly nine keys, found " +
                     std::to_string(obj->size()));
  RubricScores s;
  for (std::size_t k = 0; k < kRubricKeys.size(); ++k) {
    const auto it = obj->find(std::string(kRubricKeys[k]));
    if (it == obj->end()) throw ParseError("rubric key missing: " + std::string(kRubricKeys[k]));
    if (!it->is_number_integer())
      throw ParseError("rubric value for " + std::string(kRubricKeys[k]) + " is not an integer");
    const auto v = it->get<std::int64_t>();
    if (v < 1 || v > 10)
      throw ParseError("rubric value for " + std::string(kRubricKeys[k]) + " outside 1..10");
    s.values[k] = static_cast<int>(v);
  }
  return s;
}

RubricRating rate_story(const LanguageService& judge, std::string_view story, int repeats,
                        int retries) {
  if (repeats < 1) throw InvalidArgument("repeats must be >= 1");
  const std::string prompt = rubric_prompt(story);
  const auto first = judge.complete(prompt, repeats);
  RubricRating rating;
  for (int r = 0; r < repeats; ++r) {
    std::optional<RubricScores> got;
    try {
      if (static_cast<std::size_t>(r) < first.size()) got = parse_rubric(first[r]);
    } catch (const ParseError&) {
    }
    for (int a = 0; !got && a < retries; ++a) {
      try {
        got = parse_rubric(judge.complete(prompt, 1).at(0));
      } catch (const ParseError&) {
      }
    }
    if (got) rating.samples.push_back(*got);
    else ++rating.misses;
  }
  if (rating.samples.empty())
    throw MalformedResponse("judge produced no valid rubric in " + std::to_string(repeats) +
                            " repeats");
  rating.ratings = static_cast<int>(rating.samples.size());
  for (const auto& s : rating.samples)
    for (std::size_t k = 0; k < 9; ++k) rating.dimension_means[k] += s.values[k];
  for (auto& m : rating.dimension_means) m /= rating.ratings;
  rating.overall = std::accumulate(rating.dimension_means.begin(), rating.dimension_means.end(),
                                   0.0) / 9.0;
  return rating;
}

// ---------------------------------------------------------------------------
// Paired statistics

WilcoxonResult wilcoxon_signed_rank(std::span<const double> differences) {
  WilcoxonResult w;
  std::vector<double> d;
  for (double x : differences)
    if (x != 0.0) d.push_back(x);
  w.nonzero = d.size();
  const std::size_t n = d.size();
  w.exact = n <= 25;
  if (n == 0) return w;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return std::abs(d[a]) < std::abs(d[b]); });
  // Doubled ranks keep tied averages integral.
  std::vector<long> rank2(n);
  double tie_term = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && std::abs(d[order[j]]) == std::abs(d[order[i]])) ++j;
    const long avg2 = static_cast<long>(i + 1 + j);  // 2 * mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t) rank2[order[t]] = avg2;
    const double t = static_cast<double>(j - i);
    tie_term += t * t * t - t;
    i = j;
  }
  long plus2 = 0, minus2 = 0;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? plus2 : minus2) += rank2[i];
  w.w_plus = plus2 / 2.0;
  w.w_minus = minus2 / 2.0;
  w.statistic = std::min(w.w_plus, w.w_minus);

  if (w.exact) {
    const long total2 = plus2 + minus2;
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    for (long r : rank2)
      for (long s = total2; s >= r; --s) count[s] += count[s - r];
    const long observed2 = std::min(plus2, minus2);
    double tail = 0.0;
    for (long s = 0; s <= observed2; ++s) tail += count[s];
    w.p_value = std::min(1.0, 2.0 * tail / std::ldexp(1.0, static_cast<int>(n)));
  } else {
    const double nn = static_cast<double>(n);
    const double mu = nn * (nn + 1) / 4.0;
    const double var = nn * (nn + 1) * (2 * nn + 1) / 24.0 - tie_term / 48.0;
    const double z = std::min(0.0, (w.statistic - mu + 0.5) / std::sqrt(var));
    w.p_value = std::min(1.0, 2.0 * normal_cdf(z));
  }
  return w;
}

double common_language_effect(double d) { return normal_cdf(d / std::sqrt(2.0)); }

EffectReport effect_stats(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("paired arms differ in length");
  if (a.size() < 2) throw InvalidArgument("paired comparison needs n >= 2");
  EffectReport r;
  r.n = a.size();
  r.mean_a = mean(a);
  r.mean_b = mean(b);
  r.sd_a = sample_sd(a);
  r.sd_b = sample_sd(b);
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];
  r.mean_difference = mean(diff);
  r.sd_difference = sample_sd(diff);
  if (r.sd_difference > 0) {
    r.cohens_d = r.mean_difference / r.sd_difference;
  } else if (r.mean_difference == 0) {
    r.cohens_d = 0.0;
  }
  if (r.cohens_d) r.cles = common_language_effect(*r.cohens_d);
  r.wilcoxon = wilcoxon_signed_rank(diff);
  return r;
}

double pf_days(double seconds, double teraflops, double utilization) {
  return seconds * teraflops * 1e12 * utilization / (1e15 * 86400.0);
}

}  // namespace cosmos
