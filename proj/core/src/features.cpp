#include "cosmos/features.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "cosmos/error.hpp"

namespace cosmos {

void CuriosityConfig::validate() const {
  if (!(spread > 0.0)) throw InvalidArgument("curiosity spread must be positive");
}

std::size_t FeatureVector::missing_count() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](const auto& v) { return !v; }));
}

SurprisalSeries surprisal_series(std::span<const TokenLogprob> logprobs) {
  if (logprobs.empty()) throw InvalidArgument("surprisal needs at least one token");
  SurprisalSeries s;
  s.values.reserve(logprobs.size());
  for (const auto& t : logprobs) {
    if (t.logprob > 0.0) throw InvalidArgument("token logprob must be <= 0");
    // -0.0 for certain tokens would print as "-0"
    s.values.push_back(t.logprob == 0.0 ? 0.0 : -t.logprob / std::numbers::ln2);
  }
  return s;
}

double interest(double surprisal_bits, const CuriosityConfig& config) {
  config.validate();
  const double d = surprisal_bits - config.optimal_surprisal;
  return std::exp(-(d * d) / (2.0 * config.spread * config.spread));
}

double curiosity_index(const SurprisalSeries& series, const CuriosityConfig& config) {
  if (series.values.empty()) throw InvalidArgument("curiosity index of an empty series");
  double sum = 0.0;
  for (double s : series.values) sum += interest(s, config);
  return sum / static_cast<double>(series.values.size());
}

namespace {

double norm(const EmbeddingVector& v) {
  double n = 0.0;
  for (double x : v.values) n += x * x;
  return std::sqrt(n);
}

std::vector<double> pairwise_cosines(std::span<const EmbeddingVector> e) {
  if (e.size() < 2) throw InvalidArgument("coherence needs at least two sentences");
  std::vector<double> norms;
  for (const auto& v : e) {
    if (v.dimension() != e.front().dimension())
      throw InvalidArgument("embedding dimensions differ");
    const double n = norm(v);
    if (n == 0.0) throw InvalidArgument("zero-norm embedding");
    norms.push_back(n);
  }
  std::vector<double> out;
  out.reserve(e.size() * (e.size() - 1) / 2);
  for (std::size_t i = 0; i + 1 < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      const double dot = std::inner_product(e[i].values.begin(), e[i].values.end(),
                                            e[j].values.begin(), 0.0);
      out.push_back(std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0));
    }
  return out;
}

double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double population_variance(std::span<const double> xs) {
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return ss / static_cast<double>(xs.size());
}

}  // namespace

double coherence_score(std::span<const EmbeddingVector> embeddings) {
  return coherence_stats(embeddings).mean;
}

CoherenceStats coherence_stats(std::span<const EmbeddingVector> embeddings) {
  const auto cos = pairwise_cosines(embeddings);
  return {mean(cos), std::sqrt(population_variance(cos))};
}

std::vector<std::size_t> find_peaks(std::span<const double> x, double min_prominence) {
  std::vector<std::size_t> peaks;
  const std::size_t n = x.size();
  std::size_t i = 1;
  while (i + 1 < n) {
    if (!(x[i] > x[i - 1])) {
      ++i;
      continue;
    }
    std::size_t ahead = i + 1;
    while (ahead < n && x[ahead] == x[i]) ++ahead;
    if (ahead < n && x[ahead] < x[i]) {
      const double h = x[i];
      double left_min = h;
      for (std::size_t j = i; j-- > 0 && x[j] <= h;) left_min = std::min(left_min, x[j]);
      double right_min = h;
      for (std::size_t j = i + 1; j < n && x[j] <= h; ++j) right_min = std::min(right_min, x[j]);
      if (h - std::max(left_min, right_min) >= min_prominence) peaks.push_back(i);
    }
    i = ahead;
  }
  return peaks;
}

SurprisalDynamics surprisal_dynamics(const SurprisalSeries& series, int window,
                                     double prominence) {
  const auto& x = series.values;
  if (window < 2) throw InvalidArgument("dynamics window must be >= 2");
  if (x.size() < static_cast<std::size_t>(window))
    throw InvalidArgument("series shorter than dynamics window");

  SurprisalDynamics d;
  d.peaks = find_peaks(x, prominence);
  d.peak_frequency = static_cast<double>(d.peaks.size()) / static_cast<double>(x.size());
  if (!d.peaks.empty()) {
    double sum = 0.0;
    for (auto p : d.peaks) sum += x[p];
    d.peak_mean_height = sum / static_cast<double>(d.peaks.size());
  }
  if (d.peaks.size() >= 2) {
    std::vector<double> intervals;
    for (std::size_t k = 1; k < d.peaks.size(); ++k)
      intervals.push_back(static_cast<double>(d.peaks[k] - d.peaks[k - 1]));
    d.peak_interval_std = std::sqrt(population_variance(intervals));
  }

  const auto w = static_cast<std::size_t>(window);
  std::vector<double> averaged;
  averaged.reserve(x.size() - w + 1);
  double run = std::accumulate(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(w), 0.0);
  averaged.push_back(run / static_cast<double>(w));
  for (std::size_t j = w; j < x.size(); ++j) {
    run += x[j] - x[j - w];
    averaged.push_back(run / static_cast<double>(w));
  }
  if (averaged.size() >= 2) {
    std::vector<double> grad;
    for (std::size_t j = 1; j < averaged.size(); ++j) grad.push_back(averaged[j] - averaged[j - 1]);
    d.gradient_window_mean = mean(grad);
    d.gradient_window_var = population_variance(grad);
  }
  return d;
}

FeatureVector features_from_signals(const SurprisalSeries* series,
                                    std::span<const EmbeddingVector> sentence_embeddings,
                                    const FeatureConfig& config) {
  FeatureVector f;
  if (series && !series->values.empty()) {
    const auto& s = series->values;
    const std::size_t n = s.size();
    const auto& cc = config.curiosity;
    f[Feature::curiosity_index] = curiosity_index(*series, cc);
    f[Feature::surprisal_mean] = mean(s);
    f[Feature::surprisal_std] = std::sqrt(population_variance(s));
    f[Feature::surprisal_max] = *std::max_element(s.begin(), s.end());
    const auto in_band = std::count_if(s.begin(), s.end(), [&](double v) {
      return std::abs(v - cc.optimal_surprisal) <= cc.spread;
    });
    f[Feature::interest_band_fraction] = static_cast<double>(in_band) / static_cast<double>(n);
    const std::size_t half = n / 2;
    if (half > 0) f[Feature::surprisal_first_half_mean] = mean(std::span(s).first(half));
    f[Feature::surprisal_second_half_mean] = mean(std::span(s).subspan(half));

    const int window = std::min<int>(config.dynamics.window, static_cast<int>(n));
    if (window >= 2) {
      const auto d = surprisal_dynamics(*series, window, config.dynamics.prominence);
      f[Feature::peak_frequency] = d.peak_frequency;
      f[Feature::peak_mean_height] = d.peak_mean_height;
      f[Feature::peak_interval_std] = d.peak_interval_std;
      f[Feature::gradient_window_mean] = d.gradient_window_mean;
      f[Feature::gradient_window_var] = d.gradient_window_var;
    }
  }
  if (sentence_embeddings.size() >= 2) {
    try {
      const auto c = coherence_stats(sentence_embeddings);
      f[Feature::coherence_score] = c.mean;
      f[Feature::coherence_std] = c.stddev;
    } catch (const InvalidArgument&) {
      // zero-norm or ragged embeddings: leave coherence slots empty
    }
  }
  return f;
}

std::string story_text(std::span<const std::string> bullets) {
  std::string text;
  for (const auto& b : bullets) {
    if (!text.empty()) text += '\n';
    text += b;
  }
  return text;
}

FeatureVector extract_features(std::span<const std::string> bullets, double completion,
                               const LanguageService& scorer, const LanguageService& embedder,
                               const FeatureConfig& config) {
  std::optional<SurprisalSeries> series;
  const std::string text = story_text(bullets);
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    try {
      const auto lps = scorer.score_tokens(text);
      if (!lps.empty()) series = surprisal_series(lps);
    } catch (const Error&) {
    }
  }

  std::vector<std::string> sentences;
  for (const auto& b : bullets)
    if (b.find_first_not_of(" \t\r\n") != std::string::npos) sentences.push_back(b);
  std::vector<EmbeddingVector> embeddings;
  if (sentences.size() >= 2) {
    try {
      embeddings = embedder.embed(sentences);
    } catch (const Error&) {
      embeddings.clear();
    }
  }

  FeatureVector f = features_from_signals(series ? &*series : nullptr, embeddings, config);
  f.completion = completion;
  return f;
}

}  // namespace cosmos
