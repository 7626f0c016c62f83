#pragma once

/**
 * Story features for the step-level value model.
 *
 * Surprisal S(i) = -log2 P(token_i | preceding tokens) is mapped through an
 * inverted-U interest curve I(S) = exp(-(S - S0)^2 / (2 sigma^2)); the mean of
 * I over all tokens is the curiosity index. Coherence is the mean pairwise
 * cosine similarity of sentence embeddings. Together with surprisal-dynamics
 * statistics these form a 14-slot FeatureVector. A slot that could not be
 * computed is empty (std::nullopt) and is imputed by the model pipeline.
 */

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosmos/backend.hpp"

namespace cosmos {

struct CuriosityConfig {
  double optimal_surprisal = 4.0;  // S0, bits
  double spread = 0.6;             // sigma, bits

  void validate() const;
};

struct DynamicsConfig {
  int window = 5;           // moving-average width for surprisal gradients
  double prominence = 1.0;  // minimum peak prominence, bits
};

struct FeatureConfig {
  CuriosityConfig curiosity;
  DynamicsConfig dynamics;
};

struct SurprisalSeries {
  std::vector<double> values;  // bits per token, all >= 0
  std::size_t token_count() const { return values.size(); }
};

enum class Feature : std::size_t {
  curiosity_index,
  coherence_score,
  peak_frequency,
  peak_mean_height,
  peak_interval_std,
  gradient_window_mean,
  gradient_window_var,
  surprisal_mean,
  surprisal_std,
  surprisal_max,
  interest_band_fraction,
  coherence_std,
  surprisal_first_half_mean,
  surprisal_second_half_mean,
};

inline constexpr std::size_t kFeatureCount = 14;

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "curiosity_index",        "coherence_score",          "peak_frequency",
    "peak_mean_height",       "peak_interval_std",        "gradient_window_mean",
    "gradient_window_var",    "surprisal_mean",           "surprisal_std",
    "surprisal_max",          "interest_band_fraction",   "coherence_std",
    "surprisal_first_half_mean", "surprisal_second_half_mean"};

struct FeatureVector {
  std::array<std::optional<double>, kFeatureCount> values{};
  double completion = 0.0;  // side metadata, not a model input

  std::optional<double>& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }
  const std::optional<double>& operator[](Feature f) const {
    return values[static_cast<std::size_t>(f)];
  }
  std::size_t missing_count() const;
};

struct SurprisalDynamics {
  double peak_frequency = 0.0;               // peaks per token
  std::optional<double> peak_mean_height;    // needs >= 1 peak
  std::optional<double> peak_interval_std;   // needs >= 2 peaks
  std::optional<double> gradient_window_mean;
  std::optional<double> gradient_window_var;
  std::vector<std::size_t> peaks;            // token positions
};

struct CoherenceStats {
  double mean = 0.0;
  double stddev = 0.0;  // population std over pairs
};

/// Natural-log probabilities to bits.
SurprisalSeries surprisal_series(std::span<const TokenLogprob> logprobs);

double interest(double surprisal_bits, const CuriosityConfig& config);

double curiosity_index(const SurprisalSeries& series, const CuriosityConfig& config);

/// Mean cosine similarity over all unordered pairs. Needs >= 2 non-zero vectors.
double coherence_score(std::span<const EmbeddingVector> embeddings);
CoherenceStats coherence_stats(std::span<const EmbeddingVector> embeddings);

/// Interior local maxima (plateaus count once, at their first index) whose
/// topographic prominence is at least `min_prominence`.
std::vector<std::size_t> find_peaks(std::span<const double> series, double min_prominence);

SurprisalDynamics surprisal_dynamics(const SurprisalSeries& series, int window,
                                     double prominence);

/// Builds the feature vector from already computed signals. Either input may be
/// absent (backend failure, single sentence); the affected slots stay empty.
FeatureVector features_from_signals(const SurprisalSeries* series,
                                    std::span<const EmbeddingVector> sentence_embeddings,
                                    const FeatureConfig& config);

/// Text scored for surprisal: the bullets joined with newlines.
std::string story_text(std::span<const std::string> bullets);

/**
 * Scores the story with `scorer`, embeds each bullet with `embedder`, and
 * assembles the features. Backend failures leave the dependent slots empty
 * instead of throwing.
 */
FeatureVector extract_features(std::span<const std::string> bullets, double completion,
                               const LanguageService& scorer, const LanguageService& embedder,
                               const FeatureConfig& config);

}  // namespace cosmos
