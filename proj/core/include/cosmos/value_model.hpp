#pragma once

/**
 * Step-level value model V(s) in [0,1].
 *
 * Pipeline: median imputation -> standardization -> PCA -> kernel SVC ->
 * sigmoid calibration fitted on out-of-fold decision values. Hyperparameters
 * are selected with group-aware stratified repeated k-fold cross-validation
 * under a loss that weighs false positive rate, Brier score and the spread of
 * precision across folds.
 */

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosmos/features.hpp"
#include "cosmos/ml.hpp"

namespace cosmos {

enum class Label { bad = 0, good = 1 };

std::string_view to_string(Label label);
Label label_from_string(std::string_view text);

struct LabeledStory {
  std::vector<std::string> bullets;
  Label label = Label::bad;
  std::string group;  // shared by every completion level of one story
  double completion = 1.0;
  std::optional<FeatureVector> features;  // precomputed, skips extraction
};

struct Hyperparams {
  ml::KernelType kernel = ml::KernelType::rbf;
  double c = 1.0;
  double gamma = 0.1;
  int pca_components = 8;
  int max_iter = 100000;
};

struct LossWeights {
  double fpr = 0.5;
  double brier = 0.3;
  double precision_std = 0.2;
};

struct TrainingMetadata {
  std::uint64_t seed = 0;
  Hyperparams hyperparams;
  std::size_t samples = 0;
  std::optional<double> cv_loss;
  std::optional<double> cv_f1_macro;
  std::optional<double> cv_brier;
  bool linear_fallback = false;
  bool in_sample_calibration = false;
};

struct CvConfig;
struct CvResult;

/// Below this many samples the pipeline switches to a linear kernel.
inline constexpr std::size_t kLinearFallbackSamples = 20;

class ValueModel {
 public:
  ValueModel() = default;  // unfitted; predict() throws NotFitted

  bool fitted() const { return fitted_; }

  double predict(const FeatureVector& features) const;
  /// Raw SVC decision value before calibration.
  double decision(const FeatureVector& features) const;

  const FeatureConfig& feature_config() const { return feature_config_; }
  const TrainingMetadata& metadata() const { return metadata_; }
  const ml::Pca& pca() const { return pca_; }
  const ml::SvmClassifier& classifier() const { return svm_; }
  const ml::SigmoidCalibration& calibration() const { return calibration_; }

  std::string to_json() const;
  static ValueModel from_json(std::string_view document);

 private:
  Eigen::RowVectorXd project(const FeatureVector& features) const;

  bool fitted_ = false;
  FeatureConfig feature_config_;
  ml::MedianImputer imputer_;
  ml::StandardScaler scaler_;
  ml::Pca pca_;
  ml::SvmClassifier svm_;
  ml::SigmoidCalibration calibration_;
  TrainingMetadata metadata_;

  friend ValueModel fit_pipeline(const Eigen::MatrixXd&, std::span<const int>,
                                 std::span<const std::string>, const Hyperparams&, std::uint64_t,
                                 const FeatureConfig&);
  friend ValueModel train_value_model(const Eigen::MatrixXd&, std::span<const int>,
                                      std::span<const std::string>, std::span<const Hyperparams>,
                                      const CvConfig&, const FeatureConfig&, CvResult*);
};

/// samples x 14 matrix, NaN for missing slots.
Eigen::MatrixXd feature_matrix(std::span<const FeatureVector> features);

/**
 * Fits the frozen pipeline. `labels` are 1 (good) / 0 (bad). Calibration uses
 * out-of-fold decisions from an inner group k-fold (k = min(3, groups in the
 * smaller class)). Requires both classes with at least two groups each.
 */
ValueModel fit_pipeline(const Eigen::MatrixXd& features, std::span<const int> labels,
                        std::span<const std::string> groups, const Hyperparams& params,
                        std::uint64_t seed, const FeatureConfig& feature_config = {});

ValueModel fit_pipeline(std::span<const LabeledStory> corpus, const Hyperparams& params,
                        std::uint64_t seed, const FeatureConfig& feature_config = {});

double predict_value(const ValueModel& model, const FeatureVector& features);

struct FoldResult {
  int repeat = 0;
  int fold = 0;
  ml::BinaryMetrics metrics;
  std::vector<std::size_t> test_indices;
  std::vector<double> probabilities;  // aligned with test_indices
};

struct GridPointResult {
  Hyperparams params;
  double loss = 0.0;
  double mean_fpr = 0.0;
  double mean_brier = 0.0;
  double precision_std = 0.0;  // population std across folds
  double mean_f1_macro = 0.0;
  std::vector<FoldResult> folds;
};

struct CvConfig {
  int folds = 5;
  int repeats = 3;
  std::uint64_t seed = 0;
  LossWeights weights;
};

struct CvResult {
  std::size_t best_index = 0;
  std::vector<GridPointResult> grid;
  const GridPointResult& best() const { return grid.at(best_index); }
};

/// loss = w1 * mean FPR + w2 * mean Brier + w3 * std(precision over folds).
double cv_loss(std::span<const ml::BinaryMetrics> folds, const LossWeights& weights);

/// Evaluates every grid point on the same splits; ties keep the earliest point.
CvResult cross_validate(const Eigen::MatrixXd& features, std::span<const int> labels,
                        std::span<const std::string> groups, std::span<const Hyperparams> grid,
                        const CvConfig& config, const FeatureConfig& feature_config = {});

/// Cross-validates the grid, refits the best point on the whole corpus with
/// config.seed and stores its CV scores in the model metadata.
ValueModel train_value_model(const Eigen::MatrixXd& features, std::span<const int> labels,
                             std::span<const std::string> groups, std::span<const Hyperparams> grid,
                             const CvConfig& config, const FeatureConfig& feature_config = {},
                             CvResult* report = nullptr);

/// Cartesian product helper for grid search.
std::vector<Hyperparams> make_grid(std::span<const double> c_values,
                                   std::span<const double> gamma_values,
                                   std::span<const int> pca_components,
                                   ml::KernelType kernel = ml::KernelType::rbf);

struct CuriositySample {
  SurprisalSeries series;
  int label = 0;  // 1 good
  std::string group;
};

struct CuriosityTuning {
  double best_optimal_surprisal = 0.0;
  double best_spread = 0.0;
  std::vector<double> optimal_grid;
  std::vector<double> spread_grid;
  /// f1[i][j] for optimal_grid[i], spread_grid[j]: mean held-out macro F1.
  std::vector<std::vector<double>> f1;
  /// Mean curiosity index of good minus bad samples; breaks F1 ties.
  std::vector<std::vector<double>> class_gap;
};

/**
 * For each (S0, sigma) fits a one-feature threshold rule "good iff curiosity
 * index >= t" on the training folds and scores macro F1 on the test folds.
 * Picks the highest mean F1, then the largest class gap, then the earliest
 * grid point.
 */
CuriosityTuning tune_curiosity(std::span<const CuriositySample> corpus,
                               std::span<const double> optimal_grid,
                               std::span<const double> spread_grid, int folds, int repeats,
                               std::uint64_t seed);

}  // namespace cosmos
