#pragma once

/**
 * Learning building blocks behind the value model: median imputation,
 * standardization, PCA, a kernel support vector classifier trained with SMO,
 * sigmoid probability calibration, group-aware stratified k-fold splitting and
 * the binary classification metrics used for model selection.
 *
 * Matrices are samples x features. Missing entries are NaN.
 */

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace cosmos::ml {

class MedianImputer {
 public:
  void fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  const Eigen::VectorXd& medians() const { return medians_; }
  void set_medians(Eigen::VectorXd m) { medians_ = std::move(m); }

 private:
  Eigen::VectorXd medians_;
};

class StandardScaler {
 public:
  void fit(const Eigen::MatrixXd& x);
  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
  const Eigen::VectorXd& means() const { return means_; }
  const Eigen::VectorXd& scales() const { return scales_; }
  void set(Eigen::VectorXd means, Eigen::VectorXd scales);

 private:
  Eigen::VectorXd means_;
  Eigen::VectorXd scales_;  // 1 for zero-variance columns
};

class Pca {
 public:
  /// Keeps min(n_components, features) directions of largest variance.
  void fit(const Eigen::MatrixXd& x, int n_components);
  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;

  /// features x components, orthonormal columns, sign fixed so the largest
  /// |loading| of each column is positive.
  const Eigen::MatrixXd& components() const { return components_; }
  const Eigen::VectorXd& mean() const { return mean_; }
  /// Variance along each kept component, non-increasing.
  const Eigen::VectorXd& explained_variance() const { return explained_variance_; }
  Eigen::VectorXd explained_variance_ratio() const;
  void set(Eigen::VectorXd mean, Eigen::MatrixXd components, Eigen::VectorXd variance,
           double total_variance);

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd components_;
  Eigen::VectorXd explained_variance_;
  double total_variance_ = 0.0;
};

enum class KernelType { linear, rbf };

std::string to_string(KernelType kernel);
KernelType kernel_from_string(const std::string& text);

struct SvmParams {
  KernelType kernel = KernelType::rbf;
  double c = 1.0;
  double gamma = 0.1;
  int max_iter = 100000;
  double tolerance = 1e-3;
};

/**
 * Two-class C-SVC. Solves the dual with SMO using second-order working-set
 * selection. Labels are +1 / -1. decision(x) = sum_i coef_i K(sv_i, x) - rho.
 */
class SvmClassifier {
 public:
  void fit(const Eigen::MatrixXd& x, std::span<const int> labels, const SvmParams& params);
  double decision(const Eigen::VectorXd& x) const;
  Eigen::VectorXd decision(const Eigen::MatrixXd& x) const;

  const SvmParams& params() const { return params_; }
  const Eigen::MatrixXd& support_vectors() const { return support_vectors_; }
  const Eigen::VectorXd& coefficients() const { return coefficients_; }
  double rho() const { return rho_; }
  int iterations() const { return iterations_; }
  /// Primal weights, linear kernel only.
  const Eigen::VectorXd& linear_weights() const { return weights_; }

  void set(SvmParams params, Eigen::MatrixXd support_vectors, Eigen::VectorXd coefficients,
           double rho);

 private:
  double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;

  SvmParams params_;
  Eigen::MatrixXd support_vectors_;
  Eigen::VectorXd coefficients_;  // alpha_i * y_i
  Eigen::VectorXd weights_;
  double rho_ = 0.0;
  int iterations_ = 0;
};

/// P(good | f) = 1 / (1 + exp(a f + b)), fitted by Newton's method with
/// smoothed targets on held-out decision values.
struct SigmoidCalibration {
  double a = -1.0;
  double b = 0.0;

  void fit(std::span<const double> decisions, std::span<const int> labels);
  double operator()(double decision) const;
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  bool operator==(const Split&) const = default;
};

/**
 * Repeated k-fold over groups. Every sample of a group lands in the same fold;
 * groups are dealt per class (the group's majority label) to the fold holding
 * the fewest samples of that class, after a seeded shuffle per repeat.
 * Result is indexed [repeat * k + fold]. Throws if there are fewer groups than folds.
 */
std::vector<Split> group_stratified_kfold(std::span<const int> labels,
                                          std::span<const std::string> groups, int folds,
                                          int repeats, std::uint64_t seed);

struct BinaryMetrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0;  // 0 when nothing is predicted positive
  double recall = 0.0;
  double fpr = 0.0;
  double accuracy = 0.0;
  double f1_macro = 0.0;
  double brier = 0.0;
};

/// Labels are 1 (positive) / 0; predictions are probabilities thresholded at 0.5.
BinaryMetrics binary_metrics(std::span<const int> labels, std::span<const double> probabilities);

/// Macro F1 for hard 0/1 predictions. A class with no true and no predicted
/// samples scores 1.
double macro_f1(std::span<const int> labels, std::span<const int> predictions);

}  // namespace cosmos::ml
