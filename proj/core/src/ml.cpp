#include "cosmos/ml.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>

#include "cosmos/error.hpp"

namespace cosmos::ml {

// ---------------------------------------------------------------------------
// Preprocessing

void MedianImputer::fit(const Eigen::MatrixXd& x) {
  medians_.resize(x.cols());
  std::vector<double> col;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    col.clear();
    for (Eigen::Index i = 0; i < x.rows(); ++i)
      if (!std::isnan(x(i, j))) col.push_back(x(i, j));
    if (col.empty()) {
      medians_[j] = 0.0;
      continue;
    }
    std::sort(col.begin(), col.end());
    const std::size_t m = col.size() / 2;
    medians_[j] = col.size() % 2 ? col[m] : 0.5 * (col[m - 1] + col[m]);
  }
}

Eigen::MatrixXd MedianImputer::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != medians_.size()) throw NotFitted("imputer not fitted for this width");
  Eigen::MatrixXd out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j)
      if (std::isnan(out(i, j))) out(i, j) = medians_[j];
  return out;
}

void StandardScaler::fit(const Eigen::MatrixXd& x) {
  if (x.rows() == 0) throw InvalidArgument("cannot fit scaler on zero rows");
  means_ = x.colwise().mean();
  scales_.resize(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const double var = (x.col(j).array() - means_[j]).square().mean();
    scales_[j] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}

Eigen::MatrixXd StandardScaler::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != means_.size()) throw NotFitted("scaler not fitted for this width");
  return (x.rowwise() - means_.transpose()).array().rowwise() / scales_.transpose().array();
}

void StandardScaler::set(Eigen::VectorXd means, Eigen::VectorXd scales) {
  means_ = std::move(means);
  scales_ = std::move(scales);
}

void Pca::fit(const Eigen::MatrixXd& x, int n_components) {
  if (x.rows() < 2) throw InvalidArgument("PCA needs at least two rows");
  if (n_components < 1) throw InvalidArgument("PCA needs at least one component");
  mean_ = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean_.transpose();
  const Eigen::MatrixXd cov =
      (centered.transpose() * centered) / static_cast<double>(x.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("PCA eigen-decomposition failed");

  // Eigen returns ascending eigenvalues.
  const Eigen::Index p = x.cols();
  const Eigen::Index k = std::min<Eigen::Index>(n_components, p);
  components_.resize(p, k);
  explained_variance_.resize(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = eig.eigenvectors().col(p - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    components_.col(c) = v;
    explained_variance_[c] = std::max(0.0, eig.eigenvalues()[p - 1 - c]);
  }
  total_variance_ = std::max(0.0, eig.eigenvalues().sum());
}

Eigen::MatrixXd Pca::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean_.size()) throw NotFitted("PCA not fitted for this width");
  return (x.rowwise() - mean_.transpose()) * components_;
}

Eigen::VectorXd Pca::explained_variance_ratio() const {
  if (total_variance_ <= 0.0) return Eigen::VectorXd::Zero(explained_variance_.size());
  return explained_variance_ / total_variance_;
}

void Pca::set(Eigen::VectorXd mean, Eigen::MatrixXd components, Eigen::VectorXd variance,
              double total_variance) {
  mean_ = std::move(mean);
  components_ = std::move(components);
  explained_variance_ = std::move(variance);
  total_variance_ = total_variance;
}

// ---------------------------------------------------------------------------
// SVM

std::string to_string(KernelType kernel) { return kernel == KernelType::rbf ? "rbf" : "linear"; }

KernelType kernel_from_string(const std::string& text) {
  if (text == "rbf") return KernelType::rbf;
  if (text == "linear") return KernelType::linear;
  throw ParseError("unknown kernel '" + text + "'");
}

double SvmClassifier::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
  if (params_.kernel == KernelType::linear) return a.dot(b);
  return std::exp(-params_.gamma * (a - b).squaredNorm());
}

namespace {

constexpr double kTau = 1e-12;

// Full Gram matrix for moderate n, on-the-fly rows above that.
class KernelRows {
 public:
  KernelRows(const Eigen::MatrixXd& x, const SvmParams& p) : x_(x), p_(p) {
    const Eigen::Index n = x.rows();
    diag_.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) diag_[i] = eval(i, i);
    if (n <= 4000) {
      full_.resize(n, n);
      if (p.kernel == KernelType::linear) {
        full_ = x * x.transpose();
      } else {
        const Eigen::VectorXd sq = x.rowwise().squaredNorm();
        full_ = ((-2.0 * (x * x.transpose())).colwise() + sq).rowwise() + sq.transpose();
        full_ = (-p.gamma * full_.array().max(0.0)).exp().matrix();
      }
    }
    row_.resize(n);
  }

  const double* row(Eigen::Index i) {
    if (full_.size()) return full_.data() + i * full_.rows();  // symmetric: column == row
    for (Eigen::Index j = 0; j < x_.rows(); ++j) row_[j] = eval(i, j);
    return row_.data();
  }
  double diag(Eigen::Index i) const { return diag_[i]; }

 private:
  double eval(Eigen::Index i, Eigen::Index j) const {
    if (p_.kernel == KernelType::linear) return x_.row(i).dot(x_.row(j));
    return std::exp(-p_.gamma * (x_.row(i) - x_.row(j)).squaredNorm());
  }

  const Eigen::MatrixXd& x_;
  const SvmParams& p_;
  Eigen::VectorXd diag_;
  Eigen::MatrixXd full_;
  Eigen::VectorXd row_;
};

}  // namespace

void SvmClassifier::fit(const Eigen::MatrixXd& x, std::span<const int> labels,
                        const SvmParams& params) {
  const Eigen::Index n = x.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw InvalidArgument("label count mismatch");
  if (!(params.c > 0.0)) throw InvalidArgument("SVM C must be positive");
  if (params.kernel == KernelType::rbf && !(params.gamma > 0.0))
    throw InvalidArgument("RBF gamma must be positive");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y != 1 && y != -1) throw InvalidArgument("SVM labels must be +1/-1");
    (y > 0 ? has_pos : has_neg) = true;
  }
  if (!has_pos || !has_neg) throw InvalidArgument("SVM needs both classes");
  params_ = params;

  KernelRows k(x, params_);
  const double c = params_.c;
  std::vector<double> y(labels.begin(), labels.end());
  std::vector<double> alpha(n, 0.0), grad(n, -1.0);
  auto upper = [&](Eigen::Index t) { return alpha[t] >= c; };
  auto lower = [&](Eigen::Index t) { return alpha[t] <= 0.0; };

  iterations_ = 0;
  while (iterations_ < params_.max_iter) {
    // Working-set selection, second-order variant.
    double gmax = -std::numeric_limits<double>::infinity();
    Eigen::Index i = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      if (y[t] > 0) {
        if (!upper(t) && -grad[t] >= gmax) gmax = -grad[t], i = t;
      } else {
        if (!lower(t) && grad[t] >= gmax) gmax = grad[t], i = t;
      }
    }
    if (i < 0) break;
    const double* ki = k.row(i);
    double gmax2 = -std::numeric_limits<double>::infinity();
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    for (Eigen::Index t = 0; t < n; ++t) {
      // y_i * Q_it == y_t * K_it
      if (y[t] > 0) {
        if (lower(t)) continue;
        const double diff = gmax + grad[t];
        gmax2 = std::max(gmax2, grad[t]);
        if (diff > 0) {
          double quad = k.diag(i) + k.diag(t) - 2.0 * y[i] * y[i] * y[t] * ki[t];
          const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
          if (obj <= best) best = obj, j = t;
        }
      } else {
        if (upper(t)) continue;
        const double diff = gmax - grad[t];
        gmax2 = std::max(gmax2, -grad[t]);
        if (diff > 0) {
          double quad = k.diag(i) + k.diag(t) + 2.0 * y[i] * y[i] * y[t] * ki[t];
          const double obj = -(diff * diff) / (quad > 0 ? quad : kTau);
          if (obj <= best) best = obj, j = t;
        }
      }
    }
    if (gmax + gmax2 < params_.tolerance || j < 0) break;
    ++iterations_;

    const double* kj = k.row(j);
    // Q rows: Q_it = y_i y_t K_it
    const double qij = y[i] * y[j] * ki[j];
    const double old_i = alpha[i], old_j = alpha[j];
    if (y[i] != y[j]) {
      double quad = k.diag(i) + k.diag(j) + 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
      } else {
        if (alpha[i] < 0) alpha[i] = 0, alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > c) alpha[i] = c, alpha[j] = c - diff;
      } else {
        if (alpha[j] > c) alpha[j] = c, alpha[i] = c + diff;
      }
    } else {
      double quad = k.diag(i) + k.diag(j) - 2.0 * qij;
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > c) {
        if (alpha[i] > c) alpha[i] = c, alpha[j] = sum - c;
      } else {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = sum;
      }
      if (sum > c) {
        if (alpha[j] > c) alpha[j] = c, alpha[i] = sum - c;
      } else {
        if (alpha[i] < 0) alpha[i] = 0, alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i, dj = alpha[j] - old_j;
    ki = k.row(i);  // row buffer may have been reused for j
    for (Eigen::Index t = 0; t < n; ++t) grad[t] += y[i] * y[t] * ki[t] * di;
    kj = k.row(j);
    for (Eigen::Index t = 0; t < n; ++t) grad[t] += y[j] * y[t] * kj[t] * dj;
  }

  // Offset from free vectors, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
  int n_free = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (upper(t)) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (lower(t)) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      ++n_free;
      sum_free += yg;
    }
  }
  rho_ = n_free > 0 ? sum_free / n_free : 0.5 * (ub + lb);

  std::vector<Eigen::Index> sv;
  for (Eigen::Index t = 0; t < n; ++t)
    if (alpha[t] > 0) sv.push_back(t);
  support_vectors_.resize(static_cast<Eigen::Index>(sv.size()), x.cols());
  coefficients_.resize(static_cast<Eigen::Index>(sv.size()));
  for (std::size_t s = 0; s < sv.size(); ++s) {
    support_vectors_.row(static_cast<Eigen::Index>(s)) = x.row(sv[s]);
    coefficients_[static_cast<Eigen::Index>(s)] = alpha[sv[s]] * y[sv[s]];
  }
  weights_ = params_.kernel == KernelType::linear
                 ? Eigen::VectorXd(support_vectors_.transpose() * coefficients_)
                 : Eigen::VectorXd();
}

void SvmClassifier::set(SvmParams params, Eigen::MatrixXd support_vectors,
                        Eigen::VectorXd coefficients, double rho) {
  params_ = params;
  support_vectors_ = std::move(support_vectors);
  coefficients_ = std::move(coefficients);
  rho_ = rho;
  weights_ = params_.kernel == KernelType::linear
                 ? Eigen::VectorXd(support_vectors_.transpose() * coefficients_)
                 : Eigen::VectorXd();
}

double SvmClassifier::decision(const Eigen::VectorXd& x) const {
  if (support_vectors_.rows() == 0) throw NotFitted("SVM is not fitted");
  if (params_.kernel == KernelType::linear) return weights_.dot(x) - rho_;
  double f = 0.0;
  for (Eigen::Index s = 0; s < support_vectors_.rows(); ++s)
    f += coefficients_[s] * kernel(support_vectors_.row(s).transpose(), x);
  return f - rho_;
}

Eigen::VectorXd SvmClassifier::decision(const Eigen::MatrixXd& x) const {
  Eigen::VectorXd out(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) out[i] = decision(Eigen::VectorXd(x.row(i)));
  return out;
}

// ---------------------------------------------------------------------------
// Calibration

void SigmoidCalibration::fit(std::span<const double> dec, std::span<const int> labels) {
  if (dec.size() != labels.size() || dec.empty())
    throw InvalidArgument("calibration needs matching, non-empty inputs");
  double prior1 = 0, prior0 = 0;
  for (int l : labels) (l > 0 ? prior1 : prior0) += 1;
  const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
  std::vector<double> t(dec.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = labels[i] > 0 ? hi : lo;

  auto objective = [&](double aa, double bb) {
    double f = 0.0;
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const double z = dec[i] * aa + bb;
      f += z >= 0 ? t[i] * z + std::log1p(std::exp(-z)) : (t[i] - 1) * z + std::log1p(std::exp(z));
    }
    return f;
  };

  a = 0.0;
  b = std::log((prior0 + 1.0) / (prior1 + 1.0));
  double fval = objective(a, b);
  for (int iter = 0; iter < 100; ++iter) {
    double h11 = 1e-12, h22 = 1e-12, h21 = 0, g1 = 0, g2 = 0;
    for (std::size_t i = 0; i < dec.size(); ++i) {
      const double z = dec[i] * a + b;
      double p, q;
      if (z >= 0) {
        p = std::exp(-z) / (1.0 + std::exp(-z));
        q = 1.0 / (1.0 + std::exp(-z));
      } else {
        p = 1.0 / (1.0 + std::exp(z));
        q = std::exp(z) / (1.0 + std::exp(z));
      }
      const double d2 = p * q;
      h11 += dec[i] * dec[i] * d2;
      h22 += d2;
      h21 += dec[i] * d2;
      const double d1 = t[i] - p;
      g1 += dec[i] * d1;
      g2 += d1;
    }
    if (std::abs(g1) < 1e-5 && std::abs(g2) < 1e-5) break;
    const double det = h11 * h22 - h21 * h21;
    const double da = -(h22 * g1 - h21 * g2) / det;
    const double db = -(-h21 * g1 + h11 * g2) / det;
    const double gd = g1 * da + g2 * db;
    double step = 1.0;
    while (step >= 1e-10) {
      const double na = a + step * da, nb = b + step * db;
      const double nf = objective(na, nb);
      if (nf < fval + 1e-4 * step * gd) {
        a = na, b = nb, fval = nf;
        break;
      }
      step /= 2.0;
    }
    if (step < 1e-10) break;
  }
}

double SigmoidCalibration::operator()(double decision) const {
  const double z = a * decision + b;
  return z >= 0 ? std::exp(-z) / (1.0 + std::exp(-z)) : 1.0 / (1.0 + std::exp(z));
}

// ---------------------------------------------------------------------------
// Splitting and metrics

std::vector<Split> group_stratified_kfold(std::span<const int> labels,
                                          std::span<const std::string> groups, int folds,
                                          int repeats, std::uint64_t seed) {
  if (labels.size() != groups.size()) throw InvalidArgument("labels and groups differ in size");
  if (folds < 2) throw InvalidArgument("need at least two folds");
  if (repeats < 1) throw InvalidArgument("need at least one repeat");

  // Group -> members, majority label (ties count as positive).
  std::map<std::string, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < groups.size(); ++i) members[groups[i]].push_back(i);
  if (members.size() < static_cast<std::size_t>(folds))
    throw InvalidArgument("fewer groups (" + std::to_string(members.size()) + ") than folds (" +
                          std::to_string(folds) + ")");
  std::vector<const std::vector<std::size_t>*> by_class[2];
  for (const auto& [name, idx] : members) {
    int pos = 0;
    for (auto i : idx) pos += labels[i] > 0;
    by_class[2 * pos >= static_cast<int>(idx.size()) ? 1 : 0].push_back(&idx);
  }

  std::mt19937_64 rng(seed);
  std::vector<Split> out;
  for (int r = 0; r < repeats; ++r) {
    std::vector<int> fold_of(labels.size(), -1);
    for (auto& cls : by_class) {
      auto order = cls;
      std::shuffle(order.begin(), order.end(), rng);
      std::vector<std::size_t> load(static_cast<std::size_t>(folds), 0);
      for (const auto* g : order) {
        const auto f = static_cast<std::size_t>(
            std::min_element(load.begin(), load.end()) - load.begin());
        load[f] += g->size();
        for (auto i : *g) fold_of[i] = static_cast<int>(f);
      }
    }
    for (int f = 0; f < folds; ++f) {
      Split s;
      for (std::size_t i = 0; i < labels.size(); ++i) (fold_of[i] == f ? s.test : s.train).push_back(i);
      out.push_back(std::move(s));
    }
  }
  return out;
}

double macro_f1(std::span<const int> labels, std::span<const int> predictions) {
  double total = 0.0;
  for (int cls : {0, 1}) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool t = labels[i] == cls, p = predictions[i] == cls;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    const std::size_t denom = 2 * tp + fp + fn;
    total += denom == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / 2.0;
}

BinaryMetrics binary_metrics(std::span<const int> labels, std::span<const double> probabilities) {
  if (labels.size() != probabilities.size() || labels.empty())
    throw InvalidArgument("metrics need matching, non-empty inputs");
  BinaryMetrics m;
  std::vector<int> pred(labels.size());
  double brier = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    pred[i] = probabilities[i] >= 0.5 ? 1 : 0;
    const bool t = labels[i] == 1;
    m.tp += t && pred[i];
    m.fp += !t && pred[i];
    m.tn += !t && !pred[i];
    m.fn += t && !pred[i];
    const double e = probabilities[i] - (t ? 1.0 : 0.0);
    brier += e * e;
  }
  auto ratio = [](std::size_t a, std::size_t b) {
    return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b);
  };
  m.precision = ratio(m.tp, m.tp + m.fp);
  m.recall = ratio(m.tp, m.tp + m.fn);
  m.fpr = ratio(m.fp, m.fp + m.tn);
  m.accuracy = ratio(m.tp + m.tn, labels.size());
  m.brier = brier / static_cast<double>(labels.size());
  m.f1_macro = macro_f1(labels, pred);
  return m;
}

}  // namespace cosmos::ml
