#include "cosmos/value_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "cosmos/error.hpp"
#include "json.hpp"

namespace cosmos {

using nlohmann::json;

std::string_view to_string(Label label) { return label == Label::good ? "good" : "bad"; }

Label label_from_string(std::string_view text) {
  if (text == "good") return Label::good;
  if (text == "bad") return Label::bad;
  throw ParseError("label must be 'good' or 'bad', got '" + std::string(text) + "'");
}

Eigen::MatrixXd feature_matrix(std::span<const FeatureVector> features) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(features.size()),
                    static_cast<Eigen::Index>(kFeatureCount));
  for (std::size_t i = 0; i < features.size(); ++i)
    for (std::size_t j = 0; j < kFeatureCount; ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          features[i].values[j].value_or(std::numeric_limits<double>::quiet_NaN());
  return x;
}

Eigen::RowVectorXd ValueModel::project(const FeatureVector& features) const {
  if (!fitted_) throw NotFitted("value model is not fitted");
  const Eigen::MatrixXd x = feature_matrix(std::span(&features, 1));
  return pca_.transform(scaler_.transform(imputer_.transform(x)));
}

double ValueModel::decision(const FeatureVector& features) const {
  return svm_.decision(Eigen::VectorXd(project(features).transpose()));
}

double ValueModel::predict(const FeatureVector& features) const {
  return std::clamp(calibration_(decision(features)), 0.0, 1.0);
}

double predict_value(const ValueModel& model, const FeatureVector& features) {
  return model.predict(features);
}

namespace {

struct Preprocessed {
  ml::MedianImputer imputer;
  ml::StandardScaler scaler;
  ml::Pca pca;
  Eigen::MatrixXd projected;
};

Preprocessed preprocess(const Eigen::MatrixXd& x, int components) {
  Preprocessed p;
  p.imputer.fit(x);
  const Eigen::MatrixXd imputed = p.imputer.transform(x);
  p.scaler.fit(imputed);
  const Eigen::MatrixXd scaled = p.scaler.transform(imputed);
  p.pca.fit(scaled, std::min<int>(components, static_cast<int>(x.cols())));
  p.projected = p.pca.transform(scaled);
  return p;
}

Eigen::MatrixXd rows(const Eigen::MatrixXd& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r)
    out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

template <typename T>
std::vector<T> pick(std::span<const T> v, std::span<const std::size_t> idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

ml::SvmParams svm_params(const Hyperparams& hp, std::size_t samples) {
  ml::SvmParams p;
  p.kernel = samples < kLinearFallbackSamples ? ml::KernelType::linear : hp.kernel;
  p.c = hp.c;
  p.gamma = hp.gamma;
  p.max_iter = hp.max_iter;
  return p;
}

std::vector<int> signed_labels(std::span<const int> labels) {
  std::vector<int> y;
  y.reserve(labels.size());
  for (int l : labels) y.push_back(l ? 1 : -1);
  return y;
}

// Decision values of a preprocessing + SVC pipeline fitted on `train`, for `test`.
std::vector<double> out_of_fold(const Eigen::MatrixXd& x, std::span<const int> labels,
                                std::span<const std::size_t> train,
                                std::span<const std::size_t> test, const Hyperparams& hp) {
  const Eigen::MatrixXd xtr = rows(x, train);
  const auto ytr = signed_labels(pick(labels, train));
  const Preprocessed p = preprocess(xtr, hp.pca_components);
  ml::SvmClassifier svm;
  svm.fit(p.projected, ytr, svm_params(hp, train.size()));
  const Eigen::MatrixXd xte =
      p.pca.transform(p.scaler.transform(p.imputer.transform(rows(x, test))));
  const Eigen::VectorXd d = svm.decision(xte);
  return {d.data(), d.data() + d.size()};
}

}  // namespace

ValueModel fit_pipeline(const Eigen::MatrixXd& features, std::span<const int> labels,
                        std::span<const std::string> groups, const Hyperparams& params,
                        std::uint64_t seed, const FeatureConfig& feature_config) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (labels.size() != n || groups.size() != n)
    throw InvalidArgument("features, labels and groups differ in length");
  if (features.cols() != static_cast<Eigen::Index>(kFeatureCount))
    throw InvalidArgument("feature matrix must have 14 columns");
  if (params.pca_components < 1) throw InvalidArgument("pca_components must be >= 1");

  std::set<std::string> groups_by_class[2];
  for (std::size_t i = 0; i < n; ++i) groups_by_class[labels[i] ? 1 : 0].insert(groups[i]);
  if (groups_by_class[0].empty() || groups_by_class[1].empty())
    throw InvalidArgument("corpus must contain both good and bad stories");
  const std::size_t min_groups = std::min(groups_by_class[0].size(), groups_by_class[1].size());
  if (min_groups < 2) throw InvalidArgument("each class needs at least two story groups");

  ValueModel model;
  model.feature_config_ = feature_config;
  model.metadata_.seed = seed;
  model.metadata_.hyperparams = params;
  model.metadata_.samples = n;
  model.metadata_.linear_fallback = n < kLinearFallbackSamples;

  // Out-of-fold decision values for calibration.
  std::vector<double> oof(n, 0.0);
  bool out_of_fold_ok = true;
  try {
    const int k = static_cast<int>(std::min<std::size_t>(3, min_groups));
    for (const auto& split : ml::group_stratified_kfold(labels, groups, k, 1, seed)) {
      const auto d = out_of_fold(features, labels, split.train, split.test, params);
      for (std::size_t t = 0; t < split.test.size(); ++t) oof[split.test[t]] = d[t];
    }
  } catch (const InvalidArgument&) {
    out_of_fold_ok = false;  // some inner fold lost a class
  }

  Preprocessed p = preprocess(features, params.pca_components);
  model.imputer_ = std::move(p.imputer);
  model.scaler_ = std::move(p.scaler);
  model.pca_ = std::move(p.pca);
  const auto y = signed_labels(labels);
  model.svm_.fit(p.projected, y, svm_params(params, n));

  if (!out_of_fold_ok) {
    const Eigen::VectorXd d = model.svm_.decision(p.projected);
    oof.assign(d.data(), d.data() + d.size());
    model.metadata_.in_sample_calibration = true;
  }
  model.calibration_.fit(oof, y);
  model.fitted_ = true;
  return model;
}

ValueModel fit_pipeline(std::span<const LabeledStory> corpus, const Hyperparams& params,
                        std::uint64_t seed, const FeatureConfig& feature_config) {
  std::vector<FeatureVector> fv;
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (const auto& s : corpus) {
    if (!s.features) throw InvalidArgument("story in group '" + s.group + "' has no features");
    fv.push_back(*s.features);
    labels.push_back(s.label == Label::good ? 1 : 0);
    groups.push_back(s.group);
  }
  return fit_pipeline(feature_matrix(fv), labels, groups, params, seed, feature_config);
}

double cv_loss(std::span<const ml::BinaryMetrics> folds, const LossWeights& w) {
  if (folds.empty()) throw InvalidArgument("no folds");
  double fpr = 0, brier = 0, prec = 0;
  for (const auto& f : folds) {
    fpr += f.fpr;
    brier += f.brier;
    prec += f.precision;
  }
  const double k = static_cast<double>(folds.size());
  fpr /= k, brier /= k, prec /= k;
  double var = 0;
  for (const auto& f : folds) var += (f.precision - prec) * (f.precision - prec);
  return w.fpr * fpr + w.brier * brier + w.precision_std * std::sqrt(var / k);
}

CvResult cross_validate(const Eigen::MatrixXd& features, std::span<const int> labels,
                        std::span<const std::string> groups, std::span<const Hyperparams> grid,
                        const CvConfig& config, const FeatureConfig& feature_config) {
  if (grid.empty()) throw InvalidArgument("hyperparameter grid is empty");
  const auto splits =
      ml::group_stratified_kfold(labels, groups, config.folds, config.repeats, config.seed);

  CvResult result;
  for (const auto& hp : grid) {
    GridPointResult point;
    point.params = hp;
    std::vector<ml::BinaryMetrics> metrics;
    for (std::size_t s = 0; s < splits.size(); ++s) {
      const auto& split = splits[s];
      const Eigen::MatrixXd xtr = rows(features, split.train);
      const auto ytr = pick(labels, split.train);
      const auto gtr = pick(groups, split.train);
      const ValueModel model =
          fit_pipeline(xtr, ytr, gtr, hp, config.seed + s, feature_config);

      FoldResult fold;
      fold.repeat = static_cast<int>(s) / config.folds;
      fold.fold = static_cast<int>(s) % config.folds;
      fold.test_indices = split.test;
      const Eigen::MatrixXd xte = rows(features, split.test);
      for (Eigen::Index r = 0; r < xte.rows(); ++r) {
        FeatureVector fv;
        for (std::size_t j = 0; j < kFeatureCount; ++j) {
          const double v = xte(r, static_cast<Eigen::Index>(j));
          if (!std::isnan(v)) fv.values[j] = v;
        }
        fold.probabilities.push_back(model.predict(fv));
      }
      fold.metrics = ml::binary_metrics(pick(labels, split.test), fold.probabilities);
      metrics.push_back(fold.metrics);
      point.folds.push_back(std::move(fold));
    }
    point.loss = cv_loss(metrics, config.weights);
    const double k = static_cast<double>(metrics.size());
    double prec = 0;
    for (const auto& m : metrics) {
      point.mean_fpr += m.fpr / k;
      point.mean_brier += m.brier / k;
      point.mean_f1_macro += m.f1_macro / k;
      prec += m.precision / k;
    }
    for (const auto& m : metrics) point.precision_std += (m.precision - prec) * (m.precision - prec);
    point.precision_std = std::sqrt(point.precision_std / k);
    result.grid.push_back(std::move(point));
  }
  for (std::size_t i = 1; i < result.grid.size(); ++i)
    if (result.grid[i].loss < result.grid[result.best_index].loss) result.best_index = i;
  return result;
}

ValueModel train_value_model(const Eigen::MatrixXd& features, std::span<const int> labels,
                             std::span<const std::string> groups, std::span<const Hyperparams> grid,
                             const CvConfig& config, const FeatureConfig& feature_config,
                             CvResult* report) {
  auto cv = cross_validate(features, labels, groups, grid, config, feature_config);
  const auto& best = cv.best();
  ValueModel model = fit_pipeline(features, labels, groups, best.params, config.seed, feature_config);
  model.metadata_.cv_loss = best.loss;
  model.metadata_.cv_f1_macro = best.mean_f1_macro;
  model.metadata_.cv_brier = best.mean_brier;
  if (report) *report = std::move(cv);
  return model;
}

std::vector<Hyperparams> make_grid(std::span<const double> c_values,
                                   std::span<const double> gamma_values,
                                   std::span<const int> pca_components, ml::KernelType kernel) {
  std::vector<Hyperparams> grid;
  for (double c : c_values)
    for (double g : gamma_values)
      for (int k : pca_components) {
        Hyperparams hp;
        hp.kernel = kernel;
        hp.c = c;
        hp.gamma = g;
        hp.pca_components = k;
        grid.push_back(hp);
      }
  return grid;
}

// ---------------------------------------------------------------------------

namespace {

struct ThresholdRule {
  double threshold = 0.0;
};

ThresholdRule fit_threshold(std::span<const double> score, std::span<const int> labels) {
  std::vector<double> cand(score.begin(), score.end());
  std::sort(cand.begin(), cand.end());
  cand.erase(std::unique(cand.begin(), cand.end()), cand.end());
  std::vector<double> thresholds;
  thresholds.push_back(cand.front());
  for (std::size_t i = 1; i < cand.size(); ++i) thresholds.push_back(0.5 * (cand[i - 1] + cand[i]));
  thresholds.push_back(std::nextafter(cand.back(), std::numeric_limits<double>::infinity()));

  ThresholdRule best{thresholds.front()};
  double best_f1 = -1.0;
  std::vector<int> pred(score.size());
  for (double t : thresholds) {
    for (std::size_t i = 0; i < score.size(); ++i) pred[i] = score[i] >= t ? 1 : 0;
    const double f1 = ml::macro_f1(labels, pred);
    if (f1 > best_f1) best_f1 = f1, best.threshold = t;
  }
  return best;
}

}  // namespace

CuriosityTuning tune_curiosity(std::span<const CuriositySample> corpus,
                               std::span<const double> optimal_grid,
                               std::span<const double> spread_grid, int folds, int repeats,
                               std::uint64_t seed) {
  if (optimal_grid.empty() || spread_grid.empty()) throw InvalidArgument("tuning grid is empty");
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (const auto& s : corpus) {
    if (s.series.values.empty()) throw InvalidArgument("empty surprisal series in corpus");
    labels.push_back(s.label ? 1 : 0);
    groups.push_back(s.group);
  }
  if (std::count(labels.begin(), labels.end(), 1) == 0 ||
      std::count(labels.begin(), labels.end(), 0) == 0)
    throw InvalidArgument("tuning corpus must contain both classes");
  const auto splits = ml::group_stratified_kfold(labels, groups, folds, repeats, seed);

  CuriosityTuning out;
  out.optimal_grid.assign(optimal_grid.begin(), optimal_grid.end());
  out.spread_grid.assign(spread_grid.begin(), spread_grid.end());
  out.f1.assign(optimal_grid.size(), std::vector<double>(spread_grid.size(), 0.0));
  out.class_gap = out.f1;

  double best_f1 = -1, best_gap = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < optimal_grid.size(); ++i) {
    for (std::size_t j = 0; j < spread_grid.size(); ++j) {
      CuriosityConfig cc{optimal_grid[i], spread_grid[j]};
      cc.validate();
      std::vector<double> ci;
      ci.reserve(corpus.size());
      double good_sum = 0, bad_sum = 0;
      std::size_t good_n = 0, bad_n = 0;
      for (std::size_t s = 0; s < corpus.size(); ++s) {
        ci.push_back(curiosity_index(corpus[s].series, cc));
        if (labels[s]) good_sum += ci.back(), ++good_n;
        else bad_sum += ci.back(), ++bad_n;
      }
      double f1_sum = 0;
      for (const auto& split : splits) {
        const auto rule = fit_threshold(pick<double>(ci, split.train),
                                        pick<int>(labels, split.train));
        std::vector<int> pred;
        for (auto t : split.test) pred.push_back(ci[t] >= rule.threshold ? 1 : 0);
        f1_sum += ml::macro_f1(pick<int>(labels, split.test), pred);
      }
      const double f1 = f1_sum / static_cast<double>(splits.size());
      const double gap = good_sum / static_cast<double>(good_n) - bad_sum / static_cast<double>(bad_n);
      out.f1[i][j] = f1;
      out.class_gap[i][j] = gap;
      if (f1 > best_f1 || (f1 == best_f1 && gap > best_gap)) {
        best_f1 = f1;
        best_gap = gap;
        out.best_optimal_surprisal = optimal_grid[i];
        out.best_spread = spread_grid[j];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

constexpr int kModelSchemaVersion = 1;

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd to_vec(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) rows.push_back(vec(m.row(r).transpose()));
  return rows;
}

Eigen::MatrixXd to_mat(const json& j, Eigen::Index cols) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(j.size()), cols);
  for (std::size_t r = 0; r < j.size(); ++r) {
    const auto row = to_vec(j[r]);
    if (row.size() != cols) throw ParseError("ragged matrix in model file");
    m.row(static_cast<Eigen::Index>(r)) = row.transpose();
  }
  return m;
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  return j.is_null() ? std::nullopt : std::optional<double>(j.get<double>());
}

json hyper_json(const Hyperparams& hp) {
  return {{"kernel", ml::to_string(hp.kernel)},
          {"C", hp.c},
          {"gamma", hp.gamma},
          {"pca_components", hp.pca_components},
          {"max_iter", hp.max_iter}};
}

Hyperparams hyper_from(const json& j) {
  Hyperparams hp;
  hp.kernel = ml::kernel_from_string(j.at("kernel").get<std::string>());
  hp.c = j.at("C").get<double>();
  hp.gamma = j.at("gamma").get<double>();
  hp.pca_components = j.at("pca_components").get<int>();
  hp.max_iter = j.at("max_iter").get<int>();
  return hp;
}

}  // namespace

std::string ValueModel::to_json() const {
  if (!fitted_) throw NotFitted("cannot serialize an unfitted value model");
  json doc;
  doc["schema_version"] = kModelSchemaVersion;
  doc["feature_names"] = std::vector<std::string>(kFeatureNames.begin(), kFeatureNames.end());
  doc["features"] = {{"optimal_surprisal", feature_config_.curiosity.optimal_surprisal},
                     {"spread", feature_config_.curiosity.spread},
                     {"window", feature_config_.dynamics.window},
                     {"prominence", feature_config_.dynamics.prominence}};
  doc["imputer"] = {{"medians", vec(imputer_.medians())}};
  doc["scaler"] = {{"means", vec(scaler_.means())}, {"scales", vec(scaler_.scales())}};
  const Eigen::VectorXd ratio = pca_.explained_variance_ratio();
  double total = 0.0;
  if (ratio.size() && ratio[0] > 0) total = pca_.explained_variance()[0] / ratio[0];
  doc["pca"] = {{"mean", vec(pca_.mean())},
                {"components", mat(pca_.components().transpose())},
                {"explained_variance", vec(pca_.explained_variance())},
                {"total_variance", total}};
  doc["svc"] = {{"kernel", ml::to_string(svm_.params().kernel)},
                {"C", svm_.params().c},
                {"gamma", svm_.params().gamma},
                {"rho", svm_.rho()},
                {"coefficients", vec(svm_.coefficients())},
                {"support_vectors", mat(svm_.support_vectors())}};
  doc["calibration"] = {{"method", "sigmoid"}, {"a", calibration_.a}, {"b", calibration_.b}};
  doc["metadata"] = {{"seed", metadata_.seed},
                     {"hyperparams", hyper_json(metadata_.hyperparams)},
                     {"samples", metadata_.samples},
                     {"cv_loss", optional_json(metadata_.cv_loss)},
                     {"cv_f1_macro", optional_json(metadata_.cv_f1_macro)},
                     {"cv_brier", optional_json(metadata_.cv_brier)},
                     {"linear_fallback", metadata_.linear_fallback},
                     {"in_sample_calibration", metadata_.in_sample_calibration}};
  return doc.dump(1);
}

ValueModel ValueModel::from_json(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw ParseError(std::string("value model is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kModelSchemaVersion)
      throw ParseError("unsupported value model schema_version");
    const auto names = doc.at("feature_names").get<std::vector<std::string>>();
    if (names.size() != kFeatureCount ||
        !std::equal(names.begin(), names.end(), kFeatureNames.begin()))
      throw ParseError("value model feature names do not match this build");

    ValueModel m;
    const auto& f = doc.at("features");
    m.feature_config_.curiosity = {f.at("optimal_surprisal").get<double>(),
                                   f.at("spread").get<double>()};
    m.feature_config_.dynamics = {f.at("window").get<int>(), f.at("prominence").get<double>()};
    m.imputer_.set_medians(to_vec(doc.at("imputer").at("medians")));
    m.scaler_.set(to_vec(doc.at("scaler").at("means")), to_vec(doc.at("scaler").at("scales")));
    const auto& p = doc.at("pca");
    const Eigen::Index width = static_cast<Eigen::Index>(kFeatureCount);
    Eigen::MatrixXd comps = to_mat(p.at("components"), width).transpose();
    m.pca_.set(to_vec(p.at("mean")), std::move(comps), to_vec(p.at("explained_variance")),
               p.at("total_variance").get<double>());
    const auto& s = doc.at("svc");
    ml::SvmParams sp;
    sp.kernel = ml::kernel_from_string(s.at("kernel").get<std::string>());
    sp.c = s.at("C").get<double>();
    sp.gamma = s.at("gamma").get<double>();
    m.svm_.set(sp, to_mat(s.at("support_vectors"), m.pca_.components().cols()),
               to_vec(s.at("coefficients")), s.at("rho").get<double>());
    m.calibration_.a = doc.at("calibration").at("a").get<double>();
    m.calibration_.b = doc.at("calibration").at("b").get<double>();
    const auto& md = doc.at("metadata");
    m.metadata_.seed = md.at("seed").get<std::uint64_t>();
    m.metadata_.hyperparams = hyper_from(md.at("hyperparams"));
    m.metadata_.samples = md.at("samples").get<std::size_t>();
    m.metadata_.cv_loss = optional_from(md.at("cv_loss"));
    m.metadata_.cv_f1_macro = optional_from(md.at("cv_f1_macro"));
    m.metadata_.cv_brier = optional_from(md.at("cv_brier"));
    m.metadata_.linear_fallback = md.at("linear_fallback").get<bool>();
    m.metadata_.in_sample_calibration = md.at("in_sample_calibration").get<bool>();
    if (m.imputer_.medians().size() != width || m.scaler_.means().size() != width ||
        m.pca_.mean().size() != width)
      throw ParseError("value model preprocessing has the wrong width");
    if (m.svm_.coefficients().size() != m.svm_.support_vectors().rows())
      throw ParseError("support vector and coefficient counts differ");
    m.fitted_ = true;
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed value model: ") + e.what());
  }
}

}  // namespace cosmos
