#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "cosmos/error.hpp"
#include "cosmos/value_model.hpp"
#include "test_support.hpp"

using namespace cosmos;

namespace {

FeatureVector row_features(const Eigen::MatrixXd& x, Eigen::Index r) {
  FeatureVector f;
  for (std::size_t j = 0; j < kFeatureCount; ++j)
    if (!std::isnan(x(r, j))) f.values[j] = x(r, j);
  return f;
}

Hyperparams small_rbf() {
  Hyperparams hp;
  hp.c = 1.0;
  hp.gamma = 0.05;
  hp.pca_components = 6;
  return hp;
}

}  // namespace

TEST_CASE("labels round trip through their names") {
  CHECK(label_from_string(to_string(Label::good)) == Label::good);
  CHECK(label_from_string("bad") == Label::bad);
  CHECK_THROWS_AS(label_from_string("neutral"), ParseError);
}

TEST_CASE("feature matrix marks missing slots with NaN") {
  FeatureVector a, b;
  a[Feature::curiosity_index] = 0.4;
  b[Feature::coherence_score] = 0.9;
  const std::vector<FeatureVector> fv{a, b};
  const auto x = feature_matrix(fv);
  CHECK(x.rows() == 2);
  CHECK(x.cols() == 14);
  CHECK(x(0, 0) == 0.4);
  CHECK(std::isnan(x(0, 1)));
  CHECK(x(1, 1) == 0.9);
}

TEST_CASE("fitted model predicts probabilities and separates the classes") {
  const auto corpus = testing::separable_corpus(40, 3.0, 5);
  const auto model = fit_pipeline(corpus, small_rbf(), 7);
  REQUIRE(model.fitted());
  CHECK(model.metadata().samples == corpus.size());
  CHECK_FALSE(model.metadata().linear_fallback);

  double good = 0, bad = 0;
  for (const auto& s : corpus) {
    const double v = model.predict(*s.features);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    (s.label == Label::good ? good : bad) += v;
  }
  CHECK(good / 100.0 > bad / 100.0 + 0.5);

  // A story sitting deep in the good region is scored with confidence.
  FeatureVector deep;
  for (std::size_t j = 0; j < kFeatureCount; ++j) deep.values[j] = j < 4 ? 3.0 : 0.0;
  CHECK(model.predict(deep) > 0.9);
  CHECK(predict_value(model, deep) == model.predict(deep));

  // All-missing input falls back to the training medians.
  FeatureVector empty;
  const double v = model.predict(empty);
  CHECK(v >= 0.0);
  CHECK(v <= 1.0);
}

TEST_CASE("fitting is deterministic for a fixed seed") {
  const auto corpus = testing::separable_corpus(20, 2.0, 1);
  const auto a = fit_pipeline(corpus, small_rbf(), 3);
  const auto b = fit_pipeline(corpus, small_rbf(), 3);
  CHECK(a.to_json() == b.to_json());
}

TEST_CASE("fit_pipeline rejects unusable corpora") {
  auto corpus = testing::separable_corpus(6, 2.0, 1);
  auto good_only = corpus;
  std::erase_if(good_only, [](const auto& s) { return s.label == Label::bad; });
  CHECK_THROWS_AS(fit_pipeline(good_only, small_rbf(), 1), InvalidArgument);

  auto one_bad_group = corpus;
  std::erase_if(one_bad_group,
                [](const auto& s) { return s.label == Label::bad && s.group != "g1"; });
  CHECK_THROWS_AS(fit_pipeline(one_bad_group, small_rbf(), 1), InvalidArgument);

  auto no_features = corpus;
  no_features[0].features.reset();
  CHECK_THROWS_AS(fit_pipeline(no_features, small_rbf(), 1), InvalidArgument);

  Hyperparams zero = small_rbf();
  zero.pca_components = 0;
  CHECK_THROWS_AS(fit_pipeline(corpus, zero, 1), InvalidArgument);

  const ValueModel unfitted;
  CHECK_THROWS_AS(unfitted.predict(FeatureVector{}), NotFitted);
}

TEST_CASE("tiny corpora switch to a linear kernel") {
  auto corpus = testing::separable_corpus(4, 3.0, 2);
  std::erase_if(corpus, [](const auto& s) { return s.completion == 0.5; });
  REQUIRE(corpus.size() < kLinearFallbackSamples);
  const auto model = fit_pipeline(corpus, small_rbf(), 1);
  CHECK(model.metadata().linear_fallback);
  CHECK(model.classifier().params().kernel == ml::KernelType::linear);
}

TEST_CASE("model json round trip reproduces predictions") {
  const auto corpus = testing::separable_corpus(16, 2.0, 4);
  const auto model = fit_pipeline(corpus, small_rbf(), 2);
  const auto doc = model.to_json();
  const auto back = ValueModel::from_json(doc);
  for (const auto& s : corpus) CHECK(back.predict(*s.features) == model.predict(*s.features));
  CHECK(back.to_json() == doc);
  CHECK_THROWS_AS(ValueModel::from_json("{}"), ParseError);
  CHECK_THROWS_AS(ValueModel::from_json("[1,2"), ParseError);
}

TEST_CASE("cv loss combines fold metrics with population precision spread") {
  std::vector<ml::BinaryMetrics> folds(2);
  folds[0].fpr = 0.1;
  folds[0].brier = 0.2;
  folds[0].precision = 0.8;
  folds[1].fpr = 0.3;
  folds[1].brier = 0.1;
  folds[1].precision = 0.6;
  const double expected = 0.5 * 0.2 + 0.3 * 0.15 + 0.2 * 0.1;
  CHECK(cv_loss(folds, {}) == doctest::Approx(expected));
  CHECK_THROWS_AS(cv_loss({}, {}), InvalidArgument);
  std::vector<ml::BinaryMetrics> ideal(3);
  for (auto& m : ideal) m.precision = 1.0;
  CHECK(cv_loss(ideal, {}) == 0.0);
}

TEST_CASE("cross validation reports consistent fold metrics and picks the minimum loss") {
  const auto corpus = testing::separable_corpus(30, 1.5, 9);
  const auto a = testing::arrays(corpus);
  const std::vector<double> cs{0.5, 4.0};
  const std::vector<double> gammas{0.02, 0.2};
  const std::vector<int> comps{4};
  const auto grid = make_grid(cs, gammas, comps);
  REQUIRE(grid.size() == 4);
  CvConfig cfg;
  cfg.folds = 3;
  cfg.repeats = 2;
  cfg.seed = 17;
  const auto cv = cross_validate(a.x, a.labels, a.groups, grid, cfg);
  REQUIRE(cv.grid.size() == 4);

  for (const auto& point : cv.grid) {
    REQUIRE(point.folds.size() == 6);
    std::vector<ml::BinaryMetrics> metrics;
    for (const auto& f : point.folds) {
      // Brier recomputed from the stored probabilities.
      double brier = 0;
      for (std::size_t i = 0; i < f.test_indices.size(); ++i) {
        const double e = f.probabilities[i] - a.labels[f.test_indices[i]];
        brier += e * e;
      }
      CHECK(f.metrics.brier == doctest::Approx(brier / f.test_indices.size()));
      std::set<std::string> test_groups;
      for (auto i : f.test_indices) test_groups.insert(a.groups[i]);
      CHECK(test_groups.size() * 5 == f.test_indices.size());
      metrics.push_back(f.metrics);
    }
    CHECK(point.loss == doctest::Approx(cv_loss(metrics, cfg.weights)));
  }
  for (std::size_t i = 0; i < cv.grid.size(); ++i) {
    if (i < cv.best_index) CHECK(cv.grid[i].loss > cv.best().loss);
    else CHECK(cv.grid[i].loss >= cv.best().loss);
  }
  // Every grid point sees the same splits.
  for (std::size_t f = 0; f < 6; ++f)
    CHECK(cv.grid[0].folds[f].test_indices == cv.grid[3].folds[f].test_indices);
}

TEST_CASE("training keeps the best grid point and records its scores") {
  const auto corpus = testing::separable_corpus(20, 2.5, 3);
  const auto a = testing::arrays(corpus);
  Hyperparams weak = small_rbf(), good = small_rbf();
  weak.c = 1e-4;
  const std::vector<Hyperparams> grid{weak, good};
  CvConfig cfg;
  cfg.folds = 4;
  cfg.repeats = 1;
  CvResult report;
  const auto model = train_value_model(a.x, a.labels, a.groups, grid, cfg, {}, &report);
  REQUIRE(model.metadata().cv_loss.has_value());
  CHECK(*model.metadata().cv_loss == report.best().loss);
  CHECK(model.metadata().hyperparams.c == report.best().params.c);

  const std::vector<Hyperparams> single{good};
  CHECK(cross_validate(a.x, a.labels, a.groups, single, cfg).best_index == 0);
}

TEST_CASE("separable blobs are fitted almost perfectly") {
  const auto corpus = testing::separable_corpus(40, 4.0, 8);
  const auto model = fit_pipeline(corpus, small_rbf(), 1);
  std::vector<int> y;
  std::vector<double> p;
  for (const auto& s : corpus) {
    y.push_back(s.label == Label::good);
    p.push_back(model.predict(*s.features));
  }
  CHECK(ml::binary_metrics(y, p).f1_macro >= 0.99);
}

TEST_CASE("make grid enumerates the cartesian product in order") {
  const std::vector<double> cs{1, 10};
  const std::vector<double> gs{0.1};
  const std::vector<int> ks{2, 4, 6};
  const auto grid = make_grid(cs, gs, ks, ml::KernelType::linear);
  REQUIRE(grid.size() == 6);
  CHECK(grid[0].c == 1);
  CHECK(grid[0].pca_components == 2);
  CHECK(grid[5].c == 10);
  CHECK(grid[5].pca_components == 6);
  CHECK(grid[3].kernel == ml::KernelType::linear);
}

TEST_CASE("curiosity tuning recovers the planted optimum") {
  const auto corpus = testing::planted_surprisal_corpus(120, 150, 4.0, 7.0, 1.0, 12);
  std::vector<double> optimal;
  for (double s = 1.0; s <= 10.0 + 1e-9; s += 0.5) optimal.push_back(s);
  const std::vector<double> spread{0.6, 1.0, 2.0};
  const auto t = tune_curiosity(corpus, optimal, spread, 5, 2, 3);
  CHECK(t.best_optimal_surprisal >= 3.5);
  CHECK(t.best_optimal_surprisal <= 4.5);
  REQUIRE(t.f1.size() == optimal.size());
  for (const auto& row : t.f1)
    for (double f : row) {
      CHECK(f >= 0.0);
      CHECK(f <= 1.0);
    }
  CHECK_THROWS_AS(tune_curiosity(corpus, {}, spread, 5, 1, 0), InvalidArgument);
  const std::vector<double> one{6.0}, one_spread{0.6};
  CHECK(tune_curiosity(corpus, one, one_spread, 5, 1, 0).best_optimal_surprisal == 6.0);
}

TEST_CASE("decision values order the same way as probabilities") {
  const auto corpus = testing::separable_corpus(20, 2.0, 6);
  const auto model = fit_pipeline(corpus, small_rbf(), 1);
  REQUIRE(model.calibration().a < 0.0);
  const auto x = testing::arrays(corpus).x;
  for (Eigen::Index r = 1; r < x.rows(); ++r) {
    const auto f0 = row_features(x, r - 1), f1 = row_features(x, r);
    if (model.decision(f0) < model.decision(f1)) CHECK(model.predict(f0) <= model.predict(f1));
  }
}
