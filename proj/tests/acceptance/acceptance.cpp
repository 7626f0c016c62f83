// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
// The end-to-end check drives the cosmos CLI whose path is given as argv[1].

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cosmos/analytics.hpp"
#include "cosmos/backend.hpp"
#include "cosmos/features.hpp"
#include "cosmos/mcts.hpp"
#include "cosmos/preference.hpp"
#include "cosmos/story_tree.hpp"
#include "cosmos/value_model.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace cosmos;
using Clock = std::chrono::steady_clock;

namespace {

int failures = 0;

void report(const std::string& name, bool ok, const std::string& detail) {
  std::cout << (ok ? "PASS" : "FAIL") << "  " << name << "  " << detail << std::endl;
  if (!ok) ++failures;
}

void info(const std::string& name, const std::string& detail) {
  std::cout << "INFO  " << name << "  " << detail << std::endl;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double x, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << x;
  return s.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

bool replay_matches(const SearchTree& tree) {
  const auto replay = tree.replay_stats();
  for (const auto& n : tree.nodes()) {
    if (!(replay[n.id] == n.stats)) return false;
    const auto& e = n.stats;
    if (e.visits == 0 ? (e.cumulative_value != 0.0 || e.action_value != 0.0)
                      : e.action_value != e.cumulative_value / static_cast<double>(e.visits))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------

struct OracleRuns {
  std::vector<SearchTree> trees;
};

void mcts_oracle(OracleRuns& runs) {
  const auto t0 = Clock::now();
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    testing::OracleEnvironment env(3, 4, seed);
    SearchConfig cfg;
    cfg.iterations = 200;
    cfg.exploration = 1.0;
    cfg.schedule.later = env.branching();
    cfg.seed = seed;
    auto result = run_search({"premise"}, cfg, env.story(), env.agents());
    const auto f = final_values(result.tree);
    const auto [lo, hi] = env.span_of(result.tree.node(f.argmax));
    hits += hi - lo == 1 && lo == env.best_leaf();
    runs.trees.push_back(std::move(result.tree));
  }
  const double secs = seconds_since(t0);
  report("mcts-oracle", hits >= 95 && secs < 10.0,
         std::to_string(hits) + "/100 optimal leaves (need >= 95), " + fmt(secs) + " s (need < 10)");

  int default_hits = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    testing::OracleEnvironment env(3, 4, seed);
    SearchConfig cfg;
    cfg.iterations = 200;
    cfg.seed = seed;
    const auto result = run_search({"premise"}, cfg, env.story(), env.agents());
    const auto [lo, hi] = env.span_of(result.tree.node(final_values(result.tree).argmax));
    default_hits += hi - lo == 1 && lo == env.best_leaf();
  }
  info("mcts-oracle-default-schedule",
       std::to_string(default_hits) + "/100 with the {300, 8, 2} schedule (leaf-only expansion "
       "caps depth >= 3 nodes at 2 of 3 branches)");
}

struct MockAgents {
  std::unique_ptr<LanguageService> base, trained, simulator, scorer, embedder;
  std::optional<LlmPolicy> base_policy, trained_policy;
  std::optional<LlmSimulator> sim;
  std::optional<ValueModelEvaluator> evaluator;
  ValueModel model;
};

std::vector<std::string> varied_bullets(std::mt19937_64& rng, int n) {
  static const char* words[] = {"river",  "stone", "lantern", "whisper", "harbor", "iron",
                                "meadow", "storm", "oath",    "mirror",  "ember",  "crown",
                                "forest", "tide",  "signal",  "raven",   "copper", "garden"};
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) {
    std::string line;
    const int len = 8 + static_cast<int>(rng() % 7);
    for (int w = 0; w < len; ++w) line += std::string(w ? " " : "") + words[rng() % 18];
    line[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(line[0])));
    out.push_back(line + ".");
  }
  return out;
}

std::vector<std::string> repeated_bullets(int n) {
  return std::vector<std::string>(static_cast<std::size_t>(n),
                                  "The hero walks to the town and the hero walks back.");
}

// Labelled JSONL for the value model: good stories vary, bad ones repeat a line.
std::string mock_corpus_jsonl(int groups, int bullets, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::string out;
  for (int g = 0; g < groups; ++g) {
    const bool good = g % 2 == 0;
    for (double level : {0.5, 0.75, 1.0}) {
      const int n = std::max(2, static_cast<int>(bullets * level));
      nlohmann::json j = {{"bullets", good ? varied_bullets(rng, n) : repeated_bullets(n)},
                          {"label", good ? "good" : "bad"},
                          {"group", "g" + std::to_string(g)},
                          {"completion", level}};
      out += j.dump() + "\n";
    }
  }
  return out;
}

void default_config_run(std::vector<SearchTree>& trees) {
  MockAgents m;
  auto svc = [](Role r) { return make_service(BackendConfig::for_role(r, "mock:5")); };
  m.base = svc(Role::policy_base);
  m.trained = svc(Role::policy_trained);
  m.simulator = svc(Role::simulator);
  m.scorer = svc(Role::scorer);
  m.embedder = svc(Role::embedder);

  std::vector<LabeledStory> corpus;
  std::istringstream lines(mock_corpus_jsonl(20, 32, 3));
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    LabeledStory s;
    s.bullets = j["bullets"].get<std::vector<std::string>>();
    s.label = label_from_string(j["label"].get<std::string>());
    s.group = j["group"];
    s.completion = j["completion"];
    s.features = extract_features(s.bullets, s.completion, *m.scorer, *m.embedder, {});
    corpus.push_back(std::move(s));
  }
  m.model = fit_pipeline(corpus, Hyperparams{}, 0);

  const StoryConfig story;  // 32 bullets, 4 per step, depth 8
  const auto templates = PromptTemplates::defaults();
  m.base_policy.emplace(*m.base, templates);
  m.trained_policy.emplace(*m.trained, templates);
  m.sim.emplace(*m.simulator, templates);
  m.evaluator.emplace(m.model, *m.scorer, *m.embedder, story);

  SearchConfig cfg;  // defaults except the iteration budget
  cfg.iterations = 8;
  cfg.seed = 1;
  auto result = run_search({"A lighthouse keeper finds a map.", "Two rival chefs share a kitchen."},
                           cfg, story, {&*m.base_policy, &*m.trained_policy, &*m.sim, &*m.evaluator});

  bool kappa_ok = !result.reports.empty();
  std::string kappas;
  for (const auto& r : result.reports) {
    const int want = r.iteration == 1 ? 300 : r.iteration == 2 ? 8 : 2;
    kappa_ok = kappa_ok && r.kappa == want &&
               r.actions_requested == want * static_cast<int>(r.selected.size()) &&
               r.children_created + r.shortfall == r.actions_requested;
    kappas += (kappas.empty() ? "" : ",") + std::to_string(r.kappa);
  }
  report("expansion-schedule", kappa_ok, "kappa per iteration = {" + kappas + "}");

  const auto& log = result.tree.evaluation_log();
  double min_fraction = 1.0;
  for (const auto& e : log)
    min_fraction = std::min(min_fraction, completion_fraction(result.tree.node(e.node), story));
  report("deferred-evaluation", !log.empty() && min_fraction >= 0.5,
         std::to_string(log.size()) + " evaluations, smallest depth/D = " + fmt(min_fraction));
  trees.push_back(std::move(result.tree));
}

void backprop_replay(const std::vector<SearchTree>& trees) {
  std::size_t bad = 0, edges = 0;
  for (const auto& t : trees) {
    bad += !replay_matches(t);
    edges += t.size();
  }
  report("backprop-replay", bad == 0 && !trees.empty(),
         std::to_string(trees.size()) + " searches, " + std::to_string(edges) +
             " edges, exact (N, W, Q) mismatches in " + std::to_string(bad) + " searches");
}

void curiosity_oracle() {
  const CuriosityConfig cfg{4.0, 0.6};
  const double expected = std::exp(-1.0 / 0.72);
  const double got = interest(5.0, cfg);
  const bool peak = interest(4.0, cfg) == 1.0;
  report("curiosity-oracle", std::abs(got - 0.24935) <= 1e-5 && std::abs(got - expected) < 1e-12 && peak,
         "interest(5) = " + fmt(got, 8) + " (target 0.24935), interest(S0) = " +
             fmt(interest(4.0, cfg), 17));
}

void value_pipeline() {
  const auto corpus = testing::separable_corpus(100, 1.5, 2024);
  const auto a = testing::arrays(corpus);
  const auto splits = ml::group_stratified_kfold(a.labels, a.groups, 5, 1, 17);
  const std::vector<double> cs{0.1, 1.0, 10.0}, gammas{0.01, 0.05, 0.2};
  const std::vector<int> pcas{4, 8};
  const auto grid = make_grid(cs, gammas, pcas);

  bool leak_free = true;
  std::vector<int> y;
  std::vector<double> p;
  for (const auto& s : splits) {
    std::set<std::string> train_groups;
    for (auto i : s.train) train_groups.insert(a.groups[i]);
    for (auto i : s.test) leak_free = leak_free && !train_groups.count(a.groups[i]);

    Eigen::MatrixXd xt(static_cast<Eigen::Index>(s.train.size()), a.x.cols());
    std::vector<int> yt;
    std::vector<std::string> gt;
    for (std::size_t r = 0; r < s.train.size(); ++r) {
      xt.row(static_cast<Eigen::Index>(r)) = a.x.row(static_cast<Eigen::Index>(s.train[r]));
      yt.push_back(a.labels[s.train[r]]);
      gt.push_back(a.groups[s.train[r]]);
    }
    CvConfig cv;
    cv.folds = 5;
    cv.repeats = 1;
    cv.seed = 3;
    const auto model = train_value_model(xt, yt, gt, grid, cv);
    for (auto i : s.test) {
      y.push_back(a.labels[i]);
      p.push_back(model.predict(*corpus[i].features));
    }
  }
  // The CV splits inside cross_validate must be leak-free too.
  for (const auto& s : ml::group_stratified_kfold(a.labels, a.groups, 5, 3, 0)) {
    std::set<std::string> train_groups;
    for (auto i : s.train) train_groups.insert(a.groups[i]);
    for (auto i : s.test) leak_free = leak_free && !train_groups.count(a.groups[i]);
  }
  const auto m = ml::binary_metrics(y, p);
  report("value-pipeline", m.f1_macro >= 0.95 && m.brier <= 0.10 && leak_free && y.size() == 500,
         std::to_string(y.size()) + " held-out stories, macro F1 = " + fmt(m.f1_macro) +
             " (>= 0.95), Brier = " + fmt(m.brier) + " (<= 0.10), group leakage " +
             (leak_free ? "none" : "FOUND"));
}

void curiosity_tuning() {
  const auto t0 = Clock::now();
  const auto corpus = testing::planted_surprisal_corpus(200, 150, 4.0, 7.0, 1.0, 99);
  std::vector<double> optimal;
  for (double s = 1.0; s <= 10.0 + 1e-9; s += 0.25) optimal.push_back(s);
  const std::vector<double> spread{0.3, 0.6, 1.0, 2.0};
  const auto t = tune_curiosity(corpus, optimal, spread, 5, 3, 1);
  const double secs = seconds_since(t0);
  const double s0 = t.best_optimal_surprisal;
  report("curiosity-tuning", s0 >= 3.5 && s0 <= 4.5 && secs < 60.0,
         "S0* = " + fmt(s0) + " (sigma " + fmt(t.best_spread) + "), planted 4.0, " + fmt(secs) + " s");
}

void miner_oracle() {
  int matched = 0;
  std::size_t pairs = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    const auto tree = testing::random_tree(40 + seed % 30, seed, seed % 3 != 0, 1 + static_cast<int>(seed % 3));
    MinerConfig cfg;
    cfg.tradeoff = static_cast<double>(seed % 5) / 4.0;
    cfg.pairs_per_parent = 1 + static_cast<int>(seed % 4);
    cfg.min_gap = seed % 2 ? 0.02 : 0.1;
    const auto got = mine_pairs(tree, cfg, PromptTemplates::defaults(), "t");
    const auto want = testing::brute_force_pairs(tree, cfg);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i)
      same = got[i].parent_id == want[i].parent && got[i].chosen_id == want[i].chosen &&
             got[i].rejected_id == want[i].rejected && std::abs(got[i].score - want[i].score) < 1e-12;
    matched += same;
    pairs += got.size();
  }
  report("preference-miner", matched == 100,
         std::to_string(matched) + "/100 trees identical to brute force (" + std::to_string(pairs) +
             " pairs, order included)");
}

void statistics() {
  const double cles = common_language_effect(0.57);
  const bool cles_ok = std::abs(cles - 0.657) <= 0.005;

  std::mt19937_64 rng(7);
  std::normal_distribution<double> noise(0.0, 0.002), offset(0.0, 0.05);
  std::vector<Trajectory> groups;
  for (int g = 0; g < 6; ++g) {
    Trajectory tr{"g" + std::to_string(g), {}};
    const double b0 = 0.6 + offset(rng);
    for (int k : {1, 2, 5, 10, 20, 50, 100})
      tr.points.push_back({k, b0 + 0.02 * std::log(static_cast<double>(k)) + noise(rng)});
    groups.push_back(tr);
  }
  const auto fit = loglinear_fit(groups);
  const bool slope_ok = std::abs(fit.pooled.slope - 0.02) <= 0.002;

  std::mt19937_64 wrng(11);
  std::uniform_int_distribution<int> pick(-5, 5), size(1, 10);
  int agree = 0;
  const int trials = 500;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> d(static_cast<std::size_t>(size(wrng)));
    for (auto& x : d) x = pick(wrng) * 0.5;
    const auto got = wilcoxon_signed_rank(d);
    const auto want = testing::enumerate_signed_ranks(d);
    agree += got.nonzero == want.nonzero &&
             (want.nonzero == 0 ||
              (std::abs(got.statistic - want.statistic) < 1e-9 && std::abs(got.p_value - want.p_value) < 1e-9));
  }
  report("statistics", cles_ok && slope_ok && agree == trials,
         "CLES(0.57) = " + fmt(cles, 6) + ", slope = " + fmt(fit.pooled.slope, 5) +
             " (planted 0.02), Wilcoxon exhaustive agreement " + std::to_string(agree) + "/" +
             std::to_string(trials));
}

// ---------------------------------------------------------------------------

int run(const std::string& command) {
  const int rc = std::system((command + " >/dev/null 2>&1").c_str());
  return rc;
}

void end_to_end(const std::string& cli) {
  const fs::path dir = fs::temp_directory_path() / "cosmos_acceptance_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  {
    std::ofstream(dir / "corpus.jsonl") << mock_corpus_jsonl(30, 10, 8);
    std::ofstream(dir / "prompts.txt") << "A lighthouse keeper finds a map.\n"
                                          "Two rival chefs share a kitchen.\n";
    std::ofstream(dir / "config.json")
        << R"({"story": {"total_bullets": 10, "bullets_per_step": 2, "max_depth": 5},
              "search": {"iterations": 12},
              "value_model": "model.json"})";
  }
  const std::string q = "'" + cli + "'";
  const std::string d = "'" + dir.string() + "'";
  const auto t0 = Clock::now();
  int rc = run(q + " train-value --corpus " + d + "/corpus.jsonl --out " + d +
               "/model.json --folds 3 --repeats 1");
  for (const char* name : {"run1", "run2"}) {
    if (rc != 0) break;
    rc = run(q + " search --quiet --config " + d + "/config.json --prompts " + d +
             "/prompts.txt --seed 42 --out " + d + "/" + name);
    if (rc == 0)
      rc = run(q + " mine-prefs --tree " + d + "/" + name + "/tree.json --min-gap 0.005 --out " + d + "/" + name +
               "/prefs.jsonl");
    if (rc == 0)
      rc = run(q + " analyze fit --reports " + d + "/" + name + "/reports.jsonl --out " + d + "/" +
               name + "/fit.json");
    if (rc == 0)
      rc = run(q + " analyze vq --tree " + d + "/" + name + "/tree.json --out " + d + "/" + name +
               "/vq.json");
  }
  const double secs = seconds_since(t0);
  if (rc != 0) {
    report("end-to-end", false, "pipeline step exited with status " + std::to_string(rc));
    return;
  }

  bool same = true;
  std::string differing;
  for (const char* f : {"tree.json", "best.txt", "worst.txt", "prefs.jsonl", "fit.json", "vq.json",
                        "prefs.jsonl.manifest.json"})
    if (read_file(dir / "run1" / f) != read_file(dir / "run2" / f)) {
      same = false;
      differing += std::string(" ") + f;
    }

  bool monotone = true;
  int points = 0;
  std::optional<double> prev;
  std::istringstream reports(read_file(dir / "run1" / "reports.jsonl"));
  for (std::string line; std::getline(reports, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j["v_max_final"].is_null()) {
      monotone = monotone && !prev;
      continue;
    }
    const double v = j["v_max_final"];
    monotone = monotone && (!prev || v >= *prev);
    prev = v;
    ++points;
  }
  report("end-to-end", secs < 60.0 && same && monotone && points >= 3,
         "search -> mine-prefs -> analyze twice in " + fmt(secs) + " s, outputs " +
             (same ? "identical" : "DIFFER:" + differing) + ", v_max_final " +
             (monotone ? "non-decreasing" : "DECREASES") + " over " + std::to_string(points) +
             " iterations");
  fs::remove_all(dir);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: cosmos_acceptance <path to cosmos CLI>\n";
    return 2;
  }
  try {
    std::vector<SearchTree> trees;
    {
      OracleRuns runs;
      mcts_oracle(runs);
      trees = std::move(runs.trees);
    }
    default_config_run(trees);
    backprop_replay(trees);
    curiosity_oracle();
    value_pipeline();
    curiosity_tuning();
    miner_oracle();
    statistics();
    end_to_end(argv[1]);
  } catch (const std::exception& e) {
    report("acceptance-harness", false, std::string("uncaught exception: ") + e.what());
  }
  std::cout << (failures == 0 ? "ALL PASS" : std::to_string(failures) + " FAILED") << std::endl;
  return failures == 0 ? 0 : 1;
}
