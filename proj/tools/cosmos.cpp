// cosmos: command-line front end for story search, value-model training,
// preference mining and the analysis procedures.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cosmos/analytics.hpp"
#include "cosmos/backend.hpp"
#include "cosmos/error.hpp"
#include "cosmos/features.hpp"
#include "cosmos/mcts.hpp"
#include "cosmos/preference.hpp"
#include "cosmos/story_tree.hpp"
#include "cosmos/value_model.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cosmos;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw Error("failed writing " + path.string());
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(what + ": " + e.what());
  }
}

void emit(const json& doc, const std::string& out) {
  const auto text = doc.dump(2) + "\n";
  if (out.empty()) std::cout << text;
  else write_file(out, text);
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  GatewayConfig gateway;
  StoryConfig story;
  SearchConfig search;
  std::optional<fs::path> value_model;
};

RunConfig load_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const auto text = read_file(path);
  const auto doc = parse_json(text, path);
  try {
    if (doc.contains("backends")) rc.gateway = parse_gateway_config(text);
    if (doc.contains("story")) {
      const auto& s = doc["story"];
      rc.story.total_bullets = s.value("total_bullets", rc.story.total_bullets);
      rc.story.bullets_per_step = s.value("bullets_per_step", rc.story.bullets_per_step);
      rc.story.max_depth = s.value("max_depth", rc.story.max_depth);
    }
    if (doc.contains("search")) {
      const auto& s = doc["search"];
      auto& c = rc.search;
      c.iterations = s.value("iterations", c.iterations);
      c.exploration = s.value("exploration", c.exploration);
      c.frontier_cap = s.value("frontier_cap", c.frontier_cap);
      c.evaluation_threshold = s.value("evaluation_threshold", c.evaluation_threshold);
      c.beam_top_fraction = s.value("beam_top_fraction", c.beam_top_fraction);
      c.beam_top_values = s.value("beam_top_values", c.beam_top_values);
      c.mix_ratio = s.value("mix_ratio", c.mix_ratio);
      c.workers = s.value("workers", c.workers);
      if (s.contains("schedule")) {
        const auto& k = s["schedule"];
        if (!k.is_array() || k.size() != 3) throw ParseError("search.schedule must be [k1, k2, later]");
        c.schedule = {k[0].get<int>(), k[1].get<int>(), k[2].get<int>()};
      }
    }
    if (doc.contains("value_model")) {
      fs::path p = doc["value_model"].get<std::string>();
      rc.value_model = p.is_relative() ? fs::path(path).parent_path() / p : p;
    }
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return rc;
}

// Roles missing from the config fall back to the offline mock.
std::unique_ptr<LanguageService> service_for(const RunConfig& rc, Role role, std::uint64_t seed) {
  if (rc.gateway.has(role)) return make_service(rc.gateway.at(role));
  return make_service(BackendConfig::for_role(role, "mock:" + std::to_string(seed)));
}

// ---------------------------------------------------------------------------
// Corpus and story files

std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") != std::string::npos) out.push_back(line);
  }
  return out;
}

json features_json(const FeatureVector& f) {
  json j = json::object();
  for (std::size_t i = 0; i < kFeatureCount; ++i)
    j[std::string(kFeatureNames[i])] = f.values[i] ? json(*f.values[i]) : json(nullptr);
  return j;
}

FeatureVector features_from_json(const json& j) {
  FeatureVector f;
  for (std::size_t i = 0; i < kFeatureCount; ++i) {
    const auto key = std::string(kFeatureNames[i]);
    if (j.contains(key) && !j[key].is_null()) f.values[i] = j[key].get<double>();
  }
  return f;
}

// JSONL of {"bullets": [...], "label": "good"|"bad", "group": ..., "completion": ...,
// optional "features": {name: value|null}}.
std::vector<LabeledStory> read_corpus(const std::string& path) {
  std::vector<LabeledStory> out;
  std::istringstream in(read_file(path));
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = json::parse(line);
      LabeledStory s;
      if (j.contains("bullets")) s.bullets = j["bullets"].get<std::vector<std::string>>();
      s.label = label_from_string(j.at("label").get<std::string>());
      s.group = j.at("group").get<std::string>();
      s.completion = j.value("completion", 1.0);
      if (j.contains("features")) {
        s.features = features_from_json(j["features"]);
        s.features->completion = s.completion;
      }
      if (s.bullets.empty() && !s.features) throw ParseError("story has neither bullets nor features");
      out.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path + " line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw InvalidArgument(path + " holds no stories");
  return out;
}

void ensure_features(std::vector<LabeledStory>& corpus, const RunConfig& rc, std::uint64_t seed,
                     const FeatureConfig& fc) {
  std::unique_ptr<LanguageService> scorer, embedder;
  for (auto& s : corpus) {
    if (s.features) continue;
    if (!scorer) {
      scorer = service_for(rc, Role::scorer, seed);
      embedder = service_for(rc, Role::embedder, seed);
    }
    s.features = extract_features(s.bullets, s.completion, *scorer, *embedder, fc);
  }
}

std::vector<TrajectoryPoint> read_trajectory(const std::string& path) {
  std::vector<TrajectoryPoint> out;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto j = parse_json(line, path);
    if (!j.contains("v_max_final") || j["v_max_final"].is_null()) continue;
    out.push_back({j.at("iteration").get<int>(), j["v_max_final"].get<double>()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct SearchArgs {
  std::string config, prompts, out = "run";
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::string model;
  bool quiet = false;
};

json report_json(const IterationReport& r) {
  return {{"iteration", r.iteration},
          {"kappa", r.kappa},
          {"selected", r.selected.size()},
          {"actions_requested", r.actions_requested},
          {"children_created", r.children_created},
          {"shortfall", r.shortfall},
          {"evaluations", r.evaluations},
          {"v_max_final", r.v_max_final ? json(*r.v_max_final) : json(nullptr)},
          {"wall_time_ms", r.wall_time.count()}};
}

int run_search_cmd(const SearchArgs& a) {
  auto rc = load_config(a.config);
  if (a.seed) rc.search.seed = *a.seed;
  if (a.iterations) rc.search.iterations = *a.iterations;
  const std::uint64_t seed = rc.search.seed;

  const fs::path model_path = !a.model.empty() ? fs::path(a.model)
                              : rc.value_model ? *rc.value_model
                                               : throw InvalidArgument("no value model given (--model or config value_model)");
  const auto model = ValueModel::from_json(read_file(model_path));

  const auto base = service_for(rc, Role::policy_base, seed);
  std::unique_ptr<LanguageService> trained;
  if (rc.gateway.has(Role::policy_trained)) trained = make_service(rc.gateway.at(Role::policy_trained));
  const auto simulator = service_for(rc, Role::simulator, seed);
  const auto scorer = service_for(rc, Role::scorer, seed);
  const auto embedder = service_for(rc, Role::embedder, seed);

  const auto templates = PromptTemplates::defaults();
  LlmPolicy base_policy(*base, templates);
  std::optional<LlmPolicy> trained_policy;
  if (trained) trained_policy.emplace(*trained, templates);
  LlmSimulator sim(*simulator, templates);
  ValueModelEvaluator evaluator(model, *scorer, *embedder, rc.story);
  const SearchAgents agents{&base_policy, trained_policy ? &*trained_policy : nullptr, &sim,
                            &evaluator};

  const auto prompts = read_lines(a.prompts);
  if (prompts.empty()) throw InvalidArgument(a.prompts + " holds no prompts");

  const fs::path out = a.out;
  fs::create_directories(out);
  std::ofstream reports(out / "reports.jsonl", std::ios::binary | std::ios::trunc);
  if (!reports) throw Error("cannot write " + (out / "reports.jsonl").string());

  const auto t0 = std::chrono::steady_clock::now();
  auto on_iteration = [&](const IterationReport& r, const SearchTree& tree) {
    reports << report_json(r).dump() << '\n';
    reports.flush();
    if (!a.quiet)
      std::cerr << "iteration " << r.iteration << ": " << r.selected.size() << " expanded, "
                << r.children_created << " children, " << r.evaluations << " evaluations, "
                << tree.size() << " nodes, v_max "
                << (r.v_max_final ? std::to_string(*r.v_max_final) : std::string("-")) << '\n';
  };
  const auto result = run_search(prompts, rc.search, rc.story, agents, on_iteration);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const auto tree_json = export_tree(result.tree, ExportFormat::json);
  write_file(out / "tree.json", tree_json);
  write_file(out / "tree.dot", export_tree(result.tree, ExportFormat::dot));

  json summary = {{"iterations", result.reports.size()},
                  {"nodes", result.tree.size()},
                  {"evaluations", result.tree.evaluation_log().size()},
                  {"seed", seed},
                  {"tree_sha256", sha256_hex(tree_json)},
                  {"wall_time_s", seconds},
                  {"pf_days", pf_days(seconds)}};
  if (const auto best = max_final_value(result.tree)) {
    const auto f = final_values(result.tree);
    write_file(out / "best.txt", render_story(result.tree.node(f.argmax)));
    write_file(out / "worst.txt", render_story(result.tree.node(f.argmin)));
    summary["v_max_final"] = f.v_max;
    summary["v_min_final"] = f.v_min;
    summary["best_node"] = f.argmax;
    summary["worst_node"] = f.argmin;
  } else {
    std::cerr << "no story reached full length; best.txt and worst.txt not written\n";
  }
  write_file(out / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct MineArgs {
  std::string tree, out = "prefs.jsonl", tree_id;
  MinerConfig cfg;
};

int run_mine(const MineArgs& a) {
  const auto text = read_file(a.tree);
  const auto tree = import_tree_json(text);
  const auto digest = sha256_hex(text);
  // default id is content-derived so identical trees give identical datasets
  const std::string id = a.tree_id.empty() ? digest.substr(0, 12) : a.tree_id;
  const auto pairs = mine_pairs(tree, a.cfg, PromptTemplates::defaults(), id);
  if (pairs.empty()) {
    std::cerr << "no pair passed the filters\n";
    return 3;
  }
  export_dataset(pairs, a.cfg, digest, a.out);
  std::cout << dataset_manifest(pairs, a.cfg, digest);
  return 0;
}

struct TrainArgs {
  std::string corpus, out = "value_model.json", config, report;
  std::vector<double> c{0.1, 1.0, 10.0};
  std::vector<double> gamma{0.01, 0.05, 0.2};
  std::vector<int> pca{4, 8};
  std::string kernel = "rbf";
  int folds = 5, repeats = 3;
  std::uint64_t seed = 0;
};

int run_train(const TrainArgs& a) {
  const auto rc = load_config(a.config);
  auto corpus = read_corpus(a.corpus);
  const FeatureConfig fc;
  ensure_features(corpus, rc, a.seed, fc);
  std::vector<FeatureVector> fv;
  std::vector<int> labels;
  std::vector<std::string> groups;
  for (const auto& s : corpus) {
    fv.push_back(*s.features);
    labels.push_back(s.label == Label::good ? 1 : 0);
    groups.push_back(s.group);
  }
  const auto grid = make_grid(a.c, a.gamma, a.pca, ml::kernel_from_string(a.kernel));
  CvConfig cv;
  cv.folds = a.folds;
  cv.repeats = a.repeats;
  cv.seed = a.seed;
  CvResult report;
  const auto model = train_value_model(feature_matrix(fv), labels, groups, grid, cv, fc, &report);
  write_file(a.out, model.to_json());

  json summary = {{"samples", corpus.size()},
                  {"best_index", report.best_index},
                  {"cv_loss", report.best().loss},
                  {"cv_f1_macro", report.best().mean_f1_macro},
                  {"cv_brier", report.best().mean_brier},
                  {"cv_fpr", report.best().mean_fpr},
                  {"precision_std", report.best().precision_std},
                  {"c", report.best().params.c},
                  {"gamma", report.best().params.gamma},
                  {"pca_components", report.best().params.pca_components},
                  {"linear_fallback", model.metadata().linear_fallback},
                  {"in_sample_calibration", model.metadata().in_sample_calibration}};
  if (!a.report.empty()) {
    json grid_doc = json::array();
    for (const auto& g : report.grid)
      grid_doc.push_back({{"c", g.params.c},
                          {"gamma", g.params.gamma},
                          {"pca_components", g.params.pca_components},
                          {"loss", g.loss},
                          {"f1_macro", g.mean_f1_macro},
                          {"brier", g.mean_brier},
                          {"fpr", g.mean_fpr},
                          {"precision_std", g.precision_std}});
    write_file(a.report, grid_doc.dump(2) + "\n");
  }
  std::cout << summary.dump(2) << '\n';
  return 0;
}

struct EvalArgs {
  std::string model, corpus, config;
  std::uint64_t seed = 0;
};

int run_eval(const EvalArgs& a) {
  const auto rc = load_config(a.config);
  const auto model = ValueModel::from_json(read_file(a.model));
  auto corpus = read_corpus(a.corpus);
  ensure_features(corpus, rc, a.seed, model.feature_config());
  std::vector<int> y;
  std::vector<double> p;
  for (const auto& s : corpus) {
    y.push_back(s.label == Label::good ? 1 : 0);
    p.push_back(model.predict(*s.features));
  }
  const auto m = ml::binary_metrics(y, p);
  emit({{"samples", y.size()},
        {"precision", m.precision},
        {"recall", m.recall},
        {"fpr", m.fpr},
        {"accuracy", m.accuracy},
        {"f1_macro", m.f1_macro},
        {"brier", m.brier},
        {"tp", m.tp},
        {"fp", m.fp},
        {"tn", m.tn},
        {"fn", m.fn}},
       "");
  return 0;
}

struct ScoreArgs {
  std::string model, story, config;
  double completion = 1.0;
  std::uint64_t seed = 0;
};

int run_score(const ScoreArgs& a) {
  const auto rc = load_config(a.config);
  const auto model = ValueModel::from_json(read_file(a.model));
  const auto bullets = parse_bullets(read_file(a.story));
  if (bullets.empty()) throw InvalidArgument(a.story + " holds no bullets");
  const auto scorer = service_for(rc, Role::scorer, a.seed);
  const auto embedder = service_for(rc, Role::embedder, a.seed);
  const auto f = extract_features(bullets, a.completion, *scorer, *embedder, model.feature_config());
  emit({{"value", model.predict(f)}, {"bullets", bullets.size()}, {"features", features_json(f)}}, "");
  return 0;
}

json line_json(const LineFit& f) {
  return {{"intercept", f.intercept},
          {"slope", f.slope},
          {"slope_se", f.slope_se},
          {"r_squared", f.r_squared},
          {"points", f.points}};
}

struct FitArgs {
  std::vector<std::string> reports;
  std::string out, csv;
};

int run_fit(const FitArgs& a) {
  std::vector<Trajectory> groups;
  for (const auto& path : a.reports) {
    const auto p = fs::path(path);
    const std::string name = p.parent_path().filename().string().empty()
                                 ? p.stem().string()
                                 : p.parent_path().filename().string();
    groups.push_back({name, read_trajectory(path)});
  }
  const auto fit = loglinear_fit(groups);
  json doc = {{"model", "V_max = b0 + b1 ln k; per-group OLS plus pooled common-slope fit "
                        "(simplification of the random-effects model)"},
              {"pooled", line_json(fit.pooled)},
              {"t_statistic", fit.t_statistic},
              {"p_value_slope_positive", fit.p_value ? json(*fit.p_value) : json(nullptr)},
              {"degrees_of_freedom", fit.degrees_of_freedom}};
  json per = json::array();
  for (const auto& g : fit.groups) per.push_back({{"group", g.group}, {"fit", line_json(g.fit)}});
  doc["groups"] = per;
  if (!a.csv.empty()) {
    std::ostringstream csv;
    csv << "group,iteration,v_max,fitted\n";
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const auto& line = fit.groups.empty() ? fit.pooled : fit.groups[i].fit;
      for (const auto& p : groups[i].points)
        csv << groups[i].group << ',' << p.iteration << ',' << p.v_max << ','
            << line.intercept + line.slope * std::log(static_cast<double>(p.iteration)) << '\n';
    }
    write_file(a.csv, csv.str());
  }
  emit(doc, a.out);
  return 0;
}

struct SpeedupArgs {
  std::string reference, improved, out;
  double gain = 0.1;
  int baseline = 8;
};

int run_speedup(const SpeedupArgs& a) {
  const auto ref = iterations_to_gain(read_trajectory(a.reference), a.gain, a.baseline);
  const auto imp = iterations_to_gain(read_trajectory(a.improved), a.gain, a.baseline);
  json doc = {{"gain", a.gain},
              {"baseline_k", a.baseline},
              {"k_reference", ref ? json(*ref) : json(nullptr)},
              {"k_improved", imp ? json(*imp) : json(nullptr)},
              {"speedup", ref && imp ? json(speedup(*ref, *imp)) : json(nullptr)}};
  emit(doc, a.out);
  return 0;
}

struct VqArgs {
  std::string tree, out, csv;
};

int run_vq(const VqArgs& a) {
  const auto tree = import_tree_json(read_file(a.tree));
  const auto samples = v_q_samples(tree);
  if (!a.csv.empty()) {
    std::ostringstream csv;
    csv << "node,value,q\n";
    for (const auto& s : samples) csv << s.node << ',' << s.value << ',' << s.q << '\n';
    write_file(a.csv, csv.str());
  }
  emit({{"samples", samples.size()}, {"pearson_r", v_q_correlation(tree)}}, a.out);
  return 0;
}

struct RateArgs {
  std::string story, config, out;
  int repeats = 50, retries = 2;
  std::uint64_t seed = 0;
};

int run_rate(const RateArgs& a) {
  const auto rc = load_config(a.config);
  const auto judge = service_for(rc, Role::judge, a.seed);
  const auto r = rate_story(*judge, read_file(a.story), a.repeats, a.retries);
  json dims = json::object();
  for (std::size_t k = 0; k < kRubricKeys.size(); ++k)
    dims[std::string(kRubricKeys[k])] = r.dimension_means[k];
  emit({{"overall", r.overall}, {"ratings", r.ratings}, {"misses", r.misses}, {"dimensions", dims}},
       a.out);
  return 0;
}

struct StatsArgs {
  std::string csv, out;
};

// Two numeric columns, A then B; a non-numeric first row is a header.
int run_stats(const StatsArgs& a) {
  std::vector<double> xa, xb;
  std::size_t lineno = 0;
  for (const auto& line : read_lines(a.csv)) {
    ++lineno;
    std::istringstream row(line);
    std::string c1, c2;
    std::getline(row, c1, ',');
    std::getline(row, c2, ',');
    try {
      std::size_t used1 = 0, used2 = 0;
      const double v1 = std::stod(c1, &used1), v2 = std::stod(c2, &used2);
      xa.push_back(v1);
      xb.push_back(v2);
    } catch (const std::exception&) {
      if (lineno == 1) continue;
      throw ParseError(a.csv + " line " + std::to_string(lineno) + ": expected two numbers");
    }
  }
  const auto r = effect_stats(xa, xb);
  emit({{"n", r.n},
        {"mean_a", r.mean_a},
        {"mean_b", r.mean_b},
        {"sd_a", r.sd_a},
        {"sd_b", r.sd_b},
        {"mean_difference", r.mean_difference},
        {"sd_difference", r.sd_difference},
        {"cohens_d", r.cohens_d ? json(*r.cohens_d) : json(nullptr)},
        {"cles", r.cles ? json(*r.cles) : json(nullptr)},
        {"wilcoxon",
         {{"statistic", r.wilcoxon.statistic},
          {"w_plus", r.wilcoxon.w_plus},
          {"w_minus", r.wilcoxon.w_minus},
          {"nonzero", r.wilcoxon.nonzero},
          {"p_value", r.wilcoxon.p_value},
          {"exact", r.wilcoxon.exact}}}},
       a.out);
  return 0;
}

struct ExportArgs {
  std::string tree, format = "dot", out;
};

int run_export(const ExportArgs& a) {
  const auto tree = import_tree_json(read_file(a.tree));
  const auto fmt = a.format == "json" ? ExportFormat::json : ExportFormat::dot;
  const auto text = export_tree(tree, fmt);
  if (a.out.empty()) std::cout << text;
  else write_file(a.out, text);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Story plot search with a learned value model"};
  app.require_subcommand(1);
  int status = 0;

  SearchArgs search;
  auto* s = app.add_subcommand("search", "Run tree search from a file of premises");
  s->add_option("--config", search.config, "JSON run config (backends, story, search)");
  s->add_option("--prompts", search.prompts, "One premise per line")->required();
  s->add_option("--out", search.out, "Output directory");
  s->add_option("--seed", search.seed);
  s->add_option("--iterations", search.iterations);
  s->add_option("--model", search.model, "Value model JSON");
  s->add_flag("--quiet", search.quiet);
  s->callback([&] { status = run_search_cmd(search); });

  MineArgs mine;
  auto* m = app.add_subcommand("mine-prefs", "Mine chosen/rejected action pairs from a tree");
  m->add_option("--tree", mine.tree)->required();
  m->add_option("--out", mine.out);
  m->add_option("--tree-id", mine.tree_id);
  m->add_option("--min-gap", mine.cfg.min_gap);
  m->add_option("--quality-floor", mine.cfg.quality_floor);
  m->add_option("--tradeoff", mine.cfg.tradeoff);
  m->add_option("--pairs-per-parent", mine.cfg.pairs_per_parent);
  m->callback([&] { status = run_mine(mine); });

  TrainArgs train;
  auto* t = app.add_subcommand("train-value", "Cross-validate and fit the value model");
  t->add_option("--corpus", train.corpus, "JSONL of labelled stories")->required();
  t->add_option("--out", train.out);
  t->add_option("--config", train.config, "Backends used for feature extraction");
  t->add_option("--c", train.c)->delimiter(',');
  t->add_option("--gamma", train.gamma)->delimiter(',');
  t->add_option("--pca", train.pca)->delimiter(',');
  t->add_option("--kernel", train.kernel)->check(CLI::IsMember({"rbf", "linear"}));
  t->add_option("--folds", train.folds);
  t->add_option("--repeats", train.repeats);
  t->add_option("--seed", train.seed);
  t->add_option("--grid-report", train.report, "Write per-grid-point CV scores here");
  t->callback([&] { status = run_train(train); });

  EvalArgs eval;
  auto* e = app.add_subcommand("eval-value", "Score a labelled corpus with a fitted model");
  e->add_option("--model", eval.model)->required();
  e->add_option("--corpus", eval.corpus)->required();
  e->add_option("--config", eval.config);
  e->add_option("--seed", eval.seed);
  e->callback([&] { status = run_eval(eval); });

  ScoreArgs score;
  auto* sc = app.add_subcommand("score", "Value and features of one story file");
  sc->add_option("--model", score.model)->required();
  sc->add_option("--story", score.story, "Bullet list, one per line")->required();
  sc->add_option("--config", score.config);
  sc->add_option("--completion", score.completion);
  sc->add_option("--seed", score.seed);
  sc->callback([&] { status = run_score(score); });

  auto* analyze = app.add_subcommand("analyze", "Scaling fits, speedups and V-Q correlation");
  analyze->require_subcommand(1);
  FitArgs fit;
  auto* af = analyze->add_subcommand("fit", "Log-linear fit of V_max against iterations");
  af->add_option("--reports", fit.reports, "reports.jsonl per experiment")->required();
  af->add_option("--out", fit.out);
  af->add_option("--csv", fit.csv);
  af->callback([&] { status = run_fit(fit); });
  SpeedupArgs sp;
  auto* as = analyze->add_subcommand("speedup", "Iterations needed for a relative gain");
  as->add_option("--reference", sp.reference)->required();
  as->add_option("--improved", sp.improved)->required();
  as->add_option("--gain", sp.gain);
  as->add_option("--baseline", sp.baseline);
  as->add_option("--out", sp.out);
  as->callback([&] { status = run_speedup(sp); });
  VqArgs vq;
  auto* av = analyze->add_subcommand("vq", "Correlation of child V with edge Q");
  av->add_option("--tree", vq.tree)->required();
  av->add_option("--out", vq.out);
  av->add_option("--csv", vq.csv);
  av->callback([&] { status = run_vq(vq); });

  RateArgs rate;
  auto* r = app.add_subcommand("rate", "Nine-dimension rubric rating by the judge backend");
  r->add_option("--story", rate.story)->required();
  r->add_option("--config", rate.config);
  r->add_option("--repeats", rate.repeats);
  r->add_option("--retries", rate.retries);
  r->add_option("--seed", rate.seed);
  r->add_option("--out", rate.out);
  r->callback([&] { status = run_rate(rate); });

  StatsArgs stats;
  auto* st = app.add_subcommand("stats", "Paired effect sizes from a two-column CSV");
  st->add_option("--csv", stats.csv)->required();
  st->add_option("--out", stats.out);
  st->callback([&] { status = run_stats(stats); });

  ExportArgs exp;
  auto* x = app.add_subcommand("export", "Re-export a tree as DOT or JSON");
  x->add_option("--tree", exp.tree)->required();
  x->add_option("--format", exp.format)->check(CLI::IsMember({"dot", "json"}));
  x->add_option("--out", exp.out);
  x->callback([&] { status = run_export(exp); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    return app.exit(err);
  } catch (const SearchExhausted& err) {
    std::cerr << "error: search exhausted: " << err.what() << '\n';
    return 4;
  } catch (const cosmos::Error& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return status;
}
