#include "cosmos/mcts.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <set>
#include <thread>
#include <unordered_set>

#include "cosmos/error.hpp"
#include "cosmos/features.hpp"
#include "hashing.hpp"

namespace cosmos {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first exception
// by index is rethrown after all threads finish.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  if (n == 0) return;
  std::size_t threads = workers > 0 ? static_cast<std::size_t>(workers)
                                    : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto run = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    run();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(run);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

// ---------------------------------------------------------------------------
// Backend-driven agents

std::vector<std::string> parse_bullets(std::string_view reply) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    const auto end = std::min(reply.find('\n', pos), reply.size());
    std::string line = trim(reply.substr(pos, end - pos));
    pos = end + 1;
    if (line.rfind("\xE2\x80\xA2", 0) == 0) {
      line.erase(0, 3);
    } else if (!line.empty() && (line[0] == '-' || line[0] == '*')) {
      line.erase(0, 1);
    } else {
      std::size_t d = 0;
      while (d < line.size() && std::isdigit(static_cast<unsigned char>(line[d]))) ++d;
      if (d > 0 && d < line.size() && (line[d] == '.' || line[d] == ')')) line.erase(0, d + 1);
    }
    line = trim(line);
    if (!line.empty()) out.push_back(std::move(line));
  }
  return out;
}

LlmPolicy::LlmPolicy(const LanguageService& service, PromptTemplates templates)
    : service_(service), templates_(std::move(templates)) {}

std::vector<std::string> LlmPolicy::propose(const StoryState& state, int n) const {
  if (n <= 0) return {};
  auto replies = service_.complete(render_policy_prompt(state, templates_), n);
  for (auto& r : replies) r = trim(r);
  return replies;
}

LlmSimulator::LlmSimulator(const LanguageService& service, PromptTemplates templates)
    : service_(service), templates_(std::move(templates)) {}

std::vector<std::string> LlmSimulator::simulate(const StoryState& state, const PlotAction& action,
                                                int bullets) const {
  const auto replies =
      service_.complete(render_simulator_prompt(state, action, bullets, templates_), 1);
  if (replies.empty()) throw MalformedResponse("simulator returned no completion");
  auto items = parse_bullets(replies.front());
  if (items.size() < static_cast<std::size_t>(bullets))
    throw MalformedResponse("simulator returned " + std::to_string(items.size()) +
                            " bullets, expected " + std::to_string(bullets));
  items.resize(static_cast<std::size_t>(bullets));
  return items;
}

ValueModelEvaluator::ValueModelEvaluator(const ValueModel& model, const LanguageService& scorer,
                                         const LanguageService& embedder, StoryConfig story)
    : model_(model), scorer_(scorer), embedder_(embedder), story_(story) {}

double ValueModelEvaluator::value(const StoryState& state) const {
  const FeatureVector f = extract_features(state.bullets, completion_fraction(state, story_),
                                           scorer_, embedder_, model_.feature_config());
  return model_.predict(f);
}

// ---------------------------------------------------------------------------
// Configuration and scoring

int ExpansionSchedule::at(int iteration) const {
  if (iteration <= 1) return first;
  if (iteration == 2) return second;
  return later;
}

void SearchConfig::validate() const {
  if (iterations < 0) throw InvalidArgument("iterations must be >= 0");
  if (!(exploration >= 0.0)) throw InvalidArgument("exploration constant must be >= 0");
  if (schedule.first < 1 || schedule.second < 1 || schedule.later < 1)
    throw InvalidArgument("expansion schedule entries must be >= 1");
  if (frontier_cap < 1) throw InvalidArgument("frontier cap must be >= 1");
  if (!(evaluation_threshold > 0.0 && evaluation_threshold <= 1.0))
    throw InvalidArgument("evaluation threshold must lie in (0, 1]");
  if (!(beam_top_fraction >= 0.0 && beam_top_fraction <= 1.0))
    throw InvalidArgument("beam top fraction must lie in [0, 1]");
  if (beam_top_values < 0) throw InvalidArgument("beam top values must be >= 0");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw InvalidArgument("mix ratio must lie in [0, 1]");
}

double ucb_score(const EdgeStats& edge, std::uint64_t parent_visits, double exploration) {
  if (edge.visits == 0) return std::numeric_limits<double>::infinity();
  const double n = static_cast<double>(std::max<std::uint64_t>(parent_visits, 1));
  return edge.action_value +
         exploration * std::sqrt(std::log(n) / static_cast<double>(edge.visits));
}

bool evaluation_gate(const StoryState& node, const StoryConfig& story, const SearchConfig& cfg) {
  return completion_fraction(node, story) >= cfg.evaluation_threshold;
}

bool is_expandable(const StoryState& node, const StoryConfig& story) {
  return node.children.empty() && !node.sterile && node.depth < story.max_depth;
}

// ---------------------------------------------------------------------------
// Selection

namespace {

EdgeStats root_stats(const SearchTree& tree, NodeId root) {
  EdgeStats s;
  for (NodeId c : tree.node(root).children) {
    s.visits += tree.node(c).stats.visits;
    s.cumulative_value += tree.node(c).stats.cumulative_value;
  }
  if (s.visits) s.action_value = s.cumulative_value / static_cast<double>(s.visits);
  return s;
}

}  // namespace

std::uint64_t tie_break_key(std::uint64_t seed, NodeId id) { return detail::combine(seed, id); }

std::vector<NodeId> select_frontier(const SearchTree& tree, const SearchConfig& cfg) {
  const auto& story = tree.config();
  const auto nodes = tree.nodes();
  const std::size_t cap = static_cast<std::size_t>(cfg.frontier_cap);

  std::vector<NodeId> leaves;
  for (const auto& n : nodes)
    if (is_expandable(n, story)) leaves.push_back(n.id);
  if (leaves.empty()) throw SearchExhausted("no expandable node left");

  std::vector<NodeId> frontier;
  std::vector<char> taken(nodes.size(), 0);
  auto take = [&](NodeId id) {
    if (taken[id] || frontier.size() >= cap) return;
    taken[id] = 1;
    frontier.push_back(id);
  };

  std::vector<NodeId> visited;
  for (NodeId id : leaves)
    if (!nodes[id].is_root() && nodes[id].stats.visits > 0) visited.push_back(id);
  std::sort(visited.begin(), visited.end(), [&](NodeId a, NodeId b) {
    const double qa = nodes[a].stats.action_value, qb = nodes[b].stats.action_value;
    return qa != qb ? qa > qb : a < b;
  });
  const auto top_q = static_cast<std::size_t>(
      std::ceil(cfg.beam_top_fraction * static_cast<double>(visited.size()) - 1e-12));
  for (std::size_t i = 0; i < std::min(top_q, visited.size()); ++i) take(visited[i]);

  std::vector<NodeId> valued;
  for (NodeId id : leaves)
    if (nodes[id].evaluated_value) valued.push_back(id);
  std::sort(valued.begin(), valued.end(), [&](NodeId a, NodeId b) {
    const double va = *nodes[a].evaluated_value, vb = *nodes[b].evaluated_value;
    return va != vb ? va > vb : a < b;
  });
  const auto top_v = std::min(valued.size(), static_cast<std::size_t>(cfg.beam_top_values));
  for (std::size_t i = 0; i < top_v; ++i) take(valued[i]);

  // Unselected expandable leaves per subtree. Children always have larger ids.
  std::vector<std::size_t> avail(nodes.size(), 0);
  for (std::size_t i = nodes.size(); i-- > 0;) {
    if (is_expandable(nodes[i], story) && !taken[i]) avail[i] += 1;
    if (nodes[i].parent) avail[*nodes[i].parent] += avail[i];
  }

  std::vector<EdgeStats> roots;
  std::uint64_t super_visits = 0;
  for (NodeId r : tree.roots()) {
    roots.push_back(root_stats(tree, r));
    super_visits += roots.back().visits;
  }
  auto tie_key = [&](NodeId id) { return tie_break_key(cfg.seed, id); };

  auto pick = [&](std::span<const NodeId> candidates, auto stats_of, std::uint64_t parent_visits) {
    std::optional<NodeId> best;
    double best_score = 0.0;
    for (NodeId c : candidates) {
      if (avail[c] == 0) continue;
      const double s = ucb_score(stats_of(c), parent_visits, cfg.exploration);
      if (!best || s > best_score || (s == best_score && tie_key(c) < tie_key(*best))) {
        best = c;
        best_score = s;
      }
    }
    return *best;
  };

  while (frontier.size() < cap) {
    std::size_t total = 0;
    for (NodeId r : tree.roots()) total += avail[r];
    if (total == 0) break;

    const auto root_ids = tree.roots();
    NodeId cur = pick(
        root_ids,
        [&](NodeId r) {
          const auto it = std::find(root_ids.begin(), root_ids.end(), r);
          return roots[static_cast<std::size_t>(it - root_ids.begin())];
        },
        super_visits);
    while (!nodes[cur].children.empty()) {
      const std::uint64_t n = nodes[cur].is_root()
                                  ? roots[static_cast<std::size_t>(
                                              std::find(root_ids.begin(), root_ids.end(), cur) -
                                              root_ids.begin())]
                                        .visits
                                  : nodes[cur].stats.visits;
      cur = pick(nodes[cur].children, [&](NodeId c) { return nodes[c].stats; }, n);
    }
    take(cur);
    for (std::optional<NodeId> p = cur; p; p = nodes[*p].parent) avail[*p] -= 1;
  }
  return frontier;
}

// ---------------------------------------------------------------------------
// Expansion

std::vector<PolicySource> policy_assignment(int n, double mix_ratio, bool trained_available) {
  std::vector<PolicySource> out;
  out.reserve(static_cast<std::size_t>(std::max(n, 0)));
  for (int i = 0; i < n; ++i) {
    const bool trained = trained_available && std::floor((i + 1) * mix_ratio) >
                                                  std::floor(static_cast<double>(i) * mix_ratio);
    out.push_back(trained ? PolicySource::trained : PolicySource::base);
  }
  return out;
}

namespace {

struct ExpansionWork {
  std::vector<PlotAction> actions;
  std::vector<std::vector<std::string>> bullets;
  int requested = 0;
  bool transport_failure = false;
  bool answered = false;
};

ExpansionWork compute_expansion(const StoryState& state, int kappa, const SearchConfig& cfg,
                                const StoryConfig& story, const SearchAgents& agents) {
  ExpansionWork work;
  work.requested = kappa;
  const auto assignment = policy_assignment(kappa, cfg.mix_ratio, agents.trained != nullptr);
  const auto trained_n = std::count(assignment.begin(), assignment.end(), PolicySource::trained);
  const auto base_n = static_cast<int>(assignment.size()) - static_cast<int>(trained_n);

  auto ask = [&](const PolicyModel* policy, int n) -> std::vector<std::string> {
    if (!policy || n == 0) return {};
    try {
      auto out = policy->propose(state, n);
      work.answered = true;
      return out;
    } catch (const TransportError&) {
      work.transport_failure = true;
    } catch (const Error&) {
      work.answered = true;
    }
    return {};
  };
  const auto from_base = ask(agents.base, base_n);
  const auto from_trained = ask(agents.trained, static_cast<int>(trained_n));

  std::size_t bi = 0, ti = 0;
  std::unordered_set<std::string> seen;
  for (PolicySource src : assignment) {
    const auto& pool = src == PolicySource::base ? from_base : from_trained;
    std::size_t& idx = src == PolicySource::base ? bi : ti;
    if (idx >= pool.size()) continue;
    std::string text = trim(pool[idx++]);
    if (text.empty() || !seen.insert(text).second) continue;
    PlotAction action{std::move(text), src};
    try {
      auto b = agents.simulator->simulate(state, action, story.bullets_per_step);
      work.answered = true;
      if (b.size() != static_cast<std::size_t>(story.bullets_per_step)) continue;
      work.actions.push_back(std::move(action));
      work.bullets.push_back(std::move(b));
    } catch (const TransportError&) {
      work.transport_failure = true;
    } catch (const Error&) {
      work.answered = true;
    }
  }
  return work;
}

ExpansionOutcome apply_expansion(SearchTree& tree, NodeId node, ExpansionWork&& work) {
  ExpansionOutcome out;
  out.requested = work.requested;
  for (std::size_t i = 0; i < work.actions.size(); ++i)
    out.children.push_back(
        tree.add_child(node, std::move(work.actions[i]), std::move(work.bullets[i])));
  out.shortfall = out.requested - static_cast<int>(out.children.size());
  // An outage is not evidence that the node has nothing to offer.
  if (out.children.empty() && !(work.transport_failure && !work.answered)) tree.mark_sterile(node);
  return out;
}

void check_agents(const SearchAgents& agents) {
  if (!agents.base) throw InvalidArgument("a base policy is required");
  if (!agents.simulator) throw InvalidArgument("a simulator is required");
  if (!agents.evaluator) throw InvalidArgument("an evaluator is required");
}

}  // namespace

ExpansionOutcome expand(SearchTree& tree, NodeId node, int iteration, const SearchConfig& cfg,
                        const SearchAgents& agents) {
  check_agents(agents);
  const StoryState& state = tree.node(node);
  if (state.depth >= tree.config().max_depth) throw InvalidArgument("depth overflow");
  auto work = compute_expansion(state, cfg.schedule.at(iteration), cfg, tree.config(), agents);
  return apply_expansion(tree, node, std::move(work));
}

void backpropagate(SearchTree& tree, NodeId leaf, double value) {
  tree.backpropagate(leaf, value);
}

// ---------------------------------------------------------------------------
// Main loop

SearchResult run_search(const std::vector<std::string>& prompts, const SearchConfig& cfg,
                        const StoryConfig& story, const SearchAgents& agents,
                        const IterationCallback& on_iteration) {
  cfg.validate();
  story.validate();
  check_agents(agents);
  if (prompts.empty()) throw InvalidArgument("at least one prompt is required");

  SearchResult result{SearchTree(story), {}};
  SearchTree& tree = result.tree;
  for (const auto& p : prompts) tree.add_root(p);

  auto all_roots_sterile = [&] {
    return std::all_of(tree.roots().begin(), tree.roots().end(),
                       [&](NodeId r) { return tree.node(r).sterile; });
  };

  for (int k = 1; k <= cfg.iterations; ++k) {
    const auto t0 = std::chrono::steady_clock::now();
    IterationReport report;
    report.iteration = k;
    report.kappa = cfg.schedule.at(k);

    try {
      report.selected = select_frontier(tree, cfg);
    } catch (const SearchExhausted&) {
      if (all_roots_sterile()) throw SearchExhausted("every root is sterile");
      break;
    }

    std::vector<StoryState> snapshots;
    snapshots.reserve(report.selected.size());
    for (NodeId id : report.selected) snapshots.push_back(tree.node(id));
    std::vector<ExpansionWork> work(snapshots.size());
    parallel_for(snapshots.size(), cfg.workers, [&](std::size_t i) {
      work[i] = compute_expansion(snapshots[i], report.kappa, cfg, story, agents);
    });

    const bool outage = std::all_of(work.begin(), work.end(), [](const ExpansionWork& w) {
      return w.transport_failure && !w.answered;
    });
    if (outage) throw TransportError("every expansion in iteration " + std::to_string(k) +
                                         " failed to reach its backend",
                                     0);

    std::vector<NodeId> created;
    for (std::size_t i = 0; i < work.size(); ++i) {
      auto out = apply_expansion(tree, report.selected[i], std::move(work[i]));
      report.actions_requested += out.requested;
      report.shortfall += out.shortfall;
      created.insert(created.end(), out.children.begin(), out.children.end());
    }
    report.children_created = static_cast<int>(created.size());

    std::vector<NodeId> gated;
    for (NodeId id : created)
      if (evaluation_gate(tree.node(id), story, cfg)) gated.push_back(id);
    std::vector<double> values(gated.size());
    parallel_for(gated.size(), cfg.workers,
                 [&](std::size_t i) { values[i] = agents.evaluator->value(tree.node(gated[i])); });
    for (std::size_t i = 0; i < gated.size(); ++i) tree.set_evaluated_value(gated[i], values[i]);
    for (std::size_t i = 0; i < gated.size(); ++i) tree.backpropagate(gated[i], values[i]);
    report.evaluations = static_cast<int>(gated.size());

    report.v_max_final = max_final_value(tree);
    report.wall_time = std::chrono::steady_clock::now() - t0;
    result.reports.push_back(report);
    if (on_iteration) on_iteration(result.reports.back(), tree);

    if (all_roots_sterile()) throw SearchExhausted("every root is sterile");
  }
  return result;
}

}  // namespace cosmos
