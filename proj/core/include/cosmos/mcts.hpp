#pragma once

/**
 * Tree search over story states.
 *
 * One iteration: select a frontier of expandable nodes (UCB descents plus a
 * few beam picks), expand each through the policy models and simulate every
 * action into new bullets, evaluate children that are far enough into the
 * story, then backpropagate all new values in node-id order.
 *
 * Expansion, simulation and evaluation of distinct frontier nodes run on
 * worker threads against copies of the states; the tree itself is only
 * touched by the calling thread.
 */

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "cosmos/backend.hpp"
#include "cosmos/prompts.hpp"
#include "cosmos/story_tree.hpp"
#include "cosmos/value_model.hpp"

namespace cosmos {

/// Proposes candidate plot actions for a state.
class PolicyModel {
 public:
  virtual ~PolicyModel() = default;
  virtual std::vector<std::string> propose(const StoryState& state, int n) const = 0;
};

/// Turns an action into exactly `bullets` new bullet points.
class SimulationModel {
 public:
  virtual ~SimulationModel() = default;
  virtual std::vector<std::string> simulate(const StoryState& state, const PlotAction& action,
                                            int bullets) const = 0;
};

/// V(s) in [0,1]. Must be safe to call from several threads.
class StateEvaluator {
 public:
  virtual ~StateEvaluator() = default;
  virtual double value(const StoryState& state) const = 0;
};

class LlmPolicy final : public PolicyModel {
 public:
  LlmPolicy(const LanguageService& service, PromptTemplates templates);
  std::vector<std::string> propose(const StoryState& state, int n) const override;

 private:
  const LanguageService& service_;
  PromptTemplates templates_;
};

class LlmSimulator final : public SimulationModel {
 public:
  LlmSimulator(const LanguageService& service, PromptTemplates templates);
  /// Throws MalformedResponse when the reply holds fewer than `bullets` items.
  std::vector<std::string> simulate(const StoryState& state, const PlotAction& action,
                                    int bullets) const override;

 private:
  const LanguageService& service_;
  PromptTemplates templates_;
};

class ValueModelEvaluator final : public StateEvaluator {
 public:
  ValueModelEvaluator(const ValueModel& model, const LanguageService& scorer,
                      const LanguageService& embedder, StoryConfig story);
  double value(const StoryState& state) const override;

 private:
  const ValueModel& model_;
  const LanguageService& scorer_;
  const LanguageService& embedder_;
  StoryConfig story_;
};

/// Splits a reply into bullet texts, dropping list markers and blank lines.
std::vector<std::string> parse_bullets(std::string_view reply);

struct ExpansionSchedule {
  int first = 300;   // k = 1
  int second = 8;    // k = 2
  int later = 2;     // k > 2

  int at(int iteration) const;
};

struct SearchConfig {
  int iterations = 100;
  double exploration = 1.414;
  ExpansionSchedule schedule;
  int frontier_cap = 100;
  double evaluation_threshold = 0.5;
  double beam_top_fraction = 0.02;  // share of visited expandable leaves taken by Q
  int beam_top_values = 2;          // expandable leaves taken by evaluated V
  double mix_ratio = 0.5;           // share of actions from the trained policy
  std::uint64_t seed = 0;
  int workers = 0;                  // 0: hardware concurrency

  void validate() const;
};

struct IterationReport {
  int iteration = 0;
  int kappa = 0;
  std::vector<NodeId> selected;
  int actions_requested = 0;
  int children_created = 0;
  int shortfall = 0;  // requested actions that produced no child
  int evaluations = 0;
  std::optional<double> v_max_final;
  std::chrono::duration<double, std::milli> wall_time{0};
};

/// Q + c * sqrt(ln N(s) / N(s,a)); +infinity when N(s,a) = 0.
double ucb_score(const EdgeStats& edge, std::uint64_t parent_visits, double exploration);

/// True once the node's completion reaches the threshold.
bool evaluation_gate(const StoryState& node, const StoryConfig& story, const SearchConfig& cfg);

/// Childless, not sterile, not at full depth.
bool is_expandable(const StoryState& node, const StoryConfig& story);

/// Seeded order among equal UCB scores; the smaller key wins.
std::uint64_t tie_break_key(std::uint64_t seed, NodeId id);

/**
 * Frontier for one iteration, in this order:
 *   1. ceil(beam_top_fraction * m) expandable leaves with the highest edge Q,
 *      among the m expandable leaves that have N > 0;
 *   2. beam_top_values expandable leaves with the highest evaluated V;
 *   3. UCB descents from a virtual super-root until the cap is reached. A
 *      descent only enters subtrees that still hold an unselected expandable
 *      leaf; equal scores go to the child with the smaller tie_break_key.
 * Ties in 1 and 2 go to the lower id. Throws SearchExhausted when nothing is
 * expandable.
 */
std::vector<NodeId> select_frontier(const SearchTree& tree, const SearchConfig& cfg);

struct SearchAgents {
  const PolicyModel* base = nullptr;     // required
  const PolicyModel* trained = nullptr;  // optional
  const SimulationModel* simulator = nullptr;
  const StateEvaluator* evaluator = nullptr;
};

struct ExpansionOutcome {
  std::vector<NodeId> children;
  int requested = 0;
  int shortfall = 0;
};

/// Which policy supplies action i of n: trained iff floor((i+1) r) > floor(i r).
std::vector<PolicySource> policy_assignment(int n, double mix_ratio, bool trained_available);

/// Single-node expansion on the calling thread. Marks the node sterile when no
/// usable action comes back.
ExpansionOutcome expand(SearchTree& tree, NodeId node, int iteration, const SearchConfig& cfg,
                        const SearchAgents& agents);

void backpropagate(SearchTree& tree, NodeId leaf, double value);

struct SearchResult {
  SearchTree tree;
  std::vector<IterationReport> reports;
};

using IterationCallback = std::function<void(const IterationReport&, const SearchTree&)>;

/**
 * Runs up to cfg.iterations iterations from one root per prompt. Stops early
 * when nothing is left to expand. Throws SearchExhausted if every root turns
 * out sterile.
 */
SearchResult run_search(const std::vector<std::string>& prompts, const SearchConfig& cfg,
                        const StoryConfig& story, const SearchAgents& agents,
                        const IterationCallback& on_iteration = {});

}  // namespace cosmos
