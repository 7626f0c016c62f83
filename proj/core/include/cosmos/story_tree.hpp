#pragma once

/**
 * Search-tree data model.
 *
 * A SearchTree is a forest of story states. Each non-root node owns the edge
 * that leads to it from its parent: the plot action that was applied and the
 * (N, W, Q) statistics accumulated for that action. Nodes are append-only;
 * only edge statistics change after creation, and only through
 * backpropagate(), which also appends to the evaluation log so the statistics
 * can always be rebuilt from scratch.
 */

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cosmos {

using NodeId = std::uint32_t;

enum class PolicySource { base, trained };

std::string_view to_string(PolicySource source);
PolicySource policy_source_from_string(std::string_view text);

struct StoryConfig {
  int total_bullets = 32;
  int bullets_per_step = 4;
  int max_depth = 8;

  /// Throws InvalidArgument unless total_bullets == bullets_per_step * max_depth.
  void validate() const;
};

struct PlotAction {
  std::string text;
  PolicySource source = PolicySource::base;
};

/// Visit statistics of the edge (parent, action) -> child.
struct EdgeStats {
  std::uint64_t visits = 0;
  double cumulative_value = 0.0;
  double action_value = 0.0;

  friend bool operator==(const EdgeStats&, const EdgeStats&) = default;
};

struct StoryState {
  NodeId id = 0;
  std::optional<NodeId> parent;
  std::string prompt;  // premise of the root this state descends from
  std::vector<std::string> bullets;
  std::vector<std::string> cot_history;
  int depth = 0;
  std::optional<double> evaluated_value;
  bool sterile = false;  // expansion produced no usable action

  // Incoming edge; meaningless on roots.
  PlotAction action;
  EdgeStats stats;

  std::vector<NodeId> children;

  bool is_root() const { return !parent.has_value(); }
};

struct EvaluationRecord {
  NodeId node = 0;
  double value = 0.0;
};

struct FinalValues {
  double v_max = 0.0;
  double v_min = 0.0;
  NodeId argmax = 0;
  NodeId argmin = 0;
};

class SearchTree {
 public:
  explicit SearchTree(StoryConfig config = {});

  const StoryConfig& config() const { return config_; }

  NodeId add_root(std::string prompt);

  /// Appends a child reached by `action`. The child's bullets are the parent's
  /// plus `new_bullets`, which must hold exactly bullets_per_step entries.
  NodeId add_child(NodeId parent, PlotAction action,
                   std::vector<std::string> new_bullets);

  const StoryState& node(NodeId id) const;
  bool contains(NodeId id) const { return id < nodes_.size(); }
  std::size_t size() const { return nodes_.size(); }
  std::span<const StoryState> nodes() const { return nodes_; }
  std::span<const NodeId> roots() const { return roots_; }
  std::span<const EvaluationRecord> evaluation_log() const { return log_; }

  /// Root-first list of node ids ending at `id`.
  std::vector<NodeId> path_to(NodeId id) const;
  NodeId root_of(NodeId id) const;

  /// Records V for a node without touching any edge statistics.
  void set_evaluated_value(NodeId id, double value);
  void mark_sterile(NodeId id);

  /// N+1, W+V, Q=W/N on every edge from the root down to `leaf`; logs (leaf, V).
  void backpropagate(NodeId leaf, double value);

  /// Rebuilds every EdgeStats by replaying the evaluation log on zeroed stats.
  std::vector<EdgeStats> replay_stats() const;

 private:
  void apply(NodeId leaf, double value);

  StoryConfig config_;
  std::vector<StoryState> nodes_;
  std::vector<NodeId> roots_;
  std::vector<EvaluationRecord> log_;

  friend SearchTree import_tree_json(std::string_view);
};

/// depth / D.
double completion_fraction(const StoryState& node, const StoryConfig& config);

/// Max and min evaluated value over full-depth nodes; ties go to the lowest id.
/// Throws NoFinalEvaluation when no full-depth node has been evaluated.
FinalValues final_values(const SearchTree& tree);

/// Highest evaluated value among full-depth nodes, if any.
std::optional<double> max_final_value(const SearchTree& tree);

enum class ExportFormat { json, dot };

std::string export_tree(const SearchTree& tree, ExportFormat format);
SearchTree import_tree_json(std::string_view document);

/// The story of a node as newline separated "- bullet" lines.
std::string render_story(const StoryState& node);

}  // namespace cosmos
