#include "cosmos/story_tree.hpp"

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <sstream>

#include "cosmos/error.hpp"
#include "json.hpp"

namespace cosmos {

using nlohmann::json;

std::string_view to_string(PolicySource source) {
  return source == PolicySource::trained ? "trained" : "base";
}

PolicySource policy_source_from_string(std::string_view text) {
  if (text == "base") return PolicySource::base;
  if (text == "trained") return PolicySource::trained;
  throw ParseError("unknown policy source '" + std::string(text) + "'");
}

void StoryConfig::validate() const {
  if (bullets_per_step < 1 || max_depth < 1)
    throw InvalidArgument("bullets_per_step and max_depth must be positive");
  if (total_bullets != bullets_per_step * max_depth)
    throw InvalidArgument("total_bullets must equal bullets_per_step * max_depth");
}

SearchTree::SearchTree(StoryConfig config) : config_(config) {
  config_.validate();
}

NodeId SearchTree::add_root(std::string prompt) {
  StoryState root;
  root.id = static_cast<NodeId>(nodes_.size());
  root.prompt = std::move(prompt);
  nodes_.push_back(std::move(root));
  roots_.push_back(nodes_.back().id);
  return nodes_.back().id;
}

NodeId SearchTree::add_child(NodeId parent, PlotAction action,
                             std::vector<std::string> new_bullets) {
  if (!contains(parent))
    throw NotFound("unknown parent id " + std::to_string(parent));
  if (nodes_[parent].depth >= config_.max_depth)
    throw InvalidArgument("depth overflow: parent " + std::to_string(parent) +
                          " is already at max depth");
  if (static_cast<int>(new_bullets.size()) != config_.bullets_per_step)
    throw InvalidArgument("expected " + std::to_string(config_.bullets_per_step) +
                          " bullets, got " + std::to_string(new_bullets.size()));
  if (action.text.empty()) throw InvalidArgument("plot action text is empty");

  const StoryState& p = nodes_[parent];
  StoryState child;
  child.id = static_cast<NodeId>(nodes_.size());
  child.parent = parent;
  child.prompt = p.prompt;
  child.bullets = p.bullets;
  for (auto& b : new_bullets) child.bullets.push_back(std::move(b));
  child.cot_history = p.cot_history;
  child.cot_history.push_back(action.text);
  child.depth = p.depth + 1;
  child.action = std::move(action);

  const NodeId id = child.id;
  nodes_.push_back(std::move(child));
  nodes_[parent].children.push_back(id);
  return id;
}

const StoryState& SearchTree::node(NodeId id) const {
  if (!contains(id)) throw NotFound("unknown node id " + std::to_string(id));
  return nodes_[id];
}

std::vector<NodeId> SearchTree::path_to(NodeId id) const {
  std::vector<NodeId> path;
  std::optional<NodeId> cur = node(id).id;
  while (cur) {
    path.push_back(*cur);
    cur = nodes_[*cur].parent;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

NodeId SearchTree::root_of(NodeId id) const {
  NodeId cur = node(id).id;
  while (nodes_[cur].parent) cur = *nodes_[cur].parent;
  return cur;
}

void SearchTree::set_evaluated_value(NodeId id, double value) {
  if (!contains(id)) throw NotFound("unknown node id " + std::to_string(id));
  if (!(value >= 0.0 && value <= 1.0))
    throw InvalidArgument("value must lie in [0,1]");
  nodes_[id].evaluated_value = value;
}

void SearchTree::mark_sterile(NodeId id) {
  if (!contains(id)) throw NotFound("unknown node id " + std::to_string(id));
  nodes_[id].sterile = true;
}

void SearchTree::apply(NodeId leaf, double value) {
  std::optional<NodeId> cur = leaf;
  while (cur && nodes_[*cur].parent) {
    EdgeStats& s = nodes_[*cur].stats;
    s.visits += 1;
    s.cumulative_value += value;
    s.action_value = s.cumulative_value / static_cast<double>(s.visits);
    cur = nodes_[*cur].parent;
  }
}

void SearchTree::backpropagate(NodeId leaf, double value) {
  if (!contains(leaf)) throw NotFound("unknown node id " + std::to_string(leaf));
  if (!(value >= 0.0 && value <= 1.0))
    throw InvalidArgument("backpropagated value must lie in [0,1]");
  apply(leaf, value);
  log_.push_back({leaf, value});
}

std::vector<EdgeStats> SearchTree::replay_stats() const {
  std::vector<EdgeStats> stats(nodes_.size());
  for (const auto& rec : log_) {
    std::optional<NodeId> cur = rec.node;
    while (cur && nodes_[*cur].parent) {
      EdgeStats& s = stats[*cur];
      s.visits += 1;
      s.cumulative_value += rec.value;
      s.action_value = s.cumulative_value / static_cast<double>(s.visits);
      cur = nodes_[*cur].parent;
    }
  }
  return stats;
}

double completion_fraction(const StoryState& node, const StoryConfig& config) {
  return static_cast<double>(node.depth) / static_cast<double>(config.max_depth);
}

std::optional<double> max_final_value(const SearchTree& tree) {
  std::optional<double> best;
  for (const auto& n : tree.nodes()) {
    if (n.depth != tree.config().max_depth || !n.evaluated_value) continue;
    if (!best || *n.evaluated_value > *best) best = n.evaluated_value;
  }
  return best;
}

FinalValues final_values(const SearchTree& tree) {
  std::optional<FinalValues> out;
  // Nodes are visited in id order, so strict comparisons keep the lowest id on ties.
  for (const auto& n : tree.nodes()) {
    if (n.depth != tree.config().max_depth || !n.evaluated_value) continue;
    const double v = *n.evaluated_value;
    if (!out) {
      out = FinalValues{v, v, n.id, n.id};
      continue;
    }
    if (v > out->v_max) {
      out->v_max = v;
      out->argmax = n.id;
    }
    if (v < out->v_min) {
      out->v_min = v;
      out->argmin = n.id;
    }
  }
  if (!out) throw NoFinalEvaluation("no final-depth evaluation in tree");
  return *out;
}

std::string render_story(const StoryState& node) {
  std::string out;
  for (const auto& b : node.bullets) {
    out += "- ";
    out += b;
    out += '\n';
  }
  return out;
}

namespace {

constexpr int kTreeSchemaVersion = 1;

std::size_t step_size(const StoryState& n) {
  return n.depth == 0 ? n.bullets.size() : n.bullets.size() / static_cast<std::size_t>(n.depth);
}

json node_to_json(const StoryState& n) {
  json j;
  j["id"] = n.id;
  j["parent"] = n.parent ? json(*n.parent) : json(nullptr);
  j["prompt"] = n.prompt;
  j["depth"] = n.depth;
  // Only this step's bullets; the full story is the concatenation along the path.
  const std::size_t inherited = n.bullets.size() - std::min(n.bullets.size(), step_size(n));
  j["step_bullets"] = std::vector<std::string>(n.bullets.begin() + static_cast<std::ptrdiff_t>(inherited),
                                               n.bullets.end());
  j["value"] = n.evaluated_value ? json(*n.evaluated_value) : json(nullptr);
  j["sterile"] = n.sterile;
  if (n.parent) {
    j["action"] = {{"text", n.action.text}, {"source", to_string(n.action.source)}};
    j["stats"] = {{"N", n.stats.visits},
                  {"W", n.stats.cumulative_value},
                  {"Q", n.stats.action_value}};
  }
  j["children"] = n.children;
  return j;
}

std::string json_document(const SearchTree& tree) {
  json doc;
  doc["schema_version"] = kTreeSchemaVersion;
  doc["config"] = {{"total_bullets", tree.config().total_bullets},
                   {"bullets_per_step", tree.config().bullets_per_step},
                   {"max_depth", tree.config().max_depth}};
  doc["roots"] = std::vector<NodeId>(tree.roots().begin(), tree.roots().end());
  json nodes = json::array();
  for (const auto& n : tree.nodes()) nodes.push_back(node_to_json(n));
  doc["nodes"] = std::move(nodes);
  json log = json::array();
  for (const auto& r : tree.evaluation_log()) log.push_back({r.node, r.value});
  doc["evaluation_log"] = std::move(log);
  return doc.dump(1);
}

std::string q_color(const StoryState& n) {
  if (n.is_root()) return "white";
  if (n.stats.visits == 0) return "gray80";
  static const char* kBuckets[] = {"#d73027", "#fc8d59", "#fee08b", "#91cf60", "#1a9850"};
  int bucket = static_cast<int>(n.stats.action_value * 5.0);
  bucket = std::clamp(bucket, 0, 4);
  return kBuckets[bucket];
}

std::string dot_document(const SearchTree& tree) {
  std::vector<bool> on_best_path(tree.size(), false);
  std::optional<NodeId> best;
  if (max_final_value(tree)) {
    best = final_values(tree).argmax;
  } else {
    for (const auto& n : tree.nodes())
      if (n.evaluated_value &&
          (!best || *n.evaluated_value > *tree.node(*best).evaluated_value))
        best = n.id;
  }
  if (best)
    for (NodeId id : tree.path_to(*best)) on_best_path[id] = true;

  std::ostringstream out;
  out << "digraph search_tree {\n";
  out << "  node [shape=circle, style=filled, fontsize=8];\n";
  for (const auto& n : tree.nodes()) {
    char q[32];
    std::snprintf(q, sizeof q, "%.3f", n.stats.action_value);
    out << "  n" << n.id << " [label=\"" << n.id;
    if (!n.is_root()) out << "\\nQ=" << q << "\\nN=" << n.stats.visits;
    out << "\", fillcolor=\"" << q_color(n) << "\"";
    if (on_best_path[n.id]) out << ", penwidth=3, color=\"#2c7bb6\"";
    out << "];\n";
  }
  for (const auto& n : tree.nodes()) {
    if (!n.parent) continue;
    out << "  n" << *n.parent << " -> n" << n.id;
    if (on_best_path[n.id]) out << " [penwidth=3, color=\"#2c7bb6\"]";
    out << ";\n";
  }
  out << "}\n";
  return out.str();
}

}  // namespace

std::string export_tree(const SearchTree& tree, ExportFormat format) {
  return format == ExportFormat::json ? json_document(tree) : dot_document(tree);
}

SearchTree import_tree_json(std::string_view document) {
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw ParseError(std::string("tree document is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("schema_version").get<int>() != kTreeSchemaVersion)
      throw ParseError("unsupported tree schema_version");
    StoryConfig cfg;
    const auto& c = doc.at("config");
    cfg.total_bullets = c.at("total_bullets").get<int>();
    cfg.bullets_per_step = c.at("bullets_per_step").get<int>();
    cfg.max_depth = c.at("max_depth").get<int>();
    SearchTree tree(cfg);

    for (const auto& jn : doc.at("nodes")) {
      StoryState n;
      n.id = jn.at("id").get<NodeId>();
      if (n.id != tree.nodes_.size()) throw ParseError("node ids must be dense and ordered");
      if (!jn.at("parent").is_null()) {
        n.parent = jn.at("parent").get<NodeId>();
        if (*n.parent >= n.id) throw ParseError("parent must precede child");
        n.action.text = jn.at("action").at("text").get<std::string>();
        n.action.source =
            policy_source_from_string(jn.at("action").at("source").get<std::string>());
        n.stats.visits = jn.at("stats").at("N").get<std::uint64_t>();
        n.stats.cumulative_value = jn.at("stats").at("W").get<double>();
        n.stats.action_value = jn.at("stats").at("Q").get<double>();
      }
      n.prompt = jn.at("prompt").get<std::string>();
      n.depth = jn.at("depth").get<int>();
      auto step = jn.at("step_bullets").get<std::vector<std::string>>();
      if (n.parent) {
        const StoryState& p = tree.nodes_.at(*n.parent);
        if (n.depth != p.depth + 1) throw ParseError("depth must be parent depth + 1");
        n.bullets = p.bullets;
        n.cot_history = p.cot_history;
        n.cot_history.push_back(n.action.text);
      } else if (n.depth != 0) {
        throw ParseError("root depth must be 0");
      }
      for (auto& b : step) n.bullets.push_back(std::move(b));
      if (!jn.at("value").is_null()) n.evaluated_value = jn.at("value").get<double>();
      n.sterile = jn.at("sterile").get<bool>();
      n.children = jn.at("children").get<std::vector<NodeId>>();
      tree.nodes_.push_back(std::move(n));
    }
    tree.roots_ = doc.at("roots").get<std::vector<NodeId>>();
    for (const auto& r : doc.at("evaluation_log"))
      tree.log_.push_back({r.at(0).get<NodeId>(), r.at(1).get<double>()});
    for (const auto& n : tree.nodes_)
      for (NodeId c : n.children)
        if (c >= tree.nodes_.size() || tree.nodes_[c].parent != n.id)
          throw ParseError("inconsistent child list for node " + std::to_string(n.id));
    return tree;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed tree document: ") + e.what());
  }
}

}  // namespace cosmos
