#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <regex>

#include "cosmos/error.hpp"
#include "cosmos/story_tree.hpp"
#include "test_support.hpp"

using namespace cosmos;

namespace {

std::vector<std::string> four(const std::string& tag) {
  return {tag + " one", tag + " two", tag + " three", tag + " four"};
}

// Recomputes every edge from the log with plain sums, independent of the tree code.
std::map<NodeId, EdgeStats> recount(const SearchTree& tree) {
  std::map<NodeId, EdgeStats> out;
  for (const auto& ev : tree.evaluation_log()) {
    for (std::optional<NodeId> n = ev.node; n && tree.node(*n).parent; n = tree.node(*n).parent) {
      auto& e = out[*n];
      e.visits += 1;
      e.cumulative_value += ev.value;
    }
  }
  for (auto& [id, e] : out) e.action_value = e.cumulative_value / static_cast<double>(e.visits);
  return out;
}

}  // namespace

TEST_CASE("story config defaults and validation") {
  StoryConfig cfg;
  CHECK(cfg.total_bullets == 32);
  CHECK(cfg.bullets_per_step == 4);
  CHECK(cfg.max_depth == 8);
  CHECK_NOTHROW(cfg.validate());
  CHECK_THROWS_AS((StoryConfig{30, 4, 8}.validate()), InvalidArgument);
}

TEST_CASE("add_child builds depth, bullets and a fresh edge") {
  SearchTree tree;
  const auto root = tree.add_root("A lighthouse keeper finds a letter.");
  const auto child = tree.add_child(root, {"Reveal the sender", PolicySource::base}, four("a"));
  const auto& c = tree.node(child);
  CHECK(c.depth == 1);
  CHECK(c.bullets.size() == 4);
  CHECK(c.cot_history == std::vector<std::string>{"Reveal the sender"});
  CHECK(c.stats == EdgeStats{});
  CHECK(c.parent == root);
  CHECK(tree.node(root).children == std::vector<NodeId>{child});
  CHECK(c.prompt == tree.node(root).prompt);
}

TEST_CASE("add_child rejects bad input") {
  SearchTree tree;
  const auto root = tree.add_root("p");
  CHECK_THROWS_AS(tree.add_child(99, {"x", PolicySource::base}, four("a")), NotFound);
  CHECK_THROWS_AS(tree.add_child(root, {"x", PolicySource::base}, {"a", "b", "c"}),
                  InvalidArgument);
  CHECK_THROWS_AS(tree.add_child(root, {"", PolicySource::base}, four("a")), InvalidArgument);

  NodeId cur = root;
  for (int d = 0; d < 8; ++d) cur = tree.add_child(cur, {"step", PolicySource::base}, four("s"));
  CHECK(tree.node(cur).depth == 8);
  try {
    tree.add_child(cur, {"beyond", PolicySource::base}, four("s"));
    FAIL("expected depth overflow");
  } catch (const InvalidArgument& e) {
    CHECK(std::string(e.what()).find("depth overflow") != std::string::npos);
  }
}

TEST_CASE("completion fraction lands on the checkpoint levels") {
  SearchTree tree;
  NodeId cur = tree.add_root("p");
  std::vector<double> seen{completion_fraction(tree.node(cur), tree.config())};
  for (int d = 0; d < 8; ++d) {
    cur = tree.add_child(cur, {"a", PolicySource::base}, four("s"));
    seen.push_back(completion_fraction(tree.node(cur), tree.config()));
  }
  CHECK(seen[0] == 0.0);
  CHECK(seen[4] == 0.5);
  CHECK(seen[5] == 0.625);
  CHECK(seen[6] == 0.75);
  CHECK(seen[7] == 0.875);
  CHECK(seen[8] == 1.0);
  CHECK(std::is_sorted(seen.begin(), seen.end()));
}

TEST_CASE("backpropagate applies the running mean along the root path") {
  SearchTree tree(StoryConfig{2, 1, 2});
  const auto r = tree.add_root("p");
  const auto a = tree.add_child(r, {"a", PolicySource::base}, {"x"});
  const auto b = tree.add_child(a, {"b", PolicySource::base}, {"y"});
  tree.backpropagate(b, 0.6);
  CHECK(tree.node(a).stats.visits == 1);
  CHECK(tree.node(a).stats.cumulative_value == doctest::Approx(0.6));
  CHECK(tree.node(b).stats.action_value == doctest::Approx(0.6));
  tree.backpropagate(b, 0.8);
  CHECK(tree.node(b).stats.visits == 2);
  CHECK(tree.node(b).stats.cumulative_value == doctest::Approx(1.4));
  CHECK(tree.node(a).stats.action_value == doctest::Approx(0.7));
  CHECK_THROWS_AS(tree.backpropagate(b, 1.2), InvalidArgument);
  CHECK_THROWS_AS(tree.backpropagate(b, -0.1), InvalidArgument);
  CHECK(tree.evaluation_log().size() == 2);
}

TEST_CASE("replay of the evaluation log reproduces every edge") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto tree = testing::random_tree(60, seed, false, 2);
    const auto replay = tree.replay_stats();
    const auto oracle = recount(tree);
    for (const auto& n : tree.nodes()) {
      CHECK(replay[n.id] == n.stats);
      if (n.is_root()) continue;
      const auto it = oracle.find(n.id);
      const EdgeStats expected = it == oracle.end() ? EdgeStats{} : it->second;
      CHECK(n.stats.visits == expected.visits);
      CHECK(n.stats.cumulative_value == doctest::Approx(expected.cumulative_value).epsilon(1e-12));
      if (n.stats.visits) {
        CHECK(n.stats.action_value == n.stats.cumulative_value / n.stats.visits);
        CHECK(n.stats.cumulative_value <= static_cast<double>(n.stats.visits));
      } else {
        CHECK(n.stats.cumulative_value == 0.0);
      }
    }
  }
}

TEST_CASE("root edge visits sum to the evaluations under each root") {
  const auto tree = testing::random_tree(80, 3, true, 3);
  for (NodeId r : tree.roots()) {
    std::uint64_t visits = 0;
    for (NodeId c : tree.node(r).children) visits += tree.node(c).stats.visits;
    const auto under = std::count_if(tree.evaluation_log().begin(), tree.evaluation_log().end(),
                                     [&](const auto& e) { return tree.root_of(e.node) == r; });
    CHECK(visits == static_cast<std::uint64_t>(under));
  }
}

TEST_CASE("final values pick max and min with lowest-id ties") {
  SearchTree tree(StoryConfig{2, 1, 2});
  const auto r = tree.add_root("p");
  const auto a = tree.add_child(r, {"a", PolicySource::base}, {"x"});
  CHECK_THROWS_AS(final_values(tree), NoFinalEvaluation);
  CHECK_FALSE(max_final_value(tree).has_value());
  const auto l1 = tree.add_child(a, {"b", PolicySource::base}, {"y"});
  const auto l2 = tree.add_child(a, {"c", PolicySource::base}, {"z"});
  const auto l3 = tree.add_child(a, {"d", PolicySource::base}, {"w"});
  tree.set_evaluated_value(a, 0.99);  // not full depth, ignored
  tree.set_evaluated_value(l1, 0.52);
  tree.set_evaluated_value(l2, 0.64);
  tree.set_evaluated_value(l3, 0.64);
  const auto f = final_values(tree);
  CHECK(f.v_max == 0.64);
  CHECK(f.v_min == 0.52);
  CHECK(f.argmax == l2);
  CHECK(f.argmin == l1);
  CHECK(max_final_value(tree) == 0.64);
  CHECK_THROWS_AS(tree.set_evaluated_value(l1, 1.5), InvalidArgument);
}

TEST_CASE("single completed leaf gives equal max and min") {
  SearchTree tree(StoryConfig{1, 1, 1});
  const auto r = tree.add_root("p");
  const auto l = tree.add_child(r, {"a", PolicySource::base}, {"x"});
  tree.set_evaluated_value(l, 0.7);
  const auto f = final_values(tree);
  CHECK(f.v_max == 0.7);
  CHECK(f.v_min == 0.7);
}

TEST_CASE("json export round trip keeps structure and statistics") {
  auto tree = testing::random_tree(50, 11, false, 2);
  tree.set_evaluated_value(5, 0.25);
  tree.mark_sterile(7);
  const auto doc = export_tree(tree, ExportFormat::json);
  CHECK(doc.find("\"schema_version\": 1") != std::string::npos);
  const auto back = import_tree_json(doc);
  REQUIRE(back.size() == tree.size());
  for (const auto& n : tree.nodes()) {
    const auto& m = back.node(n.id);
    CHECK(m.stats == n.stats);
    CHECK(m.bullets == n.bullets);
    CHECK(m.cot_history == n.cot_history);
    CHECK(m.depth == n.depth);
    CHECK(m.evaluated_value == n.evaluated_value);
    CHECK(m.sterile == n.sterile);
    CHECK(m.action.text == n.action.text);
    CHECK(m.action.source == n.action.source);
    CHECK(m.children == n.children);
  }
  CHECK(back.evaluation_log().size() == tree.evaluation_log().size());
  CHECK(export_tree(back, ExportFormat::json) == doc);
}

TEST_CASE("import rejects malformed documents") {
  CHECK_THROWS_AS(import_tree_json("not json"), ParseError);
  CHECK_THROWS_AS(import_tree_json(R"({"schema_version": 2})"), ParseError);
  auto doc = export_tree(testing::random_tree(5, 1), ExportFormat::json);
  const auto pos = doc.find("\"depth\": 1");
  REQUIRE(pos != std::string::npos);
  doc.replace(pos, 10, "\"depth\": 5");
  CHECK_THROWS_AS(import_tree_json(doc), ParseError);
}

TEST_CASE("empty tree exports valid documents") {
  SearchTree tree;
  const auto json = export_tree(tree, ExportFormat::json);
  CHECK(import_tree_json(json).size() == 0);
  const auto dot = export_tree(tree, ExportFormat::dot);
  CHECK(dot.rfind("digraph", 0) == 0);
  CHECK(dot.find("->") == std::string::npos);
}

TEST_CASE("dot export of a chain has one vertex per node and one arc per edge") {
  SearchTree tree(StoryConfig{2, 1, 2});
  const auto r = tree.add_root("p");
  const auto a = tree.add_child(r, {"a", PolicySource::base}, {"x"});
  const auto b = tree.add_child(a, {"b \"quoted\"", PolicySource::trained}, {"y"});
  tree.set_evaluated_value(b, 0.9);
  tree.backpropagate(b, 0.9);
  const auto dot = export_tree(tree, ExportFormat::dot);
  const std::regex vertex(R"(\n\s*n\d+ \[)"), arc(R"(n\d+ -> n\d+)");
  CHECK(std::distance(std::sregex_iterator(dot.begin(), dot.end(), vertex), {}) == 3);
  CHECK(std::distance(std::sregex_iterator(dot.begin(), dot.end(), arc), {}) == 2);
  CHECK(dot.find("penwidth=3") != std::string::npos);
}

TEST_CASE("render_story writes one dash line per bullet") {
  SearchTree tree(StoryConfig{2, 1, 2});
  const auto r = tree.add_root("p");
  const auto a = tree.add_child(r, {"a", PolicySource::base}, {"First."});
  const auto b = tree.add_child(a, {"b", PolicySource::base}, {"Second."});
  CHECK(render_story(tree.node(b)) == "- First.\n- Second.\n");
}
