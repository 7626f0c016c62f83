#pragma once

// Independent restatements used as oracles: exhaustive pair enumeration for
// the preference miner and exhaustive sign enumeration for the signed-rank test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <tuple>
#include <vector>

#include "cosmos/analytics.hpp"
#include "cosmos/preference.hpp"
#include "cosmos/story_tree.hpp"

namespace testing {

struct Candidate {
  cosmos::NodeId parent, chosen, rejected;
  double score;
};

// Every ordered pair in the whole tree, filtered, then ranked per parent.
inline std::vector<Candidate> brute_force_pairs(const cosmos::SearchTree& tree, const cosmos::MinerConfig& cfg) {
  std::vector<Candidate> all;
  for (const auto& a : tree.nodes())
    for (const auto& b : tree.nodes()) {
      if (a.id == b.id || a.is_root() || b.is_root() || a.parent != b.parent) continue;
      if (a.stats.visits == 0 || b.stats.visits == 0) continue;
      const double qa = a.stats.action_value, qb = b.stats.action_value;
      if (qa - qb < cfg.min_gap || qa <= cfg.quality_floor) continue;
      if (a.action.text == b.action.text) continue;
      all.push_back({*a.parent, a.id, b.id, cfg.tradeoff * qa + (1 - cfg.tradeoff) * (qa - qb)});
    }
  std::sort(all.begin(), all.end(), [](const Candidate& x, const Candidate& y) {
    return std::tie(x.parent, y.score, x.chosen, x.rejected) <
           std::tie(y.parent, x.score, y.chosen, y.rejected);
  });
  std::vector<Candidate> kept;
  std::map<cosmos::NodeId, int> per_parent;
  for (const auto& c : all)
    if (per_parent[c.parent]++ < cfg.pairs_per_parent) kept.push_back(c);
  return kept;
}

// Exhaustive sign enumeration over independently computed average ranks.
inline cosmos::WilcoxonResult enumerate_signed_ranks(const std::vector<double>& diffs) {
  std::vector<double> d;
  for (double x : diffs)
    if (x != 0) d.push_back(x);
  const std::size_t n = d.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += std::abs(d[j]) < std::abs(d[i]);
      equal += std::abs(d[j]) == std::abs(d[i]);
    }
    rank[i] = less + (equal + 1) / 2.0;
  }
  cosmos::WilcoxonResult w;
  for (std::size_t i = 0; i < n; ++i) (d[i] > 0 ? w.w_plus : w.w_minus) += rank[i];
  w.statistic = std::min(w.w_plus, w.w_minus);
  std::size_t at_most = 0;
  for (std::uint64_t mask = 0; mask < (1ULL << n); ++mask) {
    double plus = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1) plus += rank[i];
    at_most += plus <= w.statistic + 1e-9;
  }
  w.p_value = std::min(1.0, 2.0 * static_cast<double>(at_most) / std::ldexp(1.0, static_cast<int>(n)));
  w.nonzero = n;
  return w;
}

}  // namespace testing
