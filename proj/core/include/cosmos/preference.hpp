#pragma once

/**
 * Mining chosen/rejected action pairs from a finished search tree.
 *
 * For every parent, each ordered pair of visited sibling edges (a, b) is a
 * candidate when Q(a) - Q(b) >= min_gap, Q(a) > quality_floor and the action
 * texts differ. Candidates are scored with
 *     score = tradeoff * Q(a) + (1 - tradeoff) * (Q(a) - Q(b))
 * and the best pairs_per_parent of each parent are kept.
 *
 * The dataset file is JSONL, one object per pair:
 *   {"schema_version":1, "prompt":..., "chosen":..., "rejected":...,
 *    "q_chosen":..., "q_rejected":..., "score":..., "tree_id":..., "parent_id":...}
 * and is accompanied by "<file>.manifest.json".
 */

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cosmos/prompts.hpp"
#include "cosmos/story_tree.hpp"

namespace cosmos {

struct MinerConfig {
  double min_gap = 0.02;
  double quality_floor = 0.5;
  double tradeoff = 0.5;
  int pairs_per_parent = 3;

  void validate() const;
};

struct PreferencePair {
  std::string prompt;  // policy prompt rendered for the parent state
  std::string chosen;
  std::string rejected;
  double q_chosen = 0.0;
  double q_rejected = 0.0;
  double score = 0.0;
  std::string tree_id;
  NodeId parent_id = 0;
  NodeId chosen_id = 0;    // not serialized
  NodeId rejected_id = 0;  // not serialized

  friend bool operator==(const PreferencePair&, const PreferencePair&) = default;
};

double pair_score(double q_chosen, double gap, double tradeoff);

/// Pairs ordered by parent id, then score (descending), chosen id, rejected id.
std::vector<PreferencePair> mine_pairs(const SearchTree& tree, const MinerConfig& cfg,
                                       const PromptTemplates& templates = PromptTemplates::defaults(),
                                       std::string_view tree_id = {});

inline constexpr int kPreferenceSchemaVersion = 1;

std::string to_jsonl(std::span<const PreferencePair> pairs);
/// Throws ParseError on a line that does not match the schema.
std::vector<PreferencePair> parse_jsonl(std::string_view document);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view data);

/// Manifest document: config, pair/parent counts, dataset and source digests.
std::string dataset_manifest(std::span<const PreferencePair> pairs, const MinerConfig& cfg,
                             std::string_view source_digest);

/// Writes `path` and `path` + ".manifest.json". Throws InvalidArgument on an
/// empty pair list and Error when the files cannot be written.
void export_dataset(std::span<const PreferencePair> pairs, const MinerConfig& cfg,
                    std::string_view source_digest, const std::filesystem::path& path);

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path);

}  // namespace cosmos
