#include "cosmos/preference.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "cosmos/error.hpp"
#include "json.hpp"

namespace cosmos {

using nlohmann::json;

void MinerConfig::validate() const {
  if (!(min_gap >= 0.0)) throw InvalidArgument("min_gap must be >= 0");
  if (!(tradeoff >= 0.0 && tradeoff <= 1.0)) throw InvalidArgument("tradeoff must lie in [0, 1]");
  if (pairs_per_parent < 1) throw InvalidArgument("pairs_per_parent must be >= 1");
}

double pair_score(double q_chosen, double gap, double tradeoff) {
  return tradeoff * q_chosen + (1.0 - tradeoff) * gap;
}

std::vector<PreferencePair> mine_pairs(const SearchTree& tree, const MinerConfig& cfg,
                                       const PromptTemplates& templates,
                                       std::string_view tree_id) {
  cfg.validate();
  std::vector<PreferencePair> out;
  for (const auto& parent : tree.nodes()) {
    std::vector<NodeId> kids;
    for (NodeId c : parent.children)
      if (tree.node(c).stats.visits > 0) kids.push_back(c);
    if (kids.size() < 2) continue;
    std::sort(kids.begin(), kids.end());

    std::vector<PreferencePair> local;
    for (NodeId a : kids) {
      const auto& ca = tree.node(a);
      const double qa = ca.stats.action_value;
      if (!(qa > cfg.quality_floor)) continue;
      for (NodeId b : kids) {
        if (a == b) continue;
        const auto& cb = tree.node(b);
        const double gap = qa - cb.stats.action_value;
        if (!(gap >= cfg.min_gap) || ca.action.text == cb.action.text) continue;
        PreferencePair p;
        p.chosen = ca.action.text;
        p.rejected = cb.action.text;
        p.q_chosen = qa;
        p.q_rejected = cb.stats.action_value;
        p.score = pair_score(qa, gap, cfg.tradeoff);
        p.tree_id = std::string(tree_id);
        p.parent_id = parent.id;
        p.chosen_id = a;
        p.rejected_id = b;
        local.push_back(std::move(p));
      }
    }
    std::sort(local.begin(), local.end(), [](const PreferencePair& x, const PreferencePair& y) {
      if (x.score != y.score) return x.score > y.score;
      if (x.chosen_id != y.chosen_id) return x.chosen_id < y.chosen_id;
      return x.rejected_id < y.rejected_id;
    });
    if (local.size() > static_cast<std::size_t>(cfg.pairs_per_parent))
      local.resize(static_cast<std::size_t>(cfg.pairs_per_parent));
    if (local.empty()) continue;
    const std::string prompt = render_policy_prompt(parent, templates);
    for (auto& p : local) {
      p.prompt = prompt;
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string to_jsonl(std::span<const PreferencePair> pairs) {
  std::string out;
  for (const auto& p : pairs) {
    json j = {{"schema_version", kPreferenceSchemaVersion},
              {"prompt", p.prompt},
              {"chosen", p.chosen},
              {"rejected", p.rejected},
              {"q_chosen", p.q_chosen},
              {"q_rejected", p.q_rejected},
              {"score", p.score},
              {"tree_id", p.tree_id},
              {"parent_id", p.parent_id}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PreferencePair> parse_jsonl(std::string_view document) {
  std::vector<PreferencePair> out;
  std::istringstream in{std::string(document)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      if (j.at("schema_version").get<int>() != kPreferenceSchemaVersion)
        throw ParseError("unsupported schema_version");
      PreferencePair p;
      p.prompt = j.at("prompt").get<std::string>();
      p.chosen = j.at("chosen").get<std::string>();
      p.rejected = j.at("rejected").get<std::string>();
      p.q_chosen = j.at("q_chosen").get<double>();
      p.q_rejected = j.at("q_rejected").get<double>();
      p.score = j.at("score").get<double>();
      p.tree_id = j.at("tree_id").get<std::string>();
      p.parent_id = j.at("parent_id").get<NodeId>();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw ParseError("preference line " + std::to_string(lineno) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError("preference line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw Error("SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xF];
  }
  return out;
}

std::string dataset_manifest(std::span<const PreferencePair> pairs, const MinerConfig& cfg,
                             std::string_view source_digest) {
  std::set<std::pair<std::string, NodeId>> parents;
  for (const auto& p : pairs) parents.emplace(p.tree_id, p.parent_id);
  json m = {{"schema_version", kPreferenceSchemaVersion},
            {"config",
             {{"min_gap", cfg.min_gap},
              {"quality_floor", cfg.quality_floor},
              {"tradeoff", cfg.tradeoff},
              {"pairs_per_parent", cfg.pairs_per_parent}}},
            {"pairs", pairs.size()},
            {"parents", parents.size()},
            {"dataset_sha256", sha256_hex(to_jsonl(pairs))},
            {"source_tree_sha256", std::string(source_digest)}};
  return m.dump(2) + "\n";
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << text;
  out.close();
  if (!out) throw Error("failed writing " + path.string());
}

}  // namespace

void export_dataset(std::span<const PreferencePair> pairs, const MinerConfig& cfg,
                    std::string_view source_digest, const std::filesystem::path& path) {
  if (pairs.empty()) throw InvalidArgument("no preference pairs to export");
  write_file(path, to_jsonl(pairs));
  write_file(path.string() + ".manifest.json", dataset_manifest(pairs, cfg, source_digest));
}

std::vector<PreferencePair> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_jsonl(buf.str());
}

}  // namespace cosmos
