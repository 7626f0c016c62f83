#include "cosmos/backend.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <thread>

#include "cosmos/error.hpp"
#include "cosmos/prompts.hpp"
#include "hashing.hpp"
#include "httplib.h"
#include "json.hpp"

namespace cosmos {

using nlohmann::json;

namespace {

constexpr std::string_view kRoleNames[] = {"policy_base", "policy_trained", "simulator",
                                           "scorer",      "embedder",       "judge"};

constexpr std::string_view kWords[] = {
    "the",       "lighthouse", "keeper",    "discovers", "a",        "hidden",
    "letter",    "storm",      "village",   "secret",    "mother",   "returns",
    "after",     "years",      "betrayal",  "map",       "river",    "stranger",
    "arrives",   "at",         "night",     "old",       "promise",  "breaks",
    "friend",    "lies",       "about",     "fire",      "in",       "forest",
    "child",     "finds",      "key",       "to",        "locked",   "room",
    "captain",   "refuses",    "surrender", "ship",      "sinks",    "near",
    "coast",     "memory",     "fades",     "sister",    "confesses", "crime",
    "town",      "celebrates", "festival",  "while",     "thief",    "escapes",
    "with",      "crown",      "rival",     "challenges", "hero",    "duel",
    "winter",    "ends",       "hope",      "grows",     "garden",   "dies",
    "music",     "echoes",     "through",   "empty",     "hall",     "truth",
    "emerges",   "from",       "diary",     "soldier",   "deserts",  "army",
    "scientist", "builds",     "machine",   "that",      "remembers", "dreams",
    "wolf",      "guards",     "bridge",    "merchant",  "loses",    "fortune",
    "queen",     "hides",      "her",       "past",      "boy",      "learns",
    "fly"};
constexpr std::size_t kWordCount = sizeof(kWords) / sizeof(kWords[0]);

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::string lowercase_word(std::string_view w) {
  std::string out;
  for (char c : w)
    if (std::isalnum(static_cast<unsigned char>(c)))
      out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

int requested_bullets(std::string_view prompt) {
  static const std::regex kPattern(R"(exactly (\d+) (new )?bullet)");
  std::match_results<std::string_view::const_iterator> m;
  if (std::regex_search(prompt.begin(), prompt.end(), m, kPattern))
    return std::max(1, std::stoi(m[1].str()));
  return 1;
}

}  // namespace

std::string_view to_string(Role role) { return kRoleNames[static_cast<int>(role)]; }

Role role_from_string(std::string_view text) {
  for (int i = 0; i < 6; ++i)
    if (kRoleNames[i] == text) return static_cast<Role>(i);
  throw ParseError("unknown backend role '" + std::string(text) + "'");
}

bool is_generation_role(Role role) {
  return role == Role::policy_base || role == Role::policy_trained ||
         role == Role::simulator || role == Role::judge;
}

BackendConfig BackendConfig::for_role(Role role, std::string endpoint, std::string model) {
  BackendConfig cfg;
  cfg.role = role;
  cfg.endpoint = std::move(endpoint);
  cfg.model = std::move(model);
  cfg.temperature = role == Role::simulator ? 0.0 : 0.7;
  return cfg;
}

void LanguageService::require_generation_role() const {
  if (!is_generation_role(config_.role))
    throw InvalidArgument("backend role '" + std::string(to_string(config_.role)) +
                          "' cannot generate text");
}

void LanguageService::require_role(Role role) const {
  if (config_.role != role)
    throw InvalidArgument("operation needs a '" + std::string(to_string(role)) +
                          "' backend, got '" + std::string(to_string(config_.role)) + "'");
}

// ---------------------------------------------------------------------------
// Mock

MockService::MockService(BackendConfig config, MockOptions options)
    : LanguageService(std::move(config)), options_(std::move(options)) {
  if (options_.vocabulary < 2) throw InvalidArgument("mock vocabulary must be >= 2");
  if (options_.embedding_dim < 1) throw InvalidArgument("mock embedding_dim must be >= 1");
  if (options_.constant_probability &&
      !(*options_.constant_probability > 0.0 && *options_.constant_probability <= 1.0))
    throw InvalidArgument("mock constant probability must lie in (0,1]");
}

std::vector<std::string> MockService::tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    tokens.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return tokens;
}

std::string MockService::generate(std::string_view prompt, int sample) const {
  using detail::combine;
  const std::uint64_t base =
      combine(combine(options_.seed, detail::fnv1a(prompt)), static_cast<std::uint64_t>(sample));

  if (config().role == Role::judge) {
    std::string out = "Justification: the outline is evaluated on each criterion.\n\n```json\n{";
    for (std::size_t k = 0; k < 9; ++k) {
      const int score = 1 + static_cast<int>(combine(base, detail::fnv1a(kRubricKeys[k])) % 10);
      out += (k ? ", \"" : "\"") + std::string(kRubricKeys[k]) + "\": " + std::to_string(score);
    }
    out += "}\n```\n";
    return out;
  }

  const int lines = config().role == Role::simulator ? requested_bullets(prompt) : 1;
  std::string out;
  for (int line = 0; line < lines; ++line) {
    const std::uint64_t lh = combine(base, static_cast<std::uint64_t>(line) + 1);
    const int words = 8 + static_cast<int>(lh % 7);
    if (config().role == Role::simulator) out += "- ";
    for (int w = 0; w < words; ++w) {
      const std::uint64_t wh = combine(lh, static_cast<std::uint64_t>(w) + 101);
      std::string word(kWords[wh % kWordCount]);
      if (w == 0) word[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(word[0])));
      out += word;
      out += (w + 1 == words) ? "." : " ";
    }
    if (line + 1 < lines) out += '\n';
  }
  return out;
}

std::vector<std::string> MockService::complete(std::string_view prompt, int n) const {
  require_generation_role();
  if (n < 1) throw InvalidArgument("completion count must be >= 1");
  std::vector<std::string> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate(prompt, config().temperature == 0.0 ? 0 : i));
  return out;
}

std::vector<TokenLogprob> MockService::score_tokens(std::string_view text) const {
  require_role(Role::scorer);
  if (trim(text).empty()) throw InvalidArgument("cannot score empty text");

  const auto tokens = tokenize(text);
  std::vector<TokenLogprob> out;
  out.reserve(tokens.size());
  std::string previous = "<s>";
  const auto vocab = static_cast<std::uint64_t>(options_.vocabulary);
  std::vector<double> logits(options_.vocabulary);
  for (const auto& tok : tokens) {
    const std::string word = trim(tok);
    double lp;
    if (auto it = options_.token_logprobs.find(word); it != options_.token_logprobs.end()) {
      lp = it->second;
    } else if (options_.constant_probability) {
      lp = std::log(*options_.constant_probability);
    } else {
      const std::uint64_t ctx = detail::combine(options_.seed, detail::fnv1a(previous));
      double maxl = -1e300;
      for (std::uint64_t c = 0; c < vocab; ++c) {
        logits[c] = 6.0 * detail::unit(detail::combine(ctx, c)) - 3.0;
        maxl = std::max(maxl, logits[c]);
      }
      double z = 0.0;
      for (double l : logits) z += std::exp(l - maxl);
      const std::uint64_t cat = detail::combine(options_.seed, detail::fnv1a(word)) % vocab;
      lp = logits[cat] - maxl - std::log(z);
    }
    out.push_back({tok, std::min(lp, 0.0)});
    previous = word;
  }
  return out;
}

std::vector<EmbeddingVector> MockService::embed(std::span<const std::string> sentences) const {
  require_role(Role::embedder);
  if (sentences.empty()) throw InvalidArgument("embedding batch is empty");
  const auto dim = static_cast<std::size_t>(options_.embedding_dim);
  std::vector<EmbeddingVector> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    EmbeddingVector v;
    v.values.assign(dim, 0.0);
    bool any = false;
    for (const auto& tok : tokenize(s)) {
      const std::string w = lowercase_word(tok);
      if (w.empty()) continue;
      any = true;
      const std::uint64_t wh = detail::combine(options_.seed, detail::fnv1a(w));
      for (std::size_t d = 0; d < dim; ++d)
        v.values[d] += 2.0 * detail::unit(detail::combine(wh, d)) - 1.0;
    }
    if (!any) v.values[0] = 1.0;
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
    out.push_back(std::move(v));
  }
  return out;
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP

namespace {

struct Endpoint {
  std::string base;    // scheme://host[:port]
  std::string prefix;  // path prefix ending without '/'
};

Endpoint split_endpoint(const std::string& url) {
  static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, kUrl))
    throw InvalidArgument("endpoint must look like http(s)://host[:port][/prefix]: " + url);
  Endpoint ep{m[1].str(), m[2].matched ? m[2].str() : ""};
  while (!ep.prefix.empty() && ep.prefix.back() == '/') ep.prefix.pop_back();
  if (ep.prefix.size() >= 3 && ep.prefix.compare(ep.prefix.size() - 3, 3, "/v1") == 0)
    ep.prefix.resize(ep.prefix.size() - 3);
  return ep;
}

json parse_body(const std::string& body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw MalformedResponse(std::string("backend returned invalid JSON: ") + e.what());
  }
}

}  // namespace

OpenAiService::OpenAiService(BackendConfig config) : LanguageService(std::move(config)) {
  split_endpoint(this->config().endpoint);
}

std::string OpenAiService::post(const std::string& path, const std::string& body) const {
  const Endpoint ep = split_endpoint(config().endpoint);
  httplib::Headers headers;
  if (!config().api_key_env.empty())
    if (const char* key = std::getenv(config().api_key_env.c_str()); key && *key)
      headers.emplace("Authorization", std::string("Bearer ") + key);

  const int attempts = std::max(1, config().retry_limit);
  std::string last_error;
  auto delay = config().backoff;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    httplib::Client client(ep.base);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(config().timeout);
    const auto usecs =
        std::chrono::duration_cast<std::chrono::microseconds>(config().timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());

    auto res = client.Post(ep.prefix + path, headers, body, "application/json");
    if (res) {
      if (res->status >= 200 && res->status < 300) return res->body;
      last_error = "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200);
      const bool retryable = res->status == 429 || res->status >= 500;
      if (!retryable) {
        if (res->status == 404 || res->status == 501)
          throw CapabilityError("backend does not support " + path + " (" + last_error + ")");
        throw MalformedResponse("backend rejected request: " + last_error);
      }
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < attempts) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
  }
  throw TransportError("request to " + ep.base + ep.prefix + path + " failed after " +
                           std::to_string(attempts) + " attempt(s): " + last_error,
                       attempts);
}

std::vector<std::string> OpenAiService::complete(std::string_view prompt, int n) const {
  require_generation_role();
  if (n < 1) throw InvalidArgument("completion count must be >= 1");
  const bool greedy = config().temperature == 0.0;
  std::vector<std::string> out;
  while (static_cast<int>(out.size()) < (greedy ? 1 : n)) {
    json req = {{"model", config().model},
                {"messages", json::array({{{"role", "user"}, {"content", std::string(prompt)}}})},
                {"temperature", config().temperature},
                {"max_tokens", config().max_tokens},
                {"n", greedy ? 1 : n - static_cast<int>(out.size())}};
    const json res = parse_body(post("/v1/chat/completions", req.dump()));
    if (!res.contains("choices") || !res["choices"].is_array() || res["choices"].empty())
      throw MalformedResponse("completion response has no choices");
    for (const auto& choice : res["choices"]) {
      const auto* content = choice.contains("message") ? &choice["message"] : nullptr;
      if (!content || !content->contains("content") || !(*content)["content"].is_string())
        throw MalformedResponse("completion choice lacks message.content");
      out.push_back((*content)["content"].get<std::string>());
    }
  }
  if (greedy) out.resize(static_cast<std::size_t>(n), out.front());
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<TokenLogprob> OpenAiService::score_tokens(std::string_view text) const {
  require_role(Role::scorer);
  if (trim(text).empty()) throw InvalidArgument("cannot score empty text");
  json req = {{"model", config().model}, {"prompt", std::string(text)}, {"echo", true},
              {"max_tokens", 1},         {"logprobs", 0},               {"temperature", 0.0}};
  const json res = parse_body(post("/v1/completions", req.dump()));
  if (!res.contains("choices") || res["choices"].empty())
    throw MalformedResponse("scoring response has no choices");
  const json& choice = res["choices"][0];
  if (!choice.contains("logprobs") || choice["logprobs"].is_null() ||
      !choice["logprobs"].contains("tokens") || !choice["logprobs"].contains("token_logprobs"))
    throw CapabilityError("backend did not return token logprobs");
  const json& tokens = choice["logprobs"]["tokens"];
  const json& lps = choice["logprobs"]["token_logprobs"];
  if (!tokens.is_array() || !lps.is_array() || tokens.size() != lps.size())
    throw MalformedResponse("token and logprob arrays differ in length");

  // Echoed prompt tokens come first; stop once they cover the input text.
  std::vector<TokenLogprob> out;
  std::size_t consumed = 0;
  for (std::size_t i = 0; i < tokens.size() && consumed < text.size(); ++i) {
    const auto tok = tokens[i].get<std::string>();
    consumed += tok.size();
    if (lps[i].is_null()) continue;
    const double lp = lps[i].get<double>();
    if (lp > 1e-9) throw MalformedResponse("positive token logprob from backend");
    out.push_back({tok, std::min(lp, 0.0)});
  }
  return out;
}

std::vector<EmbeddingVector> OpenAiService::embed(std::span<const std::string> sentences) const {
  require_role(Role::embedder);
  if (sentences.empty()) throw InvalidArgument("embedding batch is empty");
  json req = {{"model", config().model},
              {"input", std::vector<std::string>(sentences.begin(), sentences.end())}};
  const json res = parse_body(post("/v1/embeddings", req.dump()));
  if (!res.contains("data") || !res["data"].is_array() || res["data"].size() != sentences.size())
    throw MalformedResponse("embedding response does not match batch size");
  std::vector<EmbeddingVector> out(sentences.size());
  std::vector<bool> seen(sentences.size(), false);
  for (std::size_t i = 0; i < res["data"].size(); ++i) {
    const json& item = res["data"][i];
    const std::size_t idx = item.contains("index") ? item["index"].get<std::size_t>() : i;
    if (idx >= out.size() || seen[idx]) throw MalformedResponse("bad embedding index");
    seen[idx] = true;
    out[idx].values = item.at("embedding").get<std::vector<double>>();
  }
  for (const auto& v : out)
    if (v.dimension() != out.front().dimension() || v.dimension() == 0)
      throw MalformedResponse("embedding dimension mismatch across batch");
  return out;
}

// ---------------------------------------------------------------------------

std::unique_ptr<LanguageService> make_service(const BackendConfig& config) {
  static const std::regex kMock(R"(^mock:(\d+)$)");
  std::smatch m;
  if (std::regex_match(config.endpoint, m, kMock)) {
    MockOptions opts;
    opts.seed = std::stoull(m[1].str());
    return std::make_unique<MockService>(config, opts);
  }
  return std::make_unique<OpenAiService>(config);
}

const BackendConfig& GatewayConfig::at(Role role) const {
  auto it = backends.find(role);
  if (it == backends.end())
    throw NotFound("no backend configured for role '" + std::string(to_string(role)) + "'");
  return it->second;
}

GatewayConfig parse_gateway_config(std::string_view document) {
  GatewayConfig gw;
  json doc;
  try {
    doc = json::parse(document);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.contains("backends")) return gw;
  try {
    for (const auto& [name, jb] : doc.at("backends").items()) {
      const Role role = role_from_string(name);
      BackendConfig cfg = BackendConfig::for_role(role, jb.at("endpoint").get<std::string>(),
                                                  jb.value("model", std::string{}));
      cfg.temperature = jb.value("temperature", cfg.temperature);
      cfg.max_tokens = jb.value("max_tokens", cfg.max_tokens);
      cfg.timeout = std::chrono::milliseconds(jb.value("timeout_ms", cfg.timeout.count()));
      cfg.retry_limit = jb.value("retry_limit", cfg.retry_limit);
      cfg.backoff = std::chrono::milliseconds(jb.value("backoff_ms", cfg.backoff.count()));
      cfg.api_key_env = jb.value("api_key_env", cfg.api_key_env);
      if (cfg.temperature < 0.0) throw ParseError("temperature must be non-negative");
      if (role == Role::simulator && cfg.temperature != 0.0)
        throw ParseError("simulator backend must use temperature 0.0");
      gw.backends[role] = std::move(cfg);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed backends section: ") + e.what());
  }
  return gw;
}

}  // namespace cosmos
