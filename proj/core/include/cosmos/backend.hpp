#pragma once

/**
 * Backend gateway: uniform access to language-model services.
 *
 * Three capabilities are exposed through LanguageService: text completion,
 * per-token logprob scoring of a given text, and sentence embeddings. Two
 * implementations ship with the library:
 *
 *   - OpenAiService talks to any OpenAI-compatible HTTP server
 *     (/v1/chat/completions, /v1/completions with echo+logprobs, /v1/embeddings).
 *   - MockService is a seeded, offline, pure function of (seed, input); every
 *     pipeline stage can run against it reproducibly.
 *
 * make_service() picks the implementation from the endpoint: an endpoint of
 * the form "mock:<seed>" selects the mock.
 */

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cosmos {

enum class Role { policy_base, policy_trained, simulator, scorer, embedder, judge };

std::string_view to_string(Role role);
Role role_from_string(std::string_view text);
bool is_generation_role(Role role);

struct BackendConfig {
  std::string endpoint;
  std::string model;
  Role role = Role::policy_base;
  double temperature = 0.7;
  int max_tokens = 512;
  std::chrono::milliseconds timeout{60000};
  int retry_limit = 3;
  std::chrono::milliseconds backoff{200};  // first retry delay; doubles per attempt
  std::string api_key_env = "OPENAI_API_KEY";

  /// Role-specific defaults: simulator 0.0, everything else 0.7.
  static BackendConfig for_role(Role role, std::string endpoint, std::string model = {});
};

struct TokenLogprob {
  std::string token;
  double logprob = 0.0;  // natural log, <= 0
};

struct EmbeddingVector {
  std::vector<double> values;
  std::size_t dimension() const { return values.size(); }
};

class LanguageService {
 public:
  virtual ~LanguageService() = default;

  const BackendConfig& config() const { return config_; }

  /// n completions of `prompt`. At temperature 0 all n are identical.
  virtual std::vector<std::string> complete(std::string_view prompt, int n) const = 0;

  /// One entry per backend token, in order.
  virtual std::vector<TokenLogprob> score_tokens(std::string_view text) const = 0;

  virtual std::vector<EmbeddingVector> embed(std::span<const std::string> sentences) const = 0;

 protected:
  explicit LanguageService(BackendConfig config) : config_(std::move(config)) {}

  void require_generation_role() const;
  void require_role(Role role) const;

 private:
  BackendConfig config_;
};

/// Behavior knobs of the offline mock.
struct MockOptions {
  std::uint64_t seed = 0;
  int vocabulary = 64;        // size of the hashed categorical distribution
  int embedding_dim = 64;
  std::optional<double> constant_probability;       // every token gets this P
  std::map<std::string, double> token_logprobs;     // fixed per-token table
};

class MockService final : public LanguageService {
 public:
  MockService(BackendConfig config, MockOptions options);

  std::vector<std::string> complete(std::string_view prompt, int n) const override;
  std::vector<TokenLogprob> score_tokens(std::string_view text) const override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> sentences) const override;

  /// Whitespace-attached tokenization used by the mock scorer: each token is a
  /// word with its leading whitespace, so the tokens concatenate to the input.
  static std::vector<std::string> tokenize(std::string_view text);

  const MockOptions& options() const { return options_; }

 private:
  std::string generate(std::string_view prompt, int sample) const;

  MockOptions options_;
};

class OpenAiService final : public LanguageService {
 public:
  explicit OpenAiService(BackendConfig config);

  std::vector<std::string> complete(std::string_view prompt, int n) const override;
  /// Uses /v1/completions with echo=true, max_tokens=1, logprobs=0. The first
  /// token has no conditional probability and is dropped by the server
  /// protocol (null logprob); it is omitted from the result.
  std::vector<TokenLogprob> score_tokens(std::string_view text) const override;
  std::vector<EmbeddingVector> embed(std::span<const std::string> sentences) const override;

 private:
  std::string post(const std::string& path, const std::string& body) const;
};

std::unique_ptr<LanguageService> make_service(const BackendConfig& config);

/// Backends by role plus other top-level keys of the gateway config file.
struct GatewayConfig {
  std::map<Role, BackendConfig> backends;

  bool has(Role role) const { return backends.count(role) != 0; }
  const BackendConfig& at(Role role) const;
};

/**
 * Parses the "backends" object of a JSON config document:
 *
 *   {"backends": {"simulator": {"endpoint": "http://localhost:8080",
 *                                "model": "llama-3.2-3b", "temperature": 0.0,
 *                                "max_tokens": 256, "timeout_ms": 60000,
 *                                "retry_limit": 3, "api_key_env": "MY_KEY"}}}
 *
 * Missing keys take BackendConfig::for_role defaults.
 */
GatewayConfig parse_gateway_config(std::string_view document);

}  // namespace cosmos
