#pragma once

// Negative-prompt provider backed by an external LLM over HTTP. Every failure
// (transport, timeout, status, schema, empty vocabulary match) degrades to the
// lexicon provider.

#include "ndm/negative.hpp"

#include "json.hpp"

#include <chrono>
#include <memory>
#include <optional>
#include <string>

namespace ndm {

struct LlmEndpoint {
  std::string url;  // scheme://host[:port]/path
  std::string key;  // sent as a bearer token, never logged
  std::string model = "ndm-negative";
  std::chrono::milliseconds timeout{10000};

  /// Reads NDM_LLM_ENDPOINT / NDM_LLM_KEY; nullopt unless both are set.
  static std::optional<LlmEndpoint> from_env();
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  /// Returns nullopt on connection failure or timeout.
  virtual std::optional<HttpResponse> post_json(const LlmEndpoint& endpoint, const std::string& body) const = 0;
};

std::unique_ptr<HttpTransport> make_http_transport();

/// Request body sent to the endpoint.
nlohmann::ordered_json llm_request(const LlmEndpoint& endpoint, const TokenPrompt& prompt, const Vocabulary& vocab);

class LlmProvider final : public NegativeProvider {
 public:
  LlmProvider(LlmEndpoint endpoint, std::shared_ptr<const HttpTransport> transport, Lexicon fallback);
  NegativePromptSpec propose(const TokenPrompt& prompt, const Vocabulary& vocab) const override;

 private:
  NegativePromptSpec degrade(const TokenPrompt& prompt, const Vocabulary& vocab, std::string reason) const;

  LlmEndpoint endpoint_;
  std::shared_ptr<const HttpTransport> transport_;
  LexiconProvider fallback_;
};

}  // namespace ndm
