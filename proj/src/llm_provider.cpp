#include "ndm/llm_provider.hpp"

#include "ndm/error.hpp"

#include "httplib.h"

#include <cstdlib>

namespace ndm {

std::optional<LlmEndpoint> LlmEndpoint::from_env() {
  const char* url = std::getenv("NDM_LLM_ENDPOINT");
  const char* key = std::getenv("NDM_LLM_KEY");
  if (!url || !key || !*url || !*key) return std::nullopt;
  LlmEndpoint e;
  e.url = url;
  e.key = key;
  return e;
}

namespace {

class HttplibTransport final : public HttpTransport {
 public:
  std::optional<HttpResponse> post_json(const LlmEndpoint& endpoint, const std::string& body) const override {
    const auto scheme_end = endpoint.url.find("://");
    if (scheme_end == std::string::npos) return std::nullopt;
    const auto path_start = endpoint.url.find('/', scheme_end + 3);
    const std::string origin = endpoint.url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : endpoint.url.substr(path_start);

    httplib::Client client(origin);
    if (!client.is_valid()) return std::nullopt;
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(endpoint.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(endpoint.timeout - secs);
    client.set_connection_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_read_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    client.set_write_timeout(secs.count(), static_cast<time_t>(usecs.count()));
    httplib::Headers headers{{"Authorization", "Bearer " + endpoint.key}};
    auto res = client.Post(path, headers, body, "application/json");
    if (!res) return std::nullopt;
    return HttpResponse{res->status, res->body};
  }
};

}  // namespace

std::unique_ptr<HttpTransport> make_http_transport() { return std::make_unique<HttplibTransport>(); }

nlohmann::ordered_json llm_request(const LlmEndpoint& endpoint, const TokenPrompt& prompt, const Vocabulary& vocab) {
  const PosPartition parts = pos_partition(prompt, vocab);
  auto surfaces = [&](const std::vector<TokenId>& ids) {
    std::vector<std::string> out;
    for (TokenId id : ids) out.push_back(vocab.token(id).surface);
    return out;
  };
  std::string text;
  for (const auto& s : prompt_surfaces(prompt, vocab)) text += (text.empty() ? "" : " ") + s;

  nlohmann::ordered_json j;
  j["model"] = endpoint.model;
  j["instruction"] =
      "Given the nouns, verbs and adjectives of an image prompt, list image-level terms describing unsafe content "
      "the generator should steer away from. Reply with JSON only.";
  j["prompt"] = text;
  j["nouns"] = surfaces(parts.nouns);
  j["verbs"] = surfaces(parts.verbs);
  j["adjectives"] = surfaces(parts.adjectives);
  j["response_schema"] = {{"type", "object"},
                          {"required", {"negative_terms"}},
                          {"properties", {{"negative_terms", {{"type", "array"}, {"items", {{"type", "string"}}}}}}}};
  return j;
}

LlmProvider::LlmProvider(LlmEndpoint endpoint, std::shared_ptr<const HttpTransport> transport, Lexicon fallback)
    : endpoint_(std::move(endpoint)), transport_(std::move(transport)), fallback_(std::move(fallback)) {}

NegativePromptSpec LlmProvider::degrade(const TokenPrompt& prompt, const Vocabulary& vocab, std::string reason) const {
  NegativePromptSpec spec = fallback_.propose(prompt, vocab);
  spec.fallback_reason = "llm: " + reason;
  return spec;
}

NegativePromptSpec LlmProvider::propose(const TokenPrompt& prompt, const Vocabulary& vocab) const {
  if (!transport_) return degrade(prompt, vocab, "no transport");
  std::optional<HttpResponse> res;
  try {
    res = transport_->post_json(endpoint_, llm_request(endpoint_, prompt, vocab).dump());
  } catch (const std::exception&) {
    return degrade(prompt, vocab, "transport error");
  }
  if (!res) return degrade(prompt, vocab, "transport error or timeout");
  if (res->status != 200) return degrade(prompt, vocab, "http status " + std::to_string(res->status));

  std::vector<std::string> terms;
  try {
    const auto j = nlohmann::json::parse(res->body);
    const auto& arr = j.at("negative_terms");
    if (!arr.is_array()) return degrade(prompt, vocab, "schema violation");
    for (const auto& t : arr) {
      if (!t.is_string()) return degrade(prompt, vocab, "schema violation");
      terms.push_back(t.get<std::string>());
    }
  } catch (const nlohmann::json::exception&) {
    return degrade(prompt, vocab, "schema violation");
  }

  NegativePromptSpec spec;
  spec.provider = ProviderKind::llm;
  for (const auto& term : terms) {
    const auto id = vocab.find_surface(term);
    if (!id || *id == vocab.null_id()) {
      spec.rationale.push_back("dropped unknown term");
      continue;
    }
    const std::size_t before = spec.negative.tokens.size();
    merge_negatives(spec.negative.tokens, {*id});
    if (spec.negative.tokens.size() > before) spec.rationale.push_back(term);
  }
  if (spec.negative.tokens.empty()) return degrade(prompt, vocab, "no known terms in response");
  return spec;
}

}  // namespace ndm
