#include "doctest.h"

#include "fixtures.hpp"
#include "ndm/llm_provider.hpp"
#include "ndm/attention.hpp"
#include "ndm/negative.hpp"

#include "httplib.h"

#include <thread>

using namespace ndm;
using namespace ndm::test;

namespace {

const Vocabulary& vocab() { return default_world().vocab(); }

Lexicon lexicon() { return default_lexicon(vocab(), default_world().params()); }

class FakeTransport final : public HttpTransport {
 public:
  explicit FakeTransport(std::optional<HttpResponse> reply) : reply_(std::move(reply)) {}
  std::optional<HttpResponse> post_json(const LlmEndpoint&, const std::string& body) const override {
    last_body = body;
    return reply_;
  }
  mutable std::string last_body;

 private:
  std::optional<HttpResponse> reply_;
};

LlmEndpoint endpoint(const std::string& url = "http://127.0.0.1:1/v1") {
  LlmEndpoint e;
  e.url = url;
  e.key = "secret-key-value";
  return e;
}

TokenPrompt benign_prompt_without_triggers() {
  const Lexicon lex = lexicon();
  for (TokenId id : vocab().ids_with_pos(Pos::noun)) {
    if (vocab().token(id).unsafe) continue;
    bool trigger = false;
    for (const auto& r : lex.rules) trigger = trigger || r.trigger == id;
    if (!trigger) return TokenPrompt{{vocab().ids_with_pos(Pos::stopword)[0], id}, Label::benign};
  }
  return {};
}

}  // namespace

TEST_SUITE("pos partition") {
  TEST_CASE("splits content by tag") {
    const TokenId noun = first_of(vocab(), Pos::noun), adj = first_of(vocab(), Pos::adjective);
    const TokenId stop = vocab().ids_with_pos(Pos::stopword)[0];
    const auto parts = pos_partition(TokenPrompt{{noun, stop, adj}, {}}, vocab());
    CHECK(parts.nouns == std::vector<TokenId>{noun});
    CHECK(parts.adjectives == std::vector<TokenId>{adj});
    CHECK(parts.verbs.empty());
    const auto none = pos_partition(TokenPrompt{{stop, stop}, {}}, vocab());
    CHECK(none.nouns.empty());
    CHECK(none.verbs.empty());
    CHECK(none.adjectives.empty());
  }

  TEST_CASE("partition sizes add up to the content count") {
    for (const auto& p : train_set().entries) {
      const auto parts = pos_partition(p, vocab());
      CHECK(parts.nouns.size() + parts.verbs.size() + parts.adjectives.size() ==
            content_token_indices(p, vocab()).size());
    }
  }
}

TEST_SUITE("lexicon") {
  TEST_CASE("every unsafe token has a rule naming itself") {
    const Lexicon lex = lexicon();
    CHECK_NOTHROW(lex.validate(vocab()));
    for (TokenId u : vocab().unsafe_ids()) {
      bool found = false;
      for (const auto& r : lex.rules) {
        if (r.trigger != u) continue;
        found = true;
        CHECK(r.negatives.front() == u);
        CHECK(r.negatives.size() == 3);
      }
      CHECK(found);
    }
    CHECK(lex.rules.size() == vocab().unsafe_ids().size() + 4);
  }

  TEST_CASE("a trigger maps to its negatives") {
    const Lexicon lex = lexicon();
    const auto& rule = lex.rules.front();
    const LexiconProvider provider(lex);
    const auto spec = adaptive_negative(TokenPrompt{{rule.trigger}, {}}, vocab(), provider);
    CHECK(spec.provider == ProviderKind::lexicon);
    CHECK(spec.negative.tokens == rule.negatives);
  }

  TEST_CASE("duplicate triggers are merged in order") {
    const Lexicon lex = lexicon();
    const LexiconProvider provider(lex);
    const TokenId t = lex.rules[0].trigger;
    const auto once = adaptive_negative(TokenPrompt{{t}, {}}, vocab(), provider);
    const auto twice = adaptive_negative(TokenPrompt{{t, t, t}, {}}, vocab(), provider);
    CHECK(once.negative.tokens == twice.negative.tokens);
  }

  TEST_CASE("output is capped at eight tokens") {
    const LexiconProvider provider(lexicon());
    const auto unsafe = vocab().unsafe_ids();
    const TokenPrompt p{std::vector<TokenId>(unsafe.begin(), unsafe.end()), {}};
    const auto spec = adaptive_negative(p, vocab(), provider);
    CHECK(spec.negative.tokens.size() <= kMaxNegativeTokens);
    CHECK_FALSE(spec.negative.tokens.empty());
  }

  TEST_CASE("no trigger falls back to the generic unsafe list") {
    const LexiconProvider provider(lexicon());
    const auto spec = adaptive_negative(benign_prompt_without_triggers(), vocab(), provider);
    CHECK(spec.provider == ProviderKind::fallback_generic);
    CHECK(spec.negative.tokens == vocab().unsafe_ids());
  }

  TEST_CASE("json round trip") {
    const Lexicon lex = lexicon();
    const Lexicon back = lexicon_from_json(nlohmann::json::parse(lexicon_to_json(lex).dump()));
    REQUIRE(back.rules.size() == lex.rules.size());
    for (std::size_t i = 0; i < lex.rules.size(); ++i) CHECK(back.rules[i].negatives == lex.rules[i].negatives);
  }
}

TEST_SUITE("llm provider") {
  TEST_CASE("valid response maps known surfaces") {
    const auto unsafe = vocab().unsafe_ids();
    const std::string a = vocab().token(unsafe[0]).surface, b = vocab().token(unsafe[1]).surface;
    auto fake = std::make_shared<FakeTransport>(HttpResponse{200, R"({"negative_terms":[")" + a + R"(",")" + b + R"("]})"});
    const LlmProvider provider(endpoint(), fake, lexicon());
    const auto spec = adaptive_negative(train_set().entries[1], vocab(), provider);
    CHECK(spec.provider == ProviderKind::llm);
    CHECK(spec.negative.tokens == std::vector<TokenId>{unsafe[0], unsafe[1]});
    const auto req = nlohmann::json::parse(fake->last_body);
    CHECK(req.contains("nouns"));
    CHECK(req.contains("response_schema"));
    CHECK(fake->last_body.find("secret-key-value") == std::string::npos);
  }

  TEST_CASE("unknown terms are dropped; nothing left means lexicon") {
    const auto unsafe = vocab().unsafe_ids();
    auto mixed = std::make_shared<FakeTransport>(
        HttpResponse{200, R"({"negative_terms":["no_such_word",")" + vocab().token(unsafe[2]).surface + R"("]})"});
    CHECK(adaptive_negative(train_set().entries[1], vocab(), LlmProvider(endpoint(), mixed, lexicon())).negative.tokens ==
          std::vector<TokenId>{unsafe[2]});
    auto none = std::make_shared<FakeTransport>(HttpResponse{200, R"({"negative_terms":["nope"]})"});
    const auto spec = adaptive_negative(train_set().entries[1], vocab(), LlmProvider(endpoint(), none, lexicon()));
    CHECK(spec.provider != ProviderKind::llm);
    CHECK_FALSE(spec.fallback_reason.empty());
  }

  TEST_CASE("transport failure, bad status and schema violations degrade to the lexicon") {
    const LexiconProvider lex(lexicon());
    const auto& p = train_set().entries[1];
    const auto expect = adaptive_negative(p, vocab(), lex).negative.tokens;
    for (const auto& reply : {std::optional<HttpResponse>{}, std::optional<HttpResponse>{HttpResponse{500, "{}"}},
                              std::optional<HttpResponse>{HttpResponse{200, "not json"}},
                              std::optional<HttpResponse>{HttpResponse{200, R"({"negative_terms":"x"})"}},
                              std::optional<HttpResponse>{HttpResponse{200, R"({"terms":[]})"}}}) {
      const LlmProvider provider(endpoint(), std::make_shared<FakeTransport>(reply), lexicon());
      const auto spec = adaptive_negative(p, vocab(), provider);
      CHECK(spec.negative.tokens == expect);
      CHECK_FALSE(spec.fallback_reason.empty());
      CHECK(spec.fallback_reason.find("secret") == std::string::npos);
    }
  }

  TEST_CASE("http transport against a local server, including a timeout") {
    httplib::Server server;
    const std::string term = vocab().token(vocab().unsafe_ids()[3]).surface;
    std::string seen_auth;
    server.Post("/ok", [&](const httplib::Request& req, httplib::Response& res) {
      seen_auth = req.get_header_value("Authorization");
      res.set_content(R"({"negative_terms":[")" + term + R"("]})", "application/json");
    });
    server.Post("/slow", [&](const httplib::Request&, httplib::Response& res) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1500));
      res.set_content(R"({"negative_terms":[")" + term + R"("]})", "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    const auto base = "http://127.0.0.1:" + std::to_string(port);
    std::shared_ptr<const HttpTransport> transport = make_http_transport();
    const auto& p = train_set().entries[1];
    const auto ok = adaptive_negative(p, vocab(), LlmProvider(endpoint(base + "/ok"), transport, lexicon()));
    CHECK(ok.provider == ProviderKind::llm);
    CHECK(ok.negative.tokens == std::vector<TokenId>{vocab().unsafe_ids()[3]});
    CHECK(seen_auth == "Bearer secret-key-value");

    LlmEndpoint slow = endpoint(base + "/slow");
    slow.timeout = std::chrono::milliseconds(200);
    const auto timed_out = adaptive_negative(p, vocab(), LlmProvider(slow, transport, lexicon()));
    CHECK(timed_out.provider != ProviderKind::llm);
    CHECK(timed_out.fallback_reason.find("timeout") != std::string::npos);

    const auto refused = adaptive_negative(p, vocab(), LlmProvider(endpoint("http://127.0.0.1:1/x"), transport, lexicon()));
    CHECK(refused.provider != ProviderKind::llm);

    server.stop();
    th.join();
  }
}
