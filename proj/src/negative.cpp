#include "ndm/negative.hpp"

#include "ndm/error.hpp"
#include "ndm/io.hpp"

#include <algorithm>
#include <numeric>

namespace ndm {

PosPartition pos_partition(const TokenPrompt& prompt, const Vocabulary& vocab) {
  PosPartition out;
  for (TokenId id : prompt.tokens) {
    if (id == vocab.null_id()) continue;
    switch (vocab.token(id).pos) {
      case Pos::noun: out.nouns.push_back(id); break;
      case Pos::verb: out.verbs.push_back(id); break;
      case Pos::adjective: out.adjectives.push_back(id); break;
      case Pos::stopword: break;
    }
  }
  return out;
}

void Lexicon::validate(const Vocabulary& vocab) const {
  for (const auto& r : rules) {
    if (!vocab.valid(r.trigger)) fail(Errc::invalid_input, "lexicon: trigger id out of range");
    if (r.negatives.empty()) fail(Errc::invalid_input, "lexicon: rule without negatives");
    for (TokenId id : r.negatives) {
      if (!vocab.valid(id)) fail(Errc::invalid_input, "lexicon: negative id out of range");
    }
  }
}

namespace {

std::vector<TokenId> nearest_unsafe(const Vocabulary& vocab, const Vector& from, TokenId skip, std::size_t count) {
  auto unsafe = vocab.unsafe_ids();
  std::erase(unsafe, skip);
  std::vector<std::pair<double, TokenId>> scored;
  for (TokenId id : unsafe) scored.emplace_back(-from.dot(vocab.token(id).embedding), id);
  std::sort(scored.begin(), scored.end());
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < std::min(count, scored.size()); ++i) out.push_back(scored[i].second);
  return out;
}

}  // namespace

Lexicon default_lexicon(const Vocabulary& vocab, const DenoiserParams& params) {
  Lexicon lex;
  for (TokenId id : vocab.unsafe_ids()) {
    const auto& t = vocab.token(id);
    LexiconRule rule{id, t.pos, {id}};
    const auto near = nearest_unsafe(vocab, t.embedding, id, 2);
    rule.negatives.insert(rule.negatives.end(), near.begin(), near.end());
    lex.rules.push_back(std::move(rule));
  }
  std::vector<std::pair<double, TokenId>> lean;
  for (const auto& t : vocab.tokens()) {
    if (t.unsafe || !vocab.is_content(t.id)) continue;
    lean.emplace_back(-(params.w_v * t.embedding).dot(vocab.unsafe_signature()), t.id);
  }
  std::sort(lean.begin(), lean.end());
  for (std::size_t i = 0; i < std::min<std::size_t>(4, lean.size()); ++i) {
    const auto& t = vocab.token(lean[i].second);
    lex.rules.push_back(LexiconRule{t.id, t.pos, nearest_unsafe(vocab, t.embedding, t.id, 2)});
  }
  return lex;
}

nlohmann::ordered_json lexicon_to_json(const Lexicon& lexicon) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& r : lexicon.rules) {
    arr.push_back({{"trigger", r.trigger}, {"pos", to_string(r.pos)}, {"negatives", r.negatives}});
  }
  return arr;
}

Lexicon lexicon_from_json(const nlohmann::json& j) {
  try {
    Lexicon lex;
    for (const auto& rj : j) {
      lex.rules.push_back(LexiconRule{rj.at("trigger").get<TokenId>(), pos_from_string(rj.at("pos").get<std::string>()),
                                      rj.at("negatives").get<std::vector<TokenId>>()});
    }
    return lex;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("lexicon: ") + e.what());
  }
}

Lexicon load_lexicon(const std::filesystem::path& path, const Vocabulary& vocab) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, "lexicon: " + path.string() + ": " + e.what());
  }
  Lexicon lex = lexicon_from_json(j);
  lex.validate(vocab);
  return lex;
}

std::string_view to_string(ProviderKind p) {
  switch (p) {
    case ProviderKind::lexicon: return "lexicon";
    case ProviderKind::llm: return "llm";
    case ProviderKind::fallback_generic: return "fallback_generic";
  }
  return "lexicon";
}

nlohmann::ordered_json NegativePromptSpec::to_json(const Vocabulary& vocab) const {
  nlohmann::ordered_json j;
  j["tokens"] = negative.tokens;
  j["surfaces"] = prompt_surfaces(negative, vocab);
  j["provider"] = to_string(provider);
  j["rationale"] = rationale;
  if (!fallback_reason.empty()) j["fallback"] = fallback_reason;
  return j;
}

void merge_negatives(std::vector<TokenId>& into, const std::vector<TokenId>& from) {
  for (TokenId id : from) {
    if (into.size() >= kMaxNegativeTokens) return;
    if (std::find(into.begin(), into.end(), id) == into.end()) into.push_back(id);
  }
}

NegativePromptSpec generic_negative(const Vocabulary& vocab) {
  NegativePromptSpec spec;
  merge_negatives(spec.negative.tokens, vocab.unsafe_ids());
  spec.provider = ProviderKind::fallback_generic;
  spec.rationale.push_back("no rule fired; generic unsafe concepts");
  return spec;
}

NegativePromptSpec LexiconProvider::propose(const TokenPrompt& prompt, const Vocabulary& vocab) const {
  const PosPartition parts = pos_partition(prompt, vocab);
  NegativePromptSpec spec;
  spec.provider = ProviderKind::lexicon;
  for (const auto* group : {&parts.nouns, &parts.verbs, &parts.adjectives}) {
    for (TokenId id : *group) {
      for (const auto& rule : lexicon_.rules) {
        if (rule.trigger != id) continue;
        const std::size_t before = spec.negative.tokens.size();
        merge_negatives(spec.negative.tokens, rule.negatives);
        if (spec.negative.tokens.size() > before) {
          spec.rationale.push_back(vocab.token(id).surface + " (" + std::string(to_string(rule.pos)) + ")");
        }
      }
    }
  }
  if (spec.negative.tokens.empty()) return generic_negative(vocab);
  return spec;
}

NegativePromptSpec adaptive_negative(const TokenPrompt& prompt, const Vocabulary& vocab,
                                     const NegativeProvider& provider) {
  validate_prompt(prompt, vocab);
  NegativePromptSpec spec = provider.propose(prompt, vocab);
  if (spec.negative.tokens.empty()) {
    NegativePromptSpec fallback = generic_negative(vocab);
    fallback.fallback_reason = spec.fallback_reason;
    return fallback;
  }
  return spec;
}

}  // namespace ndm
