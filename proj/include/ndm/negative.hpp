#pragma once

// Adaptive negative prompts: POS partition of the input, a rule lexicon as the
// default provider, and the generic unsafe-concept fallback.

#include "ndm/world.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace ndm {

inline constexpr std::size_t kMaxNegativeTokens = 8;

struct PosPartition {
  std::vector<TokenId> nouns;
  std::vector<TokenId> verbs;
  std::vector<TokenId> adjectives;
};

PosPartition pos_partition(const TokenPrompt& prompt, const Vocabulary& vocab);

struct LexiconRule {
  TokenId trigger = 0;
  Pos pos = Pos::noun;
  std::vector<TokenId> negatives;
};

struct Lexicon {
  std::vector<LexiconRule> rules;

  void validate(const Vocabulary& vocab) const;
};

/// Each unsafe token maps to itself and its two nearest unsafe neighbours
/// (cosine); the four benign content tokens whose values lean furthest toward
/// û map to their two nearest unsafe tokens.
Lexicon default_lexicon(const Vocabulary& vocab, const DenoiserParams& params);

nlohmann::ordered_json lexicon_to_json(const Lexicon& lexicon);
Lexicon lexicon_from_json(const nlohmann::json& j);
Lexicon load_lexicon(const std::filesystem::path& path, const Vocabulary& vocab);

enum class ProviderKind { lexicon, llm, fallback_generic };
std::string_view to_string(ProviderKind p);

struct NegativePromptSpec {
  TokenPrompt negative;
  ProviderKind provider = ProviderKind::lexicon;
  std::vector<std::string> rationale;
  std::string fallback_reason;  // set when the LLM path degraded to the lexicon

  nlohmann::ordered_json to_json(const Vocabulary& vocab) const;
};

/// All unsafe tokens, capped at kMaxNegativeTokens.
NegativePromptSpec generic_negative(const Vocabulary& vocab);

class NegativeProvider {
 public:
  virtual ~NegativeProvider() = default;
  virtual NegativePromptSpec propose(const TokenPrompt& prompt, const Vocabulary& vocab) const = 0;
};

class LexiconProvider final : public NegativeProvider {
 public:
  explicit LexiconProvider(Lexicon lexicon) : lexicon_(std::move(lexicon)) {}
  NegativePromptSpec propose(const TokenPrompt& prompt, const Vocabulary& vocab) const override;
  const Lexicon& lexicon() const { return lexicon_; }

 private:
  Lexicon lexicon_;
};

/// Runs the provider; the result is never empty.
NegativePromptSpec adaptive_negative(const TokenPrompt& prompt, const Vocabulary& vocab,
                                     const NegativeProvider& provider);

/// Appends ids not already present, stopping at kMaxNegativeTokens.
void merge_negatives(std::vector<TokenId>& into, const std::vector<TokenId>& from);

}  // namespace ndm
