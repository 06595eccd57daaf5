#pragma once

// Seeded toy semantic universe: denoiser weights, vocabulary, prompts, datasets
// and the unsafe score.

#include "ndm/latent.hpp"
#include "ndm/numeric.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace ndm {

using TokenId = std::uint32_t;

/// W_q (d×C), W_k (d×d), W_v (C×d). Entries Gaussian with std 1/√d; W_q is
/// additionally multiplied by `query_gain`.
struct DenoiserParams {
  std::uint64_t seed = 0;
  double query_gain = 1.0;
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;

  std::size_t dim() const { return static_cast<std::size_t>(w_k.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(w_v.rows()); }
};

DenoiserParams build_denoiser_params(std::uint64_t seed, std::size_t dim, std::size_t channels,
                                     double query_gain);

enum class Pos { noun, verb, adjective, stopword };
std::string_view to_string(Pos pos);
Pos pos_from_string(std::string_view s);

struct TokenInfo {
  TokenId id = 0;
  std::string surface;
  Pos pos = Pos::stopword;
  bool unsafe = false;
  Vector embedding;
};

struct VocabularySpec {
  std::uint64_t seed = 0;
  std::size_t size = 64;
  std::size_t unsafe_count = 8;
  std::size_t stopword_count = 16;
  std::size_t dim = 32;
  // Embedding geometry. Non-unsafe tokens cluster around a shared background
  // direction, unsafe tokens around a concept direction tilted away from the
  // denoiser's dominant self-attending axis.
  double background_cohesion = 1.0;
  double unsafe_cohesion = 3.0;
  double unsafe_tilt = 1.15;
};

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(VocabularySpec spec, std::vector<TokenInfo> tokens, TokenId null_id, Vector unsafe_signature);

  const VocabularySpec& spec() const { return spec_; }
  std::size_t size() const { return tokens_.size(); }
  std::size_t dim() const { return spec_.dim; }
  const TokenInfo& token(TokenId id) const;
  const std::vector<TokenInfo>& tokens() const { return tokens_; }
  TokenId null_id() const { return null_id_; }
  /// û, unit vector in latent channel space.
  const Vector& unsafe_signature() const { return unsafe_signature_; }

  bool valid(TokenId id) const { return id < tokens_.size(); }
  bool is_content(TokenId id) const;
  std::vector<TokenId> unsafe_ids() const;
  std::vector<TokenId> ids_with_pos(Pos pos) const;
  std::optional<TokenId> find_surface(std::string_view surface) const;

  /// Checks unit norms, the null token, and û against W_v.
  void validate(const DenoiserParams& params) const;

  bool operator==(const Vocabulary&) const;

 private:
  VocabularySpec spec_;
  std::vector<TokenInfo> tokens_;
  TokenId null_id_ = 0;
  Vector unsafe_signature_;
};

/// û = normalize(Σ_{unsafe} W_v e_i)
Vector compute_unsafe_signature(const std::vector<TokenInfo>& tokens, const DenoiserParams& params);

Vocabulary build_vocabulary(const VocabularySpec& spec, const DenoiserParams& params);

nlohmann::ordered_json vocabulary_to_json(const Vocabulary& vocab);
Vocabulary vocabulary_from_json(const nlohmann::json& j);

enum class Label { benign, unsafe };
std::string_view to_string(Label label);

struct TokenPrompt {
  std::vector<TokenId> tokens;
  std::optional<Label> label;

  bool operator==(const TokenPrompt&) const = default;
};

TokenPrompt null_prompt(const Vocabulary& vocab);
void validate_prompt(const TokenPrompt& prompt, const Vocabulary& vocab);
std::vector<std::string> prompt_surfaces(const TokenPrompt& prompt, const Vocabulary& vocab);

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t n_per_class = 200;
  std::size_t min_length = 3;
  std::size_t max_length = 12;
  double content_fraction = 0.6;
  std::size_t max_unsafe_per_prompt = 2;
};

struct PromptDataset {
  std::vector<TokenPrompt> entries;
  DatasetSpec provenance;

  std::size_t count(Label label) const;
};

/// Entries alternate benign / unsafe. Prompts whose token sequence appears in
/// `exclude` are redrawn, which is how held-out splits are kept disjoint.
PromptDataset synth_dataset(const Vocabulary& vocab, const DatasetSpec& spec,
                            const std::set<std::vector<TokenId>>& exclude = {});

std::string dataset_to_jsonl(const PromptDataset& dataset);
PromptDataset dataset_from_jsonl(const std::string& text, const Vocabulary* vocab = nullptr);
PromptDataset load_dataset(const std::filesystem::path& path, const Vocabulary* vocab = nullptr);

/// max over pixels of ⟨x0[:,y,x], û⟩
double unsafe_score(const LatentTensor& x0, const Vocabulary& vocab);

}  // namespace ndm
