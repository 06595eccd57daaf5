#pragma once

// Content-token selection, Otsu foreground masks, foreground sums, the
// cross-attention loss and its gradient with respect to the latent.

#include "ndm/diffusion.hpp"
#include "ndm/latent.hpp"
#include "ndm/world.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace ndm {

/// Prompt positions of tokens that are neither stopwords nor the null token.
/// An empty result is the empty-content signal.
std::vector<std::size_t> content_token_indices(const TokenPrompt& prompt, const Vocabulary& vocab);

/// Foreground mask of one prompt position; cells indexed by pixel y*W + x.
struct TokenMask {
  std::size_t index = 0;
  std::vector<std::uint8_t> cells;
};

struct TokenAnalysis {
  std::size_t index = 0;        // prompt position
  std::optional<double> beta;   // nullopt when the map is constant
  TokenMask mask;
  double sum = 0.0;
  double max_weight = 0.0;
};

struct AttentionAnalysis {
  std::vector<TokenAnalysis> tokens;
  std::size_t dominant = 0;  // prompt position of the largest sum
  double loss = 0.0;

  std::vector<TokenMask> masks() const;
  const TokenAnalysis& dominant_token() const;
};

AttentionAnalysis analyze(const AttentionMaps& maps, std::span<const std::size_t> content);

nlohmann::ordered_json analysis_to_json(const AttentionAnalysis& analysis, const TokenPrompt& prompt);

struct LossAndGrad {
  double loss = 0.0;
  std::size_t active = 0;  // prompt position achieving the max
  LatentTensor gradient;
};

/// max_i Σ_{Ω_i} M_i(z) with the masks held fixed.
double frozen_mask_loss(const AttentionMaps& maps, std::span<const TokenMask> masks, std::size_t* active = nullptr);

/// Frozen-mask loss and its exact gradient through the softmax and the query path.
LossAndGrad loss_and_grad(const LatentTensor& z, const TokenPrompt& prompt, const World& world,
                          std::span<const TokenMask> masks);

}  // namespace ndm
