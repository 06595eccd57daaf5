#pragma once

// Noise schedule, single-layer cross-attention oracle denoiser, guidance and
// the deterministic DDIM sampler.

#include "ndm/latent.hpp"
#include "ndm/numeric.hpp"
#include "ndm/world.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

namespace ndm {

struct Schedule {
  std::size_t base_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  std::vector<double> betas;       // index 1..base_steps; betas[0] unused (0)
  std::vector<double> alpha_bars;  // alpha_bars[0] = 1, alpha_bars[t] = Π_{s≤t}(1−β_s)
  std::vector<std::size_t> timesteps;  // descending; the step after the last is t = 0

  static Schedule linear(std::size_t base_steps = 1000, double beta_start = 1e-4, double beta_end = 0.02,
                         std::size_t sample_steps = 50);

  std::size_t sample_steps() const { return timesteps.size(); }
  double alpha_bar(std::size_t t) const;
  /// Timestep that follows timesteps[k] during sampling (0 after the last).
  std::size_t previous(std::size_t k) const { return k + 1 < timesteps.size() ? timesteps[k + 1] : 0; }
  std::size_t first() const { return timesteps.front(); }
};

struct WorldConfig {
  std::uint64_t seed = 7;
  LatentShape shape{};
  double query_gain = 16.0;
  VocabularySpec vocab{};  // vocab.seed is overwritten with `seed`
  std::size_t sample_steps = 50;
};

/// Everything the denoiser needs, immutable after construction. Copies share
/// the forward-evaluation counter.
class World {
 public:
  static World build(const WorldConfig& config);
  World(LatentShape shape, DenoiserParams params, Vocabulary vocab, Schedule schedule);

  const LatentShape& shape() const { return shape_; }
  const DenoiserParams& params() const { return params_; }
  const Vocabulary& vocab() const { return vocab_; }
  const Schedule& schedule() const { return schedule_; }

  /// Per-token key logit vector a_i = W_qᵀ W_k e_i / √d (length C), so the
  /// attention logit at pixel z is ⟨z, a_i⟩.
  const Matrix& token_keys() const { return keys_; }
  /// Per-token value W_v e_i (length C).
  const Matrix& token_values() const { return values_; }

  std::uint64_t forward_count() const { return counter_->load(); }
  void count_forward() const { counter_->fetch_add(1); }

 private:
  LatentShape shape_;
  DenoiserParams params_;
  Vocabulary vocab_;
  Schedule schedule_;
  Matrix keys_;    // N×C
  Matrix values_;  // N×C
  std::shared_ptr<std::atomic<std::uint64_t>> counter_ = std::make_shared<std::atomic<std::uint64_t>>(0);
};

/// Per-pixel softmax over prompt tokens. weights(p, i) = M_i at pixel p = y*W + x.
struct AttentionMaps {
  LatentShape shape;
  Matrix weights;  // pixels × tokens

  std::size_t token_count() const { return static_cast<std::size_t>(weights.cols()); }
  std::size_t pixel_count() const { return static_cast<std::size_t>(weights.rows()); }
  Vector map(std::size_t token) const { return weights.col(static_cast<Eigen::Index>(token)); }
  double at(std::size_t token, std::size_t y, std::size_t x) const {
    return weights(static_cast<Eigen::Index>(y * shape.width + x), static_cast<Eigen::Index>(token));
  }
};

AttentionMaps cross_attention(const LatentTensor& z, const TokenPrompt& prompt, const World& world);
LatentTensor predict_x0(const LatentTensor& z, const TokenPrompt& prompt, const World& world);
LatentTensor predict_noise(const LatentTensor& z, const TokenPrompt& prompt, std::size_t t, const World& world);

/// One denoiser forward evaluation: both branches plus their guided combination.
struct NoisePrediction {
  LatentTensor conditional;
  LatentTensor negative;  // unconditional when no negative prompt is given
  LatentTensor guided;
  AttentionMaps attention;  // conditional branch
};

NoisePrediction predict(const LatentTensor& z, const TokenPrompt& prompt, const TokenPrompt* negative, std::size_t t,
                        double guidance, const World& world);

/// ε_neg + γ(ε_c − ε_neg); `negative == nullptr` means the null prompt.
LatentTensor guided_noise(const LatentTensor& z, const TokenPrompt& prompt, const TokenPrompt* negative,
                          std::size_t t, double guidance, const World& world);

/// Elementwise ε_neg + γ(ε_c − ε_neg); γ == 1 returns ε_c unchanged.
LatentTensor combine_guidance(const LatentTensor& conditional, const LatentTensor& negative, double guidance);

LatentTensor ddim_step(const LatentTensor& z, const LatentTensor& eps, std::size_t t, std::size_t t_prev,
                       const Schedule& schedule);

struct SampleResult {
  LatentTensor x0;
  LatentTensor first_step_noise;
  AttentionMaps attention;  // conditional branch at t = T
};

SampleResult sample(const LatentTensor& z_T, const TokenPrompt& prompt, const TokenPrompt* negative, double guidance,
                    const World& world);

}  // namespace ndm
