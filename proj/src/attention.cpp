#include "ndm/attention.hpp"

#include "ndm/error.hpp"

#include <algorithm>

namespace ndm {

std::vector<std::size_t> content_token_indices(const TokenPrompt& prompt, const Vocabulary& vocab) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
    if (vocab.is_content(prompt.tokens[i])) out.push_back(i);
  }
  return out;
}

std::vector<TokenMask> AttentionAnalysis::masks() const {
  std::vector<TokenMask> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.mask);
  return out;
}

const TokenAnalysis& AttentionAnalysis::dominant_token() const {
  for (const auto& t : tokens) {
    if (t.index == dominant) return t;
  }
  fail(Errc::invalid_input, "analysis has no dominant token");
}

AttentionAnalysis analyze(const AttentionMaps& maps, std::span<const std::size_t> content) {
  if (content.empty()) fail(Errc::invalid_input, "analyze: no content tokens");
  const std::size_t pixels = maps.pixel_count();
  AttentionAnalysis out;
  double best = -1.0;
  for (std::size_t index : content) {
    if (index >= maps.token_count()) fail(Errc::invalid_input, "analyze: content index out of range");
    const Vector m = maps.map(index);
    TokenAnalysis ta;
    ta.index = index;
    ta.mask.index = index;
    ta.mask.cells.assign(pixels, 0);
    ta.max_weight = m.maxCoeff();
    ta.beta = otsu_threshold(std::span<const double>(m.data(), pixels));
    if (ta.beta) {
      for (std::size_t p = 0; p < pixels; ++p) {
        if (m(static_cast<Eigen::Index>(p)) > *ta.beta) {
          ta.mask.cells[p] = 1;
          ta.sum += m(static_cast<Eigen::Index>(p));
        }
      }
    }
    if (ta.sum > best) {
      best = ta.sum;
      out.dominant = index;
    }
    out.tokens.push_back(std::move(ta));
  }
  out.loss = best;
  return out;
}

nlohmann::ordered_json analysis_to_json(const AttentionAnalysis& analysis, const TokenPrompt& prompt) {
  nlohmann::ordered_json j;
  std::vector<TokenId> toks;
  auto beta = nlohmann::ordered_json::array();
  std::vector<double> sums;
  for (const auto& t : analysis.tokens) {
    toks.push_back(prompt.tokens.at(t.index));
    beta.push_back(t.beta ? nlohmann::ordered_json(*t.beta) : nlohmann::ordered_json(nullptr));
    sums.push_back(t.sum);
  }
  j["tokens"] = toks;
  j["beta"] = std::move(beta);
  j["sums"] = sums;
  j["dominant"] = prompt.tokens.at(analysis.dominant);
  j["loss"] = analysis.loss;
  return j;
}

double frozen_mask_loss(const AttentionMaps& maps, std::span<const TokenMask> masks, std::size_t* active) {
  if (masks.empty()) fail(Errc::invalid_input, "frozen loss: no masks");
  double best = -1.0;
  std::size_t arg = masks.front().index;
  for (const auto& mask : masks) {
    if (mask.index >= maps.token_count() || mask.cells.size() != maps.pixel_count()) {
      fail(Errc::invalid_input, "frozen loss: mask does not fit the attention maps");
    }
    double s = 0.0;
    for (std::size_t p = 0; p < mask.cells.size(); ++p) {
      if (mask.cells[p]) s += maps.weights(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(mask.index));
    }
    if (s > best) {
      best = s;
      arg = mask.index;
    }
  }
  if (active) *active = arg;
  return best;
}

LossAndGrad loss_and_grad(const LatentTensor& z, const TokenPrompt& prompt, const World& world,
                          std::span<const TokenMask> masks) {
  const AttentionMaps maps = cross_attention(z, prompt, world);
  LossAndGrad out;
  out.loss = frozen_mask_loss(maps, masks, &out.active);
  const TokenMask* mask = nullptr;
  for (const auto& m : masks) {
    if (m.index == out.active) {
      mask = &m;
      break;
    }
  }

  // dL/dz_p = Ω_j(p) M_j(p) (a_j − Σ_i M_i(p) a_i)
  const auto n = static_cast<Eigen::Index>(prompt.tokens.size());
  Matrix keys(n, static_cast<Eigen::Index>(z.shape().channels));
  for (Eigen::Index i = 0; i < n; ++i) {
    keys.row(i) = world.token_keys().row(static_cast<Eigen::Index>(prompt.tokens[static_cast<std::size_t>(i)]));
  }
  const Matrix mean_key = maps.weights * keys;  // pixels × C
  const auto j = static_cast<Eigen::Index>(out.active);
  Matrix grad = Matrix::Zero(mean_key.rows(), mean_key.cols());
  for (Eigen::Index p = 0; p < grad.rows(); ++p) {
    if (!mask->cells[static_cast<std::size_t>(p)]) continue;
    grad.row(p) = maps.weights(p, j) * (keys.row(j) - mean_key.row(p));
  }
  out.gradient = LatentTensor::from_pixels(z.shape(), grad);
  return out;
}

}  // namespace ndm
