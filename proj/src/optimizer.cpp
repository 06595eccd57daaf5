#include "ndm/optimizer.hpp"

#include "ndm/error.hpp"

#include <cmath>

namespace ndm {

void OptimConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) fail(Errc::config, "optimizer: alpha must lie in (0,1)");
  if (max_iters < 1) fail(Errc::config, "optimizer: max_iters must be >= 1");
  if (!(initial_step > 0.0)) fail(Errc::config, "optimizer: initial step must be positive");
  if (!(backtrack > 0.0 && backtrack < 1.0)) fail(Errc::config, "optimizer: backtrack factor must lie in (0,1)");
  if (!(min_step > 0.0 && min_step <= initial_step)) fail(Errc::config, "optimizer: bad minimum step");
}

std::string_view to_string(Termination t) {
  switch (t) {
    case Termination::target_reached: return "target_reached";
    case Termination::iter_cap: return "iter_cap";
    case Termination::stalled: return "stalled";
  }
  return "iter_cap";
}

std::string OptimTrace::to_jsonl() const {
  std::string out;
  for (const auto& s : steps) {
    nlohmann::ordered_json j;
    j["iteration"] = s.iteration;
    j["loss"] = s.loss;
    j["step"] = s.step;
    j["dominant"] = s.dominant;
    j["accepted"] = s.accepted;
    out += j.dump();
    out += '\n';
  }
  return out;
}

LatentTensor renormalize(const LatentTensor& z) {
  const double m = z.mean();
  const double s = z.stddev();
  LatentTensor out = z;
  for (double& v : out.data()) v = s > 0.0 ? (v - m) / s : v - m;
  return out;
}

OptimResult optimize_initial_noise(const LatentTensor& z_T, const TokenPrompt& prompt, const World& world,
                                   const OptimConfig& config) {
  config.validate();
  const auto content = content_token_indices(prompt, world.vocab());
  if (content.empty()) fail(Errc::invalid_input, "optimizer: prompt has no content tokens");

  auto evaluate = [&](const LatentTensor& z) { return analyze(cross_attention(z, prompt, world), content); };

  OptimResult out{z_T, {}};
  AttentionAnalysis current = evaluate(z_T);
  out.trace.initial_loss = current.loss;
  const double target = config.alpha * current.loss;
  if (current.loss == 0.0) {
    out.trace.reason = Termination::target_reached;
    return out;
  }

  for (std::size_t it = 0; it < config.max_iters; ++it) {
    const auto masks = current.masks();
    const LossAndGrad lg = loss_and_grad(out.z, prompt, world, masks);
    OptimStep step{it, current.loss, 0.0, prompt.tokens[current.dominant], false};
    for (double eta = config.initial_step; eta >= config.min_step; eta *= config.backtrack) {
      LatentTensor cand = out.z;
      for (std::size_t i = 0; i < cand.size(); ++i) cand.data()[i] -= eta * lg.gradient.data()[i];
      if (config.renormalize) cand = renormalize(cand);
      AttentionAnalysis fresh = evaluate(cand);
      if (fresh.loss < current.loss) {
        out.z = std::move(cand);
        current = std::move(fresh);
        step = OptimStep{it, current.loss, eta, prompt.tokens[current.dominant], true};
        break;
      }
    }
    out.trace.steps.push_back(step);
    if (!step.accepted) {
      out.trace.reason = Termination::stalled;
      return out;
    }
    if (current.loss <= target) {
      out.trace.reason = Termination::target_reached;
      return out;
    }
  }
  out.trace.reason = Termination::iter_cap;
  return out;
}

}  // namespace ndm
