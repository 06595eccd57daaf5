#pragma once

// Initial-noise optimisation: gradient descent with backtracking on the
// cross-attention loss, stopping once L ≤ α·L_init.

#include "ndm/attention.hpp"
#include "ndm/diffusion.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace ndm {

struct OptimConfig {
  double alpha = 0.7;
  std::size_t max_iters = 30;
  double initial_step = 10.0;
  double backtrack = 0.5;
  double min_step = 1e-3;
  bool renormalize = true;

  void validate() const;
};

enum class Termination { target_reached, iter_cap, stalled };
std::string_view to_string(Termination t);

struct OptimStep {
  std::size_t iteration = 0;
  double loss = 0.0;       // loss after the iteration (unchanged when rejected)
  double step = 0.0;       // accepted step size; 0 when no step was accepted
  TokenId dominant = 0;    // dominant token after the iteration
  bool accepted = false;
};

struct OptimTrace {
  double initial_loss = 0.0;
  std::vector<OptimStep> steps;
  Termination reason = Termination::iter_cap;

  double final_loss() const { return steps.empty() ? initial_loss : steps.back().loss; }
  std::string to_jsonl() const;
};

struct OptimResult {
  LatentTensor z;
  OptimTrace trace;
};

/// Shift and scale to zero mean and unit (population) standard deviation.
LatentTensor renormalize(const LatentTensor& z);

/// Masks are rebuilt from fresh attention after every accepted step; a step is
/// accepted only if the freshly re-masked loss decreases.
OptimResult optimize_initial_noise(const LatentTensor& z_T, const TokenPrompt& prompt, const World& world,
                                   const OptimConfig& config);

}  // namespace ndm
