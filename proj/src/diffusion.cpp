#include "ndm/diffusion.hpp"

#include "ndm/error.hpp"
#include "ndm/rng.hpp"

#include <cmath>

namespace ndm {

Schedule Schedule::linear(std::size_t base_steps, double beta_start, double beta_end, std::size_t sample_steps) {
  if (base_steps < 1) fail(Errc::config, "schedule: base steps must be positive");
  if (sample_steps < 1 || sample_steps > base_steps) fail(Errc::config, "schedule: sample steps must be in 1..base");
  if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0)) fail(Errc::config, "schedule: bad beta range");
  Schedule s;
  s.base_steps = base_steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.assign(base_steps + 1, 0.0);
  s.alpha_bars.assign(base_steps + 1, 1.0);
  for (std::size_t t = 1; t <= base_steps; ++t) {
    const double frac = base_steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(base_steps - 1);
    s.betas[t] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bars[t] = s.alpha_bars[t - 1] * (1.0 - s.betas[t]);
  }
  for (std::size_t k = 0; k < sample_steps; ++k) {
    s.timesteps.push_back((sample_steps - k) * base_steps / sample_steps);
  }
  return s;
}

double Schedule::alpha_bar(std::size_t t) const {
  if (t >= alpha_bars.size()) fail(Errc::schedule_domain, "timestep " + std::to_string(t) + " outside the schedule");
  return alpha_bars[t];
}

World World::build(const WorldConfig& config) {
  auto params = build_denoiser_params(config.seed, config.vocab.dim, config.shape.channels, config.query_gain);
  VocabularySpec vs = config.vocab;
  vs.seed = config.seed;
  auto vocab = build_vocabulary(vs, params);
  return World(config.shape, std::move(params), std::move(vocab),
               Schedule::linear(1000, 1e-4, 0.02, config.sample_steps));
}

World::World(LatentShape shape, DenoiserParams params, Vocabulary vocab, Schedule schedule)
    : shape_(shape), params_(std::move(params)), vocab_(std::move(vocab)), schedule_(std::move(schedule)) {
  if (params_.channels() != shape_.channels) fail(Errc::config, "world: channel count differs from denoiser");
  vocab_.validate(params_);
  const auto n = static_cast<Eigen::Index>(vocab_.size());
  const auto c = static_cast<Eigen::Index>(shape_.channels);
  const double sd = std::sqrt(static_cast<double>(params_.dim()));
  keys_.resize(n, c);
  values_.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vector& e = vocab_.token(static_cast<TokenId>(i)).embedding;
    const Vector k = params_.w_k * e;
    keys_.row(i) = (params_.w_q.transpose() * k / sd).transpose();
    values_.row(i) = (params_.w_v * e).transpose();
  }
}

namespace {

void check_latent(const LatentTensor& z, const World& world) {
  if (!(z.shape() == world.shape())) fail(Errc::invalid_input, "latent shape does not match the world");
}

Matrix gather_rows(const Matrix& table, const TokenPrompt& prompt) {
  Matrix out(static_cast<Eigen::Index>(prompt.tokens.size()), table.cols());
  for (std::size_t i = 0; i < prompt.tokens.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = table.row(static_cast<Eigen::Index>(prompt.tokens[i]));
  }
  return out;
}

LatentTensor noise_from_x0(const LatentTensor& z, const LatentTensor& x0, double alpha_bar) {
  if (!(alpha_bar < 1.0)) fail(Errc::schedule_domain, "predict_noise: alpha_bar = 1 has no noise component");
  const double a = std::sqrt(alpha_bar);
  const double s = std::sqrt(1.0 - alpha_bar);
  LatentTensor eps(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) eps.data()[i] = (z.data()[i] - a * x0.data()[i]) / s;
  return eps;
}

}  // namespace

AttentionMaps cross_attention(const LatentTensor& z, const TokenPrompt& prompt, const World& world) {
  check_latent(z, world);
  validate_prompt(prompt, world.vocab());
  const Matrix keys = gather_rows(world.token_keys(), prompt);
  const Matrix logits = z.to_pixels() * keys.transpose();
  return AttentionMaps{z.shape(), softmax_over_tokens(logits)};
}

namespace {

LatentTensor render_x0(const AttentionMaps& maps, const TokenPrompt& prompt, const World& world) {
  const Matrix values = gather_rows(world.token_values(), prompt);
  return LatentTensor::from_pixels(maps.shape, maps.weights * values);
}

}  // namespace

LatentTensor predict_x0(const LatentTensor& z, const TokenPrompt& prompt, const World& world) {
  return render_x0(cross_attention(z, prompt, world), prompt, world);
}

LatentTensor predict_noise(const LatentTensor& z, const TokenPrompt& prompt, std::size_t t, const World& world) {
  const double ab = world.schedule().alpha_bar(t);
  return noise_from_x0(z, predict_x0(z, prompt, world), ab);
}

LatentTensor combine_guidance(const LatentTensor& conditional, const LatentTensor& negative, double guidance) {
  if (!(guidance > 0.0)) fail(Errc::invalid_input, "guidance scale must be positive");
  if (!(conditional.shape() == negative.shape())) fail(Errc::invalid_input, "guidance: shape mismatch");
  if (guidance == 1.0) return conditional;
  LatentTensor out(conditional.shape());
  const auto& c = conditional.data();
  const auto& n = negative.data();
  for (std::size_t i = 0; i < c.size(); ++i) out.data()[i] = n[i] + guidance * (c[i] - n[i]);
  return out;
}

NoisePrediction predict(const LatentTensor& z, const TokenPrompt& prompt, const TokenPrompt* negative, std::size_t t,
                        double guidance, const World& world) {
  if (!(guidance > 0.0)) fail(Errc::invalid_input, "guidance scale must be positive");
  const double ab = world.schedule().alpha_bar(t);
  world.count_forward();
  AttentionMaps maps = cross_attention(z, prompt, world);
  LatentTensor cond = noise_from_x0(z, render_x0(maps, prompt, world), ab);
  const TokenPrompt null = null_prompt(world.vocab());
  LatentTensor neg = predict_noise(z, negative ? *negative : null, t, world);
  LatentTensor guided = combine_guidance(cond, neg, guidance);
  return NoisePrediction{std::move(cond), std::move(neg), std::move(guided), std::move(maps)};
}

LatentTensor guided_noise(const LatentTensor& z, const TokenPrompt& prompt, const TokenPrompt* negative,
                          std::size_t t, double guidance, const World& world) {
  return predict(z, prompt, negative, t, guidance, world).guided;
}

LatentTensor ddim_step(const LatentTensor& z, const LatentTensor& eps, std::size_t t, std::size_t t_prev,
                       const Schedule& schedule) {
  if (!(z.shape() == eps.shape())) fail(Errc::invalid_input, "ddim_step: shape mismatch");
  if (t_prev >= t) fail(Errc::schedule_domain, "ddim_step: t_prev must precede t");
  const double ab = schedule.alpha_bar(t);
  const double ab_prev = schedule.alpha_bar(t_prev);
  const double sa = std::sqrt(ab);
  const double sn = std::sqrt(1.0 - ab);
  const double pa = std::sqrt(ab_prev);
  const double pn = std::sqrt(1.0 - ab_prev);
  LatentTensor x0(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) x0.data()[i] = (z.data()[i] - sn * eps.data()[i]) / sa;
  if (ab_prev == 1.0) return x0;
  LatentTensor out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out.data()[i] = pa * x0.data()[i] + pn * eps.data()[i];
  return out;
}

SampleResult sample(const LatentTensor& z_T, const TokenPrompt& prompt, const TokenPrompt* negative, double guidance,
                    const World& world) {
  check_latent(z_T, world);
  const auto& sched = world.schedule();
  LatentTensor z = z_T;
  SampleResult out;
  for (std::size_t k = 0; k < sched.sample_steps(); ++k) {
    const std::size_t t = sched.timesteps[k];
    NoisePrediction pred = predict(z, prompt, negative, t, guidance, world);
    if (k == 0) {
      out.first_step_noise = pred.guided;
      out.attention = std::move(pred.attention);
    }
    z = ddim_step(z, pred.guided, t, sched.previous(k), sched);
  }
  out.x0 = std::move(z);
  return out;
}

}  // namespace ndm
