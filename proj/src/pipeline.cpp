#include "ndm/pipeline.hpp"

#include "ndm/attention.hpp"
#include "ndm/error.hpp"
#include "ndm/io.hpp"
#include "ndm/llm_provider.hpp"
#include "ndm/rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace ndm {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

nlohmann::ordered_json optional_number(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::base: return "base";
    case Condition::neg_fixed: return "neg_fixed";
    case Condition::neg_adaptive: return "neg_adaptive";
    case Condition::noise_only: return "noise_only";
    case Condition::neg_noise: return "neg_noise";
    case Condition::full: return "full";
    case Condition::refuse: return "refuse";
  }
  return "base";
}

Condition condition_from_string(std::string_view s) {
  for (Condition c : all_conditions()) {
    if (to_string(c) == s) return c;
  }
  fail(Errc::config, "unknown condition '" + std::string(s) + "'");
}

std::vector<Condition> all_conditions() {
  return {Condition::base,     Condition::neg_fixed, Condition::neg_adaptive, Condition::noise_only,
          Condition::neg_noise, Condition::full,      Condition::refuse};
}

std::string_view to_string(Action a) {
  switch (a) {
    case Action::pass_through: return "pass_through";
    case Action::refused: return "refused";
    case Action::mitigated: return "mitigated";
    case Action::mitigated_generic: return "mitigated_generic";
  }
  return "pass_through";
}

double percentile_nearest_rank(std::vector<double> values, double pct) {
  if (values.empty()) fail(Errc::invalid_input, "percentile of an empty set");
  if (!(pct > 0.0 && pct <= 100.0)) fail(Errc::invalid_input, "percentile must lie in (0,100]");
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

LatentTensor prompt_noise(const World& world, std::uint64_t noise_seed, std::size_t index) {
  return LatentTensor::gaussian(world.shape(), mix_seed(noise_seed, 1000 + index));
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

double calibrate_tau(const World& world, const PipelineConfig& config) {
  if (config.tau) return *config.tau;
  DatasetSpec spec;
  spec.seed = mix_seed(config.world.seed, 5);
  spec.n_per_class = config.calibration_samples;
  const PromptDataset data = synth_dataset(world.vocab(), spec);
  std::vector<TokenPrompt> benign;
  for (const auto& p : data.entries) {
    if (p.label == Label::benign) benign.push_back(p);
  }
  std::vector<double> scores(benign.size());
  parallel_for(benign.size(), config.threads, [&](std::size_t i) {
    const LatentTensor z = LatentTensor::gaussian(world.shape(), mix_seed(config.noise_seed, 700000 + i));
    scores[i] = unsafe_score(sample(z, benign[i], nullptr, config.guidance, world).x0, world.vocab());
  });
  return percentile_nearest_rank(std::move(scores), config.tau_percentile);
}

std::shared_ptr<const NegativeProvider> make_provider(const PipelineConfig& config, const World& world) {
  Lexicon lexicon = config.lexicon_path.empty() ? default_lexicon(world.vocab(), world.params())
                                                : load_lexicon(config.lexicon_path, world.vocab());
  if (config.provider == ProviderChoice::llm) {
    auto endpoint = LlmEndpoint::from_env();
    if (!endpoint) fail(Errc::config, "provider=llm needs NDM_LLM_ENDPOINT and NDM_LLM_KEY");
    return std::make_shared<LlmProvider>(*endpoint, std::shared_ptr<const HttpTransport>(make_http_transport()),
                                         std::move(lexicon));
  }
  return std::make_shared<LexiconProvider>(std::move(lexicon));
}

Pipeline::Pipeline(World world, DetectorModel model, PipelineConfig config,
                   std::shared_ptr<const NegativeProvider> provider, double tau)
    : world_(std::move(world)), model_(std::move(model)), config_(std::move(config)), provider_(std::move(provider)),
      tau_(tau) {
  config_.validate();
  if (!provider_) fail(Errc::config, "pipeline: no negative-prompt provider");
  if (model_.pca.input_dim() != world_.shape().size()) {
    fail(Errc::config, "pipeline: detector feature length does not match the world");
  }
}

std::pair<int, double> Pipeline::detect(const TokenPrompt& prompt) const {
  const double v = model_.decision_value(extract_feature(prompt, world_, model_.feature_config));
  return {v > 0.0 ? 1 : 0, v};
}

GenerateResult Pipeline::generate(const TokenPrompt& prompt, const LatentTensor& z_T) const {
  return generate(prompt, z_T, config_.mode);
}

GenerateResult Pipeline::generate(const TokenPrompt& prompt, const LatentTensor& z_T, Mode mode) const {
  const auto start = Clock::now();
  validate_prompt(prompt, world_.vocab());
  const auto [decision, value] = detect(prompt);
  GenerateResult out;
  if (decision == 1 && mode == Mode::mitigate) {
    out = mitigate(prompt, z_T);
  } else if (decision == 1) {
    out.action = Action::refused;
  } else {
    out.action = Action::pass_through;
    out.x0 = sample(z_T, prompt, nullptr, config_.guidance, world_).x0;
    out.score = unsafe_score(*out.x0, world_.vocab());
  }
  out.decision = decision;
  out.decision_value = value;
  out.wall_ms = ms_since(start);
  return out;
}

GenerateResult Pipeline::mitigate(const TokenPrompt& prompt, const LatentTensor& z_T) const {
  GenerateResult out;
  LatentTensor z = z_T;
  if (content_token_indices(prompt, world_.vocab()).empty()) {
    out.action = Action::mitigated_generic;
    out.negative = generic_negative(world_.vocab());
    out.note = "no content tokens; generic negative without noise optimisation";
  } else {
    OptimResult opt = optimize_initial_noise(z_T, prompt, world_, config_.optim);
    z = std::move(opt.z);
    out.trace = std::move(opt.trace);
    out.negative = adaptive_negative(prompt, world_.vocab(), *provider_);
    out.action = Action::mitigated;
  }
  out.x0 = sample(z, prompt, &out.negative->negative, config_.guidance, world_).x0;
  out.score = unsafe_score(*out.x0, world_.vocab());
  return out;
}

const ConditionSummary& SuiteReport::summary(Condition c) const {
  for (const auto& s : summaries) {
    if (s.condition == c) return s;
  }
  fail(Errc::invalid_input, "condition '" + std::string(to_string(c)) + "' was not evaluated");
}

nlohmann::ordered_json SuiteReport::summary_json() const {
  nlohmann::ordered_json j;
  j["tau"] = tau;
  j["prompts"] = prompts.size();
  auto conds = nlohmann::ordered_json::object();
  for (const auto& s : summaries) {
    conds[std::string(to_string(s.condition))] = {{"unsafe_prompts", s.unsafe_prompts},
                                                  {"unsafe_outputs", s.unsafe_outputs},
                                                  {"asr", s.asr},
                                                  {"mean_unsafe_score", s.mean_unsafe_score ? nlohmann::ordered_json(*s.mean_unsafe_score)
                                                                                         : nlohmann::ordered_json(nullptr)}};
  }
  j["conditions"] = std::move(conds);
  j["benign_prompts"] = benign_prompts;
  j["benign_passed"] = benign_passed;
  j["pass_through_rate"] = pass_through_rate;
  j["mean_detect_ms"] = mean_detect_ms;
  j["mean_wall_ms"] = mean_wall_ms;
  return j;
}

std::string SuiteReport::prompts_jsonl(const Vocabulary& vocab) const {
  std::string out;
  for (const auto& p : prompts) {
    nlohmann::ordered_json j;
    j["index"] = p.index;
    j["tokens"] = p.prompt.tokens;
    j["label"] = p.prompt.label ? nlohmann::ordered_json(to_string(*p.prompt.label)) : nlohmann::ordered_json(nullptr);
    j["decision"] = p.decision;
    j["decision_value"] = p.decision_value;
    auto outcomes = nlohmann::ordered_json::object();
    for (const auto& o : p.outcomes) {
      outcomes[std::string(to_string(o.condition))] = {{"score", optional_number(o.score)}, {"unsafe", o.unsafe_output}};
    }
    j["outcomes"] = std::move(outcomes);
    if (p.trace) {
      j["optimizer"] = {{"reason", to_string(p.trace->reason)},
                        {"initial_loss", p.trace->initial_loss},
                        {"final_loss", p.trace->final_loss()},
                        {"iterations", p.trace->steps.size()}};
    } else {
      j["optimizer"] = nullptr;
    }
    j["negative"] = p.adaptive ? p.adaptive->to_json(vocab) : nlohmann::ordered_json(nullptr);
    j["dominant_max_weight"] = p.dominant_max_weight;
    j["detect_ms"] = p.detect_ms;
    j["wall_ms"] = p.wall_ms;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string SuiteReport::traces_jsonl() const {
  std::string out;
  for (const auto& p : prompts) {
    if (!p.trace) continue;
    for (const auto& s : p.trace->steps) {
      nlohmann::ordered_json j;
      j["index"] = p.index;
      j["iteration"] = s.iteration;
      j["loss"] = s.loss;
      j["step"] = s.step;
      j["dominant"] = s.dominant;
      j["accepted"] = s.accepted;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

SuiteReport evaluate_suite(const Pipeline& pipeline, const PromptDataset& dataset, std::span<const Condition> conditions,
                           std::optional<OptimConfig> optim) {
  if (dataset.entries.empty()) fail(Errc::invalid_input, "evaluate_suite: empty dataset");
  if (conditions.empty()) fail(Errc::invalid_input, "evaluate_suite: no conditions requested");
  const World& world = pipeline.world();
  const Vocabulary& vocab = world.vocab();
  const PipelineConfig& cfg = pipeline.config();
  const OptimConfig optim_cfg = optim.value_or(cfg.optim);
  const double gamma = cfg.guidance;
  const double tau = pipeline.tau();
  const NegativePromptSpec generic = generic_negative(vocab);

  SuiteReport report;
  report.tau = tau;
  report.conditions.assign(conditions.begin(), conditions.end());
  report.prompts.resize(dataset.entries.size());

  parallel_for(dataset.entries.size(), cfg.threads, [&](std::size_t i) {
    const auto start = Clock::now();
    const TokenPrompt& prompt = dataset.entries[i];
    validate_prompt(prompt, vocab);
    PromptReport& pr = report.prompts[i];
    pr.index = i;
    pr.prompt = prompt;
    const auto det_start = Clock::now();
    std::tie(pr.decision, pr.decision_value) = pipeline.detect(prompt);
    pr.detect_ms = ms_since(det_start);

    const LatentTensor z = prompt_noise(world, cfg.noise_seed, i);
    const auto content = content_token_indices(prompt, vocab);
    if (!content.empty()) {
      pr.dominant_max_weight = analyze(cross_attention(z, prompt, world), content).dominant_token().max_weight;
    }

    std::optional<double> base_score;
    std::optional<LatentTensor> z_opt;
    auto score_of = [&](const LatentTensor& zt, const TokenPrompt* neg) {
      return unsafe_score(sample(zt, prompt, neg, gamma, world).x0, vocab);
    };
    auto base = [&] {
      if (!base_score) base_score = score_of(z, nullptr);
      return *base_score;
    };
    auto adaptive = [&]() -> const NegativePromptSpec& {
      if (!pr.adaptive) pr.adaptive = adaptive_negative(prompt, vocab, pipeline.provider());
      return *pr.adaptive;
    };
    auto optimised = [&]() -> const LatentTensor& {
      if (!z_opt) {
        if (content.empty()) {
          z_opt = z;
        } else {
          OptimResult r = optimize_initial_noise(z, prompt, world, optim_cfg);
          z_opt = std::move(r.z);
          pr.trace = std::move(r.trace);
        }
      }
      return *z_opt;
    };

    for (Condition c : conditions) {
      ConditionOutcome o{c, std::nullopt, false};
      switch (c) {
        case Condition::base: o.score = base(); break;
        case Condition::neg_fixed: o.score = score_of(z, &generic.negative); break;
        case Condition::neg_adaptive: o.score = score_of(z, &adaptive().negative); break;
        case Condition::noise_only: o.score = score_of(optimised(), nullptr); break;
        case Condition::neg_noise: o.score = score_of(optimised(), &generic.negative); break;
        case Condition::full:
          if (pr.decision == 0) {
            o.score = base();
          } else if (content.empty()) {
            o.score = score_of(z, &generic.negative);
          } else {
            o.score = score_of(optimised(), &adaptive().negative);
          }
          break;
        case Condition::refuse:
          if (pr.decision == 0) o.score = base();
          break;
      }
      o.unsafe_output = o.score && *o.score > tau;
      pr.outcomes.push_back(o);
    }
    pr.wall_ms = ms_since(start);
  });

  double detect_total = 0.0, wall_total = 0.0;
  for (const auto& p : report.prompts) {
    detect_total += p.detect_ms;
    wall_total += p.wall_ms;
    if (p.prompt.label == Label::benign) {
      ++report.benign_prompts;
      if (p.decision == 0) ++report.benign_passed;
    }
  }
  for (std::size_t k = 0; k < conditions.size(); ++k) {
    ConditionSummary s;
    s.condition = conditions[k];
    double score_total = 0.0;
    std::size_t scored = 0;
    for (const auto& p : report.prompts) {
      if (p.prompt.label != Label::unsafe) continue;
      ++s.unsafe_prompts;
      const auto& o = p.outcomes[k];
      if (o.unsafe_output) ++s.unsafe_outputs;
      if (o.score) {
        score_total += *o.score;
        ++scored;
      }
    }
    s.asr = s.unsafe_prompts ? static_cast<double>(s.unsafe_outputs) / static_cast<double>(s.unsafe_prompts) : 0.0;
    if (scored) s.mean_unsafe_score = score_total / static_cast<double>(scored);
    report.summaries.push_back(s);
  }
  const double n = static_cast<double>(report.prompts.size());
  report.pass_through_rate = report.benign_prompts
                                 ? static_cast<double>(report.benign_passed) / static_cast<double>(report.benign_prompts)
                                 : 0.0;
  report.mean_detect_ms = detect_total / n;
  report.mean_wall_ms = wall_total / n;
  return report;
}

void write_suite_report(const SuiteReport& report, const Vocabulary& vocab, const std::filesystem::path& dir) {
  write_text_file(dir / "prompts.jsonl", report.prompts_jsonl(vocab));
  write_text_file(dir / "optimizer_traces.jsonl", report.traces_jsonl());
  write_text_file(dir / "summary.json", report.summary_json().dump(2) + "\n");
}

ScoreDistribution ScoreDistribution::of(std::vector<double> scores, double tau) {
  ScoreDistribution d;
  d.scores = std::move(scores);
  if (d.scores.empty()) return d;
  const double n = static_cast<double>(d.scores.size());
  for (double s : d.scores) d.mean += s;
  d.mean /= n;
  for (double s : d.scores) d.variance += (s - d.mean) * (s - d.mean);
  d.variance /= n;
  d.above_tau = static_cast<std::size_t>(std::count_if(d.scores.begin(), d.scores.end(), [&](double s) { return s > tau; }));
  d.trigger_fraction = static_cast<double>(d.above_tau) / n;
  return d;
}

nlohmann::ordered_json ScoreDistribution::to_json() const {
  return {{"mean", mean}, {"variance", variance}, {"above_tau", above_tau},
          {"trigger_fraction", trigger_fraction}, {"scores", scores}};
}

nlohmann::ordered_json SeedSweep::to_json() const {
  nlohmann::ordered_json j;
  j["tokens"] = prompt.tokens;
  j["tau"] = tau;
  j["before"] = before.to_json();
  j["after"] = after.to_json();
  return j;
}

SeedSweep seed_sweep(const Pipeline& pipeline, const TokenPrompt& prompt, std::size_t n, std::uint64_t seed_base,
                     bool optimise) {
  if (n < 2) fail(Errc::invalid_input, "seed sweep needs at least two seeds");
  const World& world = pipeline.world();
  validate_prompt(prompt, world.vocab());
  const bool can_optimise = optimise && !content_token_indices(prompt, world.vocab()).empty();
  std::vector<double> before(n), after(n);
  parallel_for(n, pipeline.config().threads, [&](std::size_t s) {
    const LatentTensor z = LatentTensor::gaussian(world.shape(), mix_seed(seed_base, s));
    const double g = pipeline.config().guidance;
    before[s] = unsafe_score(sample(z, prompt, nullptr, g, world).x0, world.vocab());
    if (can_optimise) {
      const LatentTensor zs = optimize_initial_noise(z, prompt, world, pipeline.config().optim).z;
      after[s] = unsafe_score(sample(zs, prompt, nullptr, g, world).x0, world.vocab());
    } else {
      after[s] = before[s];
    }
  });
  SeedSweep out;
  out.prompt = prompt;
  out.tau = pipeline.tau();
  out.before = ScoreDistribution::of(std::move(before), out.tau);
  out.after = ScoreDistribution::of(std::move(after), out.tau);
  return out;
}

std::vector<AlphaPoint> alpha_sweep(const Pipeline& pipeline, const PromptDataset& dataset,
                                    std::span<const double> alphas) {
  std::vector<AlphaPoint> out;
  const Condition full[] = {Condition::full};
  for (double a : alphas) {
    OptimConfig oc = pipeline.config().optim;
    oc.alpha = a;
    oc.validate();
    const SuiteReport r = evaluate_suite(pipeline, dataset, full, oc);
    std::size_t traced = 0, reached = 0;
    for (const auto& p : r.prompts) {
      if (!p.trace) continue;
      ++traced;
      if (p.trace->reason == Termination::target_reached) ++reached;
    }
    out.push_back(AlphaPoint{a, r.summary(Condition::full).asr,
                             traced ? static_cast<double>(reached) / static_cast<double>(traced) : 0.0});
  }
  return out;
}

}  // namespace ndm
