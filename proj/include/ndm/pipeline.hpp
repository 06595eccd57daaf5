#pragma once

// Two-stage flow (detect, then refuse / mitigate / pass through) and the
// evaluation harness: condition suites, seed sweeps, alpha sweeps.

#include "ndm/config.hpp"
#include "ndm/detector.hpp"
#include "ndm/diffusion.hpp"
#include "ndm/negative.hpp"
#include "ndm/optimizer.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace ndm {

enum class Condition { base, neg_fixed, neg_adaptive, noise_only, neg_noise, full, refuse };
std::string_view to_string(Condition c);
Condition condition_from_string(std::string_view s);
std::vector<Condition> all_conditions();

/// Nearest-rank percentile, pct in (0,100].
double percentile_nearest_rank(std::vector<double> values, double pct);

/// Initial noise for the index-th prompt of a run; shared by every condition so comparisons are paired.
LatentTensor prompt_noise(const World& world, std::uint64_t noise_seed, std::size_t index);

/// τ_unsafe: percentile of unsafe_score over benign generations.
double calibrate_tau(const World& world, const PipelineConfig& config);

/// Runs fn(0..n-1) on a bounded worker pool; results keep index order.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

std::shared_ptr<const NegativeProvider> make_provider(const PipelineConfig& config, const World& world);

enum class Action { pass_through, refused, mitigated, mitigated_generic };
std::string_view to_string(Action a);

struct GenerateResult {
  int decision = 0;
  double decision_value = 0.0;
  Action action = Action::pass_through;
  std::optional<LatentTensor> x0;   // empty when refused
  std::optional<double> score;
  std::optional<OptimTrace> trace;
  std::optional<NegativePromptSpec> negative;
  std::string note;
  double wall_ms = 0.0;
};

class Pipeline {
 public:
  Pipeline(World world, DetectorModel model, PipelineConfig config, std::shared_ptr<const NegativeProvider> provider,
           double tau);

  const World& world() const { return world_; }
  const DetectorModel& model() const { return model_; }
  const PipelineConfig& config() const { return config_; }
  const NegativeProvider& provider() const { return *provider_; }
  double tau() const { return tau_; }

  /// Stage one only.
  std::pair<int, double> detect(const TokenPrompt& prompt) const;

  /// Full flow in the configured mode.
  GenerateResult generate(const TokenPrompt& prompt, const LatentTensor& z_T) const;
  GenerateResult generate(const TokenPrompt& prompt, const LatentTensor& z_T, Mode mode) const;

  /// Mitigation branch without the detector gate.
  GenerateResult mitigate(const TokenPrompt& prompt, const LatentTensor& z_T) const;

 private:
  World world_;
  DetectorModel model_;
  PipelineConfig config_;
  std::shared_ptr<const NegativeProvider> provider_;
  double tau_;
};

struct ConditionOutcome {
  Condition condition = Condition::base;
  std::optional<double> score;  // nullopt when refused
  bool unsafe_output = false;
};

struct PromptReport {
  std::size_t index = 0;
  TokenPrompt prompt;
  int decision = 0;
  double decision_value = 0.0;
  std::vector<ConditionOutcome> outcomes;
  std::optional<OptimTrace> trace;
  std::optional<NegativePromptSpec> adaptive;
  double dominant_max_weight = 0.0;
  double detect_ms = 0.0;
  double wall_ms = 0.0;
};

struct ConditionSummary {
  Condition condition = Condition::base;
  std::size_t unsafe_prompts = 0;
  std::size_t unsafe_outputs = 0;
  double asr = 0.0;
  std::optional<double> mean_unsafe_score;  // over unsafe-labelled prompts that produced an output
};

struct SuiteReport {
  double tau = 0.0;
  std::vector<Condition> conditions;
  std::vector<PromptReport> prompts;
  std::vector<ConditionSummary> summaries;
  std::size_t benign_prompts = 0;
  std::size_t benign_passed = 0;
  double pass_through_rate = 0.0;
  double mean_detect_ms = 0.0;
  double mean_wall_ms = 0.0;

  const ConditionSummary& summary(Condition c) const;
  nlohmann::ordered_json summary_json() const;
  std::string prompts_jsonl(const Vocabulary& vocab) const;
  std::string traces_jsonl() const;
};

/// The optimiser settings used by noise_only / neg_noise / full may be
/// overridden via `optim` (alpha sweeps).
SuiteReport evaluate_suite(const Pipeline& pipeline, const PromptDataset& dataset, std::span<const Condition> conditions,
                           std::optional<OptimConfig> optim = std::nullopt);

void write_suite_report(const SuiteReport& report, const Vocabulary& vocab, const std::filesystem::path& dir);

struct ScoreDistribution {
  std::vector<double> scores;
  double mean = 0.0;
  double variance = 0.0;
  std::size_t above_tau = 0;
  double trigger_fraction = 0.0;

  static ScoreDistribution of(std::vector<double> scores, double tau);
  nlohmann::ordered_json to_json() const;
};

struct SeedSweep {
  TokenPrompt prompt;
  double tau = 0.0;
  ScoreDistribution before;
  ScoreDistribution after;

  nlohmann::ordered_json to_json() const;
};

/// Initial noises drawn from `seed_base`; `after` optimises each noise first.
SeedSweep seed_sweep(const Pipeline& pipeline, const TokenPrompt& prompt, std::size_t n, std::uint64_t seed_base,
                     bool optimise = true);

struct AlphaPoint {
  double alpha = 0.0;
  double asr = 0.0;
  double target_fraction = 0.0;
};

std::vector<AlphaPoint> alpha_sweep(const Pipeline& pipeline, const PromptDataset& dataset,
                                    std::span<const double> alphas);

}  // namespace ndm
