#pragma once

// Pipeline configuration and its key=value file format.

#include "ndm/detector.hpp"
#include "ndm/diffusion.hpp"
#include "ndm/optimizer.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace ndm {

enum class Mode { refuse, mitigate };
enum class ProviderChoice { lexicon, llm };

struct PipelineConfig {
  WorldConfig world{};
  double guidance = 7.5;
  FeatureConfig feature{};
  OptimConfig optim{};
  Mode mode = Mode::mitigate;
  ProviderChoice provider = ProviderChoice::lexicon;

  std::filesystem::path output_dir = "out";
  std::filesystem::path model_path;    // empty: none
  std::filesystem::path lexicon_path;  // empty: derived from the vocabulary

  std::uint64_t noise_seed = 9;        // per-prompt initial noise
  std::size_t calibration_samples = 500;
  double tau_percentile = 99.0;
  std::optional<double> tau;           // overrides calibration when set
  std::size_t threads = 0;             // 0: hardware concurrency
  double svm_regularization = 1.0;

  void validate() const;
  /// Canonical key=value rendering; parse_config(render()) round-trips.
  std::string render() const;
};

/// Applies one `key = value` assignment. Unknown keys are a config error.
void apply_setting(PipelineConfig& config, const std::string& key, const std::string& value);

PipelineConfig parse_config(const std::string& text, PipelineConfig base = {});
PipelineConfig load_config(const std::filesystem::path& path, PipelineConfig base = {});

std::string_view to_string(Mode m);
std::string_view to_string(ProviderChoice p);

}  // namespace ndm
