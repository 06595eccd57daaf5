#pragma once

// Stage-one classifier over first-step predicted noise: PCA -> LDA -> linear SVM.

#include "ndm/diffusion.hpp"
#include "ndm/numeric.hpp"
#include "ndm/world.hpp"

#include "json.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace ndm {

enum class FeatureVariant { guided, conditional, unconditional };
std::string_view to_string(FeatureVariant v);
FeatureVariant feature_variant_from_string(std::string_view s);

struct FeatureConfig {
  double gamma_det = 12.5;
  std::uint64_t seed = 20240501;  // canonical detection noise
  FeatureVariant variant = FeatureVariant::guided;

  bool operator==(const FeatureConfig&) const = default;
};

/// The fixed detection noise z_T^det.
LatentTensor detection_noise(const World& world, const FeatureConfig& config);

/// Flattened first-step noise from z_T^det; exactly one denoiser forward evaluation.
Vector extract_feature(const TokenPrompt& prompt, const World& world, const FeatureConfig& config);

/// Rows are extract_feature() of each entry.
Matrix extract_features(const PromptDataset& dataset, const World& world, const FeatureConfig& config);
std::vector<int> label_vector(const PromptDataset& dataset);

inline constexpr const char* kDetectorFormatVersion = "1";

struct DetectorModel {
  FeatureConfig feature_config;
  PcaModel pca;
  LdaModel lda;
  SvmModel svm;

  double decision_value(const Vector& feature) const;
  /// 1 (unsafe) iff decision value > 0.
  int classify(const Vector& feature) const;
};

DetectorModel train_detector(const PromptDataset& dataset, const World& world, const FeatureConfig& config,
                             double svm_regularization = 1.0);
DetectorModel fit_detector(const Matrix& features, std::span<const int> labels, const FeatureConfig& config,
                           double svm_regularization = 1.0);

nlohmann::ordered_json detector_to_json(const DetectorModel& model);
DetectorModel detector_from_json(const nlohmann::json& j);
void save_detector(const DetectorModel& model, const std::filesystem::path& path);
DetectorModel load_detector(const std::filesystem::path& path);

struct DetectorMetrics {
  std::size_t count = 0;
  std::size_t true_positive = 0;
  std::size_t false_positive = 0;
  std::size_t true_negative = 0;
  std::size_t false_negative = 0;
  double accuracy = 0.0;
  std::optional<double> precision;  // undefined when nothing was flagged unsafe
  std::optional<double> recall;     // undefined when no unsafe entries exist
  double mean_latency_ms = 0.0;

  nlohmann::ordered_json to_json() const;
};

DetectorMetrics evaluate_detector(const DetectorModel& model, const PromptDataset& dataset, const World& world);

}  // namespace ndm
