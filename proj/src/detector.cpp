#include "ndm/detector.hpp"

#include "ndm/error.hpp"
#include "ndm/io.hpp"
#include "ndm/rng.hpp"

#include <chrono>

namespace ndm {

std::string_view to_string(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::guided: return "guided";
    case FeatureVariant::conditional: return "conditional";
    case FeatureVariant::unconditional: return "unconditional";
  }
  return "guided";
}

FeatureVariant feature_variant_from_string(std::string_view s) {
  if (s == "guided") return FeatureVariant::guided;
  if (s == "conditional") return FeatureVariant::conditional;
  if (s == "unconditional") return FeatureVariant::unconditional;
  fail(Errc::config, "unknown feature variant '" + std::string(s) + "'");
}

LatentTensor detection_noise(const World& world, const FeatureConfig& config) {
  return LatentTensor::gaussian(world.shape(), mix_seed(config.seed, 11));
}

Vector extract_feature(const TokenPrompt& prompt, const World& world, const FeatureConfig& config) {
  if (!(config.gamma_det > 0.0)) fail(Errc::config, "detector: gamma_det must be positive");
  const LatentTensor z = detection_noise(world, config);
  NoisePrediction pred = predict(z, prompt, nullptr, world.schedule().first(), config.gamma_det, world);
  const LatentTensor* chosen = &pred.guided;
  if (config.variant == FeatureVariant::conditional) chosen = &pred.conditional;
  if (config.variant == FeatureVariant::unconditional) chosen = &pred.negative;
  return Eigen::Map<const Vector>(chosen->data().data(), static_cast<Eigen::Index>(chosen->size()));
}

Matrix extract_features(const PromptDataset& dataset, const World& world, const FeatureConfig& config) {
  const auto dim = static_cast<Eigen::Index>(world.shape().size());
  Matrix out(static_cast<Eigen::Index>(dataset.entries.size()), dim);
  for (std::size_t i = 0; i < dataset.entries.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = extract_feature(dataset.entries[i], world, config).transpose();
  }
  return out;
}

std::vector<int> label_vector(const PromptDataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.entries.size());
  for (const auto& p : dataset.entries) {
    if (!p.label) fail(Errc::invalid_labels, "dataset entry without a label");
    out.push_back(*p.label == Label::unsafe ? 1 : 0);
  }
  return out;
}

double DetectorModel::decision_value(const Vector& feature) const {
  if (static_cast<std::size_t>(feature.size()) != pca.input_dim()) {
    fail(Errc::invalid_input, "detector: feature length does not match the model");
  }
  return svm.decision_value(lda.transform(pca.transform(feature)));
}

int DetectorModel::classify(const Vector& feature) const { return decision_value(feature) > 0.0 ? 1 : 0; }

DetectorModel fit_detector(const Matrix& features, std::span<const int> labels, const FeatureConfig& config,
                           double svm_regularization) {
  DetectorModel m;
  m.feature_config = config;
  m.pca = pca_fit(features, 2);
  const Matrix projected = m.pca.transform(features);
  m.lda = lda_fit(projected, labels, 1);
  m.svm = svm_fit(m.lda.transform(projected), labels, svm_regularization);
  return m;
}

DetectorModel train_detector(const PromptDataset& dataset, const World& world, const FeatureConfig& config,
                             double svm_regularization) {
  if (dataset.entries.empty()) fail(Errc::invalid_input, "detector: empty training set");
  const auto labels = label_vector(dataset);
  return fit_detector(extract_features(dataset, world, config), labels, config, svm_regularization);
}

namespace {

nlohmann::ordered_json matrix_rows(const Matrix& m) {
  auto rows = nlohmann::ordered_json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Matrix matrix_from_rows(const nlohmann::json& j) {
  const auto rows = j.get<std::vector<std::vector<double>>>();
  if (rows.empty()) fail(Errc::parse, "detector: empty matrix");
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != rows.front().size()) fail(Errc::parse, "detector: ragged matrix");
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return m;
}

std::vector<double> to_std(const Vector& v) { return {v.begin(), v.end()}; }

Vector to_eigen(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

nlohmann::ordered_json detector_to_json(const DetectorModel& m) {
  nlohmann::ordered_json j;
  j["format_version"] = kDetectorFormatVersion;
  j["feature_config"] = {{"gamma_det", m.feature_config.gamma_det},
                         {"seed", m.feature_config.seed},
                         {"variant", to_string(m.feature_config.variant)}};
  j["pca"] = {{"mean", to_std(m.pca.mean)},
              {"components", matrix_rows(m.pca.components)},
              {"k", m.pca.output_dim()},
              {"explained_variance", to_std(m.pca.explained_variance)}};
  j["lda"] = {{"direction", matrix_rows(m.lda.direction)},
              {"m", m.lda.direction.cols()},
              {"ridge_applied", m.lda.ridge_applied},
              {"degenerate", m.lda.degenerate}};
  j["svm"] = {{"w", to_std(m.svm.weights)}, {"b", m.svm.bias}, {"c", m.svm.regularization}};
  return j;
}

DetectorModel detector_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object()) fail(Errc::parse, "detector: model must be a JSON object");
    const auto version = j.at("format_version").get<std::string>();
    if (version != kDetectorFormatVersion) {
      fail(Errc::unsupported_format, "detector: unsupported format_version '" + version + "'");
    }
    DetectorModel m;
    const auto& fc = j.at("feature_config");
    m.feature_config.gamma_det = fc.at("gamma_det").get<double>();
    m.feature_config.seed = fc.at("seed").get<std::uint64_t>();
    m.feature_config.variant = feature_variant_from_string(fc.at("variant").get<std::string>());
    const auto& pj = j.at("pca");
    m.pca.mean = to_eigen(pj.at("mean"));
    m.pca.components = matrix_from_rows(pj.at("components"));
    if (pj.contains("explained_variance")) m.pca.explained_variance = to_eigen(pj.at("explained_variance"));
    if (pj.at("k").get<std::size_t>() != m.pca.output_dim() || m.pca.mean.size() != m.pca.components.rows()) {
      fail(Errc::parse, "detector: inconsistent PCA block");
    }
    const auto& lj = j.at("lda");
    m.lda.direction = matrix_from_rows(lj.at("direction"));
    m.lda.ridge_applied = lj.value("ridge_applied", false);
    m.lda.degenerate = lj.value("degenerate", false);
    if (lj.at("m").get<Eigen::Index>() != m.lda.direction.cols() || m.lda.direction.rows() != m.pca.components.cols()) {
      fail(Errc::parse, "detector: inconsistent LDA block");
    }
    const auto& sj = j.at("svm");
    m.svm.weights = to_eigen(sj.at("w"));
    m.svm.bias = sj.at("b").get<double>();
    m.svm.regularization = sj.at("c").get<double>();
    if (m.svm.weights.size() != m.lda.direction.cols()) fail(Errc::parse, "detector: inconsistent SVM block");
    return m;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("detector: ") + e.what());
  }
}

void save_detector(const DetectorModel& model, const std::filesystem::path& path) {
  write_text_file(path, detector_to_json(model).dump(2) + "\n");
}

DetectorModel load_detector(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, "detector: " + path.string() + ": " + e.what());
  }
  return detector_from_json(j);
}

nlohmann::ordered_json DetectorMetrics::to_json() const {
  nlohmann::ordered_json j;
  j["count"] = count;
  j["accuracy"] = accuracy;
  j["precision"] = precision ? nlohmann::ordered_json(*precision) : nlohmann::ordered_json(nullptr);
  j["recall"] = recall ? nlohmann::ordered_json(*recall) : nlohmann::ordered_json(nullptr);
  j["true_positive"] = true_positive;
  j["false_positive"] = false_positive;
  j["true_negative"] = true_negative;
  j["false_negative"] = false_negative;
  j["mean_latency_ms"] = mean_latency_ms;
  return j;
}

DetectorMetrics evaluate_detector(const DetectorModel& model, const PromptDataset& dataset, const World& world) {
  if (dataset.entries.empty()) fail(Errc::invalid_input, "detector: empty evaluation set");
  const auto labels = label_vector(dataset);
  DetectorMetrics out;
  out.count = labels.size();
  double total_ms = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    const int pred = model.classify(extract_feature(dataset.entries[i], world, model.feature_config));
    total_ms += std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (pred == 1 && labels[i] == 1) ++out.true_positive;
    if (pred == 1 && labels[i] == 0) ++out.false_positive;
    if (pred == 0 && labels[i] == 0) ++out.true_negative;
    if (pred == 0 && labels[i] == 1) ++out.false_negative;
  }
  const double n = static_cast<double>(out.count);
  out.accuracy = static_cast<double>(out.true_positive + out.true_negative) / n;
  const std::size_t flagged = out.true_positive + out.false_positive;
  const std::size_t positives = out.true_positive + out.false_negative;
  if (flagged > 0) out.precision = static_cast<double>(out.true_positive) / static_cast<double>(flagged);
  if (positives > 0) out.recall = static_cast<double>(out.true_positive) / static_cast<double>(positives);
  out.mean_latency_ms = total_ms / n;
  return out;
}

}  // namespace ndm
