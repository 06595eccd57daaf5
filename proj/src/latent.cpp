#include "ndm/latent.hpp"

#include "ndm/error.hpp"
#include "ndm/rng.hpp"

#include <algorithm>
#include <cmath>

namespace ndm {

LatentTensor::LatentTensor(LatentShape shape) : shape_(shape), data_(shape.size(), 0.0) {}

LatentTensor::LatentTensor(LatentShape shape, std::vector<double> data)
    : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) fail(Errc::invalid_input, "latent: data size does not match shape");
}

LatentTensor LatentTensor::gaussian(LatentShape shape, std::uint64_t seed) {
  Rng rng(seed);
  LatentTensor out(shape);
  for (double& v : out.data_) v = rng.normal();
  return out;
}

LatentTensor LatentTensor::from_pixels(LatentShape shape, const Matrix& pixels) {
  if (static_cast<std::size_t>(pixels.rows()) != shape.pixels() ||
      static_cast<std::size_t>(pixels.cols()) != shape.channels) {
    fail(Errc::invalid_input, "latent: pixel matrix does not match shape");
  }
  LatentTensor out(shape);
  const std::size_t plane = shape.pixels();
  for (std::size_t c = 0; c < shape.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      out.data_[c * plane + p] = pixels(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c));
    }
  }
  return out;
}

Matrix LatentTensor::to_pixels() const {
  const std::size_t plane = shape_.pixels();
  Matrix out(static_cast<Eigen::Index>(plane), static_cast<Eigen::Index>(shape_.channels));
  for (std::size_t c = 0; c < shape_.channels; ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      out(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(c)) = data_[c * plane + p];
    }
  }
  return out;
}

double LatentTensor::mean() const {
  double acc = 0.0;
  for (double v : data_) acc += v;
  return data_.empty() ? 0.0 : acc / static_cast<double>(data_.size());
}

double LatentTensor::stddev() const {
  if (data_.empty()) return 0.0;
  const double m = mean();
  double acc = 0.0;
  for (double v : data_) acc += (v - m) * (v - m);
  return std::sqrt(acc / static_cast<double>(data_.size()));
}

bool LatentTensor::finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

nlohmann::json latent_to_json(const LatentTensor& latent) {
  const auto& s = latent.shape();
  return nlohmann::json{{"shape", {s.channels, s.height, s.width}}, {"data", latent.data()}};
}

LatentTensor latent_from_json(const nlohmann::json& j) {
  try {
    const auto shape = j.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 3) fail(Errc::parse, "latent: shape must have three entries");
    return LatentTensor({shape[0], shape[1], shape[2]}, j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("latent: ") + e.what());
  }
}

double max_abs_diff(const LatentTensor& a, const LatentTensor& b) {
  if (!(a.shape() == b.shape())) fail(Errc::invalid_input, "latent: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a.data()[i] - b.data()[i]));
  return worst;
}

}  // namespace ndm
