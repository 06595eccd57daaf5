#pragma once

#include "ndm/numeric.hpp"

#include "json.hpp"

#include <cstddef>
#include <cstdint>
#include <vector>

namespace ndm {

struct LatentShape {
  std::size_t channels = 4;
  std::size_t height = 16;
  std::size_t width = 16;

  std::size_t pixels() const { return height * width; }
  std::size_t size() const { return channels * height * width; }
  bool operator==(const LatentShape&) const = default;
};

/// C×H×W latent stored channel-major. Also the carrier for predicted noise.
class LatentTensor {
 public:
  LatentTensor() = default;
  explicit LatentTensor(LatentShape shape);
  LatentTensor(LatentShape shape, std::vector<double> data);

  static LatentTensor gaussian(LatentShape shape, std::uint64_t seed);
  /// Pixel-major view: rows are pixels (y*W + x), columns channels.
  static LatentTensor from_pixels(LatentShape shape, const Matrix& pixels);

  const LatentShape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data_[index(c, y, x)]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data_[index(c, y, x)]; }

  Matrix to_pixels() const;

  double mean() const;
  /// Population standard deviation over every entry.
  double stddev() const;
  bool finite() const;

  bool operator==(const LatentTensor& other) const = default;

 private:
  std::size_t index(std::size_t c, std::size_t y, std::size_t x) const {
    return (c * shape_.height + y) * shape_.width + x;
  }

  LatentShape shape_{};
  std::vector<double> data_;
};

/// {"shape":[C,H,W],"data":[...]}
nlohmann::json latent_to_json(const LatentTensor& latent);
LatentTensor latent_from_json(const nlohmann::json& j);

double max_abs_diff(const LatentTensor& a, const LatentTensor& b);

}  // namespace ndm
