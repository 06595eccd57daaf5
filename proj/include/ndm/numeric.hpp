#pragma once

// Dense linear algebra helpers and the statistical building blocks used by the
// detector and the attention analysis: softmax, PCA, two-class LDA, linear
// soft-margin SVM, Otsu thresholding.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace ndm {

/// Row-major dense matrix. Rows are samples / locations, columns are features / tokens.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

bool all_finite(const Matrix& m);

/// Row-wise softmax with max subtraction. Throws invalid-input on non-finite logits.
Matrix softmax_over_tokens(const Matrix& logits);

struct PcaModel {
  Vector mean;                 // feature-space mean (d)
  Matrix components;           // d x k, orthonormal columns
  Vector explained_variance;   // k, descending

  std::size_t input_dim() const { return static_cast<std::size_t>(components.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(components.cols()); }

  /// componentsᵀ (x - mean)
  Vector transform(const Vector& x) const;
  Matrix transform(const Matrix& samples) const;
  Matrix reconstruct(const Matrix& projected) const;
};

/// Top-k principal components of the sample covariance (n-1 normalisation).
/// Each component is sign-canonicalised so its largest-magnitude entry is positive.
PcaModel pca_fit(const Matrix& samples, std::size_t k = 2);

struct LdaModel {
  Matrix direction;          // k x m, unit-norm columns
  bool ridge_applied = false;
  bool degenerate = false;   // class means coincide; direction is arbitrary

  Vector transform(const Vector& x) const;
  Matrix transform(const Matrix& samples) const;
};

/// Fisher discriminant for binary labels (0/1), m = 1. The direction is
/// S_w⁻¹(μ₁ − μ₀) normalised, so class 1 projects higher.
LdaModel lda_fit(const Matrix& samples, std::span<const int> labels, std::size_t m = 1);

/// Fisher ratio (μ₁−μ₀)² / (s₀² + s₁²) of the 1-D projection onto `direction`.
double fisher_ratio(const Matrix& samples, std::span<const int> labels, const Vector& direction);

struct SvmModel {
  Vector weights;
  double bias = 0.0;
  double regularization = 1.0;

  double decision_value(const Vector& x) const;
  /// 1 iff decision value > 0; an exact zero is class 0.
  int classify(const Vector& x) const;
};

/// Linear soft-margin SVM, solved in the dual with maximal-violating-pair SMO.
SvmModel svm_fit(const Matrix& samples, std::span<const int> labels, double regularization = 1.0);

/// ½‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b)), labels mapped to ±1.
double svm_primal_objective(const SvmModel& model, const Matrix& samples, std::span<const int> labels);

inline constexpr std::size_t kOtsuBins = 256;

/// Otsu threshold over a 256-bin histogram spanning [min, max].
/// Returns the upper edge of the chosen bin, or nullopt when every value is identical.
std::optional<double> otsu_threshold(std::span<const double> values);

/// Bin index of `v` in the 256-bin histogram over [lo, hi]; lo < hi.
std::size_t otsu_bin(double v, double lo, double hi);

/// Mean silhouette coefficient of a labelled point cloud (Euclidean distance).
double silhouette_score(const Matrix& points, std::span<const int> labels);

}  // namespace ndm
