#include "ndm/numeric.hpp"

#include "ndm/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

namespace ndm {

bool all_finite(const Matrix& m) { return m.allFinite(); }

Matrix softmax_over_tokens(const Matrix& logits) {
  if (!logits.allFinite()) fail(Errc::invalid_input, "softmax: non-finite logits");
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double top = logits.row(r).maxCoeff();
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      out(r, c) = std::exp(logits(r, c) - top);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// PCA

Vector PcaModel::transform(const Vector& x) const {
  if (x.size() != mean.size()) fail(Errc::invalid_input, "pca transform: dimension mismatch");
  return components.transpose() * (x - mean);
}

Matrix PcaModel::transform(const Matrix& samples) const {
  if (samples.cols() != mean.size()) fail(Errc::invalid_input, "pca transform: dimension mismatch");
  Matrix centered = samples.rowwise() - mean.transpose();
  return centered * components;
}

Matrix PcaModel::reconstruct(const Matrix& projected) const {
  Matrix out = projected * components.transpose();
  out.rowwise() += mean.transpose();
  return out;
}

namespace {

void canonicalize_sign(Eigen::Ref<Vector> v) {
  Eigen::Index arg = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
  }
  if (v[arg] < 0) v = -v;
}

}  // namespace

PcaModel pca_fit(const Matrix& samples, std::size_t k) {
  const auto n = static_cast<std::size_t>(samples.rows());
  const auto d = static_cast<std::size_t>(samples.cols());
  if (k == 0) fail(Errc::invalid_input, "pca: k must be positive");
  if (n < k + 1) fail(Errc::invalid_input, "pca: need at least k+1 samples");
  if (d < k) fail(Errc::invalid_input, "pca: feature dimension smaller than k");
  if (!samples.allFinite()) fail(Errc::invalid_input, "pca: non-finite samples");

  PcaModel model;
  model.mean = samples.colwise().mean().transpose();
  Eigen::MatrixXd centered = (samples.rowwise() - model.mean.transpose());

  // Singular values of the centred data give the covariance spectrum without
  // forming the d x d covariance.
  Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
  const Vector sv = svd.singularValues();
  Vector eig = sv.array().square() / static_cast<double>(n - 1);

  const double top = eig.size() > 0 ? eig[0] : 0.0;
  const double tol = std::max(top * 1e-12, std::numeric_limits<double>::min());
  std::size_t positive = 0;
  for (Eigen::Index i = 0; i < eig.size(); ++i) {
    if (eig[i] > tol) ++positive;
  }
  if (positive < k) {
    fail(Errc::degenerate_data, "pca: covariance has " + std::to_string(positive) +
                                    " positive eigenvalues, need " + std::to_string(k));
  }

  model.components = svd.matrixV().leftCols(static_cast<Eigen::Index>(k));
  for (Eigen::Index c = 0; c < model.components.cols(); ++c) {
    Vector col = model.components.col(c);
    canonicalize_sign(col);
    model.components.col(c) = col;
  }
  model.explained_variance = eig.head(static_cast<Eigen::Index>(k));
  return model;
}

// ---------------------------------------------------------------------------
// LDA

Vector LdaModel::transform(const Vector& x) const { return direction.transpose() * x; }

Matrix LdaModel::transform(const Matrix& samples) const { return samples * direction; }

namespace {

void check_binary_labels(const Matrix& samples, std::span<const int> labels, const char* who) {
  if (static_cast<std::size_t>(samples.rows()) != labels.size()) {
    fail(Errc::invalid_input, std::string(who) + ": label count does not match samples");
  }
  bool has0 = false;
  bool has1 = false;
  for (int l : labels) {
    if (l == 0) has0 = true;
    else if (l == 1) has1 = true;
    else fail(Errc::invalid_labels, std::string(who) + ": labels must be 0 or 1");
  }
  if (!has0 || !has1) fail(Errc::invalid_labels, std::string(who) + ": both classes must be present");
}

}  // namespace

LdaModel lda_fit(const Matrix& samples, std::span<const int> labels, std::size_t m) {
  check_binary_labels(samples, labels, "lda");
  if (m != 1) fail(Errc::invalid_input, "lda: two-class discriminant supports m = 1 only");
  if (!samples.allFinite()) fail(Errc::invalid_input, "lda: non-finite samples");

  const Eigen::Index k = samples.cols();
  Vector mu[2] = {Vector::Zero(k), Vector::Zero(k)};
  double count[2] = {0.0, 0.0};
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    mu[c] += samples.row(i).transpose();
    count[c] += 1.0;
  }
  mu[0] /= count[0];
  mu[1] /= count[1];

  Eigen::MatrixXd scatter = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const Vector diff = samples.row(i).transpose() - mu[labels[static_cast<std::size_t>(i)]];
    scatter += diff * diff.transpose();
  }

  LdaModel model;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> spectrum(scatter, Eigen::EigenvaluesOnly);
  const double lo = spectrum.eigenvalues().minCoeff();
  const double hi = spectrum.eigenvalues().maxCoeff();
  if (!(lo > hi * 1e-12)) {
    const double trace = scatter.trace();
    if (trace > 0.0) {
      scatter += Eigen::MatrixXd::Identity(k, k) * (1e-6 * trace);
    } else {
      scatter = Eigen::MatrixXd::Identity(k, k);
    }
    model.ridge_applied = true;
  }

  const Vector delta = mu[1] - mu[0];
  Vector w = scatter.ldlt().solve(delta);
  model.direction = Matrix::Zero(k, 1);
  if (delta.norm() == 0.0 || !(w.norm() > 0.0) || !w.allFinite()) {
    model.degenerate = true;
    model.direction(0, 0) = 1.0;
    return model;
  }
  model.direction.col(0) = w / w.norm();
  return model;
}

double fisher_ratio(const Matrix& samples, std::span<const int> labels, const Vector& direction) {
  check_binary_labels(samples, labels, "fisher_ratio");
  const Vector proj = samples * direction;
  double sum[2] = {0, 0}, sq[2] = {0, 0}, cnt[2] = {0, 0};
  for (Eigen::Index i = 0; i < proj.size(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    sum[c] += proj[i];
    cnt[c] += 1;
  }
  const double m0 = sum[0] / cnt[0];
  const double m1 = sum[1] / cnt[1];
  for (Eigen::Index i = 0; i < proj.size(); ++i) {
    const int c = labels[static_cast<std::size_t>(i)];
    const double dv = proj[i] - (c == 0 ? m0 : m1);
    sq[c] += dv * dv;
  }
  const double between = (m1 - m0) * (m1 - m0);
  const double within = sq[0] / cnt[0] + sq[1] / cnt[1];
  if (within == 0.0) return between > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  return between / within;
}

// ---------------------------------------------------------------------------
// SVM

double SvmModel::decision_value(const Vector& x) const {
  if (x.size() != weights.size()) fail(Errc::invalid_input, "svm: feature dimension mismatch");
  double acc = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc += weights[i] * x[i];
  return acc + bias;
}

int SvmModel::classify(const Vector& x) const { return decision_value(x) > 0.0 ? 1 : 0; }

SvmModel svm_fit(const Matrix& samples, std::span<const int> labels, double regularization) {
  check_binary_labels(samples, labels, "svm");
  if (!samples.allFinite()) fail(Errc::invalid_input, "svm: non-finite features");
  if (!(regularization > 0.0)) fail(Errc::invalid_input, "svm: regularization must be positive");

  const Eigen::Index n = samples.rows();
  const double cap = regularization;
  constexpr double kTau = 1e-12;
  constexpr double kEps = 1e-10;

  Vector y(n);
  for (Eigen::Index i = 0; i < n; ++i) y[i] = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
  const Eigen::MatrixXd gram = samples * samples.transpose();
  auto q = [&](Eigen::Index i, Eigen::Index j) { return y[i] * y[j] * gram(i, j); };

  Vector alpha = Vector::Zero(n);
  Vector grad = Vector::Constant(n, -1.0);

  auto in_up = [&](Eigen::Index t) {
    return (y[t] > 0 && alpha[t] < cap) || (y[t] < 0 && alpha[t] > 0);
  };
  auto in_low = [&](Eigen::Index t) {
    return (y[t] < 0 && alpha[t] < cap) || (y[t] > 0 && alpha[t] > 0);
  };

  const long max_iter = std::max<long>(10'000'000, 100 * n);
  for (long iter = 0; iter < max_iter; ++iter) {
    // Second-order working-set selection.
    Eigen::Index i = -1;
    double gmax = -std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (in_up(t) && -y[t] * grad[t] >= gmax) {
        gmax = -y[t] * grad[t];
        i = t;
      }
    }
    double gmin = std::numeric_limits<double>::infinity();
    Eigen::Index j = -1;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index t = 0; t < n; ++t) {
      if (!in_low(t)) continue;
      const double v = -y[t] * grad[t];
      gmin = std::min(gmin, v);
      if (i < 0) continue;
      const double b = gmax - v;
      if (b > 0) {
        double a = gram(i, i) + gram(t, t) - 2.0 * gram(i, t);
        if (a <= 0) a = kTau;
        const double obj = -(b * b) / a;
        if (obj <= best) {
          best = obj;
          j = t;
        }
      }
    }
    if (i < 0 || j < 0 || gmax - gmin < kEps) break;

    const double old_i = alpha[i];
    const double old_j = alpha[j];
    if (y[i] != y[j]) {
      double quad = q(i, i) + q(j, j) + 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (-grad[i] - grad[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = diff; }
      } else {
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = -diff; }
      }
      if (diff > 0) {
        if (alpha[i] > cap) { alpha[i] = cap; alpha[j] = cap - diff; }
      } else {
        if (alpha[j] > cap) { alpha[j] = cap; alpha[i] = cap + diff; }
      }
    } else {
      double quad = q(i, i) + q(j, j) - 2.0 * q(i, j);
      if (quad <= 0) quad = kTau;
      const double delta = (grad[i] - grad[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > cap) {
        if (alpha[i] > cap) { alpha[i] = cap; alpha[j] = sum - cap; }
        if (alpha[j] > cap) { alpha[j] = cap; alpha[i] = sum - cap; }
      } else {
        if (alpha[j] < 0) { alpha[j] = 0; alpha[i] = sum; }
        if (alpha[i] < 0) { alpha[i] = 0; alpha[j] = sum; }
      }
    }
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (Eigen::Index t = 0; t < n; ++t) grad[t] += q(t, i) * di + q(t, j) * dj;
  }

  // Bias from free support vectors, or the midpoint of the feasible interval.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double free_sum = 0.0;
  long free_count = 0;
  for (Eigen::Index t = 0; t < n; ++t) {
    const double yg = y[t] * grad[t];
    if (alpha[t] >= cap) {
      if (y[t] < 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else if (alpha[t] <= 0) {
      if (y[t] > 0) ub = std::min(ub, yg); else lb = std::max(lb, yg);
    } else {
      free_sum += yg;
      ++free_count;
    }
  }
  const double rho = free_count > 0 ? free_sum / static_cast<double>(free_count) : (ub + lb) / 2.0;

  SvmModel model;
  model.regularization = regularization;
  model.weights = Vector::Zero(samples.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    if (alpha[t] != 0.0) model.weights += alpha[t] * y[t] * samples.row(t).transpose();
  }
  model.bias = -rho;
  return model;
}

double svm_primal_objective(const SvmModel& model, const Matrix& samples, std::span<const int> labels) {
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < samples.rows(); ++i) {
    const double y = labels[static_cast<std::size_t>(i)] == 1 ? 1.0 : -1.0;
    const double f = model.weights.dot(samples.row(i).transpose()) + model.bias;
    hinge += std::max(0.0, 1.0 - y * f);
  }
  return 0.5 * model.weights.squaredNorm() + model.regularization * hinge;
}

// ---------------------------------------------------------------------------
// Otsu

std::size_t otsu_bin(double v, double lo, double hi) {
  const double pos = (v - lo) / (hi - lo) * static_cast<double>(kOtsuBins);
  if (!(pos > 0.0)) return 0;
  const auto bin = static_cast<std::size_t>(pos);
  return std::min(bin, kOtsuBins - 1);
}

namespace {

using i128 = __int128;

// Between-class variance for a split is (s0·n1 − s1·n0)² / (N² n0 n1) with
// integer bin levels; candidates are compared by cross-multiplication so the
// argmax is exact.
struct SplitScore {
  i128 numerator;    // (s0·n1 − s1·n0)²
  i128 denominator;  // n0·n1
};

bool better(const SplitScore& a, const SplitScore& b, bool exact) {
  if (exact) return a.numerator * b.denominator > b.numerator * a.denominator;
  const long double lhs = static_cast<long double>(a.numerator) / static_cast<long double>(a.denominator);
  const long double rhs = static_cast<long double>(b.numerator) / static_cast<long double>(b.denominator);
  return lhs > rhs;
}

}  // namespace

std::optional<double> otsu_threshold(std::span<const double> values) {
  if (values.size() < 2) fail(Errc::invalid_input, "otsu: need at least two values");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!std::isfinite(lo) || !std::isfinite(hi)) fail(Errc::invalid_input, "otsu: non-finite value");
  if (!(hi > lo)) return std::nullopt;

  std::int64_t hist[kOtsuBins] = {};
  for (double v : values) {
    if (!std::isfinite(v)) fail(Errc::invalid_input, "otsu: non-finite value");
    ++hist[otsu_bin(v, lo, hi)];
  }
  const auto total_n = static_cast<std::int64_t>(values.size());
  std::int64_t total_s = 0;
  for (std::size_t b = 0; b < kOtsuBins; ++b) total_s += static_cast<std::int64_t>(b) * hist[b];
  const bool exact = total_n <= 65536;

  std::int64_t n0 = 0;
  std::int64_t s0 = 0;
  std::size_t best_bin = 0;
  bool found = false;
  SplitScore best{0, 1};
  for (std::size_t b = 0; b + 1 < kOtsuBins; ++b) {
    n0 += hist[b];
    s0 += static_cast<std::int64_t>(b) * hist[b];
    const std::int64_t n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const std::int64_t s1 = total_s - s0;
    const i128 diff = static_cast<i128>(s0) * n1 - static_cast<i128>(s1) * n0;
    const SplitScore score{diff * diff, static_cast<i128>(n0) * n1};
    if (!found || better(score, best, exact)) {
      best = score;
      best_bin = b;
      found = true;
    }
  }
  const double width = (hi - lo) / static_cast<double>(kOtsuBins);
  return lo + static_cast<double>(best_bin + 1) * width;
}

// ---------------------------------------------------------------------------

double silhouette_score(const Matrix& points, std::span<const int> labels) {
  check_binary_labels(points, labels, "silhouette");
  const Eigen::Index n = points.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    double dist[2] = {0.0, 0.0};
    double cnt[2] = {0.0, 0.0};
    const int own = labels[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      const int c = labels[static_cast<std::size_t>(j)];
      dist[c] += (points.row(i) - points.row(j)).norm();
      cnt[c] += 1.0;
    }
    if (cnt[own] == 0.0) continue;  // singleton cluster contributes 0
    const double a = dist[own] / cnt[own];
    const double b = dist[1 - own] / cnt[1 - own];
    const double denom = std::max(a, b);
    total += denom > 0.0 ? (b - a) / denom : 0.0;
  }
  return total / static_cast<double>(n);
}

}  // namespace ndm
