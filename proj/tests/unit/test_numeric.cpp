#include "doctest.h"

#include "ndm/error.hpp"
#include "ndm/numeric.hpp"
#include "ndm/rng.hpp"

#include <cmath>
#include <limits>
#include <vector>

using namespace ndm;

namespace {

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

// Two isotropic Gaussian blobs, labels 0 then 1.
Matrix blobs(Rng& rng, int per_class, Vector m0, Vector m1, double sd, std::vector<int>& labels) {
  const auto d = m0.size();
  Matrix x(2 * per_class, d);
  labels.clear();
  for (int i = 0; i < 2 * per_class; ++i) {
    const Vector& m = i < per_class ? m0 : m1;
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = m(j) + sd * rng.normal();
    labels.push_back(i < per_class ? 0 : 1);
  }
  return x;
}

// Exhaustive Otsu: every one of the 255 interior bin edges, between-class
// variance w0·w1·(μ0 − μ1)² over bin indices, first maximum wins.
std::optional<double> otsu_exhaustive(const std::vector<double>& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  if (hi == lo) return std::nullopt;
  std::vector<long double> hist(256, 0.0L);
  for (double x : v) {
    double pos = (x - lo) / (hi - lo) * 256.0;
    std::size_t b = pos > 0.0 ? static_cast<std::size_t>(pos) : 0;
    if (b > 255) b = 255;
    hist[b] += 1.0L;
  }
  const long double n = static_cast<long double>(v.size());
  long double best = -1.0L;
  std::size_t best_k = 0;
  for (std::size_t k = 0; k < 255; ++k) {
    long double n0 = 0, s0 = 0, n1 = 0, s1 = 0;
    for (std::size_t b = 0; b <= k; ++b) {
      n0 += hist[b];
      s0 += hist[b] * static_cast<long double>(b);
    }
    for (std::size_t b = k + 1; b < 256; ++b) {
      n1 += hist[b];
      s1 += hist[b] * static_cast<long double>(b);
    }
    if (n0 == 0 || n1 == 0) continue;
    const long double w0 = n0 / n, w1 = n1 / n, d = s0 / n0 - s1 / n1;
    const long double score = w0 * w1 * d * d;
    if (score > best) {
      best = score;
      best_k = k;
    }
  }
  return lo + static_cast<double>(best_k + 1) * ((hi - lo) / 256.0);
}

double margin_of(const Matrix& x, const std::vector<int>& y, double w0, double w1, double b) {
  const double norm = std::hypot(w0, w1);
  double m = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = y[static_cast<std::size_t>(i)] ? 1.0 : -1.0;
    m = std::min(m, s * (w0 * x(i, 0) + w1 * x(i, 1) + b) / norm);
  }
  return m;
}

}  // namespace

TEST_SUITE("softmax") {
  TEST_CASE("uniform logits give uniform weights") {
    Matrix l = Matrix::Zero(1, 3);
    const Matrix p = softmax_over_tokens(l);
    for (int j = 0; j < 3; ++j) CHECK(p(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  }

  TEST_CASE("ln 2 logit doubles the weight") {
    Matrix l(1, 3);
    l << std::log(2.0), 0.0, 0.0;
    const Matrix p = softmax_over_tokens(l);
    CHECK(std::abs(p(0, 0) - 0.5) < 1e-15);
    CHECK(std::abs(p(0, 1) - 0.25) < 1e-15);
    CHECK(std::abs(p(0, 2) - 0.25) < 1e-15);
  }

  TEST_CASE("matches direct exp/sum on random rows and is shift invariant") {
    Rng rng(1);
    const Matrix l = random_matrix(rng, 100, 7) * 3.0;
    const Matrix p = softmax_over_tokens(l);
    Matrix shifted = l;
    for (Eigen::Index i = 0; i < l.rows(); ++i) shifted.row(i).array() += 10.0 * rng.normal();
    const Matrix ps = softmax_over_tokens(shifted);
    for (Eigen::Index i = 0; i < l.rows(); ++i) {
      double z = 0.0;
      for (Eigen::Index j = 0; j < l.cols(); ++j) z += std::exp(l(i, j));
      double row = 0.0;
      for (Eigen::Index j = 0; j < l.cols(); ++j) {
        CHECK(std::abs(p(i, j) - std::exp(l(i, j)) / z) <= 1e-12);
        CHECK(std::abs(ps(i, j) - p(i, j)) <= 1e-9);
        CHECK(p(i, j) >= 0.0);
        row += p(i, j);
      }
      CHECK(std::abs(row - 1.0) <= 1e-9);
    }
  }

  TEST_CASE("non-finite logits are rejected") {
    Matrix l = Matrix::Zero(2, 2);
    l(1, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(softmax_over_tokens(l), Error);
    l(1, 0) = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(softmax_over_tokens(l), Error);
  }
}

TEST_SUITE("pca") {
  TEST_CASE("points on y = x give the diagonal") {
    Matrix x(5, 2);
    for (int i = 0; i < 5; ++i) x.row(i) << i - 2.0, i - 2.0;
    const PcaModel m = pca_fit(x, 1);
    CHECK(m.components(0, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
    CHECK(m.components(1, 0) == doctest::Approx(1.0 / std::sqrt(2.0)));
  }

  TEST_CASE("explained variance matches power iteration with deflation") {
    Rng rng(2);
    Matrix x = random_matrix(rng, 50, 8);
    for (Eigen::Index i = 0; i < 50; ++i) x(i, 0) *= 3.0, x(i, 3) *= 2.0;
    const PcaModel m = pca_fit(x, 2);
    const Vector mean = x.colwise().mean().transpose();
    Matrix c = x.rowwise() - mean.transpose();
    Eigen::MatrixXd cov = (c.transpose() * c) / 49.0;
    for (int k = 0; k < 2; ++k) {
      Eigen::VectorXd v = Eigen::VectorXd::Ones(8);
      double lambda = 0.0;
      for (int it = 0; it < 5000; ++it) {
        v = cov * v;
        lambda = v.norm();
        v /= lambda;
      }
      CHECK(std::abs(m.explained_variance(k) - lambda) <= 1e-6);
      CHECK(std::abs(std::abs(m.components.col(k).dot(v)) - 1.0) <= 1e-6);
      cov -= lambda * v * v.transpose();
    }
    const Matrix gram = m.components.transpose() * m.components;
    CHECK((gram - Matrix::Identity(2, 2)).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(m.explained_variance(0) >= m.explained_variance(1));
  }

  TEST_CASE("components are sign canonical") {
    Rng rng(3);
    const PcaModel m = pca_fit(random_matrix(rng, 30, 6), 2);
    for (int k = 0; k < 2; ++k) {
      Eigen::Index arg = 0;
      m.components.col(k).cwiseAbs().maxCoeff(&arg);
      CHECK(m.components(arg, k) > 0.0);
    }
  }

  TEST_CASE("reconstruction error does not grow with k") {
    Rng rng(4);
    const Matrix x = random_matrix(rng, 40, 6);
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= 5; ++k) {
      const PcaModel m = pca_fit(x, k);
      const Matrix r = m.reconstruct(m.transform(x));
      const double err = (r - x).squaredNorm();
      CHECK(err <= prev + 1e-9);
      prev = err;
    }
  }

  TEST_CASE("rank-deficient data is degenerate") {
    Matrix x(6, 3);
    for (int i = 0; i < 6; ++i) x.row(i) << i, 2.0 * i, -i;
    try {
      pca_fit(x, 2);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_data);
    }
  }

  TEST_CASE("too few samples are rejected") {
    Matrix x = Matrix::Ones(2, 4);
    CHECK_THROWS_AS(pca_fit(x, 2), Error);
  }
}

TEST_SUITE("lda") {
  TEST_CASE("isotropic blobs separate along the mean difference") {
    Rng rng(5);
    std::vector<int> y;
    Vector m0(2), m1(2);
    m0 << 0, 0;
    m1 << 4, 0;
    const Matrix x = blobs(rng, 200, m0, m1, 1.0, y);
    const LdaModel m = lda_fit(x, y);
    const double angle = std::acos(std::min(1.0, m.direction(0, 0)));
    CHECK(angle < 0.15);
    CHECK(m.direction.col(0).norm() == doctest::Approx(1.0));
    CHECK_FALSE(m.degenerate);
  }

  TEST_CASE("fitted direction beats random directions on Fisher ratio") {
    Rng rng(6);
    std::vector<int> y;
    Vector m0(3), m1(3);
    m0 << 0, 0, 0;
    m1 << 1, 2, -1;
    Matrix x = blobs(rng, 60, m0, m1, 1.0, y);
    x.col(1) *= 2.5;
    const LdaModel m = lda_fit(x, y);
    const double best = fisher_ratio(x, y, m.direction.col(0));
    for (int t = 0; t < 100; ++t) {
      Vector d(3);
      for (int j = 0; j < 3; ++j) d(j) = rng.normal();
      d.normalize();
      CHECK(best >= fisher_ratio(x, y, d) - 1e-12);
    }
  }

  TEST_CASE("coincident means on collinear data take the ridge path") {
    Matrix x(4, 2);
    x << -1, 0, 1, 0, -2, 0, 2, 0;
    const std::vector<int> y{0, 0, 1, 1};
    const LdaModel m = lda_fit(x, y);
    CHECK(m.degenerate);
    CHECK(m.ridge_applied);
    CHECK(m.direction.col(0).norm() == doctest::Approx(1.0));
    CHECK(fisher_ratio(x, y, m.direction.col(0)) == doctest::Approx(0.0));
  }

  TEST_CASE("single class is invalid") {
    Matrix x = Matrix::Random(5, 2);
    const std::vector<int> y(5, 1);
    try {
      lda_fit(x, y);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invalid_labels);
    }
  }
}

TEST_SUITE("svm") {
  TEST_CASE("symmetric pair puts the boundary at zero") {
    Matrix x(2, 1);
    x << -1.0, 1.0;
    const std::vector<int> y{0, 1};
    const SvmModel m = svm_fit(x, y);
    Vector zero = Vector::Zero(1);
    CHECK(std::abs(m.decision_value(zero)) <= 1e-6);
    CHECK(m.weights(0) > 0.0);
  }

  TEST_CASE("separable blobs: perfect training accuracy and near-optimal margin") {
    Rng rng(7);
    std::vector<int> y;
    Vector m0(2), m1(2);
    m0 << -3, -1;
    m1 << 3, 1;
    const Matrix x = blobs(rng, 40, m0, m1, 0.6, y);
    const SvmModel m = svm_fit(x, y, 1000.0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) CHECK(m.classify(x.row(i).transpose()) == y[static_cast<std::size_t>(i)]);

    // Grid search over unit normals and offsets for the widest separating margin.
    double grid_best = -1.0;
    for (int a = 0; a < 3600; ++a) {
      const double th = a * M_PI / 1800.0;
      const double w0 = std::cos(th), w1 = std::sin(th);
      double lo_pos = std::numeric_limits<double>::infinity(), hi_neg = -lo_pos;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double p = w0 * x(i, 0) + w1 * x(i, 1);
        if (y[static_cast<std::size_t>(i)]) lo_pos = std::min(lo_pos, p);
        else hi_neg = std::max(hi_neg, p);
      }
      grid_best = std::max(grid_best, (lo_pos - hi_neg) / 2.0);
    }
    const double fitted = margin_of(x, y, m.weights(0), m.weights(1), m.bias);
    CHECK(grid_best > 0.0);
    CHECK(fitted >= 0.95 * grid_best);
  }

  TEST_CASE("soft-margin objective reaches the grid optimum") {
    Rng rng(8);
    std::vector<int> y;
    Vector m0(1), m1(1);
    m0 << -0.5;
    m1 << 0.5;
    const Matrix x = blobs(rng, 30, m0, m1, 1.0, y);
    const SvmModel m = svm_fit(x, y, 1.0);
    const double fitted = svm_primal_objective(m, x, y);
    double best = std::numeric_limits<double>::infinity();
    SvmModel probe;
    probe.weights = Vector::Zero(1);
    probe.regularization = 1.0;
    for (double w = 0.0; w <= 4.0; w += 0.005) {
      for (double b = -2.0; b <= 2.0; b += 0.005) {
        probe.weights(0) = w;
        probe.bias = b;
        best = std::min(best, svm_primal_objective(probe, x, y));
      }
    }
    CHECK(fitted <= best + 1e-4);
  }

  TEST_CASE("a point on the boundary is benign and scaling keeps decisions") {
    SvmModel m;
    m.weights = Vector::Ones(2);
    m.bias = -1.0;
    Vector on(2);
    on << 0.5, 0.5;
    CHECK(m.decision_value(on) == 0.0);
    CHECK(m.classify(on) == 0);
    Rng rng(9);
    SvmModel scaled = m;
    scaled.weights *= 3.0;
    scaled.bias *= 3.0;
    for (int i = 0; i < 100; ++i) {
      Vector p(2);
      p << rng.normal(), rng.normal();
      CHECK(m.classify(p) == scaled.classify(p));
    }
  }

  TEST_CASE("non-finite features are rejected") {
    Matrix x(2, 1);
    x << -1.0, std::numeric_limits<double>::quiet_NaN();
    const std::vector<int> y{0, 1};
    try {
      svm_fit(x, y);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invalid_input);
    }
  }
}

TEST_SUITE("otsu") {
  TEST_CASE("two clusters split between them") {
    const std::vector<double> v{0.1, 0.1, 0.1, 0.9, 0.9, 0.9};
    const auto b = otsu_threshold(v);
    REQUIRE(b);
    CHECK(*b > 0.1);
    CHECK(*b < 0.9);
    CHECK(*b == otsu_exhaustive(v));
  }

  TEST_CASE("constant input is degenerate") {
    const std::vector<double> v(10, 0.5);
    CHECK_FALSE(otsu_threshold(v).has_value());
  }

  TEST_CASE("fewer than two values is an error") {
    const std::vector<double> v{1.0};
    CHECK_THROWS_AS(otsu_threshold(v), Error);
  }

  TEST_CASE("matches exhaustive search on random bimodal draws") {
    Rng rng(10);
    int mismatches = 0;
    for (int t = 0; t < 1000; ++t) {
      const auto n = static_cast<std::size_t>(rng.integer(2, 400));
      const double a = rng.uniform(), b = a + 0.05 + rng.uniform();
      const double frac = rng.uniform();
      std::vector<double> v(n);
      for (auto& x : v) x = std::abs((rng.uniform() < frac ? a : b) + 0.1 * rng.normal());
      if (otsu_threshold(v) != otsu_exhaustive(v)) ++mismatches;
    }
    CHECK(mismatches == 0);
  }
}

TEST_CASE("silhouette of two far clusters is near one") {
  Rng rng(11);
  std::vector<int> y;
  Vector m0(2), m1(2);
  m0 << 0, 0;
  m1 << 100, 0;
  const Matrix x = blobs(rng, 20, m0, m1, 1.0, y);
  CHECK(silhouette_score(x, y) > 0.95);
}
