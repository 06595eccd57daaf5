#include "doctest.h"

#include "fixtures.hpp"
#include "ndm/detector.hpp"
#include "ndm/error.hpp"
#include "ndm/io.hpp"
#include "ndm/rng.hpp"

#include <filesystem>

using namespace ndm;
using namespace ndm::test;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ndm_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("features") {
  TEST_CASE("extraction is deterministic and costs one forward evaluation") {
    const auto& w = default_world();
    const auto& p = train_set().entries[1];
    const auto before = w.forward_count();
    const Vector a = extract_feature(p, w, FeatureConfig{});
    CHECK(w.forward_count() - before == 1);
    CHECK(a == extract_feature(p, w, FeatureConfig{}));
    CHECK(a.size() == 1024);
  }

  TEST_CASE("guided feature recombines the two branches") {
    const auto& w = default_world();
    FeatureConfig g, c, u;
    c.variant = FeatureVariant::conditional;
    u.variant = FeatureVariant::unconditional;
    for (std::size_t i = 0; i < 6; ++i) {
      const auto& p = train_set().entries[i];
      const Vector vg = extract_feature(p, w, g);
      const Vector vc = extract_feature(p, w, c);
      const Vector vu = extract_feature(p, w, u);
      for (Eigen::Index k = 0; k < vg.size(); ++k) CHECK(vg(k) == vu(k) + 12.5 * (vc(k) - vu(k)));
    }
  }
}

TEST_SUITE("detector") {
  TEST_CASE("decision equals the literal projection chain") {
    const auto& m = trained_model();
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
      Vector x(1024);
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = 3.0 * rng.normal();
      double v = 0.0;
      for (Eigen::Index j = 0; j < m.lda.direction.cols(); ++j) {
        double l = 0.0;
        for (Eigen::Index a = 0; a < m.pca.components.cols(); ++a) {
          double pc = 0.0;
          for (Eigen::Index d = 0; d < x.size(); ++d) pc += m.pca.components(d, a) * (x(d) - m.pca.mean(d));
          l += m.lda.direction(a, j) * pc;
        }
        v += m.svm.weights(j) * l;
      }
      v += m.svm.bias;
      CHECK(m.decision_value(x) == doctest::Approx(v).epsilon(1e-12));
      CHECK(m.classify(x) == (v > 0.0 ? 1 : 0));
    }
  }

  TEST_CASE("the mean feature with zero bias is benign") {
    DetectorModel m = trained_model();
    m.svm.bias = 0.0;
    CHECK(m.decision_value(m.pca.mean) == 0.0);
    CHECK(m.classify(m.pca.mean) == 0);
  }

  TEST_CASE("training fits its own data") {
    const auto metrics = evaluate_detector(trained_model(), train_set(), default_world());
    CHECK(metrics.accuracy >= 0.95);
    CHECK(metrics.count == 400);
  }

  TEST_CASE("single-class training is rejected") {
    PromptDataset d;
    for (const auto& p : train_set().entries) {
      if (p.label == Label::benign) d.entries.push_back(p);
    }
    try {
      train_detector(d, default_world(), FeatureConfig{});
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::invalid_labels);
    }
  }

  TEST_CASE("retraining gives identical bytes") {
    const auto again = train_detector(train_set(), default_world(), FeatureConfig{});
    CHECK(detector_to_json(again).dump() == detector_to_json(trained_model()).dump());
  }

  TEST_CASE("feature length mismatch is rejected") {
    CHECK_THROWS_AS(trained_model().classify(Vector::Zero(10)), Error);
  }

  TEST_CASE("metrics leave precision undefined when nothing is flagged") {
    PromptDataset d;
    d.entries.push_back(TokenPrompt{{default_world().vocab().ids_with_pos(Pos::noun)[0]}, Label::benign});
    DetectorModel m = trained_model();
    m.svm.weights.setZero();
    m.svm.bias = -1.0;
    const auto metrics = evaluate_detector(m, d, default_world());
    CHECK_FALSE(metrics.precision.has_value());
    CHECK_FALSE(metrics.recall.has_value());
    CHECK(metrics.accuracy == 1.0);
    CHECK(metrics.to_json()["precision"].is_null());
    CHECK_THROWS_AS(evaluate_detector(m, PromptDataset{}, default_world()), Error);
  }
}

TEST_SUITE("persistence") {
  TEST_CASE("round trip keeps decision values bitwise") {
    const auto path = temp_path("model.json");
    save_detector(trained_model(), path);
    const auto back = load_detector(path);
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
      Vector x(1024);
      for (Eigen::Index k = 0; k < x.size(); ++k) x(k) = rng.normal();
      CHECK(back.decision_value(x) == trained_model().decision_value(x));
    }
    CHECK(back.feature_config == trained_model().feature_config);
  }

  TEST_CASE("unknown versions and truncated files are rejected") {
    auto j = nlohmann::json::parse(detector_to_json(trained_model()).dump());
    j["format_version"] = "99";
    const auto vpath = temp_path("v99.json");
    write_text_file(vpath, j.dump());
    try {
      load_detector(vpath);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::unsupported_format);
    }
    const std::string text = detector_to_json(trained_model()).dump();
    const auto tpath = temp_path("truncated.json");
    write_text_file(tpath, text.substr(0, text.size() / 2));
    try {
      load_detector(tpath);
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse);
    }
  }

  TEST_CASE("a missing file is an io error") {
    try {
      load_detector(temp_path("does_not_exist.json"));
      FAIL("expected an error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::io);
    }
  }
}
