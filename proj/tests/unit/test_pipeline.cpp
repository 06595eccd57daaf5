#include "doctest.h"

#include "fixtures.hpp"
#include "ndm/config.hpp"
#include "ndm/error.hpp"
#include "ndm/pipeline.hpp"

#include <numeric>

using namespace ndm;
using namespace ndm::test;

namespace {

PipelineConfig test_config() {
  PipelineConfig c;
  c.tau = 1.0;
  c.threads = 1;
  return c;
}

Pipeline make_pipeline(DetectorModel model = trained_model(), PipelineConfig cfg = test_config()) {
  return Pipeline(default_world(), std::move(model), cfg, make_provider(cfg, default_world()), *cfg.tau);
}

DetectorModel always(int decision) {
  DetectorModel m = trained_model();
  m.svm.weights.setZero();
  m.svm.bias = decision ? 1.0 : -1.0;
  return m;
}

}  // namespace

TEST_SUITE("config") {
  TEST_CASE("defaults match the documented settings") {
    const PipelineConfig c;
    CHECK(c.guidance == 7.5);
    CHECK(c.feature.gamma_det == 12.5);
    CHECK(c.world.sample_steps == 50);
    CHECK(c.optim.alpha == 0.7);
    CHECK(c.optim.max_iters == 30);
  }

  TEST_CASE("parse, comments and round trip") {
    const auto c = parse_config("# comment\noptim.alpha = 0.5  # trailing\nmode=refuse\n\nworld.seed = 12\n");
    CHECK(c.optim.alpha == 0.5);
    CHECK(c.mode == Mode::refuse);
    CHECK(c.world.seed == 12);
    CHECK(parse_config(c.render()).render() == c.render());
  }

  TEST_CASE("unknown keys and bad values are config errors") {
    for (const char* text : {"nope = 1\n", "optim.alpha = abc\n", "mode = maybe\n", "just a line\n", "threads = -1\n"}) {
      try {
        parse_config(text);
        FAIL("expected an error");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::config);
      }
    }
    PipelineConfig c;
    c.optim.alpha = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
  }
}

TEST_SUITE("pipeline") {
  TEST_CASE("nearest-rank percentile") {
    std::vector<double> v(100);
    std::iota(v.begin(), v.end(), 1.0);
    CHECK(percentile_nearest_rank(v, 99.0) == 99.0);
    CHECK(percentile_nearest_rank(v, 100.0) == 100.0);
    CHECK(percentile_nearest_rank({5.0}, 99.0) == 5.0);
    CHECK_THROWS_AS(percentile_nearest_rank({}, 50.0), Error);
  }

  TEST_CASE("parallel_for keeps index order") {
    std::vector<std::size_t> a(50), b(50);
    parallel_for(50, 1, [&](std::size_t i) { a[i] = i * i; });
    parallel_for(50, 4, [&](std::size_t i) { b[i] = i * i; });
    CHECK(a == b);
  }

  TEST_CASE("benign decisions pass through bitwise") {
    const Pipeline pipe = make_pipeline(always(0));
    const auto& w = default_world();
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& p = train_set().entries[i];
      const auto z = prompt_noise(w, 9, i);
      const auto r = pipe.generate(p, z);
      CHECK(r.action == Action::pass_through);
      REQUIRE(r.x0);
      CHECK(*r.x0 == sample(z, p, nullptr, 7.5, w).x0);
    }
  }

  TEST_CASE("refuse mode produces no latent") {
    const Pipeline pipe = make_pipeline(always(1));
    const auto r = pipe.generate(train_set().entries[1], prompt_noise(default_world(), 9, 0), Mode::refuse);
    CHECK(r.action == Action::refused);
    CHECK_FALSE(r.x0.has_value());
    CHECK(r.decision == 1);
  }

  TEST_CASE("mitigation optimises the noise and adds a negative prompt") {
    const Pipeline pipe = make_pipeline(always(1));
    const auto r = pipe.generate(train_set().entries[1], prompt_noise(default_world(), 9, 0));
    CHECK(r.action == Action::mitigated);
    CHECK(r.trace.has_value());
    REQUIRE(r.negative.has_value());
    CHECK_FALSE(r.negative->negative.tokens.empty());
    CHECK(r.x0.has_value());
  }

  TEST_CASE("a prompt without content degrades to the generic negative") {
    const Pipeline pipe = make_pipeline(always(1));
    const auto& v = default_world().vocab();
    const TokenPrompt stops{{v.ids_with_pos(Pos::stopword)[0], v.ids_with_pos(Pos::stopword)[1]}, {}};
    const auto r = pipe.generate(stops, prompt_noise(default_world(), 9, 0));
    CHECK(r.action == Action::mitigated_generic);
    CHECK_FALSE(r.trace.has_value());
    CHECK(r.negative->provider == ProviderKind::fallback_generic);
  }

  TEST_CASE("suite aggregates equal per-prompt counts") {
    const Pipeline pipe = make_pipeline();
    PromptDataset d;
    d.entries.assign(train_set().entries.begin(), train_set().entries.begin() + 12);
    const auto conds = all_conditions();
    const auto r = evaluate_suite(pipe, d, conds);
    for (std::size_t k = 0; k < conds.size(); ++k) {
      std::size_t unsafe = 0, hits = 0;
      for (const auto& p : r.prompts) {
        if (p.prompt.label != Label::unsafe) continue;
        ++unsafe;
        hits += p.outcomes[k].unsafe_output ? 1 : 0;
      }
      CHECK(r.summaries[k].unsafe_prompts == unsafe);
      CHECK(r.summaries[k].unsafe_outputs == hits);
    }
    for (const auto& p : r.prompts) {
      if (p.decision == 1) CHECK_FALSE(p.outcomes[6].score.has_value());
    }
    CHECK_THROWS_AS(evaluate_suite(pipe, PromptDataset{}, conds), Error);
  }

  TEST_CASE("seed sweep is reproducible and needs two seeds") {
    const Pipeline pipe = make_pipeline();
    const auto& p = train_set().entries[1];
    const auto a = seed_sweep(pipe, p, 4, 77, false);
    const auto b = seed_sweep(pipe, p, 4, 77, false);
    CHECK(a.before.scores == b.before.scores);
    CHECK_THROWS_AS(seed_sweep(pipe, p, 1, 77), Error);
  }

  TEST_CASE("conditions parse by name") {
    for (Condition c : all_conditions()) CHECK(condition_from_string(to_string(c)) == c);
    CHECK_THROWS_AS(condition_from_string("bogus"), Error);
  }
}
