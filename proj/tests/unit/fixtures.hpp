#pragma once

#include "ndm/diffusion.hpp"
#include "ndm/world.hpp"

namespace ndm::test {

inline WorldConfig small_world_config(std::uint64_t seed = 3) {
  WorldConfig c;
  c.seed = seed;
  c.shape = {4, 4, 4};
  return c;
}

inline const World& default_world() {
  static const World w = World::build(WorldConfig{});
  return w;
}

inline const World& mini_world() {
  static const World w = World::build(small_world_config());
  return w;
}

/// First token id of the vocabulary with the given property.
template <class Pred>
TokenId first_token(const Vocabulary& v, Pred pred) {
  for (const auto& t : v.tokens()) {
    if (pred(t)) return t.id;
  }
  return v.null_id();
}

inline TokenId first_of(const Vocabulary& v, Pos pos, bool unsafe = false) {
  return first_token(v, [&](const TokenInfo& t) { return t.id != v.null_id() && t.pos == pos && t.unsafe == unsafe; });
}

}  // namespace ndm::test

#include "ndm/detector.hpp"

namespace ndm::test {

inline const PromptDataset& train_set() {
  static const PromptDataset d = [] {
    DatasetSpec s;
    s.seed = 101;
    s.n_per_class = 200;
    return synth_dataset(default_world().vocab(), s);
  }();
  return d;
}

inline const DetectorModel& trained_model() {
  static const DetectorModel m = train_detector(train_set(), default_world(), FeatureConfig{});
  return m;
}

}  // namespace ndm::test
