#include <doctest.h>

#include "oracles.hpp"
#include "salprune/attribution.hpp"

using namespace salprune;

namespace {

oracle::LinearScore linear_model(std::uint64_t seed, int K = 3) {
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> w(static_cast<std::size_t>(K), std::vector<double>(3 * 4 * 4));
  std::vector<double> b(static_cast<std::size_t>(K));
  for (auto& row : w)
    for (double& v : row) v = rng.uniform(-1, 1);
  for (double& v : b) v = rng.uniform(-1, 1);
  return oracle::LinearScore({3, 4, 4}, w, b);
}

Tensor random_image(Shape s, std::uint64_t seed) {
  Tensor t(std::move(s));
  SplitMix64 rng(seed);
  for (double& v : t.data()) v = rng.uniform();
  return t;
}

double logit(const ScoreModel& m, const Tensor& x, int cls) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  return m.logits(x.reshaped(s))[static_cast<std::size_t>(cls)];
}

}  // namespace

TEST_CASE("vanilla gradient of a linear model is its weight row") {
  const auto m = linear_model(1);
  const Tensor x = random_image({3, 4, 4}, 2);
  const Attribution a = vanilla_gradient(m, x, Target::of(2));
  CHECK(a.target_class == 2);
  const Tensor g = m.class_gradient(x.reshaped({1, 3, 4, 4}), std::vector<int>{2});
  CHECK(a.raw.values() == g.values());
  CHECK(vanilla_gradient(m, x, Target::predicted()).target_class == resolve_target(m, x, Target::predicted()));
}

TEST_CASE("integrated gradients is exact and complete on a linear model") {
  const auto m = linear_model(3);
  const Tensor x = random_image({3, 4, 4}, 4);
  IgConfig cfg;
  cfg.steps = 7;
  cfg.batch = 3;
  const Attribution a = integrated_gradients(m, x, Target::of(1), cfg);
  double sum = 0.0;
  for (double v : a.raw.data()) sum += v;
  CHECK(sum == doctest::Approx(logit(m, x, 1) - logit(m, Tensor({3, 4, 4}), 1)).epsilon(1e-12));

  cfg.baseline = random_image({3, 4, 4}, 5);
  const Attribution b = integrated_gradients(m, x, Target::of(1), cfg);
  sum = 0.0;
  for (double v : b.raw.data()) sum += v;
  CHECK(sum == doctest::Approx(logit(m, x, 1) - logit(m, *cfg.baseline, 1)).epsilon(1e-12));
}

TEST_CASE("integrated gradients of the input as its own baseline is zero") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(3), 1);
  const NetworkScore m(net);
  const Tensor x = random_image({3, 32, 32}, 6);
  IgConfig cfg;
  cfg.steps = 4;
  cfg.baseline = x;
  const Attribution a = integrated_gradients(m, x, Target::predicted(), cfg);
  for (double v : a.raw.data()) CHECK(v == 0.0);
}

TEST_CASE("integrated gradients sums to the score gap on the network") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(4), 8);
  const NetworkScore m(net);
  const Tensor x = random_image({3, 32, 32}, 9);
  IgConfig cfg;
  cfg.steps = 256;
  const Attribution a = integrated_gradients(m, x, Target::predicted(), cfg);
  double sum = 0.0;
  for (double v : a.raw.data()) sum += v;
  const double gap = logit(m, x, a.target_class) - logit(m, Tensor({3, 32, 32}), a.target_class);
  CHECK(std::abs(sum - gap) <= 0.01 * std::max(1.0, std::abs(gap)));
}

TEST_CASE("smoothgrad with zero noise equals vanilla gradient") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(5), 2);
  const NetworkScore m(net);
  const Tensor x = random_image({3, 32, 32}, 3);
  const Attribution vg = vanilla_gradient(m, x, Target::predicted());
  for (int n : {1, 25}) {
    SgConfig cfg;
    cfg.samples = n;
    cfg.sigma = 0.0;
    cfg.batch = 10;
    const Attribution sg = smoothgrad(m, x, Target::predicted(), cfg);
    CHECK(sg.target_class == vg.target_class);
    CHECK(max_abs_diff(sg.raw, vg.raw) <= 1e-12);
  }
}

TEST_CASE("smoothgrad is seeded, batch-size independent and keeps the clean target") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(5), 2);
  const NetworkScore m(net);
  const Tensor x = random_image({3, 32, 32}, 4);
  SgConfig cfg;
  cfg.samples = 6;
  cfg.seed = 77;
  cfg.batch = 6;
  const Attribution a = smoothgrad(m, x, Target::predicted(), cfg);
  cfg.batch = 4;
  const Attribution b = smoothgrad(m, x, Target::predicted(), cfg);
  CHECK(max_abs_diff(a.raw, b.raw) <= 1e-15);
  cfg.seed = 78;
  CHECK_FALSE(smoothgrad(m, x, Target::predicted(), cfg).raw == a.raw);
  CHECK(a.target_class == resolve_target(m, x, Target::predicted()));
}

TEST_CASE("attribution argument errors") {
  const auto m = linear_model(1);
  const Tensor x = random_image({3, 4, 4}, 2);
  CHECK_THROWS_AS(vanilla_gradient(m, x, Target::of(3)), std::out_of_range);
  CHECK_THROWS_AS(vanilla_gradient(m, Tensor({3, 4, 5}), Target::predicted()), ShapeError);
  IgConfig ig;
  ig.steps = 0;
  CHECK_THROWS_AS(integrated_gradients(m, x, Target::predicted(), ig), std::invalid_argument);
  ig.steps = 2;
  ig.baseline = Tensor({3, 4, 5});
  CHECK_THROWS_AS(integrated_gradients(m, x, Target::predicted(), ig), ShapeError);
  SgConfig sg;
  sg.sigma = -1;
  CHECK_THROWS_AS(smoothgrad(m, x, Target::predicted(), sg), std::invalid_argument);
  CHECK_THROWS_AS(parse_attribution("lime"), std::invalid_argument);
}

TEST_CASE("dataset explanations match per-sample calls") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(4), 5);
  const NetworkScore m(net);
  const Dataset d = generate_synthetic(4, 2, 1, Split::test);
  MethodConfig vg;
  const auto all = explain_dataset(m, d, vg);
  REQUIRE(all.size() == 8);
  for (int i = 0; i < 8; ++i) {
    const Attribution one = vanilla_gradient(m, d.image(i), Target::predicted());
    CHECK(all[static_cast<std::size_t>(i)].target_class == one.target_class);
    CHECK(max_abs_diff(all[static_cast<std::size_t>(i)].raw, one.raw) <= 1e-12);
  }
}

TEST_CASE("saliency sums absolute attribution over channels") {
  Attribution a;
  a.raw = Tensor({2, 1, 2}, std::vector<double>{1, -2, -3, 4});
  CHECK(to_saliency(a).values.values() == std::vector<double>{4, 6});
  CHECK(to_saliency(a).values.shape() == Shape{1, 2});
}
