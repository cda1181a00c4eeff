#include <doctest.h>

#include "oracles.hpp"
#include "salprune/metrics.hpp"

using namespace salprune;

namespace {

std::vector<double> random_vector(SplitMix64& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.uniform(-1, 1) * (rng.uniform() < 0.3 ? 10.0 : 1.0);
  return v;
}

RoadCurve curve(std::vector<double> acc) {
  RoadCurve c;
  for (std::size_t i = 0; i < acc.size(); ++i) c.fraction.push_back(static_cast<double>(i) / (acc.size() - 1));
  c.accuracy = std::move(acc);
  return c;
}

Tensor ramp_image(int C, int H, int W) {
  Tensor t({C, H, W});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) t[static_cast<std::size_t>((c * H + y) * W + x)] = 0.02 * x + 0.03 * y + 0.1 * c;
  return t;
}

}  // namespace

TEST_CASE("gini closed forms") {
  CHECK(std::abs(gini(std::vector<double>(3072, 0.37))) <= 1e-12);
  CHECK(gini(std::vector<double>{0, 0, 5, 0}) == 0.75);
  CHECK(std::abs(gini(std::vector<double>{1, 2, 3, 4}) - 0.25) <= 1e-12);
  CHECK(std::abs(gini(std::vector<double>{-4, 3, -2, 1}) - 0.25) <= 1e-12);
  CHECK_THROWS_AS(gini(std::vector<double>(8, 0.0)), DegenerateAttributionError);
  CHECK_THROWS_AS(gini(std::vector<double>{}), DegenerateAttributionError);
}

TEST_CASE("gini matches the pairwise form and its invariances") {
  SplitMix64 rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::size_t d = 1 + rng.below(60);
    auto v = random_vector(rng, d);
    const double g = gini(v);
    CHECK(g >= -1e-15);
    CHECK(g <= 1.0 - 1.0 / static_cast<double>(d) + 1e-12);
    CHECK(g == doctest::Approx(oracle::pairwise_gini(v)).epsilon(1e-10));
    auto scaled = v;
    const double c = 1e-3 + 1e3 * rng.uniform();
    for (double& x : scaled) x *= c;
    CHECK(std::abs(gini(scaled) - g) <= 1e-12);
    auto perm = v;
    for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    CHECK(std::abs(gini(perm) - g) <= 1e-12);
  }
}

TEST_CASE("mean gini skips all-zero attributions") {
  Attribution a, z;
  a.raw = Tensor({1, 1, 4}, std::vector<double>{1, 2, 3, 4});
  z.raw = Tensor({1, 1, 4});
  const std::vector<Attribution> v{a, z, a};
  const GiniSummary s = mean_gini(v);
  CHECK(s.evaluated == 2);
  CHECK(s.skipped == 1);
  CHECK(s.mean == doctest::Approx(0.25));
  CHECK_THROWS_AS(mean_gini(std::vector<Attribution>{z}), DegenerateAttributionError);
  const SparsityScore d = sparsity_delta(v, v);
  CHECK(d.delta == 0.0);
}

TEST_CASE("sparsity delta of a model against itself is zero") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(4), 2);
  const NetworkScore m(net);
  const Dataset d = generate_synthetic(4, 1, 3, Split::test);
  MethodConfig vg;
  const SparsityScore s = sparsity_delta(vg, m, m, d);
  CHECK(s.delta == 0.0);
  CHECK(s.mean_gini > 0.0);
  CHECK(s.mean_gini < 1.0);
}

TEST_CASE("imputation with an empty mask leaves the image untouched") {
  const Tensor img = ramp_image(3, 8, 8);
  const std::vector<std::uint8_t> mask(64, 0);
  CHECK(noisy_linear_imputation(img, mask, RoadConfig{}, 1) == img);
}

TEST_CASE("single interior pixel takes its neighbour mean") {
  Tensor img({1, 3, 3}, 0.0);
  img[1] = 0.2;  // up
  img[3] = 0.4;  // left
  img[5] = 0.6;  // right
  img[7] = 0.8;  // down
  std::vector<std::uint8_t> mask(9, 0);
  mask[4] = 1;
  RoadConfig cfg;
  cfg.noise = 0.0;
  const ImputationResult r = impute(img, mask, cfg, 0);
  CHECK(std::abs(r.image[4] - 0.5) <= 1e-12);
  CHECK(r.unknowns == 1);
  CHECK(r.direct);
}

TEST_CASE("2x2 block in a ramp matches the dense solve") {
  const Tensor img = ramp_image(3, 6, 6);
  std::vector<std::uint8_t> mask(36, 0);
  for (int p : {14, 15, 20, 21}) mask[static_cast<std::size_t>(p)] = 1;
  RoadConfig cfg;
  cfg.noise = 0.0;
  const ImputationResult r = impute(img, mask, cfg, 0);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> plane(img.data().begin() + c * 36, img.data().begin() + (c + 1) * 36);
    const auto want = oracle::dense_imputation(plane, mask, 6, 6);
    for (int p = 0; p < 36; ++p) CHECK(std::abs(r.image[static_cast<std::size_t>(c * 36 + p)] - want[static_cast<std::size_t>(p)]) <= 1e-9);
  }
  CHECK(r.residual <= 1e-6);
}

TEST_CASE("random masks: direct and iterative solves match the dense oracle") {
  SplitMix64 rng(17);
  for (int t = 0; t < 12; ++t) {
    const int H = 6 + static_cast<int>(rng.below(6)), W = 6 + static_cast<int>(rng.below(6));
    Tensor img({2, H, W});
    for (double& v : img.data()) v = rng.uniform();
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(H * W), 0);
    const double frac = 0.1 + 0.8 * rng.uniform();
    for (auto& m : mask) m = rng.uniform() < frac;
    mask[0] = 0;  // one known pixel anchors every removed region
    RoadConfig cfg;
    cfg.noise = 0.0;
    cfg.direct_limit = t % 2 ? 0 : 1000;  // odd trials take the Gauss-Seidel path
    const ImputationResult r = impute(img, mask, cfg, 0);
    CHECK(r.direct == (t % 2 == 0));
    CHECK(r.residual <= 1e-6);
    for (int c = 0; c < 2; ++c) {
      std::vector<double> plane(img.data().begin() + c * H * W, img.data().begin() + (c + 1) * H * W);
      const auto want = oracle::dense_imputation(plane, mask, H, W);
      for (int p = 0; p < H * W; ++p)
        REQUIRE(std::abs(r.image[static_cast<std::size_t>(c * H * W + p)] - want[static_cast<std::size_t>(p)]) <= 1e-7);
    }
  }
}

TEST_CASE("fully removed image is filled with the constant") {
  const Tensor img = ramp_image(3, 4, 4);
  const std::vector<std::uint8_t> mask(16, 1);
  RoadConfig cfg;
  cfg.noise = 0.0;
  const Tensor out = noisy_linear_imputation(img, mask, cfg, 0);
  for (double v : out.data()) CHECK(v == 0.5);
}

TEST_CASE("imputation noise touches only removed pixels and stays in range") {
  Tensor img({3, 8, 8}, 0.995);
  std::vector<std::uint8_t> mask(64, 0);
  for (int p = 10; p < 30; ++p) mask[static_cast<std::size_t>(p)] = 1;
  RoadConfig cfg;
  cfg.noise = 0.5;
  const Tensor out = noisy_linear_imputation(img, mask, cfg, 3);
  int changed = 0;
  for (int c = 0; c < 3; ++c)
    for (int p = 0; p < 64; ++p) {
      const double v = out[static_cast<std::size_t>(c * 64 + p)];
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      if (!mask[static_cast<std::size_t>(p)]) CHECK(v == 0.995);
      changed += v != 0.995;
    }
  CHECK(changed > 0);
  CHECK(noisy_linear_imputation(img, mask, cfg, 3) == out);
}

TEST_CASE("non-convergence reports the residual") {
  Tensor img({1, 20, 20});
  for (std::size_t i = 0; i < img.size(); ++i) img[i] = static_cast<double>(i % 7) / 7.0;
  std::vector<std::uint8_t> mask(400, 1);
  for (int y = 0; y < 20; ++y) mask[static_cast<std::size_t>(y * 20)] = mask[static_cast<std::size_t>(y * 20 + 19)] = 0;
  RoadConfig cfg;
  cfg.direct_limit = 0;
  cfg.max_iterations = 3;
  try {
    impute(img, mask, cfg, 0);
    FAIL("expected ImputationError");
  } catch (const ImputationError& e) {
    CHECK(e.residual() > cfg.tolerance);
  }
  cfg.max_iterations = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("MoRF order is descending with index tie-break") {
  SaliencyMap m{Tensor({2, 3}, std::vector<double>{0.5, 2, 0.5, 1, 2, 0})};
  CHECK(morf_order(m) == std::vector<int>{1, 4, 3, 0, 2, 5});
}

TEST_CASE("ROAD on the planted-patch model") {
  const oracle::PlantedPatchScore model;
  const Dataset d = oracle::planted_dataset(40, 3);
  const std::vector<Attribution> truth(40, oracle::patch_attribution(false));
  const std::vector<Attribution> reversed(40, oracle::patch_attribution(true));
  const RoadConfig cfg;
  const RoadCurve good = road_curve(model, d, truth, cfg, 1);
  const RoadCurve bad = road_curve(model, d, reversed, cfg, 1);
  REQUIRE(good.fraction.size() == 21);
  CHECK(good.fraction.front() == 0.0);
  CHECK(good.fraction.back() == 1.0);
  CHECK(good.accuracy.front() == 1.0);
  CHECK(good.accuracy[2] <= 0.55);
  for (std::size_t t = 0; t <= 16; ++t) CHECK(bad.accuracy[t] >= 0.95);
  CHECK(road_auc(good) < road_auc(bad));
  CHECK(road_curve(model, d, truth, cfg, 1).accuracy == good.accuracy);
}

TEST_CASE("ROAD base point equals model accuracy") {
  const ModelState net = init_model(ArchitectureDescriptor::reference_cnn(4), 6);
  const NetworkScore m(net);
  const Dataset d = generate_synthetic(4, 3, 2, Split::test);
  MethodConfig vg;
  const auto attrs = explain_dataset(m, d, vg);
  RoadConfig cfg;
  cfg.step = 0.3;
  const RoadCurve c = road_curve(m, d, attrs, cfg, 5);
  REQUIRE(c.fraction.size() == 5);
  CHECK(c.fraction[1] == doctest::Approx(0.3));
  CHECK(c.fraction.back() == 1.0);
  CHECK(c.accuracy.front() == accuracy(net, d.images, d.labels));
  CHECK_THROWS_AS(road_curve(m, d, std::vector<Attribution>(attrs.begin(), attrs.begin() + 3), cfg, 5), std::invalid_argument);
}

TEST_CASE("ROAD AUC") {
  CHECK(road_auc(curve({0.7, 0.7, 0.7, 0.7})) == doctest::Approx(0.7));
  CHECK(road_auc(curve({1.0, 0.75, 0.5, 0.25, 0.0})) == doctest::Approx(0.5));
  const RoadCurve hi = curve({1, 0.9, 0.8, 0.5, 0.2});
  const RoadCurve lo = curve({1, 0.9, 0.7, 0.5, 0.2});
  CHECK(road_auc(lo) < road_auc(hi));
}

TEST_CASE("gradient norm statistics") {
  const Dataset d = generate_synthetic(2, 3, 1, Split::test);
  oracle::LinearScore zero({3, 32, 32}, {std::vector<double>(3072, 0.0), std::vector<double>(3072, 0.0)}, {0.0, 1.0});
  const GradientNormStats z = gradient_norm_stats(zero, d);
  CHECK(z.mean == 0.0);
  CHECK(z.count == 6);
  std::vector<double> w(3072);
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i % 5) - 2.0;
  oracle::LinearScore lw({3, 32, 32}, {w, w}, {0.0, 0.0});
  const GradientNormStats s = gradient_norm_stats(lw, d);
  CHECK(s.mean == doctest::Approx(l2_norm(w)).epsilon(1e-12));
  CHECK(s.stddev <= 1e-12);
}
