#include <doctest.h>

#include "oracles.hpp"
#include "salprune/pruning.hpp"
#include "toy.hpp"

using namespace salprune;

namespace {

std::vector<std::size_t> zeros_of(const std::vector<std::uint8_t>& m) {
  std::vector<std::size_t> z;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (!m[i]) z.push_back(i);
  return z;
}

std::vector<double> abs_values(const Tensor& t) {
  std::vector<double> v;
  for (double x : t.data()) v.push_back(std::abs(x));
  return v;
}

}  // namespace

TEST_CASE("prune count rounds half up") {
  CHECK(prune_count(0.2, 5) == 1);
  CHECK(prune_count(0.1, 5) == 1);   // 0.5 -> 1
  CHECK(prune_count(0.1, 15) == 2);  // 1.5 -> 2
  CHECK(prune_count(0.1, 14) == 1);  // 1.4 -> 1
  CHECK(prune_count(0.2, 0) == 0);
  CHECK(prune_count(0.0, 100) == 0);
}

TEST_CASE("unstructured masks equal the brute-force bottom-k per tensor") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    ModelState m = init_model(toy_descriptor(), seed);
    scramble(m, seed, seed % 2 ? 3 : 0);
    const MaskSet masks = mask_l1_unstructured(m, 0.2, 0.1);
    for (const auto& p : m.parameters) {
      const auto zeros = zeros_of(masks.at(p.name));
      if (p.role == ParamRole::bias) {
        CHECK(zeros.empty());
        continue;
      }
      const double rate = p.kind == LayerKind::conv ? 0.2 : 0.1;
      const auto want = oracle::brute_bottom_k(abs_values(p.value), oracle::round_half_up(rate, p.value.size()));
      REQUIRE(zeros == want);
    }
  }
}

TEST_CASE("global masks equal the brute-force bottom-k over the pooled weights") {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    ModelState m = init_model(toy_descriptor(), seed);
    scramble(m, seed + 100, seed % 2 ? 4 : 0);
    const double rate = 0.05 * static_cast<double>(1 + seed % 8);
    const MaskSet masks = mask_global(m, rate);
    std::vector<double> pool;
    std::vector<std::pair<std::string, std::size_t>> where;
    for (const auto& p : m.parameters) {
      if (p.role != ParamRole::weight) continue;
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        pool.push_back(std::abs(p.value[i]));
        where.emplace_back(p.name, i);
      }
    }
    REQUIRE(pool.size() <= 100);
    const auto want = oracle::brute_bottom_k(pool, oracle::round_half_up(rate, pool.size()));
    std::vector<std::size_t> got;
    for (std::size_t k = 0; k < where.size(); ++k)
      if (!masks.at(where[k].first)[where[k].second]) got.push_back(k);
    REQUIRE(got == want);
    for (const auto& p : m.parameters)
      if (p.role == ParamRole::bias) CHECK(zeros_of(masks.at(p.name)).empty());
  }
}

TEST_CASE("global rate 0.2 on the reference CNN masks exactly the rounded count") {
  for (int classes : {2, 5, 8}) {
    const ModelState m = init_model(ArchitectureDescriptor::reference_cnn(classes), 4);
    std::size_t weights = 0;
    for (const auto& p : m.parameters)
      if (p.role == ParamRole::weight) weights += p.value.size();
    const MaskSet masks = mask_global(m, 0.2);
    std::size_t masked = 0;
    for (const auto& [name, mk] : masks) masked += zeros_of(mk).size();
    CHECK(masked == oracle::round_half_up(0.2, weights));
  }
}

TEST_CASE("layered structured pruning removes whole low-norm units") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    ModelState m = init_model(toy_descriptor(), seed);
    scramble(m, seed + 7);
    const double rate = seed % 2 ? 0.25 : 0.5;
    const MaskSet masks = mask_layered_structured(m, rate);
    const Parameter& last = m.param("dense2.weight");
    CHECK(zeros_of(masks.at("dense2.weight")).empty());
    CHECK(zeros_of(masks.at("dense2.bias")).empty());
    for (const auto& p : m.parameters) {
      if (p.role != ParamRole::weight || &p == &last) continue;
      const int units = p.value.dim(0);
      const std::size_t slice = p.value.size() / static_cast<std::size_t>(units);
      std::vector<double> norms;
      for (int u = 0; u < units; ++u) {
        double s = 0;
        for (std::size_t i = 0; i < slice; ++i) s += p.value[u * slice + i] * p.value[u * slice + i];
        norms.push_back(std::sqrt(s));
      }
      const auto want = oracle::brute_bottom_k(norms, oracle::round_half_up(rate, static_cast<std::size_t>(units)));
      const std::string bias = p.name.substr(0, p.name.find('.')) + ".bias";
      const auto& wm = masks.at(p.name);
      const auto& bm = masks.at(bias);
      for (int u = 0; u < units; ++u) {
        const bool pruned = std::find(want.begin(), want.end(), static_cast<std::size_t>(u)) != want.end();
        CHECK(bm[static_cast<std::size_t>(u)] == (pruned ? 0 : 1));
        for (std::size_t i = 0; i < slice; ++i) REQUIRE(wm[u * slice + i] == (pruned ? 0 : 1));
      }
    }
  }
}

TEST_CASE("prune spec validation and tags") {
  PruneSpec s;
  s.method = PruneMethod::layered_structured;
  s.phase = PrunePhase::post_train;
  s.fine_tune = true;
  CHECK(s.tag() == "layered_structured_post_ft");
  s.phase = PrunePhase::pre_train;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  s.fine_tune = false;
  CHECK(s.tag() == "layered_structured_pre");
  s.global_rate = 1.0;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_prune_method("magnitude"), std::invalid_argument);
  CHECK(parse_prune_method("l1") == PruneMethod::l1_unstructured);
}

TEST_CASE("sparsity report counts masked entries") {
  ModelState m = init_model(toy_descriptor(), 3);
  scramble(m, 4);
  set_masks(m, mask_global(m, 0.5));
  const SparsityReport r = sparsity_report(m);
  CHECK(r.total == m.parameter_count());
  CHECK(r.masked == m.masked_count());
  CHECK(r.masked == oracle::round_half_up(0.5, 62));
  CHECK(r.overall() == doctest::Approx(static_cast<double>(r.masked) / static_cast<double>(r.total)));
}

TEST_CASE("pre-train pruning masks the initial weights and keeps them through training") {
  const Dataset d = generate_synthetic(3, 2, 5, Split::train);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 9;
  PruneSpec spec;
  spec.method = PruneMethod::l1_unstructured;
  spec.phase = PrunePhase::pre_train;
  const auto r = run_prune_workflow(spec, d, cfg, fine_tune_config(cfg), 9);
  const MaskSet want = mask_l1_unstructured(init_model(ArchitectureDescriptor::reference_cnn(3), 9));
  CHECK(masks_of(r.model) == want);
  for (const auto& p : r.model.parameters)
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      if (!p.mask[i]) REQUIRE(p.value[i] == 0.0);
  CHECK(r.model.provenance.pruning == "l1_unstructured@pre");
}
