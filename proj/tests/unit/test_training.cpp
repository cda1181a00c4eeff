#include <doctest.h>

#include "salprune/pruning.hpp"
#include "salprune/training.hpp"
#include "toy.hpp"

using namespace salprune;

namespace {

Dataset small_set(int per_class, std::uint64_t seed) { return generate_synthetic(4, per_class, seed, Split::train); }

}  // namespace

TEST_CASE("sgd step follows the momentum and weight decay rule") {
  ModelState m = init_model(toy_descriptor(), 1);
  scramble(m, 2);
  auto masks = masks_of(m);
  masks["conv1.weight"][0] = 0;
  set_masks(m, masks);
  const ModelState before = m;
  GradientBundle g;
  for (const auto& p : m.parameters) {
    Tensor t(p.value.shape());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.1 * static_cast<double>(i % 7) - 0.3;
    g.parameter_gradients[p.name] = t;
  }
  TrainConfig cfg;
  cfg.learning_rate = 0.05;
  cfg.momentum = 0.9;
  cfg.weight_decay = 0.01;
  OptimizerState opt = OptimizerState::zeros_like(m);
  sgd_step(m, g, opt, cfg);
  sgd_step(m, g, opt, cfg);
  for (std::size_t k = 0; k < m.parameters.size(); ++k) {
    const auto& p0 = before.parameters[k];
    const auto& gp = g.parameter_gradients.at(p0.name);
    for (std::size_t i = 0; i < p0.value.size(); ++i) {
      if (!p0.mask[i]) {
        CHECK(m.parameters[k].value[i] == 0.0);
        CHECK(opt.velocity[k][i] == 0.0);
        continue;
      }
      const double w0 = p0.value[i];
      const double v1 = gp[i] + 0.01 * w0;
      const double w1 = w0 - 0.05 * v1;
      const double v2 = 0.9 * v1 + gp[i] + 0.01 * w1;
      const double w2 = w1 - 0.05 * v2;
      REQUIRE(m.parameters[k].value[i] == doctest::Approx(w2).epsilon(1e-14));
      REQUIRE(opt.velocity[k][i] == doctest::Approx(v2).epsilon(1e-14));
    }
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  c.learning_rate = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.weight_decay = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK(fine_tune_config(TrainConfig{}).epochs == 50);
  CHECK_THROWS(PgdConfig::for_epsilon(-0.1).validate());
}

TEST_CASE("natural training lowers the loss and is deterministic") {
  const Dataset d = small_set(8, 3);
  TrainConfig cfg;
  cfg.epochs = 4;
  cfg.seed = 5;
  TrainLog log;
  const ModelState a = train_natural(init_model(ArchitectureDescriptor::reference_cnn(4), 5), d, cfg, &log);
  REQUIRE(log.epoch_loss.size() == 4);
  CHECK(log.epoch_loss.back() < log.epoch_loss.front());
  const ModelState b = train_natural(init_model(ArchitectureDescriptor::reference_cnn(4), 5), d, cfg);
  for (std::size_t i = 0; i < a.parameters.size(); ++i) CHECK(a.parameters[i].value == b.parameters[i].value);
  CHECK(a.provenance.regime == "natural");
}

TEST_CASE("pgd stays in the epsilon ball and the pixel range") {
  const Dataset d = small_set(4, 7);
  TrainConfig cfg;
  cfg.epochs = 2;
  const ModelState m = train_natural(init_model(ArchitectureDescriptor::reference_cnn(4), 1), d, cfg);
  const std::vector<int> idx{0, 1, 2, 3, 4, 5, 6, 7};
  const Tensor x = d.batch(idx);
  const auto labels = d.batch_labels(idx);
  for (double eps : {0.0, 0.01, 0.03, 0.3}) {
    const Tensor adv = pgd_attack(m, x, labels, PgdConfig::for_epsilon(eps), 11);
    CHECK(adv.shape() == x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      REQUIRE(std::abs(adv[i] - x[i]) <= eps + 1e-12);
      REQUIRE(adv[i] >= 0.0);
      REQUIRE(adv[i] <= 1.0);
    }
    if (eps == 0.0) CHECK(adv == x);
    CHECK(pgd_attack(m, x, labels, PgdConfig::for_epsilon(eps), 11) == adv);
  }
  const Tensor adv = pgd_attack(m, x, labels, PgdConfig::for_epsilon(0.03), 11);
  CHECK(cross_entropy_loss(predict_logits(m, adv), labels) > cross_entropy_loss(predict_logits(m, x), labels));
}

TEST_CASE("fine-tuning keeps masked weights at exactly zero") {
  const Dataset d = small_set(4, 13);
  TrainConfig cfg;
  cfg.epochs = 2;
  ModelState dense = train_natural(init_model(ArchitectureDescriptor::reference_cnn(4), 2), d, cfg);
  PruneSpec spec;
  spec.method = PruneMethod::global;
  spec.fine_tune = true;
  TrainConfig ft = fine_tune_config(cfg);
  ft.epochs = 6;
  const ModelState m = prune_trained(dense, spec, d, ft);
  CHECK(m.provenance.pruning == "global@post+FT");
  std::size_t masked = 0, weights = 0;
  for (const auto& p : m.parameters)
    if (p.role == ParamRole::weight) weights += p.value.size();
  for (const auto& p : m.parameters)
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      if (!p.mask[i]) {
        ++masked;
        REQUIRE(p.value[i] == 0.0);
      }
  CHECK(masked == prune_count(0.2, weights));
}

TEST_CASE("adversarial training records its epsilon") {
  const Dataset d = small_set(2, 17);
  TrainConfig cfg;
  cfg.epochs = 1;
  PgdConfig pgd = PgdConfig::for_epsilon(0.01);
  pgd.iterations = 2;
  TrainLog log;
  const ModelState m = train_adversarial(init_model(ArchitectureDescriptor::reference_cnn(4), 3), d, cfg, pgd, &log);
  CHECK(m.provenance.regime == "adversarial");
  CHECK(m.provenance.epsilon == 0.01);
  CHECK(log.pgd.batches == static_cast<std::size_t>((d.size() + cfg.batch_size - 1) / cfg.batch_size));
  CHECK(log.pgd.max_linf > 0.0);
  CHECK(log.pgd.max_excess <= 1e-12);
  CHECK(log.pgd.out_of_range == 0);
  PgdAudit eval;
  pgd_accuracy(m, d, pgd, 5, 3, &eval);
  CHECK(eval.batches == static_cast<std::size_t>((d.size() + 2) / 3));
  CHECK(eval.max_excess <= 1e-12);
}
