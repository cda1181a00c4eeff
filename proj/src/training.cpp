#include "salprune/training.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

#include "salprune/rng.hpp"

namespace salprune {
namespace {

using BatchTransform = std::function<Tensor(const ModelState&, const Tensor&, std::span<const int>, int epoch, int batch)>;

std::vector<int> epoch_permutation(std::uint64_t seed, int epoch, int n) {
  std::vector<int> p(static_cast<std::size_t>(n));
  std::iota(p.begin(), p.end(), 0);
  SplitMix64 rng(stream_seed(seed, Stream::shuffle, {static_cast<std::uint64_t>(epoch)}));
  for (int i = n - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

void run_epochs(ModelState& model, const Dataset& data, const TrainConfig& cfg, const BatchTransform& transform,
                TrainLog* log) {
  cfg.validate();
  if (data.size() == 0) throw std::invalid_argument("training requires a nonempty dataset");
  apply_masks(model);
  OptimizerState opt = OptimizerState::zeros_like(model);
  const int n = data.size();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_permutation(cfg.seed, epoch, n);
    double loss_sum = 0.0;
    int batch_index = 0;
    for (int start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      const int count = std::min(cfg.batch_size, n - start);
      const std::span<const int> idx(order.data() + start, static_cast<std::size_t>(count));
      Tensor batch = data.batch(idx);
      const std::vector<int> labels = data.batch_labels(idx);
      if (transform) batch = transform(model, batch, labels, epoch, batch_index);
      ForwardPass pass = forward(model, batch, GradTarget::parameters);
      loss_sum += cross_entropy_loss(pass.logit_values(), labels) * count;
      const GradientBundle grads = backward(pass, MeanLoss{labels});
      sgd_step(model, grads, opt, cfg);
    }
    if (log) log->epoch_loss.push_back(loss_sum / n);
  }
  model.provenance.epochs += cfg.epochs;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
}

TrainConfig fine_tune_config(const TrainConfig& base) {
  TrainConfig c = base;
  c.epochs = 50;
  return c;
}

PgdConfig PgdConfig::for_epsilon(double epsilon) {
  PgdConfig c;
  c.epsilon = epsilon;
  c.step_size = epsilon / 10.0;
  c.iterations = 40;
  c.random_start = true;
  return c;
}

void PgdConfig::validate() const {
  if (!(epsilon >= 0.0)) throw std::invalid_argument("PGD epsilon must be >= 0");
  // A zero radius admits a zero step: the projection pins x' = x anyway.
  if (!(step_size > 0.0) && epsilon > 0.0) throw std::invalid_argument("PGD step size must be > 0");
  if (iterations < 0) throw std::invalid_argument("PGD iterations must be >= 0");
}

OptimizerState OptimizerState::zeros_like(const ModelState& model) {
  OptimizerState s;
  for (const auto& p : model.parameters) s.velocity.emplace_back(p.value.shape());
  return s;
}

void sgd_step(ModelState& model, const GradientBundle& grads, OptimizerState& opt, const TrainConfig& cfg) {
  if (opt.velocity.size() != model.parameters.size()) opt = OptimizerState::zeros_like(model);
  for (std::size_t k = 0; k < model.parameters.size(); ++k) {
    Parameter& p = model.parameters[k];
    const auto it = grads.parameter_gradients.find(p.name);
    if (it == grads.parameter_gradients.end()) throw std::invalid_argument("sgd_step: no gradient for " + p.name);
    const Tensor& g = it->second;
    if (g.shape() != p.value.shape()) throw ShapeError("sgd_step: gradient shape mismatch for " + p.name);
    Tensor& v = opt.velocity[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      if (!p.mask[i]) {
        p.value[i] = 0.0;
        v[i] = 0.0;
        continue;
      }
      const double gi = g[i] + cfg.weight_decay * p.value[i];
      v[i] = cfg.momentum * v[i] + gi;
      p.value[i] -= cfg.learning_rate * v[i];
    }
  }
}

ModelState train_natural(ModelState model, const Dataset& data, const TrainConfig& cfg, TrainLog* log) {
  run_epochs(model, data, cfg, nullptr, log);
  model.provenance.regime = "natural";
  model.provenance.append("natural:" + std::to_string(cfg.epochs));
  return model;
}

Tensor pgd_attack(const ModelState& model, const Tensor& batch, std::span<const int> labels, const PgdConfig& cfg,
                  std::uint64_t rng_seed) {
  cfg.validate();
  const std::size_t n = batch.size();
  Tensor adv = batch;
  if (cfg.random_start && cfg.epsilon > 0.0) {
    SplitMix64 rng(rng_seed);
    for (std::size_t i = 0; i < n; ++i) {
      adv[i] = std::clamp(batch[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), 0.0, 1.0);
    }
  }
  if (cfg.epsilon == 0.0) return adv;
  const std::vector<int> lab(labels.begin(), labels.end());
  for (int it = 0; it < cfg.iterations; ++it) {
    ForwardPass pass = forward(model, adv, GradTarget::input);
    const GradientBundle g = backward(pass, MeanLoss{lab});
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g.input_gradient[i];
      const double step = gi > 0.0 ? cfg.step_size : (gi < 0.0 ? -cfg.step_size : 0.0);
      const double lo = std::max(0.0, batch[i] - cfg.epsilon);
      const double hi = std::min(1.0, batch[i] + cfg.epsilon);
      adv[i] = std::clamp(adv[i] + step, lo, hi);
    }
  }
  return adv;
}

void PgdAudit::record(const Tensor& clean, const Tensor& adv, double epsilon) {
  double linf = 0.0;
  for (std::size_t i = 0; i < adv.size(); ++i) {
    linf = std::max(linf, std::abs(adv[i] - clean[i]));
    out_of_range += adv[i] < 0.0 || adv[i] > 1.0;
  }
  ++batches;
  max_linf = std::max(max_linf, linf);
  max_excess = std::max(max_excess, linf - epsilon);
}

void PgdAudit::merge(const PgdAudit& other) {
  batches += other.batches;
  max_linf = std::max(max_linf, other.max_linf);
  max_excess = std::max(max_excess, other.max_excess);
  out_of_range += other.out_of_range;
}

double pgd_accuracy(const ModelState& model, const Dataset& data, const PgdConfig& cfg, std::uint64_t seed,
                    int batch_size, PgdAudit* audit) {
  const int n = data.size();
  if (n == 0) return 0.0;
  int correct = 0;
  for (int start = 0, b = 0; start < n; start += batch_size, ++b) {
    const int count = std::min(batch_size, n - start);
    std::vector<int> idx(static_cast<std::size_t>(count));
    std::iota(idx.begin(), idx.end(), start);
    const auto labels = data.batch_labels(idx);
    const Tensor clean = data.batch(idx);
    const Tensor adv = pgd_attack(model, clean, labels, cfg,
                                  stream_seed(seed, Stream::pgd, {0xE7A1ULL, static_cast<std::uint64_t>(b)}));
    if (audit) audit->record(clean, adv, cfg.epsilon);
    const auto pred = predict(model, adv);
    for (int i = 0; i < count; ++i) correct += pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / n;
}

ModelState train_adversarial(ModelState model, const Dataset& data, const TrainConfig& cfg, const PgdConfig& pgd,
                             TrainLog* log) {
  pgd.validate();
  const std::uint64_t seed = cfg.seed;
  BatchTransform attack = [&pgd, seed, log](const ModelState& m, const Tensor& batch, std::span<const int> labels,
                                            int epoch, int batch_index) {
    Tensor adv = pgd_attack(m, batch, labels, pgd,
                            stream_seed(seed, Stream::pgd,
                                        {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batch_index)}));
    if (log) log->pgd.record(batch, adv, pgd.epsilon);
    return adv;
  };
  run_epochs(model, data, cfg, attack, log);
  model.provenance.regime = "adversarial";
  model.provenance.epsilon = pgd.epsilon;
  char buf[64];
  std::snprintf(buf, sizeof buf, "adversarial:%d@eps=%g", cfg.epochs, pgd.epsilon);
  model.provenance.append(buf);
  return model;
}

ModelState fine_tune(ModelState model, const Dataset& data, const TrainConfig& cfg, TrainLog* log) {
  run_epochs(model, data, cfg, nullptr, log);
  model.provenance.pruning += "+FT";
  model.provenance.append("FT:" + std::to_string(cfg.epochs));
  return model;
}

}  // namespace salprune
