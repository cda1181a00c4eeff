#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "salprune/data.hpp"
#include "salprune/model.hpp"

namespace salprune {

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;

  // Throws std::invalid_argument unless lr > 0, momentum in [0,1), decay >= 0.
  void validate() const;
};

// Same optimizer settings, 50 epochs.
TrainConfig fine_tune_config(const TrainConfig& base);

// L-infinity PGD. Pixel units are on the [0, 1] scale.
struct PgdConfig {
  double epsilon = 0.01;
  double step_size = 0.001;
  int iterations = 40;
  bool random_start = true;

  // step = epsilon / 10, 40 iterations, random start.
  static PgdConfig for_epsilon(double epsilon);
  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor> velocity;  // parallel to model.parameters

  static OptimizerState zeros_like(const ModelState& model);
};

// Bounds observed over attacked batches.
struct PgdAudit {
  std::size_t batches = 0;
  double max_linf = 0.0;    // max |x' - x|_inf
  double max_excess = 0.0;  // max(0, |x' - x|_inf - epsilon)
  std::size_t out_of_range = 0;  // entries of x' outside [0, 1]

  void record(const Tensor& clean, const Tensor& adv, double epsilon);
  void merge(const PgdAudit& other);
};

struct TrainLog {
  std::vector<double> epoch_loss;  // mean training loss per epoch
  PgdAudit pgd;                    // adversarial training only
};

// Momentum SGD with weight decay folded into the gradient:
//   g' = g + decay * w;  v = momentum * v + g';  w -= lr * v
// Masked entries keep w = 0 and v = 0.
void sgd_step(ModelState& model, const GradientBundle& grads, OptimizerState& opt, const TrainConfig& cfg);

ModelState train_natural(ModelState model, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

// Iterated sign-gradient ascent on the cross-entropy, projected onto the
// epsilon ball around `batch` and onto [0, 1] after every step.
Tensor pgd_attack(const ModelState& model, const Tensor& batch, std::span<const int> labels,
                  const PgdConfig& cfg, std::uint64_t rng_seed);

// Accuracy on PGD-perturbed copies of the data.
double pgd_accuracy(const ModelState& model, const Dataset& data, const PgdConfig& cfg, std::uint64_t seed,
                    int batch_size = 50, PgdAudit* audit = nullptr);

// Every mini-batch is replaced by its PGD perturbation before the loss.
ModelState train_adversarial(ModelState model, const Dataset& data, const TrainConfig& cfg, const PgdConfig& pgd,
                             TrainLog* log = nullptr);

// Natural training loop on an already-masked model; masks never change.
ModelState fine_tune(ModelState model, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

}  // namespace salprune
