#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "salprune/data.hpp"
#include "salprune/model.hpp"
#include "salprune/training.hpp"

namespace salprune {

using MaskSet = std::map<std::string, std::vector<std::uint8_t>>;

enum class PruneMethod : std::uint8_t { l1_unstructured, global, layered_structured };
enum class PrunePhase : std::uint8_t { pre_train, post_train };

const char* method_name(PruneMethod m);
const char* phase_name(PrunePhase p);
PruneMethod parse_prune_method(const std::string& s);

struct PruneSpec {
  PruneMethod method = PruneMethod::global;
  double conv_rate = 0.2;        // l1_unstructured: convolutional weights
  double output_rate = 0.1;      // l1_unstructured: dense weights
  double global_rate = 0.2;      // global
  double structured_rate = 0.1;  // layered_structured, every layer but the last dense
  PrunePhase phase = PrunePhase::post_train;
  bool fine_tune = false;

  void validate() const;
  // e.g. "global_post_ft"
  std::string tag() const;
};

// Number of entries removed for a fractional rate: floor(rate * n + 0.5).
std::size_t prune_count(double rate, std::size_t n);

// Within each conv weight tensor the prune_count(conv_rate) smallest |w| are
// masked; dense weight tensors use output_rate. Biases are never masked.
// Ties go to the lower flat index.
MaskSet mask_l1_unstructured(const ModelState& model, double conv_rate = 0.2, double output_rate = 0.1);

// All weight entries (no biases) are pooled across layers and the
// prune_count(rate, total) smallest |w| are masked. Ties: earlier layer, then
// lower flat index.
MaskSet mask_global(const ModelState& model, double rate = 0.2);

// Conv filters ranked by the L2 norm of their weight slice, dense output
// units (except the final layer) by the L2 norm of their incoming weights;
// the prune_count(rate, count) lowest lose all their weights and their bias.
MaskSet mask_layered_structured(const ModelState& model, double rate = 0.1);

MaskSet compute_masks(const ModelState& model, const PruneSpec& spec);

struct SparsityGroup {
  std::string name;
  std::size_t masked = 0;
  std::size_t total = 0;
  double fraction() const { return total ? static_cast<double>(masked) / static_cast<double>(total) : 0.0; }
};

struct SparsityReport {
  std::vector<SparsityGroup> groups;  // one per parameter tensor
  std::size_t masked = 0;
  std::size_t total = 0;
  double overall() const { return total ? static_cast<double>(masked) / static_cast<double>(total) : 0.0; }
};

SparsityReport sparsity_report(const ModelState& model);

struct PruneWorkflowResult {
  ModelState model;
  TrainLog log;
};

// pre_train: masks computed on init_model(seed) weights, then trained with
// masks fixed for train_cfg.epochs. post_train: dense natural training,
// masks computed on the trained weights, then fine-tuning for ft_cfg.epochs
// when spec.fine_tune is set.
PruneWorkflowResult run_prune_workflow(const PruneSpec& spec, const Dataset& data, const TrainConfig& train_cfg,
                                       const TrainConfig& ft_cfg, std::uint64_t seed);

// Post-train pruning starting from an already trained dense model.
ModelState prune_trained(const ModelState& dense, const PruneSpec& spec, const Dataset& data,
                         const TrainConfig& ft_cfg, TrainLog* log = nullptr);

// Pre-train pruning from the initial weights of `data.classes()`-way ReferenceCNN.
ModelState prune_at_init(const ModelState& initial, const PruneSpec& spec, const Dataset& data,
                         const TrainConfig& train_cfg, TrainLog* log = nullptr);

}  // namespace salprune
