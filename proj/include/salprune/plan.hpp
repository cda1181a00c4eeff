#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "salprune/attribution.hpp"
#include "salprune/metrics.hpp"
#include "salprune/pruning.hpp"
#include "salprune/training.hpp"

namespace salprune {

class PlanError : public std::invalid_argument {
 public:
  PlanError(const std::string& what, int line) : std::invalid_argument(format(what, line)), line_(line) {}
  int line() const { return line_; }  // 0 when not tied to a line

 private:
  static std::string format(const std::string& what, int line) {
    return line > 0 ? "line " + std::to_string(line) + ": " + what : what;
  }
  int line_;
};

struct DatasetSpec {
  enum class Kind { synthetic, folder } kind = Kind::synthetic;
  int classes = 8;
  int train_per_class = 50;
  int test_per_class = 25;
  std::uint64_t seed = 0;  // synthetic rendering seed, shared by all model seeds
  std::filesystem::path train_root, train_labels;
  std::filesystem::path test_root, test_labels;
};

struct ExperimentPlan {
  DatasetSpec dataset;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string run_id = "desk";
  std::filesystem::path output_dir = "runs";
  int workers = 1;

  TrainConfig train;        // seed is overridden per cell
  int fine_tune_epochs = 50;
  std::vector<double> adversarial_epsilons{0.01};
  int pgd_iterations = 40;
  double eval_pgd_epsilon = 0.01;  // PGD accuracy reported for every cell
  std::vector<PruneSpec> pruning;  // default: 3 methods x {pre, post, post + FT}

  std::vector<AttributionKind> methods{AttributionKind::vanilla, AttributionKind::integrated_gradients,
                                       AttributionKind::smoothgrad};
  IgConfig ig;
  SgConfig sg;
  int eval_size = 200;
  RoadConfig road;
  int saliency_samples = 4;

  static std::vector<PruneSpec> default_pruning();
  void validate() const;
  std::filesystem::path run_dir() const { return output_dir / run_id; }
};

// `[section]` headers and `key = value` lines; '#' starts a comment. Keys:
//   [dataset]     kind (synthetic|folder), classes, train_per_class,
//                 test_per_class, seed, train_root, train_labels, test_root, test_labels
//   [run]         seeds (comma list), run_id, output_dir, workers
//   [training]    epochs, fine_tune_epochs, batch_size, learning_rate, momentum, weight_decay
//   [adversarial] pgd_epsilon (comma list), pgd_iterations, eval_pgd_epsilon
//   [pruning]     methods (comma list), phases (pre, post, post_ft), conv_rate,
//                 output_rate, global_rate, structured_rate
//   [attribution] methods (comma list), ig_steps, sg_samples, sg_sigma
//   [metrics]     eval_size, road_step, road_noise, saliency_samples
// A list value of "none" is empty (pruning.methods, adversarial.pgd_epsilon).
// A [dataset] section is required. Relative folder paths resolve against the
// config file's directory; output_dir is taken as given.
ExperimentPlan parse_plan_text(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentPlan parse_plan(const std::filesystem::path& path);

// Config text that parses back to `plan`. Pruning specs are written as the
// methods x phases product with the first spec's rates.
std::string plan_config_text(const ExperimentPlan& plan);

// Stable text form of the resolved plan; its hash identifies the configuration.
std::string plan_canonical(const ExperimentPlan& plan);
std::string plan_hash(const ExperimentPlan& plan);

}  // namespace salprune
