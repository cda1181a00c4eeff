#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "salprune/data.hpp"
#include "salprune/metrics.hpp"
#include "salprune/plan.hpp"

namespace salprune {

inline constexpr const char* kToolVersion = "salprune 1.0.0";

enum class RegimeKind : std::uint8_t { natural, adversarial, pruned };

struct Regime {
  RegimeKind kind = RegimeKind::natural;
  std::string name;  // "natural", "adversarial", "global_post_ft", ...
  double epsilon = 0.0;
  PruneSpec prune;
};

// Natural first, then one adversarial regime per epsilon, then the pruning specs in plan order.
std::vector<Regime> plan_regimes(const ExperimentPlan& plan);

struct MethodResult {
  std::string method;  // attribution_name
  std::optional<double> mean_gini;  // empty when every attribution is all-zero
  int gini_skipped = 0;
  std::optional<double> sparsity_delta;  // vs the natural model of the same seed
  RoadCurve road;
  double road_auc = 0.0;
  std::string road_csv;                    // relative to the run directory
  std::vector<std::string> saliency_files;  // relative to the run directory
};

struct CellResult {
  std::uint64_t seed = 0;
  std::string regime;
  bool ok = false;
  std::string failure;
  std::string checkpoint;  // relative to the run directory
  double accuracy = 0.0;
  double pgd_accuracy = 0.0;
  double model_sparsity = 0.0;
  PgdAudit pgd_audit;  // adversarial training and PGD evaluation batches
  GradientNormStats grad_norm;
  std::vector<MethodResult> methods;
  double seconds = 0.0;

  const MethodResult* method(const std::string& name) const;
};

struct RunManifest {
  ExperimentPlan plan;
  std::string tool_version = kToolVersion;
  std::string config_hash;
  std::filesystem::path run_dir;
  std::vector<std::string> regimes;
  std::vector<std::string> methods;
  std::vector<CellResult> cells;  // seed-major, regimes in plan_regimes order
  std::vector<std::string> csv_files;  // relative to the run directory
  double seconds = 0.0;

  const CellResult* cell(std::uint64_t seed, const std::string& regime) const;
  int failures() const;
};

struct DataSplits {
  Dataset train;
  Dataset test;  // evaluation set: the first eval_size test images
};

DataSplits load_plan_data(const ExperimentPlan& plan);

// Runs every (seed x regime) cell, writes checkpoints, metric CSVs and
// saliency maps under plan.run_dir(), then writes manifest.json atomically.
// Cells that throw are recorded as failures. Throws std::runtime_error for a
// run directory that already holds a manifest unless `overwrite` is set.
RunManifest run_matrix(const ExperimentPlan& plan, bool overwrite = false);

void write_manifest(const RunManifest& manifest, const std::filesystem::path& path);
RunManifest read_manifest(const std::filesystem::path& path);

// Writes `text` to a sibling temporary file and renames it onto `path`.
void write_file_atomic(const std::filesystem::path& path, const std::string& text);

std::string road_csv_text(const RoadCurve& curve);
// 8-bit grayscale map scaled by the maximum saliency.
void write_saliency_pgm(const SaliencyMap& map, const std::filesystem::path& path);

// Report files under <run_dir>/report. Returns the paths written.
std::vector<std::filesystem::path> render_reports(const RunManifest& manifest);

}  // namespace salprune
