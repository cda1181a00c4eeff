#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "salprune/attribution.hpp"
#include "salprune/data.hpp"

namespace salprune {

class DegenerateAttributionError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class ImputationError : public std::runtime_error {
 public:
  ImputationError(const std::string& what, double residual) : std::runtime_error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

// Gini index of |values|: 1 - 2 * sum_k (v_(k) / |v|_1) * (d - k + 0.5) / d
// over the values sorted non-decreasingly (k = 1..d). In [0, 1 - 1/d].
double gini(std::span<const double> values);
double gini(const Attribution& attr);

struct GiniSummary {
  double mean = 0.0;
  int evaluated = 0;
  int skipped = 0;  // all-zero attributions
};

// Mean Gini over the non-degenerate attributions. Throws
// DegenerateAttributionError when every attribution is all-zero.
GiniSummary mean_gini(std::span<const Attribution> attrs);

struct SparsityScore {
  double mean_gini = 0.0;
  double natural_mean_gini = 0.0;
  double delta = 0.0;  // mean_gini - natural_mean_gini
  int skipped = 0;
  int natural_skipped = 0;
};

SparsityScore sparsity_delta(const MethodConfig& method, const ScoreModel& model, const ScoreModel& natural_model,
                             const Dataset& eval_set);
SparsityScore sparsity_delta(std::span<const Attribution> model_attrs, std::span<const Attribution> natural_attrs);

struct RoadConfig {
  double step = 0.05;           // fraction of pixels removed per iteration
  double noise = 0.01;          // sigma of the noise added to imputed pixels
  double tolerance = 1e-9;      // iterative solver: max neighbour-mean residual
  int max_iterations = 200000;  // iterative solver sweep cap
  int direct_limit = 1000;      // unknown count up to which the system is solved by sparse Cholesky

  void validate() const;
};

struct ImputationResult {
  Tensor image;
  double residual = 0.0;  // max |u_p - mean of neighbours| before noise
  int unknowns = 0;
  bool direct = true;
};

// Fills every pixel with removal_mask[p] != 0 (all channels) by solving
// u_p = mean of u over p's in-image 4-neighbours, known neighbours entering
// as constants, then adds N(0, noise^2) to the filled pixels and clips to
// [0, 1]. A connected region of removed pixels with no known neighbour has a
// constant solution and is filled with 0.5 before noise.
ImputationResult impute(const Tensor& image, std::span<const std::uint8_t> removal_mask, const RoadConfig& cfg,
                        std::uint64_t rng_seed);
Tensor noisy_linear_imputation(const Tensor& image, std::span<const std::uint8_t> removal_mask,
                               const RoadConfig& cfg, std::uint64_t rng_seed);

struct RoadCurve {
  std::vector<double> fraction;
  std::vector<double> accuracy;
  std::string regime;
  std::string method;
};

// Pixel order: descending saliency, ties by ascending flat index.
std::vector<int> morf_order(const SaliencyMap& saliency);

// Removal steps t = 0 .. ceil(1/step); at step t the top min(1, t*step) of
// each sample's pixels (MoRF by to_saliency) are imputed and accuracy over
// the whole set is recorded.
RoadCurve road_curve(const ScoreModel& model, const Dataset& eval_set, std::span<const Attribution> attributions,
                     const RoadConfig& cfg, std::uint64_t seed);

// Trapezoidal area under accuracy vs fraction removed, normalized by the
// fraction span. Lower means a more faithful explanation.
double road_auc(const RoadCurve& curve);

struct GradientNormStats {
  double mean = 0.0;
  double stddev = 0.0;  // population
  int count = 0;
};

// L2 norm of d score[predicted] / d x per sample.
GradientNormStats gradient_norm_stats(const ScoreModel& model, const Dataset& eval_set);
GradientNormStats gradient_norm_stats(std::span<const Attribution> vanilla_attrs);

}  // namespace salprune
