#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "salprune/data.hpp"
#include "salprune/model.hpp"

namespace salprune {

// A differentiable classifier seen from the outside: class scores of a batch
// and gradients of one chosen score per sample with respect to the input.
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;
  // Per-sample input shape (no batch axis).
  virtual Shape input_shape() const = 0;
  virtual int num_classes() const = 0;
  // [B, K] pre-softmax scores.
  virtual Tensor logits(const Tensor& batch) const = 0;
  // d scores[b, classes[b]] / d batch[b], shaped like batch.
  virtual Tensor class_gradient(const Tensor& batch, std::span<const int> classes) const = 0;
};

// Adapter over a ModelState; borrows the model.
class NetworkScore final : public ScoreModel {
 public:
  explicit NetworkScore(const ModelState& model) : model_(model) {}
  Shape input_shape() const override { return model_.descriptor.input_shape(); }
  int num_classes() const override { return model_.descriptor.classes; }
  Tensor logits(const Tensor& batch) const override { return predict_logits(model_, batch); }
  Tensor class_gradient(const Tensor& batch, std::span<const int> classes) const override;

 private:
  const ModelState& model_;
};

// Explained class: a fixed index, or the argmax score of the clean input.
struct Target {
  std::optional<int> index;
  static Target predicted() { return {}; }
  static Target of(int cls) { return {cls}; }
};

struct Attribution {
  Tensor raw;  // shaped like the input image
  int target_class = 0;
  std::string method;
  std::map<std::string, double> params;
};

// Per-pixel importance, [H, W], nonnegative.
struct SaliencyMap {
  Tensor values;
};

struct IgConfig {
  std::optional<Tensor> baseline;  // defaults to all zeros
  int steps = 32;
  int batch = 32;
};

struct SgConfig {
  int samples = 25;
  double sigma = 0.10;       // fraction of value_range
  double value_range = 1.0;  // span of valid pixel values
  std::uint64_t seed = 0;
  int batch = 25;
};

enum class AttributionKind : std::uint8_t { vanilla, integrated_gradients, smoothgrad };

const char* attribution_name(AttributionKind k);  // "vanilla" / "integrated_gradients" / "smoothgrad"
const char* attribution_short(AttributionKind k);  // "VG" / "IG" / "SG"
AttributionKind parse_attribution(const std::string& s);

struct MethodConfig {
  AttributionKind kind = AttributionKind::vanilla;
  IgConfig ig;
  SgConfig sg;
};

// Throws std::out_of_range for a class index >= K.
int resolve_target(const ScoreModel& model, const Tensor& image, Target target);

// d score[target] / d image.
Attribution vanilla_gradient(const ScoreModel& model, const Tensor& image, Target target);

// (x - x') * mean_j grad F(x' + ((j - 0.5)/m)(x - x')), j = 1..m.
Attribution integrated_gradients(const ScoreModel& model, const Tensor& image, Target target, const IgConfig& cfg);

// Mean vanilla gradient over `samples` copies of the image with i.i.d.
// N(0, (sigma*range)^2) noise. Noise copy k draws from the stream
// derived from (cfg.seed, k). The target is resolved on the clean image.
Attribution smoothgrad(const ScoreModel& model, const Tensor& image, Target target, const SgConfig& cfg);

Attribution explain(const ScoreModel& model, const Tensor& image, Target target, const MethodConfig& cfg);

// Attributions at the predicted class for every sample of `data`. SmoothGrad
// seeds are derived per sample index from cfg.sg.seed.
std::vector<Attribution> explain_dataset(const ScoreModel& model, const Dataset& data, const MethodConfig& cfg);

// Sum over channels of |raw|.
SaliencyMap to_saliency(const Attribution& attr);

}  // namespace salprune
