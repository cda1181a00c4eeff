#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "salprune/tape.hpp"
#include "salprune/tensor.hpp"

namespace salprune {

enum class LayerKind : std::uint8_t { conv, relu, max_pool, flatten, dense };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  int units = 0;   // filters for conv, outputs for dense
  int kernel = 0;  // conv only; must be 3

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

struct ArchitectureDescriptor {
  int channels = 3;
  int height = 32;
  int width = 32;
  std::vector<LayerSpec> layers;
  int classes = 0;

  // input 3x32x32 -> conv8 -> relu -> pool -> conv16 -> relu -> pool -> flatten
  // -> dense128 -> relu -> dense(classes)
  static ArchitectureDescriptor reference_cnn(int classes);

  // Throws ShapeError naming the first layer whose shapes do not chain.
  void validate() const;

  // Per-sample output shape after each layer (no batch axis).
  std::vector<Shape> layer_output_shapes() const;

  Shape input_shape() const { return {channels, height, width}; }

  // "conv:8:3,relu,pool,..." round-trippable text form.
  std::string layers_string() const;
  static std::vector<LayerSpec> parse_layers(std::string_view text);

  friend bool operator==(const ArchitectureDescriptor&, const ArchitectureDescriptor&) = default;
};

enum class ParamRole : std::uint8_t { weight, bias };

struct Parameter {
  std::string name;  // e.g. "conv1.weight"
  ParamRole role = ParamRole::weight;
  int layer = 0;        // index into descriptor.layers
  LayerKind kind = LayerKind::conv;
  Tensor value;
  std::vector<std::uint8_t> mask;  // 1 = active, 0 = pruned; same length as value
};

struct Provenance {
  std::uint64_t seed = 0;
  std::string regime = "init";
  std::string pruning = "none";
  int epochs = 0;
  double epsilon = 0.0;
  std::string history;  // '>'-separated lifecycle steps

  void append(const std::string& step);
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct ModelState {
  ArchitectureDescriptor descriptor;
  std::vector<Parameter> parameters;
  Provenance provenance;

  Parameter& param(std::string_view name);
  const Parameter& param(std::string_view name) const;
  std::size_t parameter_count() const;
  std::size_t masked_count() const;
  // masked_count() / parameter_count()
  double sparsity() const;
};

// Uniform fan-in initialization: each weight is (2u - 1) * sqrt(6 / fan_in)
// with u drawn from SplitMix64(seed), layers in order and entries in flat
// order; biases zero; masks all ones.
ModelState init_model(const ArchitectureDescriptor& descriptor, std::uint64_t seed);

// Zeroes every parameter entry whose mask is 0. Idempotent.
void apply_masks(ModelState& model);

// Replaces masks (same layout as parameters) and applies them.
void set_masks(ModelState& model, const std::map<std::string, std::vector<std::uint8_t>>& masks);

std::map<std::string, std::vector<std::uint8_t>> masks_of(const ModelState& model);

enum class GradTarget : std::uint8_t { none, input, parameters, all };

// One recorded evaluation. Holds a borrowed view of the model's parameters:
// the model must stay alive and unmodified until the pass is consumed.
struct ForwardPass {
  Tape tape;
  Var input;
  Var logits;
  std::vector<Var> params;  // parallel to model.parameters
  const ModelState* model = nullptr;

  const Tensor& logit_values() const { return tape.value(logits); }
};

ForwardPass forward(const ModelState& model, const Tensor& batch, GradTarget target = GradTarget::all);

// Logits only, no gradient bookkeeping.
Tensor predict_logits(const ModelState& model, const Tensor& batch);
std::vector<int> predict(const ModelState& model, const Tensor& batch);

// Same class score differentiated for every sample of the batch.
struct ClassScore {
  int index = 0;
};
// One class per sample.
struct PerSampleClass {
  std::vector<int> classes;
};
// Mean cross-entropy over the batch.
struct MeanLoss {
  std::vector<int> labels;
};
using OutputSelector = std::variant<ClassScore, PerSampleClass, MeanLoss>;

struct GradientBundle {
  Tensor input_gradient;
  std::map<std::string, Tensor> parameter_gradients;
};

// Gradients of the selected scalar. Masked parameter entries are exactly 0.
// Consumes the pass.
GradientBundle backward(ForwardPass& pass, const OutputSelector& selector);

// Mean over the batch of -log softmax(logits)[label], max-shifted.
double cross_entropy_loss(const Tensor& logits, std::span<const int> labels);
// d loss / d logits for the mean cross-entropy.
Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels);

double accuracy(const ModelState& model, const Tensor& images, std::span<const int> labels,
                int batch_size = 64);

}  // namespace salprune
