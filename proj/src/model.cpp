#include "salprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "salprune/rng.hpp"

namespace salprune {

ArchitectureDescriptor ArchitectureDescriptor::reference_cnn(int classes) {
  ArchitectureDescriptor d;
  d.channels = 3;
  d.height = 32;
  d.width = 32;
  d.classes = classes;
  d.layers = {
      {LayerKind::conv, 8, 3}, {LayerKind::relu, 0, 0},    {LayerKind::max_pool, 0, 0},
      {LayerKind::conv, 16, 3}, {LayerKind::relu, 0, 0},   {LayerKind::max_pool, 0, 0},
      {LayerKind::flatten, 0, 0}, {LayerKind::dense, 128, 0}, {LayerKind::relu, 0, 0},
      {LayerKind::dense, classes, 0},
  };
  return d;
}

std::vector<Shape> ArchitectureDescriptor::layer_output_shapes() const {
  if (channels <= 0 || height <= 0 || width <= 0) {
    throw ShapeError("descriptor: input shape must be positive, got " +
                     shape_string({channels, height, width}));
  }
  std::vector<Shape> shapes;
  Shape cur{channels, height, width};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string where = "layer " + std::to_string(i) + ": ";
    switch (l.kind) {
      case LayerKind::conv:
        if (cur.size() != 3) throw ShapeError(where + "conv expects C×H×W input, got " + shape_string(cur));
        if (l.kernel != 3) throw ShapeError(where + "only 3x3 convolutions are supported");
        if (l.units <= 0) throw ShapeError(where + "conv needs a positive filter count");
        cur = {l.units, cur[1], cur[2]};
        break;
      case LayerKind::relu:
        break;
      case LayerKind::max_pool:
        if (cur.size() != 3 || cur[1] % 2 || cur[2] % 2) {
          throw ShapeError(where + "max-pool needs even spatial dims, got " + shape_string(cur));
        }
        cur = {cur[0], cur[1] / 2, cur[2] / 2};
        break;
      case LayerKind::flatten:
        cur = {static_cast<int>(shape_size(cur))};
        break;
      case LayerKind::dense:
        if (cur.size() != 1) throw ShapeError(where + "dense expects a flat input, got " + shape_string(cur));
        if (l.units <= 0) throw ShapeError(where + "dense needs a positive unit count");
        cur = {l.units};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

void ArchitectureDescriptor::validate() const {
  if (classes < 2) throw ShapeError("descriptor: need at least 2 classes, got " + std::to_string(classes));
  const auto shapes = layer_output_shapes();
  if (shapes.empty() || shapes.back().size() != 1 || shapes.back()[0] != classes) {
    throw ShapeError("descriptor: final layer must produce " + std::to_string(classes) +
                     " logits, got " + (shapes.empty() ? std::string("nothing") : shape_string(shapes.back())));
  }
  if (layers.back().kind != LayerKind::dense && layers.back().kind != LayerKind::conv) {
    // A trailing relu/pool/flatten would still chain but is not a logit layer.
    throw ShapeError("descriptor: last layer must be parametric");
  }
}

std::string ArchitectureDescriptor::layers_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i) os << ',';
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerKind::conv: os << "conv:" << l.units << ':' << l.kernel; break;
      case LayerKind::relu: os << "relu"; break;
      case LayerKind::max_pool: os << "pool"; break;
      case LayerKind::flatten: os << "flatten"; break;
      case LayerKind::dense: os << "dense:" << l.units; break;
    }
  }
  return os.str();
}

std::vector<LayerSpec> ArchitectureDescriptor::parse_layers(std::string_view text) {
  std::vector<LayerSpec> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string_view::npos) end = text.size();
    const std::string tok(text.substr(pos, end - pos));
    if (tok == "relu") {
      out.push_back({LayerKind::relu, 0, 0});
    } else if (tok == "pool") {
      out.push_back({LayerKind::max_pool, 0, 0});
    } else if (tok == "flatten") {
      out.push_back({LayerKind::flatten, 0, 0});
    } else if (tok.rfind("conv:", 0) == 0) {
      int units = 0, kernel = 0;
      if (std::sscanf(tok.c_str(), "conv:%d:%d", &units, &kernel) != 2) {
        throw std::invalid_argument("bad conv layer token '" + tok + "'");
      }
      out.push_back({LayerKind::conv, units, kernel});
    } else if (tok.rfind("dense:", 0) == 0) {
      int units = 0;
      if (std::sscanf(tok.c_str(), "dense:%d", &units) != 1) {
        throw std::invalid_argument("bad dense layer token '" + tok + "'");
      }
      out.push_back({LayerKind::dense, units, 0});
    } else {
      throw std::invalid_argument("unknown layer token '" + tok + "'");
    }
    pos = end + 1;
  }
  return out;
}

void Provenance::append(const std::string& step) {
  history = history.empty() ? step : history + ">" + step;
}

Parameter& ModelState::param(std::string_view name) {
  for (auto& p : parameters)
    if (p.name == name) return p;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Parameter& ModelState::param(std::string_view name) const {
  return const_cast<ModelState*>(this)->param(name);
}

std::size_t ModelState::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters) n += p.value.size();
  return n;
}

std::size_t ModelState::masked_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters) n += static_cast<std::size_t>(std::count(p.mask.begin(), p.mask.end(), 0));
  return n;
}

double ModelState::sparsity() const {
  const std::size_t total = parameter_count();
  return total == 0 ? 0.0 : static_cast<double>(masked_count()) / static_cast<double>(total);
}

ModelState init_model(const ArchitectureDescriptor& descriptor, std::uint64_t seed) {
  descriptor.validate();
  ModelState m;
  m.descriptor = descriptor;
  m.provenance.seed = seed;
  m.provenance.append("init:" + std::to_string(seed));

  SplitMix64 rng(seed);
  Shape cur = descriptor.input_shape();
  int conv_idx = 0, dense_idx = 0;
  for (std::size_t i = 0; i < descriptor.layers.size(); ++i) {
    const LayerSpec& l = descriptor.layers[i];
    Shape wshape;
    std::string prefix;
    int fan_in = 0;
    if (l.kind == LayerKind::conv) {
      wshape = {l.units, cur[0], 3, 3};
      fan_in = cur[0] * 9;
      prefix = "conv" + std::to_string(++conv_idx);
      cur = {l.units, cur[1], cur[2]};
    } else if (l.kind == LayerKind::dense) {
      wshape = {l.units, cur[0]};
      fan_in = cur[0];
      prefix = "dense" + std::to_string(++dense_idx);
      cur = {l.units};
    } else {
      if (l.kind == LayerKind::max_pool) cur = {cur[0], cur[1] / 2, cur[2] / 2};
      if (l.kind == LayerKind::flatten) cur = {static_cast<int>(shape_size(cur))};
      continue;
    }
    const double bound = std::sqrt(6.0 / fan_in);
    Parameter w{prefix + ".weight", ParamRole::weight, static_cast<int>(i), l.kind, Tensor(wshape), {}};
    for (auto& v : w.value.data()) v = (2.0 * rng.uniform() - 1.0) * bound;
    w.mask.assign(w.value.size(), 1);
    Parameter b{prefix + ".bias", ParamRole::bias, static_cast<int>(i), l.kind, Tensor({l.units}), {}};
    b.mask.assign(b.value.size(), 1);
    m.parameters.push_back(std::move(w));
    m.parameters.push_back(std::move(b));
  }
  return m;
}

void apply_masks(ModelState& model) {
  for (auto& p : model.parameters)
    for (std::size_t i = 0; i < p.mask.size(); ++i)
      if (!p.mask[i]) p.value[i] = 0.0;
}

void set_masks(ModelState& model, const std::map<std::string, std::vector<std::uint8_t>>& masks) {
  for (auto& p : model.parameters) {
    auto it = masks.find(p.name);
    if (it == masks.end()) continue;
    if (it->second.size() != p.value.size()) {
      throw ShapeError("mask for " + p.name + " has " + std::to_string(it->second.size()) +
                       " entries, parameter has " + std::to_string(p.value.size()));
    }
    p.mask = it->second;
  }
  apply_masks(model);
}

std::map<std::string, std::vector<std::uint8_t>> masks_of(const ModelState& model) {
  std::map<std::string, std::vector<std::uint8_t>> out;
  for (const auto& p : model.parameters) out[p.name] = p.mask;
  return out;
}

ForwardPass forward(const ModelState& model, const Tensor& batch, GradTarget target) {
  const auto& d = model.descriptor;
  if (batch.rank() != 4 || batch.dim(1) != d.channels || batch.dim(2) != d.height ||
      batch.dim(3) != d.width) {
    throw ShapeError("forward: input expects [B×" + std::to_string(d.channels) + "×" +
                     std::to_string(d.height) + "×" + std::to_string(d.width) + "], got " +
                     shape_string(batch.shape()));
  }
  const bool want_input = target == GradTarget::input || target == GradTarget::all;
  const bool want_params = target == GradTarget::parameters || target == GradTarget::all;

  ForwardPass pass;
  pass.model = &model;
  pass.input = pass.tape.leaf(batch, want_input);
  pass.params.reserve(model.parameters.size());
  for (const auto& p : model.parameters) pass.params.push_back(pass.tape.leaf_ref(p.value, want_params));

  Var cur = pass.input;
  std::size_t pi = 0;
  for (std::size_t i = 0; i < d.layers.size(); ++i) {
    const LayerSpec& l = d.layers[i];
    try {
      switch (l.kind) {
        case LayerKind::conv:
          cur = pass.tape.conv2d(cur, pass.params[pi], pass.params[pi + 1]);
          pi += 2;
          break;
        case LayerKind::relu:
          cur = pass.tape.relu(cur);
          break;
        case LayerKind::max_pool:
          cur = pass.tape.max_pool2(cur);
          break;
        case LayerKind::flatten:
          cur = pass.tape.flatten(cur);
          break;
        case LayerKind::dense:
          // Dense directly on an unflattened tensor is a descriptor error caught by validate().
          cur = pass.tape.dense(cur, pass.params[pi], pass.params[pi + 1]);
          pi += 2;
          break;
      }
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + d.layers_string() + "): " + e.what());
    }
  }
  pass.logits = cur;
  pass.tape.value(cur).require_finite("forward logits");
  return pass;
}

Tensor predict_logits(const ModelState& model, const Tensor& batch) {
  ForwardPass pass = forward(model, batch, GradTarget::none);
  return pass.logit_values();
}

std::vector<int> predict(const ModelState& model, const Tensor& batch) {
  const Tensor logits = predict_logits(model, batch);
  const int B = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    const double* row = logits.data().data() + static_cast<std::size_t>(b) * K;
    out[static_cast<std::size_t>(b)] = static_cast<int>(std::max_element(row, row + K) - row);
  }
  return out;
}

namespace {

void check_labels(std::span<const int> labels, int B, int K, const char* what) {
  if (static_cast<int>(labels.size()) != B) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(B));
  }
  for (int y : labels)
    if (y < 0 || y >= K) throw std::out_of_range(std::string(what) + ": class " + std::to_string(y) + " out of range [0," + std::to_string(K) + ")");
}

}  // namespace

double cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be [B×K], got " + shape_string(logits.shape()));
  const int B = logits.dim(0), K = logits.dim(1);
  if (B == 0 || labels.empty()) throw std::invalid_argument("cross_entropy_loss: empty batch");
  check_labels(labels, B, K, "cross_entropy_loss");
  double total = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* row = logits.data().data() + static_cast<std::size_t>(b) * K;
    const double m = *std::max_element(row, row + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += std::exp(row[k] - m);
    total += (m + std::log(s)) - row[labels[static_cast<std::size_t>(b)]];
  }
  return total / B;
}

Tensor cross_entropy_grad(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_grad: logits must be [B×K]");
  const int B = logits.dim(0), K = logits.dim(1);
  if (B == 0 || labels.empty()) throw std::invalid_argument("cross_entropy_grad: empty batch");
  check_labels(labels, B, K, "cross_entropy_grad");
  Tensor g(logits.shape());
  for (int b = 0; b < B; ++b) {
    const double* row = logits.data().data() + static_cast<std::size_t>(b) * K;
    double* out = g.data().data() + static_cast<std::size_t>(b) * K;
    const double m = *std::max_element(row, row + K);
    double s = 0.0;
    for (int k = 0; k < K; ++k) s += (out[k] = std::exp(row[k] - m));
    for (int k = 0; k < K; ++k) out[k] = out[k] / s / B;
    out[labels[static_cast<std::size_t>(b)]] -= 1.0 / B;
  }
  return g;
}

GradientBundle backward(ForwardPass& pass, const OutputSelector& selector) {
  if (pass.tape.consumed()) throw TapeError("backward: forward pass already consumed");
  const Tensor& logits = pass.logit_values();
  const int B = logits.dim(0), K = logits.dim(1);
  Tensor seed(logits.shape());
  if (const auto* cs = std::get_if<ClassScore>(&selector)) {
    if (cs->index < 0 || cs->index >= K) {
      throw std::out_of_range("backward: class " + std::to_string(cs->index) + " out of range [0," + std::to_string(K) + ")");
    }
    for (int b = 0; b < B; ++b) seed[static_cast<std::size_t>(b * K + cs->index)] = 1.0;
  } else if (const auto* ps = std::get_if<PerSampleClass>(&selector)) {
    check_labels(ps->classes, B, K, "backward");
    for (int b = 0; b < B; ++b) seed[static_cast<std::size_t>(b * K + ps->classes[static_cast<std::size_t>(b)])] = 1.0;
  } else {
    seed = cross_entropy_grad(logits, std::get<MeanLoss>(selector).labels);
  }

  pass.tape.backward(pass.logits, seed);

  GradientBundle out;
  out.input_gradient = pass.tape.grad(pass.input);
  const auto& params = pass.model->parameters;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor g = pass.tape.grad(pass.params[i]);
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!params[i].mask[j]) g[j] = 0.0;
    out.parameter_gradients.emplace(params[i].name, std::move(g));
  }
  return out;
}

double accuracy(const ModelState& model, const Tensor& images, std::span<const int> labels, int batch_size) {
  const int N = images.dim(0);
  if (N == 0) return 0.0;
  const std::size_t per = images.size() / static_cast<std::size_t>(N);
  int correct = 0;
  for (int start = 0; start < N; start += batch_size) {
    const int count = std::min(batch_size, N - start);
    Shape s = images.shape();
    s[0] = count;
    std::vector<double> buf(images.data().begin() + static_cast<std::ptrdiff_t>(per * start),
                            images.data().begin() + static_cast<std::ptrdiff_t>(per * (start + count)));
    const auto pred = predict(model, Tensor(s, std::move(buf)));
    for (int i = 0; i < count; ++i) correct += pred[static_cast<std::size_t>(i)] == labels[static_cast<std::size_t>(start + i)];
  }
  return static_cast<double>(correct) / N;
}

}  // namespace salprune
