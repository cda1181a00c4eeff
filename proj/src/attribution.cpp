#include "salprune/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "salprune/rng.hpp"

namespace salprune {
namespace {

Shape batched(const Shape& inner, int n) {
  Shape s{n};
  s.insert(s.end(), inner.begin(), inner.end());
  return s;
}

void check_image(const ScoreModel& model, const Tensor& image) {
  if (image.shape() != model.input_shape()) {
    throw ShapeError("attribution: image " + shape_string(image.shape()) + " does not match model input " +
                     shape_string(model.input_shape()));
  }
}

// Running mean m_k = m_{k-1} + (g_k - m_{k-1}) / k, in sample order. Equal
// inputs leave the mean exactly unchanged.
void running_mean_update(std::vector<double>& mean, std::span<const double> g, int k) {
  const double inv = 1.0 / k;
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (g[i] - mean[i]) * inv;
}

}  // namespace

Tensor NetworkScore::class_gradient(const Tensor& batch, std::span<const int> classes) const {
  ForwardPass pass = forward(model_, batch, GradTarget::input);
  GradientBundle g = backward(pass, PerSampleClass{std::vector<int>(classes.begin(), classes.end())});
  return std::move(g.input_gradient);
}

const char* attribution_name(AttributionKind k) {
  switch (k) {
    case AttributionKind::vanilla: return "vanilla";
    case AttributionKind::integrated_gradients: return "integrated_gradients";
    case AttributionKind::smoothgrad: return "smoothgrad";
  }
  return "?";
}

const char* attribution_short(AttributionKind k) {
  switch (k) {
    case AttributionKind::vanilla: return "VG";
    case AttributionKind::integrated_gradients: return "IG";
    case AttributionKind::smoothgrad: return "SG";
  }
  return "?";
}

AttributionKind parse_attribution(const std::string& s) {
  if (s == "vanilla" || s == "vg" || s == "VG") return AttributionKind::vanilla;
  if (s == "integrated_gradients" || s == "ig" || s == "IG") return AttributionKind::integrated_gradients;
  if (s == "smoothgrad" || s == "sg" || s == "SG") return AttributionKind::smoothgrad;
  throw std::invalid_argument("unknown attribution method '" + s + "'");
}

int resolve_target(const ScoreModel& model, const Tensor& image, Target target) {
  const int K = model.num_classes();
  if (target.index) {
    if (*target.index < 0 || *target.index >= K) {
      throw std::out_of_range("attribution target " + std::to_string(*target.index) + " out of range [0," +
                              std::to_string(K) + ")");
    }
    return *target.index;
  }
  const Tensor logits = model.logits(image.reshaped(batched(image.shape(), 1)));
  const auto row = logits.data();
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

Attribution vanilla_gradient(const ScoreModel& model, const Tensor& image, Target target) {
  check_image(model, image);
  Attribution a;
  a.target_class = resolve_target(model, image, target);
  a.method = "vanilla";
  const int cls[1] = {a.target_class};
  a.raw = model.class_gradient(image.reshaped(batched(image.shape(), 1)), cls).reshaped(image.shape());
  a.raw.require_finite("vanilla gradient");
  return a;
}

Attribution integrated_gradients(const ScoreModel& model, const Tensor& image, Target target, const IgConfig& cfg) {
  check_image(model, image);
  if (cfg.steps < 1) throw std::invalid_argument("integrated gradients needs steps >= 1");
  const Tensor baseline = cfg.baseline ? *cfg.baseline : Tensor(image.shape());
  if (baseline.shape() != image.shape()) {
    throw ShapeError("integrated gradients: baseline " + shape_string(baseline.shape()) + " does not match image " +
                     shape_string(image.shape()));
  }
  Attribution a;
  a.target_class = resolve_target(model, image, target);
  a.method = "integrated_gradients";
  a.params["steps"] = cfg.steps;

  const std::size_t n = image.size();
  const int chunk = std::max(1, cfg.batch);
  std::vector<double> mean(n, 0.0);
  int done = 0;
  for (int start = 0; start < cfg.steps; start += chunk) {
    const int count = std::min(chunk, cfg.steps - start);
    Tensor batch(batched(image.shape(), count));
    for (int k = 0; k < count; ++k) {
      const double alpha = (start + k + 0.5) / cfg.steps;
      double* dst = batch.data().data() + n * static_cast<std::size_t>(k);
      for (std::size_t i = 0; i < n; ++i) dst[i] = baseline[i] + alpha * (image[i] - baseline[i]);
    }
    const std::vector<int> cls(static_cast<std::size_t>(count), a.target_class);
    const Tensor g = model.class_gradient(batch, cls);
    for (int k = 0; k < count; ++k) running_mean_update(mean, g.data().subspan(n * static_cast<std::size_t>(k), n), ++done);
  }
  a.raw = Tensor(image.shape());
  for (std::size_t i = 0; i < n; ++i) a.raw[i] = (image[i] - baseline[i]) * mean[i];
  a.raw.require_finite("integrated gradients");
  return a;
}

Attribution smoothgrad(const ScoreModel& model, const Tensor& image, Target target, const SgConfig& cfg) {
  check_image(model, image);
  if (cfg.samples < 1) throw std::invalid_argument("smoothgrad needs samples >= 1");
  if (!(cfg.sigma >= 0.0)) throw std::invalid_argument("smoothgrad sigma must be >= 0");
  Attribution a;
  a.target_class = resolve_target(model, image, target);
  a.method = "smoothgrad";
  a.params["samples"] = cfg.samples;
  a.params["sigma"] = cfg.sigma;

  const std::size_t n = image.size();
  const double scale = cfg.sigma * cfg.value_range;
  const int chunk = std::max(1, cfg.batch);
  std::vector<double> mean(n, 0.0);
  int done = 0;
  for (int start = 0; start < cfg.samples; start += chunk) {
    const int count = std::min(chunk, cfg.samples - start);
    Tensor batch(batched(image.shape(), count));
    for (int k = 0; k < count; ++k) {
      SplitMix64 rng(stream_seed(cfg.seed, Stream::smoothgrad, {static_cast<std::uint64_t>(start + k)}));
      double* dst = batch.data().data() + n * static_cast<std::size_t>(k);
      if (scale == 0.0) {
        std::copy(image.data().begin(), image.data().end(), dst);
      } else {
        for (std::size_t i = 0; i < n; ++i) dst[i] = image[i] + scale * rng.gaussian();
      }
    }
    const std::vector<int> cls(static_cast<std::size_t>(count), a.target_class);
    const Tensor g = model.class_gradient(batch, cls);
    for (int k = 0; k < count; ++k) running_mean_update(mean, g.data().subspan(n * static_cast<std::size_t>(k), n), ++done);
  }
  a.raw = Tensor(image.shape(), std::move(mean));
  a.raw.require_finite("smoothgrad");
  return a;
}

Attribution explain(const ScoreModel& model, const Tensor& image, Target target, const MethodConfig& cfg) {
  switch (cfg.kind) {
    case AttributionKind::vanilla: return vanilla_gradient(model, image, target);
    case AttributionKind::integrated_gradients: return integrated_gradients(model, image, target, cfg.ig);
    case AttributionKind::smoothgrad: return smoothgrad(model, image, target, cfg.sg);
  }
  throw std::logic_error("unreachable attribution kind");
}

std::vector<Attribution> explain_dataset(const ScoreModel& model, const Dataset& data, const MethodConfig& cfg) {
  std::vector<Attribution> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  if (cfg.kind == AttributionKind::vanilla) {
    // Batched: each sample's gradient is independent of its batch neighbours.
    constexpr int chunk = 50;
    for (int start = 0; start < data.size(); start += chunk) {
      const int count = std::min(chunk, data.size() - start);
      std::vector<int> idx(static_cast<std::size_t>(count));
      for (int k = 0; k < count; ++k) idx[static_cast<std::size_t>(k)] = start + k;
      const Tensor batch = data.batch(idx);
      const Tensor logits = model.logits(batch);
      const int K = logits.dim(1);
      std::vector<int> cls(static_cast<std::size_t>(count));
      for (int k = 0; k < count; ++k) {
        const double* row = logits.data().data() + static_cast<std::size_t>(k) * K;
        cls[static_cast<std::size_t>(k)] = static_cast<int>(std::max_element(row, row + K) - row);
      }
      const Tensor g = model.class_gradient(batch, cls);
      for (int k = 0; k < count; ++k) {
        Attribution a;
        a.raw = g.slice(k);
        a.target_class = cls[static_cast<std::size_t>(k)];
        a.method = "vanilla";
        out.push_back(std::move(a));
      }
    }
    return out;
  }
  for (int i = 0; i < data.size(); ++i) {
    MethodConfig c = cfg;
    c.sg.seed = derive_seed(cfg.sg.seed, {static_cast<std::uint64_t>(i)});
    out.push_back(explain(model, data.image(i), Target::predicted(), c));
  }
  return out;
}

SaliencyMap to_saliency(const Attribution& attr) {
  const Tensor& r = attr.raw;
  if (r.rank() != 3) throw ShapeError("to_saliency expects a [C×H×W] attribution, got " + shape_string(r.shape()));
  const int C = r.dim(0), H = r.dim(1), W = r.dim(2);
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  SaliencyMap m{Tensor({H, W})};
  for (int c = 0; c < C; ++c)
    for (std::size_t p = 0; p < plane; ++p) m.values[p] += std::abs(r[static_cast<std::size_t>(c) * plane + p]);
  return m;
}

}  // namespace salprune
