#include "salprune/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace salprune {
namespace {

void check_rate(double rate, const char* what) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument(std::string(what) + " must be in [0, 1), got " + std::to_string(rate));
  }
}

// Indices of the `count` smallest scores; ties resolved by lower index.
std::vector<std::size_t> bottom_k(const std::vector<double>& scores, std::size_t count) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, idx.size());
  auto less = [&scores](std::size_t a, std::size_t b) {
    return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(), less);
  idx.resize(count);
  return idx;
}

MaskSet all_ones(const ModelState& model) {
  MaskSet m;
  for (const auto& p : model.parameters) m[p.name].assign(p.value.size(), 1);
  return m;
}

std::string bias_name(const std::string& weight_name) {
  return weight_name.substr(0, weight_name.rfind('.')) + ".bias";
}

}  // namespace

const char* method_name(PruneMethod m) {
  switch (m) {
    case PruneMethod::l1_unstructured: return "l1_unstructured";
    case PruneMethod::global: return "global";
    case PruneMethod::layered_structured: return "layered_structured";
  }
  return "?";
}

const char* phase_name(PrunePhase p) { return p == PrunePhase::pre_train ? "pre_train" : "post_train"; }

PruneMethod parse_prune_method(const std::string& s) {
  if (s == "l1_unstructured" || s == "l1") return PruneMethod::l1_unstructured;
  if (s == "global") return PruneMethod::global;
  if (s == "layered_structured" || s == "layered") return PruneMethod::layered_structured;
  throw std::invalid_argument("unknown pruning method '" + s + "'");
}

void PruneSpec::validate() const {
  check_rate(conv_rate, "conv_rate");
  check_rate(output_rate, "output_rate");
  check_rate(global_rate, "global_rate");
  check_rate(structured_rate, "structured_rate");
  if (phase == PrunePhase::pre_train && fine_tune) {
    throw std::invalid_argument("fine-tuning applies to post-train pruning only");
  }
}

std::string PruneSpec::tag() const {
  std::string t = method_name(method);
  t += phase == PrunePhase::pre_train ? "_pre" : "_post";
  if (fine_tune) t += "_ft";
  return t;
}

std::size_t prune_count(double rate, std::size_t n) {
  return static_cast<std::size_t>(std::floor(rate * static_cast<double>(n) + 0.5));
}

MaskSet mask_l1_unstructured(const ModelState& model, double conv_rate, double output_rate) {
  check_rate(conv_rate, "conv_rate");
  check_rate(output_rate, "output_rate");
  MaskSet masks = all_ones(model);
  for (const auto& p : model.parameters) {
    if (p.role != ParamRole::weight) continue;
    const double rate = p.kind == LayerKind::conv ? conv_rate : output_rate;
    std::vector<double> mag(p.value.size());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::abs(p.value[i]);
    auto& m = masks[p.name];
    for (std::size_t i : bottom_k(mag, prune_count(rate, mag.size()))) m[i] = 0;
  }
  return masks;
}

MaskSet mask_global(const ModelState& model, double rate) {
  check_rate(rate, "global rate");
  MaskSet masks = all_ones(model);
  std::vector<double> mag;
  std::vector<std::pair<const Parameter*, std::size_t>> where;
  // Parameters are stored in layer order, so pool position encodes (layer, flat index).
  for (const auto& p : model.parameters) {
    if (p.role != ParamRole::weight) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      mag.push_back(std::abs(p.value[i]));
      where.emplace_back(&p, i);
    }
  }
  for (std::size_t k : bottom_k(mag, prune_count(rate, mag.size()))) {
    masks[where[k].first->name][where[k].second] = 0;
  }
  return masks;
}

MaskSet mask_layered_structured(const ModelState& model, double rate) {
  check_rate(rate, "structured rate");
  MaskSet masks = all_ones(model);
  const Parameter* last_dense = nullptr;
  for (const auto& p : model.parameters)
    if (p.role == ParamRole::weight && p.kind == LayerKind::dense) last_dense = &p;

  for (const auto& p : model.parameters) {
    if (p.role != ParamRole::weight || &p == last_dense) continue;
    // Leading axis indexes the structure: conv filters [F,C,3,3] or dense units [O,I].
    const int units = p.value.dim(0);
    const std::size_t slice = p.value.size() / static_cast<std::size_t>(units);
    std::vector<double> norms(static_cast<std::size_t>(units));
    for (int u = 0; u < units; ++u) {
      norms[static_cast<std::size_t>(u)] =
          l2_norm(p.value.data().subspan(slice * static_cast<std::size_t>(u), slice));
    }
    auto& wm = masks[p.name];
    auto& bm = masks[bias_name(p.name)];
    for (std::size_t u : bottom_k(norms, prune_count(rate, static_cast<std::size_t>(units)))) {
      std::fill(wm.begin() + static_cast<std::ptrdiff_t>(u * slice), wm.begin() + static_cast<std::ptrdiff_t>((u + 1) * slice), 0);
      bm[u] = 0;
    }
  }
  return masks;
}

MaskSet compute_masks(const ModelState& model, const PruneSpec& spec) {
  spec.validate();
  switch (spec.method) {
    case PruneMethod::l1_unstructured: return mask_l1_unstructured(model, spec.conv_rate, spec.output_rate);
    case PruneMethod::global: return mask_global(model, spec.global_rate);
    case PruneMethod::layered_structured: return mask_layered_structured(model, spec.structured_rate);
  }
  throw std::logic_error("unreachable prune method");
}

SparsityReport sparsity_report(const ModelState& model) {
  SparsityReport r;
  for (const auto& p : model.parameters) {
    SparsityGroup g;
    g.name = p.name;
    g.total = p.mask.size();
    g.masked = static_cast<std::size_t>(std::count(p.mask.begin(), p.mask.end(), 0));
    r.masked += g.masked;
    r.total += g.total;
    r.groups.push_back(std::move(g));
  }
  return r;
}

ModelState prune_trained(const ModelState& dense, const PruneSpec& spec, const Dataset& data,
                         const TrainConfig& ft_cfg, TrainLog* log) {
  ModelState m = dense;
  set_masks(m, compute_masks(m, spec));
  m.provenance.pruning = std::string(method_name(spec.method)) + "@post";
  m.provenance.append(std::string("prune:") + method_name(spec.method) + "@post");
  if (spec.fine_tune) m = fine_tune(std::move(m), data, ft_cfg, log);
  return m;
}

ModelState prune_at_init(const ModelState& initial, const PruneSpec& spec, const Dataset& data,
                         const TrainConfig& train_cfg, TrainLog* log) {
  ModelState m = initial;
  set_masks(m, compute_masks(m, spec));
  m.provenance.append(std::string("prune:") + method_name(spec.method) + "@pre");
  m = train_natural(std::move(m), data, train_cfg, log);
  m.provenance.pruning = std::string(method_name(spec.method)) + "@pre";
  return m;
}

PruneWorkflowResult run_prune_workflow(const PruneSpec& spec, const Dataset& data, const TrainConfig& train_cfg,
                                       const TrainConfig& ft_cfg, std::uint64_t seed) {
  spec.validate();
  PruneWorkflowResult r;
  ModelState initial = init_model(ArchitectureDescriptor::reference_cnn(data.classes()), seed);
  if (spec.phase == PrunePhase::pre_train) {
    r.model = prune_at_init(initial, spec, data, train_cfg, &r.log);
  } else {
    ModelState dense = train_natural(std::move(initial), data, train_cfg, &r.log);
    r.model = prune_trained(dense, spec, data, ft_cfg, &r.log);
  }
  return r;
}

}  // namespace salprune
