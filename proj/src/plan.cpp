#include "salprune/plan.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace salprune {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  if (out.size() == 1 && out[0] == "none") out.clear();
  return out;
}

long long to_int(const std::string& v, const std::string& key, int line) {
  long long x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw PlanError("'" + key + "' expects an integer, got '" + v + "'", line);
  }
  return x;
}

double to_real(const std::string& v, const std::string& key, int line) {
  double x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(x)) {
    throw PlanError("'" + key + "' expects a number, got '" + v + "'", line);
  }
  return x;
}

int to_count(const std::string& v, const std::string& key, int line, int min) {
  const long long x = to_int(v, key, line);
  if (x < min || x > 1'000'000'000) {
    throw PlanError("'" + key + "' must be >= " + std::to_string(min) + ", got " + v, line);
  }
  return static_cast<int>(x);
}

std::string fmt_real(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace

std::vector<PruneSpec> ExperimentPlan::default_pruning() {
  std::vector<PruneSpec> out;
  for (PruneMethod m : {PruneMethod::l1_unstructured, PruneMethod::global, PruneMethod::layered_structured}) {
    for (int variant = 0; variant < 3; ++variant) {
      PruneSpec s;
      s.method = m;
      s.phase = variant == 0 ? PrunePhase::pre_train : PrunePhase::post_train;
      s.fine_tune = variant == 2;
      out.push_back(s);
    }
  }
  return out;
}

void ExperimentPlan::validate() const {
  if (seeds.empty()) throw PlanError("at least one seed is required", 0);
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    throw PlanError("seeds must be distinct", 0);
  }
  if (run_id.empty() || run_id.find_first_of("/\\") != std::string::npos || run_id == "." || run_id == "..") {
    throw PlanError("run_id must be a plain directory name", 0);
  }
  if (workers < 1) throw PlanError("workers must be >= 1", 0);
  if (dataset.kind == DatasetSpec::Kind::synthetic) {
    if (dataset.classes < 2 || dataset.classes > kMaxSyntheticClasses) {
      throw PlanError("synthetic classes must be in [2, " + std::to_string(kMaxSyntheticClasses) + "]", 0);
    }
    if (dataset.train_per_class < 1 || dataset.test_per_class < 1) {
      throw PlanError("per-class image counts must be >= 1", 0);
    }
  } else if (dataset.train_labels.empty() || dataset.test_labels.empty()) {
    throw PlanError("folder dataset needs train_labels and test_labels", 0);
  }
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw PlanError(e.what(), 0);
  }
  if (train.epochs < 0 || fine_tune_epochs < 0) throw PlanError("epoch counts must be >= 0", 0);
  for (double eps : adversarial_epsilons)
    if (!(eps >= 0.0)) throw PlanError("pgd_epsilon must be >= 0", 0);
  if (!(eval_pgd_epsilon >= 0.0)) throw PlanError("eval_pgd_epsilon must be >= 0", 0);
  if (pgd_iterations < 1) throw PlanError("pgd_iterations must be >= 1", 0);
  std::set<std::string> tags;
  for (const auto& p : pruning) {
    try {
      p.validate();
    } catch (const std::invalid_argument& e) {
      throw PlanError(e.what(), 0);
    }
    if (!tags.insert(p.tag()).second) throw PlanError("duplicate pruning regime " + p.tag(), 0);
  }
  if (methods.empty()) throw PlanError("at least one attribution method is required", 0);
  if (ig.steps < 1 || sg.samples < 1 || !(sg.sigma >= 0.0)) throw PlanError("invalid attribution settings", 0);
  if (eval_size < 1) throw PlanError("eval_size must be >= 1", 0);
  if (saliency_samples < 0) throw PlanError("saliency_samples must be >= 0", 0);
  try {
    road.validate();
  } catch (const std::invalid_argument& e) {
    throw PlanError(e.what(), 0);
  }
}

ExperimentPlan parse_plan_text(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentPlan plan;
  std::vector<std::string> prune_methods{"l1_unstructured", "global", "layered_structured"};
  std::vector<std::string> prune_phases{"pre", "post", "post_ft"};
  double conv_rate = 0.2, output_rate = 0.1, global_rate = 0.2, structured_rate = 0.1;
  bool have_dataset = false;
  std::string kind = "synthetic";

  using Setter = std::function<void(const std::string&, int)>;
  auto path_of = [&](const std::string& v) {
    std::filesystem::path p(v);
    return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
  };
  const std::map<std::string, Setter> keys = {
      {"dataset.kind",
       [&](const std::string& v, int line) {
         if (v != "synthetic" && v != "folder") throw PlanError("dataset kind must be synthetic or folder", line);
         kind = v;
       }},
      {"dataset.classes", [&](const std::string& v, int l) { plan.dataset.classes = to_count(v, "classes", l, 2); }},
      {"dataset.train_per_class",
       [&](const std::string& v, int l) { plan.dataset.train_per_class = to_count(v, "train_per_class", l, 1); }},
      {"dataset.test_per_class",
       [&](const std::string& v, int l) { plan.dataset.test_per_class = to_count(v, "test_per_class", l, 1); }},
      {"dataset.seed", [&](const std::string& v, int l) { plan.dataset.seed = static_cast<std::uint64_t>(to_count(v, "seed", l, 0)); }},
      {"dataset.train_root", [&](const std::string& v, int) { plan.dataset.train_root = path_of(v); }},
      {"dataset.train_labels", [&](const std::string& v, int) { plan.dataset.train_labels = path_of(v); }},
      {"dataset.test_root", [&](const std::string& v, int) { plan.dataset.test_root = path_of(v); }},
      {"dataset.test_labels", [&](const std::string& v, int) { plan.dataset.test_labels = path_of(v); }},
      {"run.seeds",
       [&](const std::string& v, int l) {
         plan.seeds.clear();
         for (const auto& s : split_list(v)) plan.seeds.push_back(static_cast<std::uint64_t>(to_count(s, "seeds", l, 0)));
         if (plan.seeds.empty()) throw PlanError("seeds list is empty", l);
       }},
      {"run.run_id", [&](const std::string& v, int) { plan.run_id = v; }},
      {"run.output_dir", [&](const std::string& v, int) { plan.output_dir = v; }},
      {"run.workers", [&](const std::string& v, int l) { plan.workers = to_count(v, "workers", l, 1); }},
      {"training.epochs", [&](const std::string& v, int l) { plan.train.epochs = to_count(v, "epochs", l, 0); }},
      {"training.fine_tune_epochs",
       [&](const std::string& v, int l) { plan.fine_tune_epochs = to_count(v, "fine_tune_epochs", l, 0); }},
      {"training.batch_size", [&](const std::string& v, int l) { plan.train.batch_size = to_count(v, "batch_size", l, 1); }},
      {"training.learning_rate", [&](const std::string& v, int l) { plan.train.learning_rate = to_real(v, "learning_rate", l); }},
      {"training.momentum", [&](const std::string& v, int l) { plan.train.momentum = to_real(v, "momentum", l); }},
      {"training.weight_decay", [&](const std::string& v, int l) { plan.train.weight_decay = to_real(v, "weight_decay", l); }},
      {"adversarial.pgd_epsilon",
       [&](const std::string& v, int l) {
         plan.adversarial_epsilons.clear();
         for (const auto& s : split_list(v)) {
           const double eps = to_real(s, "pgd_epsilon", l);
           if (eps < 0.0) throw PlanError("pgd_epsilon must be >= 0, got " + s, l);
           plan.adversarial_epsilons.push_back(eps);
         }
       }},
      {"adversarial.pgd_iterations",
       [&](const std::string& v, int l) { plan.pgd_iterations = to_count(v, "pgd_iterations", l, 1); }},
      {"adversarial.eval_pgd_epsilon",
       [&](const std::string& v, int l) {
         plan.eval_pgd_epsilon = to_real(v, "eval_pgd_epsilon", l);
         if (plan.eval_pgd_epsilon < 0.0) throw PlanError("eval_pgd_epsilon must be >= 0", l);
       }},
      {"pruning.methods",
       [&](const std::string& v, int l) {
         prune_methods = split_list(v);
         for (const auto& m : prune_methods) {
           try {
             parse_prune_method(m);
           } catch (const std::invalid_argument& e) {
             throw PlanError(e.what(), l);
           }
         }
       }},
      {"pruning.phases",
       [&](const std::string& v, int l) {
         prune_phases = split_list(v);
         for (const auto& p : prune_phases)
           if (p != "pre" && p != "post" && p != "post_ft") throw PlanError("unknown pruning phase '" + p + "'", l);
       }},
      {"pruning.conv_rate", [&](const std::string& v, int l) { conv_rate = to_real(v, "conv_rate", l); }},
      {"pruning.output_rate", [&](const std::string& v, int l) { output_rate = to_real(v, "output_rate", l); }},
      {"pruning.global_rate", [&](const std::string& v, int l) { global_rate = to_real(v, "global_rate", l); }},
      {"pruning.structured_rate", [&](const std::string& v, int l) { structured_rate = to_real(v, "structured_rate", l); }},
      {"attribution.methods",
       [&](const std::string& v, int l) {
         plan.methods.clear();
         for (const auto& m : split_list(v)) {
           try {
             plan.methods.push_back(parse_attribution(m));
           } catch (const std::invalid_argument& e) {
             throw PlanError(e.what(), l);
           }
         }
       }},
      {"attribution.ig_steps", [&](const std::string& v, int l) { plan.ig.steps = to_count(v, "ig_steps", l, 1); }},
      {"attribution.sg_samples", [&](const std::string& v, int l) { plan.sg.samples = to_count(v, "sg_samples", l, 1); }},
      {"attribution.sg_sigma",
       [&](const std::string& v, int l) {
         plan.sg.sigma = to_real(v, "sg_sigma", l);
         if (plan.sg.sigma < 0.0) throw PlanError("sg_sigma must be >= 0", l);
       }},
      {"metrics.eval_size", [&](const std::string& v, int l) { plan.eval_size = to_count(v, "eval_size", l, 1); }},
      {"metrics.road_step", [&](const std::string& v, int l) { plan.road.step = to_real(v, "road_step", l); }},
      {"metrics.road_noise", [&](const std::string& v, int l) { plan.road.noise = to_real(v, "road_noise", l); }},
      {"metrics.saliency_samples",
       [&](const std::string& v, int l) { plan.saliency_samples = to_count(v, "saliency_samples", l, 0); }},
  };

  std::istringstream in(text);
  std::string raw, section;
  std::set<std::string> seen;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (s.empty()) continue;
    if (s.front() == '[') {
      if (s.back() != ']') throw PlanError("malformed section header '" + s + "'", line);
      section = trim(s.substr(1, s.size() - 2));
      static const std::set<std::string> sections{"dataset", "run", "training", "adversarial",
                                                  "pruning", "attribution", "metrics"};
      if (!sections.count(section)) throw PlanError("unknown section [" + section + "]", line);
      if (section == "dataset") have_dataset = true;
      continue;
    }
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw PlanError("expected 'key = value', got '" + s + "'", line);
    const std::string key = trim(s.substr(0, eq));
    const std::string value = trim(s.substr(eq + 1));
    if (section.empty()) throw PlanError("key '" + key + "' outside any section", line);
    const std::string full = section + "." + key;
    const auto it = keys.find(full);
    if (it == keys.end()) throw PlanError("unknown key '" + key + "' in [" + section + "]", line);
    if (!seen.insert(full).second) throw PlanError("duplicate key '" + key + "'", line);
    if (value.empty()) throw PlanError("key '" + key + "' has no value", line);
    it->second(value, line);
  }
  if (!have_dataset) throw PlanError("dataset required", 0);

  plan.dataset.kind = kind == "folder" ? DatasetSpec::Kind::folder : DatasetSpec::Kind::synthetic;
  plan.pruning.clear();
  for (const auto& m : prune_methods) {
    for (const auto& ph : prune_phases) {
      PruneSpec p;
      p.method = parse_prune_method(m);
      p.phase = ph == "pre" ? PrunePhase::pre_train : PrunePhase::post_train;
      p.fine_tune = ph == "post_ft";
      p.conv_rate = conv_rate;
      p.output_rate = output_rate;
      p.global_rate = global_rate;
      p.structured_rate = structured_rate;
      plan.pruning.push_back(p);
    }
  }
  plan.validate();
  return plan;
}

ExperimentPlan parse_plan(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PlanError("cannot open config " + path.string(), 0);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_plan_text(ss.str(), path.parent_path());
}

std::string plan_config_text(const ExperimentPlan& p) {
  std::ostringstream o;
  const auto& d = p.dataset;
  const auto list = [&](const auto& items, auto&& fmt) {
    if (items.empty()) return std::string("none");
    std::string s;
    for (std::size_t i = 0; i < items.size(); ++i) s += (i ? ", " : "") + fmt(items[i]);
    return s;
  };
  o << "[dataset]\n";
  if (d.kind == DatasetSpec::Kind::synthetic) {
    o << "kind = synthetic\nclasses = " << d.classes << "\ntrain_per_class = " << d.train_per_class
      << "\ntest_per_class = " << d.test_per_class << "\nseed = " << d.seed << "\n";
  } else {
    o << "kind = folder\ntrain_root = " << d.train_root.generic_string() << "\ntrain_labels = "
      << d.train_labels.generic_string() << "\ntest_root = " << d.test_root.generic_string()
      << "\ntest_labels = " << d.test_labels.generic_string() << "\n";
  }
  o << "\n[run]\nseeds = " << list(p.seeds, [](std::uint64_t s) { return std::to_string(s); })
    << "\nrun_id = " << p.run_id << "\noutput_dir = " << p.output_dir.generic_string() << "\nworkers = " << p.workers
    << "\n";
  o << "\n[training]\nepochs = " << p.train.epochs << "\nfine_tune_epochs = " << p.fine_tune_epochs
    << "\nbatch_size = " << p.train.batch_size << "\nlearning_rate = " << fmt_real(p.train.learning_rate)
    << "\nmomentum = " << fmt_real(p.train.momentum) << "\nweight_decay = " << fmt_real(p.train.weight_decay) << "\n";
  o << "\n[adversarial]\npgd_epsilon = " << list(p.adversarial_epsilons, fmt_real)
    << "\npgd_iterations = " << p.pgd_iterations << "\neval_pgd_epsilon = " << fmt_real(p.eval_pgd_epsilon) << "\n";
  std::vector<std::string> methods, phases;
  for (const auto& spec : p.pruning) {
    const std::string m = method_name(spec.method);
    const std::string ph = spec.phase == PrunePhase::pre_train ? "pre" : spec.fine_tune ? "post_ft" : "post";
    if (std::find(methods.begin(), methods.end(), m) == methods.end()) methods.push_back(m);
    if (std::find(phases.begin(), phases.end(), ph) == phases.end()) phases.push_back(ph);
  }
  const PruneSpec rates = p.pruning.empty() ? PruneSpec{} : p.pruning.front();
  const auto same = [](const std::string& x) { return x; };
  o << "\n[pruning]\nmethods = " << list(methods, same) << "\nphases = " << list(phases, same)
    << "\nconv_rate = " << fmt_real(rates.conv_rate) << "\noutput_rate = " << fmt_real(rates.output_rate)
    << "\nglobal_rate = " << fmt_real(rates.global_rate) << "\nstructured_rate = " << fmt_real(rates.structured_rate)
    << "\n";
  o << "\n[attribution]\nmethods = "
    << list(p.methods, [](AttributionKind k) { return std::string(attribution_name(k)); })
    << "\nig_steps = " << p.ig.steps << "\nsg_samples = " << p.sg.samples << "\nsg_sigma = " << fmt_real(p.sg.sigma)
    << "\n";
  o << "\n[metrics]\neval_size = " << p.eval_size << "\nroad_step = " << fmt_real(p.road.step)
    << "\nroad_noise = " << fmt_real(p.road.noise) << "\nsaliency_samples = " << p.saliency_samples << "\n";
  return o.str();
}

std::string plan_canonical(const ExperimentPlan& p) {
  std::ostringstream o;
  const auto& d = p.dataset;
  o << "dataset.kind=" << (d.kind == DatasetSpec::Kind::synthetic ? "synthetic" : "folder") << "\n";
  if (d.kind == DatasetSpec::Kind::synthetic) {
    o << "dataset.classes=" << d.classes << "\ndataset.train_per_class=" << d.train_per_class
      << "\ndataset.test_per_class=" << d.test_per_class << "\ndataset.seed=" << d.seed << "\n";
  } else {
    o << "dataset.train=" << d.train_root.generic_string() << "|" << d.train_labels.generic_string()
      << "\ndataset.test=" << d.test_root.generic_string() << "|" << d.test_labels.generic_string() << "\n";
  }
  o << "run.seeds=";
  for (std::size_t i = 0; i < p.seeds.size(); ++i) o << (i ? "," : "") << p.seeds[i];
  o << "\nrun.run_id=" << p.run_id << "\n";
  o << "training.epochs=" << p.train.epochs << "\ntraining.fine_tune_epochs=" << p.fine_tune_epochs
    << "\ntraining.batch_size=" << p.train.batch_size << "\ntraining.learning_rate=" << fmt_real(p.train.learning_rate)
    << "\ntraining.momentum=" << fmt_real(p.train.momentum) << "\ntraining.weight_decay=" << fmt_real(p.train.weight_decay)
    << "\n";
  o << "adversarial.pgd_epsilon=";
  for (std::size_t i = 0; i < p.adversarial_epsilons.size(); ++i) o << (i ? "," : "") << fmt_real(p.adversarial_epsilons[i]);
  o << "\nadversarial.pgd_iterations=" << p.pgd_iterations << "\nadversarial.eval_pgd_epsilon="
    << fmt_real(p.eval_pgd_epsilon) << "\n";
  o << "pruning=";
  for (std::size_t i = 0; i < p.pruning.size(); ++i) {
    const auto& s = p.pruning[i];
    o << (i ? "," : "") << s.tag() << ":" << fmt_real(s.conv_rate) << "/" << fmt_real(s.output_rate) << "/"
      << fmt_real(s.global_rate) << "/" << fmt_real(s.structured_rate);
  }
  o << "\nattribution.methods=";
  for (std::size_t i = 0; i < p.methods.size(); ++i) o << (i ? "," : "") << attribution_name(p.methods[i]);
  o << "\nattribution.ig_steps=" << p.ig.steps << "\nattribution.sg_samples=" << p.sg.samples
    << "\nattribution.sg_sigma=" << fmt_real(p.sg.sigma) << "\n";
  o << "metrics.eval_size=" << p.eval_size << "\nmetrics.road_step=" << fmt_real(p.road.step)
    << "\nmetrics.road_noise=" << fmt_real(p.road.noise) << "\nmetrics.saliency_samples=" << p.saliency_samples << "\n";
  return o.str();
}

std::string plan_hash(const ExperimentPlan& plan) {
  const std::string c = plan_canonical(plan);
  const uLong crc = crc32(0L, reinterpret_cast<const Bytef*>(c.data()), static_cast<uInt>(c.size()));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

}  // namespace salprune
