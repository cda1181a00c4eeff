#include "salprune/harness.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <sstream>
#include <thread>

#include "salprune/checkpoint.hpp"
#include "salprune/image_io.hpp"
#include "salprune/pruning.hpp"
#include "salprune/training.hpp"

namespace salprune {
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string fixed(double x, int digits = 6) {
  if (!std::isfinite(x)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

std::string eps_name(double eps) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", eps);
  return buf;
}

std::string seed_dir(std::uint64_t seed) { return "seed" + std::to_string(seed); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainConfig cell_train_config(const ExperimentPlan& plan, std::uint64_t seed) {
  TrainConfig cfg = plan.train;
  cfg.seed = seed;
  return cfg;
}

TrainConfig cell_ft_config(const ExperimentPlan& plan, std::uint64_t seed) {
  TrainConfig cfg = fine_tune_config(cell_train_config(plan, seed));
  cfg.epochs = plan.fine_tune_epochs;
  return cfg;
}

PgdConfig pgd_config(const ExperimentPlan& plan, double eps) {
  PgdConfig cfg = PgdConfig::for_epsilon(eps);
  cfg.iterations = plan.pgd_iterations;
  return cfg;
}

MethodConfig method_config(const ExperimentPlan& plan, AttributionKind kind, std::uint64_t seed) {
  MethodConfig m;
  m.kind = kind;
  m.ig = plan.ig;
  m.sg = plan.sg;
  m.sg.seed = seed;
  return m;
}

struct SeedContext {
  const ExperimentPlan& plan;
  const DataSplits& data;
  const std::vector<Regime>& regimes;
  fs::path run_dir;
  std::uint64_t seed;
  bool export_saliency;
};

ModelState train_regime(const SeedContext& ctx, const Regime& r, const ModelState* natural, PgdAudit& audit) {
  const ArchitectureDescriptor desc = ArchitectureDescriptor::reference_cnn(ctx.data.train.classes());
  const TrainConfig cfg = cell_train_config(ctx.plan, ctx.seed);
  switch (r.kind) {
    case RegimeKind::natural:
      return train_natural(init_model(desc, ctx.seed), ctx.data.train, cfg);
    case RegimeKind::adversarial: {
      TrainLog log;
      ModelState m = train_adversarial(init_model(desc, ctx.seed), ctx.data.train, cfg, pgd_config(ctx.plan, r.epsilon), &log);
      audit.merge(log.pgd);
      return m;
    }
    case RegimeKind::pruned:
      if (r.prune.phase == PrunePhase::pre_train) {
        return prune_at_init(init_model(desc, ctx.seed), r.prune, ctx.data.train, cfg);
      }
      if (!natural) throw std::runtime_error("natural model of seed " + std::to_string(ctx.seed) + " unavailable");
      return prune_trained(*natural, r.prune, ctx.data.train, cell_ft_config(ctx.plan, ctx.seed));
  }
  throw std::logic_error("unreachable regime kind");
}

void evaluate_cell(const SeedContext& ctx, const Regime& r, const ModelState& model, CellResult& cell) {
  const Dataset& test = ctx.data.test;
  cell.accuracy = accuracy(model, test.images, test.labels);
  cell.pgd_accuracy =
      pgd_accuracy(model, test, pgd_config(ctx.plan, ctx.plan.eval_pgd_epsilon), ctx.seed, 50, &cell.pgd_audit);
  cell.model_sparsity = sparsity_report(model).overall();

  const NetworkScore score(model);
  const fs::path rel_cell = fs::path(seed_dir(ctx.seed)) / r.name;
  bool have_norms = false;
  for (AttributionKind kind : ctx.plan.methods) {
    MethodResult m;
    m.method = attribution_name(kind);
    const auto attrs = explain_dataset(score, test, method_config(ctx.plan, kind, ctx.seed));
    try {
      const GiniSummary g = mean_gini(attrs);
      m.mean_gini = g.mean;
      m.gini_skipped = g.skipped;
      if (g.skipped) spdlog::warn("{} seed {} {}: {} all-zero attributions skipped", r.name, ctx.seed, m.method, g.skipped);
    } catch (const DegenerateAttributionError&) {
      m.gini_skipped = static_cast<int>(attrs.size());
      spdlog::warn("{} seed {} {}: every attribution is all-zero", r.name, ctx.seed, m.method);
    }
    if (kind == AttributionKind::vanilla) {
      cell.grad_norm = gradient_norm_stats(attrs);
      have_norms = true;
    }
    m.road = road_curve(score, test, attrs, ctx.plan.road, ctx.seed);
    m.road.regime = r.name;
    m.road.method = m.method;
    m.road_auc = road_auc(m.road);
    m.road_csv = (rel_cell / ("road_" + m.method + ".csv")).generic_string();
    write_file_atomic(ctx.run_dir / m.road_csv, road_csv_text(m.road));

    if (ctx.export_saliency) {
      const int n = std::min<int>(ctx.plan.saliency_samples, static_cast<int>(attrs.size()));
      for (int i = 0; i < n; ++i) {
        const fs::path rel = fs::path(r.name) / m.method / (std::to_string(i) + ".pgm");
        write_saliency_pgm(to_saliency(attrs[static_cast<std::size_t>(i)]), ctx.run_dir / rel);
        m.saliency_files.push_back(rel.generic_string());
      }
    }
    cell.methods.push_back(std::move(m));
  }
  if (!have_norms) cell.grad_norm = gradient_norm_stats(score, test);
}

void run_seed(const SeedContext& ctx, std::vector<CellResult*> cells) {
  std::optional<ModelState> natural;
  for (std::size_t i = 0; i < ctx.regimes.size(); ++i) {
    const Regime& r = ctx.regimes[i];
    CellResult& cell = *cells[i];
    const auto t0 = std::chrono::steady_clock::now();
    spdlog::info("seed {} {}: start", ctx.seed, r.name);
    try {
      ModelState model = train_regime(ctx, r, natural ? &*natural : nullptr, cell.pgd_audit);
      cell.checkpoint = (fs::path(seed_dir(ctx.seed)) / r.name / "model.psck").generic_string();
      fs::create_directories((ctx.run_dir / cell.checkpoint).parent_path());
      save_checkpoint(model, ctx.run_dir / cell.checkpoint);
      evaluate_cell(ctx, r, model, cell);
      cell.ok = true;
      if (r.kind == RegimeKind::natural) natural = std::move(model);
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.failure = e.what();
      cell.methods.clear();
      spdlog::error("seed {} {}: {}", ctx.seed, r.name, e.what());
    }
    cell.seconds = seconds_since(t0);
    spdlog::info("seed {} {}: {} in {:.1f} s (accuracy {:.4f})", ctx.seed, r.name, cell.ok ? "done" : "failed",
                 cell.seconds, cell.accuracy);
  }
  const CellResult* nat = nullptr;
  for (CellResult* c : cells)
    if (c->regime == "natural" && c->ok) nat = c;
  for (CellResult* c : cells) {
    if (!c->ok || !nat) continue;
    for (MethodResult& m : c->methods) {
      const MethodResult* ref = nat->method(m.method);
      if (ref && ref->mean_gini && m.mean_gini) m.sparsity_delta = *m.mean_gini - *ref->mean_gini;
    }
  }
}

std::string optional_cell(const std::optional<double>& v) { return v ? fixed(*v) : "nan"; }

void write_results_csv(const RunManifest& m) {
  std::ostringstream acc, attr, norms;
  acc << "seed,regime,accuracy,pgd_accuracy,model_sparsity\n";
  attr << "seed,regime,method,mean_gini,gini_skipped,sparsity_delta,road_auc\n";
  norms << "seed,regime,grad_norm_mean,grad_norm_std,count\n";
  for (const auto& c : m.cells) {
    if (!c.ok) continue;
    acc << c.seed << "," << c.regime << "," << fixed(c.accuracy) << "," << fixed(c.pgd_accuracy) << ","
        << fixed(c.model_sparsity) << "\n";
    for (const auto& r : c.methods) {
      attr << c.seed << "," << c.regime << "," << r.method << "," << optional_cell(r.mean_gini) << ","
           << r.gini_skipped << "," << optional_cell(r.sparsity_delta) << "," << fixed(r.road_auc) << "\n";
    }
    norms << c.seed << "," << c.regime << "," << fixed(c.grad_norm.mean, 9) << "," << fixed(c.grad_norm.stddev, 9)
          << "," << c.grad_norm.count << "\n";
  }
  write_file_atomic(m.run_dir / "accuracy.csv", acc.str());
  write_file_atomic(m.run_dir / "attribution_metrics.csv", attr.str());
  write_file_atomic(m.run_dir / "gradient_norms.csv", norms.str());
}

json curve_json(const RoadCurve& c) { return {{"fraction", c.fraction}, {"accuracy", c.accuracy}}; }

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

const MethodResult* CellResult::method(const std::string& name) const {
  for (const auto& m : methods)
    if (m.method == name) return &m;
  return nullptr;
}

const CellResult* RunManifest::cell(std::uint64_t seed, const std::string& regime) const {
  for (const auto& c : cells)
    if (c.seed == seed && c.regime == regime) return &c;
  return nullptr;
}

int RunManifest::failures() const {
  return static_cast<int>(std::count_if(cells.begin(), cells.end(), [](const CellResult& c) { return !c.ok; }));
}

std::vector<Regime> plan_regimes(const ExperimentPlan& plan) {
  std::vector<Regime> out;
  out.push_back({RegimeKind::natural, "natural", 0.0, {}});
  for (double eps : plan.adversarial_epsilons) {
    const std::string name = plan.adversarial_epsilons.size() == 1 ? "adversarial" : "adversarial_" + eps_name(eps);
    out.push_back({RegimeKind::adversarial, name, eps, {}});
  }
  for (const auto& p : plan.pruning) out.push_back({RegimeKind::pruned, p.tag(), 0.0, p});
  return out;
}

DataSplits load_plan_data(const ExperimentPlan& plan) {
  DataSplits d;
  const DatasetSpec& s = plan.dataset;
  if (s.kind == DatasetSpec::Kind::synthetic) {
    d.train = generate_synthetic(s.classes, s.train_per_class, s.seed, Split::train);
    d.test = generate_synthetic(s.classes, s.test_per_class, s.seed, Split::test);
  } else {
    auto root = [](const fs::path& r, const fs::path& labels) { return r.empty() ? labels.parent_path() : r; };
    d.train = load_image_folder(root(s.train_root, s.train_labels), s.train_labels, Split::train);
    d.test = load_image_folder(root(s.test_root, s.test_labels), s.test_labels, Split::test);
    if (d.train.classes() != d.test.classes()) {
      throw DataError("train and test folders disagree on the class count");
    }
  }
  d.test = d.test.head(plan.eval_size);
  return d;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string road_csv_text(const RoadCurve& curve) {
  std::ostringstream o;
  o << "fraction_removed,accuracy\n";
  for (std::size_t i = 0; i < curve.fraction.size(); ++i) o << fixed(curve.fraction[i], 4) << "," << fixed(curve.accuracy[i]) << "\n";
  return o.str();
}

void write_saliency_pgm(const SaliencyMap& map, const fs::path& path) {
  const Tensor& v = map.values;
  Image8 img;
  img.height = v.dim(0);
  img.width = v.dim(1);
  img.channels = 1;
  double peak = 0.0;
  for (double x : v.data()) peak = std::max(peak, x);
  img.pixels.resize(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    img.pixels[i] = peak > 0.0 ? static_cast<std::uint8_t>(std::lround(255.0 * v[i] / peak)) : 0;
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_pnm(path, img);
}

RunManifest run_matrix(const ExperimentPlan& plan, bool overwrite) {
  plan.validate();
  const auto t0 = std::chrono::steady_clock::now();
  RunManifest m;
  m.plan = plan;
  m.config_hash = plan_hash(plan);
  m.run_dir = plan.run_dir();
  const fs::path manifest_path = m.run_dir / "manifest.json";
  if (fs::exists(manifest_path)) {
    if (!overwrite) throw std::runtime_error("run '" + plan.run_id + "' already exists in " + plan.output_dir.string());
    fs::remove(manifest_path);
  }
  fs::create_directories(m.run_dir);

  const std::vector<Regime> regimes = plan_regimes(plan);
  for (const auto& r : regimes) m.regimes.push_back(r.name);
  for (AttributionKind k : plan.methods) m.methods.push_back(attribution_name(k));
  for (std::uint64_t seed : plan.seeds) {
    for (const auto& r : regimes) {
      CellResult c;
      c.seed = seed;
      c.regime = r.name;
      m.cells.push_back(std::move(c));
    }
  }

  const DataSplits data = load_plan_data(plan);
  spdlog::info("run {}: {} train / {} test images, {} seeds x {} regimes", plan.run_id, data.train.size(),
               data.test.size(), plan.seeds.size(), regimes.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t s; (s = next.fetch_add(1)) < plan.seeds.size();) {
      std::vector<CellResult*> cells;
      for (std::size_t r = 0; r < regimes.size(); ++r) cells.push_back(&m.cells[s * regimes.size() + r]);
      run_seed({plan, data, regimes, m.run_dir, plan.seeds[s], s == 0}, cells);
    }
  };
  const int n = std::min<int>(plan.workers, static_cast<int>(plan.seeds.size()));
  if (n <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < n; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  write_results_csv(m);
  m.csv_files = {"accuracy.csv", "attribution_metrics.csv", "gradient_norms.csv"};
  for (const auto& c : m.cells)
    for (const auto& r : c.methods) m.csv_files.push_back(r.road_csv);
  m.seconds = seconds_since(t0);
  write_manifest(m, manifest_path);
  return m;
}

void write_manifest(const RunManifest& m, const fs::path& path) {
  json j;
  j["tool_version"] = m.tool_version;
  j["config_hash"] = m.config_hash;
  j["run_id"] = m.plan.run_id;
  j["plan"] = plan_config_text(m.plan);
  j["seeds"] = m.plan.seeds;
  j["regimes"] = m.regimes;
  j["methods"] = m.methods;
  j["csv_files"] = m.csv_files;
  j["seconds"] = m.seconds;
  json cells = json::array();
  for (const auto& c : m.cells) {
    json jc;
    jc["seed"] = c.seed;
    jc["regime"] = c.regime;
    jc["ok"] = c.ok;
    if (!c.ok) {
      jc["failure"] = c.failure;
    } else {
      jc["checkpoint"] = c.checkpoint;
      jc["accuracy"] = c.accuracy;
      jc["pgd_accuracy"] = c.pgd_accuracy;
      jc["model_sparsity"] = c.model_sparsity;
      jc["pgd_audit"] = {{"batches", c.pgd_audit.batches},
                         {"max_linf", c.pgd_audit.max_linf},
                         {"max_excess", c.pgd_audit.max_excess},
                         {"out_of_range", c.pgd_audit.out_of_range}};
      jc["grad_norm"] = {{"mean", c.grad_norm.mean}, {"stddev", c.grad_norm.stddev}, {"count", c.grad_norm.count}};
      json ms = json::array();
      for (const auto& r : c.methods) {
        ms.push_back({{"method", r.method},
                      {"mean_gini", opt_json(r.mean_gini)},
                      {"gini_skipped", r.gini_skipped},
                      {"sparsity_delta", opt_json(r.sparsity_delta)},
                      {"road_auc", r.road_auc},
                      {"road_csv", r.road_csv},
                      {"road", curve_json(r.road)},
                      {"saliency", r.saliency_files}});
      }
      jc["methods"] = ms;
    }
    jc["seconds"] = c.seconds;
    cells.push_back(jc);
  }
  j["cells"] = cells;
  write_file_atomic(path, j.dump(2) + "\n");
}

RunManifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest " + path.string() + " is not valid JSON: " + e.what());
  }
  RunManifest m;
  try {
    m.run_dir = path.parent_path();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.plan = parse_plan_text(j.at("plan").get<std::string>());
    m.regimes = j.at("regimes").get<std::vector<std::string>>();
    m.methods = j.at("methods").get<std::vector<std::string>>();
    m.csv_files = j.at("csv_files").get<std::vector<std::string>>();
    m.seconds = j.value("seconds", 0.0);
    for (const auto& jc : j.at("cells")) {
      CellResult c;
      c.seed = jc.at("seed").get<std::uint64_t>();
      c.regime = jc.at("regime").get<std::string>();
      c.ok = jc.at("ok").get<bool>();
      c.seconds = jc.value("seconds", 0.0);
      if (!c.ok) {
        c.failure = jc.value("failure", std::string());
      } else {
        c.checkpoint = jc.at("checkpoint").get<std::string>();
        c.accuracy = jc.at("accuracy").get<double>();
        c.pgd_accuracy = jc.at("pgd_accuracy").get<double>();
        c.model_sparsity = jc.at("model_sparsity").get<double>();
        const auto& a = jc.at("pgd_audit");
        c.pgd_audit = {a.at("batches").get<std::size_t>(), a.at("max_linf").get<double>(),
                       a.at("max_excess").get<double>(), a.at("out_of_range").get<std::size_t>()};
        const auto& g = jc.at("grad_norm");
        c.grad_norm = {g.at("mean").get<double>(), g.at("stddev").get<double>(), g.at("count").get<int>()};
        for (const auto& jm : jc.at("methods")) {
          MethodResult r;
          r.method = jm.at("method").get<std::string>();
          r.mean_gini = opt_from(jm.at("mean_gini"));
          r.gini_skipped = jm.at("gini_skipped").get<int>();
          r.sparsity_delta = opt_from(jm.at("sparsity_delta"));
          r.road_auc = jm.at("road_auc").get<double>();
          r.road_csv = jm.at("road_csv").get<std::string>();
          r.road.fraction = jm.at("road").at("fraction").get<std::vector<double>>();
          r.road.accuracy = jm.at("road").at("accuracy").get<std::vector<double>>();
          r.road.regime = c.regime;
          r.road.method = r.method;
          r.saliency_files = jm.at("saliency").get<std::vector<std::string>>();
          c.methods.push_back(std::move(r));
        }
      }
      m.cells.push_back(std::move(c));
    }
  } catch (const json::exception& e) {
    throw std::runtime_error("manifest " + path.string() + " is incomplete: " + e.what());
  } catch (const PlanError& e) {
    throw std::runtime_error("manifest " + path.string() + " holds an invalid plan: " + e.what());
  }
  return m;
}

}  // namespace salprune
