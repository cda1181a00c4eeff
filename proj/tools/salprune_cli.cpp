#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "salprune/checkpoint.hpp"
#include "salprune/harness.hpp"
#include "salprune/plan.hpp"
#include "salprune/pruning.hpp"
#include "salprune/training.hpp"

namespace fs = std::filesystem;
using namespace salprune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 1;
constexpr int kExitCellFailures = 2;

struct Common {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 0;
};

void setup_logging() {
  spdlog::set_default_logger(spdlog::stderr_color_mt("salprune"));
  spdlog::set_pattern("[%H:%M:%S] %^%l%$ %v");
  const char* env = std::getenv("SALPRUNE_LOG");
  spdlog::set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
}

ExperimentPlan load_plan(const Common& c) {
  if (c.config.empty()) throw PlanError("--config is required", 0);
  ExperimentPlan plan = parse_plan(c.config);
  if (c.workers > 0) plan.workers = c.workers;
  if (c.seed_set) plan.seeds = {c.seed};
  return plan;
}

std::uint64_t model_seed(const Common& c, const ExperimentPlan& plan) { return c.seed_set ? c.seed : plan.seeds.front(); }

std::string fixed(double x, int d = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", d, x);
  return buf;
}

int cmd_gen_data(const Common& c) {
  const ExperimentPlan plan = load_plan(c);
  if (c.out.empty()) throw PlanError("--out is required", 0);
  const DataSplits d = load_plan_data(plan);
  export_image_folder(d.train, fs::path(c.out) / "train");
  export_image_folder(d.test, fs::path(c.out) / "test");
  std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test images to " << c.out << "\n";
  return kExitOk;
}

int cmd_train(const Common& c, const std::string& regime, double epsilon) {
  const ExperimentPlan plan = load_plan(c);
  if (c.out.empty()) throw PlanError("--out is required", 0);
  const std::uint64_t seed = model_seed(c, plan);
  const DataSplits d = load_plan_data(plan);
  TrainConfig cfg = plan.train;
  cfg.seed = seed;
  ModelState m = init_model(ArchitectureDescriptor::reference_cnn(d.train.classes()), seed);
  if (regime == "natural") {
    m = train_natural(std::move(m), d.train, cfg);
  } else if (regime == "adversarial") {
    PgdConfig pgd = PgdConfig::for_epsilon(epsilon);
    pgd.iterations = plan.pgd_iterations;
    m = train_adversarial(std::move(m), d.train, cfg, pgd);
  } else {
    throw PlanError("--regime must be natural or adversarial", 0);
  }
  save_checkpoint(m, c.out);
  std::cout << "test accuracy " << fixed(accuracy(m, d.test.images, d.test.labels), 4) << ", saved " << c.out << "\n";
  return kExitOk;
}

int cmd_prune(const Common& c, const std::string& model_path, const std::string& method, const std::string& phase,
              bool ft) {
  const ExperimentPlan plan = load_plan(c);
  if (c.out.empty()) throw PlanError("--out is required", 0);
  PruneSpec spec;
  try {
    spec.method = parse_prune_method(method);
  } catch (const std::invalid_argument& e) {
    throw PlanError(e.what(), 0);
  }
  if (phase != "pre" && phase != "post") throw PlanError("--phase must be pre or post", 0);
  spec.phase = phase == "pre" ? PrunePhase::pre_train : PrunePhase::post_train;
  spec.fine_tune = ft;
  for (const auto& p : plan.pruning)
    if (p.method == spec.method) {
      spec.conv_rate = p.conv_rate;
      spec.output_rate = p.output_rate;
      spec.global_rate = p.global_rate;
      spec.structured_rate = p.structured_rate;
    }
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw PlanError(e.what(), 0);
  }
  const std::uint64_t seed = model_seed(c, plan);
  const DataSplits d = load_plan_data(plan);
  TrainConfig cfg = plan.train;
  cfg.seed = seed;
  ModelState m;
  if (spec.phase == PrunePhase::pre_train) {
    m = prune_at_init(init_model(ArchitectureDescriptor::reference_cnn(d.train.classes()), seed), spec, d.train, cfg);
  } else {
    if (model_path.empty()) throw PlanError("post-train pruning needs --model", 0);
    TrainConfig ft_cfg = fine_tune_config(cfg);
    ft_cfg.epochs = plan.fine_tune_epochs;
    m = prune_trained(load_checkpoint(model_path), spec, d.train, ft_cfg);
  }
  save_checkpoint(m, c.out);
  std::cout << spec.tag() << ": sparsity " << fixed(sparsity_report(m).overall(), 4) << ", test accuracy "
            << fixed(accuracy(m, d.test.images, d.test.labels), 4) << ", saved " << c.out << "\n";
  return kExitOk;
}

int cmd_explain(const Common& c, const std::string& model_path, const std::string& method, int samples) {
  const ExperimentPlan plan = load_plan(c);
  if (c.out.empty()) throw PlanError("--out is required", 0);
  if (model_path.empty()) throw PlanError("--model is required", 0);
  const ModelState model = load_checkpoint(model_path);
  Dataset test = load_plan_data(plan).test;
  if (samples > 0) test = test.head(samples);
  MethodConfig mc;
  try {
    mc.kind = parse_attribution(method);
  } catch (const std::invalid_argument& e) {
    throw PlanError(e.what(), 0);
  }
  mc.ig = plan.ig;
  mc.sg = plan.sg;
  mc.sg.seed = model_seed(c, plan);
  const NetworkScore score(model);
  const auto attrs = explain_dataset(score, test, mc);
  std::ostringstream csv;
  csv << "sample,label,target_class,gini\n";
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    write_saliency_pgm(to_saliency(attrs[i]), fs::path(c.out) / (std::to_string(i) + ".pgm"));
    std::string g = "nan";
    try {
      g = fixed(gini(attrs[i]));
    } catch (const DegenerateAttributionError&) {
    }
    csv << i << "," << test.labels[i] << "," << attrs[i].target_class << "," << g << "\n";
  }
  write_file_atomic(fs::path(c.out) / "gini.csv", csv.str());
  std::cout << "wrote " << attrs.size() << " " << attribution_name(mc.kind) << " maps to " << c.out << "\n";
  return kExitOk;
}

int cmd_evaluate(const Common& c, const std::string& model_path) {
  const ExperimentPlan plan = load_plan(c);
  if (model_path.empty()) throw PlanError("--model is required", 0);
  const ModelState model = load_checkpoint(model_path);
  const Dataset test = load_plan_data(plan).test;
  const std::uint64_t seed = model_seed(c, plan);
  PgdConfig pgd = PgdConfig::for_epsilon(plan.eval_pgd_epsilon);
  pgd.iterations = plan.pgd_iterations;
  const NetworkScore score(model);
  std::ostringstream o;
  o << "metric,method,value\n";
  o << "accuracy,," << fixed(accuracy(model, test.images, test.labels)) << "\n";
  o << "pgd_accuracy,," << fixed(pgd_accuracy(model, test, pgd, seed)) << "\n";
  o << "model_sparsity,," << fixed(sparsity_report(model).overall()) << "\n";
  const GradientNormStats g = gradient_norm_stats(score, test);
  o << "grad_norm_mean,," << fixed(g.mean, 9) << "\ngrad_norm_std,," << fixed(g.stddev, 9) << "\n";
  for (AttributionKind k : plan.methods) {
    MethodConfig mc;
    mc.kind = k;
    mc.ig = plan.ig;
    mc.sg = plan.sg;
    mc.sg.seed = seed;
    const auto attrs = explain_dataset(score, test, mc);
    try {
      o << "mean_gini," << attribution_name(k) << "," << fixed(mean_gini(attrs).mean) << "\n";
    } catch (const DegenerateAttributionError&) {
      o << "mean_gini," << attribution_name(k) << ",nan\n";
    }
    const RoadCurve curve = road_curve(score, test, attrs, plan.road, seed);
    o << "road_auc," << attribution_name(k) << "," << fixed(road_auc(curve)) << "\n";
  }
  if (!c.out.empty()) write_file_atomic(c.out, o.str());
  std::cout << o.str();
  return kExitOk;
}

int cmd_run(const Common& c, bool overwrite, bool report) {
  ExperimentPlan plan = load_plan(c);
  if (!c.out.empty()) plan.output_dir = c.out;
  const RunManifest m = run_matrix(plan, overwrite);
  if (report) render_reports(m);
  std::cout << "run " << plan.run_id << ": " << m.cells.size() - static_cast<std::size_t>(m.failures()) << "/"
            << m.cells.size() << " cells completed in " << fixed(m.seconds, 1) << " s, manifest "
            << (m.run_dir / "manifest.json").string() << "\n";
  return m.failures() ? kExitCellFailures : kExitOk;
}

int cmd_report(const Common& c, const std::string& manifest) {
  fs::path path = manifest;
  if (path.empty()) {
    if (c.out.empty()) throw PlanError("--manifest or --out <run dir> is required", 0);
    path = fs::path(c.out) / "manifest.json";
  }
  const RunManifest m = read_manifest(path);
  const auto files = render_reports(m);
  std::cout << "wrote " << files.size() << " report files to " << (m.run_dir / "report").string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Saliency sparsity and faithfulness under pruning, adversarial and natural training"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool seed, bool workers) {
    sub->add_option("--config", common.config, "Experiment plan file");
    sub->add_option("--out", common.out, "Output path");
    if (seed) sub->add_option("--seed", common.seed, "Model seed")->each([&](const std::string&) { common.seed_set = true; });
    if (workers) sub->add_option("--workers", common.workers, "Parallel seed workers")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("gen-data", "Export the plan's dataset as image folders");
  add_common(gen, false, false);

  std::string regime = "natural";
  double epsilon = 0.01;
  auto* train = app.add_subcommand("train", "Train one model and save a checkpoint");
  add_common(train, true, false);
  train->add_option("--regime", regime, "natural or adversarial");
  train->add_option("--epsilon", epsilon, "PGD radius for adversarial training")->check(CLI::NonNegativeNumber);

  std::string model_path, method = "global", phase = "post";
  bool ft = false;
  auto* prune = app.add_subcommand("prune", "One-shot pruning of a trained or freshly initialized model");
  add_common(prune, true, false);
  prune->add_option("--model", model_path, "Trained checkpoint (post-train pruning)");
  prune->add_option("--method", method, "l1_unstructured, global or layered_structured");
  prune->add_option("--phase", phase, "pre or post");
  prune->add_flag("--fine-tune", ft, "Fine-tune with masks fixed after post-train pruning");

  std::string attr_method = "vanilla";
  int samples = 0;
  auto* explain = app.add_subcommand("explain", "Write saliency maps and Gini scores for the evaluation set");
  add_common(explain, true, false);
  explain->add_option("--model", model_path, "Checkpoint")->required();
  explain->add_option("--method", attr_method, "vanilla, integrated_gradients or smoothgrad");
  explain->add_option("--samples", samples, "Limit to the first n evaluation images");

  auto* evaluate = app.add_subcommand("evaluate", "Accuracy, PGD accuracy, Gini, ROAD AUC and gradient norms");
  add_common(evaluate, true, false);
  evaluate->add_option("--model", model_path, "Checkpoint")->required();

  bool overwrite = false, no_report = false;
  auto* run = app.add_subcommand("run", "Run the full experiment matrix");
  add_common(run, true, true);
  run->add_flag("--overwrite", overwrite, "Replace an existing run with the same run_id");
  run->add_flag("--no-report", no_report, "Skip report rendering");

  std::string manifest;
  auto* report = app.add_subcommand("report", "Render tables, plots and saliency grids from a manifest");
  add_common(report, false, false);
  report->add_option("--manifest", manifest, "manifest.json of a run");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitInvalid;
  }
  setup_logging();

  try {
    if (*gen) return cmd_gen_data(common);
    if (*train) return cmd_train(common, regime, epsilon);
    if (*prune) return cmd_prune(common, model_path, method, phase, ft);
    if (*explain) return cmd_explain(common, model_path, attr_method, samples);
    if (*evaluate) return cmd_evaluate(common, model_path);
    if (*run) return cmd_run(common, overwrite, !no_report);
    if (*report) return cmd_report(common, manifest);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitInvalid;
  }
  return kExitInvalid;
}
