#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "salprune/harness.hpp"

using namespace salprune;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int line_of(const std::string& text) {
  try {
    parse_plan_text(text);
  } catch (const PlanError& e) {
    return e.line();
  }
  return -1;
}

const char* kTiny = R"([dataset]
classes = 2
train_per_class = 6
test_per_class = 3

[run]
seeds = 4

[training]
epochs = 2
fine_tune_epochs = 1
batch_size = 4

[adversarial]
pgd_iterations = 2

[pruning]
methods = global
phases = post

[attribution]
methods = vanilla, smoothgrad
sg_samples = 2

[metrics]
eval_size = 4
road_step = 0.25
saliency_samples = 1
)";

ExperimentPlan tiny_plan(const fs::path& out) {
  ExperimentPlan p = parse_plan_text(kTiny);
  p.output_dir = out;
  return p;
}

}  // namespace

TEST_CASE("plan parsing: required section and defaults") {
  try {
    parse_plan_text("");
    FAIL("expected PlanError");
  } catch (const PlanError& e) {
    CHECK(std::string(e.what()).find("dataset required") != std::string::npos);
  }
  const ExperimentPlan p = parse_plan_text("[dataset]\nkind = synthetic\n");
  CHECK(p.seeds == std::vector<std::uint64_t>{0, 1, 2});
  CHECK(p.dataset.classes == 8);
  CHECK(p.train.epochs == 30);
  CHECK(p.fine_tune_epochs == 50);
  CHECK(p.adversarial_epsilons == std::vector<double>{0.01});
  CHECK(p.pgd_iterations == 40);
  CHECK(p.pruning.size() == 9);
  CHECK(p.methods.size() == 3);
  CHECK(p.ig.steps == 32);
  CHECK(p.sg.samples == 25);
  CHECK(p.sg.sigma == 0.1);
  CHECK(p.eval_size == 200);
  CHECK(p.road.step == 0.05);
  CHECK(p.road.noise == 0.01);
  CHECK(plan_regimes(p).size() == 11);
  CHECK(plan_regimes(p).front().name == "natural");
  CHECK(plan_regimes(p)[1].name == "adversarial");
}

TEST_CASE("plan parsing errors carry the line") {
  CHECK(line_of("[dataset]\n\n[adversarial]\npgd_epsilon = -1\n") == 4);
  CHECK(line_of("[dataset]\nclases = 3\n") == 2);
  CHECK(line_of("[dataset]\nclasses = 3\nclasses = 4\n") == 3);
  CHECK(line_of("[dataset]\nclasses = many\n") == 2);
  CHECK(line_of("[colors]\n") == 1);
  CHECK(line_of("seeds = 1\n[dataset]\n") == 1);
  CHECK(line_of("[dataset]\n[pruning]\nphases = later\n") == 3);
  CHECK(line_of("[dataset]\n[attribution]\nmethods = lime\n") == 3);
  CHECK(line_of("[dataset]\n[run]\nseeds =\n") == 3);
  CHECK(line_of("# comment\n[dataset]  # trailing\nclasses = 3\n") == -1);
  CHECK_THROWS_AS(parse_plan("/nonexistent/plan.cfg"), PlanError);
}

TEST_CASE("plan paths and hash") {
  const ExperimentPlan p = parse_plan_text(
      "[dataset]\nkind = folder\ntrain_root = tr\ntrain_labels = tr.csv\ntest_root = /abs/te\ntest_labels = te.csv\n",
      "/cfg");
  CHECK(p.dataset.train_root == fs::path("/cfg/tr"));
  CHECK(p.dataset.test_root == fs::path("/abs/te"));
  CHECK(parse_plan_text("[dataset]\n[run]\noutput_dir = out\n", "/cfg").output_dir == fs::path("out"));
  const ExperimentPlan a = parse_plan_text("[dataset]\n"), b = parse_plan_text("[dataset]\nclasses = 8\n");
  CHECK(plan_hash(a) == plan_hash(b));
  CHECK(plan_hash(a).size() == 8);
  CHECK(plan_hash(a) != plan_hash(parse_plan_text("[dataset]\nclasses = 7\n")));
}

TEST_CASE("natural-only run writes one row per seed") {
  const fs::path out = fs::temp_directory_path() / "salprune_ut_natural";
  fs::remove_all(out);
  ExperimentPlan p = tiny_plan(out);
  p.adversarial_epsilons.clear();
  p.pruning.clear();
  const RunManifest m = run_matrix(p);
  REQUIRE(m.cells.size() == 1);
  CHECK(m.failures() == 0);
  const std::string csv = slurp(p.run_dir() / "accuracy.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 2);
  CHECK(csv.rfind("seed,regime,accuracy,pgd_accuracy,model_sparsity\n4,natural,", 0) == 0);
  CHECK_THROWS_AS(run_matrix(p), std::runtime_error);
  fs::remove_all(out);
}

TEST_CASE("matrix run: artifacts, determinism and manifest round trip") {
  const fs::path out = fs::temp_directory_path() / "salprune_ut_matrix";
  fs::remove_all(out);
  const ExperimentPlan p = tiny_plan(out);
  const RunManifest m = run_matrix(p);
  REQUIRE(m.cells.size() == 3);
  CHECK(m.failures() == 0);
  CHECK(m.regimes == std::vector<std::string>{"natural", "adversarial", "global_post"});
  const CellResult* pruned = m.cell(4, "global_post");
  REQUIRE(pruned != nullptr);
  CHECK(pruned->model_sparsity > 0.19);
  const MethodResult* sg = pruned->method("smoothgrad");
  REQUIRE(sg != nullptr);
  CHECK(sg->road.fraction.size() == 5);
  CHECK(sg->sparsity_delta.has_value());
  CHECK(fs::exists(p.run_dir() / sg->road_csv));
  CHECK(fs::exists(p.run_dir() / pruned->checkpoint));
  CHECK(m.cell(4, "natural")->method("vanilla")->sparsity_delta == 0.0);

  std::map<std::string, std::string> first;
  for (const auto& f : m.csv_files) first[f] = slurp(p.run_dir() / f);
  CHECK(first.size() >= 3);

  const RunManifest back = read_manifest(p.run_dir() / "manifest.json");
  CHECK(back.config_hash == m.config_hash);
  CHECK(back.cells.size() == m.cells.size());
  CHECK(back.cell(4, "global_post")->method("smoothgrad")->road.accuracy == sg->road.accuracy);
  CHECK(back.cell(4, "adversarial")->pgd_accuracy == m.cell(4, "adversarial")->pgd_accuracy);
  const PgdAudit& audit = back.cell(4, "adversarial")->pgd_audit;
  CHECK(audit.batches == m.cell(4, "adversarial")->pgd_audit.batches);
  CHECK(audit.batches > 1);
  CHECK(audit.out_of_range == 0);
  CHECK(audit.max_excess <= 1e-12);
  CHECK(plan_hash(back.plan) == plan_hash(p));

  const auto reports = render_reports(back);
  CHECK(!reports.empty());
  for (const auto& r : reports) CHECK(fs::file_size(r) > 0);
  CHECK(fs::exists(p.run_dir() / "report" / "report.md"));

  run_matrix(p, true);
  for (const auto& [f, text] : first) CHECK_MESSAGE(slurp(p.run_dir() / f) == text, f);
  fs::remove_all(out);
}

TEST_CASE("plan config text parses back to the same plan") {
  const ExperimentPlan a = parse_plan_text(kTiny);
  CHECK(plan_hash(parse_plan_text(plan_config_text(a))) == plan_hash(a));
  const ExperimentPlan d = parse_plan(fs::path(SALPRUNE_SOURCE_DIR) / "configs" / "desk.cfg");
  CHECK(plan_config_text(parse_plan_text(plan_config_text(d))) == plan_config_text(d));
  const ExperimentPlan n = parse_plan_text("[dataset]\n[adversarial]\npgd_epsilon = none\n[pruning]\nmethods = none\n");
  CHECK(n.adversarial_epsilons.empty());
  CHECK(n.pruning.empty());
  CHECK(plan_regimes(n).size() == 1);
  CHECK(parse_plan_text(plan_config_text(n)).pruning.empty());
}
