// Command-line front end: decompose, build, predict, ensemble, curves, generate.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bvf/bvf.hpp"

namespace fs = std::filesystem;

namespace {

struct GlobalFlags {
  std::optional<std::uint64_t> seed;
  std::optional<int> folds;
  std::optional<int> repeats;
  std::optional<std::string> out;
  std::optional<int> jobs;
  bool force = false;
};

struct PlanFlags {
  std::string plan_path;
  std::vector<std::string> data;
  std::string label_column = "label";
  std::vector<std::string> learners;
  std::string grid;
  std::string ensemble;
};

void add_plan_flags(CLI::App* cmd, PlanFlags& f) {
  cmd->add_option("--plan", f.plan_path, "Experiment plan (JSON)");
  cmd->add_option("--data", f.data, "CSV dataset path (repeatable)");
  cmd->add_option("--label-column", f.label_column, "Label column name for --data files");
  cmd->add_option("--learner", f.learners, "Learner spec, e.g. knn:k=3 (repeatable)");
  cmd->add_option("--grid", f.grid, "Prefix sizes, first:last:step or a comma list");
}

/// Plan file first, then command-line overrides.
bvf::ExperimentPlan make_plan(const PlanFlags& f, const GlobalFlags& g) {
  bvf::ExperimentPlan plan;
  if (!f.plan_path.empty()) plan = bvf::load_plan(f.plan_path);
  if (!f.data.empty()) {
    plan.datasets.clear();
    for (const auto& path : f.data) plan.datasets.emplace_back(bvf::CsvSource{path, f.label_column, {}});
  }
  if (!f.learners.empty()) plan.learners = f.learners;
  if (!f.grid.empty()) plan.n_grid = bvf::parse_grid(f.grid);
  if (!f.ensemble.empty()) plan.ensemble = f.ensemble;
  if (g.seed) plan.sscv.seed = *g.seed;
  if (g.folds) plan.sscv.folds = *g.folds;
  if (g.repeats) plan.sscv.repeats = *g.repeats;
  if (g.out) plan.output_dir = *g.out;
  if (g.jobs) plan.parallelism = *g.jobs;
  return plan;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw bvf::InputError("cannot write '" + path.string() + "'");
  out << text;
}

std::string report_json(const std::vector<bvf::Forecast>& forecasts) {
  nlohmann::ordered_json j;
  auto all = nlohmann::ordered_json::array();
  for (const auto& f : forecasts) all.push_back(bvf::to_json(f));
  j["forecasts"] = std::move(all);
  // Evaluation is done per grid size, matching one registry model per n.
  std::map<std::size_t, std::vector<bvf::Forecast>> by_n;
  for (const auto& f : forecasts)
    if (f.observed_final) by_n[f.n_used].push_back(f);
  auto evals = nlohmann::ordered_json::array();
  for (const auto& [n, group] : by_n) {
    if (group.size() < 2) continue;
    auto e = bvf::to_json(bvf::evaluate(group));
    evals.push_back({{"n", n}, {"summaries", e["summaries"]}});
  }
  j["evaluation"] = std::move(evals);
  return j.dump(2) + "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early bias/variance estimation and forecasting of classifier error"};
  app.require_subcommand(1);
  GlobalFlags g;
  app.add_option("--seed", g.seed, "Plan seed")->group("Global");
  app.add_option("--folds", g.folds, "SSCV folds N (default 10)")->group("Global");
  app.add_option("--repeats", g.repeats, "SSCV repeats l (default 10)")->group("Global");
  app.add_option("--out", g.out, "Output directory (or file for curves)")->group("Global");
  app.add_option("--jobs", g.jobs, "Worker threads")->group("Global");
  app.add_flag("--force", g.force, "Recompute cells that already have records")->group("Global");
  app.fallthrough();

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic dataset as CSV");
  bvf::SyntheticSpec spec;
  std::string generator = "gaussian_mixture";
  std::string gen_out;
  gen->add_option("--generator", generator, "gaussian_mixture | rule_labelled_hypercube");
  gen->add_option("--name", spec.name);
  gen->add_option("--items", spec.item_count);
  gen->add_option("--features", spec.feature_count);
  gen->add_option("--classes", spec.class_count);
  gen->add_option("--bayes-error", spec.bayes_error);
  gen->add_option("--separation", spec.separation);
  gen->add_option("--clusters", spec.clusters_per_class);
  gen->add_option("--rule-depth", spec.rule_depth);
  gen->add_option("-o,--output", gen_out, "CSV path")->required();

  // decompose
  auto* dec = app.add_subcommand("decompose", "SSCV bias/variance estimates for every plan cell");
  PlanFlags dec_flags;
  std::size_t max_cells = 0;
  add_plan_flags(dec, dec_flags);
  dec->add_option("--max-cells", max_cells, "Stop after writing this many new cells")->group("");

  // build
  auto* build = app.add_subcommand("build", "Fit the pooled regression registry from run records");
  std::vector<std::string> build_records;
  build->add_option("--records", build_records, "Run-record files")->required();

  // predict
  auto* pred = app.add_subcommand("predict", "Forecast final values for new cells and evaluate");
  std::string registry_path;
  std::vector<std::string> pred_records;
  bool nearest = false;
  pred->add_option("--registry", registry_path)->required();
  pred->add_option("--records", pred_records, "Run-record files of the cells to forecast")->required();
  pred->add_flag("--nearest", nearest, "Use the nearest grid size when n is not in the registry");

  // ensemble
  auto* ens = app.add_subcommand("ensemble", "Oracle bound and power-law forecast for a voting ensemble");
  PlanFlags ens_flags;
  add_plan_flags(ens, ens_flags);
  ens->add_option("--ensemble", ens_flags.ensemble, "e.g. ens:plurality[gnb|knn:k=1|tree:depth=8]");

  // curves
  auto* curves = app.add_subcommand("curves", "Flatten a result file to plot-ready CSV");
  std::string curves_in;
  curves->add_option("input", curves_in, "Result file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bvf::kExitInvalidInput;
  }

  try {
    if (gen->parsed()) {
      spec.generator = bvf::parse_generator(generator);
      if (g.seed) spec.seed = *g.seed;
      bvf::save_csv(bvf::generate(spec), gen_out);
      return bvf::kExitOk;
    }

    if (dec->parsed()) {
      auto plan = make_plan(dec_flags, g);
      const auto summary = bvf::run_decompose(plan, {g.force, max_cells});
      std::cerr << "decompose: " << summary.written << " cells written, " << summary.skipped
                << " already present, " << summary.failures.size() << " failed -> " << summary.records_path.string()
                << "\n";
      for (const auto& f : summary.failures) std::cerr << "  failed: " << f << "\n";
      return summary.failures.empty() ? bvf::kExitOk : bvf::kExitPartial;
    }

    if (build->parsed()) {
      std::vector<fs::path> paths(build_records.begin(), build_records.end());
      const auto records = bvf::read_records(paths);
      const auto registry = bvf::build_registry(records);
      const fs::path out = g.out.value_or("out");
      write_text(out / "registry.json", bvf::to_json(registry).dump(2) + "\n");
      write_text(out / "registry_r2.csv", bvf::registry_r2_csv(registry));
      std::cout << bvf::registry_r2_csv(registry);
      return bvf::kExitOk;
    }

    if (pred->parsed()) {
      std::ifstream in(registry_path);
      if (!in) throw bvf::InputError("cannot open registry '" + registry_path + "'");
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw bvf::InputError("registry '" + registry_path + "' is not valid JSON: " + e.what());
      }
      const auto registry = bvf::registry_from_json(j);
      std::vector<fs::path> paths(pred_records.begin(), pred_records.end());
      const auto records = bvf::read_records(paths);
      const auto forecasts = bvf::forecast_records(registry, records, {nearest});
      const fs::path out = g.out.value_or("out");
      write_text(out / "report.json", report_json(forecasts));
      std::vector<bvf::Forecast> observed;
      for (const auto& f : forecasts)
        if (f.observed_final) observed.push_back(f);
      bvf::EvaluationReport rows;
      rows.forecasts = observed;
      write_text(out / "report.csv", bvf::evaluation_csv(rows));
      std::cerr << "predict: " << forecasts.size() << " forecasts -> " << (out / "report.json").string() << "\n";
      return bvf::kExitOk;
    }

    if (ens->parsed()) {
      auto plan = make_plan(ens_flags, g);
      const auto grid = plan.n_grid.empty() ? bvf::default_ensemble_grid() : plan.n_grid;
      for (const auto& run : bvf::run_ensemble(plan, grid)) {
        write_text(plan.output_dir / ("ensemble_" + run.dataset + ".json"), bvf::to_json(run.forecast).dump(2) + "\n");
        write_text(plan.output_dir / ("ensemble_" + run.dataset + ".csv"), bvf::ensemble_curve_csv(run.forecast));
        const auto& p = run.forecast.predicted_final;
        std::cout << run.dataset << ": OR=" << run.forecast.or_constant << " predicted(n=" << p.n << ")=" << p.value
                  << " [" << p.band_lo << ", " << p.band_hi << "]";
        if (run.forecast.observed_final) std::cout << " observed=" << run.forecast.observed_final->error_mean;
        std::cout << "\n";
      }
      return bvf::kExitOk;
    }

    if (curves->parsed()) {
      const auto csv = bvf::curves_csv(curves_in);
      if (g.out)
        write_text(*g.out, csv);
      else
        std::cout << csv;
      return bvf::kExitOk;
    }
  } catch (const bvf::FitError& e) {
    std::cerr << "fit error: " << e.what() << "\n";
    return bvf::kExitFitFailure;
  } catch (const bvf::InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bvf::kExitInvalidInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bvf::kExitInvalidInput;
  }
  return bvf::kExitOk;
}
