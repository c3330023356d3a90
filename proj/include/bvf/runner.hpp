#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <variant>
#include <vector>

#include <json.hpp>

#include "bvf/data.hpp"
#include "bvf/decomp.hpp"
#include "bvf/ensemble.hpp"
#include "bvf/error.hpp"
#include "bvf/forecast.hpp"
#include "bvf/learners.hpp"
#include "bvf/rng.hpp"

namespace bvf {

// ---------------------------------------------------------------------------
// Experiment plan

struct CsvSource {
  std::filesystem::path path;
  std::string label_column = "label";
  std::string name;  // defaults to the file stem
};

using DatasetSource = std::variant<CsvSource, SyntheticSpec>;

inline std::string source_name(const DatasetSource& src) {
  if (const auto* csv = std::get_if<CsvSource>(&src))
    return csv->name.empty() ? csv->path.stem().string() : csv->name;
  return std::get<SyntheticSpec>(src).name;
}

inline Dataset load_source(const DatasetSource& src) {
  if (const auto* csv = std::get_if<CsvSource>(&src)) return load_csv(csv->path, csv->label_column, source_name(src));
  return generate(std::get<SyntheticSpec>(src));
}

struct ExperimentPlan {
  std::vector<DatasetSource> datasets;
  std::vector<std::string> learners;
  std::vector<std::size_t> n_grid;
  SSCVConfig sscv;
  std::filesystem::path output_dir = "out";
  int parallelism = 1;
  std::optional<std::string> ensemble;
};

inline std::vector<std::size_t> make_grid(std::size_t first, std::size_t last, std::size_t step) {
  if (step == 0 || first == 0 || last < first) throw InputError("invalid grid range");
  std::vector<std::size_t> g;
  for (std::size_t n = first; n <= last; n += step) g.push_back(n);
  return g;
}

/// Accepts "100:1000:100" (first:last:step) or a comma list "100,200,500".
inline std::vector<std::size_t> parse_grid(std::string_view text) {
  text = detail::trim(text);
  auto num = [&](std::string_view s) {
    s = detail::trim(s);
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw InputError("bad grid value '" + std::string(s) + "'");
    return v;
  };
  if (text.find(':') != std::string_view::npos) {
    const auto parts = [&] {
      std::vector<std::string_view> p;
      std::size_t start = 0;
      while (true) {
        const auto c = text.find(':', start);
        p.push_back(text.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
        if (c == std::string_view::npos) break;
        start = c + 1;
      }
      return p;
    }();
    if (parts.size() != 3) throw InputError("grid range must be first:last:step");
    return make_grid(num(parts[0]), num(parts[1]), num(parts[2]));
  }
  std::vector<std::size_t> g;
  for (auto cell : detail::split_commas(text)) g.push_back(num(cell));
  return g;
}

inline SyntheticSpec synthetic_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  s.name = j.value("name", s.name);
  s.generator = parse_generator(j.value("generator", std::string(to_string(s.generator))));
  s.item_count = j.value("item_count", s.item_count);
  s.feature_count = j.value("feature_count", s.feature_count);
  s.class_count = j.value("class_count", s.class_count);
  s.bayes_error = j.value("bayes_error", s.bayes_error);
  s.seed = j.value("seed", s.seed);
  s.separation = j.value("separation", s.separation);
  s.clusters_per_class = j.value("clusters_per_class", s.clusters_per_class);
  s.rule_depth = j.value("rule_depth", s.rule_depth);
  return s;
}

inline nlohmann::ordered_json to_json(const SyntheticSpec& s) {
  return {{"name", s.name},
          {"generator", to_string(s.generator)},
          {"item_count", s.item_count},
          {"feature_count", s.feature_count},
          {"class_count", s.class_count},
          {"bayes_error", s.bayes_error},
          {"seed", s.seed},
          {"separation", s.separation},
          {"clusters_per_class", s.clusters_per_class},
          {"rule_depth", s.rule_depth}};
}

inline ExperimentPlan plan_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  try {
    ExperimentPlan plan;
    for (const auto& d : j.value("datasets", nlohmann::json::array())) {
      if (d.contains("csv")) {
        CsvSource src;
        src.path = d.at("csv").get<std::string>();
        if (src.path.is_relative() && !base_dir.empty()) src.path = base_dir / src.path;
        src.label_column = d.value("label_column", src.label_column);
        src.name = d.value("name", std::string{});
        plan.datasets.emplace_back(std::move(src));
      } else if (d.contains("synthetic")) {
        plan.datasets.emplace_back(synthetic_from_json(d.at("synthetic")));
      } else {
        throw InputError("plan dataset entries need a 'csv' or 'synthetic' key");
      }
    }
    plan.learners = j.value("learners", std::vector<std::string>{});
    if (j.contains("n_grid")) {
      if (j.at("n_grid").is_string())
        plan.n_grid = parse_grid(j.at("n_grid").get<std::string>());
      else
        plan.n_grid = j.at("n_grid").get<std::vector<std::size_t>>();
    }
    if (j.contains("sscv")) {
      const auto& s = j.at("sscv");
      plan.sscv.folds = s.value("folds", plan.sscv.folds);
      plan.sscv.repeats = s.value("repeats", plan.sscv.repeats);
      plan.sscv.seed = s.value("seed", plan.sscv.seed);
    }
    plan.output_dir = j.value("output_dir", plan.output_dir.string());
    plan.parallelism = j.value("parallelism", plan.parallelism);
    if (j.contains("ensemble")) plan.ensemble = j.at("ensemble").get<std::string>();
    return plan;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed plan: ") + e.what());
  }
}

inline ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open plan file '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("plan file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return plan_from_json(j, path.parent_path());
}

// ---------------------------------------------------------------------------
// Seeds
//
// Every cell's seed depends only on (plan seed, dataset name, learner spec, n):
//   cell_seed = mix_seed(plan_seed, fnv1a64(dataset + '\x1f' + learner + '\x1f' + decimal(n)))
// and the nested-prefix shuffle of a dataset on (plan seed, dataset name):
//   prefix_seed = mix_seed(plan_seed, fnv1a64(dataset))
// so results do not depend on scheduling.

inline std::uint64_t cell_seed(std::uint64_t plan_seed, std::string_view dataset, std::string_view learner,
                               std::size_t n) {
  std::string key;
  key.reserve(dataset.size() + learner.size() + 24);
  key.append(dataset).push_back('\x1f');
  key.append(learner).push_back('\x1f');
  key.append(std::to_string(n));
  return mix_seed(plan_seed, fnv1a64(key));
}

inline std::uint64_t dataset_prefix_seed(std::uint64_t plan_seed, std::string_view dataset) {
  return mix_seed(plan_seed, fnv1a64(dataset));
}

/// Estimates one cell: SSCV on the first n items (or on all of them for the
/// final record) of the dataset's seeded shuffle.
inline RunRecord run_cell(const Dataset& data, const Learner& learner, std::string_view learner_spec, std::size_t n,
                          bool final, const SSCVConfig& base, std::uint64_t plan_seed) {
  const auto sample = prefix(data, n, dataset_prefix_seed(plan_seed, data.name()));
  SSCVConfig cfg = base;
  cfg.seed = cell_seed(plan_seed, data.name(), learner_spec, n);
  const auto records = run_sscv(sample, learner, cfg);
  const auto d = decompose(records, data.class_count());
  RunRecord r;
  r.dataset = data.name();
  r.learner = std::string(learner_spec);
  r.n = n;
  r.folds = cfg.folds;
  r.repeats = cfg.repeats;
  r.seed = cfg.seed;
  r.bias2 = d.bias2;
  r.variance = d.variance;
  r.error = d.error;
  r.final = final;
  return r;
}

// ---------------------------------------------------------------------------
// Record files: one JSON object per line.

inline std::string record_line(const RunRecord& r) { return to_json(r).dump() + "\n"; }

/// Reads complete lines; a trailing partial line (interrupted write) is
/// dropped and, with `repair`, truncated from the file.
inline std::vector<RunRecord> read_records(const std::filesystem::path& path, bool repair = false) {
  std::vector<RunRecord> out;
  if (!std::filesystem::exists(path)) return out;
  std::string content;
  {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read records file '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    content = ss.str();
  }
  std::size_t complete = content.rfind('\n');
  complete = complete == std::string::npos ? 0 : complete + 1;
  if (repair && complete != content.size()) std::filesystem::resize_file(path, complete);
  std::size_t start = 0, line_no = 0;
  while (start < complete) {
    const std::size_t end = content.find('\n', start);
    ++line_no;
    const std::string_view line(content.data() + start, end - start);
    start = end + 1;
    if (detail::trim(line).empty()) continue;
    try {
      out.push_back(run_record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw InputError("records file '" + path.string() + "' line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

inline std::vector<RunRecord> read_records(std::span<const std::filesystem::path> paths) {
  std::vector<RunRecord> out;
  for (const auto& p : paths) {
    if (!std::filesystem::exists(p)) throw InputError("records file '" + p.string() + "' does not exist");
    auto part = read_records(p);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Decompose command

struct CellTask {
  std::size_t dataset = 0;  // index into loaded datasets
  std::size_t learner = 0;  // index into plan.learners
  std::size_t n = 0;
  bool final = false;
};

struct RunOptions {
  bool force = false;
  /// Stop after this many newly written cells (0 = no limit). Simulates an interruption.
  std::size_t max_new_cells = 0;
};

struct RunSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;
  std::size_t written = 0;
  std::vector<std::string> failures;
  std::filesystem::path records_path;
};

inline constexpr std::string_view kRecordsFile = "records.jsonl";
inline constexpr std::string_view kFailureManifest = "failures.json";

inline void validate_plan(const ExperimentPlan& plan, std::span<const Dataset> datasets) {
  if (plan.datasets.empty()) throw InputError("plan has no datasets");
  if (plan.learners.empty()) throw InputError("plan has no learners");
  if (plan.n_grid.empty()) throw InputError("plan has an empty n_grid");
  if (plan.parallelism < 1) throw InputError("parallelism must be >= 1");
  for (std::size_t i = 1; i < plan.n_grid.size(); ++i)
    if (plan.n_grid[i] <= plan.n_grid[i - 1]) throw InputError("n_grid must be strictly increasing");
  std::set<std::string> names;
  for (const auto& d : datasets) {
    if (!names.insert(d.name()).second) throw InputError("duplicate dataset name '" + d.name() + "'");
    if (plan.n_grid.back() >= d.size())
      throw InputError("dataset '" + d.name() + "' has " + std::to_string(d.size()) +
                       " items; the largest grid size must be smaller");
    plan.sscv.validate(plan.n_grid.front());
  }
}

/// Runs every pending (dataset, learner, n) cell plus one final cell per
/// (dataset, learner). Lines are appended in plan order whatever the number
/// of workers, so the file is identical for any parallelism and a resumed run
/// reproduces an uninterrupted one.
inline RunSummary run_decompose(const ExperimentPlan& plan, RunOptions options = {}) {
  std::vector<Dataset> datasets;
  for (const auto& src : plan.datasets) datasets.push_back(load_source(src));
  validate_plan(plan, datasets);
  std::vector<Learner> learners;
  for (const auto& spec : plan.learners) learners.push_back(parse_learner(spec));

  std::filesystem::create_directories(plan.output_dir);
  RunSummary summary;
  summary.records_path = plan.output_dir / kRecordsFile;
  if (options.force) std::filesystem::remove(summary.records_path);

  std::set<std::tuple<std::string, std::string, std::size_t, bool>> done;
  for (const auto& r : read_records(summary.records_path, /*repair=*/true))
    done.emplace(r.dataset, r.learner, r.n, r.final);

  std::vector<CellTask> tasks;
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (std::size_t l = 0; l < learners.size(); ++l) {
      std::vector<CellTask> cell;
      for (std::size_t n : plan.n_grid) cell.push_back({d, l, n, false});
      cell.push_back({d, l, datasets[d].size(), true});
      for (const auto& t : cell) {
        ++summary.planned;
        if (done.contains({datasets[d].name(), plan.learners[l], t.n, t.final}))
          ++summary.skipped;
        else
          tasks.push_back(t);
      }
    }
  }
  if (options.max_new_cells && tasks.size() > options.max_new_cells) tasks.resize(options.max_new_cells);

  std::ofstream out(summary.records_path, std::ios::binary | std::ios::app);
  if (!out) throw InputError("cannot open '" + summary.records_path.string() + "' for writing");

  // Workers fill result slots; this thread writes them strictly in task order.
  std::vector<std::optional<std::string>> lines(tasks.size());
  std::vector<std::optional<std::string>> errors(tasks.size());
  std::vector<bool> ready(tasks.size(), false);
  std::mutex mu;
  std::condition_variable cv;
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      const auto& t = tasks[i];
      std::optional<std::string> line, err;
      try {
        line = record_line(run_cell(datasets[t.dataset], learners[t.learner], plan.learners[t.learner], t.n,
                                    t.final, plan.sscv, plan.sscv.seed));
      } catch (const std::exception& e) {
        err = datasets[t.dataset].name() + " / " + plan.learners[t.learner] + " / n=" + std::to_string(t.n) +
              (t.final ? " (final)" : "") + ": " + e.what();
      }
      {
        std::lock_guard lock(mu);
        lines[i] = std::move(line);
        errors[i] = std::move(err);
        ready[i] = true;
      }
      cv.notify_all();
    }
  };

  const auto workers = std::min<std::size_t>(static_cast<std::size_t>(plan.parallelism), tasks.size());
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);

  for (std::size_t i = 0; i < tasks.size(); ++i) {
    std::unique_lock lock(mu);
    cv.wait(lock, [&] { return ready[i]; });
    if (lines[i]) {
      out << *lines[i];
      out.flush();
      lines[i].reset();
      ++summary.written;
    } else {
      summary.failures.push_back(*errors[i]);
    }
  }
  pool.clear();

  const auto manifest = plan.output_dir / kFailureManifest;
  if (!summary.failures.empty()) {
    std::ofstream m(manifest);
    m << nlohmann::ordered_json{{"failed_cells", summary.failures}}.dump(2) << "\n";
  } else if (std::filesystem::exists(manifest)) {
    std::filesystem::remove(manifest);
  }
  return summary;
}

// ---------------------------------------------------------------------------
// Ensemble command

struct EnsembleRun {
  std::string dataset;
  EnsembleForecast forecast;
};

inline std::vector<EnsembleRun> run_ensemble(const ExperimentPlan& plan, const std::vector<std::size_t>& n_grid) {
  if (!plan.ensemble) throw InputError("plan has no ensemble spec");
  const auto ens = parse_ensemble(*plan.ensemble);
  std::vector<Dataset> datasets;
  for (const auto& src : plan.datasets) datasets.push_back(load_source(src));
  if (datasets.empty()) throw InputError("plan has no datasets");

  std::vector<std::optional<EnsembleRun>> results(datasets.size());
  std::vector<std::exception_ptr> errors(datasets.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= datasets.size()) return;
      try {
        EnsembleForecastOptions opt;
        opt.prefix_seed = dataset_prefix_seed(plan.sscv.seed, datasets[i].name());
        SSCVConfig cfg = plan.sscv;
        cfg.seed = cell_seed(plan.sscv.seed, datasets[i].name(), *plan.ensemble, 0);
        results[i] = EnsembleRun{datasets[i].name(), forecast_ensemble(datasets[i], ens, n_grid, cfg, opt)};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, plan.parallelism)), datasets.size());
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<EnsembleRun> out;
  for (auto& r : results) out.push_back(std::move(*r));
  return out;
}

// ---------------------------------------------------------------------------
// Curves: flatten any result file to plot-ready CSV.

inline constexpr std::string_view kRecordsCsvHeader = "dataset,learner,n,final,folds,repeats,seed,bias2,variance,error\n";
inline constexpr std::string_view kRegistryCsvHeader =
    "variable,n,slope,intercept,r2,slope_se,intercept_se,point_count\n";
inline constexpr std::string_view kEvaluationCsvHeader = "dataset,learner,n,variable,predicted,observed,rel_dev_pct\n";

inline std::string records_csv(std::span<const RunRecord> records) {
  using detail::format_double;
  std::string out(kRecordsCsvHeader);
  for (const auto& r : records)
    out += r.dataset + "," + r.learner + "," + std::to_string(r.n) + "," + (r.final ? "1" : "0") + "," +
           std::to_string(r.folds) + "," + std::to_string(r.repeats) + "," + std::to_string(r.seed) + "," +
           format_double(r.bias2) + "," + format_double(r.variance) + "," + format_double(r.error) + "\n";
  return out;
}

inline std::string registry_csv(const ModelRegistry& reg) {
  using detail::format_double;
  std::string out(kRegistryCsvHeader);
  for (Variable v : kVariables)
    for (std::size_t n : reg.n_grid) {
      const auto& m = reg.at(v, n);
      out += std::string(to_string(v)) + "," + std::to_string(n) + "," + format_double(m.slope) + "," +
             format_double(m.intercept) + "," + format_double(m.r2) + "," + format_double(m.slope_se) + "," +
             format_double(m.intercept_se) + "," + std::to_string(m.point_count) + "\n";
    }
  return out;
}

inline PowerLawModel power_law_from_json(const nlohmann::json& j) {
  PowerLawModel m;
  m.a = j.at("a").get<double>();
  m.b = j.at("b").get<double>();
  m.asymptote = j.at("asymptote").get<double>();
  m.residual_se = j.value("residual_se", 0.0);
  m.a_se = j.value("a_se", 0.0);
  m.b_se = j.value("b_se", 0.0);
  m.point_count = j.value("point_count", std::size_t{0});
  m.robust = j.value("robust", false);
  m.converged = j.value("converged", true);
  m.iterations = j.value("iterations", 0);
  return m;
}

inline EnsembleForecast ensemble_forecast_from_json(const nlohmann::json& j) {
  EnsembleForecast f;
  for (const auto& p : j.at("or_curve")) f.or_curve.emplace_back(p.at("n").get<std::size_t>(), p.at("or").get<double>());
  f.or_constant = j.at("or_constant").get<double>();
  for (const auto& p : j.at("error_curve"))
    f.error_curve.push_back({p.at("n").get<std::size_t>(), p.at("mean").get<double>(), p.at("std").get<double>()});
  f.error_model = power_law_from_json(j.at("error_model"));
  f.std_model = power_law_from_json(j.at("std_model"));
  f.predicted_final = f.predict_at(j.at("predicted_final").at("n").get<std::size_t>());
  if (j.contains("observed_final") && !j.at("observed_final").is_null()) {
    const auto& o = j.at("observed_final");
    f.observed_final = ObservedFinal{o.at("n").get<std::size_t>(), o.at("error_mean").get<double>(),
                                     o.at("error_std").get<double>(), o.at("or").get<double>()};
  }
  return f;
}

inline std::string evaluation_csv_from_json(const nlohmann::json& j) {
  using detail::format_double;
  std::string out(kEvaluationCsvHeader);
  for (const auto& f : j.at("forecasts")) {
    if (f.at("observed_final").is_null()) continue;
    const auto& o = f.at("observed_final");
    const std::pair<std::string, std::pair<double, double>> rows[] = {
        {"error_sum", {f.at("p_error_sum").get<double>(), o.at("error").get<double>()}},
        {"error_direct", {f.at("p_error_direct").get<double>(), o.at("error").get<double>()}},
        {"bias2", {f.at("p_bias2").get<double>(), o.at("bias2").get<double>()}},
        {"variance", {f.at("p_variance").get<double>(), o.at("variance").get<double>()}}};
    for (const auto& [name, po] : rows) {
      const auto [pred, obs] = po;
      out += f.at("dataset").get<std::string>() + "," + f.at("learner").get<std::string>() + "," +
             std::to_string(f.at("n_used").get<std::size_t>()) + "," + name + "," + format_double(pred) + "," +
             format_double(obs) + ",";
      if (obs != 0.0) out += format_double(relative_deviation_pct(pred, obs));
      out += "\n";
    }
  }
  return out;
}

/// Detects the kind of result file and flattens it. An empty file yields a
/// header-only run-record CSV.
inline std::string curves_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string content = ss.str();
  if (content.find_first_not_of(" \t\r\n") == std::string::npos)
    return std::string(kRecordsCsvHeader);

  // A record file has one object per line; anything else is one JSON document.
  nlohmann::json doc;
  bool single = true;
  try {
    doc = nlohmann::json::parse(content);
  } catch (const nlohmann::json::exception&) {
    single = false;
  }
  try {
    if (single && doc.is_object()) {
      if (doc.contains("or_curve")) return ensemble_curve_csv(ensemble_forecast_from_json(doc));
      if (doc.contains("entries")) return registry_csv(registry_from_json(doc));
      if (doc.contains("forecasts")) return evaluation_csv_from_json(doc);
      if (doc.contains("bias2")) {
        const RunRecord r = run_record_from_json(doc);
        return records_csv(std::span<const RunRecord>(&r, 1));
      }
      throw InputError("'" + path.string() + "' is not a recognised result file");
    }
    const auto records = read_records(path);
    return records_csv(records);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("'" + path.string() + "': " + e.what());
  }
}

}  // namespace bvf
