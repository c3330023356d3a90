#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bvf/decomp.hpp"
#include "bvf/error.hpp"
#include "bvf/regress.hpp"

namespace bvf {

enum class Variable { bias2, variance, error };

inline constexpr std::array<Variable, 3> kVariables{Variable::bias2, Variable::variance, Variable::error};

inline std::string_view to_string(Variable v) {
  switch (v) {
    case Variable::bias2: return "bias2";
    case Variable::variance: return "variance";
    case Variable::error: return "error";
  }
  return "?";
}

inline Variable parse_variable(std::string_view s) {
  for (Variable v : kVariables)
    if (to_string(v) == s) return v;
  throw InputError("unknown variable '" + std::string(s) + "'");
}

inline double value_of(const Decomposition& d, Variable v) {
  switch (v) {
    case Variable::bias2: return d.bias2;
    case Variable::variance: return d.variance;
    case Variable::error: return d.error;
  }
  return 0.0;
}

/// Identifies one (dataset, learner) pair.
struct CellId {
  std::string dataset;
  std::string learner;

  auto operator<=>(const CellId&) const = default;
  std::string str() const { return dataset + " / " + learner; }
};

/// One pooled linear model per (variable, n): final value regressed on the
/// value estimated from the first n items, across every cell.
struct ModelRegistry {
  std::map<std::pair<Variable, std::size_t>, LinearModel> entries;
  std::vector<std::size_t> n_grid;
  std::vector<CellId> provenance;

  const LinearModel& at(Variable v, std::size_t n) const {
    auto it = entries.find({v, n});
    if (it == entries.end())
      throw InputError("registry has no " + std::string(to_string(v)) + " model at n=" + std::to_string(n));
    return it->second;
  }
  bool operator==(const ModelRegistry& o) const {
    if (n_grid != o.n_grid || provenance != o.provenance || entries.size() != o.entries.size()) return false;
    for (const auto& [key, m] : entries) {
      auto it = o.entries.find(key);
      if (it == o.entries.end()) return false;
      const auto& q = it->second;
      if (m.slope != q.slope || m.intercept != q.intercept || m.r2 != q.r2 || m.point_count != q.point_count ||
          m.slope_se != q.slope_se || m.intercept_se != q.intercept_se || m.residual_se != q.residual_se ||
          m.x_mean != q.x_mean || m.sxx != q.sxx)
        return false;
    }
    return true;
  }
};

/// Grid estimates and final estimates of a set of run records, keyed by cell.
struct CellTable {
  std::map<CellId, std::map<std::size_t, Decomposition>> grid;
  std::map<CellId, Decomposition> finals;
};

inline CellTable tabulate(std::span<const RunRecord> records) {
  CellTable table;
  for (const auto& r : records) {
    CellId id{r.dataset, r.learner};
    if (r.final)
      table.finals[id] = r.decomposition();
    else
      table.grid[id][r.n] = r.decomposition();
  }
  return table;
}

/// Fits the pooled registry. With an empty `n_grid` the grid is every prefix
/// size present in the records.
inline ModelRegistry build_registry(std::span<const RunRecord> records, std::vector<std::size_t> n_grid = {}) {
  const auto table = tabulate(records);
  if (n_grid.empty()) {
    std::set<std::size_t> sizes;
    for (const auto& [id, by_n] : table.grid)
      for (const auto& [n, d] : by_n) sizes.insert(n);
    n_grid.assign(sizes.begin(), sizes.end());
  }
  std::sort(n_grid.begin(), n_grid.end());
  n_grid.erase(std::unique(n_grid.begin(), n_grid.end()), n_grid.end());
  if (n_grid.empty()) throw InputError("build_registry: no grid records");

  std::set<CellId> cells;
  for (const auto& [id, by_n] : table.grid) cells.insert(id);
  for (const auto& [id, d] : table.finals) cells.insert(id);
  for (const auto& id : cells) {
    if (!table.finals.contains(id)) throw InputError("build_registry: missing final record for cell " + id.str());
    for (std::size_t n : n_grid) {
      auto it = table.grid.find(id);
      if (it == table.grid.end() || !it->second.contains(n))
        throw InputError("build_registry: missing cell " + id.str() + " at n=" + std::to_string(n));
    }
  }
  if (cells.size() < 2) throw FitError("build_registry: need at least 2 cells to pool");

  ModelRegistry reg;
  reg.n_grid = n_grid;
  reg.provenance.assign(cells.begin(), cells.end());
  for (Variable v : kVariables) {
    for (std::size_t n : n_grid) {
      std::vector<std::pair<double, double>> points;
      points.reserve(cells.size());
      for (const auto& id : cells)
        points.emplace_back(value_of(table.grid.at(id).at(n), v), value_of(table.finals.at(id), v));
      try {
        reg.entries[{v, n}] = ols(points);
      } catch (const FitError& e) {
        throw FitError("build_registry: " + std::string(to_string(v)) + " at n=" + std::to_string(n) + ": " +
                       e.what());
      }
    }
  }
  return reg;
}

// ---------------------------------------------------------------------------

struct Forecast {
  std::string dataset;
  std::string learner;
  std::size_t n_requested = 0;
  std::size_t n_used = 0;
  double p_bias2 = 0.0;
  double p_variance = 0.0;
  /// Decomposed error forecast, always p_bias2 + p_variance.
  double p_error_sum = 0.0;
  /// Direct error forecast from the error model.
  double p_error_direct = 0.0;
  bool clamped = false;
  std::optional<Decomposition> observed_final;
};

struct ForecastOptions {
  /// Use the nearest grid size when the estimate's n is not in the grid.
  bool nearest_n = false;
};

inline Forecast forecast_cell(const ModelRegistry& registry, const Decomposition& estimate,
                              ForecastOptions options = {}) {
  std::size_t n = estimate.n;
  if (!std::binary_search(registry.n_grid.begin(), registry.n_grid.end(), n)) {
    if (!options.nearest_n || registry.n_grid.empty())
      throw InputError("forecast: n=" + std::to_string(n) + " is not in the registry grid");
    n = *std::min_element(registry.n_grid.begin(), registry.n_grid.end(), [&](std::size_t a, std::size_t b) {
      const auto da = a > n ? a - n : n - a, db = b > n ? b - n : n - b;
      return da < db;
    });
  }
  Forecast f;
  f.dataset = estimate.dataset;
  f.learner = estimate.learner;
  f.n_requested = estimate.n;
  f.n_used = n;
  auto clamp = [&](double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    if (c != v) f.clamped = true;
    return c;
  };
  f.p_bias2 = clamp(registry.at(Variable::bias2, n)(estimate.bias2));
  f.p_variance = clamp(registry.at(Variable::variance, n)(estimate.variance));
  f.p_error_direct = clamp(registry.at(Variable::error, n)(estimate.error));
  f.p_error_sum = f.p_bias2 + f.p_variance;
  if (f.p_error_sum > 1.0) f.clamped = true;
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation against observed finals

enum class Predictor { error_sum, error_direct, bias2, variance };

inline constexpr std::array<Predictor, 4> kPredictors{Predictor::error_sum, Predictor::error_direct,
                                                      Predictor::bias2, Predictor::variance};

inline std::string_view to_string(Predictor p) {
  switch (p) {
    case Predictor::error_sum: return "error_sum";
    case Predictor::error_direct: return "error_direct";
    case Predictor::bias2: return "bias2";
    case Predictor::variance: return "variance";
  }
  return "?";
}

inline std::pair<double, double> predicted_observed(const Forecast& f, Predictor p) {
  const auto& o = *f.observed_final;
  switch (p) {
    case Predictor::error_sum: return {f.p_error_sum, o.error};
    case Predictor::error_direct: return {f.p_error_direct, o.error};
    case Predictor::bias2: return {f.p_bias2, o.bias2};
    case Predictor::variance: return {f.p_variance, o.variance};
  }
  return {0.0, 0.0};
}

struct PredictorSummary {
  Predictor predictor = Predictor::error_sum;
  /// R^2 of observed regressed on predicted; 0 when every prediction is identical.
  double r2 = 0.0;
  bool r2_degenerate = false;
  TTestResult t_test;
  /// 100 (prediction - observation) / observation per forecast; empty when observation is 0.
  std::vector<std::optional<double>> relative_deviation_pct;
  double mean_relative_deviation_pct = 0.0;
  double mean_abs_relative_deviation_pct = 0.0;
  std::size_t excluded = 0;
};

struct EvaluationReport {
  std::vector<Forecast> forecasts;
  std::vector<PredictorSummary> summaries;

  const PredictorSummary& summary(Predictor p) const {
    for (const auto& s : summaries)
      if (s.predictor == p) return s;
    throw InputError("report has no summary for " + std::string(to_string(p)));
  }
};

inline double relative_deviation_pct(double prediction, double observation) {
  return 100.0 * (prediction - observation) / observation;
}

inline EvaluationReport evaluate(std::span<const Forecast> forecasts) {
  std::vector<Forecast> usable;
  for (const auto& f : forecasts)
    if (f.observed_final) usable.push_back(f);
  if (usable.size() < 2) throw InputError("evaluate needs at least 2 forecasts with observed finals");

  EvaluationReport report;
  report.forecasts = usable;
  for (Predictor p : kPredictors) {
    PredictorSummary s;
    s.predictor = p;
    std::vector<std::pair<double, double>> pairs;
    for (const auto& f : usable) pairs.push_back(predicted_observed(f, p));
    try {
      s.r2 = ols(pairs).r2;
    } catch (const FitError&) {
      s.r2 = 0.0;
      s.r2_degenerate = true;
    }
    s.t_test = paired_t_test(pairs);
    std::size_t counted = 0;
    for (auto [pred, obs] : pairs) {
      if (obs == 0.0) {
        s.relative_deviation_pct.emplace_back(std::nullopt);
        ++s.excluded;
        continue;
      }
      const double dev = relative_deviation_pct(pred, obs);
      s.relative_deviation_pct.emplace_back(dev);
      s.mean_relative_deviation_pct += dev;
      s.mean_abs_relative_deviation_pct += std::fabs(dev);
      ++counted;
    }
    if (counted > 0) {
      s.mean_relative_deviation_pct /= static_cast<double>(counted);
      s.mean_abs_relative_deviation_pct /= static_cast<double>(counted);
    }
    report.summaries.push_back(std::move(s));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Serialization

namespace detail {
/// JSON has no infinities or NaN; they become null.
inline nlohmann::ordered_json finite_or_null(double v) {
  return std::isfinite(v) ? nlohmann::ordered_json(v) : nlohmann::ordered_json(nullptr);
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const ModelRegistry& reg) {
  nlohmann::ordered_json j;
  j["n_grid"] = reg.n_grid;
  auto entries = nlohmann::ordered_json::array();
  for (Variable v : kVariables) {
    for (std::size_t n : reg.n_grid) {
      const auto& m = reg.at(v, n);
      nlohmann::ordered_json e;
      e["variable"] = to_string(v);
      e["n"] = n;
      e["slope"] = m.slope;
      e["intercept"] = m.intercept;
      e["r2"] = m.r2;
      e["slope_se"] = m.slope_se;
      e["intercept_se"] = m.intercept_se;
      e["point_count"] = m.point_count;
      e["residual_se"] = m.residual_se;
      e["x_mean"] = m.x_mean;
      e["sxx"] = m.sxx;
      entries.push_back(std::move(e));
    }
  }
  j["entries"] = std::move(entries);
  auto prov = nlohmann::ordered_json::array();
  for (const auto& c : reg.provenance) prov.push_back({{"dataset", c.dataset}, {"learner", c.learner}});
  j["provenance"] = std::move(prov);
  return j;
}

inline ModelRegistry registry_from_json(const nlohmann::json& j) {
  try {
    ModelRegistry reg;
    reg.n_grid = j.at("n_grid").get<std::vector<std::size_t>>();
    for (const auto& e : j.at("entries")) {
      LinearModel m;
      m.slope = e.at("slope").get<double>();
      m.intercept = e.at("intercept").get<double>();
      m.r2 = e.at("r2").get<double>();
      m.slope_se = e.at("slope_se").get<double>();
      m.intercept_se = e.at("intercept_se").get<double>();
      m.point_count = e.at("point_count").get<std::size_t>();
      m.residual_se = e.value("residual_se", 0.0);
      m.x_mean = e.value("x_mean", 0.0);
      m.sxx = e.value("sxx", 0.0);
      reg.entries[{parse_variable(e.at("variable").get<std::string>()), e.at("n").get<std::size_t>()}] = m;
    }
    for (const auto& c : j.at("provenance"))
      reg.provenance.push_back({c.at("dataset").get<std::string>(), c.at("learner").get<std::string>()});
    if (reg.entries.size() != kVariables.size() * reg.n_grid.size())
      throw InputError("registry: expected one entry per (variable, n)");
    for (Variable v : kVariables)
      for (std::size_t n : reg.n_grid) (void)reg.at(v, n);
    return reg;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed registry: ") + e.what());
  }
}

/// n, r2 per variable: the R^2 progression across the grid.
inline std::string registry_r2_csv(const ModelRegistry& reg) {
  std::string out = "n,r2_bias2,r2_variance,r2_error\n";
  for (std::size_t n : reg.n_grid) {
    out += std::to_string(n);
    for (Variable v : kVariables) out += "," + detail::format_double(reg.at(v, n).r2);
    out += "\n";
  }
  return out;
}

inline nlohmann::ordered_json to_json(const Decomposition& d) {
  return {{"dataset", d.dataset}, {"learner", d.learner}, {"n", d.n},
          {"bias2", d.bias2},     {"variance", d.variance}, {"error", d.error}};
}

inline nlohmann::ordered_json to_json(const Forecast& f) {
  nlohmann::ordered_json j;
  j["dataset"] = f.dataset;
  j["learner"] = f.learner;
  j["n_requested"] = f.n_requested;
  j["n_used"] = f.n_used;
  j["p_bias2"] = f.p_bias2;
  j["p_variance"] = f.p_variance;
  j["p_error_sum"] = f.p_error_sum;
  j["p_error_direct"] = f.p_error_direct;
  j["clamped"] = f.clamped;
  j["observed_final"] = f.observed_final ? to_json(*f.observed_final) : nlohmann::ordered_json(nullptr);
  return j;
}

inline nlohmann::ordered_json to_json(const EvaluationReport& report) {
  nlohmann::ordered_json j;
  auto forecasts = nlohmann::ordered_json::array();
  for (const auto& f : report.forecasts) forecasts.push_back(to_json(f));
  j["forecasts"] = std::move(forecasts);
  auto summaries = nlohmann::ordered_json::array();
  for (const auto& s : report.summaries) {
    nlohmann::ordered_json o;
    o["predictor"] = to_string(s.predictor);
    o["r2"] = s.r2;
    o["r2_degenerate"] = s.r2_degenerate;
    o["t"] = detail::finite_or_null(s.t_test.t);
    o["df"] = s.t_test.df;
    o["p_two_sided"] = s.t_test.p_two_sided;
    o["t_degenerate"] = s.t_test.degenerate;
    o["mean_relative_deviation_pct"] = s.mean_relative_deviation_pct;
    o["mean_abs_relative_deviation_pct"] = s.mean_abs_relative_deviation_pct;
    o["excluded"] = s.excluded;
    summaries.push_back(std::move(o));
  }
  j["summaries"] = std::move(summaries);
  return j;
}

/// dataset, learner, n, variable, predicted, observed, rel_dev_pct
inline std::string evaluation_csv(const EvaluationReport& report) {
  std::string out = "dataset,learner,n,variable,predicted,observed,rel_dev_pct\n";
  for (const auto& f : report.forecasts) {
    for (Predictor p : kPredictors) {
      const auto [pred, obs] = predicted_observed(f, p);
      out += f.dataset + "," + f.learner + "," + std::to_string(f.n_used) + "," + std::string(to_string(p)) + "," +
             detail::format_double(pred) + "," + detail::format_double(obs) + ",";
      if (obs != 0.0) out += detail::format_double(relative_deviation_pct(pred, obs));
      out += "\n";
    }
  }
  return out;
}

/// Forecasts every grid estimate in `records` and attaches the matching final
/// observation when one is present.
inline std::vector<Forecast> forecast_records(const ModelRegistry& registry, std::span<const RunRecord> records,
                                              ForecastOptions options = {}) {
  const auto table = tabulate(records);
  std::vector<Forecast> out;
  for (const auto& [id, by_n] : table.grid) {
    for (const auto& [n, estimate] : by_n) {
      auto f = forecast_cell(registry, estimate, options);
      if (auto it = table.finals.find(id); it != table.finals.end()) f.observed_final = it->second;
      out.push_back(std::move(f));
    }
  }
  return out;
}

}  // namespace bvf
