#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bvf/data.hpp"
#include "bvf/decomp.hpp"
#include "bvf/error.hpp"
#include "bvf/forecast.hpp"
#include "bvf/learners.hpp"
#include "bvf/regress.hpp"

namespace bvf {

enum class Combiner { plurality, accuracy_weighted };

/// Heterogeneous members whose crisp votes are combined into one decision.
/// The ensemble as a whole is treated as a single classifier.
struct VotingEnsemble {
  std::vector<Learner> members;
  Combiner combiner = Combiner::plurality;
  std::uint64_t seed = 0;
};

/// `ens:plurality[gnb|knn:k=1|tree:depth=8]` or `ens:weighted[...]`.
inline VotingEnsemble parse_ensemble(std::string_view spec) {
  const std::string_view s = detail::trim(spec);
  const std::string text(spec);
  constexpr std::string_view kPrefix = "ens:";
  if (s.substr(0, kPrefix.size()) != kPrefix)
    throw InputError("ensemble spec '" + text + "' must start with 'ens:'");
  const auto open = s.find('[');
  if (open == std::string_view::npos || s.back() != ']')
    throw InputError("ensemble spec '" + text + "' needs a bracketed member list");
  const auto combiner = s.substr(kPrefix.size(), open - kPrefix.size());
  VotingEnsemble ens;
  if (combiner == "plurality")
    ens.combiner = Combiner::plurality;
  else if (combiner == "weighted" || combiner == "accuracy_weighted")
    ens.combiner = Combiner::accuracy_weighted;
  else
    throw InputError("ensemble spec '" + text + "': unknown combiner '" + std::string(combiner) + "'");
  std::string_view body = s.substr(open + 1, s.size() - open - 2);
  while (true) {
    const auto bar = body.find('|');
    ens.members.push_back(parse_learner(body.substr(0, bar)));
    if (bar == std::string_view::npos) break;
    body.remove_prefix(bar + 1);
  }
  if (ens.members.size() < 2) throw InputError("ensemble spec '" + text + "' needs at least 2 members");
  return ens;
}

inline std::string to_string(const VotingEnsemble& ens) {
  std::string out = ens.combiner == Combiner::plurality ? "ens:plurality[" : "ens:weighted[";
  for (std::size_t i = 0; i < ens.members.size(); ++i) out += (i ? "|" : "") + to_string(ens.members[i]);
  return out + "]";
}

class TrainedEnsemble {
 public:
  TrainedEnsemble(std::vector<TrainedModel> members, std::vector<double> weights, int class_count)
      : members_(std::move(members)), weights_(std::move(weights)), class_count_(class_count) {}

  /// Weighted vote; ties go to the lowest class index.
  ClassIndex predict(std::span<const double> item) const {
    std::vector<double> votes(static_cast<std::size_t>(class_count_), 0.0);
    for (std::size_t m = 0; m < members_.size(); ++m)
      votes[static_cast<std::size_t>(members_[m].predict_unchecked(item))] += weights_[m];
    return detail::argmax_lowest<double>(votes);
  }

  std::span<const double> weights() const { return weights_; }

 private:
  std::vector<TrainedModel> members_;
  std::vector<double> weights_;
  int class_count_;
};

/// Trains every member on `training_set`. Member i uses seed `member_seeds[i]`
/// when given. Accuracy weights are each member's accuracy on its own
/// training data, renormalised to sum to one.
inline TrainedEnsemble train_ensemble(const VotingEnsemble& ens, const Dataset& training_set,
                                      std::span<const std::uint64_t> member_seeds = {}) {
  if (ens.members.empty()) throw InputError("ensemble has no members");
  std::vector<TrainedModel> models;
  std::vector<double> weights;
  for (std::size_t i = 0; i < ens.members.size(); ++i) {
    Learner l = ens.members[i];
    if (i < member_seeds.size()) l.seed = member_seeds[i];
    models.push_back(train(l, training_set));
    if (ens.combiner == Combiner::plurality) {
      weights.push_back(1.0);
    } else {
      std::size_t correct = 0;
      for (std::size_t r = 0; r < training_set.size(); ++r)
        if (models.back().predict_unchecked(training_set.row(r)) == training_set.label(r)) ++correct;
      weights.push_back(static_cast<double>(correct) / static_cast<double>(training_set.size()));
    }
  }
  double total = 0.0;
  for (double w : weights) total += w;
  for (double& w : weights) w = total > 0.0 ? w / total : 1.0 / static_cast<double>(weights.size());
  return TrainedEnsemble(std::move(models), std::move(weights), training_set.class_count());
}

/// SSCV for the combined ensemble. All members see the same folds, and member
/// seeds follow the derivation of run_sscv so a one-member ensemble reproduces
/// run_sscv of that member.
inline std::vector<PredictionRecord> ensemble_predictions(const Dataset& data, const VotingEnsemble& ens,
                                                          const SSCVConfig& config) {
  if (ens.members.empty()) throw InputError("ensemble has no members");
  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    records[i].item_index = i;
    records[i].true_label = data.label(i);
    records[i].predictions.resize(static_cast<std::size_t>(config.repeats));
  }
  std::vector<std::uint64_t> seeds(ens.members.size());
  for_each_split(data.size(), config, [&](const FoldSplit& split) {
    for (std::size_t m = 0; m < ens.members.size(); ++m)
      seeds[m] = split_learner_seed(ens.members[m].seed, config.seed, split.repeat, split.fold);
    const auto model = train_ensemble(ens, data.subset(split.train), seeds);
    for (std::size_t i : split.test)
      records[i].predictions[static_cast<std::size_t>(split.repeat)] = model.predict(data.row(i));
  });
  return records;
}

// ---------------------------------------------------------------------------
// Oracle partition
//
// A+ : items predicted correctly in every observed repeat
// A- : items given the same wrong class in every observed repeat
// B  : everything else, including items that are always wrong but not
//      always with the same class (their bias2 lies in (1/2, 1) when K > 2)
// Each A- item contributes exactly 1 to bias2 and each A+ item 0, so
// |A-|/|X| <= bias2 <= |A-|/|X| + |B|/|X|, and |A-|/|X| lower-bounds the error.

struct OraclePartition {
  std::size_t a_plus = 0;
  std::size_t a_minus = 0;
  std::size_t b_count = 0;
  std::size_t total = 0;
  double or_value = 0.0;
};

inline OraclePartition oracle_partition(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InputError("oracle_partition: no records");
  const std::size_t l = records.front().predictions.size();
  OraclePartition p;
  for (const auto& r : records) {
    if (r.predictions.size() != l || l == 0)
      throw InputError("oracle_partition: records disagree on repeat count");
    std::size_t correct = 0;
    bool constant = true;
    for (ClassIndex y : r.predictions) {
      if (y == r.true_label) ++correct;
      if (y != r.predictions.front()) constant = false;
    }
    if (correct == l)
      ++p.a_plus;
    else if (correct == 0 && constant)
      ++p.a_minus;
    else
      ++p.b_count;
  }
  p.total = records.size();
  p.or_value = static_cast<double>(p.a_minus) / static_cast<double>(p.total);
  return p;
}

/// Or_final regressed on Or_n across datasets.
inline LinearModel or_progression_model(std::span<const std::pair<double, double>> or_pairs) {
  return ols(or_pairs);
}

/// Mean and sample standard deviation of the per-repeat error rates.
inline std::pair<double, double> repeat_error_stats(std::span<const PredictionRecord> records) {
  if (records.empty()) throw InputError("repeat_error_stats: no records");
  const std::size_t l = records.front().predictions.size();
  std::vector<double> rates(l, 0.0);
  for (const auto& r : records) {
    if (r.predictions.size() != l) throw InputError("repeat_error_stats: records disagree on repeat count");
    for (std::size_t k = 0; k < l; ++k)
      if (r.predictions[k] != r.true_label) rates[k] += 1.0;
  }
  double mean = 0.0;
  for (double& x : rates) {
    x /= static_cast<double>(records.size());
    mean += x;
  }
  mean /= static_cast<double>(l);
  double ss = 0.0;
  for (double x : rates) ss += (x - mean) * (x - mean);
  const double sd = l > 1 ? std::sqrt(ss / static_cast<double>(l - 1)) : 0.0;
  return {mean, sd};
}

// ---------------------------------------------------------------------------
// Ensemble error forecast

struct ErrorPoint {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct FinalPrediction {
  std::size_t n = 0;
  double value = 0.0;
  double band_lo = 0.0;
  double band_hi = 0.0;
};

struct ObservedFinal {
  std::size_t n = 0;
  double error_mean = 0.0;
  double error_std = 0.0;
  double or_value = 0.0;
};

struct EnsembleForecast {
  std::vector<std::pair<std::size_t, double>> or_curve;
  double or_constant = 0.0;
  std::vector<ErrorPoint> error_curve;
  PowerLawModel error_model;
  PowerLawModel std_model;
  FinalPrediction predicted_final;
  std::optional<ObservedFinal> observed_final;

  FinalPrediction predict_at(std::size_t n) const {
    const double v = error_model(static_cast<double>(n));
    const double s = std_model(static_cast<double>(n));
    return {n, v, v - s, v + s};
  }
};

struct EnsembleForecastOptions {
  /// Seed of the shuffle that defines the nested prefixes.
  std::uint64_t prefix_seed = 0;
  /// Size to extrapolate to; 0 means the full dataset.
  std::size_t query_n = 0;
  /// Also run SSCV on the full dataset and record the observed error.
  bool observe_final = true;
  bool robust = true;
};

inline std::vector<std::size_t> default_ensemble_grid() {
  std::vector<std::size_t> grid;
  for (std::size_t n = 100; n <= 1000; n += 20) grid.push_back(n);
  return grid;
}

/// Oracle bound and power-law forecast of ensemble error:
///  1. Or_n on every grid size, averaged into the constant bound OR;
///  2. mean and across-repeat std of ensemble error on every grid size;
///  3. error means fitted by a * n^b + OR (robust);
///  4. error stds fitted by a * n^b (robust, asymptote 0);
///  5. prediction at the query size: error model +/- std model.
inline EnsembleForecast forecast_ensemble(const Dataset& data, const VotingEnsemble& ens,
                                          std::vector<std::size_t> n_grid, const SSCVConfig& config,
                                          EnsembleForecastOptions options = {}) {
  if (n_grid.size() < 3) throw InputError("forecast_ensemble needs at least 3 grid sizes");
  if (!std::is_sorted(n_grid.begin(), n_grid.end()) ||
      std::adjacent_find(n_grid.begin(), n_grid.end()) != n_grid.end())
    throw InputError("forecast_ensemble: grid must be strictly increasing");
  if (n_grid.back() > data.size())
    throw InputError("forecast_ensemble: grid exceeds dataset '" + data.name() + "' size");

  EnsembleForecast out;
  std::vector<double> or_values;
  for (std::size_t n : n_grid) {
    const auto sample = prefix(data, n, options.prefix_seed);
    SSCVConfig cfg = config;
    cfg.seed = mix_seed(config.seed, n);
    const auto records = ensemble_predictions(sample, ens, cfg);
    const auto part = oracle_partition(records);
    out.or_curve.emplace_back(n, part.or_value);
    or_values.push_back(part.or_value);
    const auto [mean, sd] = repeat_error_stats(records);
    out.error_curve.push_back({n, mean, sd});
  }
  out.or_constant = constant_fit(or_values);

  std::vector<std::pair<double, double>> err_pts, std_pts;
  for (const auto& p : out.error_curve) {
    err_pts.emplace_back(static_cast<double>(p.n), p.mean);
    std_pts.emplace_back(static_cast<double>(p.n), p.std);
  }
  try {
    out.error_model = fit_power_law(err_pts, out.or_constant, options.robust);
  } catch (const FitError& e) {
    throw FitError("ensemble error model for '" + data.name() + "': " + e.what());
  }
  try {
    out.std_model = fit_power_law(std_pts, 0.0, options.robust);
  } catch (const FitError& e) {
    throw FitError("ensemble std model for '" + data.name() + "': " + e.what());
  }

  const std::size_t query = options.query_n ? options.query_n : data.size();
  out.predicted_final = out.predict_at(query);

  if (options.observe_final) {
    const auto full = prefix(data, data.size(), options.prefix_seed);
    SSCVConfig cfg = config;
    cfg.seed = mix_seed(config.seed, full.size());
    const auto records = ensemble_predictions(full, ens, cfg);
    const auto [mean, sd] = repeat_error_stats(records);
    out.observed_final = ObservedFinal{full.size(), mean, sd, oracle_partition(records).or_value};
  }
  return out;
}

inline nlohmann::ordered_json to_json(const PowerLawModel& m) {
  return {{"a", m.a},
          {"b", m.b},
          {"asymptote", m.asymptote},
          {"residual_se", m.residual_se},
          {"a_se", m.a_se},
          {"b_se", m.b_se},
          {"point_count", m.point_count},
          {"robust", m.robust},
          {"converged", m.converged},
          {"iterations", m.iterations},
          {"se_method", "asymptotic linearization"}};
}

inline nlohmann::ordered_json to_json(const EnsembleForecast& f) {
  nlohmann::ordered_json j;
  auto or_curve = nlohmann::ordered_json::array();
  for (auto [n, v] : f.or_curve) or_curve.push_back({{"n", n}, {"or", v}});
  j["or_curve"] = std::move(or_curve);
  j["or_constant"] = f.or_constant;
  auto err = nlohmann::ordered_json::array();
  for (const auto& p : f.error_curve) err.push_back({{"n", p.n}, {"mean", p.mean}, {"std", p.std}});
  j["error_curve"] = std::move(err);
  j["error_model"] = to_json(f.error_model);
  j["std_model"] = to_json(f.std_model);
  j["predicted_final"] = {{"n", f.predicted_final.n},
                          {"value", f.predicted_final.value},
                          {"band_lo", f.predicted_final.band_lo},
                          {"band_hi", f.predicted_final.band_hi},
                          {"band", "error_model(n) +/- std_model(n)"}};
  if (f.observed_final)
    j["observed_final"] = {{"n", f.observed_final->n},
                           {"error_mean", f.observed_final->error_mean},
                           {"error_std", f.observed_final->error_std},
                           {"or", f.observed_final->or_value}};
  else
    j["observed_final"] = nullptr;
  return j;
}

inline constexpr std::string_view kEnsembleCurveHeader =
    "n,or,err_mean,err_std,model_err,model_band_lo,model_band_hi\n";

/// One row per grid size, then a row at the forecast size carrying the
/// observed final values when present.
inline std::string ensemble_curve_csv(const EnsembleForecast& f) {
  using detail::format_double;
  std::string out(kEnsembleCurveHeader);
  for (std::size_t i = 0; i < f.error_curve.size(); ++i) {
    const auto& p = f.error_curve[i];
    const auto pred = f.predict_at(p.n);
    out += std::to_string(p.n) + "," + format_double(f.or_curve[i].second) + "," + format_double(p.mean) + "," +
           format_double(p.std) + "," + format_double(pred.value) + "," + format_double(pred.band_lo) + "," +
           format_double(pred.band_hi) + "\n";
  }
  const auto& q = f.predicted_final;
  out += std::to_string(q.n) + ",";
  if (f.observed_final && f.observed_final->n == q.n)
    out += format_double(f.observed_final->or_value) + "," + format_double(f.observed_final->error_mean) + "," +
           format_double(f.observed_final->error_std) + ",";
  else
    out += ",,,";
  out += format_double(q.value) + "," + format_double(q.band_lo) + "," + format_double(q.band_hi) + "\n";
  return out;
}

}  // namespace bvf
