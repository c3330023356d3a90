#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "bvf/data.hpp"
#include "bvf/error.hpp"
#include "bvf/learners.hpp"
#include "bvf/rng.hpp"

namespace bvf {

/// Sub-sampled cross-validation: N-fold CV repeated l times with fresh
/// partitions, so every item is classified once per repeat.
struct SSCVConfig {
  int folds = 10;
  int repeats = 10;
  std::uint64_t seed = 0;

  void validate(std::size_t n) const {
    if (folds < 2) throw InputError("SSCV needs at least 2 folds");
    if (repeats < 1) throw InputError("SSCV needs at least 1 repeat");
    if (static_cast<std::size_t>(folds) > n)
      throw InputError("SSCV: " + std::to_string(folds) + " folds exceed " + std::to_string(n) + " items");
  }
};

/// Held-out predictions for one item, one per repeat.
struct PredictionRecord {
  std::size_t item_index = 0;
  ClassIndex true_label = 0;
  std::vector<ClassIndex> predictions;

  bool operator==(const PredictionRecord&) const = default;
};

/// Per-item Kohavi-Wolpert terms. Noise is folded into bias2.
struct ItemTerms {
  double bias2 = 0.0;
  double variance = 0.0;
  double error = 0.0;
};

struct Decomposition {
  double bias2 = 0.0;
  double variance = 0.0;
  double error = 0.0;
  std::size_t n = 0;
  std::string dataset;
  std::string learner;
};

/// One (repeat, fold) split of an SSCV run.
struct FoldSplit {
  int repeat = 0;
  int fold = 0;
  std::span<const std::size_t> train;
  std::span<const std::size_t> test;
};

/// Calls `visit` for every (repeat, fold) split in a fixed order. Repeat r
/// shuffles with a seed derived from (config.seed, r); when N does not divide
/// n the first (n mod N) folds take one extra item.
inline void for_each_split(std::size_t n, const SSCVConfig& config,
                           const std::function<void(const FoldSplit&)>& visit) {
  config.validate(n);
  const auto folds = static_cast<std::size_t>(config.folds);
  const std::size_t base = n / folds, extra = n % folds;
  std::vector<std::size_t> train;
  train.reserve(n);
  for (int r = 0; r < config.repeats; ++r) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(r)));
    const auto order = rng.permutation(n);
    std::size_t begin = 0;
    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t len = base + (f < extra ? 1 : 0);
      train.clear();
      train.insert(train.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(begin));
      train.insert(train.end(), order.begin() + static_cast<std::ptrdiff_t>(begin + len), order.end());
      visit(FoldSplit{r, static_cast<int>(f), train, std::span<const std::size_t>(order).subspan(begin, len)});
      begin += len;
    }
  }
}

/// Seed handed to a stochastic learner for one split.
inline std::uint64_t split_learner_seed(std::uint64_t learner_seed, std::uint64_t sscv_seed, int repeat,
                                        int fold) {
  return mix_seed(mix_seed(mix_seed(learner_seed, sscv_seed), static_cast<std::uint64_t>(repeat)),
                  static_cast<std::uint64_t>(fold));
}

inline std::vector<PredictionRecord> run_sscv(const Dataset& data, const Learner& learner,
                                              const SSCVConfig& config) {
  std::vector<PredictionRecord> records(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    records[i].item_index = i;
    records[i].true_label = data.label(i);
    records[i].predictions.resize(static_cast<std::size_t>(config.repeats));
  }
  for_each_split(data.size(), config, [&](const FoldSplit& split) {
    Learner seeded = learner;
    seeded.seed = split_learner_seed(learner.seed, config.seed, split.repeat, split.fold);
    const auto model = train(seeded, data.subset(split.train));
    for (std::size_t i : split.test)
      records[i].predictions[static_cast<std::size_t>(split.repeat)] = model.predict_unchecked(data.row(i));
  });
  return records;
}

/// Kohavi-Wolpert terms for one item from its empirical prediction
/// frequencies p_y, treating the observed label t as the target:
///   bias2 = 1/2 [(1 - p_t)^2 + sum_{y != t} p_y^2]
///   variance = 1/2 (1 - sum_y p_y^2)
///   error = 1 - p_t
inline ItemTerms decompose_item(const PredictionRecord& record, int class_count) {
  if (record.predictions.empty()) throw InputError("decompose: record without predictions");
  std::vector<double> counts(static_cast<std::size_t>(class_count), 0.0);
  for (ClassIndex y : record.predictions) {
    if (y < 0 || y >= class_count) throw InputError("decompose: prediction outside [0, K)");
    counts[static_cast<std::size_t>(y)] += 1.0;
  }
  if (record.true_label < 0 || record.true_label >= class_count)
    throw InputError("decompose: true label outside [0, K)");
  const double l = static_cast<double>(record.predictions.size());
  const auto t = static_cast<std::size_t>(record.true_label);
  double sum_sq = 0.0, off_sq = 0.0;
  for (std::size_t y = 0; y < counts.size(); ++y) {
    const double p = counts[y] / l;
    sum_sq += p * p;
    if (y != t) off_sq += p * p;
  }
  const double pt = counts[t] / l;
  ItemTerms terms;
  terms.bias2 = 0.5 * ((1.0 - pt) * (1.0 - pt) + off_sq);
  terms.variance = 0.5 * (1.0 - sum_sq);
  terms.error = 1.0 - pt;
  return terms;
}

inline std::vector<ItemTerms> decompose_items(std::span<const PredictionRecord> records, int class_count) {
  if (records.empty()) throw InputError("decompose: no records");
  const std::size_t l = records.front().predictions.size();
  std::vector<ItemTerms> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.predictions.size() != l) throw InputError("decompose: records disagree on repeat count");
    out.push_back(decompose_item(r, class_count));
  }
  return out;
}

/// Unweighted means of the per-item terms (uniform P(x)).
inline Decomposition decompose(std::span<const PredictionRecord> records, int class_count) {
  const auto items = decompose_items(records, class_count);
  Decomposition d;
  for (const auto& t : items) {
    d.bias2 += t.bias2;
    d.variance += t.variance;
    d.error += t.error;
  }
  const double m = static_cast<double>(items.size());
  d.bias2 /= m;
  d.variance /= m;
  d.error /= m;
  d.n = items.size();
  return d;
}

// ---------------------------------------------------------------------------
// Run records: one JSON object per (dataset, learner, n) cell.

struct RunRecord {
  std::string dataset;
  std::string learner;
  std::size_t n = 0;
  int folds = 10;
  int repeats = 10;
  std::uint64_t seed = 0;
  double bias2 = 0.0;
  double variance = 0.0;
  double error = 0.0;
  /// Estimate on the full dataset rather than a prefix.
  bool final = false;

  Decomposition decomposition() const { return {bias2, variance, error, n, dataset, learner}; }
  bool operator==(const RunRecord&) const = default;
};

inline nlohmann::ordered_json to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["dataset"] = r.dataset;
  j["learner"] = r.learner;
  j["n"] = r.n;
  j["folds"] = r.folds;
  j["repeats"] = r.repeats;
  j["seed"] = r.seed;
  j["bias2"] = r.bias2;
  j["variance"] = r.variance;
  j["error"] = r.error;
  j["final"] = r.final;
  return j;
}

inline RunRecord run_record_from_json(const nlohmann::json& j) {
  try {
    RunRecord r;
    r.dataset = j.at("dataset").get<std::string>();
    r.learner = j.at("learner").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.folds = j.at("folds").get<int>();
    r.repeats = j.at("repeats").get<int>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.bias2 = j.at("bias2").get<double>();
    r.variance = j.at("variance").get<double>();
    r.error = j.at("error").get<double>();
    r.final = j.value("final", false);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed run record: ") + e.what());
  }
}

}  // namespace bvf
