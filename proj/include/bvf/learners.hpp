#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "bvf/data.hpp"
#include "bvf/error.hpp"
#include "bvf/rng.hpp"

namespace bvf {

// Learner kinds. Each is a plain hyperparameter record.

struct GaussianNB {
  bool operator==(const GaussianNB&) const = default;
};
struct KNearest {
  int k = 1;
  bool zscore = false;
  bool operator==(const KNearest&) const = default;
};
struct DecisionTree {
  int max_depth = 8;
  bool operator==(const DecisionTree&) const = default;
};
struct DecisionStump {
  bool operator==(const DecisionStump&) const = default;
};
struct BaggedTrees {
  int count = 10;
  int max_depth = 8;
  bool operator==(const BaggedTrees&) const = default;
};
struct MajorityBaseline {
  bool operator==(const MajorityBaseline&) const = default;
};

using LearnerKind =
    std::variant<GaussianNB, KNearest, DecisionTree, DecisionStump, BaggedTrees, MajorityBaseline>;

struct Learner {
  LearnerKind kind = MajorityBaseline{};
  /// Only consulted by stochastic kinds (bagging).
  std::uint64_t seed = 0;

  bool operator==(const Learner&) const = default;
};

// ---------------------------------------------------------------------------
// Spec strings: gnb, knn:k=3[,norm=z], tree:depth=8, stump, bag:count=25,depth=8, majority

namespace detail {

inline int parse_positive_int(std::string_view key, std::string_view value, std::string_view spec) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size() || v < 1)
    throw InputError("learner spec '" + std::string(spec) + "': '" + std::string(key) +
                     "' needs a positive integer, got '" + std::string(value) + "'");
  return v;
}

}  // namespace detail

inline Learner parse_learner(std::string_view spec) {
  const std::string_view trimmed = detail::trim(spec);
  const auto colon = trimmed.find(':');
  const std::string_view name = trimmed.substr(0, colon);
  std::vector<std::pair<std::string_view, std::string_view>> params;
  if (colon != std::string_view::npos) {
    for (auto item : detail::split_commas(trimmed.substr(colon + 1))) {
      item = detail::trim(item);
      if (item.empty()) continue;
      const auto eq = item.find('=');
      if (eq == std::string_view::npos)
        throw InputError("learner spec '" + std::string(spec) + "': expected key=value, got '" +
                         std::string(item) + "'");
      params.emplace_back(detail::trim(item.substr(0, eq)), detail::trim(item.substr(eq + 1)));
    }
  }
  auto unknown = [&](std::string_view key) {
    return InputError("learner spec '" + std::string(spec) + "': unknown parameter '" +
                      std::string(key) + "'");
  };

  Learner learner;
  if (name == "gnb") {
    if (!params.empty()) throw unknown(params.front().first);
    learner.kind = GaussianNB{};
  } else if (name == "knn") {
    KNearest knn;
    for (auto [key, value] : params) {
      if (key == "k")
        knn.k = detail::parse_positive_int(key, value, spec);
      else if (key == "norm") {
        if (value == "z")
          knn.zscore = true;
        else if (value == "none")
          knn.zscore = false;
        else
          throw InputError("learner spec '" + std::string(spec) + "': norm must be 'z' or 'none'");
      } else
        throw unknown(key);
    }
    learner.kind = knn;
  } else if (name == "tree") {
    DecisionTree tree;
    for (auto [key, value] : params) {
      if (key == "depth")
        tree.max_depth = detail::parse_positive_int(key, value, spec);
      else
        throw unknown(key);
    }
    learner.kind = tree;
  } else if (name == "stump") {
    if (!params.empty()) throw unknown(params.front().first);
    learner.kind = DecisionStump{};
  } else if (name == "bag") {
    BaggedTrees bag;
    for (auto [key, value] : params) {
      if (key == "count")
        bag.count = detail::parse_positive_int(key, value, spec);
      else if (key == "depth")
        bag.max_depth = detail::parse_positive_int(key, value, spec);
      else if (key == "seed") {
        std::uint64_t s = 0;
        auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), s);
        if (ec != std::errc() || ptr != value.data() + value.size())
          throw InputError("learner spec '" + std::string(spec) + "': bad seed");
        learner.seed = s;
      } else
        throw unknown(key);
    }
    learner.kind = bag;
  } else if (name == "majority") {
    if (!params.empty()) throw unknown(params.front().first);
    learner.kind = MajorityBaseline{};
  } else {
    throw InputError("unknown learner '" + std::string(name) + "' in spec '" + std::string(spec) + "'");
  }
  return learner;
}

/// Canonical spec string; parse_learner(to_string(l)) == l up to the seed.
inline std::string to_string(const Learner& learner) {
  struct Visitor {
    std::string operator()(const GaussianNB&) const { return "gnb"; }
    std::string operator()(const KNearest& k) const {
      return "knn:k=" + std::to_string(k.k) + (k.zscore ? ",norm=z" : "");
    }
    std::string operator()(const DecisionTree& t) const {
      return "tree:depth=" + std::to_string(t.max_depth);
    }
    std::string operator()(const DecisionStump&) const { return "stump"; }
    std::string operator()(const BaggedTrees& b) const {
      return "bag:count=" + std::to_string(b.count) + ",depth=" + std::to_string(b.max_depth);
    }
    std::string operator()(const MajorityBaseline&) const { return "majority"; }
  };
  return std::visit(Visitor{}, learner.kind);
}

// ---------------------------------------------------------------------------
// Fitted state

namespace detail {

/// Index of the largest count; ties go to the lowest class index.
template <typename T>
ClassIndex argmax_lowest(std::span<const T> values) {
  ClassIndex best = 0;
  for (std::size_t c = 1; c < values.size(); ++c)
    if (values[c] > values[static_cast<std::size_t>(best)]) best = static_cast<ClassIndex>(c);
  return best;
}

struct MajorityState {
  ClassIndex prediction = 0;
};

struct GaussianNBState {
  std::vector<ClassIndex> classes;   // classes present in training
  std::vector<double> log_prior;     // per present class
  std::vector<double> mean;          // [class][feature]
  std::vector<double> variance;      // [class][feature], floored
};

struct KNearestState {
  int k = 1;
  std::size_t dims = 0;
  std::vector<double> points;  // scaled when zscore
  std::vector<ClassIndex> labels;
  std::vector<double> center, scale;  // empty unless zscore
};

/// Flattened binary tree. A node with feature == npos is a leaf.
struct TreeState {
  struct Node {
    std::size_t feature = std::numeric_limits<std::size_t>::max();
    double threshold = 0.0;
    std::uint32_t left = 0, right = 0;
    ClassIndex leaf_class = 0;
  };
  std::vector<Node> nodes;
};

struct BaggedState {
  std::vector<TreeState> trees;
};

using FittedState = std::variant<MajorityState, GaussianNBState, KNearestState, TreeState, BaggedState>;

inline MajorityState fit_majority(const Dataset& d) {
  std::vector<std::size_t> counts(static_cast<std::size_t>(d.class_count()), 0);
  for (ClassIndex y : d.labels()) ++counts[static_cast<std::size_t>(y)];
  return {argmax_lowest<std::size_t>(counts)};
}

inline GaussianNBState fit_gnb(const Dataset& d) {
  const std::size_t p = d.feature_count();
  const std::size_t k = static_cast<std::size_t>(d.class_count());
  std::vector<std::size_t> counts(k, 0);
  for (ClassIndex y : d.labels()) ++counts[static_cast<std::size_t>(y)];

  // Global per-feature variance sets the floor.
  std::vector<double> gmean(p, 0.0), gvar(p, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < p; ++j) gmean[j] += d.at(i, j);
  for (double& m : gmean) m /= static_cast<double>(d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < p; ++j) gvar[j] += (d.at(i, j) - gmean[j]) * (d.at(i, j) - gmean[j]);
  for (double& v : gvar) v /= static_cast<double>(d.size());

  GaussianNBState s;
  std::vector<std::size_t> slot(k, 0);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    slot[c] = s.classes.size();
    s.classes.push_back(static_cast<ClassIndex>(c));
    s.log_prior.push_back(std::log(static_cast<double>(counts[c]) / static_cast<double>(d.size())));
  }
  const std::size_t present = s.classes.size();
  s.mean.assign(present * p, 0.0);
  s.variance.assign(present * p, 0.0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t c = slot[static_cast<std::size_t>(d.label(i))];
    for (std::size_t j = 0; j < p; ++j) s.mean[c * p + j] += d.at(i, j);
  }
  for (std::size_t c = 0; c < present; ++c)
    for (std::size_t j = 0; j < p; ++j)
      s.mean[c * p + j] /= static_cast<double>(counts[static_cast<std::size_t>(s.classes[c])]);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::size_t c = slot[static_cast<std::size_t>(d.label(i))];
    for (std::size_t j = 0; j < p; ++j) {
      const double dev = d.at(i, j) - s.mean[c * p + j];
      s.variance[c * p + j] += dev * dev;
    }
  }
  for (std::size_t c = 0; c < present; ++c) {
    const double n = static_cast<double>(counts[static_cast<std::size_t>(s.classes[c])]);
    for (std::size_t j = 0; j < p; ++j) {
      double floor = 1e-9 * gvar[j];
      if (floor <= 0.0) floor = 1e-9;  // constant feature: any equal floor works
      s.variance[c * p + j] = std::max(s.variance[c * p + j] / n, floor);
    }
  }
  return s;
}

inline ClassIndex predict_gnb(const GaussianNBState& s, std::span<const double> x) {
  const std::size_t p = x.size();
  std::size_t best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < s.classes.size(); ++c) {
    double score = s.log_prior[c];
    for (std::size_t j = 0; j < p; ++j) {
      const double v = s.variance[c * p + j];
      const double dev = x[j] - s.mean[c * p + j];
      score -= 0.5 * std::log(v) + 0.5 * dev * dev / v;
    }
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return s.classes[best];
}

inline KNearestState fit_knn(const Dataset& d, const KNearest& params) {
  KNearestState s;
  s.k = params.k;
  s.dims = d.feature_count();
  s.points.assign(d.values().begin(), d.values().end());
  s.labels.assign(d.labels().begin(), d.labels().end());
  if (params.zscore) {
    const std::size_t p = s.dims;
    s.center.assign(p, 0.0);
    s.scale.assign(p, 0.0);
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < p; ++j) s.center[j] += d.at(i, j);
    for (double& c : s.center) c /= static_cast<double>(d.size());
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < p; ++j)
        s.scale[j] += (d.at(i, j) - s.center[j]) * (d.at(i, j) - s.center[j]);
    for (double& v : s.scale) {
      v = std::sqrt(v / static_cast<double>(d.size()));
      if (v <= 0.0) v = 1.0;
    }
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = 0; j < p; ++j)
        s.points[i * p + j] = (s.points[i * p + j] - s.center[j]) / s.scale[j];
  }
  return s;
}

inline ClassIndex predict_knn(const KNearestState& s, std::span<const double> x, int class_count) {
  const std::size_t p = s.dims;
  std::vector<double> q(x.begin(), x.end());
  if (!s.scale.empty())
    for (std::size_t j = 0; j < p; ++j) q[j] = (q[j] - s.center[j]) / s.scale[j];

  const std::size_t n = s.labels.size();
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(s.k), n);
  // (distance, training index); ties in distance favour the earlier training item.
  std::vector<std::pair<double, std::size_t>> dist(n);
  for (std::size_t i = 0; i < n; ++i) {
    double acc = 0.0;
    const double* r = s.points.data() + i * p;
    for (std::size_t j = 0; j < p; ++j) {
      const double diff = r[j] - q[j];
      acc += diff * diff;
    }
    dist[i] = {acc, i};
  }
  std::nth_element(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k - 1), dist.end());
  // nth_element leaves the first k unordered but guarantees they are the k smallest
  // under the pair ordering, which already breaks distance ties by index.
  std::vector<std::size_t> votes(static_cast<std::size_t>(class_count), 0);
  for (std::size_t i = 0; i < k; ++i) ++votes[static_cast<std::size_t>(s.labels[dist[i].second])];
  return argmax_lowest<std::size_t>(votes);
}

/// CART-style tree: Gini impurity, binary splits at midpoints between
/// consecutive distinct values, majority-class leaves, minimum leaf size 1.
class TreeBuilder {
 public:
  TreeBuilder(const Dataset& d, int max_depth) : data_(d), max_depth_(max_depth) {
    classes_ = static_cast<std::size_t>(d.class_count());
  }

  TreeState build(std::vector<std::size_t> items) {
    TreeState tree;
    grow(tree, items, 0);
    return tree;
  }

 private:
  std::uint32_t grow(TreeState& tree, std::vector<std::size_t>& items, int depth) {
    const auto id = static_cast<std::uint32_t>(tree.nodes.size());
    tree.nodes.emplace_back();

    std::vector<std::size_t> counts(classes_, 0);
    for (std::size_t i : items) ++counts[static_cast<std::size_t>(data_.label(i))];
    tree.nodes[id].leaf_class = argmax_lowest<std::size_t>(counts);

    const std::size_t m = items.size();
    const bool pure = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; }) <= 1;
    if (depth >= max_depth_ || pure || m < 2) return id;

    const double parent = gini_sum(counts, m);
    double best_impurity = parent;
    std::size_t best_feature = std::numeric_limits<std::size_t>::max();
    double best_threshold = 0.0;

    std::vector<std::pair<double, ClassIndex>> column(m);
    std::vector<std::size_t> left(classes_);
    for (std::size_t f = 0; f < data_.feature_count(); ++f) {
      for (std::size_t t = 0; t < m; ++t) column[t] = {data_.at(items[t], f), data_.label(items[t])};
      std::sort(column.begin(), column.end());
      std::fill(left.begin(), left.end(), 0);
      for (std::size_t t = 0; t + 1 < m; ++t) {
        ++left[static_cast<std::size_t>(column[t].second)];
        if (column[t].first == column[t + 1].first) continue;
        const std::size_t nl = t + 1, nr = m - nl;
        double gl = 0.0, gr = 0.0;
        for (std::size_t c = 0; c < classes_; ++c) {
          const double l = static_cast<double>(left[c]);
          const double r = static_cast<double>(counts[c] - left[c]);
          gl += l * l;
          gr += r * r;
        }
        // Weighted Gini times m: nl*(1 - sum pl^2) + nr*(1 - sum pr^2).
        const double impurity = static_cast<double>(nl) - gl / static_cast<double>(nl) +
                                static_cast<double>(nr) - gr / static_cast<double>(nr);
        if (impurity < best_impurity - 1e-12) {
          best_impurity = impurity;
          best_feature = f;
          best_threshold = 0.5 * (column[t].first + column[t + 1].first);
          // Midpoint can round onto the upper value for adjacent doubles.
          if (!(best_threshold > column[t].first)) best_threshold = column[t + 1].first;
        }
      }
    }
    if (best_feature == std::numeric_limits<std::size_t>::max()) return id;

    std::vector<std::size_t> lo, hi;
    for (std::size_t i : items) (data_.at(i, best_feature) < best_threshold ? lo : hi).push_back(i);
    items.clear();
    items.shrink_to_fit();
    tree.nodes[id].feature = best_feature;
    tree.nodes[id].threshold = best_threshold;
    const auto l = grow(tree, lo, depth + 1);
    const auto r = grow(tree, hi, depth + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
    return id;
  }

  static double gini_sum(const std::vector<std::size_t>& counts, std::size_t m) {
    double sq = 0.0;
    for (std::size_t c : counts) sq += static_cast<double>(c) * static_cast<double>(c);
    return static_cast<double>(m) - sq / static_cast<double>(m);
  }

  const Dataset& data_;
  int max_depth_;
  std::size_t classes_ = 0;
};

inline TreeState fit_tree(const Dataset& d, int max_depth, std::vector<std::size_t> items) {
  return TreeBuilder(d, max_depth).build(std::move(items));
}

inline ClassIndex predict_tree(const TreeState& t, std::span<const double> x) {
  std::size_t node = 0;
  while (t.nodes[node].feature != std::numeric_limits<std::size_t>::max())
    node = x[t.nodes[node].feature] < t.nodes[node].threshold ? t.nodes[node].left : t.nodes[node].right;
  return t.nodes[node].leaf_class;
}

}  // namespace detail

/// A learner fitted to one training set. Immutable; predict is const and
/// thread-safe.
class TrainedModel {
 public:
  TrainedModel(Learner learner, int class_count, std::size_t feature_count, detail::FittedState state)
      : learner_(std::move(learner)),
        class_count_(class_count),
        feature_count_(feature_count),
        state_(std::make_shared<const detail::FittedState>(std::move(state))) {}

  const Learner& learner() const { return learner_; }
  int class_count() const { return class_count_; }
  std::size_t feature_count() const { return feature_count_; }

  /// Crisp class decision; ties go to the lowest class index.
  ClassIndex predict(std::span<const double> item) const {
    if (item.size() != feature_count_)
      throw InputError("predict: item has " + std::to_string(item.size()) + " features, model expects " +
                       std::to_string(feature_count_));
    for (double v : item)
      if (!std::isfinite(v)) throw InputError("predict: non-finite feature value");
    return predict_unchecked(item);
  }

  ClassIndex predict_unchecked(std::span<const double> item) const {
    struct Visitor {
      std::span<const double> x;
      int k;
      ClassIndex operator()(const detail::MajorityState& s) const { return s.prediction; }
      ClassIndex operator()(const detail::GaussianNBState& s) const { return detail::predict_gnb(s, x); }
      ClassIndex operator()(const detail::KNearestState& s) const { return detail::predict_knn(s, x, k); }
      ClassIndex operator()(const detail::TreeState& s) const { return detail::predict_tree(s, x); }
      ClassIndex operator()(const detail::BaggedState& s) const {
        std::vector<std::size_t> votes(static_cast<std::size_t>(k), 0);
        for (const auto& tree : s.trees) ++votes[static_cast<std::size_t>(detail::predict_tree(tree, x))];
        return detail::argmax_lowest<std::size_t>(votes);
      }
    };
    return std::visit(Visitor{item, class_count_}, *state_);
  }

 private:
  Learner learner_;
  int class_count_;
  std::size_t feature_count_;
  std::shared_ptr<const detail::FittedState> state_;
};

inline TrainedModel train(const Learner& learner, const Dataset& training_set) {
  if (training_set.size() == 0) throw InputError("train: empty training set");
  std::vector<std::size_t> all(training_set.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  struct Visitor {
    const Dataset& d;
    const Learner& learner;
    std::vector<std::size_t>& all;
    detail::FittedState operator()(const GaussianNB&) const { return detail::fit_gnb(d); }
    detail::FittedState operator()(const KNearest& k) const {
      if (k.k < 1) throw InputError("knn: k must be >= 1");
      return detail::fit_knn(d, k);
    }
    detail::FittedState operator()(const DecisionTree& t) const {
      if (t.max_depth < 1) throw InputError("tree: max_depth must be >= 1");
      return detail::fit_tree(d, t.max_depth, all);
    }
    detail::FittedState operator()(const DecisionStump&) const { return detail::fit_tree(d, 1, all); }
    detail::FittedState operator()(const BaggedTrees& b) const {
      if (b.count < 1 || b.max_depth < 1) throw InputError("bag: count and depth must be >= 1");
      detail::BaggedState s;
      s.trees.reserve(static_cast<std::size_t>(b.count));
      for (int t = 0; t < b.count; ++t) {
        Rng rng(mix_seed(learner.seed, static_cast<std::uint64_t>(t)));
        std::vector<std::size_t> sample(d.size());
        for (auto& i : sample) i = static_cast<std::size_t>(rng.below(d.size()));
        s.trees.push_back(detail::fit_tree(d, b.max_depth, std::move(sample)));
      }
      return s;
    }
    detail::FittedState operator()(const MajorityBaseline&) const { return detail::fit_majority(d); }
  };
  auto state = std::visit(Visitor{training_set, learner, all}, learner.kind);
  return TrainedModel(learner, training_set.class_count(), training_set.feature_count(), std::move(state));
}

inline ClassIndex predict(const TrainedModel& model, std::span<const double> item) {
  return model.predict(item);
}

}  // namespace bvf
