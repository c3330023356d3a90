#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "bvf/error.hpp"
#include "bvf/rng.hpp"

namespace bvf {

using ClassIndex = int;

/// Numeric feature matrix with dense class labels 0..K-1.
///
/// Rows are items. Values are immutable once constructed, so a Dataset can be
/// shared freely between worker threads.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::string name, std::size_t feature_count, std::vector<double> features,
          std::vector<ClassIndex> labels, int class_count,
          std::vector<std::string> feature_names = {}, std::vector<std::string> class_names = {})
      : name_(std::move(name)),
        feature_count_(feature_count),
        features_(std::move(features)),
        labels_(std::move(labels)),
        class_count_(class_count),
        feature_names_(std::move(feature_names)),
        class_names_(std::move(class_names)) {
    validate();
  }

  const std::string& name() const { return name_; }
  std::size_t size() const { return labels_.size(); }
  std::size_t feature_count() const { return feature_count_; }
  int class_count() const { return class_count_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * feature_count_, feature_count_};
  }
  double at(std::size_t i, std::size_t j) const { return features_[i * feature_count_ + j]; }
  ClassIndex label(std::size_t i) const { return labels_[i]; }
  std::span<const ClassIndex> labels() const { return labels_; }
  std::span<const double> values() const { return features_; }

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const std::vector<std::string>& class_names() const { return class_names_; }

  /// Items in the given order; keeps the class count of the parent.
  Dataset subset(std::span<const std::size_t> indices) const {
    std::vector<double> f;
    f.reserve(indices.size() * feature_count_);
    std::vector<ClassIndex> l;
    l.reserve(indices.size());
    for (std::size_t idx : indices) {
      if (idx >= size()) throw InputError("subset index out of range");
      auto r = row(idx);
      f.insert(f.end(), r.begin(), r.end());
      l.push_back(labels_[idx]);
    }
    return Dataset(name_, feature_count_, std::move(f), std::move(l), class_count_, feature_names_,
                   class_names_);
  }

  bool operator==(const Dataset&) const = default;

 private:
  void validate() const {
    if (class_count_ < 2) throw InputError("dataset '" + name_ + "' needs at least 2 classes");
    if (labels_.empty()) throw InputError("dataset '" + name_ + "' has no items");
    if (feature_count_ == 0) throw InputError("dataset '" + name_ + "' has no feature columns");
    if (features_.size() != labels_.size() * feature_count_)
      throw InputError("dataset '" + name_ + "': feature matrix does not match label count");
    for (ClassIndex y : labels_)
      if (y < 0 || y >= class_count_)
        throw InputError("dataset '" + name_ + "': label outside [0, K)");
    for (double v : features_)
      if (!std::isfinite(v)) throw InputError("dataset '" + name_ + "': non-finite feature value");
  }

  std::string name_;
  std::size_t feature_count_ = 0;
  std::vector<double> features_;
  std::vector<ClassIndex> labels_;
  int class_count_ = 0;
  std::vector<std::string> feature_names_;
  std::vector<std::string> class_names_;
};

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

/// Shortest decimal that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace detail

/// Reads a comma-separated file with a header row. Every column other than
/// `label_column` must be numeric. Labels are encoded in order of first
/// appearance.
inline Dataset load_csv(const std::filesystem::path& path, std::string_view label_column = "label",
                        std::string name = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open CSV file '" + path.string() + "'");
  if (name.empty()) name = path.stem().string();

  std::string line;
  if (!std::getline(in, line)) throw InputError("CSV file '" + path.string() + "' is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);

  std::vector<std::string> header;
  for (auto cell : detail::split_commas(line)) header.emplace_back(detail::trim(cell));
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end())
    throw InputError("CSV file '" + path.string() + "' has no column named '" +
                     std::string(label_column) + "'");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());

  std::vector<std::string> feature_names;
  for (std::size_t c = 0; c < header.size(); ++c)
    if (c != label_col) feature_names.push_back(header[c]);

  std::vector<double> features;
  std::vector<ClassIndex> labels;
  std::vector<std::string> class_names;
  std::unordered_map<std::string, ClassIndex> class_lookup;

  std::size_t row_number = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++row_number;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != header.size())
      throw InputError("CSV '" + path.string() + "' row " + std::to_string(row_number) + ": expected " +
                       std::to_string(header.size()) + " cells, found " +
                       std::to_string(cells.size()));
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c == label_col) {
        std::string key(detail::trim(cells[c]));
        auto [it, inserted] = class_lookup.try_emplace(key, static_cast<ClassIndex>(class_names.size()));
        if (inserted) class_names.push_back(key);
        labels.push_back(it->second);
        continue;
      }
      const auto v = detail::parse_double(cells[c]);
      if (!v)
        throw InputError("CSV '" + path.string() + "' row " + std::to_string(row_number) +
                         ", column '" + header[c] + "': cannot parse '" +
                         std::string(detail::trim(cells[c])) + "' as a finite number");
      features.push_back(*v);
    }
  }
  if (labels.empty()) throw InputError("CSV file '" + path.string() + "' has no data rows");
  if (class_names.size() < 2)
    throw InputError("CSV file '" + path.string() + "' contains a single class");
  const auto class_count = static_cast<int>(class_names.size());
  const auto feature_count = feature_names.size();
  return Dataset(std::move(name), feature_count, std::move(features), std::move(labels), class_count,
                 std::move(feature_names), std::move(class_names));
}

/// Writes features followed by the label column. Class names are used when
/// the dataset carries them, otherwise the numeric index.
inline void save_csv(const Dataset& data, const std::filesystem::path& path,
                     std::string_view label_column = "label") {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write CSV file '" + path.string() + "'");
  for (std::size_t j = 0; j < data.feature_count(); ++j) {
    out << (j < data.feature_names().size() ? data.feature_names()[j] : "x" + std::to_string(j))
        << ',';
  }
  out << label_column << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) out << detail::format_double(v) << ',';
    const ClassIndex y = data.label(i);
    if (static_cast<std::size_t>(y) < data.class_names().size())
      out << data.class_names()[static_cast<std::size_t>(y)];
    else
      out << y;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

enum class Generator { gaussian_mixture, rule_labelled_hypercube };

inline std::string_view to_string(Generator g) {
  return g == Generator::gaussian_mixture ? "gaussian_mixture" : "rule_labelled_hypercube";
}

inline Generator parse_generator(std::string_view s) {
  if (s == "gaussian_mixture" || s == "gmm") return Generator::gaussian_mixture;
  if (s == "rule_labelled_hypercube" || s == "hypercube") return Generator::rule_labelled_hypercube;
  throw InputError("unknown generator '" + std::string(s) + "'");
}

struct SyntheticSpec {
  std::string name = "synthetic";
  Generator generator = Generator::gaussian_mixture;
  std::size_t item_count = 1000;
  std::size_t feature_count = 2;
  int class_count = 2;
  /// Probability that a label is replaced by a different, uniformly chosen class.
  double bayes_error = 0.0;
  std::uint64_t seed = 0;
  /// Gaussian mixture: distance scale between component means (unit covariance).
  double separation = 4.0;
  /// Gaussian mixture: components per class.
  int clusters_per_class = 1;
  /// Hypercube: depth of the random axis-aligned rule tree that assigns labels.
  int rule_depth = 3;
};

namespace detail {

struct RuleNode {
  std::size_t feature = 0;
  double threshold = 0.5;
  int left = -1, right = -1;  // child node indices, -1 for a leaf
  ClassIndex leaf_class = 0;
};

inline int grow_rule(std::vector<RuleNode>& nodes, Rng& rng, int depth, std::size_t features,
                     int class_count, int& leaf_counter, std::vector<double> lo, std::vector<double> hi) {
  const int id = static_cast<int>(nodes.size());
  nodes.emplace_back();
  if (depth == 0) {
    nodes[static_cast<std::size_t>(id)].leaf_class = (leaf_counter++) % class_count;
    return id;
  }
  const std::size_t f = static_cast<std::size_t>(rng.below(features));
  const double t = lo[f] + (hi[f] - lo[f]) * rng.uniform(0.3, 0.7);
  auto lhi = hi;
  lhi[f] = t;
  auto rlo = lo;
  rlo[f] = t;
  const int l = grow_rule(nodes, rng, depth - 1, features, class_count, leaf_counter, lo, lhi);
  const int r = grow_rule(nodes, rng, depth - 1, features, class_count, leaf_counter, rlo, hi);
  nodes[static_cast<std::size_t>(id)].feature = f;
  nodes[static_cast<std::size_t>(id)].threshold = t;
  nodes[static_cast<std::size_t>(id)].left = l;
  nodes[static_cast<std::size_t>(id)].right = r;
  return id;
}

}  // namespace detail

/// Deterministic synthetic dataset. Labels are generated noiselessly and then
/// each one is flipped to another class with probability `bayes_error`.
inline Dataset generate(const SyntheticSpec& spec) {
  if (spec.class_count < 2) throw InputError("synthetic spec needs class_count >= 2");
  if (spec.feature_count == 0) throw InputError("synthetic spec needs feature_count >= 1");
  if (spec.item_count < static_cast<std::size_t>(spec.class_count))
    throw InputError("synthetic spec: item_count < class_count");
  if (!(spec.bayes_error >= 0.0 && spec.bayes_error < 0.5))
    throw InputError("synthetic spec: bayes_error must lie in [0, 0.5)");
  if (spec.clusters_per_class < 1) throw InputError("synthetic spec: clusters_per_class must be >= 1");
  if (spec.rule_depth < 1) throw InputError("synthetic spec: rule_depth must be >= 1");

  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.generator)));
  const std::size_t d = spec.feature_count;
  const int k = spec.class_count;
  std::vector<double> features(spec.item_count * d);
  std::vector<ClassIndex> labels(spec.item_count);

  if (spec.generator == Generator::gaussian_mixture) {
    const auto components = static_cast<std::size_t>(k * spec.clusters_per_class);
    std::vector<double> means(components * d);
    for (double& m : means) m = spec.separation * rng.normal();
    for (std::size_t i = 0; i < spec.item_count; ++i) {
      const auto y = static_cast<ClassIndex>(rng.below(static_cast<std::uint64_t>(k)));
      const auto c = static_cast<std::size_t>(y) * static_cast<std::size_t>(spec.clusters_per_class) +
                     rng.below(static_cast<std::uint64_t>(spec.clusters_per_class));
      for (std::size_t j = 0; j < d; ++j) features[i * d + j] = means[c * d + j] + rng.normal();
      labels[i] = y;
    }
  } else {
    std::vector<detail::RuleNode> nodes;
    int leaf_counter = 0;
    detail::grow_rule(nodes, rng, spec.rule_depth, d, k, leaf_counter, std::vector<double>(d, 0.0),
                      std::vector<double>(d, 1.0));
    for (std::size_t i = 0; i < spec.item_count; ++i) {
      for (std::size_t j = 0; j < d; ++j) features[i * d + j] = rng.uniform();
      std::size_t node = 0;
      while (nodes[node].left >= 0)
        node = static_cast<std::size_t>(features[i * d + nodes[node].feature] < nodes[node].threshold
                                            ? nodes[node].left
                                            : nodes[node].right);
      labels[i] = nodes[node].leaf_class;
    }
  }

  // Label noise is drawn from its own stream so that the noiseless geometry
  // does not depend on bayes_error.
  Rng noise(mix_seed(spec.seed, 0x6e6f697365ULL));
  for (auto& y : labels) {
    if (noise.bernoulli(spec.bayes_error)) {
      const auto shift = 1 + static_cast<ClassIndex>(noise.below(static_cast<std::uint64_t>(k - 1)));
      y = (y + shift) % k;
    }
  }

  std::vector<std::string> names(d);
  for (std::size_t j = 0; j < d; ++j) names[j] = "x" + std::to_string(j);
  return Dataset(spec.name, d, std::move(features), std::move(labels), k, std::move(names));
}

/// The seeded shuffle that prefixes are cut from.
inline std::vector<std::size_t> prefix_order(std::size_t size, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x707265666978ULL));
  return rng.permutation(size);
}

/// The first n items of a seeded shuffle of the whole dataset. The shuffle
/// depends only on (dataset size, seed), so prefixes under one seed are nested.
inline Dataset prefix(const Dataset& data, std::size_t n, std::uint64_t seed) {
  if (n < 1 || n > data.size())
    throw InputError("prefix size " + std::to_string(n) + " outside [1, " +
                     std::to_string(data.size()) + "] for dataset '" + data.name() + "'");
  auto order = prefix_order(data.size(), seed);
  order.resize(n);
  return data.subset(order);
}

}  // namespace bvf
