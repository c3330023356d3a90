#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bvf/data.hpp"
#include "bvf/learners.hpp"

namespace fs = std::filesystem;
using namespace bvf;

namespace {

fs::path temp_file(const std::string& name, const std::string& content) {
  const auto dir = fs::temp_directory_path() / "bvf_test_data";
  fs::create_directories(dir);
  const auto path = dir / name;
  std::ofstream(path) << content;
  return path;
}

}  // namespace

TEST(LoadCsv, EncodesLabelsByFirstAppearance) {
  const auto path = temp_file("three.csv", "x,label,y\n1.5,a,2\n-3,b,4e-1\n0,a,7\n");
  const auto d = load_csv(path);
  EXPECT_EQ(d.size(), 3u);
  EXPECT_EQ(d.feature_count(), 2u);
  EXPECT_EQ(d.class_count(), 2);
  EXPECT_EQ(std::vector<ClassIndex>(d.labels().begin(), d.labels().end()), (std::vector<ClassIndex>{0, 1, 0}));
  EXPECT_DOUBLE_EQ(d.at(1, 0), -3.0);
  EXPECT_DOUBLE_EQ(d.at(1, 1), 0.4);
  EXPECT_EQ(d.class_names(), (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(d.name(), "three");
}

TEST(LoadCsv, FirstAppearanceIsNotLexicographic) {
  const auto path = temp_file("order.csv", "f,label\n1,zeta\n2,alpha\n3,zeta\n");
  const auto d = load_csv(path);
  EXPECT_EQ(d.label(0), 0);
  EXPECT_EQ(d.label(1), 1);
  EXPECT_EQ(d.class_names().front(), "zeta");
}

TEST(LoadCsv, ReportsRowAndColumnOfBadCell) {
  const auto path = temp_file("bad.csv", "f1,f2,label\n1,2,a\n3,oops,b\n");
  try {
    load_csv(path);
    FAIL() << "expected an InputError";
  } catch (const InputError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("row 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'f2'"), std::string::npos) << msg;
  }
}

TEST(LoadCsv, ErrorPaths) {
  EXPECT_THROW(load_csv("/nonexistent/file.csv"), InputError);
  EXPECT_THROW(load_csv(temp_file("one_class.csv", "f,label\n1,a\n2,a\n")), InputError);
  EXPECT_THROW(load_csv(temp_file("no_label.csv", "f,g\n1,2\n")), InputError);
  EXPECT_THROW(load_csv(temp_file("nan.csv", "f,label\nnan,a\n1,b\n")), InputError);
  EXPECT_THROW(load_csv(temp_file("ragged.csv", "f,label\n1,a,3\n")), InputError);
  EXPECT_NO_THROW(load_csv(temp_file("custom.csv", "f,cls\n1,a\n2,b\n"), "cls"));
}

TEST(LoadCsv, SegmentShapedFile) {
  std::string content;
  for (int j = 0; j < 18; ++j) content += "f" + std::to_string(j) + ",";
  content += "label\n";
  for (int i = 0; i < 2310; ++i) {
    for (int j = 0; j < 18; ++j) content += std::to_string((i * 31 + j * 7) % 97) + ".25,";
    content += "c" + std::to_string(i % 7) + "\n";
  }
  const auto d = load_csv(temp_file("segment.csv", content));
  EXPECT_EQ(d.size(), 2310u);
  EXPECT_EQ(d.feature_count(), 18u);
  EXPECT_EQ(d.class_count(), 7);
}

TEST(SaveCsv, RoundTripsExactly) {
  SyntheticSpec spec;
  spec.item_count = 200;
  spec.feature_count = 4;
  spec.class_count = 3;
  spec.seed = 99;
  const auto d = generate(spec);
  const auto path = fs::temp_directory_path() / "bvf_test_data" / "roundtrip.csv";
  save_csv(d, path);
  const auto back = load_csv(path, "label", d.name());
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.feature_count(); ++j) ASSERT_EQ(back.at(i, j), d.at(i, j));
  // Labels come back re-encoded by first appearance; the partition is preserved.
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t k = 0; k < d.size(); ++k) ASSERT_EQ(d.label(i) == d.label(k), back.label(i) == back.label(k));
}

TEST(Dataset, RejectsInvalidContents) {
  EXPECT_THROW(Dataset("x", 1, {1.0}, {0}, 1), InputError);
  EXPECT_THROW(Dataset("x", 1, {1.0}, {2}, 2), InputError);
  EXPECT_THROW(Dataset("x", 1, {1.0, 2.0}, {0}, 2), InputError);
  EXPECT_THROW(Dataset("x", 1, {std::nan("")}, {0}, 2), InputError);
  EXPECT_THROW(Dataset("x", 1, {}, {}, 2), InputError);
}

TEST(Generate, IsDeterministic) {
  SyntheticSpec spec;
  spec.generator = Generator::rule_labelled_hypercube;
  spec.item_count = 500;
  spec.feature_count = 5;
  spec.class_count = 3;
  spec.bayes_error = 0.2;
  spec.seed = 1234;
  EXPECT_EQ(generate(spec), generate(spec));
  spec.seed = 1235;
  SyntheticSpec other = spec;
  other.seed = 1234;
  EXPECT_FALSE(generate(spec) == generate(other));
}

TEST(Generate, LabelNoiseRateWithinBinomialBand) {
  for (auto g : {Generator::gaussian_mixture, Generator::rule_labelled_hypercube}) {
    SyntheticSpec clean;
    clean.generator = g;
    clean.item_count = 10000;
    clean.feature_count = 3;
    clean.class_count = 3;
    clean.seed = 7;
    SyntheticSpec noisy = clean;
    noisy.bayes_error = 0.1;
    const auto a = generate(clean), b = generate(noisy);
    std::size_t flipped = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ASSERT_EQ(a.at(i, 0), b.at(i, 0));
      if (a.label(i) != b.label(i)) ++flipped;
    }
    const double rate = static_cast<double>(flipped) / 10000.0;
    // 3 sigma: 0.1 +/- 3 * sqrt(0.1 * 0.9 / 10000) = [0.091, 0.109]
    EXPECT_GE(rate, 0.091);
    EXPECT_LE(rate, 0.109);
  }
}

TEST(Generate, SeparatedMixtureIsNearlyPerfectFor1NN) {
  SyntheticSpec spec;
  spec.item_count = 1000;
  spec.feature_count = 4;
  spec.class_count = 3;
  spec.separation = 10.0;
  spec.seed = 5;
  const auto d = generate(spec);
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t i = 0; i < d.size(); ++i) (i % 2 ? test_idx : train_idx).push_back(i);
  const auto model = train(Learner{KNearest{1}}, d.subset(train_idx));
  std::size_t wrong = 0;
  for (std::size_t i : test_idx)
    if (model.predict(d.row(i)) != d.label(i)) ++wrong;
  EXPECT_LT(static_cast<double>(wrong) / static_cast<double>(test_idx.size()), 0.05);
}

TEST(Generate, RejectsBadSpecs) {
  SyntheticSpec spec;
  spec.item_count = 1;
  spec.class_count = 2;
  EXPECT_THROW(generate(spec), InputError);
  spec.item_count = 10;
  spec.bayes_error = 0.5;
  EXPECT_THROW(generate(spec), InputError);
}

TEST(Prefix, FullSizeIsPermutation) {
  SyntheticSpec spec;
  spec.item_count = 300;
  spec.seed = 3;
  const auto d = generate(spec);
  const auto p = prefix(d, d.size(), 42);
  ASSERT_EQ(p.size(), d.size());
  std::vector<double> a(d.values().begin(), d.values().end()), b(p.values().begin(), p.values().end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  EXPECT_EQ(a, b);
}

TEST(Prefix, IsNestedUnderOneSeed) {
  SyntheticSpec spec;
  spec.item_count = 13000;
  spec.feature_count = 3;
  spec.seed = 11;
  const auto d = generate(spec);
  const auto big = prefix(d, 1000, 77);
  for (std::size_t n = 100; n <= 1000; n += 100) {
    const auto small = prefix(d, n, 77);
    ASSERT_EQ(small.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      ASSERT_EQ(small.label(i), big.label(i));
      for (std::size_t j = 0; j < d.feature_count(); ++j) ASSERT_EQ(small.at(i, j), big.at(i, j));
    }
  }
}

TEST(Prefix, RejectsOutOfRange) {
  SyntheticSpec spec;
  spec.item_count = 50;
  const auto d = generate(spec);
  EXPECT_THROW(prefix(d, 0, 1), InputError);
  EXPECT_THROW(prefix(d, 51, 1), InputError);
}
