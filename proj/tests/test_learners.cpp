#include <gtest/gtest.h>

#include <vector>

#include "bvf/data.hpp"
#include "bvf/learners.hpp"
#include "oracles.hpp"

using namespace bvf;

namespace {

Dataset one_d(std::vector<double> x, std::vector<ClassIndex> y, int k = 2) {
  return Dataset("1d", 1, std::move(x), std::move(y), k);
}

Dataset corpus(std::uint64_t seed, std::size_t n = 400) {
  SyntheticSpec s;
  s.item_count = n;
  s.feature_count = 3;
  s.class_count = 3;
  s.separation = 1.5;
  s.clusters_per_class = 2;
  s.bayes_error = 0.05;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST(LearnerSpec, ParsesAndPrintsCanonically) {
  for (const char* s : {"gnb", "knn:k=3", "knn:k=5,norm=z", "tree:depth=8", "stump", "bag:count=25,depth=8", "majority"})
    EXPECT_EQ(to_string(parse_learner(s)), s);
  EXPECT_EQ(to_string(parse_learner("knn")), "knn:k=1");
  EXPECT_EQ(to_string(parse_learner(" tree ")), "tree:depth=8");
}

TEST(LearnerSpec, RejectsBadSpecs) {
  EXPECT_THROW(parse_learner("svm"), InputError);
  EXPECT_THROW(parse_learner("knn:k=0"), InputError);
  EXPECT_THROW(parse_learner("knn:k=abc"), InputError);
  EXPECT_THROW(parse_learner("tree:width=3"), InputError);
  EXPECT_THROW(parse_learner("gnb:x=1"), InputError);
  EXPECT_THROW(parse_learner("knn:k"), InputError);
}

TEST(Majority, PredictsModalClass) {
  const auto m = train(Learner{MajorityBaseline{}}, one_d({1, 2, 3}, {0, 0, 1}));
  for (double x : {-10.0, 0.0, 2.5, 100.0}) EXPECT_EQ(m.predict(std::vector<double>{x}), 0);
}

TEST(KNearest, OneNNReturnsOwnLabelOnTrainingItems) {
  const auto d = corpus(1);
  const auto m = train(Learner{KNearest{1}}, d);
  // Exact duplicates with different labels would break this; generated data has none.
  for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(m.predict(d.row(i)), d.label(i));
}

TEST(KNearest, PluralityAndLowestIndexTieBreak) {
  // Neighbours of x=0 in order of distance: 0.1 (class 0), 0.2 (class 0), 0.3 (class 1), far ones.
  const auto d = one_d({0.1, 0.2, 0.3, 5.0, 6.0}, {0, 0, 1, 1, 1});
  EXPECT_EQ(train(Learner{KNearest{3}}, d).predict(std::vector<double>{0.0}), 0);
  // k=2 with neighbours labelled {1, 0} -> tie -> class 0.
  const auto tie = one_d({0.1, 0.2, 5.0}, {1, 0, 1});
  EXPECT_EQ(train(Learner{KNearest{2}}, tie).predict(std::vector<double>{0.0}), 0);
}

TEST(KNearest, ZScoreUsesTrainingStatistics) {
  // Feature 1 has a huge scale; without normalisation it dominates.
  Dataset d("z", 2, {0, 0, 1, 1000, 0, 50, 1, 1050}, {0, 1, 0, 1}, 2);
  const std::vector<double> probe{0.0, 1040.0};
  EXPECT_EQ(train(Learner{KNearest{1, false}}, d).predict(probe), 1);
  EXPECT_EQ(train(Learner{KNearest{1, true}}, d).predict(probe), 0);
}

TEST(GaussianNB, SymmetricGaussiansSplitAtZero) {
  // Mirror-symmetric samples: class means exactly -2 and +2, equal variances,
  // equal priors, so the posterior equality point is x = 0.
  std::vector<double> x;
  std::vector<ClassIndex> y;
  for (double off : {-1.5, -0.7, -0.2, 0.0, 0.2, 0.7, 1.5}) {
    x.push_back(-2.0 + off);
    y.push_back(0);
    x.push_back(2.0 - off);
    y.push_back(1);
  }
  const auto m = train(Learner{GaussianNB{}}, one_d(x, y));
  for (double probe : {-5.0, -1.0, -0.05, -1e-6}) EXPECT_EQ(m.predict(std::vector<double>{probe}), 0) << probe;
  for (double probe : {1e-6, 0.05, 1.0, 5.0}) EXPECT_EQ(m.predict(std::vector<double>{probe}), 1) << probe;
}

TEST(GaussianNB, HandlesConstantFeatureAndSingletonClass) {
  Dataset d("c", 2, {1, 7, 2, 7, 3, 7}, {0, 0, 1}, 2);
  const auto m = train(Learner{GaussianNB{}}, d);
  EXPECT_EQ(m.predict(std::vector<double>{3.0, 7.0}), 1);
  EXPECT_EQ(m.predict(std::vector<double>{1.2, 7.0}), 0);
}

TEST(DecisionStump, SplitsAtMidpointAndUsesBranchMajority) {
  const auto d = one_d({1, 2, 3, 4, 10, 11, 12}, {0, 0, 0, 0, 1, 1, 0});
  const auto m = train(Learner{DecisionStump{}}, d);
  EXPECT_EQ(m.predict(std::vector<double>{6.9}), 0);
  EXPECT_EQ(m.predict(std::vector<double>{7.1}), 1);
  EXPECT_EQ(m.predict(std::vector<double>{-100.0}), 0);
}

TEST(DecisionTree, FitsTrainingDataWhenDeepEnough) {
  const auto d = corpus(2, 300);
  const auto m = train(Learner{DecisionTree{30}}, d);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (m.predict(d.row(i)) != d.label(i)) ++wrong;
  EXPECT_EQ(wrong, 0u);
}

TEST(Learners, NeverPredictAbsentClasses) {
  // Class 2 exists in the label space but not in the training set.
  Dataset d("absent", 1, {0, 1, 2, 3, 4, 5}, {0, 0, 0, 1, 1, 1}, 3);
  for (const char* spec : {"gnb", "knn:k=3", "tree:depth=4", "stump", "bag:count=5,depth=3", "majority"}) {
    const auto m = train(parse_learner(spec), d);
    for (double x = -10; x <= 10; x += 0.5) ASSERT_NE(m.predict(std::vector<double>{x}), 2) << spec;
  }
}

TEST(Learners, DeterministicAndInRange) {
  const auto d = corpus(3);
  const auto probe = corpus(4, 100);
  for (const char* spec : {"gnb", "knn:k=3", "tree:depth=8", "stump", "bag:count=7,depth=6", "majority"}) {
    auto l = parse_learner(spec);
    l.seed = 17;
    const auto a = train(l, d), b = train(l, d);
    for (std::size_t i = 0; i < probe.size(); ++i) {
      const auto y = a.predict(probe.row(i));
      ASSERT_EQ(y, b.predict(probe.row(i))) << spec;
      ASSERT_GE(y, 0);
      ASSERT_LT(y, d.class_count());
    }
  }
}

TEST(Learners, ErrorPaths) {
  const auto m = train(Learner{GaussianNB{}}, one_d({0, 1}, {0, 1}));
  EXPECT_THROW(m.predict(std::vector<double>{0.0, 1.0}), InputError);
  EXPECT_THROW(m.predict(std::vector<double>{std::nan("")}), InputError);
}
