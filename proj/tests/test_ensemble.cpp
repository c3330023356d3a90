#include <gtest/gtest.h>

#include <cmath>

#include "bvf/data.hpp"
#include "bvf/decomp.hpp"
#include "bvf/ensemble.hpp"
#include "bvf/rng.hpp"

using namespace bvf;

namespace {

Dataset synth(std::uint64_t seed, std::size_t n, double bayes = 0.05, double sep = 2.0) {
  SyntheticSpec s;
  s.item_count = n;
  s.feature_count = 3;
  s.class_count = 3;
  s.separation = sep;
  s.bayes_error = bayes;
  s.seed = seed;
  return generate(s);
}

}  // namespace

TEST(EnsembleSpec, ParsesMembersAndCombiner) {
  const auto e = parse_ensemble("ens:plurality[gnb|knn:k=1|tree:depth=8|stump|knn:k=3]");
  EXPECT_EQ(e.combiner, Combiner::plurality);
  ASSERT_EQ(e.members.size(), 5u);
  EXPECT_EQ(to_string(e.members[3]), "stump");
  EXPECT_EQ(to_string(e), "ens:plurality[gnb|knn:k=1|tree:depth=8|stump|knn:k=3]");
  EXPECT_EQ(parse_ensemble("ens:weighted[gnb|stump]").combiner, Combiner::accuracy_weighted);
  EXPECT_THROW(parse_ensemble("plurality[gnb|stump]"), InputError);
  EXPECT_THROW(parse_ensemble("ens:plurality[gnb]"), InputError);
  EXPECT_THROW(parse_ensemble("ens:median[gnb|stump]"), InputError);
  EXPECT_THROW(parse_ensemble("ens:plurality[gnb|svm]"), InputError);
}

TEST(Voting, PluralityAndTieBreak) {
  // Majority-baseline members whose votes are fixed by their training labels.
  const Dataset zeros("z", 1, {0, 1, 2}, {0, 0, 0}, 2);
  const Dataset ones("o", 1, {0, 1, 2}, {1, 1, 1}, 2);
  auto m0 = train(Learner{MajorityBaseline{}}, zeros);
  auto m1 = train(Learner{MajorityBaseline{}}, ones);
  const std::vector<double> x{0.5};
  EXPECT_EQ(TrainedEnsemble({m0, m0, m1}, {1, 1, 1}, 2).predict(x), 0);
  EXPECT_EQ(TrainedEnsemble({m1, m1, m0}, {1, 1, 1}, 2).predict(x), 1);
  EXPECT_EQ(TrainedEnsemble({m0, m1}, {1, 1}, 2).predict(x), 0);
  EXPECT_EQ(TrainedEnsemble({m1, m0}, {1, 1}, 2).predict(x), 0);
  EXPECT_EQ(TrainedEnsemble({m0, m1}, {0.4, 0.6}, 2).predict(x), 1);
}

TEST(Voting, AccuracyWeightsAreNormalisedTrainingAccuracy) {
  const auto d = synth(1, 200);
  const auto e = train_ensemble(parse_ensemble("ens:weighted[majority|tree:depth=12]"), d);
  const auto w = e.weights();
  ASSERT_EQ(w.size(), 2u);
  EXPECT_NEAR(w[0] + w[1], 1.0, 1e-15);
  EXPECT_GT(w[1], w[0]);
}

TEST(Voting, DuplicatingAMajorityMemberNeverChangesTheVote) {
  const auto d = synth(2, 300);
  const auto probe = synth(3, 200);
  auto base = parse_ensemble("ens:plurality[gnb|knn:k=3|stump]");
  const auto e = train_ensemble(base, d);
  std::vector<TrainedModel> models;
  for (const auto& l : base.members) models.push_back(train(l, d));
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const auto y = e.predict(probe.row(i));
    // Add a copy of a member that voted with the winner.
    for (const auto& m : models) {
      if (m.predict(probe.row(i)) != y) continue;
      auto more = models;
      more.push_back(m);
      ASSERT_EQ(TrainedEnsemble(more, std::vector<double>(more.size(), 1.0), d.class_count()).predict(probe.row(i)), y);
      break;
    }
  }
}

TEST(EnsembleSscv, SingleMemberMatchesRunSscv) {
  const auto d = synth(4, 120);
  VotingEnsemble one;
  one.members = {parse_learner("bag:count=3,depth=4")};
  const SSCVConfig cfg{10, 4, 99};
  EXPECT_EQ(ensemble_predictions(d, one, cfg), run_sscv(d, one.members[0], cfg));
}

TEST(Oracle, CountsPartition) {
  std::vector<PredictionRecord> recs;
  for (std::size_t i = 0; i < 5; ++i) recs.push_back({i, 0, {0, 0, 0}});
  for (std::size_t i = 5; i < 7; ++i) recs.push_back({i, 1, {0, 0, 0}});
  for (std::size_t i = 7; i < 10; ++i) recs.push_back({i, 1, {1, 0, 1}});
  const auto p = oracle_partition(recs);
  EXPECT_EQ(p.a_plus, 5u);
  EXPECT_EQ(p.a_minus, 2u);
  EXPECT_EQ(p.b_count, 3u);
  EXPECT_EQ(p.total, 10u);
  EXPECT_DOUBLE_EQ(p.or_value, 0.2);

  std::vector<PredictionRecord> perfect{{0, 1, {1, 1}}, {1, 0, {0, 0}}};
  EXPECT_EQ(oracle_partition(perfect).a_plus, 2u);
  EXPECT_EQ(oracle_partition(perfect).or_value, 0.0);
  EXPECT_THROW(oracle_partition(std::vector<PredictionRecord>{{0, 0, {0}}, {1, 0, {0, 0}}}), InputError);

  // Always wrong but with two different wrong classes: bias2 is 0.75, so the item is in B.
  std::vector<PredictionRecord> scattered{{0, 0, {1, 2, 1, 2}}, {1, 0, {1, 1, 1, 1}}};
  const auto q = oracle_partition(scattered);
  EXPECT_EQ(q.a_minus, 1u);
  EXPECT_EQ(q.b_count, 1u);
  EXPECT_DOUBLE_EQ(decompose_item(scattered[0], 3).bias2, 0.75);
}

TEST(OracleProperty, BoundSandwichAndOrderInvariance) {
  Rng rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng.below(4));
    const std::size_t l = 1 + rng.below(10), items = 1 + rng.below(50);
    std::vector<PredictionRecord> recs;
    for (std::size_t i = 0; i < items; ++i) {
      PredictionRecord r{i, static_cast<ClassIndex>(rng.below(k)), {}};
      const double style = rng.uniform();
      for (std::size_t j = 0; j < l; ++j) {
        ClassIndex y = static_cast<ClassIndex>(rng.below(k));
        if (style < 0.3) y = r.true_label;
        else if (style < 0.5) y = (r.true_label + 1) % k;
        r.predictions.push_back(y);
      }
      recs.push_back(r);
    }
    const auto p = oracle_partition(recs);
    ASSERT_EQ(p.a_plus + p.a_minus + p.b_count, p.total);
    const double bias = decompose(recs, k).bias2;
    const double upper = p.or_value + static_cast<double>(p.b_count) / static_cast<double>(p.total);
    ASSERT_LE(p.or_value, bias + 1e-12);
    ASSERT_LE(bias, upper + 1e-12);
    if (p.b_count > 0) {
      ASSERT_LT(p.or_value, bias);
    }

    // Reordering items or repeats leaves the partition unchanged.
    auto shuffled = recs;
    rng.shuffle(std::span<PredictionRecord>(shuffled));
    for (auto& r : shuffled) std::reverse(r.predictions.begin(), r.predictions.end());
    const auto q = oracle_partition(shuffled);
    ASSERT_EQ(q.a_minus, p.a_minus);
    ASSERT_EQ(q.a_plus, p.a_plus);
  }
}

TEST(OrProgression, IdentityAndConstant) {
  const std::vector<std::pair<double, double>> id{{0.1, 0.1}, {0.2, 0.2}, {0.05, 0.05}};
  const auto m = or_progression_model(id);
  EXPECT_NEAR(m.slope, 1.0, 1e-12);
  EXPECT_NEAR(m.intercept, 0.0, 1e-12);
  EXPECT_NEAR(m.r2, 1.0, 1e-12);
  const std::vector<std::pair<double, double>> flat{{0.1, 0.12}, {0.2, 0.12}, {0.3, 0.12}};
  EXPECT_NEAR(or_progression_model(flat).slope, 0.0, 1e-15);
}

TEST(RepeatErrors, MeanAndSampleStd) {
  // Per-repeat error rates: 0.5, 0.0, 1.0.
  std::vector<PredictionRecord> recs{{0, 0, {1, 0, 1}}, {1, 0, {0, 0, 1}}};
  const auto [mean, sd] = repeat_error_stats(recs);
  EXPECT_NEAR(mean, 0.5, 1e-15);
  EXPECT_NEAR(sd, 0.5, 1e-15);
}

TEST(ForecastEnsemble, DefaultGrid) {
  const auto g = default_ensemble_grid();
  ASSERT_EQ(g.size(), 46u);
  EXPECT_EQ(g.front(), 100u);
  EXPECT_EQ(g[1], 120u);
  EXPECT_EQ(g.back(), 1000u);
}

TEST(ForecastEnsemble, InjectedFloorIsRecovered) {
  const auto d = synth(5, 1300, 0.10, 6.0);
  const auto ens = parse_ensemble("ens:plurality[gnb|knn:k=1|tree:depth=8|stump|knn:k=3]");
  std::vector<std::size_t> grid;
  for (std::size_t n = 100; n <= 1000; n += 100) grid.push_back(n);
  EnsembleForecastOptions opt;
  opt.prefix_seed = 3;
  const auto f = forecast_ensemble(d, ens, grid, {10, 10, 8}, opt);
  EXPECT_NEAR(f.or_constant, 0.10, 0.02);
  EXPECT_EQ(f.error_model.asymptote, f.or_constant);
  EXPECT_GE(f.predicted_final.value, f.or_constant);
  for (double n = 1; n < 1e6; n *= 3) EXPECT_GE(f.error_model(n), f.or_constant);
  ASSERT_TRUE(f.observed_final.has_value());
  EXPECT_EQ(f.observed_final->n, d.size());
  const auto csv = ensemble_curve_csv(f);
  EXPECT_EQ(csv.substr(0, csv.find('\n') + 1), kEnsembleCurveHeader);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), static_cast<long>(grid.size() + 2));
}

TEST(ForecastEnsemble, Errors) {
  const auto d = synth(6, 300);
  const auto ens = parse_ensemble("ens:plurality[gnb|stump]");
  EXPECT_THROW(forecast_ensemble(d, ens, {100, 200}, {}), InputError);
  EXPECT_THROW(forecast_ensemble(d, ens, {100, 300, 200}, {}), InputError);
  EXPECT_THROW(forecast_ensemble(d, ens, {100, 200, 400}, {}), InputError);
}
