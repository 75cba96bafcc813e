#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "nightiq/evaluation.hpp"
#include "nightiq/synthetic.hpp"
#include "support/oracles.hpp"

using namespace nightiq;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, int n, bool with_ties) {
  std::vector<double> v(n);
  std::uniform_int_distribution<int> small(0, 3);
  std::uniform_real_distribution<double> u(-1, 1);
  for (auto& x : v) x = with_ties ? small(rng) : u(rng);
  return v;
}

bool constant(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
}

DatasetManifest contents_manifest(int contents, int per_content) {
  DatasetManifest m;
  for (int c = 0; c < contents; ++c)
    for (int i = 0; i < per_content; ++i)
      m.records.push_back({"img_" + std::to_string(c) + "_" + std::to_string(i) + ".png", 0.5, 0.5,
                           "scene_" + std::to_string(c), "", "t"});
  return m;
}

}  // namespace

TEST(Metrics, WorkedExamples) {
  const std::vector<double> pred{1, 2, 3, 5, 4};
  const std::vector<double> mos{1, 2, 3, 4, 5};
  EXPECT_NEAR(srcc(pred, mos), 0.9, 1e-15);
  EXPECT_NEAR(krcc(pred, mos), 0.8, 1e-15);
  EXPECT_EQ(srcc(mos, mos), 1.0);
  const std::vector<double> rev{5, 4, 3, 2, 1};
  EXPECT_EQ(srcc(rev, mos), -1.0);
  EXPECT_EQ(krcc(mos, mos), 1.0);
}

TEST(Metrics, MatchBruteForceOracles) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<int> len(3, 8);
  int checked = 0;
  while (checked < 200) {
    const int n = len(rng);
    const bool ties = checked % 2 == 0;
    const auto a = random_vector(rng, n, ties);
    const auto b = random_vector(rng, n, ties);
    if (constant(a) || constant(b)) continue;
    EXPECT_NEAR(srcc(a, b), oracle::srcc_brute(a, b), 1e-10);
    EXPECT_NEAR(krcc(a, b), oracle::krcc_brute(a, b), 1e-10);
    ++checked;
  }
}

TEST(Metrics, RankInvariance) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.1, 2.0);
  std::vector<double> a(20), b(20), cubed(20);
  for (int i = 0; i < 20; ++i) {
    a[i] = u(rng);
    b[i] = u(rng);
    cubed[i] = a[i] * a[i] * a[i];
  }
  EXPECT_NEAR(srcc(cubed, b), srcc(a, b), 1e-15);
  EXPECT_NEAR(krcc(cubed, b), krcc(a, b), 1e-15);
}

TEST(Metrics, Errors) {
  const std::vector<double> two{1, 2};
  EXPECT_THROW(srcc(two, two), MetricError);
  const std::vector<double> flat{1, 1, 1, 1};
  const std::vector<double> ramp{1, 2, 3, 4};
  EXPECT_THROW(srcc(flat, ramp), MetricError);
  const std::vector<double> five{1, 2, 3, 4, 5};
  EXPECT_THROW(plcc_rmse(five, five), MetricError);
  EXPECT_THROW(srcc(five, ramp), MetricError);
}

TEST(Logistic, IdentityAndAffine) {
  std::vector<double> mos, affine;
  for (int i = 1; i <= 9; ++i) {
    mos.push_back(i / 10.0);
    affine.push_back(2 * i / 10.0 + 0.1);
  }
  const auto same = plcc_rmse(mos, mos);
  EXPECT_NEAR(same.plcc, 1.0, 1e-6);
  EXPECT_LT(same.rmse, 1e-6);
  const auto fit = plcc_rmse(affine, mos);
  EXPECT_NEAR(fit.plcc, 1.0, 1e-6);
  EXPECT_LT(fit.rmse, 1e-6);
  EXPECT_FALSE(fit.linear_fallback);
  for (std::size_t i = 0; i < mos.size(); ++i) EXPECT_NEAR(logistic5(affine[i], fit.params), mos[i], 1e-6);
}

TEST(Logistic, SquaredPredictions) {
  std::vector<double> mos, sq;
  for (int i = 1; i <= 9; ++i) {
    mos.push_back(i / 10.0);
    sq.push_back(mos.back() * mos.back());
  }
  const auto fit = plcc_rmse(sq, mos);
  EXPECT_GT(fit.plcc, 0.999);
  // RMSE is reported on the fitted scores.
  std::vector<double> fitted;
  for (double x : sq) fitted.push_back(logistic5(x, fit.params));
  EXPECT_NEAR(fit.rmse, oracle::rmse_brute(fitted, mos), 1e-12);
}

TEST(Logistic, RmseMatchesOracleOnRandomPairs) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(8), m(8);
    for (int i = 0; i < 8; ++i) {
      p[i] = u(rng);
      m[i] = u(rng);
    }
    const auto fit = plcc_rmse(p, m);
    std::vector<double> fitted;
    for (double x : p) fitted.push_back(logistic5(x, fit.params));
    EXPECT_NEAR(fit.rmse, oracle::rmse_brute(fitted, m), 1e-10);
    EXPECT_TRUE(std::isfinite(fit.plcc));
  }
}

TEST(Folds, PartitionContents) {
  const auto m = contents_manifest(10, 3);
  const auto plan = make_folds(m, 5, 4);
  std::map<int, std::set<std::string>> by_fold;
  for (const auto& [content, fold] : plan.assignments) by_fold[fold].insert(content);
  ASSERT_EQ(by_fold.size(), 5u);
  for (const auto& [fold, contents] : by_fold) {
    EXPECT_GE(fold, 1);
    EXPECT_LE(fold, 5);
    EXPECT_EQ(contents.size(), 2u);
  }
  std::vector<int> seen(m.records.size(), 0);
  for (int f = 1; f <= 5; ++f) {
    for (std::size_t i : plan.indices_in(m, f)) {
      ++seen[i];
      EXPECT_EQ(plan.fold_of(m.records[i].content_id), f);
    }
    EXPECT_EQ(plan.indices_in(m, f).size() + plan.indices_outside(m, f).size(), m.records.size());
  }
  for (int s : seen) EXPECT_EQ(s, 1);

  const auto again = make_folds(m, 5, 4);
  EXPECT_EQ(again.assignments, plan.assignments);
  EXPECT_THROW(make_folds(contents_manifest(3, 1), 5, 0), std::invalid_argument);
  EXPECT_THROW(make_folds(m, 1, 0), std::invalid_argument);
}

TEST(Crossval, EveryImageTestedOnce) {
  oracle::TempDir dir("crossval");
  SyntheticCorpusOptions o;
  o.count = 12;
  o.size = {16, 16};
  const auto m = write_synthetic_corpus(dir.path(), o);
  for (const auto& r : m.records) save_image(eai_cache_path(r.image_path), make_eai(load_image(r.image_path), {}));
  TrainConfig cfg;
  cfg.input_size = {16, 16};
  cfg.batch_size = 6;
  cfg.epochs = 1;
  cfg.learning_rate = 1e-3;
  const auto result = crossval(m, cfg, 2, 0);
  ASSERT_EQ(result.folds.size(), 2u);
  std::multiset<std::string> tested;
  for (const auto& f : result.folds) {
    tested.insert(f.predictions.image_paths.begin(), f.predictions.image_paths.end());
    EXPECT_EQ(f.report.n, 6);
  }
  EXPECT_EQ(tested.size(), m.records.size());
  for (const auto& r : m.records) EXPECT_EQ(tested.count(r.image_path), 1u);
  EXPECT_NEAR(result.mean.srcc, (result.folds[0].report.srcc + result.folds[1].report.srcc) / 2, 1e-15);
  EXPECT_EQ(result.mean.n, 12);
}

TEST(RankN, Examples) {
  // Best MOS at index 0; its prediction ranks 2nd in the first group and 4th in the second.
  const std::vector<RankGroup> groups{
      {{0.8, 0.9, 0.1, 0.2, 0.3}, {1.0, 0.5, 0.4, 0.3, 0.2}},
      {{0.1, 0.9, 0.8, 0.7, 0.0}, {1.0, 0.5, 0.4, 0.3, 0.2}},
  };
  EXPECT_EQ(rank_n_accuracy(groups, 1), 0.0);
  EXPECT_EQ(rank_n_accuracy(groups, 2), 0.5);
  EXPECT_EQ(rank_n_accuracy(groups, 3), 0.5);
  EXPECT_EQ(rank_n_accuracy(groups, 4), 1.0);
  EXPECT_EQ(rank_n_accuracy(groups, 5), 1.0);

  const std::vector<RankGroup> perfect{{{0.3, 0.9, 0.1}, {0.3, 0.9, 0.1}}};
  EXPECT_EQ(rank_n_accuracy(perfect, 1), 1.0);
  // Tied predictions: the lower index wins.
  const std::vector<RankGroup> tied{{{0.5, 0.5, 0.5}, {0.1, 0.9, 0.2}}};
  EXPECT_EQ(rank_n_accuracy(tied, 1), 0.0);
  EXPECT_EQ(rank_n_accuracy(tied, 2), 1.0);
  EXPECT_THROW(rank_n_accuracy(groups, 6), std::invalid_argument);
}

TEST(RankN, MonotoneInN) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<RankGroup> groups(30);
  for (auto& g : groups)
    for (int i = 0; i < 15; ++i) {
      g.predicted.push_back(u(rng));
      g.mos.push_back(u(rng));
    }
  double previous = 0;
  for (int n = 1; n <= 15; ++n) {
    const double acc = rank_n_accuracy(groups, n);
    EXPECT_GE(acc, previous);
    previous = acc;
  }
  EXPECT_EQ(previous, 1.0);
}

TEST(RankN, GroupsByContent) {
  Predictions p{{"a", "b", "c", "d"}, {0.1, 0.2, 0.3, 0.4}, {0.5, 0.6, 0.7, 0.8}};
  std::vector<SampleRecord> records{
      {"a", 0.5, 0.5, "x", "", ""}, {"b", 0.6, 0.6, "y", "", ""},
      {"c", 0.7, 0.7, "x", "", ""}, {"d", 0.8, 0.8, "y", "", ""}};
  const auto groups = group_by_content(p, records);
  ASSERT_EQ(groups.size(), 2u);
  EXPECT_EQ(groups[0].predicted, (std::vector<double>{0.1, 0.3}));
  EXPECT_EQ(groups[1].mos, (std::vector<double>{0.6, 0.8}));
}

TEST(TTest, Examples) {
  const std::vector<double> a{0.9, 0.91, 0.92};
  const std::vector<double> b{0.5, 0.51, 0.52};
  const auto r = significance_ttest(a, b);
  EXPECT_EQ(r.decision, TTestDecision::kABetter);
  EXPECT_EQ(r.dof, 4);
  // Pooled variance 1e-4, so t = 0.4 / sqrt(1e-4 * 2/3).
  EXPECT_NEAR(r.statistic, 0.4 / std::sqrt(1e-4 * 2.0 / 3.0), 1e-8);
  // Two-sided p from an independent Student-t evaluation (df = 4).
  EXPECT_NEAR(r.p_value, 1.0387794650848992e-06, 1e-12);

  const auto flipped = significance_ttest(b, a);
  EXPECT_EQ(flipped.decision, TTestDecision::kBBetter);
  EXPECT_EQ(flipped.statistic, -r.statistic);
  EXPECT_EQ(flipped.p_value, r.p_value);

  const auto same = significance_ttest(a, a);
  EXPECT_EQ(same.decision, TTestDecision::kIndistinguishable);
  const std::vector<double> flat{0.7, 0.7, 0.7};
  EXPECT_EQ(significance_ttest(flat, flat).decision, TTestDecision::kIndistinguishable);
  EXPECT_THROW(significance_ttest(std::vector<double>{0.5}, a), std::invalid_argument);
}

TEST(TTest, AntisymmetricOnRandomSamples) {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.8, 0.05);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(5), b(7);
    for (auto& x : a) x = n(rng);
    for (auto& x : b) x = n(rng);
    const auto ab = significance_ttest(a, b);
    const auto ba = significance_ttest(b, a);
    EXPECT_EQ(ab.statistic, -ba.statistic);
    EXPECT_EQ(ab.p_value, ba.p_value);
    if (ab.decision == TTestDecision::kABetter) EXPECT_EQ(ba.decision, TTestDecision::kBBetter);
    if (ab.decision == TTestDecision::kIndistinguishable)
      EXPECT_EQ(ba.decision, TTestDecision::kIndistinguishable);
  }
}

TEST(Report, CsvLayout) {
  oracle::TempDir dir("report");
  CriteriaReport r;
  r.srcc = 0.5;
  r.n = 7;
  write_report_csv(dir.path() / "r.csv", r, std::vector<CriteriaReport>{r, r});
  const std::string text = oracle::read_file(dir.path() / "r.csv");
  EXPECT_EQ(text.rfind("split,n,srcc,krcc,plcc,rmse,b1,b2,b3,b4,b5,linear_fallback\n", 0), 0u);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 4);
  EXPECT_NE(format_report_table(r).find("SRCC"), std::string::npos);
}
