#include <gtest/gtest.h>

#include <map>
#include <set>

#include "helpers.hpp"

using namespace sgte;
using sgte::testing::ext;
using sgte::testing::ms;
using sgte::testing::Tables;
using sgte::testing::discrete_population;

namespace {

const SubgroupSpec kFirstColumn{{0}, {{1.0}, {2.0}}};

}  // namespace

TEST(OracleEquivalence, AllEstimatorsMatchEnumeration) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Dataset d = discrete_population(seed);
    const Tables tab(d);
    for (const TargetSpec t : {TargetSpec::internal(1), TargetSpec::internal(2), TargetSpec::external()}) {
      const CrossFit cf = fixed_nuisances(d, tab.exact(), t);
      for (int a = 0; a <= 1; ++a) {
        for (int x1 = 1; x1 <= 2; ++x1) {
          const double g = tab.g_formula(t, a, x1);
          EXPECT_NEAR(tab.weighted(t, a, x1), g, 1e-10);
          for (Method m : {Method::DR, Method::PlugIn, Method::IPTW}) {
            const double v = estimate(d, cf, m, a, kFirstColumn, {double(x1)}).point;
            EXPECT_NEAR(v, g, 1e-10) << t.label() << " " << method_name(m) << " a=" << a << " x1=" << x1;
          }
        }
      }
    }
  }
}

TEST(OracleEquivalence, NamedEntryPointsCheckTargetKind) {
  const Dataset d = discrete_population(9);
  const Tables tab(d);
  const CrossFit in = fixed_nuisances(d, tab.exact(), TargetSpec::internal(1));
  const CrossFit ex = fixed_nuisances(d, tab.exact(), TargetSpec::external());
  EXPECT_NEAR(estimate_internal_dr(d, in, 1, kFirstColumn, {1.0}).point, tab.g_formula(TargetSpec::internal(1), 1, 1),
              1e-10);
  EXPECT_NEAR(estimate_external_plugin(d, ex, 0, kFirstColumn, {2.0}).point,
              tab.g_formula(TargetSpec::external(), 0, 2), 1e-10);
  EXPECT_THROW(estimate_internal_iptw(d, ex, 1, kFirstColumn, {1.0}), Error);
  EXPECT_THROW(estimate_external_dr(d, in, 1, kFirstColumn, {1.0}), Error);
}

TEST(Estimate, ConstantOutcomeWithOracleNuisances) {
  const double c = 3.25;
  std::vector<Observation> rows;
  const Dataset base = sgte::testing::random_dataset(20, 400, 200);
  for (std::size_t i = 0; i < base.size(); ++i) {
    Observation o = base.observation(i);
    if (o.r) o.y = c;
    rows.push_back(o);
  }
  const Dataset d = validate_dataset(Dataset(rows, base.covariate_names()));
  NuisanceSet set;
  set.mu = [c](int, std::span<const double>) { return c; };
  set.eta = [](int a, std::span<const double> x) { return a == 1 ? expit(0.3 * x[1]) : 1 - expit(0.3 * x[1]); };
  set.q = [](int s, std::span<const double>) { return s == 1 ? 0.5 : 0.25; };
  set.p = [](std::span<const double> x) { return expit(x[2]); };
  for (const TargetSpec t : {TargetSpec::internal(2), TargetSpec::external()}) {
    const CrossFit cf = fixed_nuisances(d, set, t);
    const SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}}};
    for (const auto& e : estimate_all(d, cf, Method::DR, 1, spec)) EXPECT_NEAR(e.point, c, 1e-12);
  }
}

TEST(Estimate, ConstantOutcomeWithFittedNuisances) {
  for (double c : {0.0, -1.5}) {
    std::vector<Observation> rows;
    const Dataset base = sgte::testing::random_dataset(21, 500);
    for (std::size_t i = 0; i < base.size(); ++i) {
      Observation o = base.observation(i);
      o.y = c;
      rows.push_back(o);
    }
    const Dataset d = validate_dataset(Dataset(rows, base.covariate_names()));
    const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), TargetSpec::internal(1), 2, 3);
    for (Method m : {Method::DR, Method::PlugIn}) {
      EXPECT_NEAR(estimate(d, cf, m, 0, kFirstColumn, {2.0}).point, c, 1e-9) << method_name(m);
    }
  }
}

TEST(Estimate, InfluenceValuesAverageToZeroInEveryFold) {
  const Dataset d = sgte::testing::random_dataset(22, 900, 300);
  for (const TargetSpec t : {TargetSpec::internal(3), TargetSpec::external()}) {
    const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), t, 3, 5);
    for (double level : {1.0, 2.0, 3.0}) {
      const SubgroupEstimate e = estimate(d, cf, Method::DR, 1, kFirstColumn, {level});
      EXPECT_LT(if_mean_gap(d, cf, e.if_values), 1e-10);
      EXPECT_GE(e.se, 0.0);
      for (double v : e.if_values) ASSERT_TRUE(std::isfinite(v));
      EXPECT_EQ(e.fold_points.size(), 3u);
    }
  }
}

TEST(Estimate, SubgroupsAggregateToOverallEstimatePerFold) {
  const Dataset d = sgte::testing::random_dataset(23, 900, 400);
  const SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}}};
  for (const TargetSpec t : {TargetSpec::internal(1), TargetSpec::internal(2), TargetSpec::external()}) {
    ASSERT_TRUE(is_exhaustive(d, spec, t));
    const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), t, 2, 11);
    for (Method m : {Method::DR, Method::PlugIn, Method::IPTW}) {
      EXPECT_LT(aggregation_gap(d, cf, m, 1, spec), 1e-10) << t.label() << " " << method_name(m);
    }
  }
}

TEST(Estimate, PlugInAndIptwHaveNoStandardError) {
  const Dataset d = sgte::testing::random_dataset(24, 400);
  const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), TargetSpec::internal(1));
  EXPECT_FALSE(estimate(d, cf, Method::PlugIn, 1, kFirstColumn, {1.0}).has_se());
  EXPECT_FALSE(estimate(d, cf, Method::IPTW, 1, kFirstColumn, {1.0}).has_se());
  EXPECT_TRUE(estimate(d, cf, Method::DR, 1, kFirstColumn, {1.0}).has_se());
}

TEST(Estimate, ZeroCellIsAnError) {
  const Dataset d = sgte::testing::random_dataset(25, 400);
  const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), TargetSpec::internal(1));
  try {
    estimate(d, cf, Method::DR, 1, kFirstColumn, {7.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::ZeroCell);
    EXPECT_NE(std::string(e.what()).find("7"), std::string::npos);
  }
}

TEST(Iptw, ConstantWeightsGiveTreatedMean) {
  Rng rng(26);
  NormalSampler normal;
  std::vector<Observation> rows;
  for (int i = 0; i < 300; ++i) {
    const double g = 1.0 + static_cast<double>(uniform_index(rng, 2));
    rows.push_back(ms(normal(rng) + g, uniform01(rng) < 0.4 ? 1 : 0, 1, {g, normal(rng)}));
  }
  const Dataset d = validate_dataset(Dataset(rows, {"g", "x"}));
  std::map<double, double> n_g, n_g1, sum_g1;
  for (std::size_t i = 0; i < d.size(); ++i) {
    n_g[d.x(i, 0)] += 1;
    if (d.a(i) == 1) {
      n_g1[d.x(i, 0)] += 1;
      sum_g1[d.x(i, 0)] += d.y(i);
    }
  }
  NuisanceSet set;
  set.trim_epsilon = 1e-300;
  set.mu = [](int, std::span<const double>) { return 0.0; };
  set.eta = [&](int a, std::span<const double> x) {
    const double p = n_g1.at(x[0]) / n_g.at(x[0]);
    return a == 1 ? p : 1 - p;
  };
  set.q = [](int, std::span<const double>) { return 1.0; };
  const CrossFit cf = fixed_nuisances(d, set, TargetSpec::internal(1));
  for (double g : {1.0, 2.0}) {
    EXPECT_NEAR(estimate(d, cf, Method::IPTW, 1, kFirstColumn, {g}).point, sum_g1[g] / n_g1[g], 1e-12);
  }
}

TEST(External, ExchangeableExternalSampleMatchesPooledSources) {
  Rng rng(27);
  NormalSampler normal;
  std::vector<Observation> rows;
  auto mean = [](int a, std::span<const double> x) { return 1.0 + x[0] + x[1] + a * (2.0 + x[1]); };
  for (int i = 0; i < 40000; ++i) {
    const std::vector<double> x{1.0 + static_cast<double>(uniform_index(rng, 3)), normal(rng)};
    if (uniform01(rng) < 0.5) {
      rows.push_back(ext(x));
      continue;
    }
    const int s = uniform01(rng) < expit(0.5 * x[1]) ? 1 : 2;
    const int a = uniform01(rng) < 0.5 ? 1 : 0;
    rows.push_back(ms(mean(a, x) + normal(rng), a, s, x));
  }
  const Dataset d = validate_dataset(Dataset(rows, {"g", "x"}));
  NuisanceSet set;
  set.mu = mean;
  set.eta = [](int, std::span<const double>) { return 0.5; };
  set.q = [](int s, std::span<const double> x) { return s == 1 ? expit(0.5 * x[1]) : 1 - expit(0.5 * x[1]); };
  set.p = [](std::span<const double>) { return 0.5; };
  set.trim_epsilon = 1e-6;
  const SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}}};
  const CrossFit cf_ext = fixed_nuisances(d, set, TargetSpec::external());
  const CrossFit cf1 = fixed_nuisances(d, set, TargetSpec::internal(1));
  const CrossFit cf2 = fixed_nuisances(d, set, TargetSpec::internal(2));
  for (double g : {1.0, 2.0, 3.0}) {
    const SubgroupEstimate e = estimate(d, cf_ext, Method::DR, 1, spec, {g});
    const SubgroupEstimate e1 = estimate(d, cf1, Method::DR, 1, spec, {g});
    const SubgroupEstimate e2 = estimate(d, cf2, Method::DR, 1, spec, {g});
    const double w1 = static_cast<double>(e1.n_cell) / static_cast<double>(e1.n_cell + e2.n_cell);
    const double pooled = w1 * e1.point + (1 - w1) * e2.point;
    const double pooled_se = w1 * e1.se + (1 - w1) * e2.se;
    EXPECT_LT(std::abs(e.point - pooled), 2.0 * std::hypot(e.se, pooled_se)) << "level " << g;
  }
}

TEST(Effect, AntisymmetricAndSelfContrastVanishes) {
  const Dataset d = sgte::testing::random_dataset(28, 800, 300);
  for (const TargetSpec t : {TargetSpec::internal(1), TargetSpec::external()}) {
    const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), t);
    const EffectEstimate e10 = estimate_effect(d, cf, Method::DR, 1, 0, kFirstColumn, {2.0});
    const EffectEstimate e01 = estimate_effect(d, cf, Method::DR, 0, 1, kFirstColumn, {2.0});
    EXPECT_EQ(e10.point, -e01.point);
    EXPECT_EQ(e10.se, e01.se);
    const SubgroupEstimate c1 = estimate(d, cf, Method::DR, 1, kFirstColumn, {2.0});
    const SubgroupEstimate c0 = estimate(d, cf, Method::DR, 0, kFirstColumn, {2.0});
    for (std::size_t i = 0; i < d.size(); ++i) ASSERT_EQ(e10.if_values[i], c1.if_values[i] - c0.if_values[i]);
    const EffectEstimate self = estimate_effect(d, cf, Method::DR, 1, 1, kFirstColumn, {2.0});
    EXPECT_EQ(self.point, 0.0);
    EXPECT_EQ(self.se, 0.0);
  }
}

TEST(Effect, OracleContrastOnMainDesignMatchesTruth) {
  DgpMainConfig cfg;
  cfg.n_total = 40000;
  cfg.n_multisource = 20000;
  cfg = calibrate_main(cfg);
  const MainModel model(cfg);
  const Dataset d = generate_main(cfg, 29).data;
  const CrossFit cf = fixed_nuisances(d, model.oracle(), TargetSpec::internal(1));
  const SubgroupSpec spec{{0}, {{3.0}}};
  const EffectEstimate e = estimate_effect(d, cf, Method::DR, 1, 0, spec, {3.0});
  const TruthValue truth = MainTruth::compute(cfg, 1000000)->effect(TargetSpec::internal(1), 3);
  EXPECT_LT(std::abs(e.point - truth.value), 2.0 * std::hypot(e.se, truth.mc_se));
}

TEST(Effect, MismatchedCellsRejected) {
  const Dataset d = sgte::testing::random_dataset(30, 400);
  const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), TargetSpec::internal(1));
  EXPECT_THROW(contrast(estimate(d, cf, Method::DR, 1, kFirstColumn, {1.0}),
                        estimate(d, cf, Method::DR, 0, kFirstColumn, {2.0})),
               Error);
}

TEST(Folds, StratifiedHalving) {
  std::vector<Observation> rows;
  const int sizes[3] = {40, 20, 10};
  for (int s = 1; s <= 3; ++s) {
    for (int k = 0; k < sizes[s - 1]; ++k) rows.push_back(ms(k, k % 2, s, {double(k)}));
  }
  const Dataset d = validate_dataset(Dataset(rows, {"x"}));
  const FoldAssignment f = assign_folds(d, 2, 7);
  for (const auto& eval : f.eval) {
    std::map<int, int> per_source;
    for (std::size_t i : eval) ++per_source[d.s(i)];
    EXPECT_EQ(per_source[1], 20);
    EXPECT_EQ(per_source[2], 10);
    EXPECT_EQ(per_source[3], 5);
  }
}

TEST(Folds, DeterministicPartition) {
  const Dataset d = sgte::testing::random_dataset(31, 500, 101);
  const FoldAssignment a = assign_folds(d, 3, 7, true);
  const FoldAssignment b = assign_folds(d, 3, 7, true);
  EXPECT_EQ(a.fold, b.fold);
  EXPECT_NE(a.fold, assign_folds(d, 3, 8, true).fold);
  std::vector<int> seen(d.size(), 0);
  for (std::size_t k = 0; k < a.eval.size(); ++k) {
    for (std::size_t i : a.eval[k]) ++seen[i];
    EXPECT_EQ(a.eval[k].size() + a.train[k].size(), d.size());
  }
  for (int v : seen) EXPECT_EQ(v, 1);
}

TEST(Folds, SmallStratumRejected) {
  std::vector<Observation> rows;
  for (int k = 0; k < 20; ++k) rows.push_back(ms(k, k % 2, 1, {double(k)}));
  rows.push_back(ms(1, 1, 2, {0.5}));
  const Dataset d = validate_dataset(Dataset(rows, {"x"}));
  try {
    assign_folds(d, 2, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::StratumTooSmall);
  }
  EXPECT_THROW(assign_folds(d, 1, 1), Error);
}

TEST(Export, EstimateRowsCarryFoldLists) {
  const Dataset d = sgte::testing::random_dataset(32, 400);
  const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), TargetSpec::internal(1));
  const SubgroupEstimate e = estimate(d, cf, Method::DR, 1, kFirstColumn, {1.0});
  std::ostringstream out;
  write_estimate_row(out, e);
  const std::string line = out.str();
  EXPECT_EQ(std::count(line.begin(), line.end(), ','), 11);
  EXPECT_EQ(line.rfind("internal:1,dr,1,1,", 0), 0u) << line;
  EXPECT_EQ(to_json(e)["method"], "dr");
}
