#include <gtest/gtest.h>

#include <boost/math/tools/roots.hpp>
#include <sstream>

#include "helpers.hpp"

using namespace sgte;

namespace {

/// Root of 2 Phi(c) - 1 = (1 - alpha)^(1/d), the (1 - alpha) quantile of the
/// max of d independent |N(0, 1)|.
double analytic_max_critical(int d, double alpha) {
  const double target = std::pow(1.0 - alpha, 1.0 / d);
  auto f = [&](double c) { return 2.0 * normal_cdf(c) - 1.0 - target; };
  const auto [lo, hi] = boost::math::tools::bisect(f, 0.0, 10.0, boost::math::tools::eps_tolerance<double>(50));
  return 0.5 * (lo + hi);
}

SubgroupEstimate fake_estimate(double point, double se, double level = 1.0) {
  SubgroupEstimate e;
  e.point = point;
  e.se = se;
  e.subgroup = {level};
  return e;
}

const SubgroupSpec kLevels{{0}, {{1.0}, {2.0}, {3.0}}};

}  // namespace

TEST(PointwiseCi, StandardNormalQuantile) {
  const auto [lo, hi] = pointwise_ci(fake_estimate(0.0, 1.0), 0.05);
  EXPECT_NEAR(lo, -1.96, 1e-3);
  EXPECT_NEAR(hi, 1.96, 1e-3);
}

TEST(PointwiseCi, ZeroSeIsDegenerate) {
  const auto [lo, hi] = pointwise_ci(fake_estimate(2.5, 0.0));
  EXPECT_EQ(lo, 2.5);
  EXPECT_EQ(hi, 2.5);
}

TEST(PointwiseCi, RequiresStandardError) {
  SubgroupEstimate e = fake_estimate(1.0, std::numeric_limits<double>::quiet_NaN());
  e.method = Method::PlugIn;
  try {
    pointwise_ci(e);
    FAIL();
  } catch (const Error& err) {
    EXPECT_EQ(err.code(), Errc::NoSeAvailable);
  }
  EXPECT_THROW(pointwise_ci(fake_estimate(0, 1), 1.5), Error);
}

TEST(GaussianMax, SingleLevelIsNormalQuantile) {
  EXPECT_NEAR(gaussian_max_critical(1, 0.05, 1000000, 1), 1.960, 0.005);
}

TEST(GaussianMax, FiveLevelsMatchAnalyticRoot) {
  const double c = analytic_max_critical(5, 0.05);
  EXPECT_NEAR(c, 2.569, 0.001);
  EXPECT_NEAR(gaussian_max_critical(5, 0.05, 1000000, 2), c, 0.01);
}

TEST(GaussianMax, NondecreasingInDimension) {
  double prev = 0.0;
  for (std::size_t d = 1; d <= 8; ++d) {
    const double c = gaussian_max_critical(d, 0.05, 200000, 3);
    EXPECT_GE(c, prev) << "d = " << d;
    if (d >= 2) {
      EXPECT_GT(c, normal_quantile(0.975));
    }
    prev = c;
  }
}

TEST(GaussianMax, BandHalfWidthIsCriticalTimesSe) {
  const std::vector<SubgroupEstimate> ests{fake_estimate(1.0, 0.5, 1), fake_estimate(-2.0, 0.25, 2),
                                           fake_estimate(0.0, 1.0, 3)};
  const BandResult r = band_gaussian_max(ests, 0.05, 50000, 4);
  EXPECT_EQ(r.critical, gaussian_max_critical(3, 0.05, 50000, 4));
  ASSERT_EQ(r.rows.size(), 3u);
  for (std::size_t j = 0; j < 3; ++j) {
    EXPECT_NEAR(r.rows[j].band_upper - r.rows[j].point, r.critical * ests[j].se, 1e-14);
    EXPECT_NEAR(r.rows[j].point - r.rows[j].band_lower, r.critical * ests[j].se, 1e-14);
    EXPECT_LE(r.rows[j].band_lower, r.rows[j].ci_lower);
    EXPECT_GE(r.rows[j].band_upper, r.rows[j].ci_upper);
  }
}

TEST(UpperQuantile, OrderStatistic) {
  std::vector<double> v;
  for (int i = 1; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(upper_quantile(v, 0.05), 95.0);
  EXPECT_EQ(upper_quantile(v, 0.5), 50.0);
  EXPECT_THROW(upper_quantile({}, 0.05), Error);
}

TEST(Bootstrap, ResamplePreservesStrataSizes) {
  const Dataset d = sgte::testing::random_dataset(40, 500, 123);
  Rng rng(1);
  const Dataset b = d.subset(stratified_resample(d, rng));
  EXPECT_EQ(b.size(), d.size());
  EXPECT_EQ(b.n_external(), d.n_external());
  for (int s : d.source_levels()) EXPECT_EQ(b.source_count(s), d.source_count(s));
}

TEST(Bootstrap, DeterministicAcrossThreadCounts) {
  const Dataset d = sgte::testing::random_dataset(41, 600);
  BootstrapOptions opt;
  opt.B = 200;
  opt.seed = 5;
  opt.threads = 1;
  const TargetSpec t = TargetSpec::internal(1);
  const BandResult one = band_bootstrap(d, sgte::testing::linear_spec(), t, {1, std::nullopt}, kLevels, opt);
  opt.threads = 3;
  const BandResult three = band_bootstrap(d, sgte::testing::linear_spec(), t, {1, std::nullopt}, kLevels, opt);
  EXPECT_EQ(one.t_max_samples, three.t_max_samples);
  EXPECT_EQ(one.critical, three.critical);
  EXPECT_GT(one.critical, 0.0);
  for (const auto& row : one.rows) EXPECT_NEAR(row.band_upper - row.point, one.critical * row.se, 1e-12);
}

TEST(Bootstrap, FastModeSingleLevelNearNormalQuantile) {
  Rng rng(42);
  NormalSampler normal;
  std::vector<Observation> rows;
  for (int i = 0; i < 5000; ++i) {
    const std::vector<double> x{1.0, normal(rng)};
    const int a = uniform01(rng) < 0.5 ? 1 : 0;
    rows.push_back(sgte::testing::ms(x[1] + a + normal(rng), a, uniform01(rng) < 0.6 ? 1 : 2, x));
  }
  const Dataset d = validate_dataset(Dataset(rows, {"g", "x"}));
  NuisanceSet set;
  set.mu = [](int a, std::span<const double> x) { return x[1] + a; };
  set.eta = [](int, std::span<const double>) { return 0.5; };
  set.q = [](int s, std::span<const double>) { return s == 1 ? 0.6 : 0.4; };
  const TargetSpec t = TargetSpec::internal(1);
  const CrossFit cf = fixed_nuisances(d, set, t);
  BootstrapOptions opt;
  opt.B = 2000;
  opt.refit = false;
  opt.seed = 6;
  const SubgroupSpec spec{{0}, {{1.0}}};
  const BandResult r = band_bootstrap(d, NuisanceSpec{}, t, {1, std::nullopt}, spec, opt, nullptr, &cf);
  EXPECT_NEAR(r.critical, 1.96, 0.1);
  EXPECT_EQ(r.t_max_samples.size(), 2000u);
}

TEST(Bootstrap, EffectBandUsesContrastSe) {
  const Dataset d = sgte::testing::random_dataset(43, 600);
  const TargetSpec t = TargetSpec::internal(2);
  const CrossFit cf = cross_fit(d, sgte::testing::linear_spec(), t);
  BootstrapOptions opt;
  opt.B = 200;
  opt.refit = false;
  const BandResult r = band_bootstrap(d, sgte::testing::linear_spec(), t, {1, 0}, kLevels, opt, nullptr, &cf);
  for (std::size_t j = 0; j < 3; ++j) {
    const EffectEstimate e = estimate_effect(d, cf, Method::DR, 1, 0, kLevels, kLevels.levels[j]);
    EXPECT_EQ(r.rows[j].point, e.point);
    EXPECT_EQ(r.rows[j].se, e.se);
  }
}

TEST(Bootstrap, TooFewReplicatesRejected) {
  const Dataset d = sgte::testing::random_dataset(44, 300);
  BootstrapOptions opt;
  opt.B = 199;
  EXPECT_THROW(band_bootstrap(d, sgte::testing::linear_spec(), TargetSpec::internal(1), {1, std::nullopt}, kLevels,
                              opt),
               Error);
}

TEST(Bootstrap, PersistentlyEmptyCellFails) {
  std::vector<Observation> rows = {};
  const Dataset base = sgte::testing::random_dataset(45, 400);
  for (std::size_t i = 0; i < base.size(); ++i) {
    Observation o = base.observation(i);
    if (o.x[0] == 3.0) o.x[0] = 2.0;
    rows.push_back(o);
  }
  // a single source-1 row carries level 3
  for (auto& o : rows) {
    if (o.s == 1) {
      o.x[0] = 3.0;
      break;
    }
  }
  const Dataset d = validate_dataset(Dataset(rows, base.covariate_names()));
  NuisanceSet set;
  set.mu = [](int, std::span<const double>) { return 0.0; };
  set.eta = [](int, std::span<const double>) { return 0.5; };
  set.q = [](int, std::span<const double>) { return 0.4; };
  const TargetSpec t = TargetSpec::internal(1);
  const CrossFit cf = fixed_nuisances(d, set, t);
  BootstrapOptions opt;
  opt.B = 200;
  opt.refit = false;
  opt.max_attempts = 1;
  try {
    band_bootstrap(d, NuisanceSpec{}, t, {1, std::nullopt}, kLevels, opt, nullptr, &cf);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::BootstrapCellEmpty);
  }
}

TEST(Bands, CsvRowsFlagCoverage) {
  const std::vector<SubgroupEstimate> ests{fake_estimate(1.0, 0.5, 1), fake_estimate(2.0, 0.5, 2)};
  const BandResult r = band_gaussian_max(ests, 0.05, 10000, 1);
  std::ostringstream out;
  write_band_rows(out, r);
  std::istringstream in(out.str());
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    EXPECT_NE(line.find(",1,gaussian,"), std::string::npos) << line;
  }
  EXPECT_EQ(n, 2);
  EXPECT_EQ(parse_construction("bootstrap"), BandConstruction::BootstrapTMax);
  EXPECT_THROW(parse_construction("wild"), Error);
}
