#pragma once

#include <array>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "sgte/config.hpp"
#include "sgte/core.hpp"
#include "sgte/nuisance/nuisance.hpp"
#include "sgte/rng.hpp"
#include "sgte/sim/calibrate.hpp"

namespace sgte {

inline std::vector<double> linspace(double a, double b, std::size_t n) {
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = n == 1 ? a : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

/// Main simulation design: five-level X1, nine correlated normal covariates,
/// participation R, three sources, source-specific treatment models and an
/// additive potential-outcome model with effect modification by X1.
///
/// Covariate column 0 is X1 (levels 1..5), columns 1..9 are X2..X10.
/// Coefficient vectors of length 11 are (intercept, X1, ..., X10); X1 enters
/// linear predictors as its integer level.
struct DgpMainConfig {
  std::size_t n_total = 10000;
  std::size_t n_multisource = 1000;
  std::array<double, 3> source_ratio{4.0, 2.0, 1.0};
  double beta_slope = std::log(1.05);
  std::vector<double> xi_slopes = linspace(std::log(1.1), std::log(1.5), 10);
  std::vector<double> zeta_slopes = linspace(std::log(1.5), std::log(1.1), 10);
  /// Treatment model of each source: intercept then ten slopes.
  std::array<std::vector<double>, 3> alpha = default_alpha();
  double theta = 0.75;
  std::vector<double> vartheta{0.2, 0.4, -0.5, 0.1, -0.01};
  std::vector<double> iota{0.2, 0.2, -0.2, -0.2};
  double noise_var = 10.0;
  double effect = 5.0;
  std::size_t calibration_draws = 1000000;
  std::uint64_t calibration_seed = 20240611;
  /// Calibrated intercepts; computed by calibrate_main when absent.
  std::optional<double> beta0;
  std::optional<double> xi0;
  std::optional<double> zeta0;

  static std::array<std::vector<double>, 3> default_alpha() {
    const std::vector<double> slopes = linspace(std::log(1.1), std::log(1.5), 10);
    std::array<std::vector<double>, 3> out;
    const double intercepts[3] = {1.5, -0.25, -2.0};
    for (int s = 0; s < 3; ++s) {
      out[static_cast<std::size_t>(s)] = {intercepts[s]};
      out[static_cast<std::size_t>(s)].insert(out[static_cast<std::size_t>(s)].end(), slopes.begin(), slopes.end());
    }
    return out;
  }

  bool calibrated() const { return beta0 && xi0 && zeta0; }

  void validate() const {
    if (n_multisource == 0 || n_multisource >= n_total) {
      throw Error(Errc::InvalidArgument, "n_multisource must lie in (0, n_total)");
    }
    if (xi_slopes.size() != 10 || zeta_slopes.size() != 10) throw Error(Errc::Schema, "xi/zeta need 10 slopes");
    for (const auto& a : alpha) {
      if (a.size() != 11) throw Error(Errc::Schema, "alpha vectors need 11 entries");
    }
    if (vartheta.size() != 5 || iota.size() != 4) throw Error(Errc::Schema, "vartheta needs 5 and iota 4 entries");
    if (!(noise_var >= 0)) throw Error(Errc::Schema, "noise_var must be nonnegative");
  }

  KeyValueConfig to_config() const {
    KeyValueConfig c;
    c.set("n_total", static_cast<long long>(n_total));
    c.set("n_multisource", static_cast<long long>(n_multisource));
    c.set_list("source_ratio", std::vector<double>(source_ratio.begin(), source_ratio.end()));
    c.set("beta_slope", beta_slope);
    c.set_list("xi_slopes", xi_slopes);
    c.set_list("zeta_slopes", zeta_slopes);
    for (int s = 0; s < 3; ++s) c.set_list("alpha." + std::to_string(s + 1), alpha[static_cast<std::size_t>(s)]);
    c.set("theta", theta);
    c.set_list("vartheta", vartheta);
    c.set_list("iota", iota);
    c.set("noise_var", noise_var);
    c.set("effect", effect);
    c.set("calibration_draws", static_cast<long long>(calibration_draws));
    c.set("calibration_seed", std::to_string(calibration_seed));
    if (beta0) c.set("beta0", *beta0);
    if (xi0) c.set("xi0", *xi0);
    if (zeta0) c.set("zeta0", *zeta0);
    return c;
  }

  /// Keys absent from `c` keep their defaults.
  static DgpMainConfig from_config(const KeyValueConfig& c) {
    DgpMainConfig g;
    if (c.has("n_total")) g.n_total = static_cast<std::size_t>(c.get_int("n_total"));
    if (c.has("n_multisource")) g.n_multisource = static_cast<std::size_t>(c.get_int("n_multisource"));
    if (c.has("source_ratio")) {
      const auto r = c.get_doubles("source_ratio");
      if (r.size() != 3) throw Error(Errc::Schema, "source_ratio needs 3 entries");
      g.source_ratio = {r[0], r[1], r[2]};
    }
    g.beta_slope = c.get_double_or("beta_slope", g.beta_slope);
    if (c.has("xi_slopes")) g.xi_slopes = c.get_doubles("xi_slopes");
    if (c.has("zeta_slopes")) g.zeta_slopes = c.get_doubles("zeta_slopes");
    for (int s = 0; s < 3; ++s) {
      const std::string key = "alpha." + std::to_string(s + 1);
      if (c.has(key)) g.alpha[static_cast<std::size_t>(s)] = c.get_doubles(key);
    }
    g.theta = c.get_double_or("theta", g.theta);
    if (c.has("vartheta")) g.vartheta = c.get_doubles("vartheta");
    if (c.has("iota")) g.iota = c.get_doubles("iota");
    g.noise_var = c.get_double_or("noise_var", g.noise_var);
    g.effect = c.get_double_or("effect", g.effect);
    if (c.has("calibration_draws")) g.calibration_draws = static_cast<std::size_t>(c.get_int("calibration_draws"));
    if (c.has("calibration_seed")) g.calibration_seed = std::stoull(c.get("calibration_seed"));
    if (c.has("beta0")) g.beta0 = c.get_double("beta0");
    if (c.has("xi0")) g.xi0 = c.get_double("xi0");
    if (c.has("zeta0")) g.zeta0 = c.get_double("zeta0");
    g.validate();
    return g;
  }
};

/// Closed-form pieces of a calibrated main design.
class MainModel {
 public:
  explicit MainModel(DgpMainConfig cfg) : cfg_(std::move(cfg)) {
    if (!cfg_.calibrated()) throw Error(Errc::InvalidArgument, "main design is not calibrated");
    cfg_.validate();
    const boost::math::normal nd;
    const double cum[4] = {1.0 / 9, 3.0 / 9, 6.0 / 9, 8.0 / 9};
    for (int k = 0; k < 4; ++k) cuts_[static_cast<std::size_t>(k)] = boost::math::quantile(nd, cum[k]);
  }

  const DgpMainConfig& config() const { return cfg_; }

  /// X1 level (1..5) of a standard normal draw.
  int level_of(double z) const {
    int l = 1;
    for (double c : cuts_) l += z > c ? 1 : 0;
    return l;
  }

  /// Draws one covariate vector (10 entries) into x.
  void draw_covariates(Rng& rng, NormalSampler& normal, double* x) const {
    x[0] = level_of(normal(rng));
    const double z0 = normal(rng);
    for (int j = 1; j < 10; ++j) x[j] = 0.1 + 0.5 * (kRootHalf * z0 + kRootHalf * normal(rng));
  }

  double participation_lp(std::span<const double> x) const {
    double s = 0.0;
    for (double v : x) s += v;
    return *cfg_.beta0 + cfg_.beta_slope * s;
  }
  double pr_r(std::span<const double> x) const { return expit(participation_lp(x)); }

  /// Pr(S = s | X, R = 1) for s in {1, 2, 3}.
  double q(int s, std::span<const double> x) const {
    double l1 = *cfg_.xi0;
    double l2 = *cfg_.zeta0;
    for (std::size_t j = 0; j < 10; ++j) {
      l1 += cfg_.xi_slopes[j] * x[j];
      l2 += cfg_.zeta_slopes[j] * x[j];
    }
    const double m = std::max({0.0, l1, l2});
    const double e1 = std::exp(l1 - m);
    const double e2 = std::exp(l2 - m);
    const double e3 = std::exp(-m);
    const double den = e1 + e2 + e3;
    if (s == 1) return e1 / den;
    if (s == 2) return e2 / den;
    if (s == 3) return e3 / den;
    return 0.0;
  }

  /// Pr(A = 1 | X, S = s).
  double pr_treat(int s, std::span<const double> x) const {
    const auto& a = cfg_.alpha[static_cast<std::size_t>(s - 1)];
    double l = a[0];
    for (std::size_t j = 0; j < 10; ++j) l += a[j + 1] * x[j];
    return expit(l);
  }

  /// Pr(A = a | X, R = 1) = sum_s Pr(A = a | X, S = s) q_s(X).
  double eta(int a, std::span<const double> x) const {
    double v = 0.0;
    for (int s = 1; s <= 3; ++s) {
      const double p1 = pr_treat(s, x);
      v += (a == 1 ? p1 : 1.0 - p1) * q(s, x);
    }
    return v;
  }

  /// Part of the potential-outcome mean that does not involve a.
  double baseline(std::span<const double> x) const {
    double v = 1.0;
    const double t = cfg_.theta;
    for (int j = 1; j <= 3; ++j) v += std::sin(t * x[static_cast<std::size_t>(j)]) / 5.0;
    for (int j = 4; j <= 6; ++j) v += std::exp(-0.25 * t * x[static_cast<std::size_t>(j)]);
    for (int j = 7; j <= 9; ++j) {
      const double u = t * x[static_cast<std::size_t>(j)];
      v += 0.02 * u * u + (2.0 + 0.2 * u) * (2.0 + 0.2 * u) + 2.0 * std::pow(0.015 * u, 3);
    }
    return v;
  }

  /// Treatment effect at x: effect + vartheta_{X1} + sum_j iota_j X_j (j = 2..5).
  double effect(std::span<const double> x) const {
    const int level = static_cast<int>(x[0]);
    double v = cfg_.effect;
    if (level >= 1 && level <= 5) v += cfg_.vartheta[static_cast<std::size_t>(level - 1)];
    for (std::size_t j = 0; j < 4; ++j) v += cfg_.iota[j] * x[j + 1];
    return v;
  }

  /// E(Y^a | X = x).
  double mean(int a, std::span<const double> x) const { return baseline(x) + (a == 1 ? effect(x) : 0.0); }

  /// Exact nuisance functions of this design.
  NuisanceSet oracle(double trim_epsilon = 0.01) const {
    auto self = std::make_shared<MainModel>(*this);
    NuisanceSet n;
    n.trim_epsilon = trim_epsilon;
    n.mu = [self](int a, std::span<const double> x) { return self->mean(a, x); };
    n.eta = [self](int a, std::span<const double> x) { return self->eta(a, x); };
    n.q = [self](int s, std::span<const double> x) { return self->q(s, x); };
    n.p = [self](std::span<const double> x) { return self->pr_r(x); };
    return n;
  }

  static std::vector<std::string> covariate_names() {
    std::vector<std::string> out;
    for (int j = 1; j <= 10; ++j) out.push_back("x" + std::to_string(j));
    return out;
  }

 private:
  static constexpr double kRootHalf = 0.70710678118654752440;
  DgpMainConfig cfg_;
  std::array<double, 4> cuts_{};
};

/// Fills beta0, xi0 and zeta0 by Monte Carlo calibration (cached per config).
inline DgpMainConfig calibrate_main(DgpMainConfig cfg) {
  cfg.validate();
  if (cfg.calibrated()) return cfg;
  static std::mutex mutex;
  static std::map<std::string, DgpMainConfig> cache;
  const std::string key = cfg.to_config().to_string();
  {
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  DgpMainConfig probe = cfg;
  probe.beta0 = 0.0;
  probe.xi0 = 0.0;
  probe.zeta0 = 0.0;
  const MainModel model(probe);
  Rng rng(cfg.calibration_seed);
  NormalSampler normal;
  const std::size_t N = cfg.calibration_draws;
  std::vector<double> lp(N);
  std::vector<double> lx(N);
  std::vector<double> lz(N);
  double x[10];
  for (std::size_t i = 0; i < N; ++i) {
    model.draw_covariates(rng, normal, x);
    double s = 0.0;
    double a = 0.0;
    double b = 0.0;
    for (std::size_t j = 0; j < 10; ++j) {
      s += x[j];
      a += cfg.xi_slopes[j] * x[j];
      b += cfg.zeta_slopes[j] * x[j];
    }
    lp[i] = cfg.beta_slope * s;
    lx[i] = a;
    lz[i] = b;
  }
  const double b0 = calibrate_intercept(static_cast<double>(cfg.n_multisource), static_cast<double>(cfg.n_total), lp);
  std::vector<double> w(N);
  for (std::size_t i = 0; i < N; ++i) w[i] = expit(b0 + lp[i]);
  const SourceIntercepts si = calibrate_source_intercepts(cfg.source_ratio, lx, lz, w);
  cfg.beta0 = b0;
  cfg.xi0 = si.xi0;
  cfg.zeta0 = si.zeta0;
  std::lock_guard<std::mutex> lock(mutex);
  cache.emplace(key, cfg);
  return cfg;
}

/// One simulated data set with its potential outcomes (noise included) and means.
struct MainDraw {
  Dataset data;
  std::vector<double> y0;
  std::vector<double> y1;
};

/// Draws n_total subjects. r = 0 rows have y, a and s stripped.
inline MainDraw generate_main(const DgpMainConfig& cfg, std::uint64_t seed) {
  const MainModel model(calibrate_main(cfg));
  Rng rng(seed);
  NormalSampler normal;
  const double sd = std::sqrt(cfg.noise_var);
  std::vector<Observation> rows(cfg.n_total);
  MainDraw out;
  out.y0.resize(cfg.n_total);
  out.y1.resize(cfg.n_total);
  for (std::size_t i = 0; i < cfg.n_total; ++i) {
    Observation& o = rows[i];
    o.x.resize(10);
    model.draw_covariates(rng, normal, o.x.data());
    const double base = model.baseline(o.x);
    const double eff = model.effect(o.x);
    out.y0[i] = base + sd * normal(rng);
    out.y1[i] = base + eff + sd * normal(rng);
    o.r = uniform01(rng) < model.pr_r(o.x);
    const double u_s = uniform01(rng);
    const double u_a = uniform01(rng);
    if (!o.r) continue;
    const double p1 = model.q(1, o.x);
    const double p2 = model.q(2, o.x);
    const int s = u_s < p1 ? 1 : (u_s < p1 + p2 ? 2 : 3);
    const int a = u_a < model.pr_treat(s, o.x) ? 1 : 0;
    o.s = s;
    o.a = a;
    o.y = a == 1 ? out.y1[i] : out.y0[i];
  }
  out.data = validate_dataset(Dataset(rows, MainModel::covariate_names(), {1, 2, 3}));
  return out;
}

/// Ground-truth subgroup mean with its Monte Carlo standard error.
struct TruthValue {
  double value = 0.0;
  double mc_se = 0.0;
};

/// E(Y^a | X1 = level, target) for every level 1..5, a in {0, 1} and every
/// target (internal 1..3 and external), by Monte Carlo integration over
/// X2..X10 with the closed-form outcome mean. Cached per (config, draws, seed).
class MainTruth {
 public:
  TruthValue get(const TargetSpec& t, int a, int level) const {
    auto it = values_.find({t.label(), a, level});
    if (it == values_.end()) throw Error(Errc::InvalidArgument, "no truth for " + t.label());
    return it->second;
  }

  TruthValue effect(const TargetSpec& t, int level) const {
    auto it = effects_.find({t.label(), level});
    if (it == effects_.end()) throw Error(Errc::InvalidArgument, "no truth for " + t.label());
    return it->second;
  }

  static std::shared_ptr<const MainTruth> compute(const DgpMainConfig& raw, std::size_t draws = 10000000,
                                                  std::uint64_t seed = 7) {
    const DgpMainConfig cfg = calibrate_main(raw);
    static std::mutex mutex;
    static std::map<std::string, std::shared_ptr<const MainTruth>> cache;
    const std::string key = cfg.to_config().to_string() + "|" + std::to_string(draws) + "|" + std::to_string(seed);
    std::lock_guard<std::mutex> lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    auto truth = std::make_shared<MainTruth>();
    truth->fill(cfg, draws, seed);
    cache.emplace(key, truth);
    return truth;
  }

 private:
  struct Acc {
    double w = 0, wm = 0, w2 = 0, w2m = 0, w2m2 = 0;
    void add(double wi, double m) {
      w += wi;
      wm += wi * m;
      w2 += wi * wi;
      w2m += wi * wi * m;
      w2m2 += wi * wi * m * m;
    }
    TruthValue value() const {
      TruthValue v;
      v.value = wm / w;
      const double ss = w2m2 - 2.0 * v.value * w2m + v.value * v.value * w2;
      v.mc_se = std::sqrt(std::max(ss, 0.0)) / w;
      return v;
    }
  };

  void fill(const DgpMainConfig& cfg, std::size_t draws, std::uint64_t seed) {
    const MainModel model(cfg);
    Rng rng(seed);
    NormalSampler normal;
    const std::vector<std::string> targets{"internal:1", "internal:2", "internal:3", "external"};
    // [target][level][a], plus the effect accumulators [target][level]
    std::vector<Acc> acc(4 * 5 * 2);
    std::vector<Acc> eff(4 * 5);
    double x[10];
    for (std::size_t b = 0; b < draws; ++b) {
      model.draw_covariates(rng, normal, x);
      for (int level = 1; level <= 5; ++level) {
        x[0] = level;
        const std::span<const double> xs(x, 10);
        const double m0 = model.baseline(xs);
        const double m1 = m0 + model.effect(xs);
        const double pr = model.pr_r(xs);
        double w[4];
        for (int s = 1; s <= 3; ++s) w[s - 1] = pr * model.q(s, xs);
        w[3] = 1.0 - pr;
        for (int t = 0; t < 4; ++t) {
          const std::size_t base = (static_cast<std::size_t>(t) * 5 + static_cast<std::size_t>(level - 1));
          acc[base * 2 + 0].add(w[t], m0);
          acc[base * 2 + 1].add(w[t], m1);
          eff[base].add(w[t], m1 - m0);
        }
      }
    }
    for (int t = 0; t < 4; ++t) {
      for (int level = 1; level <= 5; ++level) {
        const std::size_t base = (static_cast<std::size_t>(t) * 5 + static_cast<std::size_t>(level - 1));
        values_[{targets[static_cast<std::size_t>(t)], 0, level}] = acc[base * 2].value();
        values_[{targets[static_cast<std::size_t>(t)], 1, level}] = acc[base * 2 + 1].value();
        effects_[{targets[static_cast<std::size_t>(t)], level}] = eff[base].value();
      }
    }
  }

  std::map<std::tuple<std::string, int, int>, TruthValue> values_;
  std::map<std::pair<std::string, int>, TruthValue> effects_;
};

/// Convenience wrapper over MainTruth::compute.
inline TruthValue truth_oracle(const DgpMainConfig& cfg, const TargetSpec& t, int a, int level,
                               std::size_t draws = 10000000, std::uint64_t seed = 7) {
  return MainTruth::compute(cfg, draws, seed)->get(t, a, level);
}

}  // namespace sgte
