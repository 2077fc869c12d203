#pragma once

#include <algorithm>
#include <cmath>
#include <memory>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "sgte/config.hpp"
#include "sgte/core.hpp"
#include "sgte/nuisance/nuisance.hpp"
#include "sgte/rng.hpp"

namespace sgte {

/// Two-source design used for the convergence-rate experiment.
///
/// X0 ~ Bernoulli(0.5), X1 ~ U(0, 1); every row is multi-source.
/// Pr(S = 1 | X) = expit(-0.2 + 0.5 X0 + 1.2 X1); S = 2 otherwise.
/// Pr(A = 1 | X, S) is clipped to [0.1, 0.9].
/// Y = 5.2 + (1.2 - 0.6 X0) A + X0 - 1.2 X1 + N(0, 1).
struct DgpRateConfig {
  std::size_t n = 1000;
  double clip_lo = 0.1;
  double clip_hi = 0.9;
  double noise_sd = 1.0;

  void validate() const {
    if (n < 20) throw Error(Errc::InvalidArgument, "rate design needs n >= 20");
    if (!(clip_lo > 0 && clip_lo < clip_hi && clip_hi < 1)) throw Error(Errc::InvalidArgument, "bad clipping bounds");
  }

  KeyValueConfig to_config() const {
    KeyValueConfig c;
    c.set("n", static_cast<long long>(n));
    c.set("clip_lo", clip_lo);
    c.set("clip_hi", clip_hi);
    c.set("noise_sd", noise_sd);
    return c;
  }

  static DgpRateConfig from_config(const KeyValueConfig& c) {
    DgpRateConfig g;
    if (c.has("n")) g.n = static_cast<std::size_t>(c.get_int("n"));
    g.clip_lo = c.get_double_or("clip_lo", g.clip_lo);
    g.clip_hi = c.get_double_or("clip_hi", g.clip_hi);
    g.noise_sd = c.get_double_or("noise_sd", g.noise_sd);
    g.validate();
    return g;
  }
};

class RateModel {
 public:
  explicit RateModel(DgpRateConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const DgpRateConfig& config() const { return cfg_; }

  static double source1(std::span<const double> x) { return expit(-0.2 + 0.5 * x[0] + 1.2 * x[1]); }

  double q(int s, std::span<const double> x) const {
    if (s == 1) return source1(x);
    if (s == 2) return 1.0 - source1(x);
    return 0.0;
  }

  double pr_treat(int s, std::span<const double> x) const {
    const double l = s == 1 ? 0.8 + 0.9 * x[0] - 0.8 * x[1] : -0.8 - 0.9 * x[0] + 0.8 * x[1];
    return std::clamp(expit(l), cfg_.clip_lo, cfg_.clip_hi);
  }

  double eta(int a, std::span<const double> x) const {
    double v = 0.0;
    for (int s = 1; s <= 2; ++s) {
      const double p1 = pr_treat(s, x);
      v += (a == 1 ? p1 : 1.0 - p1) * q(s, x);
    }
    return v;
  }

  static double mean(int a, std::span<const double> x) {
    return 5.2 + (1.2 - 0.6 * x[0]) * a + x[0] - 1.2 * x[1];
  }

  NuisanceSet oracle(double trim_epsilon = 0.01) const {
    auto self = std::make_shared<RateModel>(*this);
    NuisanceSet n;
    n.trim_epsilon = trim_epsilon;
    n.mu = [](int a, std::span<const double> x) { return mean(a, x); };
    n.eta = [self](int a, std::span<const double> x) { return self->eta(a, x); };
    n.q = [self](int s, std::span<const double> x) { return self->q(s, x); };
    return n;
  }

  /// E(Y^a | X0 = x0, S = s) by adaptive quadrature over X1.
  static double truth(int a, int s, int x0) {
    auto weight = [&](double x1) {
      const double p1 = expit(-0.2 + 0.5 * x0 + 1.2 * x1);
      return s == 1 ? p1 : 1.0 - p1;
    };
    using boost::math::quadrature::gauss_kronrod;
    const double den = gauss_kronrod<double, 31>::integrate(weight, 0.0, 1.0, 10, 1e-14);
    const double num = gauss_kronrod<double, 31>::integrate([&](double x1) { return x1 * weight(x1); }, 0.0, 1.0,
                                                            10, 1e-14);
    const double x1_mean = num / den;
    return 5.2 + (1.2 - 0.6 * x0) * a + x0 - 1.2 * x1_mean;
  }

 private:
  DgpRateConfig cfg_;
};

struct RateDraw {
  Dataset data;
  NuisanceSet oracle;
};

inline RateDraw generate_rate(const DgpRateConfig& cfg, std::uint64_t seed) {
  const RateModel model(cfg);
  Rng rng(seed);
  NormalSampler normal;
  std::vector<Observation> rows(cfg.n);
  for (auto& o : rows) {
    o.x = {uniform01(rng) < 0.5 ? 1.0 : 0.0, uniform01(rng)};
    const int s = uniform01(rng) < model.q(1, o.x) ? 1 : 2;
    const int a = uniform01(rng) < model.pr_treat(s, o.x) ? 1 : 0;
    o.s = s;
    o.a = a;
    o.y = RateModel::mean(a, o.x) + cfg.noise_sd * normal(rng);
  }
  return {validate_dataset(Dataset(rows, {"x0", "x1"}, {1, 2})), model.oracle()};
}

}  // namespace sgte
