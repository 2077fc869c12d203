#pragma once

#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "sgte/error.hpp"
#include "sgte/nuisance/logistic.hpp"

namespace sgte {

/// Intercept b0 such that n * mean(expit(b0 + lp)) matches target_count within
/// rel_tol, by bisection on [lo, hi]. `lp` holds the slope part of the linear
/// predictor for a Monte Carlo sample of the covariate law.
inline double calibrate_intercept(double target_count, double n, std::span<const double> lp, double rel_tol = 1e-3,
                                  double lo = -20.0, double hi = 20.0) {
  if (lp.empty()) throw Error(Errc::InvalidArgument, "calibration sample is empty");
  // expit(b0 + v) = 1 / (1 + exp(-b0) exp(-v))
  std::vector<double> e(lp.size());
  for (std::size_t i = 0; i < lp.size(); ++i) e[i] = std::exp(-lp[i]);
  auto expected = [&](double b0) {
    const double c = std::exp(-b0);
    double sum = 0.0;
    for (double v : e) sum += 1.0 / (1.0 + c * v);
    return n * sum / static_cast<double>(e.size());
  };
  const double f_lo = expected(lo) - target_count;
  const double f_hi = expected(hi) - target_count;
  if (f_lo > 0 || f_hi < 0) {
    throw Error(Errc::Unachievable, "target count " + std::to_string(target_count) +
                                        " is outside the range reachable on the intercept bracket");
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f = expected(mid) - target_count;
    if (std::abs(f) <= rel_tol * target_count && it > 0) return mid;
    if (f < 0) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-12) return mid;
  }
  return 0.5 * (lo + hi);
}

struct SourceIntercepts {
  double xi0 = 0.0;
  double zeta0 = 0.0;
  std::array<double, 3> proportions{};
  int sweeps = 0;
};

namespace calibrate_detail {

/// exp of the slope parts, so that proportions need no further exp calls.
struct ExpSample {
  std::vector<double> ex;
  std::vector<double> ez;
  std::span<const double> w;

  ExpSample(std::span<const double> lx, std::span<const double> lz, std::span<const double> weights)
      : ex(lx.size()), ez(lz.size()), w(weights) {
    for (std::size_t i = 0; i < lx.size(); ++i) {
      ex[i] = std::exp(lx[i]);
      ez[i] = std::exp(lz[i]);
    }
  }

  std::array<double, 3> proportions(double xi0, double zeta0) const {
    const double c1 = std::exp(xi0);
    const double c2 = std::exp(zeta0);
    std::array<double, 3> acc{};
    double wsum = 0.0;
    for (std::size_t i = 0; i < ex.size(); ++i) {
      const double e1 = c1 * ex[i];
      const double e2 = c2 * ez[i];
      const double wi = w.empty() ? 1.0 : w[i];
      const double f = wi / (1.0 + e1 + e2);
      acc[0] += f * e1;
      acc[1] += f * e2;
      acc[2] += f;
      wsum += wi;
    }
    for (double& a : acc) a /= wsum;
    return acc;
  }
};

}  // namespace calibrate_detail

/// Weighted class proportions of a three-class multinomial logit with
/// linear predictors (xi0 + lx, zeta0 + lz, 0).
inline std::array<double, 3> source_proportions(double xi0, double zeta0, std::span<const double> lx,
                                                std::span<const double> lz, std::span<const double> w) {
  return calibrate_detail::ExpSample(lx, lz, w).proportions(xi0, zeta0);
}

/// Intercepts (xi0, zeta0) giving expected source proportions in `ratio`,
/// found by alternating one-dimensional bisections. `w` weights the sample
/// (for example by Pr(R=1 | X)); empty means unweighted.
inline SourceIntercepts calibrate_source_intercepts(std::array<double, 3> ratio, std::span<const double> lx,
                                                    std::span<const double> lz, std::span<const double> w = {},
                                                    double rel_tol = 5e-3, int max_sweeps = 50) {
  const double total = ratio[0] + ratio[1] + ratio[2];
  std::array<double, 3> target{ratio[0] / total, ratio[1] / total, ratio[2] / total};
  const calibrate_detail::ExpSample sample(lx, lz, w);
  SourceIntercepts out;
  auto close = [&](const std::array<double, 3>& p) {
    for (int k = 0; k < 3; ++k) {
      if (std::abs(p[k] - target[k]) > rel_tol * target[k]) return false;
    }
    return true;
  };
  auto solve = [&](int cls) {
    double lo = -20.0;
    double hi = 20.0;
    for (int it = 0; it < 60; ++it) {
      const double mid = 0.5 * (lo + hi);
      const auto p = cls == 0 ? sample.proportions(mid, out.zeta0) : sample.proportions(out.xi0, mid);
      if (std::abs(p[cls] - target[cls]) < 0.01 * rel_tol * target[cls]) {
        lo = hi = mid;
        break;
      }
      if (p[cls] < target[cls]) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    (cls == 0 ? out.xi0 : out.zeta0) = 0.5 * (lo + hi);
  };
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    solve(0);
    solve(1);
    out.sweeps = sweep;
    out.proportions = sample.proportions(out.xi0, out.zeta0);
    if (close(out.proportions)) return out;
  }
  throw Error(Errc::NoConvergence, "source intercepts did not reach the requested ratio in " +
                                       std::to_string(max_sweeps) + " sweeps");
}

}  // namespace sgte
