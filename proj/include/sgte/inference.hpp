#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "sgte/estimators.hpp"
#include "sgte/parallel.hpp"

namespace sgte {

inline double normal_quantile(double p) { return boost::math::quantile(boost::math::normal(), p); }
inline double normal_cdf(double x) { return boost::math::cdf(boost::math::normal(), x); }

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw Error(Errc::InvalidArgument, "alpha must lie in (0, 1)");
}

/// point -/+ z_{1-alpha/2} se.
template <class Estimate>
std::pair<double, double> pointwise_ci(const Estimate& e, double alpha = 0.05) {
  check_alpha(alpha);
  if (!e.has_se()) {
    throw Error(Errc::NoSeAvailable, method_name(e.method) + " estimates carry no influence-function standard error");
  }
  const double h = normal_quantile(1.0 - alpha / 2.0) * e.se;
  return {e.point - h, e.point + h};
}

enum class BandConstruction { BootstrapTMax, GaussianMax };

inline std::string construction_name(BandConstruction c) {
  return c == BandConstruction::BootstrapTMax ? "bootstrap" : "gaussian";
}

inline BandConstruction parse_construction(const std::string& s) {
  if (s == "bootstrap") return BandConstruction::BootstrapTMax;
  if (s == "gaussian") return BandConstruction::GaussianMax;
  throw Error(Errc::Schema, "unknown band construction '" + s + "' (bootstrap, gaussian)");
}

struct BandRow {
  SubgroupKey subgroup;
  double point = 0.0;
  double se = 0.0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double band_lower = 0.0;
  double band_upper = 0.0;
};

/// Simultaneous band over subgroup levels.
struct BandResult {
  double alpha = 0.05;
  BandConstruction construction = BandConstruction::GaussianMax;
  double critical = 0.0;
  std::size_t B = 0;
  std::vector<BandRow> rows;
  /// Realizations of the max statistic (bootstrap only).
  std::vector<double> t_max_samples;
  /// Replicates that had to be redrawn.
  std::size_t redraws = 0;
};

/// Empirical (1 - alpha) quantile: the ceil((1 - alpha) B)-th order statistic.
inline double upper_quantile(std::vector<double> v, double alpha) {
  if (v.empty()) throw Error(Errc::InvalidArgument, "quantile of an empty sample");
  const double pos = std::ceil((1.0 - alpha) * static_cast<double>(v.size()) - 1e-9);
  const std::size_t k = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(pos, 1.0)), 1, v.size()) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

namespace band_detail {

template <class Estimate>
std::vector<BandRow> rows_for(const std::vector<Estimate>& ests, double alpha, double critical) {
  std::vector<BandRow> rows;
  for (const auto& e : ests) {
    if (!e.has_se()) throw Error(Errc::NoSeAvailable, "simultaneous bands need influence-function standard errors");
    BandRow r;
    r.subgroup = e.subgroup;
    r.point = e.point;
    r.se = e.se;
    std::tie(r.ci_lower, r.ci_upper) = pointwise_ci(e, alpha);
    r.band_lower = e.point - critical * e.se;
    r.band_upper = e.point + critical * e.se;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace band_detail

/// Critical value of max_j |N_j| over d i.i.d. standard normals, by simulation.
inline double gaussian_max_critical(std::size_t d, double alpha, std::size_t draws, std::uint64_t seed) {
  check_alpha(alpha);
  if (d == 0) throw Error(Errc::InvalidArgument, "band over zero subgroups");
  if (draws == 0) throw Error(Errc::InvalidArgument, "draws must be positive");
  Rng rng(seed);
  NormalSampler normal;
  std::vector<double> m(draws);
  for (std::size_t b = 0; b < draws; ++b) {
    double best = 0.0;
    for (std::size_t j = 0; j < d; ++j) best = std::max(best, std::abs(normal(rng)));
    m[b] = best;
  }
  return upper_quantile(std::move(m), alpha);
}

/// Gaussian-max band: critical is the (1 - alpha) quantile of max |N(0, I_d)|.
template <class Estimate>
BandResult band_gaussian_max(const std::vector<Estimate>& ests, double alpha = 0.05, std::size_t draws = 100000,
                             std::uint64_t seed = 0) {
  BandResult r;
  r.alpha = alpha;
  r.construction = BandConstruction::GaussianMax;
  r.critical = gaussian_max_critical(ests.size(), alpha, draws, seed);
  r.B = draws;
  r.rows = band_detail::rows_for(ests, alpha, r.critical);
  return r;
}

/// Treatment (a) or contrast (a - a_ref) that a band covers.
struct BandTarget {
  int a = 1;
  std::optional<int> a_ref;
};

struct BootstrapOptions {
  std::size_t B = 1000;
  double alpha = 0.05;
  /// Refit nuisances (with fresh folds) on every replicate; otherwise reuse
  /// the original out-of-fold predictions.
  bool refit = true;
  int folds = 2;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int max_attempts = 10;
  /// Smallest B accepted.
  std::size_t min_B = 200;
};

/// Resample with replacement within every source stratum and the r = 0
/// stratum, preserving stratum sizes exactly. Returns original row indices.
inline std::vector<std::size_t> stratified_resample(const Dataset& d, Rng& rng) {
  std::map<int, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < d.size(); ++i) strata[d.in_multisource(i) ? d.s(i) : INT_MIN].push_back(i);
  std::vector<std::size_t> out;
  out.reserve(d.size());
  for (const auto& [key, rows] : strata) {
    for (std::size_t k = 0; k < rows.size(); ++k) out.push_back(rows[uniform_index(rng, rows.size())]);
  }
  return out;
}

namespace band_detail {

/// Cross-fit of a resample that reuses the original fold predictions.
inline CrossFit remap(const CrossFit& cf, std::span<const std::size_t> rows) {
  CrossFit out;
  out.target = cf.target;
  out.folds.K = cf.folds.K;
  out.folds.fold.resize(rows.size());
  out.folds.eval.assign(cf.folds.eval.size(), {});
  const std::size_t na = cf.pred.treatments.size();
  const std::size_t ns = cf.pred.sources.size();
  out.pred.treatments = cf.pred.treatments;
  out.pred.sources = cf.pred.sources;
  out.pred.mu.resize(rows.size() * na);
  out.pred.eta.resize(rows.size() * na);
  out.pred.q.resize(rows.size() * ns);
  out.pred.p.resize(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const std::size_t i = rows[k];
    out.folds.fold[k] = cf.folds.fold[i];
    out.folds.eval[static_cast<std::size_t>(cf.folds.fold[i])].push_back(k);
    for (std::size_t j = 0; j < na; ++j) {
      out.pred.mu[k * na + j] = cf.pred.mu[i * na + j];
      out.pred.eta[k * na + j] = cf.pred.eta[i * na + j];
    }
    for (std::size_t j = 0; j < ns; ++j) out.pred.q[k * ns + j] = cf.pred.q[i * ns + j];
    out.pred.p[k] = cf.pred.p[i];
  }
  return out;
}

inline std::vector<std::pair<double, double>> point_se(const Dataset& d, const CrossFit& cf, const BandTarget& bt,
                                                       const SubgroupSpec& spec) {
  std::vector<std::pair<double, double>> out;
  for (const auto& key : spec.levels) {
    if (bt.a_ref) {
      const EffectEstimate e = estimate_effect(d, cf, Method::DR, bt.a, *bt.a_ref, spec, key);
      out.emplace_back(e.point, e.se);
    } else {
      const SubgroupEstimate e = estimate(d, cf, Method::DR, bt.a, spec, key);
      out.emplace_back(e.point, e.se);
    }
  }
  return out;
}

}  // namespace band_detail

/// Bootstrap t-max band around the DR estimates of every level in `spec`.
///
/// Replicate b resamples within strata, re-estimates every level and records
/// max_x |est_b(x) - est(x)| / se(x) with the original-sample se. Replicates
/// whose resample empties a subgroup cell (or a training cell) are redrawn,
/// at most max_attempts times.
inline BandResult band_bootstrap(const Dataset& d, const NuisanceSpec& nspec, const TargetSpec& t,
                                 const BandTarget& bt, const SubgroupSpec& spec, const BootstrapOptions& opt,
                                 const OracleProvider* oracle = nullptr, const CrossFit* original = nullptr) {
  check_alpha(opt.alpha);
  if (opt.B < opt.min_B) {
    throw Error(Errc::InvalidArgument, "bootstrap needs B >= " + std::to_string(opt.min_B));
  }
  subgroup_counts(d, spec, t);
  std::optional<CrossFit> own;
  if (!original) {
    own = cross_fit(d, nspec, t, opt.folds, opt.seed, oracle);
    original = &*own;
  }
  const auto base = band_detail::point_se(d, *original, bt, spec);
  std::vector<double> tmax(opt.B, 0.0);
  std::vector<std::size_t> redraws(opt.B, 0);
  parallel_for(opt.B, opt.threads, [&](std::size_t b) {
    for (int attempt = 0;; ++attempt) {
      if (attempt >= opt.max_attempts) {
        throw Error(Errc::BootstrapCellEmpty, "replicate " + std::to_string(b) + " emptied a cell in " +
                                                  std::to_string(opt.max_attempts) + " consecutive draws");
      }
      Rng rng = substream(opt.seed, {b, static_cast<std::uint64_t>(attempt)});
      const std::vector<std::size_t> rows = stratified_resample(d, rng);
      const Dataset db = d.subset(rows);
      try {
        std::vector<std::pair<double, double>> rep;
        if (opt.refit) {
          const CrossFit cf = cross_fit(db, nspec, t, opt.folds, rng(), oracle);
          rep = band_detail::point_se(db, cf, bt, spec);
        } else {
          rep = band_detail::point_se(db, band_detail::remap(*original, rows), bt, spec);
        }
        double m = 0.0;
        for (std::size_t j = 0; j < rep.size(); ++j) {
          if (base[j].second > 0) m = std::max(m, std::abs(rep[j].first - base[j].first) / base[j].second);
        }
        tmax[b] = m;
        redraws[b] = static_cast<std::size_t>(attempt);
        return;
      } catch (const Error& e) {
        if (e.code() != Errc::ZeroCell && e.code() != Errc::InsufficientTreatedRows &&
            e.code() != Errc::StratumTooSmall) {
          throw;
        }
      }
    }
  });
  BandResult r;
  r.alpha = opt.alpha;
  r.construction = BandConstruction::BootstrapTMax;
  r.B = opt.B;
  r.critical = upper_quantile(tmax, opt.alpha);
  r.t_max_samples = std::move(tmax);
  for (std::size_t v : redraws) r.redraws += v;
  const double z = normal_quantile(1.0 - opt.alpha / 2.0);
  for (std::size_t j = 0; j < spec.levels.size(); ++j) {
    BandRow row;
    row.subgroup = spec.levels[j];
    row.point = base[j].first;
    row.se = base[j].second;
    row.ci_lower = row.point - z * row.se;
    row.ci_upper = row.point + z * row.se;
    row.band_lower = row.point - r.critical * row.se;
    row.band_upper = row.point + r.critical * row.se;
    r.rows.push_back(std::move(row));
  }
  return r;
}

inline const char* kBandsHeader =
    "subgroup,point,se,ci_lower,ci_upper,band_lower,band_upper,band_covers_ci,construction,critical,B";

inline void write_band_rows(std::ostream& out, const BandResult& r) {
  for (const auto& row : r.rows) {
    const bool covers = row.band_lower <= row.ci_lower && row.band_upper >= row.ci_upper;
    out << format_key(row.subgroup) << "," << KeyValueConfig::format_double(row.point) << ","
        << KeyValueConfig::format_double(row.se) << "," << KeyValueConfig::format_double(row.ci_lower) << ","
        << KeyValueConfig::format_double(row.ci_upper) << "," << KeyValueConfig::format_double(row.band_lower) << ","
        << KeyValueConfig::format_double(row.band_upper) << "," << (covers ? 1 : 0) << ","
        << construction_name(r.construction) << "," << KeyValueConfig::format_double(r.critical) << "," << r.B
        << "\n";
  }
}

}  // namespace sgte
