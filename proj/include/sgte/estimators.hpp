#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgte/core.hpp"
#include "sgte/nuisance/nuisance.hpp"
#include "sgte/rng.hpp"

namespace sgte {

/// Evaluation fold of every row plus the derived index lists.
struct FoldAssignment {
  int K = 1;
  std::vector<int> fold;
  std::vector<std::vector<std::size_t>> eval;
  std::vector<std::vector<std::size_t>> train;
};

/// Stratified K-fold split: each source stratum and the r = 0 stratum is
/// shuffled and dealt round robin, so fold sizes within a stratum differ by
/// at most one.
inline FoldAssignment assign_folds(const Dataset& d, int K, std::uint64_t seed, bool require_external = false) {
  if (K < 2) throw Error(Errc::InvalidArgument, "cross-fitting needs K >= 2");
  std::map<int, std::vector<std::size_t>> strata;
  constexpr int kExternal = INT_MIN;
  for (std::size_t i = 0; i < d.size(); ++i) strata[d.in_multisource(i) ? d.s(i) : kExternal].push_back(i);
  FoldAssignment f;
  f.K = K;
  f.fold.assign(d.size(), 0);
  Rng rng(seed);
  for (auto& [key, rows] : strata) {
    const bool external = key == kExternal;
    if (rows.size() < static_cast<std::size_t>(K) && (!external || require_external)) {
      throw Error(Errc::StratumTooSmall, (external ? std::string("external stratum") : "source " + std::to_string(key)) +
                                             " has " + std::to_string(rows.size()) + " rows, fewer than K = " +
                                             std::to_string(K));
    }
    shuffle(std::span<std::size_t>(rows), rng);
    for (std::size_t k = 0; k < rows.size(); ++k) f.fold[rows[k]] = static_cast<int>(k % static_cast<std::size_t>(K));
  }
  f.eval.assign(static_cast<std::size_t>(K), {});
  f.train.assign(static_cast<std::size_t>(K), {});
  for (std::size_t i = 0; i < d.size(); ++i) {
    for (int k = 0; k < K; ++k) (k == f.fold[i] ? f.eval : f.train)[static_cast<std::size_t>(k)].push_back(i);
  }
  return f;
}

/// Out-of-fold nuisance predictions, one row per observation (trimmed probabilities).
struct PredictionTable {
  std::vector<int> treatments;
  std::vector<int> sources;
  /// Row-major n x |A|.
  std::vector<double> mu;
  std::vector<double> eta;
  /// Row-major n x |S|.
  std::vector<double> q;
  std::vector<double> p;

  double mu_at(std::size_t i, int a) const { return mu[i * treatments.size() + index(treatments, a)]; }
  double eta_at(std::size_t i, int a) const { return eta[i * treatments.size() + index(treatments, a)]; }
  double q_at(std::size_t i, int s) const { return q[i * sources.size() + index(sources, s)]; }

  static std::size_t index(const std::vector<int>& levels, int v) {
    auto it = std::lower_bound(levels.begin(), levels.end(), v);
    if (it == levels.end() || *it != v) throw Error(Errc::InvalidArgument, "unknown level " + std::to_string(v));
    return static_cast<std::size_t>(it - levels.begin());
  }
};

/// Nuisance sets per fold with their evaluation-fold predictions.
struct CrossFit {
  TargetSpec target;
  FoldAssignment folds;
  std::vector<NuisanceSet> sets;
  PredictionTable pred;
  std::vector<std::string> warnings;
};

namespace est_detail {

inline void fill_predictions(const Dataset& d, const TargetSpec& t, CrossFit& cf) {
  PredictionTable& P = cf.pred;
  P.treatments = d.treatment_levels();
  P.sources = d.source_levels();
  const std::size_t n = d.size();
  const std::size_t na = P.treatments.size();
  const std::size_t ns = P.sources.size();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  P.mu.assign(n * na, nan);
  P.eta.assign(n * na, nan);
  P.q.assign(n * ns, nan);
  P.p.assign(n, nan);
  for (std::size_t i = 0; i < n; ++i) {
    if (!t.uses(d, i)) continue;
    const NuisanceSet& set = cf.sets[static_cast<std::size_t>(cf.folds.fold[i])];
    const auto x = d.x(i);
    for (std::size_t k = 0; k < na; ++k) P.mu[i * na + k] = set.mu_at(P.treatments[k], x);
    // weights enter only through multi-source rows
    if (!d.in_multisource(i)) continue;
    for (std::size_t k = 0; k < na; ++k) P.eta[i * na + k] = set.eta_at(P.treatments[k], x);
    for (std::size_t k = 0; k < ns; ++k) P.q[i * ns + k] = set.q_at(P.sources[k], x);
    if (t.is_external()) P.p[i] = set.p_at(x);
  }
}

}  // namespace est_detail

/// Stratified K-fold cross-fitting: nuisances for fold k are trained on the
/// other folds and predict on fold k.
inline CrossFit cross_fit(const Dataset& d, const NuisanceSpec& spec, const TargetSpec& t, int K = 2,
                          std::uint64_t seed = 0, const OracleProvider* oracle = nullptr) {
  check_target(d, t);
  CrossFit cf;
  cf.target = t;
  cf.folds = assign_folds(d, K, seed, t.is_external());
  for (int k = 0; k < K; ++k) {
    NuisanceSet set = fit_nuisances(d, spec, t, cf.folds.train[static_cast<std::size_t>(k)], oracle);
    set.fold_id = k;
    for (const auto& w : set.warnings) cf.warnings.push_back("fold " + std::to_string(k) + ": " + w);
    cf.sets.push_back(std::move(set));
  }
  est_detail::fill_predictions(d, t, cf);
  return cf;
}

/// A single fold evaluated with fixed nuisances (oracle runs, fast bootstrap).
inline CrossFit fixed_nuisances(const Dataset& d, NuisanceSet set, const TargetSpec& t) {
  check_target(d, t);
  CrossFit cf;
  cf.target = t;
  cf.folds.K = 1;
  cf.folds.fold.assign(d.size(), 0);
  cf.folds.eval.assign(1, all_columns(d.size()));
  cf.folds.train.assign(1, {});
  set.fold_id = 0;
  cf.sets.push_back(std::move(set));
  est_detail::fill_predictions(d, t, cf);
  return cf;
}

enum class Method { DR, PlugIn, IPTW };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::DR: return "dr";
    case Method::PlugIn: return "plugin";
    case Method::IPTW: return "iptw";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "dr") return Method::DR;
  if (s == "plugin") return Method::PlugIn;
  if (s == "iptw") return Method::IPTW;
  throw Error(Errc::Schema, "unknown method '" + s + "' (dr, plugin, iptw)");
}

/// Estimate for one (target, treatment, subgroup) cell.
///
/// if_values has one entry per dataset row; rows outside the estimating
/// equation (r = 0 rows for internal targets) hold 0. se is NaN for the
/// plug-in and IPTW estimators.
struct SubgroupEstimate {
  TargetSpec target;
  Method method = Method::DR;
  int treatment = 0;
  SubgroupKey subgroup;
  double point = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> if_values;
  /// Mean of the per-fold kappa (internal) or gamma (external).
  double kappa_or_gamma = 0.0;
  std::size_t n_cell = 0;
  std::size_t n_used = 0;
  double max_weight = 0.0;
  std::vector<double> fold_points;
  std::vector<std::size_t> fold_cells;
  std::vector<std::size_t> fold_sizes;

  bool has_se() const { return std::isfinite(se); }
};

/// Contrast between two treatments in one subgroup.
struct EffectEstimate {
  TargetSpec target;
  Method method = Method::DR;
  int a = 1;
  int a_ref = 0;
  SubgroupKey subgroup;
  double point = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> if_values;
  std::size_t n_cell = 0;
  std::size_t n_used = 0;
  double max_weight = 0.0;
  std::vector<double> fold_points;
  std::vector<std::size_t> fold_cells;

  bool has_se() const { return std::isfinite(se); }
};

/// Per-fold estimate of the subgroup mean under treatment `a` for the cross-fit's target.
///
/// Internal target s, fold k with n_k multi-source rows:
///   phi_k = (kappa_k / n_k) sum [ I(x~, S=s) mu_a + I(A=a, x~) (q_s / eta_a) (Y - mu_a) ],
///   kappa_k = n_k / #{x~, S=s}.
/// External target, n_k all rows in fold k:
///   psi_k = (gamma_k / n_k) sum [ I(x~, R=0) g_a + I(A=a, x~, R=1) (1-p)/(p e_a) (Y - g_a) ].
/// The point estimate is the average of the fold estimates. Influence values
/// use the fold's own estimate, so they average to zero within every fold.
inline SubgroupEstimate estimate(const Dataset& d, const CrossFit& cf, Method method, int a, const SubgroupSpec& spec,
                                 const SubgroupKey& key) {
  const TargetSpec& t = cf.target;
  const PredictionTable& P = cf.pred;
  PredictionTable::index(P.treatments, a);
  if (key.size() != spec.columns.size()) throw Error(Errc::InvalidArgument, "subgroup key has wrong arity");
  SubgroupEstimate e;
  e.target = t;
  e.method = method;
  e.treatment = a;
  e.subgroup = key;
  const bool want_if = method == Method::DR;
  if (want_if) e.if_values.assign(d.size(), 0.0);
  const std::size_t K = cf.folds.eval.size();
  double se_sum = 0.0;
  double kappa_sum = 0.0;
  std::size_t s_idx = t.is_external() ? 0 : PredictionTable::index(P.sources, t.source);
  std::size_t a_idx = PredictionTable::index(P.treatments, a);
  const std::size_t na = P.treatments.size();
  const std::size_t ns = P.sources.size();
  for (std::size_t k = 0; k < K; ++k) {
    const auto& rows = cf.folds.eval[k];
    std::size_t nk = 0;
    std::size_t cell = 0;
    for (std::size_t i : rows) {
      if (!t.uses(d, i)) continue;
      ++nk;
      if (t.contains(d, i) && spec.matches(d, i, key)) ++cell;
    }
    if (cell == 0) {
      throw Error(Errc::ZeroCell, "subgroup " + format_key(key) + " has no rows in target " + t.label() +
                                      (K > 1 ? " within fold " + std::to_string(k) : std::string()));
    }
    const double kappa = static_cast<double>(nk) / static_cast<double>(cell);
    double sum_outcome = 0.0;
    double sum_aug = 0.0;
    for (std::size_t i : rows) {
      if (!t.uses(d, i) || !spec.matches(d, i, key)) continue;
      const double mu = P.mu[i * na + a_idx];
      if (t.contains(d, i) && method != Method::IPTW) sum_outcome += mu;
      if (!d.in_multisource(i) || d.a(i) != a || method == Method::PlugIn) continue;
      double w = 0.0;
      if (t.is_external()) {
        const double p = P.p[i];
        w = (1.0 - p) / (p * P.eta[i * na + a_idx]);
      } else {
        w = P.q[i * ns + s_idx] / P.eta[i * na + a_idx];
      }
      if (!std::isfinite(w)) {
        throw Error(Errc::NonFiniteWeight, "row " + std::to_string(i + 1) + ": weight is not finite");
      }
      e.max_weight = std::max(e.max_weight, w);
      sum_aug += w * (method == Method::IPTW ? d.y(i) : d.y(i) - mu);
    }
    const double point = kappa / static_cast<double>(nk) * (sum_outcome + sum_aug);
    if (want_if) {
      for (std::size_t i : rows) {
        if (!t.uses(d, i) || !spec.matches(d, i, key)) continue;
        const double mu = P.mu[i * na + a_idx];
        double v = t.contains(d, i) ? mu - point : 0.0;
        if (d.in_multisource(i) && d.a(i) == a) {
          const double w = t.is_external() ? (1.0 - P.p[i]) / (P.p[i] * P.eta[i * na + a_idx])
                                           : P.q[i * ns + s_idx] / P.eta[i * na + a_idx];
          v += w * (d.y(i) - mu);
        }
        v *= kappa;
        e.if_values[i] = v;
        se_sum += v * v;
      }
    }
    e.fold_points.push_back(point);
    e.fold_cells.push_back(cell);
    e.fold_sizes.push_back(nk);
    e.n_cell += cell;
    e.n_used += nk;
    kappa_sum += kappa;
  }
  double total = 0.0;
  for (double v : e.fold_points) total += v;
  e.point = total / static_cast<double>(K);
  e.kappa_or_gamma = kappa_sum / static_cast<double>(K);
  if (want_if) e.se = std::sqrt(se_sum) / static_cast<double>(e.n_used);
  return e;
}

inline SubgroupEstimate estimate_internal_dr(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                             const SubgroupKey& key) {
  if (cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an external target");
  return estimate(d, cf, Method::DR, a, spec, key);
}
inline SubgroupEstimate estimate_internal_plugin(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                                 const SubgroupKey& key) {
  if (cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an external target");
  return estimate(d, cf, Method::PlugIn, a, spec, key);
}
inline SubgroupEstimate estimate_internal_iptw(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                               const SubgroupKey& key) {
  if (cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an external target");
  return estimate(d, cf, Method::IPTW, a, spec, key);
}
inline SubgroupEstimate estimate_external_dr(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                             const SubgroupKey& key) {
  if (!cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an internal target");
  return estimate(d, cf, Method::DR, a, spec, key);
}
inline SubgroupEstimate estimate_external_plugin(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                                 const SubgroupKey& key) {
  if (!cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an internal target");
  return estimate(d, cf, Method::PlugIn, a, spec, key);
}
inline SubgroupEstimate estimate_external_iptw(const Dataset& d, const CrossFit& cf, int a, const SubgroupSpec& spec,
                                               const SubgroupKey& key) {
  if (!cf.target.is_external()) throw Error(Errc::InvalidArgument, "cross-fit was built for an internal target");
  return estimate(d, cf, Method::IPTW, a, spec, key);
}

/// Every declared level of `spec`, in order.
inline std::vector<SubgroupEstimate> estimate_all(const Dataset& d, const CrossFit& cf, Method method, int a,
                                                  const SubgroupSpec& spec) {
  std::vector<SubgroupEstimate> out;
  out.reserve(spec.levels.size());
  for (const auto& key : spec.levels) out.push_back(estimate(d, cf, method, a, spec, key));
  return out;
}

/// Contrast of two component estimates of the same cell.
inline EffectEstimate contrast(const SubgroupEstimate& e1, const SubgroupEstimate& e0) {
  if (!(e1.target == e0.target) || e1.subgroup != e0.subgroup || e1.method != e0.method) {
    throw Error(Errc::InvalidArgument, "contrast of estimates from different cells");
  }
  EffectEstimate out;
  out.target = e1.target;
  out.method = e1.method;
  out.a = e1.treatment;
  out.a_ref = e0.treatment;
  out.subgroup = e1.subgroup;
  out.point = e1.point - e0.point;
  out.n_cell = e1.n_cell;
  out.n_used = e1.n_used;
  out.max_weight = std::max(e1.max_weight, e0.max_weight);
  for (std::size_t k = 0; k < e1.fold_points.size(); ++k) out.fold_points.push_back(e1.fold_points[k] - e0.fold_points[k]);
  out.fold_cells = e1.fold_cells;
  if (!e1.if_values.empty() && !e0.if_values.empty()) {
    out.if_values.resize(e1.if_values.size());
    double ss = 0.0;
    for (std::size_t i = 0; i < e1.if_values.size(); ++i) {
      out.if_values[i] = e1.if_values[i] - e0.if_values[i];
      ss += out.if_values[i] * out.if_values[i];
    }
    out.se = std::sqrt(ss) / static_cast<double>(out.n_used);
  }
  return out;
}

inline EffectEstimate estimate_effect(const Dataset& d, const CrossFit& cf, Method method, int a, int a_ref,
                                      const SubgroupSpec& spec, const SubgroupKey& key) {
  return contrast(estimate(d, cf, method, a, spec, key), estimate(d, cf, method, a_ref, spec, key));
}

/// Largest |mean IF| over the evaluation folds (0 up to rounding for DR estimates).
inline double if_mean_gap(const Dataset& d, const CrossFit& cf, const std::vector<double>& if_values) {
  double worst = 0.0;
  for (const auto& rows : cf.folds.eval) {
    double sum = 0.0;
    std::size_t n = 0;
    for (std::size_t i : rows) {
      if (!cf.target.uses(d, i)) continue;
      sum += if_values[i];
      ++n;
    }
    if (n) worst = std::max(worst, std::abs(sum / static_cast<double>(n)));
  }
  return worst;
}

/// Largest per-fold gap between sum_x (n_x / n_target) phi_k(x) over the
/// levels of an exhaustive spec and the estimate without subgroups.
inline double aggregation_gap(const Dataset& d, const CrossFit& cf, Method method, int a, const SubgroupSpec& spec) {
  const SubgroupSpec none{{}, {SubgroupKey{}}};
  const SubgroupEstimate overall = estimate(d, cf, method, a, none, SubgroupKey{});
  std::vector<double> agg(overall.fold_points.size(), 0.0);
  for (const auto& key : spec.levels) {
    const SubgroupEstimate e = estimate(d, cf, method, a, spec, key);
    for (std::size_t k = 0; k < agg.size(); ++k) {
      agg[k] += static_cast<double>(e.fold_cells[k]) / static_cast<double>(overall.fold_cells[k]) * e.fold_points[k];
    }
  }
  double worst = 0.0;
  for (std::size_t k = 0; k < agg.size(); ++k) worst = std::max(worst, std::abs(agg[k] - overall.fold_points[k]));
  return worst;
}

inline const char* kEstimatesHeader =
    "target,method,treatment,subgroup,point,se,n_cell,n_used,kappa_or_gamma,max_weight,fold_points,fold_cells";

namespace est_detail {

/// "all" for the estimate without subgroups.
inline std::string subgroup_label(const SubgroupKey& key) { return key.empty() ? "all" : format_key(key); }

template <class T>
std::string joined(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ";";
    if constexpr (std::is_floating_point_v<T>) {
      out += KeyValueConfig::format_double(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

}  // namespace est_detail

inline void write_estimate_row(std::ostream& out, const SubgroupEstimate& e) {
  out << e.target.label() << "," << method_name(e.method) << "," << e.treatment << ","
      << est_detail::subgroup_label(e.subgroup) << ","
      << KeyValueConfig::format_double(e.point) << ","
      << (e.has_se() ? KeyValueConfig::format_double(e.se) : std::string("NA")) << "," << e.n_cell << "," << e.n_used
      << "," << KeyValueConfig::format_double(e.kappa_or_gamma) << "," << KeyValueConfig::format_double(e.max_weight)
      << "," << est_detail::joined(e.fold_points) << "," << est_detail::joined(e.fold_cells) << "\n";
}

inline void write_effect_row(std::ostream& out, const EffectEstimate& e) {
  out << e.target.label() << "," << method_name(e.method) << "," << e.a << "-" << e.a_ref << ","
      << est_detail::subgroup_label(e.subgroup) << "," << KeyValueConfig::format_double(e.point) << ","
      << (e.has_se() ? KeyValueConfig::format_double(e.se) : std::string("NA")) << "," << e.n_cell << "," << e.n_used
      << ",NA," << KeyValueConfig::format_double(e.max_weight) << "," << est_detail::joined(e.fold_points) << ","
      << est_detail::joined(e.fold_cells) << "\n";
}

inline nlohmann::json to_json(const SubgroupEstimate& e) {
  nlohmann::json j;
  j["target"] = e.target.label();
  j["method"] = method_name(e.method);
  j["treatment"] = e.treatment;
  j["subgroup"] = e.subgroup;
  j["point"] = e.point;
  j["se"] = e.has_se() ? nlohmann::json(e.se) : nlohmann::json(nullptr);
  j["n_cell"] = e.n_cell;
  j["n_used"] = e.n_used;
  j["kappa_or_gamma"] = e.kappa_or_gamma;
  j["max_weight"] = e.max_weight;
  j["fold_points"] = e.fold_points;
  return j;
}

inline nlohmann::json to_json(const EffectEstimate& e) {
  nlohmann::json j;
  j["target"] = e.target.label();
  j["method"] = method_name(e.method);
  j["treatment"] = std::to_string(e.a) + "-" + std::to_string(e.a_ref);
  j["subgroup"] = e.subgroup;
  j["point"] = e.point;
  j["se"] = e.has_se() ? nlohmann::json(e.se) : nlohmann::json(nullptr);
  j["n_cell"] = e.n_cell;
  j["n_used"] = e.n_used;
  j["max_weight"] = e.max_weight;
  j["fold_points"] = e.fold_points;
  return j;
}

}  // namespace sgte
