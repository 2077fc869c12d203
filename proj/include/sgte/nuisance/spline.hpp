#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgte/core.hpp"

namespace sgte {

/// Cubic B-spline basis on a clamped knot vector.
///
/// Outside [lo, hi] the basis is extended linearly from the boundary, so
/// fitted curves extrapolate as straight lines.
class BSplineBasis {
 public:
  static constexpr int kDegree = 3;

  BSplineBasis() = default;

  BSplineBasis(double lo, double hi, std::vector<double> interior) : lo_(lo), hi_(hi) {
    if (!(hi > lo)) throw Error(Errc::InvalidArgument, "spline range is empty");
    knots_.assign(kDegree + 1, lo);
    for (double k : interior) knots_.push_back(k);
    knots_.insert(knots_.end(), kDegree + 1, hi);
  }

  /// Interior knots at the empirical quantiles j/(K+1) of `values`.
  static BSplineBasis at_quantiles(std::vector<double> values, int interior_knots) {
    std::sort(values.begin(), values.end());
    const double lo = values.front();
    const double hi = values.back();
    std::vector<double> interior;
    for (int j = 1; j <= interior_knots; ++j) {
      const double pos = static_cast<double>(j) / (interior_knots + 1) * static_cast<double>(values.size() - 1);
      const auto i = static_cast<std::size_t>(pos);
      const double frac = pos - static_cast<double>(i);
      const double v = i + 1 < values.size() ? values[i] * (1 - frac) + values[i + 1] * frac : values[i];
      if (v > lo && v < hi && (interior.empty() || v > interior.back())) interior.push_back(v);
    }
    return BSplineBasis(lo, hi, interior);
  }

  std::size_t size() const { return knots_.size() - kDegree - 1; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  const std::vector<double>& knots() const { return knots_; }

  /// r-th derivative of every basis function at x, for x inside [lo, hi].
  Eigen::VectorXd derivative_inside(double x, int r) const { return eval(x, kDegree, r); }

  /// Basis values with linear extension beyond the boundary knots.
  Eigen::VectorXd values(double x) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(size()));
    double N[kDegree + 1];
    const std::size_t first = nonzero(x, N);
    for (int j = 0; j <= kDegree; ++j) out[static_cast<Eigen::Index>(first + j)] = N[j];
    return out;
  }

  /// The kDegree+1 possibly nonzero basis values at x (linearly extended
  /// outside the range); returns the index of the first one.
  std::size_t nonzero(double x, double* N) const {
    const double xc = std::clamp(x, lo_, hi_);
    const std::size_t k = span_of(xc);
    triangle(k, xc, kDegree, N);
    if (xc != x) {
      // derivative from the degree-2 values M_{k-2..k}
      double M[kDegree];
      triangle(k, xc, kDegree - 1, M);
      for (int j = 0; j <= kDegree; ++j) {
        const std::size_t i = k - kDegree + static_cast<std::size_t>(j);
        const double left = j >= 1 ? M[j - 1] : 0.0;
        const double right = j <= kDegree - 1 ? M[j] : 0.0;
        const double l1 = knots_[i + kDegree] - knots_[i];
        const double l2 = knots_[i + kDegree + 1] - knots_[i + 1];
        double d = 0.0;
        if (l1 > 0) d += kDegree * left / l1;
        if (l2 > 0) d -= kDegree * right / l2;
        N[j] += (x - xc) * d;
      }
    }
    return k - kDegree;
  }

  /// Gram matrix of second derivatives, integrated exactly over [lo, hi].
  Eigen::MatrixXd second_derivative_penalty() const {
    const std::size_t m = size();
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m));
    // B'' is piecewise linear, so two-point Gauss-Legendre is exact per knot span.
    const double g = 1.0 / std::sqrt(3.0);
    for (std::size_t k = 0; k + 1 < knots_.size(); ++k) {
      const double a = knots_[k];
      const double b = knots_[k + 1];
      if (!(b > a)) continue;
      const double mid = 0.5 * (a + b);
      const double half = 0.5 * (b - a);
      for (double node : {-g, g}) {
        Eigen::VectorXd d2 = eval(mid + half * node, kDegree, 2, k);
        S.noalias() += half * d2 * d2.transpose();
      }
    }
    return S;
  }

 private:
  /// Nonzero degree-p basis values N_{k-p..k} in span k (Cox-de Boor triangle).
  void triangle(std::size_t k, double x, int p, double* N) const {
    double left[kDegree + 1];
    double right[kDegree + 1];
    N[0] = 1.0;
    for (int j = 1; j <= p; ++j) {
      left[j] = x - knots_[k + 1 - static_cast<std::size_t>(j)];
      right[j] = knots_[k + static_cast<std::size_t>(j)] - x;
      double saved = 0.0;
      for (int r = 0; r < j; ++r) {
        const double temp = N[r] / (right[r + 1] + left[j - r]);
        N[r] = saved + right[r + 1] * temp;
        saved = left[j - r] * temp;
      }
      N[j] = saved;
    }
  }

  std::size_t span_of(double x) const {
    // last span [t_k, t_{k+1}) with t_k <= x; x == hi falls into the final nonempty span
    std::size_t k = kDegree;
    const std::size_t last = knots_.size() - kDegree - 2;
    while (k < last && knots_[k + 1] <= x) ++k;
    return k;
  }

  /// Derivative order r of degree-d basis functions (Cox-de Boor), evaluated in span `k`.
  Eigen::VectorXd eval(double x, int d, int r, std::size_t k = std::numeric_limits<std::size_t>::max()) const {
    if (k == std::numeric_limits<std::size_t>::max()) k = span_of(x);
    const std::size_t n = knots_.size() - static_cast<std::size_t>(d) - 1;
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    if (r > d) return out;
    if (d == 0) {
      out[static_cast<Eigen::Index>(k)] = 1.0;
      return out;
    }
    const Eigen::VectorXd lower = eval(x, d - 1, r > 0 ? r - 1 : 0, k);
    for (std::size_t i = 0; i < n; ++i) {
      const double l1 = knots_[i + d] - knots_[i];
      const double l2 = knots_[i + d + 1] - knots_[i + 1];
      const double left = lower[static_cast<Eigen::Index>(i)];
      const double right = lower[static_cast<Eigen::Index>(i + 1)];
      double v = 0.0;
      if (r > 0) {
        if (l1 > 0) v += d * left / l1;
        if (l2 > 0) v -= d * right / l2;
      } else {
        if (l1 > 0) v += (x - knots_[i]) / l1 * left;
        if (l2 > 0) v += (knots_[i + d + 1] - x) / l2 * right;
      }
      out[static_cast<Eigen::Index>(i)] = v;
    }
    return out;
  }

  double lo_ = 0.0;
  double hi_ = 1.0;
  std::vector<double> knots_;
};

struct SplineOptions {
  int interior_knots = 5;
  /// Fixed smoothing parameter; GCV selection when empty.
  std::optional<double> lambda;
  double grid_min = 1e-4;
  double grid_max = 1e4;
  int grid_size = 20;
  /// Terms with fewer training rows degrade to linear.
  std::size_t min_rows = 20;
  /// Continuous columns with fewer distinct training values are treated as linear.
  std::size_t min_distinct = 10;
  /// Per-term GCV coordinate sweeps after the common-lambda search.
  int sweeps = 1;
};

/// One additive component.
struct AdditiveTerm {
  enum class Kind { Spline, Linear, Categorical };
  Kind kind = Kind::Linear;
  std::size_t column = 0;
  std::size_t offset = 0;
  std::size_t width = 0;
  BSplineBasis basis;
  /// Null-space map from the raw basis onto centered coefficients.
  Eigen::MatrixXd constraint;
  Eigen::MatrixXd penalty;
  double lambda = 0.0;
  double center = 0.0;
  std::vector<double> levels;
};

/// Penalized additive regression model: intercept plus one term per covariate.
class AdditiveModel {
 public:
  std::size_t width() const { return width_; }
  const std::vector<AdditiveTerm>& terms() const { return terms_; }
  const Eigen::VectorXd& coefficients() const { return beta_; }
  double gcv() const { return gcv_; }
  double edf() const { return edf_; }

  void fill(std::span<const double> x, double* out) const {
    out[0] = 1.0;
    for (const auto& t : terms_) {
      double* o = out + t.offset;
      const double v = x[t.column];
      switch (t.kind) {
        case AdditiveTerm::Kind::Linear:
          o[0] = v - t.center;
          break;
        case AdditiveTerm::Kind::Categorical:
          for (std::size_t l = 1; l < t.levels.size(); ++l) o[l - 1] = v == t.levels[l] ? 1.0 : 0.0;
          break;
        case AdditiveTerm::Kind::Spline: {
          double N[BSplineBasis::kDegree + 1];
          const auto first = static_cast<Eigen::Index>(t.basis.nonzero(v, N));
          for (std::size_t k = 0; k < t.width; ++k) {
            const auto c = static_cast<Eigen::Index>(k);
            double s = 0.0;
            for (int j = 0; j <= BSplineBasis::kDegree; ++j) s += t.constraint(first + j, c) * N[j];
            o[k] = s;
          }
          break;
        }
      }
    }
  }

  double predict(std::span<const double> x) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(width_));
    fill(x, z.data());
    return z.dot(beta_);
  }

  Eigen::MatrixXd design(const Dataset& d, std::span<const std::size_t> rows) const {
    Eigen::MatrixXd Z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width_));
    Eigen::VectorXd buf(Z.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      fill(d.x(rows[k]), buf.data());
      Z.row(static_cast<Eigen::Index>(k)) = buf.transpose();
    }
    return Z;
  }

  /// Block-diagonal penalty with each term's lambda applied.
  Eigen::MatrixXd penalty() const { return penalty_with(lambdas()); }

  std::vector<double> lambdas() const {
    std::vector<double> out;
    for (const auto& t : terms_) out.push_back(t.lambda);
    return out;
  }

  Eigen::MatrixXd penalty_with(const std::vector<double>& lambda) const {
    const auto w = static_cast<Eigen::Index>(width_);
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(w, w);
    for (std::size_t j = 0; j < terms_.size(); ++j) {
      const auto& t = terms_[j];
      if (t.kind != AdditiveTerm::Kind::Spline) continue;
      const auto o = static_cast<Eigen::Index>(t.offset);
      const auto k = static_cast<Eigen::Index>(t.width);
      P.block(o, o, k, k) = lambda[j] * t.penalty;
    }
    return P;
  }

  std::vector<std::string> coefficient_names(const std::vector<std::string>& covariate_names) const {
    std::vector<std::string> out{"(intercept)"};
    for (const auto& t : terms_) {
      const std::string& base = covariate_names[t.column];
      switch (t.kind) {
        case AdditiveTerm::Kind::Linear: out.push_back(base); break;
        case AdditiveTerm::Kind::Categorical:
          for (std::size_t l = 1; l < t.levels.size(); ++l) {
            out.push_back(base + "=" + KeyValueConfig::format_double(t.levels[l]));
          }
          break;
        case AdditiveTerm::Kind::Spline:
          for (std::size_t k = 0; k < t.width; ++k) out.push_back("s(" + base + ")." + std::to_string(k + 1));
          break;
      }
    }
    return out;
  }

 private:
  friend AdditiveModel fit_spline_additive(const Dataset&, std::span<const std::size_t>, const Eigen::VectorXd&,
                                           const std::vector<std::size_t>&, const std::vector<std::size_t>&,
                                           const SplineOptions&);
  std::vector<AdditiveTerm> terms_;
  std::size_t width_ = 1;
  Eigen::VectorXd beta_;
  double gcv_ = 0.0;
  double edf_ = 0.0;
};

/// Penalized least-squares objective ||y - Z b||^2 + b' P b.
inline double penalized_objective(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::MatrixXd& P,
                                  const Eigen::VectorXd& b) {
  return (y - Z * b).squaredNorm() + b.dot(P * b);
}

inline Eigen::VectorXd penalized_gradient(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::MatrixXd& P,
                                          const Eigen::VectorXd& b) {
  return -2.0 * Z.transpose() * (y - Z * b) + 2.0 * P * b;
}

namespace spline_detail {

struct Solved {
  Eigen::VectorXd beta;
  double gcv = 0.0;
  double edf = 0.0;
};

inline Solved solve(const Eigen::MatrixXd& ZtZ, const Eigen::VectorXd& Zty, double yty, double n,
                    const Eigen::MatrixXd& P) {
  Eigen::MatrixXd A = ZtZ + P;
  Eigen::LLT<Eigen::MatrixXd> llt(A);
  if (llt.info() != Eigen::Success) throw Error(Errc::RankDeficient, "penalized normal equations are singular");
  Solved s;
  s.beta = llt.solve(Zty);
  s.edf = llt.solve(ZtZ).trace();
  const double rss = std::max(0.0, yty - 2.0 * s.beta.dot(Zty) + s.beta.dot(ZtZ * s.beta));
  const double denom = n - s.edf;
  s.gcv = denom > 0 ? n * rss / (denom * denom) : std::numeric_limits<double>::infinity();
  return s;
}

}  // namespace spline_detail

/// Penalized cubic-spline additive model fitted on `rows`.
///
/// Continuous columns get a centered cubic B-spline term with quantile knots
/// and an integrated squared second-derivative penalty (null space: the linear
/// part, so a huge lambda reproduces the linear fit). Categorical columns are
/// dummy coded. Smoothing parameters come from GCV unless opt.lambda is set.
inline AdditiveModel fit_spline_additive(const Dataset& d, std::span<const std::size_t> rows, const Eigen::VectorXd& y,
                                         const std::vector<std::size_t>& columns,
                                         const std::vector<std::size_t>& categorical, const SplineOptions& opt = {}) {
  if (static_cast<std::size_t>(y.size()) != rows.size()) {
    throw Error(Errc::InvalidArgument, "fit_spline_additive: response length mismatch");
  }
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw Error(Errc::NonFiniteResponse, "response is not finite");
  }
  AdditiveModel m;
  std::size_t offset = 1;
  for (std::size_t c : columns) {
    AdditiveTerm t;
    t.column = c;
    t.offset = offset;
    std::vector<double> v(rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) v[k] = d.x(rows[k], c);
    std::set<double> distinct(v.begin(), v.end());
    if (std::find(categorical.begin(), categorical.end(), c) != categorical.end()) {
      t.kind = AdditiveTerm::Kind::Categorical;
      t.levels.assign(distinct.begin(), distinct.end());
      t.width = t.levels.size() - 1;
    } else if (rows.size() < opt.min_rows || distinct.size() < opt.min_distinct) {
      t.kind = AdditiveTerm::Kind::Linear;
      double mean = 0.0;
      for (double x : v) mean += x;
      t.center = v.empty() ? 0.0 : mean / static_cast<double>(v.size());
      t.width = 1;
    } else {
      t.kind = AdditiveTerm::Kind::Spline;
      t.basis = BSplineBasis::at_quantiles(v, opt.interior_knots);
      const auto kb = static_cast<Eigen::Index>(t.basis.size());
      Eigen::MatrixXd B(static_cast<Eigen::Index>(v.size()), kb);
      for (std::size_t k = 0; k < v.size(); ++k) B.row(static_cast<Eigen::Index>(k)) = t.basis.values(v[k]).transpose();
      // Sum-to-zero constraint over training rows, imposed through the null space of the column sums.
      Eigen::VectorXd csum = B.colwise().sum().transpose();
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(csum);
      Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(kb, kb);
      t.constraint = Q.rightCols(kb - 1);
      Eigen::MatrixXd Bc = B * t.constraint;
      Eigen::MatrixXd S = t.constraint.transpose() * t.basis.second_derivative_penalty() * t.constraint;
      const double scale = (Bc.transpose() * Bc).norm() / std::max(S.norm(), 1e-300);
      t.penalty = scale * S;
      t.width = static_cast<std::size_t>(kb - 1);
    }
    offset += t.width;
    m.terms_.push_back(std::move(t));
  }
  m.width_ = offset;

  const Eigen::MatrixXd Z = m.design(d, rows);
  const Eigen::MatrixXd ZtZ = Z.transpose() * Z;
  const Eigen::VectorXd Zty = Z.transpose() * y;
  const double yty = y.squaredNorm();
  const auto n = static_cast<double>(rows.size());

  const std::size_t nt = m.terms_.size();
  std::vector<double> lambda(nt, opt.lambda.value_or(1.0));
  bool any_spline = false;
  for (const auto& t : m.terms_) any_spline = any_spline || t.kind == AdditiveTerm::Kind::Spline;
  spline_detail::Solved best;
  if (!opt.lambda && any_spline) {
    std::vector<double> grid(static_cast<std::size_t>(opt.grid_size));
    for (int g = 0; g < opt.grid_size; ++g) {
      const double f = opt.grid_size > 1 ? static_cast<double>(g) / (opt.grid_size - 1) : 0.0;
      grid[static_cast<std::size_t>(g)] =
          std::exp(std::log(opt.grid_min) + f * (std::log(opt.grid_max) - std::log(opt.grid_min)));
    }
    double best_gcv = std::numeric_limits<double>::infinity();
    for (double l : grid) {
      std::vector<double> trial(nt, l);
      auto s = spline_detail::solve(ZtZ, Zty, yty, n, m.penalty_with(trial));
      if (s.gcv < best_gcv) {
        best_gcv = s.gcv;
        best = s;
        lambda = trial;
      }
    }
    for (int sweep = 0; sweep < opt.sweeps; ++sweep) {
      for (std::size_t j = 0; j < nt; ++j) {
        if (m.terms_[j].kind != AdditiveTerm::Kind::Spline) continue;
        for (double l : grid) {
          if (l == lambda[j]) continue;
          std::vector<double> trial = lambda;
          trial[j] = l;
          auto s = spline_detail::solve(ZtZ, Zty, yty, n, m.penalty_with(trial));
          if (s.gcv < best_gcv) {
            best_gcv = s.gcv;
            best = s;
            lambda = trial;
          }
        }
      }
    }
  } else {
    best = spline_detail::solve(ZtZ, Zty, yty, n, m.penalty_with(lambda));
  }
  for (std::size_t j = 0; j < nt; ++j) m.terms_[j].lambda = lambda[j];
  m.beta_ = best.beta;
  m.gcv_ = best.gcv;
  m.edf_ = best.edf;
  return m;
}

/// Ordinary least squares on a dense design, with a rank check.
inline Eigen::VectorXd fit_least_squares(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y) {
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (!std::isfinite(y[i])) throw Error(Errc::NonFiniteResponse, "response is not finite");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < Z.cols()) throw Error(Errc::RankDeficient, "linear design matrix is rank deficient");
  return qr.solve(y);
}

}  // namespace sgte
