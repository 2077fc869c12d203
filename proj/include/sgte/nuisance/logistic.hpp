#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgte/error.hpp"

namespace sgte {

inline double expit(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p / (1.0 - p)); }

struct IrlsOptions {
  double tolerance = 1e-8;
  int max_iterations = 100;
  /// Ridge used when the unpenalized fit separates.
  double fallback_ridge = 1e-4;
};

/// Result of a logistic or multinomial fit. For the multinomial model
/// `coef` is (columns x classes-1), reference class last.
struct GlmFit {
  Eigen::MatrixXd coef;
  int iterations = 0;
  bool converged = false;
  double max_score = 0.0;
  double ridge = 0.0;
  bool used_fallback = false;
};

namespace glm_detail {

inline void check_rank(const Eigen::MatrixXd& Z) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < Z.cols()) {
    throw Error(Errc::RankDeficient, "design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                         std::to_string(Z.cols()) + " columns");
  }
}

}  // namespace glm_detail

/// Score of the ridge-penalized Bernoulli log-likelihood: Z'(y - p) - ridge * beta.
inline Eigen::VectorXd logistic_score(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                                      double ridge) {
  Eigen::VectorXd eta = Z * beta;
  Eigen::VectorXd resid(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) resid[i] = y[i] - expit(eta[i]);
  return Z.transpose() * resid - ridge * beta;
}

inline double logistic_loglik(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, const Eigen::VectorXd& beta,
                              double ridge) {
  Eigen::VectorXd eta = Z * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    // log(1 + e^eta) computed stably
    const double soft = eta[i] > 0 ? eta[i] + std::log1p(std::exp(-eta[i])) : std::log1p(std::exp(eta[i]));
    ll += y[i] * eta[i] - soft;
  }
  return ll - 0.5 * ridge * beta.squaredNorm();
}

/// Ridge-penalized logistic regression by IRLS with step halving.
///
/// Converged when the largest score component is below the tolerance.
/// With ridge = 0, fitted probabilities collapsing to 0 or 1 raise Separation.
inline GlmFit fit_logistic(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y, double ridge = 0.0,
                           const IrlsOptions& opt = {}) {
  const Eigen::Index q = Z.cols();
  if (Z.rows() != y.size()) throw Error(Errc::InvalidArgument, "fit_logistic: row count mismatch");
  if (ridge == 0.0) {
    const double total = y.sum();
    if (total == 0.0 || total == static_cast<double>(y.size())) {
      throw Error(Errc::Separation, "all labels are equal");
    }
    glm_detail::check_rank(Z);
  }
  GlmFit fit;
  fit.ridge = ridge;
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(q);
  double ll = logistic_loglik(Z, y, beta, ridge);
  Eigen::VectorXd w(Z.rows());
  Eigen::VectorXd resid(Z.rows());
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::VectorXd eta = Z * beta;
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      const double p = expit(eta[i]);
      w[i] = p * (1.0 - p);
      resid[i] = y[i] - p;
      if (ridge == 0.0 && (p < 1e-10 || p > 1.0 - 1e-10)) {
        throw Error(Errc::Separation, "fitted probabilities reached 0 or 1 (quasi-separation)");
      }
    }
    Eigen::VectorXd score = Z.transpose() * resid - ridge * beta;
    fit.max_score = score.cwiseAbs().maxCoeff();
    fit.iterations = it;
    if (fit.max_score < opt.tolerance) {
      fit.converged = true;
      break;
    }
    Eigen::MatrixXd H = Z.transpose() * w.asDiagonal() * Z;
    H.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().maxCoeff()) {
      throw Error(Errc::RankDeficient, "information matrix is singular");
    }
    Eigen::VectorXd step = ldlt.solve(score);
    double t = 1.0;
    Eigen::VectorXd next = beta + step;
    double ll_next = logistic_loglik(Z, y, next, ridge);
    while (ll_next < ll - 1e-12 * std::abs(ll) && t > 1e-8) {
      t *= 0.5;
      next = beta + t * step;
      ll_next = logistic_loglik(Z, y, next, ridge);
    }
    beta = next;
    ll = ll_next;
  }
  if (!fit.converged) {
    fit.max_score = logistic_score(Z, y, beta, ridge).cwiseAbs().maxCoeff();
    fit.iterations = opt.max_iterations;
    fit.converged = fit.max_score < opt.tolerance;
    if (!fit.converged && ridge == 0.0) throw Error(Errc::Separation, "IRLS did not converge");
  }
  fit.coef = beta;
  return fit;
}

/// Unpenalized fit, retried with the fallback ridge on Separation.
inline GlmFit fit_logistic_auto(const Eigen::MatrixXd& Z, const Eigen::VectorXd& y,
                                std::vector<std::string>* warnings = nullptr, const IrlsOptions& opt = {}) {
  try {
    return fit_logistic(Z, y, 0.0, opt);
  } catch (const Error& e) {
    if (e.code() != Errc::Separation) throw;
    if (warnings) warnings->push_back(std::string("logistic fit: ") + e.what() + "; refit with ridge");
    GlmFit fit = fit_logistic(Z, y, opt.fallback_ridge, opt);
    fit.used_fallback = true;
    return fit;
  }
}

/// Class probabilities of a multinomial model for one design row, reference class last.
inline Eigen::VectorXd softmax_row(const Eigen::MatrixXd& coef, const Eigen::Ref<const Eigen::VectorXd>& z) {
  const Eigen::Index k1 = coef.cols();
  Eigen::VectorXd lin(k1 + 1);
  lin.head(k1) = coef.transpose() * z;
  lin[k1] = 0.0;
  const double m = lin.maxCoeff();
  Eigen::VectorXd e = (lin.array() - m).exp();
  return e / e.sum();
}

namespace glm_detail {

inline double multinomial_loglik(const Eigen::MatrixXd& Z, const std::vector<int>& labels, const Eigen::MatrixXd& B,
                                 double ridge) {
  Eigen::MatrixXd lin = Z * B;
  const Eigen::Index k1 = B.cols();
  double ll = 0.0;
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    double m = 0.0;
    for (Eigen::Index c = 0; c < k1; ++c) m = std::max(m, lin(i, c));
    double sum = std::exp(-m);
    for (Eigen::Index c = 0; c < k1; ++c) sum += std::exp(lin(i, c) - m);
    const int y = labels[static_cast<std::size_t>(i)];
    ll += (y < k1 ? lin(i, y) : 0.0) - m - std::log(sum);
  }
  return ll - 0.5 * ridge * B.squaredNorm();
}

}  // namespace glm_detail

/// Score matrix (columns x classes-1) of the ridge-penalized multinomial log-likelihood.
inline Eigen::MatrixXd multinomial_score(const Eigen::MatrixXd& Z, const std::vector<int>& labels,
                                         const Eigen::MatrixXd& B, double ridge) {
  const Eigen::Index k1 = B.cols();
  Eigen::MatrixXd resid(Z.rows(), k1);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    Eigen::VectorXd p = softmax_row(B, Z.row(i).transpose());
    for (Eigen::Index c = 0; c < k1; ++c) resid(i, c) = (labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0) - p[c];
  }
  return Z.transpose() * resid - ridge * B;
}

/// Multinomial logistic regression by Newton-Raphson with step halving.
/// `labels` are class indices in [0, classes); class classes-1 is the reference.
inline GlmFit fit_multinomial(const Eigen::MatrixXd& Z, const std::vector<int>& labels, int classes,
                              double ridge = 0.0, const IrlsOptions& opt = {}) {
  if (classes < 2) throw Error(Errc::InvalidArgument, "fit_multinomial needs at least 2 classes");
  if (static_cast<std::size_t>(Z.rows()) != labels.size()) {
    throw Error(Errc::InvalidArgument, "fit_multinomial: row count mismatch");
  }
  const Eigen::Index q = Z.cols();
  const Eigen::Index k1 = classes - 1;
  if (ridge == 0.0) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(classes), 0);
    for (int y : labels) {
      if (y < 0 || y >= classes) throw Error(Errc::InvalidArgument, "label out of range");
      ++counts[static_cast<std::size_t>(y)];
    }
    for (std::size_t c : counts) {
      if (c == 0) throw Error(Errc::Separation, "a class has no rows");
    }
    glm_detail::check_rank(Z);
  }
  GlmFit fit;
  fit.ridge = ridge;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(q, k1);
  double ll = glm_detail::multinomial_loglik(Z, labels, B, ridge);
  const Eigen::Index dim = q * k1;
  for (int it = 0; it < opt.max_iterations; ++it) {
    Eigen::MatrixXd resid(Z.rows(), k1);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(dim, dim);
    Eigen::MatrixXd probs(Z.rows(), k1);
    for (Eigen::Index i = 0; i < Z.rows(); ++i) {
      Eigen::VectorXd p = softmax_row(B, Z.row(i).transpose());
      for (Eigen::Index c = 0; c < k1; ++c) {
        probs(i, c) = p[c];
        resid(i, c) = (labels[static_cast<std::size_t>(i)] == c ? 1.0 : 0.0) - p[c];
      }
      if (ridge == 0.0 && (p.minCoeff() < 1e-10)) {
        throw Error(Errc::Separation, "fitted class probabilities reached 0 (quasi-separation)");
      }
    }
    Eigen::MatrixXd score = Z.transpose() * resid - ridge * B;
    fit.max_score = score.cwiseAbs().maxCoeff();
    fit.iterations = it;
    if (fit.max_score < opt.tolerance) {
      fit.converged = true;
      break;
    }
    // Block (c, d) of the information: Z' diag(p_c (delta_cd - p_d)) Z.
    for (Eigen::Index c = 0; c < k1; ++c) {
      for (Eigen::Index e = c; e < k1; ++e) {
        Eigen::VectorXd w(Z.rows());
        for (Eigen::Index i = 0; i < Z.rows(); ++i) w[i] = probs(i, c) * ((c == e ? 1.0 : 0.0) - probs(i, e));
        Eigen::MatrixXd blk = Z.transpose() * w.asDiagonal() * Z;
        H.block(c * q, e * q, q, q) = blk;
        if (c != e) H.block(e * q, c * q, q, q) = blk.transpose();
      }
    }
    H.diagonal().array() += ridge;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success || ldlt.vectorD().minCoeff() <= 1e-14 * ldlt.vectorD().maxCoeff()) {
      throw Error(Errc::RankDeficient, "multinomial information matrix is singular");
    }
    Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(score.data(), dim);
    Eigen::VectorXd step_v = ldlt.solve(g);
    Eigen::MatrixXd step = Eigen::Map<const Eigen::MatrixXd>(step_v.data(), q, k1);
    double t = 1.0;
    Eigen::MatrixXd next = B + step;
    double ll_next = glm_detail::multinomial_loglik(Z, labels, next, ridge);
    while (ll_next < ll - 1e-12 * std::abs(ll) && t > 1e-8) {
      t *= 0.5;
      next = B + t * step;
      ll_next = glm_detail::multinomial_loglik(Z, labels, next, ridge);
    }
    B = next;
    ll = ll_next;
  }
  if (!fit.converged) {
    fit.max_score = multinomial_score(Z, labels, B, ridge).cwiseAbs().maxCoeff();
    fit.iterations = opt.max_iterations;
    fit.converged = fit.max_score < opt.tolerance;
    if (!fit.converged && ridge == 0.0) throw Error(Errc::Separation, "Newton iterations did not converge");
  }
  fit.coef = B;
  return fit;
}

inline GlmFit fit_multinomial_auto(const Eigen::MatrixXd& Z, const std::vector<int>& labels, int classes,
                                   std::vector<std::string>* warnings = nullptr, const IrlsOptions& opt = {}) {
  try {
    return fit_multinomial(Z, labels, classes, 0.0, opt);
  } catch (const Error& e) {
    if (e.code() != Errc::Separation) throw;
    if (warnings) warnings->push_back(std::string("multinomial fit: ") + e.what() + "; refit with ridge");
    GlmFit fit = fit_multinomial(Z, labels, classes, opt.fallback_ridge, opt);
    fit.used_fallback = true;
    return fit;
  }
}

}  // namespace sgte
