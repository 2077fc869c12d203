#pragma once

#include <bit>
#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "sgte/config.hpp"
#include "sgte/core.hpp"
#include "sgte/nuisance/design.hpp"
#include "sgte/nuisance/logistic.hpp"
#include "sgte/nuisance/spline.hpp"
#include "sgte/rng.hpp"

namespace sgte {

enum class OutcomeModel { SplineAdditive, Linear, Oracle, PerturbedOracle };
/// Fitted means logistic (propensity, participation) or multinomial (source).
enum class ProbabilityModel { Fitted, Oracle, PerturbedOracle };

inline std::string outcome_model_name(OutcomeModel m) {
  switch (m) {
    case OutcomeModel::SplineAdditive: return "spline";
    case OutcomeModel::Linear: return "linear";
    case OutcomeModel::Oracle: return "oracle";
    case OutcomeModel::PerturbedOracle: return "perturbed";
  }
  return "?";
}

inline OutcomeModel parse_outcome_model(const std::string& s) {
  if (s == "spline") return OutcomeModel::SplineAdditive;
  if (s == "linear") return OutcomeModel::Linear;
  if (s == "oracle") return OutcomeModel::Oracle;
  if (s == "perturbed") return OutcomeModel::PerturbedOracle;
  throw Error(Errc::Schema, "unknown outcome model '" + s + "' (spline, linear, oracle, perturbed)");
}

inline std::string probability_model_name(ProbabilityModel m, const char* fitted) {
  switch (m) {
    case ProbabilityModel::Fitted: return fitted;
    case ProbabilityModel::Oracle: return "oracle";
    case ProbabilityModel::PerturbedOracle: return "perturbed";
  }
  return "?";
}

inline ProbabilityModel parse_probability_model(const std::string& s, const char* fitted) {
  if (s == fitted) return ProbabilityModel::Fitted;
  if (s == "oracle") return ProbabilityModel::Oracle;
  if (s == "perturbed") return ProbabilityModel::PerturbedOracle;
  throw Error(Errc::Schema, "unknown model '" + s + "' (" + fitted + ", oracle, perturbed)");
}

/// Which nuisance models to fit and on which covariates.
struct NuisanceSpec {
  OutcomeModel outcome = OutcomeModel::SplineAdditive;
  ProbabilityModel propensity = ProbabilityModel::Fitted;
  ProbabilityModel source = ProbabilityModel::Fitted;
  ProbabilityModel participation = ProbabilityModel::Fitted;
  /// Covariates of the outcome model; all columns when empty.
  std::optional<std::vector<std::size_t>> outcome_covariates;
  /// Covariates of the propensity, source and participation models; all columns when empty.
  std::optional<std::vector<std::size_t>> weight_covariates;
  /// Columns dummy-expanded in every model.
  std::vector<std::size_t> categorical;
  /// Linear outcome model: fit one model per arm (true) or a pooled model with a treatment main effect.
  bool include_treatment_interactions = true;
  double trim_epsilon = 0.01;
  SplineOptions spline;
  IrlsOptions irls;

  bool uses_oracle() const {
    return outcome == OutcomeModel::Oracle || outcome == OutcomeModel::PerturbedOracle ||
           propensity != ProbabilityModel::Fitted || source != ProbabilityModel::Fitted ||
           participation != ProbabilityModel::Fitted;
  }

  bool uses_perturbation() const {
    return outcome == OutcomeModel::PerturbedOracle || propensity == ProbabilityModel::PerturbedOracle ||
           source == ProbabilityModel::PerturbedOracle || participation == ProbabilityModel::PerturbedOracle;
  }

  void validate() const {
    if (!(trim_epsilon > 0.0 && trim_epsilon < 0.5)) {
      throw Error(Errc::InvalidArgument, "trim_epsilon must lie in (0, 0.5)");
    }
    if (spline.interior_knots < 1) throw Error(Errc::InvalidArgument, "spline needs at least one interior knot");
    if (spline.grid_size < 1 || !(spline.grid_min > 0) || !(spline.grid_max >= spline.grid_min)) {
      throw Error(Errc::InvalidArgument, "invalid GCV grid");
    }
  }

  KeyValueConfig to_config() const {
    KeyValueConfig c;
    c.set("outcome_model", outcome_model_name(outcome));
    c.set("propensity_model", probability_model_name(propensity, "logistic"));
    c.set("source_model", probability_model_name(source, "multinomial"));
    c.set("participation_model", probability_model_name(participation, "logistic"));
    if (outcome_covariates) {
      c.set_list("outcome_covariates", *outcome_covariates);
    } else {
      c.set("outcome_covariates", std::string("all"));
    }
    if (weight_covariates) {
      c.set_list("weight_covariates", *weight_covariates);
    } else {
      c.set("weight_covariates", std::string("all"));
    }
    c.set_list("categorical", categorical);
    c.set("treatment_interactions", include_treatment_interactions);
    c.set("trim_epsilon", trim_epsilon);
    c.set("spline.interior_knots", static_cast<long long>(spline.interior_knots));
    if (spline.lambda) {
      c.set("spline.lambda", *spline.lambda);
    } else {
      c.set("spline.lambda", std::string("gcv"));
    }
    c.set("spline.grid_min", spline.grid_min);
    c.set("spline.grid_max", spline.grid_max);
    c.set("spline.grid_size", static_cast<long long>(spline.grid_size));
    c.set("spline.min_rows", static_cast<long long>(spline.min_rows));
    c.set("spline.min_distinct", static_cast<long long>(spline.min_distinct));
    c.set("spline.sweeps", static_cast<long long>(spline.sweeps));
    c.set("irls.tolerance", irls.tolerance);
    c.set("irls.max_iterations", static_cast<long long>(irls.max_iterations));
    c.set("irls.fallback_ridge", irls.fallback_ridge);
    return c;
  }

  /// Missing keys keep their defaults.
  static NuisanceSpec from_config(const KeyValueConfig& c) {
    NuisanceSpec s;
    if (c.has("outcome_model")) s.outcome = parse_outcome_model(c.get("outcome_model"));
    if (c.has("propensity_model")) s.propensity = parse_probability_model(c.get("propensity_model"), "logistic");
    if (c.has("source_model")) s.source = parse_probability_model(c.get("source_model"), "multinomial");
    if (c.has("participation_model")) {
      s.participation = parse_probability_model(c.get("participation_model"), "logistic");
    }
    auto subset = [&](const std::string& key) -> std::optional<std::vector<std::size_t>> {
      if (!c.has(key) || c.get(key) == "all") return std::nullopt;
      return c.get_indices(key);
    };
    s.outcome_covariates = subset("outcome_covariates");
    s.weight_covariates = subset("weight_covariates");
    if (c.has("categorical")) s.categorical = c.get_indices("categorical");
    if (c.has("treatment_interactions")) s.include_treatment_interactions = c.get_bool("treatment_interactions");
    s.trim_epsilon = c.get_double_or("trim_epsilon", s.trim_epsilon);
    if (c.has("spline.interior_knots")) s.spline.interior_knots = static_cast<int>(c.get_int("spline.interior_knots"));
    if (c.has("spline.lambda") && c.get("spline.lambda") != "gcv") s.spline.lambda = c.get_double("spline.lambda");
    s.spline.grid_min = c.get_double_or("spline.grid_min", s.spline.grid_min);
    s.spline.grid_max = c.get_double_or("spline.grid_max", s.spline.grid_max);
    if (c.has("spline.grid_size")) s.spline.grid_size = static_cast<int>(c.get_int("spline.grid_size"));
    if (c.has("spline.min_rows")) s.spline.min_rows = static_cast<std::size_t>(c.get_int("spline.min_rows"));
    if (c.has("spline.min_distinct")) {
      s.spline.min_distinct = static_cast<std::size_t>(c.get_int("spline.min_distinct"));
    }
    if (c.has("spline.sweeps")) s.spline.sweeps = static_cast<int>(c.get_int("spline.sweeps"));
    s.irls.tolerance = c.get_double_or("irls.tolerance", s.irls.tolerance);
    if (c.has("irls.max_iterations")) s.irls.max_iterations = static_cast<int>(c.get_int("irls.max_iterations"));
    s.irls.fallback_ridge = c.get_double_or("irls.fallback_ridge", s.irls.fallback_ridge);
    s.validate();
    return s;
  }
};

/// One fitted coefficient, for audit export.
struct CoefficientRow {
  std::string model;
  std::string term;
  double value = 0.0;
};

/// Fitted nuisance functions for one cross-fitting fold.
///
/// mu(a, x) is E(Y | A=a, X, R=1); eta(a, x) is Pr(A=a | X, R=1); q(s, x) is
/// Pr(S=s | X, R=1); p(x) is Pr(R=1 | X). The raw functions return untrimmed
/// values; the *_at accessors apply the trimming bound.
struct NuisanceSet {
  std::function<double(int, std::span<const double>)> mu;
  std::function<double(int, std::span<const double>)> eta;
  std::function<double(int, std::span<const double>)> q;
  std::function<double(std::span<const double>)> p;
  double trim_epsilon = 0.01;
  int fold_id = -1;
  std::vector<CoefficientRow> coefficients;
  std::vector<std::string> warnings;

  double trim(double v) const { return std::clamp(v, trim_epsilon, 1.0 - trim_epsilon); }
  double mu_at(int a, std::span<const double> x) const { return mu(a, x); }
  double eta_at(int a, std::span<const double> x) const { return trim(eta(a, x)); }
  double q_at(int s, std::span<const double> x) const { return trim(q(s, x)); }
  double p_at(std::span<const double> x) const {
    if (!p) throw Error(Errc::InvalidArgument, "participation model was not fitted");
    return trim(p(x));
  }
};

/// Noise law of the synthetic "estimated" nuisances used in rate experiments.
struct PerturbationConfig {
  double h = 2.5;
  double rate_r = 0.25;
  double mu_multiplier = 1.0;
  double eta_multiplier = 1.3;
  double q_multiplier = 1.3;
  std::uint64_t seed = 0;
  /// Levels whose logit is shifted; the remaining levels are rescaled to keep the sum at 1.
  int treatment_level = 1;
  int source_level = 1;
  /// Scalar: one draw per function. Pointwise: an independent draw at every covariate value.
  enum class Noise { Scalar, Pointwise } noise = Noise::Scalar;
};

namespace nuisance_detail {

inline std::function<double(int, std::span<const double>)> shift_logit(
    std::function<double(int, std::span<const double>)> f, int level, double delta) {
  return [f = std::move(f), level, delta](int k, std::span<const double> x) {
    const double base = f(level, x);
    const double moved = expit(logit(base) + delta);
    if (k == level) return moved;
    return f(k, x) * (1.0 - moved) / (1.0 - base);
  };
}

/// Standard normal draw that is a deterministic function of (seed, x).
inline double point_normal(std::uint64_t seed, std::span<const double> x) {
  std::uint64_t z = seed;
  for (double v : x) z = mix64(z ^ std::bit_cast<std::uint64_t>(v == 0.0 ? 0.0 : v));
  Rng rng(z);
  NormalSampler normal;
  return normal(rng);
}

}  // namespace nuisance_detail

/// Pointwise variant of perturb_oracle: e_mu(x), e_eta(x), e_q(x) are independent
/// Normal(n^-r, n^-2r) draws at each x, fixed for the lifetime of the set.
inline NuisanceSet perturb_oracle_pointwise(const NuisanceSet& truth, const PerturbationConfig& cfg, std::size_t n) {
  const double scale = std::pow(static_cast<double>(n), -cfg.rate_r);
  const std::uint64_t s_mu = substream_seed(cfg.seed, {1}), s_eta = substream_seed(cfg.seed, {2}),
                      s_q = substream_seed(cfg.seed, {3});
  auto noise = [scale](std::uint64_t seed, std::span<const double> x) {
    return scale + scale * nuisance_detail::point_normal(seed, x);
  };
  NuisanceSet out = truth;
  out.mu = [f = truth.mu, noise, s_mu, h = cfg.h * cfg.mu_multiplier](int a, std::span<const double> x) {
    return f(a, x) + h * noise(s_mu, x);
  };
  auto shifted = [noise](std::function<double(int, std::span<const double>)> f, int level, double h,
                         std::uint64_t seed) {
    return [f = std::move(f), level, h, seed, noise](int k, std::span<const double> x) {
      const double base = f(level, x);
      const double moved = expit(logit(base) + h * noise(seed, x));
      if (k == level) return moved;
      return f(k, x) * (1.0 - moved) / (1.0 - base);
    };
  };
  out.eta = shifted(truth.eta, cfg.treatment_level, cfg.h * cfg.eta_multiplier, s_eta);
  out.q = shifted(truth.q, cfg.source_level, cfg.h * cfg.q_multiplier, s_q);
  out.coefficients = {{"perturbation", "pointwise_scale", scale}};
  return out;
}

/// mu + h*e_mu and logit-shifted eta, q, with e ~ Normal(n^-r, n^-2r) drawn once per call.
inline NuisanceSet perturb_oracle(const NuisanceSet& truth, const PerturbationConfig& cfg, std::size_t n) {
  if (!(cfg.rate_r > 0.0 && cfg.rate_r <= 0.5)) throw Error(Errc::InvalidArgument, "rate_r must lie in (0, 0.5]");
  if (cfg.h == 0.0) return truth;
  if (cfg.noise == PerturbationConfig::Noise::Pointwise) return perturb_oracle_pointwise(truth, cfg, n);
  Rng rng(cfg.seed);
  NormalSampler normal;
  const double scale = std::pow(static_cast<double>(n), -cfg.rate_r);
  const double e_mu = scale + scale * normal(rng);
  const double e_eta = scale + scale * normal(rng);
  const double e_q = scale + scale * normal(rng);
  NuisanceSet out = truth;
  const double dmu = cfg.h * cfg.mu_multiplier * e_mu;
  out.mu = [f = truth.mu, dmu](int a, std::span<const double> x) { return f(a, x) + dmu; };
  out.eta = nuisance_detail::shift_logit(truth.eta, cfg.treatment_level, cfg.h * cfg.eta_multiplier * e_eta);
  out.q = nuisance_detail::shift_logit(truth.q, cfg.source_level, cfg.h * cfg.q_multiplier * e_q);
  out.coefficients = {{"perturbation", "e_mu", e_mu}, {"perturbation", "e_eta", e_eta}, {"perturbation", "e_q", e_q}};
  return out;
}

/// Ground truth for oracle-backed specs, plus the perturbation law for perturbed slots.
struct OracleProvider {
  NuisanceSet truth;
  std::optional<PerturbationConfig> perturbation;
};

namespace nuisance_detail {

inline std::vector<std::size_t> covariates_or_all(const std::optional<std::vector<std::size_t>>& sel, std::size_t p) {
  return sel ? *sel : all_columns(p);
}

inline int level_index(const std::vector<int>& levels, int v) {
  auto it = std::lower_bound(levels.begin(), levels.end(), v);
  if (it == levels.end() || *it != v) return -1;
  return static_cast<int>(it - levels.begin());
}

inline void add_coefficients(std::vector<CoefficientRow>& out, const std::string& model,
                             const std::vector<std::string>& names, const Eigen::VectorXd& beta) {
  for (Eigen::Index k = 0; k < beta.size(); ++k) {
    out.push_back({model, names[static_cast<std::size_t>(k)], beta[k]});
  }
}

/// Multinomial class model over sorted `levels`, reference class last.
struct ClassModel {
  Design design;
  Eigen::MatrixXd coef;
  std::vector<int> levels;

  double prob(int level, std::span<const double> x) const {
    const int k = level_index(levels, level);
    if (k < 0) return 0.0;
    Eigen::VectorXd z = design.row(x);
    if (levels.size() == 1) return 1.0;
    return softmax_row(coef, z)[k];
  }
};

inline ClassModel fit_class_model(const Dataset& d, std::span<const std::size_t> rows, const std::vector<int>& labels,
                                  std::vector<int> levels, const std::vector<std::size_t>& cols,
                                  const std::vector<std::size_t>& categorical, const IrlsOptions& irls,
                                  std::vector<std::string>& warnings, const std::string& model,
                                  std::vector<CoefficientRow>& coefs) {
  ClassModel m;
  m.levels = std::move(levels);
  m.design = Design::learn(d.X(), rows, cols, categorical);
  if (m.levels.size() < 2) return m;
  Eigen::MatrixXd Z = m.design.matrix(d, rows);
  std::vector<int> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) idx[i] = level_index(m.levels, labels[i]);
  std::vector<std::string> local;
  GlmFit fit = fit_multinomial_auto(Z, idx, static_cast<int>(m.levels.size()), &local, irls);
  for (auto& w : local) warnings.push_back(model + ": " + w);
  m.coef = fit.coef;
  const auto names = m.design.names(d.covariate_names());
  for (Eigen::Index c = 0; c < m.coef.cols(); ++c) {
    add_coefficients(coefs, model + "[" + std::to_string(m.levels[static_cast<std::size_t>(c)]) + "]", names,
                     m.coef.col(c));
  }
  return m;
}

}  // namespace nuisance_detail

/// Fits every nuisance function that target `t` needs on the training rows.
///
/// Outcome models are fit per arm on multi-source rows (or pooled with a
/// treatment main effect for a Linear model without interactions). eta is
/// assembled as sum_s Pr(A=a | X, S=s) q_s(X) from per-source treatment models
/// and the multinomial source model. p is fit only for external targets.
inline NuisanceSet fit_nuisances(const Dataset& d, const NuisanceSpec& spec, const TargetSpec& t,
                                 std::span<const std::size_t> train, const OracleProvider* oracle = nullptr) {
  using namespace nuisance_detail;
  spec.validate();
  if (!d.validated()) throw Error(Errc::InvalidArgument, "fit_nuisances requires a validated dataset");
  if (spec.uses_oracle() && !oracle) {
    throw Error(Errc::OracleUnavailable, "oracle nuisance models are only available inside simulations");
  }
  if (spec.uses_perturbation() && (!oracle || !oracle->perturbation)) {
    throw Error(Errc::OracleUnavailable, "perturbed nuisance models need a perturbation config");
  }
  NuisanceSet out;
  out.trim_epsilon = spec.trim_epsilon;
  std::optional<NuisanceSet> perturbed;
  if (spec.uses_perturbation()) perturbed = perturb_oracle(oracle->truth, *oracle->perturbation, d.size());
  auto oracle_for = [&](bool is_perturbed) -> const NuisanceSet& { return is_perturbed ? *perturbed : oracle->truth; };

  std::vector<std::size_t> ms_rows;
  for (std::size_t i : train) {
    if (d.in_multisource(i)) ms_rows.push_back(i);
  }
  const auto& treatments = d.treatment_levels();
  const auto& sources = d.source_levels();
  for (int a : treatments) {
    std::size_t count = 0;
    for (std::size_t i : ms_rows) count += d.a(i) == a ? 1 : 0;
    if (count < 10) {
      throw Error(Errc::InsufficientTreatedRows, "treatment " + std::to_string(a) + " has " + std::to_string(count) +
                                                     " training rows (< 10); use fewer folds or more data");
    }
  }

  // Outcome regression.
  if (spec.outcome == OutcomeModel::Oracle || spec.outcome == OutcomeModel::PerturbedOracle) {
    out.mu = oracle_for(spec.outcome == OutcomeModel::PerturbedOracle).mu;
  } else {
    const auto cols = covariates_or_all(spec.outcome_covariates, d.p());
    if (spec.outcome == OutcomeModel::SplineAdditive) {
      auto models = std::make_shared<std::vector<AdditiveModel>>();
      for (int a : treatments) {
        std::vector<std::size_t> rows;
        for (std::size_t i : ms_rows) {
          if (d.a(i) == a) rows.push_back(i);
        }
        Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Eigen::Index>(k)] = d.y(rows[k]);
        models->push_back(fit_spline_additive(d, rows, y, cols, spec.categorical, spec.spline));
        add_coefficients(out.coefficients, "mu[" + std::to_string(a) + "]",
                         models->back().coefficient_names(d.covariate_names()), models->back().coefficients());
      }
      out.mu = [models, treatments](int a, std::span<const double> x) {
        const int k = level_index(treatments, a);
        if (k < 0) throw Error(Errc::InvalidArgument, "unknown treatment level " + std::to_string(a));
        return (*models)[static_cast<std::size_t>(k)].predict(x);
      };
    } else if (spec.include_treatment_interactions) {
      struct Arm {
        Design design;
        Eigen::VectorXd beta;
      };
      auto arms = std::make_shared<std::vector<Arm>>();
      for (int a : treatments) {
        std::vector<std::size_t> rows;
        for (std::size_t i : ms_rows) {
          if (d.a(i) == a) rows.push_back(i);
        }
        Arm arm{Design::learn(d.X(), rows, cols, spec.categorical), {}};
        Eigen::VectorXd y(static_cast<Eigen::Index>(rows.size()));
        for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Eigen::Index>(k)] = d.y(rows[k]);
        arm.beta = fit_least_squares(arm.design.matrix(d, rows), y);
        add_coefficients(out.coefficients, "mu[" + std::to_string(a) + "]", arm.design.names(d.covariate_names()),
                         arm.beta);
        arms->push_back(std::move(arm));
      }
      out.mu = [arms, treatments](int a, std::span<const double> x) {
        const int k = level_index(treatments, a);
        if (k < 0) throw Error(Errc::InvalidArgument, "unknown treatment level " + std::to_string(a));
        const Arm& arm = (*arms)[static_cast<std::size_t>(k)];
        return arm.design.row(x).dot(arm.beta);
      };
    } else {
      // Pooled: covariate design plus one dummy per non-reference treatment level.
      auto design = std::make_shared<Design>(Design::learn(d.X(), ms_rows, cols, spec.categorical));
      const auto w = static_cast<Eigen::Index>(design->width());
      const auto extra = static_cast<Eigen::Index>(treatments.size() - 1);
      Eigen::MatrixXd Z(static_cast<Eigen::Index>(ms_rows.size()), w + extra);
      Eigen::VectorXd y(Z.rows());
      for (std::size_t k = 0; k < ms_rows.size(); ++k) {
        const auto r = static_cast<Eigen::Index>(k);
        Z.row(r).head(w) = design->row(d.x(ms_rows[k])).transpose();
        for (Eigen::Index l = 0; l < extra; ++l) Z(r, w + l) = d.a(ms_rows[k]) == treatments[static_cast<std::size_t>(l + 1)] ? 1.0 : 0.0;
        y[r] = d.y(ms_rows[k]);
      }
      auto beta = std::make_shared<Eigen::VectorXd>(fit_least_squares(Z, y));
      auto names = design->names(d.covariate_names());
      for (Eigen::Index l = 0; l < extra; ++l) {
        names.push_back("a=" + std::to_string(treatments[static_cast<std::size_t>(l + 1)]));
      }
      add_coefficients(out.coefficients, "mu", names, *beta);
      out.mu = [design, beta, treatments, w](int a, std::span<const double> x) {
        const int k = level_index(treatments, a);
        if (k < 0) throw Error(Errc::InvalidArgument, "unknown treatment level " + std::to_string(a));
        double v = design->row(x).dot(beta->head(w));
        if (k > 0) v += (*beta)[w + k - 1];
        return v;
      };
    }
  }

  const auto wcols = covariates_or_all(spec.weight_covariates, d.p());

  // Source membership among multi-source rows.
  if (spec.source == ProbabilityModel::Fitted) {
    std::vector<int> labels;
    for (std::size_t i : ms_rows) labels.push_back(d.s(i));
    auto model = std::make_shared<ClassModel>(fit_class_model(d, ms_rows, labels, sources, wcols, spec.categorical,
                                                              spec.irls, out.warnings, "q", out.coefficients));
    out.q = [model](int s, std::span<const double> x) { return model->prob(s, x); };
  } else {
    out.q = oracle_for(spec.source == ProbabilityModel::PerturbedOracle).q;
  }

  // Treatment propensity, assembled over sources.
  if (spec.propensity == ProbabilityModel::Fitted) {
    auto per_source = std::make_shared<std::vector<ClassModel>>();
    for (int s : sources) {
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (std::size_t i : ms_rows) {
        if (d.s(i) == s) {
          rows.push_back(i);
          labels.push_back(d.a(i));
        }
      }
      if (rows.empty()) throw Error(Errc::StratumTooSmall, "source " + std::to_string(s) + " has no training rows");
      per_source->push_back(fit_class_model(d, rows, labels, treatments, wcols, spec.categorical, spec.irls,
                                            out.warnings, "eta|s=" + std::to_string(s), out.coefficients));
    }
    auto q = out.q;
    out.eta = [per_source, sources, q](int a, std::span<const double> x) {
      double v = 0.0;
      for (std::size_t k = 0; k < sources.size(); ++k) v += (*per_source)[k].prob(a, x) * q(sources[k], x);
      return v;
    };
  } else {
    out.eta = oracle_for(spec.propensity == ProbabilityModel::PerturbedOracle).eta;
  }

  // Participation, only for external targets.
  if (t.is_external()) {
    if (spec.participation == ProbabilityModel::Fitted) {
      std::vector<std::size_t> rows(train.begin(), train.end());
      std::vector<int> labels;
      for (std::size_t i : rows) labels.push_back(d.in_multisource(i) ? 1 : 0);
      auto model = std::make_shared<ClassModel>(fit_class_model(d, rows, labels, {0, 1}, wcols, spec.categorical,
                                                                spec.irls, out.warnings, "p", out.coefficients));
      out.p = [model](std::span<const double> x) { return model->prob(1, x); };
    } else {
      out.p = oracle_for(spec.participation == ProbabilityModel::PerturbedOracle).p;
      if (!out.p) throw Error(Errc::OracleUnavailable, "oracle has no participation model");
    }
  }
  return out;
}

inline void write_coefficients_csv(std::ostream& out, const std::vector<NuisanceSet>& sets) {
  out << "fold,model,term,value\n";
  for (const auto& s : sets) {
    for (const auto& c : s.coefficients) {
      out << s.fold_id << "," << c.model << ",\"" << c.term << "\"," << KeyValueConfig::format_double(c.value) << "\n";
    }
  }
}

}  // namespace sgte
