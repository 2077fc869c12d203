#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "sgte/config.hpp"
#include "sgte/estimators.hpp"
#include "sgte/inference.hpp"
#include "sgte/parallel.hpp"
#include "sgte/sim/dgp_main.hpp"
#include "sgte/sim/dgp_rate.hpp"

namespace sgte {

enum class Scenario { MainInternal, MainExternal, Rate };

inline std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::MainInternal: return "main-internal";
    case Scenario::MainExternal: return "main-external";
    case Scenario::Rate: return "rate";
  }
  return "?";
}

inline Scenario parse_scenario(const std::string& s) {
  if (s == "main-internal") return Scenario::MainInternal;
  if (s == "main-external") return Scenario::MainExternal;
  if (s == "rate") return Scenario::Rate;
  throw Error(Errc::InvalidArgument, "unknown scenario '" + s + "'; valid: main-internal, main-external, rate");
}

/// Which nuisance models are correctly specified.
struct Correctness {
  bool outcome = true;
  bool weights = true;

  std::string name() const {
    if (outcome && weights) return "all";
    if (outcome) return "outcome";
    if (weights) return "weights";
    return "none";
  }

  static Correctness parse(const std::string& s) {
    if (s == "all") return {true, true};
    if (s == "outcome") return {true, false};
    if (s == "weights") return {false, true};
    if (s == "none") return {false, false};
    throw Error(Errc::InvalidArgument, "unknown correctness block '" + s + "'; valid: all, outcome, weights, none");
  }

  friend bool operator==(const Correctness&, const Correctness&) = default;
};

/// Nuisance specification for the main design. A misspecified outcome model
/// is linear in X1..X4 without treatment interactions; misspecified weight
/// models omit X5..X10.
inline NuisanceSpec main_nuisance_spec(Correctness c) {
  NuisanceSpec s;
  s.categorical = {0};
  if (!c.outcome) {
    s.outcome = OutcomeModel::Linear;
    s.outcome_covariates = std::vector<std::size_t>{0, 1, 2, 3};
    s.include_treatment_interactions = false;
  }
  if (!c.weights) s.weight_covariates = std::vector<std::size_t>{0, 1, 2, 3};
  return s;
}

struct ExperimentConfig {
  Scenario scenario = Scenario::MainInternal;
  std::size_t reps = 500;
  std::vector<Method> methods{Method::DR, Method::PlugIn, Method::IPTW};
  std::vector<Correctness> blocks{{true, true}, {true, false}, {false, true}, {false, false}};
  DgpMainConfig main;
  int target_source = 1;
  int treatment = 1;
  int folds = 2;
  double alpha = 0.05;
  /// Replicates (the first ones) that also get a bootstrap t-max band.
  std::size_t band_reps = 0;
  std::size_t band_B = 500;
  bool band_refit = false;
  std::size_t gaussian_draws = 100000;
  std::size_t truth_draws = 10000000;
  std::uint64_t truth_seed = 7;
  std::vector<std::size_t> rate_n{100, 500, 1000};
  std::vector<double> rate_r = default_rate_grid();
  double rate_h = 2.5;
  /// Cross-fit the plug-in and IPTW nuisances too, instead of one full-sample fit.
  bool comparison_crossfit = false;
  PerturbationConfig::Noise rate_noise = PerturbationConfig::Noise::Pointwise;
  std::uint64_t seed = 1;
  unsigned threads = 0;
  /// Largest tolerated share of failed replicates.
  double max_failure_rate = 0.01;

  static std::vector<double> default_rate_grid() {
    std::vector<double> r;
    for (int k = 0; k <= 8; ++k) r.push_back(0.10 + 0.05 * k);
    return r;
  }

  void validate() const {
    if (reps < 1) throw Error(Errc::InvalidArgument, "reps must be positive");
    if (folds < 1) throw Error(Errc::InvalidArgument, "folds must be positive");
    if (methods.empty()) throw Error(Errc::InvalidArgument, "no methods requested");
    if (scenario != Scenario::Rate && blocks.empty()) throw Error(Errc::InvalidArgument, "no correctness blocks");
    check_alpha(alpha);
    for (double r : rate_r) {
      if (!(r > 0 && r <= 0.5)) throw Error(Errc::InvalidArgument, "rate grid values must lie in (0, 0.5]");
    }
    main.validate();
  }

  KeyValueConfig to_config() const {
    KeyValueConfig c;
    c.set("scenario", scenario_name(scenario));
    c.set("reps", static_cast<long long>(reps));
    std::vector<std::string> m;
    for (Method x : methods) m.push_back(method_name(x));
    c.set_list("methods", m);
    std::vector<std::string> b;
    for (const auto& x : blocks) b.push_back(x.name());
    c.set_list("blocks", b);
    c.set("target_source", static_cast<long long>(target_source));
    c.set("treatment", static_cast<long long>(treatment));
    c.set("folds", static_cast<long long>(folds));
    c.set("alpha", alpha);
    c.set("band_reps", static_cast<long long>(band_reps));
    c.set("band_B", static_cast<long long>(band_B));
    c.set("band_refit", band_refit);
    c.set("comparison_crossfit", comparison_crossfit);
    c.set("gaussian_draws", static_cast<long long>(gaussian_draws));
    c.set("truth_draws", static_cast<long long>(truth_draws));
    c.set("truth_seed", std::to_string(truth_seed));
    std::vector<double> rn(rate_n.begin(), rate_n.end());
    c.set_list("rate_n", rn);
    c.set_list("rate_r", rate_r);
    c.set("rate_h", rate_h);
    c.set("rate_noise", std::string(rate_noise == PerturbationConfig::Noise::Scalar ? "scalar" : "pointwise"));
    c.set("seed", std::to_string(seed));
    c.set("threads", static_cast<long long>(threads));
    c.set("max_failure_rate", max_failure_rate);
    const KeyValueConfig mc = main.to_config();
    for (const auto& [k, v] : mc.values()) c.set("main." + k, v);
    return c;
  }

  static ExperimentConfig from_config(const KeyValueConfig& c) {
    ExperimentConfig e;
    if (c.has("scenario")) e.scenario = parse_scenario(c.get("scenario"));
    if (c.has("reps")) e.reps = static_cast<std::size_t>(c.get_int("reps"));
    if (c.has("methods")) {
      e.methods.clear();
      for (const auto& m : KeyValueConfig::split(c.get("methods"), ',')) e.methods.push_back(parse_method(m));
    }
    if (c.has("blocks")) {
      e.blocks.clear();
      for (const auto& m : KeyValueConfig::split(c.get("blocks"), ',')) e.blocks.push_back(Correctness::parse(m));
    }
    if (c.has("target_source")) e.target_source = static_cast<int>(c.get_int("target_source"));
    if (c.has("treatment")) e.treatment = static_cast<int>(c.get_int("treatment"));
    if (c.has("folds")) e.folds = static_cast<int>(c.get_int("folds"));
    e.alpha = c.get_double_or("alpha", e.alpha);
    if (c.has("band_reps")) e.band_reps = static_cast<std::size_t>(c.get_int("band_reps"));
    if (c.has("band_B")) e.band_B = static_cast<std::size_t>(c.get_int("band_B"));
    if (c.has("band_refit")) e.band_refit = c.get_bool("band_refit");
    if (c.has("comparison_crossfit")) e.comparison_crossfit = c.get_bool("comparison_crossfit");
    if (c.has("gaussian_draws")) e.gaussian_draws = static_cast<std::size_t>(c.get_int("gaussian_draws"));
    if (c.has("truth_draws")) e.truth_draws = static_cast<std::size_t>(c.get_int("truth_draws"));
    if (c.has("truth_seed")) e.truth_seed = std::stoull(c.get("truth_seed"));
    if (c.has("rate_n")) {
      e.rate_n.clear();
      for (double v : c.get_doubles("rate_n")) e.rate_n.push_back(static_cast<std::size_t>(v));
    }
    if (c.has("rate_r")) e.rate_r = c.get_doubles("rate_r");
    e.rate_h = c.get_double_or("rate_h", e.rate_h);
    if (c.has("rate_noise")) {
      const std::string v = c.get("rate_noise");
      if (v != "scalar" && v != "pointwise") throw Error(Errc::Schema, "rate_noise must be scalar or pointwise");
      e.rate_noise = v == "scalar" ? PerturbationConfig::Noise::Scalar : PerturbationConfig::Noise::Pointwise;
    }
    if (c.has("seed")) e.seed = std::stoull(c.get("seed"));
    if (c.has("threads")) e.threads = static_cast<unsigned>(c.get_int("threads"));
    e.max_failure_rate = c.get_double_or("max_failure_rate", e.max_failure_rate);
    KeyValueConfig mc;
    for (const auto& [k, v] : c.values()) {
      if (k.rfind("main.", 0) == 0) mc.set(k.substr(5), v);
    }
    e.main = DgpMainConfig::from_config(mc);
    e.validate();
    return e;
  }
};

/// Monte Carlo summary of one estimator at one subgroup level.
struct McCell {
  SubgroupKey subgroup;
  double truth = 0.0;
  double truth_mc_se = 0.0;
  double mean = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  /// NaN when the estimator has no standard error.
  double mean_se = std::numeric_limits<double>::quiet_NaN();
  double coverage = std::numeric_limits<double>::quiet_NaN();
  double band_coverage = std::numeric_limits<double>::quiet_NaN();
  double bootstrap_band_coverage = std::numeric_limits<double>::quiet_NaN();
  std::size_t reps = 0;
};

struct McResult {
  Scenario scenario = Scenario::MainInternal;
  std::string target;
  Correctness block;
  Method method = Method::DR;
  std::size_t n_total = 0;
  std::size_t n_multisource = 0;
  std::size_t reps = 0;
  std::size_t failures = 0;
  std::vector<McCell> cells;
  /// Share of replicates whose band covers every level at once.
  double joint_band_coverage = std::numeric_limits<double>::quiet_NaN();
  double joint_bootstrap_coverage = std::numeric_limits<double>::quiet_NaN();
  std::size_t bootstrap_reps = 0;
  double gaussian_critical = std::numeric_limits<double>::quiet_NaN();
  double mean_bootstrap_critical = std::numeric_limits<double>::quiet_NaN();

  const McCell& cell(double level) const {
    for (const auto& c : cells) {
      if (c.subgroup.size() == 1 && c.subgroup[0] == level) return c;
    }
    throw Error(Errc::InvalidArgument, "no cell for level " + KeyValueConfig::format_double(level));
  }
};

/// Root-mean-square error of one estimator in the rate experiment.
struct RatePoint {
  std::size_t n = 0;
  double r = 0.0;
  Method method = Method::DR;
  double truth = 0.0;
  double bias = 0.0;
  double sd = 0.0;
  double rmse = 0.0;
  std::size_t reps = 0;
  std::size_t failures = 0;
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<McResult> main;
  std::vector<RatePoint> rate;
};

namespace sim_detail {

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
};

inline Moments moments(const std::vector<double>& v) {
  Moments m;
  if (v.empty()) return m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
  return m;
}

/// Estimates of every level for one (block, method) in one replicate.
struct RepOutcome {
  bool ok = false;
  std::string error;
  std::vector<double> point;
  std::vector<double> se;
  double bootstrap_critical = std::numeric_limits<double>::quiet_NaN();
};

inline void check_failures(std::size_t failures, std::size_t reps, double max_rate, const std::string& what,
                           const std::string& first_error) {
  if (static_cast<double>(failures) > max_rate * static_cast<double>(reps)) {
    throw Error(Errc::ReplicateFailures, std::to_string(failures) + " of " + std::to_string(reps) + " replicates of " +
                                             what + " failed; first failure: " + first_error);
  }
}

}  // namespace sim_detail

/// Runs the main-design experiment: every replicate draws one data set and
/// evaluates every (correctness block, method) on it at X1 = 1..5.
inline std::vector<McResult> run_main_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const DgpMainConfig dgp = calibrate_main(cfg.main);
  const TargetSpec target =
      cfg.scenario == Scenario::MainExternal ? TargetSpec::external() : TargetSpec::internal(cfg.target_source);
  const auto truth = MainTruth::compute(dgp, cfg.truth_draws, cfg.truth_seed);
  SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}, {4.0}, {5.0}}};
  const std::size_t L = spec.levels.size();
  const double z = normal_quantile(1.0 - cfg.alpha / 2.0);
  const double gcrit = gaussian_max_critical(L, cfg.alpha, cfg.gaussian_draws, substream_seed(cfg.seed, {9}));
  const std::size_t nb = cfg.blocks.size();
  const std::size_t nm = cfg.methods.size();

  // outcomes[rep][block * nm + method]
  std::vector<std::vector<sim_detail::RepOutcome>> outcomes(cfg.reps);
  parallel_for(cfg.reps, cfg.threads, [&](std::size_t rep) {
    auto& slot = outcomes[rep];
    slot.assign(nb * nm, {});
    const MainDraw draw = generate_main(dgp, substream_seed(cfg.seed, {1, rep}));
    const std::uint64_t fold_seed = substream_seed(cfg.seed, {2, rep});
    for (std::size_t b = 0; b < nb; ++b) {
      const NuisanceSpec nspec = main_nuisance_spec(cfg.blocks[b]);
      // DR is cross-fitted; plug-in and IPTW use one full-sample fit unless comparison_crossfit
      std::optional<CrossFit> cf, full;
      std::string cf_error, full_error;
      bool need_cf = false, need_full = false;
      for (Method m : cfg.methods) {
        (m == Method::DR || cfg.comparison_crossfit ? need_cf : need_full) = true;
      }
      if (need_cf) {
        try {
          cf = cross_fit(draw.data, nspec, target, cfg.folds, fold_seed);
        } catch (const Error& e) {
          cf_error = e.what();
        }
      }
      if (need_full) {
        try {
          full = fixed_nuisances(draw.data, fit_nuisances(draw.data, nspec, target, all_columns(draw.data.size())),
                                 target);
        } catch (const Error& e) {
          full_error = e.what();
        }
      }
      for (std::size_t m = 0; m < nm; ++m) {
        auto& out = slot[b * nm + m];
        const bool crossfitted = cfg.methods[m] == Method::DR || cfg.comparison_crossfit;
        const std::optional<CrossFit>& use = crossfitted ? cf : full;
        if (!use) {
          out.error = crossfitted ? cf_error : full_error;
          continue;
        }
        try {
          for (const auto& key : spec.levels) {
            const SubgroupEstimate e = estimate(draw.data, *use, cfg.methods[m], cfg.treatment, spec, key);
            out.point.push_back(e.point);
            out.se.push_back(e.se);
          }
          if (cfg.methods[m] == Method::DR && rep < cfg.band_reps) {
            BootstrapOptions opt;
            opt.B = cfg.band_B;
            opt.min_B = std::min<std::size_t>(opt.min_B, cfg.band_B);
            opt.alpha = cfg.alpha;
            opt.refit = cfg.band_refit;
            opt.folds = cfg.folds;
            opt.seed = substream_seed(cfg.seed, {3, rep, b});
            opt.threads = 1;
            const BandResult band =
                band_bootstrap(draw.data, nspec, target, {cfg.treatment, std::nullopt}, spec, opt, nullptr, &*use);
            out.bootstrap_critical = band.critical;
          }
          out.ok = true;
        } catch (const Error& e) {
          out.error = e.what();
          out.point.clear();
          out.se.clear();
        }
      }
    }
  });

  std::vector<McResult> results;
  for (std::size_t b = 0; b < nb; ++b) {
    for (std::size_t m = 0; m < nm; ++m) {
      McResult r;
      r.scenario = cfg.scenario;
      r.target = target.label();
      r.block = cfg.blocks[b];
      r.method = cfg.methods[m];
      r.n_total = dgp.n_total;
      r.n_multisource = dgp.n_multisource;
      const bool with_se = r.method == Method::DR;
      std::vector<const sim_detail::RepOutcome*> ok;
      std::string first_error;
      for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
        const auto& o = outcomes[rep][b * nm + m];
        if (o.ok) {
          ok.push_back(&o);
        } else if (first_error.empty()) {
          first_error = o.error;
        }
      }
      r.reps = ok.size();
      r.failures = cfg.reps - ok.size();
      sim_detail::check_failures(r.failures, cfg.reps, cfg.max_failure_rate,
                                 r.block.name() + "/" + method_name(r.method), first_error);
      std::size_t joint = 0;
      std::size_t joint_boot = 0;
      double crit_sum = 0.0;
      for (const auto* o : ok) {
        if (!std::isnan(o->bootstrap_critical)) {
          ++r.bootstrap_reps;
          crit_sum += o->bootstrap_critical;
        }
      }
      for (std::size_t l = 0; l < L; ++l) {
        McCell c;
        c.subgroup = spec.levels[l];
        const TruthValue tv = truth->get(target, cfg.treatment, static_cast<int>(c.subgroup[0]));
        c.truth = tv.value;
        c.truth_mc_se = tv.mc_se;
        std::vector<double> pts;
        double se_sum = 0.0;
        std::size_t cover = 0;
        std::size_t band_cover = 0;
        std::size_t boot_cover = 0;
        for (const auto* o : ok) {
          const double pt = o->point[l];
          pts.push_back(pt);
          if (!with_se) continue;
          const double se = o->se[l];
          se_sum += se;
          const double dev = std::abs(pt - c.truth);
          cover += dev <= z * se ? 1 : 0;
          band_cover += dev <= gcrit * se ? 1 : 0;
          if (!std::isnan(o->bootstrap_critical)) boot_cover += dev <= o->bootstrap_critical * se ? 1 : 0;
        }
        const auto mom = sim_detail::moments(pts);
        c.reps = pts.size();
        c.mean = mom.mean;
        c.bias = mom.mean - c.truth;
        c.sd = mom.sd;
        double mse = 0.0;
        for (double p : pts) mse += (p - c.truth) * (p - c.truth);
        c.rmse = pts.empty() ? 0.0 : std::sqrt(mse / static_cast<double>(pts.size()));
        if (with_se && !pts.empty()) {
          const double k = static_cast<double>(pts.size());
          c.mean_se = se_sum / k;
          c.coverage = static_cast<double>(cover) / k;
          c.band_coverage = static_cast<double>(band_cover) / k;
          if (r.bootstrap_reps) {
            c.bootstrap_band_coverage = static_cast<double>(boot_cover) / static_cast<double>(r.bootstrap_reps);
          }
        }
        r.cells.push_back(std::move(c));
      }
      if (with_se && !ok.empty()) {
        for (const auto* o : ok) {
          bool all = true;
          bool all_boot = !std::isnan(o->bootstrap_critical);
          for (std::size_t l = 0; l < L; ++l) {
            const double dev = std::abs(o->point[l] - r.cells[l].truth);
            all = all && dev <= gcrit * o->se[l];
            if (!std::isnan(o->bootstrap_critical)) all_boot = all_boot && dev <= o->bootstrap_critical * o->se[l];
          }
          joint += all ? 1 : 0;
          joint_boot += all_boot ? 1 : 0;
        }
        r.gaussian_critical = gcrit;
        r.joint_band_coverage = static_cast<double>(joint) / static_cast<double>(ok.size());
        if (r.bootstrap_reps) {
          r.joint_bootstrap_coverage = static_cast<double>(joint_boot) / static_cast<double>(r.bootstrap_reps);
          r.mean_bootstrap_critical = crit_sum / static_cast<double>(r.bootstrap_reps);
        }
      }
      results.push_back(std::move(r));
    }
  }
  return results;
}

/// Rate experiment: perturbed oracle nuisances with error of order n^-r,
/// DR and plug-in estimates of E(Y^1 | X0 = 1, S = 1). Each replicate reuses
/// its data and its perturbation draw across the r grid.
inline std::vector<RatePoint> run_rate_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  const TargetSpec target = TargetSpec::internal(1);
  const SubgroupSpec spec{{0}, {{1.0}}};
  const double truth = RateModel::truth(1, 1, 1);
  std::vector<Method> methods;
  for (Method m : cfg.methods) {
    if (m != Method::IPTW) methods.push_back(m);
  }
  if (methods.empty()) throw Error(Errc::InvalidArgument, "rate experiment needs dr or plugin");
  const std::size_t nr = cfg.rate_r.size();
  const std::size_t nm = methods.size();
  std::vector<RatePoint> out;
  for (std::size_t n : cfg.rate_n) {
    DgpRateConfig rc;
    rc.n = n;
    // est[rep][r * nm + m]; NaN marks a failed replicate
    std::vector<std::vector<double>> est(cfg.reps, std::vector<double>(nr * nm, std::nan("")));
    std::vector<std::string> errors(cfg.reps);
    parallel_for(cfg.reps, cfg.threads, [&](std::size_t rep) {
      try {
        const RateDraw draw = generate_rate(rc, substream_seed(cfg.seed, {4, n, rep}));
        for (std::size_t k = 0; k < nr; ++k) {
          PerturbationConfig pc;
          pc.h = cfg.rate_h;
          pc.noise = cfg.rate_noise;
          pc.rate_r = cfg.rate_r[k];
          pc.seed = substream_seed(cfg.seed, {5, n, rep});
          const CrossFit cf = fixed_nuisances(draw.data, perturb_oracle(draw.oracle, pc, n), target);
          for (std::size_t m = 0; m < nm; ++m) {
            est[rep][k * nm + m] = estimate(draw.data, cf, methods[m], 1, spec, spec.levels[0]).point;
          }
        }
      } catch (const Error& e) {
        errors[rep] = e.what();
        std::fill(est[rep].begin(), est[rep].end(), std::nan(""));
      }
    });
    std::size_t failures = 0;
    std::string first;
    for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
      if (!errors[rep].empty()) {
        ++failures;
        if (first.empty()) first = errors[rep];
      }
    }
    sim_detail::check_failures(failures, cfg.reps, cfg.max_failure_rate, "rate n=" + std::to_string(n), first);
    for (std::size_t k = 0; k < nr; ++k) {
      for (std::size_t m = 0; m < nm; ++m) {
        std::vector<double> pts;
        for (std::size_t rep = 0; rep < cfg.reps; ++rep) {
          if (errors[rep].empty()) pts.push_back(est[rep][k * nm + m]);
        }
        const auto mom = sim_detail::moments(pts);
        RatePoint p;
        p.n = n;
        p.r = cfg.rate_r[k];
        p.method = methods[m];
        p.truth = truth;
        p.bias = mom.mean - truth;
        p.sd = mom.sd;
        double mse = 0.0;
        for (double v : pts) mse += (v - truth) * (v - truth);
        p.rmse = pts.empty() ? 0.0 : std::sqrt(mse / static_cast<double>(pts.size()));
        p.reps = pts.size();
        p.failures = failures;
        out.push_back(p);
      }
    }
  }
  return out;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  ExperimentResult r;
  r.config = cfg;
  if (cfg.scenario == Scenario::Rate) {
    r.rate = run_rate_experiment(cfg);
  } else {
    r.main = run_main_experiment(cfg);
  }
  return r;
}

namespace sim_detail {

inline std::string fmt(double v) { return std::isnan(v) ? "NA" : KeyValueConfig::format_double(v); }

}  // namespace sim_detail

inline const char* kMcHeader =
    "scenario,target,block,method,n_total,n_multisource,subgroup,truth,truth_mc_se,mean,bias,sd,mean_se,rmse,"
    "coverage,band_coverage,bootstrap_band_coverage,joint_band_coverage,joint_bootstrap_coverage,reps,failures";

/// One row per (block, method, subgroup).
inline void write_mc_long(std::ostream& out, const std::vector<McResult>& results) {
  using sim_detail::fmt;
  out << kMcHeader << "\n";
  for (const auto& r : results) {
    for (const auto& c : r.cells) {
      out << scenario_name(r.scenario) << "," << r.target << "," << r.block.name() << "," << method_name(r.method)
          << "," << r.n_total << "," << r.n_multisource << "," << format_key(c.subgroup) << "," << fmt(c.truth) << ","
          << fmt(c.truth_mc_se) << "," << fmt(c.mean) << "," << fmt(c.bias) << "," << fmt(c.sd) << ","
          << fmt(c.mean_se) << "," << fmt(c.rmse) << "," << fmt(c.coverage) << "," << fmt(c.band_coverage) << ","
          << fmt(c.bootstrap_band_coverage) << "," << fmt(r.joint_band_coverage) << ","
          << fmt(r.joint_bootstrap_coverage) << "," << r.reps << "," << r.failures << "\n";
    }
  }
}

/// Bias and SD at one subgroup level, blocks by methods, one column pair per
/// multi-source sample size.
inline void write_mc_table(std::ostream& out, const std::vector<McResult>& results, double level = 3.0) {
  std::vector<std::size_t> sizes;
  for (const auto& r : results) {
    if (std::find(sizes.begin(), sizes.end(), r.n_multisource) == sizes.end()) sizes.push_back(r.n_multisource);
  }
  std::sort(sizes.begin(), sizes.end());
  out << "correct_models,method";
  for (std::size_t n : sizes) out << ",bias_" << n << ",sd_" << n;
  out << "\n";
  std::vector<std::pair<std::string, Method>> rows;
  for (const auto& r : results) {
    const std::pair<std::string, Method> key{r.block.name(), r.method};
    if (std::find(rows.begin(), rows.end(), key) == rows.end()) rows.push_back(key);
  }
  for (const auto& [block, method] : rows) {
    out << block << "," << method_name(method);
    for (std::size_t n : sizes) {
      const McResult* hit = nullptr;
      for (const auto& r : results) {
        if (r.block.name() == block && r.method == method && r.n_multisource == n) hit = &r;
      }
      if (hit) {
        const McCell& c = hit->cell(level);
        out << "," << sim_detail::fmt(c.bias) << "," << sim_detail::fmt(c.sd);
      } else {
        out << ",NA,NA";
      }
    }
    out << "\n";
  }
}

inline void write_rate_csv(std::ostream& out, const std::vector<RatePoint>& pts) {
  out << "n,r,estimator,truth,bias,sd,rmse,reps,failures\n";
  for (const auto& p : pts) {
    out << p.n << "," << KeyValueConfig::format_double(p.r) << "," << method_name(p.method) << ","
        << KeyValueConfig::format_double(p.truth) << "," << KeyValueConfig::format_double(p.bias) << ","
        << KeyValueConfig::format_double(p.sd) << "," << KeyValueConfig::format_double(p.rmse) << "," << p.reps
        << "," << p.failures << "\n";
  }
}

}  // namespace sgte
