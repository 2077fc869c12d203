// Acceptance checks. `sgte_acceptance --criterion N` runs one check and prints
// a single "criterion N: PASS|FAIL ..." line; without arguments all run.

#include <CLI11.hpp>

#include <boost/math/tools/roots.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "cli.hpp"
#include "helpers.hpp"

using namespace sgte;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> notes;

  /// Records one sub-check.
  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    notes.push_back((ok ? "ok " : "MISS ") + what);
  }
};

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

bool within(double v, double target, double tol) { return std::abs(v - target) <= tol; }
bool within_rel(double v, double target, double rel) { return std::abs(v - target) <= rel * std::abs(target); }

const McResult& find(const std::vector<McResult>& rs, Correctness block, Method m, std::size_t n_ms) {
  for (const auto& r : rs) {
    if (r.block.outcome == block.outcome && r.block.weights == block.weights && r.method == m &&
        r.n_multisource == n_ms) {
      return r;
    }
  }
  throw Error(Errc::InvalidArgument, "missing result");
}

const Correctness kAll{true, true};
const Correctness kOutcomeOnly{true, false};
const Correctness kWeightsOnly{false, true};
const Correctness kNone{false, false};

Verdict oracle_equivalence() {
  Verdict v;
  const SubgroupSpec spec{{0}, {{1.0}, {2.0}}};
  double worst_forms = 0, worst_est = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const Dataset d = sgte::testing::discrete_population(seed);
    const sgte::testing::Tables tab(d);
    for (const TargetSpec t : {TargetSpec::internal(1), TargetSpec::internal(2), TargetSpec::external()}) {
      const CrossFit cf = fixed_nuisances(d, tab.exact(), t);
      for (int a = 0; a <= 1; ++a) {
        for (int x1 = 1; x1 <= 2; ++x1) {
          const double g = tab.g_formula(t, a, x1);
          worst_forms = std::max(worst_forms, std::abs(tab.weighted(t, a, x1) - g));
          for (Method m : {Method::DR, Method::PlugIn}) {
            worst_est = std::max(worst_est, std::abs(estimate(d, cf, m, a, spec, {double(x1)}).point - g));
          }
        }
      }
    }
  }
  std::ostringstream a, b;
  a << "regression vs weighting form max gap " << worst_forms;
  b << "dr/plugin vs enumeration max gap " << worst_est;
  v.check(worst_forms < 1e-10, a.str());
  v.check(worst_est < 1e-10, b.str());
  return v;
}

Verdict identities() {
  Verdict v;
  const Dataset d = generate_main(DgpMainConfig{}, 2024).data;
  const SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}, {4.0}, {5.0}}};
  double if_gap = 0, agg_gap = 0;
  for (const TargetSpec t :
       {TargetSpec::internal(1), TargetSpec::internal(2), TargetSpec::internal(3), TargetSpec::external()}) {
    NuisanceSpec nspec;
    nspec.categorical = {0};
    const CrossFit cf = cross_fit(d, nspec, t, 2, 1);
    for (int a = 0; a <= 1; ++a) {
      for (const auto& key : spec.levels) {
        if_gap = std::max(if_gap, if_mean_gap(d, cf, estimate(d, cf, Method::DR, a, spec, key).if_values));
      }
      for (Method m : {Method::DR, Method::PlugIn, Method::IPTW}) {
        agg_gap = std::max(agg_gap, aggregation_gap(d, cf, m, a, spec));
      }
    }
  }
  std::ostringstream a, b;
  a << "simulated data: IF mean gap " << if_gap;
  b << "aggregation gap " << agg_gap;
  v.check(if_gap < 1e-10, a.str());
  v.check(agg_gap < 1e-10, b.str());

  // the same identities through the command-line path on a CSV file
  const auto dir = std::filesystem::temp_directory_path() / ("sgte_acceptance_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "data.csv");
    write_dataset_csv(out, d);
  }
  double csv_if = 0, csv_agg = 0;
  for (const std::string target : {"internal:2", "external"}) {
    const std::string out_dir = (dir / target.substr(0, 3)).string();
    const std::vector<std::string> args{"sgte",   "estimate", "--input", (dir / "data.csv").string(),
                                        "--subgroup", "x1",   "--target", target,
                                        "--out",  out_dir,    "--threads", "1"};
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    std::ostringstream sink;
    if (cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink) != 0) {
      v.check(false, "csv run for " + target + " failed: " + sink.str());
      continue;
    }
    std::ifstream in(std::filesystem::path(out_dir) / "manifest.json");
    const auto manifest = nlohmann::json::parse(in);
    for (const auto& id : manifest["identities"]) {
      csv_agg = std::max(csv_agg, id["aggregation_gap"].get<double>());
      if (id.contains("if_mean_gap")) csv_if = std::max(csv_if, id["if_mean_gap"].get<double>());
    }
  }
  std::filesystem::remove_all(dir);
  std::ostringstream c;
  c << "csv runs: IF mean gap " << csv_if << ", aggregation gap " << csv_agg;
  v.check(csv_if < 1e-10 && csv_agg < 1e-10, c.str());
  return v;
}

ExperimentConfig main_config(Scenario s) {
  ExperimentConfig cfg;
  cfg.scenario = s;
  cfg.reps = 500;
  cfg.seed = 20;
  return cfg;
}

std::vector<McResult> run_sizes(ExperimentConfig cfg, std::initializer_list<std::size_t> sizes) {
  std::vector<McResult> all;
  for (std::size_t n : sizes) {
    cfg.main.n_multisource = n;
    auto r = run_main_experiment(cfg);
    all.insert(all.end(), r.begin(), r.end());
  }
  return all;
}

Verdict table_internal() {
  Verdict v;
  const auto rs = run_sizes(main_config(Scenario::MainInternal), {1000, 5000});
  const std::size_t sizes[2] = {1000, 5000};
  const double reg_bias[2] = {0.14, 0.11};
  const double iptw_bias[2] = {0.14, 0.09};
  const double dr_sd[2] = {0.62, 0.28};
  const double iptw_sd[2] = {0.97, 0.44};
  for (int k = 0; k < 2; ++k) {
    const std::size_t n = sizes[k];
    const std::string tag = " n=" + std::to_string(n);
    for (const auto& [block, name] : {std::pair{kAll, "all"}, std::pair{kOutcomeOnly, "outcome"},
                                      std::pair{kWeightsOnly, "weights"}, std::pair{kNone, "none"}}) {
      const double b = find(rs, block, Method::DR, n).cell(3).bias;
      v.check(within(b, 0.0, 0.10), std::string("dr bias ") + name + tag + " " + num(b));
    }
    for (const Correctness block : {kWeightsOnly, kNone}) {
      const double b = find(rs, block, Method::PlugIn, n).cell(3).bias;
      v.check(within(b, reg_bias[k], 0.06), "plugin bias " + block.name() + tag + " " + num(b) + " vs " +
                                                num(reg_bias[k], 2));
    }
    for (const Correctness block : {kOutcomeOnly, kNone}) {
      const double b = find(rs, block, Method::IPTW, n).cell(3).bias;
      v.check(within(b, iptw_bias[k], 0.06), "iptw bias " + block.name() + tag + " " + num(b) + " vs " +
                                                 num(iptw_bias[k], 2));
    }
    const double sd_dr = find(rs, kAll, Method::DR, n).cell(3).sd;
    const double sd_iptw = find(rs, kAll, Method::IPTW, n).cell(3).sd;
    v.check(within_rel(sd_dr, dr_sd[k], 0.25), "dr sd" + tag + " " + num(sd_dr) + " vs " + num(dr_sd[k], 2));
    v.check(within_rel(sd_iptw, iptw_sd[k], 0.25),
            "iptw sd" + tag + " " + num(sd_iptw) + " vs " + num(iptw_sd[k], 2));
  }
  return v;
}

Verdict table_external() {
  Verdict v;
  ExperimentConfig cfg = main_config(Scenario::MainExternal);
  cfg.blocks = {kAll};
  const auto rs = run_sizes(cfg, {1000});
  const McCell& dr = find(rs, kAll, Method::DR, 1000).cell(3);
  const McCell& iptw = find(rs, kAll, Method::IPTW, 1000).cell(3);
  const McCell& reg = find(rs, kAll, Method::PlugIn, 1000).cell(3);
  v.check(within(dr.bias, -0.01, 0.10), "dr bias " + num(dr.bias) + " vs -0.01");
  v.check(within_rel(iptw.sd, 1.45, 0.30), "iptw sd " + num(iptw.sd) + " vs 1.45");
  v.notes.push_back("info dr sd " + num(dr.sd) + " (0.71), plugin bias " + num(reg.bias) + " sd " + num(reg.sd) +
                    " (0.01, 0.61), iptw bias " + num(iptw.bias) + " (0.07), dr coverage " + num(dr.coverage));
  return v;
}

Verdict subgroup_properties() {
  Verdict v;
  ExperimentConfig cfg = main_config(Scenario::MainInternal);
  cfg.blocks = {kAll};
  cfg.methods = {Method::DR};
  cfg.band_reps = 200;
  cfg.band_B = 500;
  const auto rs = run_sizes(cfg, {1000});
  const McResult& r = find(rs, kAll, Method::DR, 1000);
  for (const auto& c : r.cells) {
    const std::string tag = " x=" + format_key(c.subgroup);
    v.check(std::abs(c.bias) < 0.1, "bias" + tag + " " + num(c.bias));
    v.check(within_rel(c.mean_se, c.sd, 0.10), "se/sd" + tag + " " + num(c.mean_se) + "/" + num(c.sd));
    v.check(c.coverage >= 0.92 && c.coverage <= 0.98, "coverage" + tag + " " + num(c.coverage));
    v.check(c.band_coverage >= c.coverage && c.bootstrap_band_coverage >= c.coverage,
            "band coverage" + tag + " gaussian " + num(c.band_coverage) + " bootstrap " +
                num(c.bootstrap_band_coverage));
  }
  v.check(r.bootstrap_reps >= 200, "bootstrap bands on " + std::to_string(r.bootstrap_reps) + " replicates");
  v.notes.push_back("info joint coverage gaussian " + num(r.joint_band_coverage) + " bootstrap " +
                    num(r.joint_bootstrap_coverage));
  return v;
}

/// Spearman rank correlation of y against x (no ties expected).
double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size(); ++k) r[idx[k]] = static_cast<double>(k);
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double d2 = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

Verdict rate_robustness() {
  Verdict v;
  ExperimentConfig cfg;
  cfg.scenario = Scenario::Rate;
  cfg.reps = 1000;
  cfg.methods = {Method::DR, Method::PlugIn};
  cfg.seed = 21;
  const auto pts = run_rate_experiment(cfg);
  for (std::size_t n : cfg.rate_n) {
    std::map<double, double> dr, plug;
    for (const auto& p : pts) {
      if (p.n != n) continue;
      (p.method == Method::DR ? dr : plug)[p.r] = p.rmse;
    }
    const std::string tag = " n=" + std::to_string(n);
    const double ref = dr.rbegin()->second;
    double worst = 0;
    for (const auto& [r, e] : dr) {
      if (r >= 0.25 - 1e-9) worst = std::max(worst, std::abs(e / ref - 1.0));
    }
    v.check(worst <= 0.15, "dr rmse within " + num(100 * worst, 1) + "% of r=0.5 for r>=0.25" + tag);
    std::vector<double> rs, es;
    for (const auto& [r, e] : plug) {
      rs.push_back(r);
      es.push_back(e);
    }
    const double rho = spearman(rs, es);
    v.check(rho < -0.9, "plugin spearman " + num(rho) + tag);
    bool dominated = true;
    for (const auto& [r, e] : dr) {
      if (r <= 0.25 + 1e-9) dominated = dominated && e <= plug[r];
    }
    v.check(dominated, "dr <= plugin for r<=0.25" + tag + " (r=0.1: " + num(dr.begin()->second) + " vs " +
                           num(plug.begin()->second) + ")");
  }
  return v;
}

Verdict band_crosscheck() {
  Verdict v;
  const double target = std::pow(0.95, 1.0 / 5.0);
  auto f = [&](double c) { return 2.0 * normal_cdf(c) - 1.0 - target; };
  const auto [lo, hi] = boost::math::tools::bisect(f, 0.0, 10.0, boost::math::tools::eps_tolerance<double>(50));
  const double analytic = 0.5 * (lo + hi);
  const double simulated = gaussian_max_critical(5, 0.05, 1000000, 31);
  v.check(within(simulated, analytic, 0.01), "gaussian max d=5 " + num(simulated, 4) + " vs root " + num(analytic, 4));

  DgpMainConfig dgp;
  dgp.n_multisource = 5000;
  const Dataset d = generate_main(dgp, 32).data;
  const TargetSpec t = TargetSpec::internal(1);
  const SubgroupSpec spec{{0}, {{1.0}, {2.0}, {3.0}, {4.0}, {5.0}}};
  const NuisanceSpec nspec = main_nuisance_spec(kAll);
  const CrossFit cf = cross_fit(d, nspec, t, 2, 33);
  BootstrapOptions opt;
  opt.B = 2000;
  opt.refit = false;
  opt.seed = 34;
  opt.threads = 0;
  const BandResult boot = band_bootstrap(d, nspec, t, {1, std::nullopt}, spec, opt, nullptr, &cf);
  v.check(within(boot.critical, simulated, 0.15),
          "bootstrap t-max " + num(boot.critical) + " vs gaussian " + num(simulated) + " at n=5000");
  return v;
}

Verdict numerical_hygiene() {
  Verdict v;
  Rng rng(40);
  NormalSampler normal;
  double worst_score = 0;
  int fitted = 0;
  for (int prob = 0; prob < 100; ++prob) {
    const auto n = static_cast<Eigen::Index>(200 + uniform_index(rng, 1800));
    const auto p = static_cast<Eigen::Index>(2 + uniform_index(rng, 5));
    Eigen::MatrixXd Z(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
      Z(i, 0) = 1.0;
      for (Eigen::Index j = 1; j < p; ++j) Z(i, j) = normal(rng);
    }
    Eigen::VectorXd beta(p);
    for (Eigen::Index j = 0; j < p; ++j) beta[j] = 0.7 * normal(rng);
    if (prob % 4 == 3) {
      // three-class multinomial
      Eigen::MatrixXd B(p, 2);
      for (Eigen::Index j = 0; j < p; ++j) B.row(j) << 0.6 * normal(rng), 0.6 * normal(rng);
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::VectorXd pr = softmax_row(B, Z.row(i).transpose());
        const double u = uniform01(rng);
        labels[static_cast<std::size_t>(i)] = u < pr[0] ? 0 : (u < pr[0] + pr[1] ? 1 : 2);
      }
      const GlmFit fit = fit_multinomial(Z, labels, 3);
      worst_score = std::max(worst_score, multinomial_score(Z, labels, fit.coef, 0.0).cwiseAbs().maxCoeff());
    } else {
      Eigen::VectorXd y(n);
      for (Eigen::Index i = 0; i < n; ++i) y[i] = uniform01(rng) < expit(Z.row(i).dot(beta)) ? 1.0 : 0.0;
      const GlmFit fit = fit_logistic(Z, y);
      worst_score = std::max(worst_score, logistic_score(Z, y, fit.coef.col(0), 0.0).cwiseAbs().maxCoeff());
    }
    ++fitted;
  }
  std::ostringstream a;
  a << "IRLS max |score| " << worst_score << " over " << fitted << " problems";
  v.check(fitted == 100 && worst_score < 1e-8, a.str());

  double worst_rel = 0;
  for (int prob = 0; prob < 20; ++prob) {
    const std::size_t n = 100 + uniform_index(rng, 400);
    std::vector<Observation> rows;
    for (std::size_t i = 0; i < n; ++i) {
      const double x1 = normal(rng), x2 = uniform01(rng);
      rows.push_back(sgte::testing::ms(std::sin(2 * x1) + x2 * x2 + 0.3 * normal(rng), 0, 1,
                                       {x1, x2, 1.0 + static_cast<double>(i % 3)}));
    }
    const Dataset d = validate_dataset(Dataset(rows, {"x1", "x2", "g"}));
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) y[static_cast<Eigen::Index>(i)] = d.y(i);
    const auto all = all_columns(n);
    const AdditiveModel m = fit_spline_additive(d, all, y, {0, 1, 2}, {2});
    const Eigen::MatrixXd Z = m.design(d, all);
    const Eigen::MatrixXd P = m.penalty();
    Eigen::VectorXd b(Z.cols());
    for (Eigen::Index j = 0; j < b.size(); ++j) b[j] = normal(rng);
    const Eigen::VectorXd g = penalized_gradient(Z, y, P, b);
    Eigen::VectorXd fd(b.size());
    for (Eigen::Index j = 0; j < b.size(); ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(b[j]));
      Eigen::VectorXd up = b, dn = b;
      up[j] += h;
      dn[j] -= h;
      fd[j] = (penalized_objective(Z, y, P, up) - penalized_objective(Z, y, P, dn)) / (2 * h);
    }
    worst_rel = std::max(worst_rel, (fd - g).norm() / std::max(1.0, g.norm()));
  }
  std::ostringstream b;
  b << "spline gradient vs central differences max relative gap " << worst_rel << " over 20 problems";
  v.check(worst_rel < 1e-4, b.str());
  return v;
}

const std::vector<std::pair<const char*, std::function<Verdict()>>>& criteria() {
  static const std::vector<std::pair<const char*, std::function<Verdict()>>> list{
      {"oracle equivalence", oracle_equivalence},
      {"influence and aggregation identities", identities},
      {"internal target table", table_internal},
      {"external target table", table_external},
      {"subgroup bias, se, coverage and bands", subgroup_properties},
      {"rate robustness", rate_robustness},
      {"band critical values", band_crosscheck},
      {"numerical hygiene", numerical_hygiene},
  };
  return list;
}

bool run_one(int n) {
  const auto& [name, fn] = criteria()[static_cast<std::size_t>(n - 1)];
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = fn();
  } catch (const std::exception& e) {
    v.check(false, std::string("error: ") + e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cout << "criterion " << n << ": " << (v.pass ? "PASS" : "FAIL") << " (" << name << ", " << num(secs, 1)
            << " s)";
  for (const auto& note : v.notes) std::cout << "; " << note;
  std::cout << std::endl;
  return v.pass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  int which = 0;
  app.add_option("--criterion", which, "criterion number (1-8); all when omitted")->check(CLI::Range(1, 8));
  CLI11_PARSE(app, argc, argv);
  bool ok = true;
  for (int n = 1; n <= static_cast<int>(criteria().size()); ++n) {
    if (which == 0 || which == n) ok = run_one(n) && ok;
  }
  return ok ? 0 : 1;
}
