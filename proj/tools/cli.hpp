#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "sgte/sgte.hpp"

namespace sgte::cli {

enum ExitCode { kOk = 0, kFailure = 1, kValidation = 2, kEstimation = 3, kReplicates = 4 };

/// Prefix of environment overrides: SGTE_<KEY>, key upper-cased.
inline constexpr const char* kEnvPrefix = "SGTE_";

/// Flag name (without dashes) to config key. Every flag is also readable
/// from a config file and from SGTE_<KEY>.
struct FlagKey {
  const char* flag;
  const char* key;
  const char* help;
};

inline const std::vector<FlagKey>& flag_keys() {
  static const std::vector<FlagKey> keys{
      {"input", "input", "CSV file with columns y, a, s, r and covariates"},
      {"y-column", "y_column", "outcome column name (default y)"},
      {"a-column", "a_column", "treatment column name (default a)"},
      {"s-column", "s_column", "source column name (default s)"},
      {"r-column", "r_column", "multi-source indicator column name (default r)"},
      {"covariates", "covariates", "covariate columns (default: every other column)"},
      {"categorical", "categorical", "covariates expanded to indicators (default: the subgroup columns)"},
      {"target", "target", "internal:<s> or external (default internal:<first source>)"},
      {"subgroup", "subgroup", "effect-modifier columns, by name or 0-based index"},
      {"levels", "levels", "subgroup levels, ';' between levels and '|' between columns (default: all observed)"},
      {"treatments", "treatments", "a or a,a' (default 1,0)"},
      {"methods", "methods", "subset of dr,plugin,iptw (default all)"},
      {"alpha", "alpha", "1 - confidence level (default 0.05)"},
      {"band", "band", "bootstrap or gaussian (default gaussian)"},
      {"B", "B", "bootstrap replicates or Gaussian draws (default 1000)"},
      {"bootstrap-refit", "bootstrap_refit", "refit nuisances in every bootstrap replicate (default true)"},
      {"folds", "folds", "cross-fitting folds (default 2)"},
      {"outcome-model", "outcome_model", "spline or linear (default spline)"},
      {"seed", "seed", "random seed (default 1)"},
      {"out", "out", "output directory (default .)"},
      {"threads", "threads", "worker threads, 0 = all cores (default 0)"},
      {"scenario", "scenario", "main-internal, main-external or rate"},
      {"reps", "reps", "Monte Carlo replicates (default 500, rate 1000)"},
      {"n-multisource", "n_multisource", "multi-source sample sizes (default 1000)"},
      {"n-total", "n_total", "total sample size of the main design (default 10000)"},
      {"blocks", "blocks", "correctness blocks: all,outcome,weights,none (default all four)"},
      {"band-reps", "band_reps", "replicates that also get a bootstrap band (default 0)"},
      {"band-B", "band_B", "bootstrap replicates per band in simulations (default 500)"},
      {"comparison-crossfit", "comparison_crossfit", "cross-fit the plug-in and IPTW nuisances in simulations (default false)"},
      {"truth-draws", "truth_draws", "Monte Carlo draws of the truth integrals (default 1e7)"},
      {"rate-n", "rate_n", "sample sizes of the rate experiment (default 100,500,1000)"},
      {"rate-r", "rate_r", "error exponents of the rate experiment (default 0.10,0.15,...,0.50)"},
      {"rate-noise", "rate_noise", "perturbation noise of the rate experiment: scalar or pointwise (default pointwise)"},
  };
  return keys;
}

inline std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char c : key) out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

/// Loads a key = value file, or the "config" object of a run manifest.
inline KeyValueConfig load_config_file(const std::string& path) {
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
    std::ifstream in(path);
    if (!in) throw Error(Errc::Schema, "cannot open config file " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::Schema, std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.contains("config") || !j["config"].is_object()) throw Error(Errc::Schema, "manifest has no config object");
    KeyValueConfig c;
    for (const auto& [k, v] : j["config"].items()) c.set(k, v.get<std::string>());
    return c;
  }
  return KeyValueConfig::load(path);
}

inline std::vector<std::string> split_list(const std::string& s, char sep = ',') {
  std::vector<std::string> out;
  for (const auto& item : KeyValueConfig::split(s, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline bool is_index(const std::string& s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); });
}

inline std::size_t column_index(const Dataset& d, const std::string& name) {
  const auto& names = d.covariate_names();
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == name) return j;
  }
  if (is_index(name)) {
    const std::size_t j = std::stoul(name);
    if (j < names.size()) return j;
  }
  throw Error(Errc::Schema, "unknown covariate column '" + name + "'");
}

inline TargetSpec parse_target(const std::string& s) {
  if (s == "external") return TargetSpec::external();
  if (s.rfind("internal:", 0) == 0 && is_index(s.substr(9))) return TargetSpec::internal(std::stoi(s.substr(9)));
  throw Error(Errc::Schema, "target must be internal:<s> or external, got '" + s + "'");
}

inline std::string fmt(double v) { return std::isnan(v) ? "NA" : KeyValueConfig::format_double(v); }

inline nlohmann::json config_json(const KeyValueConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : c.values()) j[k] = v;
  return j;
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::Schema, "cannot write " + path.string());
  out << text;
}

/// All outputs are rendered first and written together at the end.
struct Outputs {
  std::vector<std::pair<std::string, std::string>> files;

  void add(std::string name, std::string text) { files.emplace_back(std::move(name), std::move(text)); }

  void write(const std::string& dir) const {
    std::filesystem::create_directories(dir);
    for (const auto& [name, text] : files) write_text(std::filesystem::path(dir) / name, text);
  }
};

inline nlohmann::json manifest_base(const std::string& command, const KeyValueConfig& c) {
  nlohmann::json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = c.get_or("seed", "1");
  m["config"] = config_json(c);
  return m;
}

inline int cmd_estimate(KeyValueConfig c, std::ostream& out) {
  auto set_default = [&](const std::string& k, const std::string& v) {
    if (!c.has(k)) c.set(k, v);
  };
  set_default("y_column", "y");
  set_default("a_column", "a");
  set_default("s_column", "s");
  set_default("r_column", "r");
  set_default("treatments", "1,0");
  set_default("methods", "dr,plugin,iptw");
  set_default("alpha", "0.05");
  set_default("band", "gaussian");
  set_default("B", "1000");
  set_default("bootstrap_refit", "true");
  set_default("folds", "2");
  set_default("outcome_model", "spline");
  set_default("seed", "1");
  set_default("out", ".");
  set_default("threads", "0");
  if (!c.has("input")) throw Error(Errc::Schema, "estimate needs --input");
  if (!c.has("subgroup")) throw Error(Errc::Schema, "estimate needs --subgroup");

  ColumnMap map;
  map.y = c.get("y_column");
  map.a = c.get("a_column");
  map.s = c.get("s_column");
  map.r = c.get("r_column");
  if (c.has("covariates")) map.covariates = split_list(c.get("covariates"));
  const Dataset d = read_dataset_csv(c.get("input"), map);
  if (!c.has("target")) c.set("target", "internal:" + std::to_string(d.source_levels().front()));
  const TargetSpec t = parse_target(c.get("target"));
  check_target(d, t);

  std::vector<std::size_t> cols;
  for (const auto& name : split_list(c.get("subgroup"))) cols.push_back(column_index(d, name));
  SubgroupSpec spec;
  if (c.has("levels")) {
    spec.columns = cols;
    for (const auto& level : split_list(c.get("levels"), ';')) {
      SubgroupKey key;
      for (const auto& v : split_list(level, '|')) key.push_back(KeyValueConfig::parse_double(v, "levels"));
      spec.levels.push_back(key);
    }
  } else {
    spec = enumerate_subgroups(d, cols, t);
  }
  subgroup_counts(d, spec, t);

  std::vector<int> treatments;
  for (const auto& v : split_list(c.get("treatments"))) {
    if (!is_index(v) && !(v.size() > 1 && v[0] == '-' && is_index(v.substr(1)))) {
      throw Error(Errc::Schema, "treatments must be integers, got '" + v + "'");
    }
    treatments.push_back(std::stoi(v));
  }
  if (treatments.empty() || treatments.size() > 2) throw Error(Errc::Schema, "treatments takes a or a,a'");
  for (int a : treatments) {
    if (!std::binary_search(d.treatment_levels().begin(), d.treatment_levels().end(), a)) {
      throw Error(Errc::Schema, "treatment level " + std::to_string(a) + " does not occur in the data");
    }
  }
  std::vector<Method> methods;
  for (const auto& m : split_list(c.get("methods"))) methods.push_back(parse_method(m));
  const double alpha = c.get_double("alpha");
  check_alpha(alpha);
  const BandConstruction construction = parse_construction(c.get("band"));
  const auto B = static_cast<std::size_t>(c.get_int("B"));
  const int folds = static_cast<int>(c.get_int("folds"));
  const std::uint64_t seed = std::stoull(c.get("seed"));
  const auto threads = static_cast<unsigned>(c.get_int("threads"));

  NuisanceSpec nspec;
  nspec.outcome = parse_outcome_model(c.get("outcome_model"));
  if (nspec.outcome == OutcomeModel::Oracle || nspec.outcome == OutcomeModel::PerturbedOracle) {
    throw Error(Errc::Schema, "outcome model '" + c.get("outcome_model") + "' is only available in simulations");
  }
  if (c.has("categorical")) {
    for (const auto& name : split_list(c.get("categorical"))) nspec.categorical.push_back(column_index(d, name));
  } else {
    nspec.categorical = cols;
  }
  nspec.validate();

  const CrossFit cf = cross_fit(d, nspec, t, folds, seed);
  const SubgroupSpec none{{}, {SubgroupKey{}}};
  const bool exhaustive = is_exhaustive(d, spec, t);

  std::ostringstream est;
  est << kEstimatesHeader << "\n";
  nlohmann::json identities = nlohmann::json::array();
  std::vector<SubgroupEstimate> dr_first;
  std::vector<EffectEstimate> dr_effects;
  for (Method m : methods) {
    std::vector<std::vector<SubgroupEstimate>> per_arm;
    for (int a : treatments) {
      auto ests = estimate_all(d, cf, m, a, spec);
      const SubgroupEstimate overall = estimate(d, cf, m, a, none, SubgroupKey{});
      for (const auto& e : ests) write_estimate_row(est, e);
      write_estimate_row(est, overall);
      nlohmann::json id;
      id["method"] = method_name(m);
      id["treatment"] = a;
      if (m == Method::DR) {
        double gap = if_mean_gap(d, cf, overall.if_values);
        for (const auto& e : ests) gap = std::max(gap, if_mean_gap(d, cf, e.if_values));
        id["if_mean_gap"] = gap;
      }
      id["aggregation_gap"] = exhaustive ? nlohmann::json(aggregation_gap(d, cf, m, a, spec)) : nlohmann::json(nullptr);
      identities.push_back(id);
      per_arm.push_back(std::move(ests));
    }
    if (treatments.size() == 2) {
      for (std::size_t l = 0; l < spec.levels.size(); ++l) {
        const EffectEstimate e = contrast(per_arm[0][l], per_arm[1][l]);
        write_effect_row(est, e);
        if (m == Method::DR) dr_effects.push_back(e);
      }
    }
    if (m == Method::DR) dr_first = per_arm[0];
  }

  std::ostringstream bands;
  bands << kBandsHeader << "\n";
  nlohmann::json band_info = nullptr;
  if (std::find(methods.begin(), methods.end(), Method::DR) != methods.end()) {
    BandResult band;
    if (construction == BandConstruction::GaussianMax) {
      band = treatments.size() == 2 ? band_gaussian_max(dr_effects, alpha, B, seed)
                                    : band_gaussian_max(dr_first, alpha, B, seed);
    } else {
      BootstrapOptions opt;
      opt.B = B;
      opt.alpha = alpha;
      opt.refit = c.get_bool("bootstrap_refit");
      opt.folds = folds;
      opt.seed = seed;
      opt.threads = threads;
      BandTarget bt{treatments[0], std::nullopt};
      if (treatments.size() == 2) bt.a_ref = treatments[1];
      band = band_bootstrap(d, nspec, t, bt, spec, opt, nullptr, &cf);
    }
    write_band_rows(bands, band);
    band_info = {{"construction", construction_name(band.construction)},
                 {"critical", band.critical},
                 {"B", band.B},
                 {"redraws", band.redraws},
                 {"quantity", treatments.size() == 2 ? std::to_string(treatments[0]) + "-" +
                                                           std::to_string(treatments[1])
                                                     : std::to_string(treatments[0])}};
  }

  std::ostringstream coefs;
  write_coefficients_csv(coefs, cf.sets);

  nlohmann::json manifest = manifest_base("estimate", c);
  manifest["n"] = d.size();
  manifest["n_multisource"] = d.n_multisource();
  manifest["subgroups"] = spec.levels.size();
  manifest["exhaustive"] = exhaustive;
  manifest["identities"] = identities;
  manifest["band"] = band_info;
  std::vector<std::string> warnings = d.warnings();
  warnings.insert(warnings.end(), cf.warnings.begin(), cf.warnings.end());
  manifest["warnings"] = warnings;

  Outputs files;
  files.add("estimates.csv", est.str());
  files.add("bands.csv", bands.str());
  files.add("coefficients.csv", coefs.str());
  files.add("manifest.json", manifest.dump(2) + "\n");
  files.write(c.get("out"));
  out << "wrote " << spec.levels.size() << " subgroups x " << methods.size() << " methods to " << c.get("out")
      << "\n";
  for (const auto& w : warnings) out << "warning: " << w << "\n";
  return kOk;
}

inline ExperimentConfig experiment_config(const KeyValueConfig& c) {
  // keys shared with ExperimentConfig pass through unchanged
  KeyValueConfig e;
  for (const auto& [k, v] : c.values()) {
    if (k == "out" || k == "full" || k == "n_multisource" || k == "n_total" || k == "B") continue;
    e.set(k, v);
  }
  return ExperimentConfig::from_config(e);
}

inline void print_main_summary(std::ostream& out, const std::vector<McResult>& results) {
  out << std::left << std::setw(8) << "n_ms" << std::setw(9) << "block" << std::setw(8) << "method" << std::setw(5)
      << "x" << std::right << std::setw(9) << "bias" << std::setw(9) << "sd" << std::setw(9) << "se" << std::setw(9)
      << "cover" << std::setw(9) << "band" << "\n";
  for (const auto& r : results) {
    for (const auto& cell : r.cells) {
      out << std::left << std::setw(8) << r.n_multisource << std::setw(9) << r.block.name() << std::setw(8)
          << method_name(r.method) << std::setw(5) << format_key(cell.subgroup) << std::right << std::fixed
          << std::setprecision(3) << std::setw(9) << cell.bias << std::setw(9) << cell.sd << std::setw(9)
          << cell.mean_se << std::setw(9) << cell.coverage << std::setw(9) << cell.band_coverage << "\n";
    }
  }
  out.unsetf(std::ios::fixed);
}

inline int cmd_simulate(KeyValueConfig c, std::ostream& out) {
  if (!c.has("scenario")) throw Error(Errc::Schema, "simulate needs --scenario (main-internal, main-external, rate)");
  const Scenario scenario = parse_scenario(c.get("scenario"));
  const bool full = c.has("full") && c.get_bool("full");
  auto set_default = [&](const std::string& k, const std::string& v) {
    if (!c.has(k)) c.set(k, v);
  };
  set_default("seed", "1");
  set_default("out", ".");
  set_default("threads", "0");
  if (scenario == Scenario::Rate) {
    set_default("reps", full ? "5000" : "1000");
    set_default("methods", "dr,plugin");
  } else {
    set_default("reps", full ? "5000" : "500");
    set_default("n_multisource", full ? "1000,2000,5000" : "1000");
    set_default("n_total", full && scenario == Scenario::MainExternal ? "100000" : "10000");
  }
  const ExperimentConfig base = experiment_config(c);
  Outputs files;
  nlohmann::json manifest = manifest_base("simulate", c);
  if (scenario == Scenario::Rate) {
    const auto pts = run_rate_experiment(base);
    std::ostringstream csv;
    write_rate_csv(csv, pts);
    files.add("rate.csv", csv.str());
    out << std::left << std::setw(7) << "n" << std::setw(7) << "r" << std::setw(8) << "method" << "rmse\n";
    for (const auto& p : pts) {
      out << std::left << std::setw(7) << p.n << std::setw(7) << p.r << std::setw(8) << method_name(p.method)
          << p.rmse << "\n";
    }
  } else {
    std::vector<McResult> all;
    for (const auto& v : split_list(c.get("n_multisource"))) {
      ExperimentConfig cfg = base;
      cfg.main.n_multisource = static_cast<std::size_t>(std::stoull(v));
      cfg.main.n_total = static_cast<std::size_t>(c.get_int("n_total"));
      auto res = run_main_experiment(cfg);
      all.insert(all.end(), res.begin(), res.end());
    }
    std::ostringstream lng;
    std::ostringstream tbl;
    write_mc_long(lng, all);
    write_mc_table(tbl, all);
    files.add("mc_results.csv", lng.str());
    files.add("mc_table.csv", tbl.str());
    print_main_summary(out, all);
  }
  files.add("manifest.json", manifest.dump(2) + "\n");
  files.write(c.get("out"));
  return kOk;
}

/// Parses argv into a config: defaults < --config file < SGTE_* environment < flags.
/// Returns the exit code; `command` is empty when only help was printed.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Subgroup treatment effects in target populations from multi-source data"};
  app.require_subcommand(1);
  std::vector<std::string> values(flag_keys().size());
  std::string config_path;
  bool full = false;
  auto add_flags = [&](CLI::App* sub) {
    for (std::size_t k = 0; k < flag_keys().size(); ++k) {
      sub->add_option("--" + std::string(flag_keys()[k].flag), values[k], flag_keys()[k].help);
    }
    sub->add_option("--config", config_path, "key = value file or a manifest.json of an earlier run");
    sub->add_flag("--full", full, "large replicate counts and sample sizes (5000 reps, n up to 1e5)");
  };
  CLI::App* estimate_cmd = app.add_subcommand("estimate", "estimate subgroup means and effects from a CSV file");
  CLI::App* simulate_cmd = app.add_subcommand("simulate", "run a simulation scenario");
  CLI::App* rate_cmd = app.add_subcommand("rate", "run the convergence-rate experiment (scenario rate)");
  add_flags(estimate_cmd);
  add_flags(simulate_cmd);
  add_flags(rate_cmd);
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kValidation;
  }
  CLI::App* sub = app.get_subcommands().front();
  try {
    KeyValueConfig c;
    if (!config_path.empty()) c = load_config_file(config_path);
    for (const auto& fk : flag_keys()) {
      if (const char* env = std::getenv(env_name(fk.key).c_str())) c.set(fk.key, std::string(env));
    }
    for (std::size_t k = 0; k < flag_keys().size(); ++k) {
      if (sub->count("--" + std::string(flag_keys()[k].flag))) c.set(flag_keys()[k].key, values[k]);
    }
    if (full) c.set("full", true);
    if (sub == estimate_cmd) return cmd_estimate(c, out);
    if (sub == rate_cmd) c.set("scenario", std::string("rate"));
    return cmd_simulate(c, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    if (e.code() == Errc::ReplicateFailures) return kReplicates;
    if (e.is_validation() || e.code() == Errc::InvalidArgument) return kValidation;
    return kEstimation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace sgte::cli
