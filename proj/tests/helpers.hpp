#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "sgte/sgte.hpp"

namespace sgte::testing {

inline Observation ms(double y, int a, int s, std::vector<double> x) {
  Observation o;
  o.y = y;
  o.a = a;
  o.s = s;
  o.r = true;
  o.x = std::move(x);
  return o;
}

inline Observation ext(std::vector<double> x) {
  Observation o;
  o.r = false;
  o.x = std::move(x);
  return o;
}

/// Small synthetic data set with a discrete modifier (column 0, levels 1..3),
/// two continuous covariates, three sources and optional external rows.
inline Dataset random_dataset(std::uint64_t seed, std::size_t n_ms = 600, std::size_t n_ext = 0) {
  Rng rng(seed);
  NormalSampler normal;
  std::vector<Observation> rows;
  for (std::size_t i = 0; i < n_ms + n_ext; ++i) {
    const double level = 1.0 + static_cast<double>(uniform_index(rng, 3));
    const double x1 = normal(rng);
    const double x2 = normal(rng);
    if (i >= n_ms) {
      rows.push_back(ext({level, x1 + 0.3, x2}));
      continue;
    }
    const double u = uniform01(rng);
    const int s = u < 0.45 + 0.1 * x1 / 3 ? 1 : (u < 0.8 ? 2 : 3);
    const int a = uniform01(rng) < expit(0.2 * x1 - 0.3 * x2 + 0.2 * s - 0.4) ? 1 : 0;
    const double y = 1.0 + 0.5 * level + x1 - 0.5 * x2 * x2 + a * (1.0 + 0.3 * level) + normal(rng);
    rows.push_back(ms(y, a, s, {level, x1, x2}));
  }
  return validate_dataset(Dataset(rows, {"g", "x1", "x2"}));
}

inline NuisanceSpec linear_spec() {
  NuisanceSpec s;
  s.outcome = OutcomeModel::Linear;
  s.categorical = {0};
  return s;
}

/// Finite population over X = (x1 in {1,2}, x2 in {0,1}), two sources, binary A
/// and an external sample, with every (x, a) cell populated.
inline Dataset discrete_population(std::uint64_t seed) {
  Rng rng(seed);
  NormalSampler normal;
  std::vector<Observation> rows;
  for (int x1 = 1; x1 <= 2; ++x1) {
    for (int x2 = 0; x2 <= 1; ++x2) {
      for (int s = 1; s <= 2; ++s) {
        for (int a = 0; a <= 1; ++a) {
          const std::size_t count = 2 + uniform_index(rng, 9);
          for (std::size_t k = 0; k < count; ++k) {
            rows.push_back(ms(x1 + 2.0 * x2 + a * (1.0 + x1 * x2) + s + normal(rng), a, s, {double(x1), double(x2)}));
          }
        }
      }
      const std::size_t n_ext = 3 + uniform_index(rng, 12);
      for (std::size_t k = 0; k < n_ext; ++k) rows.push_back(ext({double(x1), double(x2)}));
    }
  }
  return validate_dataset(Dataset(rows, {"x1", "x2"}));
}

using Cell = std::pair<int, int>;

inline Cell cell_of(std::span<const double> x) { return {static_cast<int>(x[0]), static_cast<int>(x[1])}; }

/// Cell counts and treated outcome sums of a finite population.
struct Tables {
  std::map<Cell, double> n, n_ext, n_ms;
  std::map<std::pair<Cell, int>, double> n_s, n_a, sum_y;

  explicit Tables(const Dataset& d) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      const Cell c = cell_of(d.x(i));
      n[c] += 1;
      if (!d.in_multisource(i)) {
        n_ext[c] += 1;
        continue;
      }
      n_ms[c] += 1;
      n_s[{c, d.s(i)}] += 1;
      n_a[{c, d.a(i)}] += 1;
      sum_y[{c, d.a(i)}] += d.y(i);
    }
  }

  /// Saturated nuisances: the empirical conditional means and frequencies.
  NuisanceSet exact() const {
    NuisanceSet set;
    set.trim_epsilon = 1e-300;
    set.mu = [this](int a, std::span<const double> x) {
      const Cell c = cell_of(x);
      return sum_y.at({c, a}) / n_a.at({c, a});
    };
    set.eta = [this](int a, std::span<const double> x) {
      const Cell c = cell_of(x);
      return n_a.at({c, a}) / n_ms.at(c);
    };
    set.q = [this](int s, std::span<const double> x) {
      const Cell c = cell_of(x);
      return n_s.at({c, s}) / n_ms.at(c);
    };
    set.p = [this](std::span<const double> x) {
      const Cell c = cell_of(x);
      return n_ms.at(c) / n.at(c);
    };
    return set;
  }

  /// Regression form: sum_x E(Y | A=a, x) Pr(x | x1, target).
  double g_formula(const TargetSpec& t, int a, int x1) const {
    double num = 0, den = 0;
    for (int x2 = 0; x2 <= 1; ++x2) {
      const Cell c{x1, x2};
      const double w = t.is_external() ? n_ext.at(c) : n_s.at({c, t.source});
      num += w * sum_y.at({c, a}) / n_a.at({c, a});
      den += w;
    }
    return num / den;
  }

  /// Weighting form: E[I(A=a) w(X) Y | x1] / Pr(x1, target) with the
  /// population weight q_s / eta_a (internal) or (1 - p) / (p eta_a) (external).
  double weighted(const TargetSpec& t, int a, int x1) const {
    double num = 0, den = 0, total = 0;
    for (const auto& [c, m] : n) total += m;
    for (int x2 = 0; x2 <= 1; ++x2) {
      const Cell c{x1, x2};
      const double pr_x = n.at(c) / total;
      const double pr_ms = n_ms.at(c) / n.at(c);
      const double pr_a = n_a.at({c, a}) / n_ms.at(c);
      const double mean_y = sum_y.at({c, a}) / n_a.at({c, a});
      if (t.is_external()) {
        num += pr_x * pr_ms * pr_a * ((1 - pr_ms) / (pr_ms * pr_a)) * mean_y;
        den += pr_x * (1 - pr_ms);
      } else {
        const double pr_s = n_s.at({c, t.source}) / n_ms.at(c);
        num += pr_x * pr_ms * pr_a * (pr_s / pr_a) * mean_y;
        den += pr_x * pr_ms * pr_s;
      }
    }
    return num / den;
  }
};

}  // namespace sgte::testing
