#pragma once

#include <algorithm>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgte/core.hpp"

namespace sgte {

/// Intercept + selected covariates, with categorical columns expanded into
/// treatment-coded dummies (first observed level is the reference).
class Design {
 public:
  Design() = default;

  /// Learns categorical levels from the training rows.
  static Design learn(const RowMatrix& X, std::span<const std::size_t> rows, std::vector<std::size_t> columns,
                      const std::vector<std::size_t>& categorical, bool intercept = true) {
    Design d;
    d.intercept_ = intercept;
    d.columns_ = std::move(columns);
    d.levels_.resize(d.columns_.size());
    for (std::size_t k = 0; k < d.columns_.size(); ++k) {
      const std::size_t c = d.columns_[k];
      if (c >= static_cast<std::size_t>(X.cols())) throw Error(Errc::InvalidArgument, "design column out of range");
      if (std::find(categorical.begin(), categorical.end(), c) == categorical.end()) continue;
      std::set<double> seen;
      for (std::size_t i : rows) seen.insert(X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)));
      d.levels_[k].assign(seen.begin(), seen.end());
      d.categorical_.push_back(k);
    }
    return d;
  }

  std::size_t width() const {
    std::size_t w = intercept_ ? 1 : 0;
    for (std::size_t k = 0; k < columns_.size(); ++k) w += is_categorical(k) ? levels_[k].size() - 1 : 1;
    return w;
  }

  bool is_categorical(std::size_t k) const { return !levels_[k].empty(); }
  const std::vector<std::size_t>& columns() const { return columns_; }
  const std::vector<double>& levels(std::size_t k) const { return levels_[k]; }
  bool intercept() const { return intercept_; }

  /// Writes the design row of covariate vector `x` into `out` (width() entries).
  /// A categorical value not seen in training maps to the reference level.
  void fill(std::span<const double> x, double* out) const {
    std::size_t w = 0;
    if (intercept_) out[w++] = 1.0;
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      const double v = x[columns_[k]];
      if (is_categorical(k)) {
        for (std::size_t l = 1; l < levels_[k].size(); ++l) out[w++] = v == levels_[k][l] ? 1.0 : 0.0;
      } else {
        out[w++] = v;
      }
    }
  }

  Eigen::VectorXd row(std::span<const double> x) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(width()));
    fill(x, out.data());
    return out;
  }

  Eigen::MatrixXd matrix(const Dataset& d, std::span<const std::size_t> rows) const {
    Eigen::MatrixXd Z(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width()));
    Eigen::VectorXd buf(Z.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      fill(d.x(rows[k]), buf.data());
      Z.row(static_cast<Eigen::Index>(k)) = buf.transpose();
    }
    return Z;
  }

  std::vector<std::string> names(const std::vector<std::string>& covariate_names) const {
    std::vector<std::string> out;
    if (intercept_) out.emplace_back("(intercept)");
    for (std::size_t k = 0; k < columns_.size(); ++k) {
      const std::string& base = covariate_names[columns_[k]];
      if (is_categorical(k)) {
        for (std::size_t l = 1; l < levels_[k].size(); ++l) {
          out.push_back(base + "=" + KeyValueConfig::format_double(levels_[k][l]));
        }
      } else {
        out.push_back(base);
      }
    }
    return out;
  }

 private:
  bool intercept_ = true;
  std::vector<std::size_t> columns_;
  std::vector<std::vector<double>> levels_;
  std::vector<std::size_t> categorical_;
};

/// All covariate indices 0..p-1.
inline std::vector<std::size_t> all_columns(std::size_t p) {
  std::vector<std::size_t> out(p);
  for (std::size_t j = 0; j < p; ++j) out[j] = j;
  return out;
}

}  // namespace sgte
