#pragma once

#include <algorithm>
#include <climits>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sgte/config.hpp"
#include "sgte/error.hpp"

namespace sgte {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// One subject. Multi-source rows (r = 1) carry y, a and s; external
/// covariate-only rows (r = 0) carry none of them.
struct Observation {
  std::optional<double> y;
  std::optional<int> a;
  std::optional<int> s;
  bool r = true;
  std::vector<double> x;
};

inline constexpr int kMissingLabel = INT_MIN;

/// Columnar store of observations plus the enumerated treatment and source levels.
///
/// A Dataset is built unvalidated from rows; validate_dataset() checks the
/// missingness pattern and returns the validated copy that the estimators
/// accept. Validated datasets are immutable and safe to share across threads.
class Dataset {
 public:
  Dataset() = default;

  Dataset(const std::vector<Observation>& rows, std::vector<std::string> covariate_names,
          std::vector<int> declared_sources = {})
      : names_(std::move(covariate_names)), declared_sources_(std::move(declared_sources)) {
    const std::size_t n = rows.size();
    const std::size_t p = names_.size();
    X_.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    y_.assign(n, std::numeric_limits<double>::quiet_NaN());
    a_.assign(n, kMissingLabel);
    s_.assign(n, kMissingLabel);
    r_.assign(n, 1);
    y_present_.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const Observation& o = rows[i];
      if (o.x.size() != p) {
        throw Error(Errc::Schema, "row " + std::to_string(i + 1) + ": expected " + std::to_string(p) +
                                      " covariates, got " + std::to_string(o.x.size()));
      }
      for (std::size_t j = 0; j < p; ++j) X_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = o.x[j];
      if (o.y) {
        y_[i] = *o.y;
        y_present_[i] = 1;
      }
      if (o.a) a_[i] = *o.a;
      if (o.s) s_[i] = *o.s;
      r_[i] = o.r ? 1 : 0;
    }
  }

  std::size_t size() const { return y_.size(); }
  std::size_t p() const { return names_.size(); }
  const std::vector<std::string>& covariate_names() const { return names_; }

  bool in_multisource(std::size_t i) const { return r_[i] != 0; }
  double y(std::size_t i) const { return y_[i]; }
  int a(std::size_t i) const { return a_[i]; }
  int s(std::size_t i) const { return s_[i]; }
  std::span<const double> x(std::size_t i) const {
    return {X_.data() + i * p(), p()};
  }
  double x(std::size_t i, std::size_t j) const {
    return X_(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  }
  const RowMatrix& X() const { return X_; }

  Observation observation(std::size_t i) const {
    Observation o;
    if (y_present_[i]) o.y = y_[i];
    if (a_[i] != kMissingLabel) o.a = a_[i];
    if (s_[i] != kMissingLabel) o.s = s_[i];
    o.r = r_[i] != 0;
    o.x.assign(x(i).begin(), x(i).end());
    return o;
  }

  bool validated() const { return validated_; }
  const std::vector<int>& treatment_levels() const { return treatments_; }
  const std::vector<int>& source_levels() const { return sources_; }
  const std::vector<int>& declared_sources() const { return declared_sources_; }
  bool has_external() const { return n_external_ > 0; }
  std::size_t n_external() const { return n_external_; }
  std::size_t n_multisource() const { return size() - n_external_; }

  std::size_t source_count(int s) const {
    auto it = source_counts_.find(s);
    return it == source_counts_.end() ? 0 : it->second;
  }
  const std::map<int, std::size_t>& source_counts() const { return source_counts_; }
  const std::vector<std::string>& warnings() const { return warnings_; }

  /// Rows `rows` (repeats allowed) as a new dataset sharing this dataset's levels.
  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.names_ = names_;
    out.declared_sources_ = declared_sources_;
    out.treatments_ = treatments_;
    out.sources_ = sources_;
    out.validated_ = validated_;
    const std::size_t n = rows.size();
    out.X_.resize(static_cast<Eigen::Index>(n), X_.cols());
    out.y_.resize(n);
    out.a_.resize(n);
    out.s_.resize(n);
    out.r_.resize(n);
    out.y_present_.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t i = rows[k];
      out.X_.row(static_cast<Eigen::Index>(k)) = X_.row(static_cast<Eigen::Index>(i));
      out.y_[k] = y_[i];
      out.a_[k] = a_[i];
      out.s_[k] = s_[i];
      out.r_[k] = r_[i];
      out.y_present_[k] = y_present_[i];
    }
    out.recount();
    return out;
  }

  friend bool operator==(const Dataset& l, const Dataset& r) {
    auto same_y = [&] {
      for (std::size_t i = 0; i < l.y_.size(); ++i) {
        if (l.y_present_[i] != r.y_present_[i]) return false;
        if (l.y_present_[i] && l.y_[i] != r.y_[i]) return false;
      }
      return true;
    };
    return l.names_ == r.names_ && l.X_ == r.X_ && l.y_.size() == r.y_.size() && same_y() && l.a_ == r.a_ &&
           l.s_ == r.s_ && l.r_ == r.r_ && l.treatments_ == r.treatments_ && l.sources_ == r.sources_ &&
           l.validated_ == r.validated_ && l.source_counts_ == r.source_counts_;
  }

 private:
  friend Dataset validate_dataset(const Dataset& raw, std::size_t first_line);

  void recount() {
    source_counts_.clear();
    n_external_ = 0;
    for (int s : sources_) source_counts_[s] = 0;
    for (std::size_t i = 0; i < size(); ++i) {
      if (r_[i]) {
        ++source_counts_[s_[i]];
      } else {
        ++n_external_;
      }
    }
  }

  std::vector<std::string> names_;
  std::vector<int> declared_sources_;
  RowMatrix X_;
  std::vector<double> y_;
  std::vector<int> a_;
  std::vector<int> s_;
  std::vector<unsigned char> r_;
  std::vector<unsigned char> y_present_;
  std::vector<int> treatments_;
  std::vector<int> sources_;
  std::map<int, std::size_t> source_counts_;
  std::size_t n_external_ = 0;
  bool validated_ = false;
  std::vector<std::string> warnings_;
};

/// Checks the missingness pattern, enumerates levels and computes per-source counts.
///
/// Declared sources without rows are dropped with a warning. Treatment levels
/// absent from some source produce a positivity warning per (a, s) cell.
/// With `first_line` > 0 errors cite input file lines (row i is line first_line + i).
inline Dataset validate_dataset(const Dataset& raw, std::size_t first_line = 0) {
  if (raw.size() == 0) throw Error(Errc::EmptySource, "dataset has no rows");
  Dataset d = raw;
  d.warnings_.clear();
  std::set<int> treatments;
  std::set<int> observed_sources;
  for (std::size_t i = 0; i < d.size(); ++i) {
    auto row = [&] {
      return first_line ? "line " + std::to_string(first_line + i) : "row " + std::to_string(i + 1);
    };
    const bool has_y = d.y_present_[i] != 0;
    const bool has_a = d.a_[i] != kMissingLabel;
    const bool has_s = d.s_[i] != kMissingLabel;
    if (d.r_[i]) {
      if (!(has_y && has_a && has_s)) {
        throw Error(Errc::MixedMissingness, row() + ": r = 1 requires y, a and s to be present");
      }
      if (!std::isfinite(d.y_[i])) throw Error(Errc::NonFiniteResponse, row() + ": outcome is not finite");
      treatments.insert(d.a_[i]);
      observed_sources.insert(d.s_[i]);
    } else if (has_y || has_a || has_s) {
      throw Error(Errc::MixedMissingness, row() + ": r = 0 requires y, a and s to be absent");
    }
    for (std::size_t j = 0; j < d.p(); ++j) {
      if (!std::isfinite(d.x(i, j))) {
        throw Error(Errc::NonFiniteCovariate, row() + ": covariate '" + d.names_[j] + "' is not finite");
      }
    }
  }
  if (observed_sources.empty()) throw Error(Errc::EmptySource, "dataset has no multi-source rows");
  for (int s : d.declared_sources_) {
    if (!observed_sources.count(s)) {
      d.warnings_.push_back("declared source " + std::to_string(s) + " has no rows and was dropped");
    }
  }
  d.treatments_.assign(treatments.begin(), treatments.end());
  d.sources_.assign(observed_sources.begin(), observed_sources.end());
  d.declared_sources_ = d.sources_;
  d.recount();

  std::map<std::pair<int, int>, std::size_t> cell;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.r_[i]) ++cell[{d.a_[i], d.s_[i]}];
  }
  for (int s : d.sources_) {
    for (int a : d.treatments_) {
      if (!cell.count({a, s})) {
        d.warnings_.push_back("positivity: treatment " + std::to_string(a) + " never observed in source " +
                              std::to_string(s));
      }
    }
  }
  d.validated_ = true;
  return d;
}

/// Population the estimand refers to: one internal source, or the external (r = 0) sample.
struct TargetSpec {
  enum class Kind { Internal, External };
  Kind kind = Kind::Internal;
  int source = 1;

  static TargetSpec internal(int s) { return {Kind::Internal, s}; }
  static TargetSpec external() { return {Kind::External, 0}; }

  bool is_external() const { return kind == Kind::External; }

  /// Row belongs to the target population.
  bool contains(const Dataset& d, std::size_t i) const {
    return is_external() ? !d.in_multisource(i) : (d.in_multisource(i) && d.s(i) == source);
  }

  /// Row enters the estimating equation (internal targets use only multi-source rows).
  bool uses(const Dataset& d, std::size_t i) const { return is_external() || d.in_multisource(i); }

  std::string label() const { return is_external() ? "external" : "internal:" + std::to_string(source); }

  friend bool operator==(const TargetSpec&, const TargetSpec&) = default;
};

inline void check_target(const Dataset& d, const TargetSpec& t) {
  if (t.is_external()) {
    if (!d.has_external()) throw Error(Errc::InvalidArgument, "external target requires r = 0 rows");
  } else if (!std::binary_search(d.source_levels().begin(), d.source_levels().end(), t.source)) {
    throw Error(Errc::InvalidArgument, "internal target source " + std::to_string(t.source) + " is not in the data");
  }
}

using SubgroupKey = std::vector<double>;

inline std::string format_key(const SubgroupKey& key) {
  std::string out;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (i) out += "|";
    out += KeyValueConfig::format_double(key[i]);
  }
  return out;
}

/// Effect-modifier columns and the subgroup levels of interest.
struct SubgroupSpec {
  std::vector<std::size_t> columns;
  std::vector<SubgroupKey> levels;

  SubgroupKey key_of(const Dataset& d, std::size_t i) const {
    SubgroupKey k(columns.size());
    for (std::size_t c = 0; c < columns.size(); ++c) k[c] = d.x(i, columns[c]);
    return k;
  }

  bool matches(const Dataset& d, std::size_t i, const SubgroupKey& key) const {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      if (d.x(i, columns[c]) != key[c]) return false;
    }
    return true;
  }
};

/// Auto mode: every distinct effect-modifier value observed in the target population.
inline SubgroupSpec enumerate_subgroups(const Dataset& d, std::vector<std::size_t> columns, const TargetSpec& t) {
  for (std::size_t c : columns) {
    if (c >= d.p()) throw Error(Errc::InvalidArgument, "subgroup column index out of range");
  }
  SubgroupSpec spec{std::move(columns), {}};
  std::set<SubgroupKey> keys;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (t.contains(d, i)) keys.insert(spec.key_of(d, i));
  }
  spec.levels.assign(keys.begin(), keys.end());
  return spec;
}

/// Number of target-population rows in each declared level.
inline std::map<SubgroupKey, std::size_t> subgroup_counts(const Dataset& d, const SubgroupSpec& spec,
                                                          const TargetSpec& t) {
  std::map<SubgroupKey, std::size_t> counts;
  for (const auto& level : spec.levels) {
    if (level.size() != spec.columns.size()) throw Error(Errc::InvalidArgument, "subgroup level has wrong arity");
    if (!counts.emplace(level, 0).second) {
      throw Error(Errc::InvalidArgument, "subgroup level " + format_key(level) + " declared twice");
    }
  }
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!t.contains(d, i)) continue;
    auto it = counts.find(spec.key_of(d, i));
    if (it != counts.end()) ++it->second;
  }
  for (const auto& [level, n] : counts) {
    if (n == 0) {
      throw Error(Errc::ZeroCell, "subgroup " + format_key(level) + " has no rows in target " + t.label());
    }
  }
  return counts;
}

/// Levels cover every row that enters estimation for target `t`.
inline bool is_exhaustive(const Dataset& d, const SubgroupSpec& spec, const TargetSpec& t) {
  std::set<SubgroupKey> declared(spec.levels.begin(), spec.levels.end());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (t.uses(d, i) && !declared.count(spec.key_of(d, i))) return false;
  }
  return true;
}

}  // namespace sgte
