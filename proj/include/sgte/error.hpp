#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sgte {

enum class Errc {
  MixedMissingness,
  EmptySource,
  NonFiniteCovariate,
  Schema,
  ZeroCell,
  Separation,
  RankDeficient,
  NonFiniteResponse,
  InsufficientTreatedRows,
  NonFiniteWeight,
  StratumTooSmall,
  NoSeAvailable,
  BootstrapCellEmpty,
  Unachievable,
  NoConvergence,
  OracleUnavailable,
  InvalidArgument,
  ReplicateFailures,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::MixedMissingness: return "MixedMissingness";
    case Errc::EmptySource: return "EmptySource";
    case Errc::NonFiniteCovariate: return "NonFiniteCovariate";
    case Errc::Schema: return "Schema";
    case Errc::ZeroCell: return "ZeroCell";
    case Errc::Separation: return "Separation";
    case Errc::RankDeficient: return "RankDeficient";
    case Errc::NonFiniteResponse: return "NonFiniteResponse";
    case Errc::InsufficientTreatedRows: return "InsufficientTreatedRows";
    case Errc::NonFiniteWeight: return "NonFiniteWeight";
    case Errc::StratumTooSmall: return "StratumTooSmall";
    case Errc::NoSeAvailable: return "NoSeAvailable";
    case Errc::BootstrapCellEmpty: return "BootstrapCellEmpty";
    case Errc::Unachievable: return "Unachievable";
    case Errc::NoConvergence: return "NoConvergence";
    case Errc::OracleUnavailable: return "OracleUnavailable";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::ReplicateFailures: return "ReplicateFailures";
  }
  return "Unknown";
}

/// Exception carrying a machine-readable error class.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

  /// True for errors raised while checking input data, as opposed to estimation failures.
  bool is_validation() const noexcept {
    return code_ == Errc::MixedMissingness || code_ == Errc::EmptySource ||
           code_ == Errc::NonFiniteCovariate || code_ == Errc::Schema;
  }

 private:
  Errc code_;
};

}  // namespace sgte
