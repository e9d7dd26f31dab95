#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace feedbench {

enum class ErrorCode {
  invalid_argument,
  config_error,
  infeasible_calibration,
  unknown_dataset,
  malformed_verdict,
  invalid_behavior,
  missing_response,
  judge_unavailable,
  unparseable_score,
  system_failure,
  budget_unsatisfiable,
  schema_violation,
  empty_dataset,
  unknown_case,
  test_leak,
  missing_slot,
  missing_anchor,
  incomplete_coverage,
  gateway_exhausted,
  auth_failure,
  transport_error,
  dimension_mismatch,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "InvalidArgument";
    case ErrorCode::config_error: return "ConfigError";
    case ErrorCode::infeasible_calibration: return "InfeasibleCalibration";
    case ErrorCode::unknown_dataset: return "UnknownDataset";
    case ErrorCode::malformed_verdict: return "MalformedVerdict";
    case ErrorCode::invalid_behavior: return "InvalidBehavior";
    case ErrorCode::missing_response: return "MissingResponse";
    case ErrorCode::judge_unavailable: return "JudgeUnavailable";
    case ErrorCode::unparseable_score: return "UnparseableScore";
    case ErrorCode::system_failure: return "SystemFailure";
    case ErrorCode::budget_unsatisfiable: return "BudgetUnsatisfiable";
    case ErrorCode::schema_violation: return "SchemaViolation";
    case ErrorCode::empty_dataset: return "EmptyDataset";
    case ErrorCode::unknown_case: return "UnknownCase";
    case ErrorCode::test_leak: return "TestLeak";
    case ErrorCode::missing_slot: return "MissingSlot";
    case ErrorCode::missing_anchor: return "MissingAnchor";
    case ErrorCode::incomplete_coverage: return "IncompleteCoverage";
    case ErrorCode::gateway_exhausted: return "GatewayExhausted";
    case ErrorCode::auth_failure: return "AuthFailure";
    case ErrorCode::transport_error: return "TransportError";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
  }
  return "Unknown";
}

/// Every failure raised by the harness carries a typed code; callers switch on
/// `code()` rather than on exception subtypes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

class SchemaViolation : public Error {
 public:
  SchemaViolation(std::size_t line, const std::string& message)
      : Error(ErrorCode::schema_violation, "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class IncompleteCoverage : public Error {
 public:
  explicit IncompleteCoverage(std::vector<std::string> missing)
      : Error(ErrorCode::incomplete_coverage, describe(missing)), missing_(std::move(missing)) {}

  const std::vector<std::string>& missing_case_ids() const noexcept { return missing_; }

 private:
  static std::string describe(const std::vector<std::string>& missing) {
    std::string out = std::to_string(missing.size()) + " case(s) without a score:";
    for (const auto& id : missing) out += " " + id;
    return out;
  }

  std::vector<std::string> missing_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace feedbench
