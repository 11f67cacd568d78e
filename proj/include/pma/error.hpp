#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace pma {

enum class ErrorCode {
    dimension_mismatch,
    invalid_argument,
    cone_violation,
    eigen_failure,
    syntax_error,
    unknown_identifier,
    arity_mismatch,
    domain_error,
    metric_not_spd,
    nonpositive_f,
    line_search_stall,
    linear_solve_failure,
    max_iter,
    homotopy_stall,
    inadmissible_ustar,
    overflow,
    config_error,
    io_error,
};

inline std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::dimension_mismatch: return "DIMENSION_MISMATCH";
    case ErrorCode::invalid_argument: return "INVALID_ARGUMENT";
    case ErrorCode::cone_violation: return "CONE_VIOLATION";
    case ErrorCode::eigen_failure: return "EIGEN_FAILURE";
    case ErrorCode::syntax_error: return "SYNTAX_ERROR";
    case ErrorCode::unknown_identifier: return "UNKNOWN_IDENTIFIER";
    case ErrorCode::arity_mismatch: return "ARITY_MISMATCH";
    case ErrorCode::domain_error: return "DOMAIN_ERROR";
    case ErrorCode::metric_not_spd: return "METRIC_NOT_SPD";
    case ErrorCode::nonpositive_f: return "NONPOSITIVE_F";
    case ErrorCode::line_search_stall: return "LINE_SEARCH_STALL";
    case ErrorCode::linear_solve_failure: return "LINEAR_SOLVE_FAILURE";
    case ErrorCode::max_iter: return "MAX_ITER";
    case ErrorCode::homotopy_stall: return "HOMOTOPY_STALL";
    case ErrorCode::inadmissible_ustar: return "INADMISSIBLE_USTAR";
    case ErrorCode::overflow: return "OVERFLOW";
    case ErrorCode::config_error: return "CONFIG_ERROR";
    case ErrorCode::io_error: return "IO_ERROR";
    }
    return "UNKNOWN";
}

/// Library-wide exception. Field failures carry the flat grid indices of the
/// offending points; parse failures carry a byte offset into the source text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    Error(ErrorCode code, const std::string& message, std::vector<std::size_t> points)
        : Error(code, message) {
        points_ = std::move(points);
    }

    static Error at_offset(ErrorCode code, std::size_t offset, const std::string& message) {
        Error e(code, message + " at offset " + std::to_string(offset));
        e.offset_ = offset;
        return e;
    }

    ErrorCode code() const noexcept { return code_; }
    const std::vector<std::size_t>& points() const noexcept { return points_; }
    std::size_t offset() const noexcept { return offset_; }

    /// Extra context that callers may attach (for example the last good
    /// homotopy parameter).
    double value = 0.0;

private:
    ErrorCode code_;
    std::vector<std::size_t> points_;
    std::size_t offset_ = 0;
};

} // namespace pma
