#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace emtgis {

enum class ErrorCode {
    InvalidCase,
    SingularNetwork,
    NonConvergence,
    SingularJacobian,
    NotConverged,
    OracleUnavailable,
    InternalNonConvergence,
    InvalidVoltage,
    InvalidConfig,
    MaxOuterExceeded,
    InnerBreakdown,
    NonFinite,
    InvalidParameter,
    SingularConductance,
    IncompatibleSnapshot,
    UnknownTarget,
    MissingComponentModel,
    ZeroFaultCurrentDelta,
    SteadyStateTimeout,
    ScheduleViolation,
    TopologyMismatch,
    ParseError,
    Io,
};

std::string_view to_string(ErrorCode code);

/// Base exception for every recoverable failure in the toolkit. `stage`
/// is filled by the pipeline when a failure propagates out of one of its
/// stages ("ipf", "ramp_to_snapshot", ...).
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }
    [[nodiscard]] const std::string& stage() const noexcept { return stage_; }
    void set_stage(std::string stage) { stage_ = std::move(stage); }

private:
    ErrorCode code_;
    std::string stage_;
};

}  // namespace emtgis
