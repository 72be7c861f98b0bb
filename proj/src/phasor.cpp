#include "emtgis/phasor.hpp"
#include "emtgis/error.hpp"

#include <cmath>

namespace emtgis {

std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidCase: return "InvalidCase";
    case ErrorCode::SingularNetwork: return "SingularNetwork";
    case ErrorCode::NonConvergence: return "NonConvergence";
    case ErrorCode::SingularJacobian: return "SingularJacobian";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::OracleUnavailable: return "OracleUnavailable";
    case ErrorCode::InternalNonConvergence: return "InternalNonConvergence";
    case ErrorCode::InvalidVoltage: return "InvalidVoltage";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::MaxOuterExceeded: return "MaxOuterExceeded";
    case ErrorCode::InnerBreakdown: return "InnerBreakdown";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::SingularConductance: return "SingularConductance";
    case ErrorCode::IncompatibleSnapshot: return "IncompatibleSnapshot";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::MissingComponentModel: return "MissingComponentModel";
    case ErrorCode::ZeroFaultCurrentDelta: return "ZeroFaultCurrentDelta";
    case ErrorCode::SteadyStateTimeout: return "SteadyStateTimeout";
    case ErrorCode::ScheduleViolation: return "ScheduleViolation";
    case ErrorCode::TopologyMismatch: return "TopologyMismatch";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::Io: return "Io";
    }
    return "Unknown";
}

double normalize_angle(double radians) {
    double a = std::remainder(radians, 2.0 * kPi);
    if (a <= -kPi) {
        a += 2.0 * kPi;
    }
    return a;
}

Phasor::Phasor(double magnitude, double angle) {
    if (magnitude < 0.0) {
        magnitude = -magnitude;
        angle += kPi;
    }
    magnitude_ = magnitude;
    angle_ = normalize_angle(angle);
}

Phasor Phasor::from_complex(Complex z) {
    return {std::abs(z), std::arg(z)};
}

Complex Phasor::to_complex() const {
    return std::polar(magnitude_, angle_);
}

double Phasor::instantaneous(double omega, double t, double shift) const {
    return kSqrt2 * magnitude_ * std::cos(omega * t + angle_ + shift);
}

Phasor operator*(const Phasor& a, const Phasor& b) {
    return {a.magnitude_ * b.magnitude_, a.angle_ + b.angle_};
}

Phasor operator/(const Phasor& a, const Phasor& b) {
    return {a.magnitude_ / b.magnitude_, a.angle_ - b.angle_};
}

Phasor operator+(const Phasor& a, const Phasor& b) {
    return Phasor::from_complex(a.to_complex() + b.to_complex());
}

Phasor operator-(const Phasor& a, const Phasor& b) {
    return Phasor::from_complex(a.to_complex() - b.to_complex());
}

}  // namespace emtgis
