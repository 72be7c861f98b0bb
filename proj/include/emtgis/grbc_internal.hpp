#pragma once

// Model-side helpers for GRBCs. Used by snapshot construction, never by the
// boundary coordinator.

#include "emtgis/netmodel.hpp"
#include "emtgis/powerflow.hpp"

namespace emtgis::grbc {

/// Internal mismatch tolerance of white-box evaluations.
inline constexpr double kInternalTolerance = 1e-11;

/// Internal power flow of a white-box GRBC with its boundary bus (listed
/// first) held at `v_boundary`.
PowerFlowSolution solve_whitebox(const GrbcDeclaration& decl, const WhiteBoxPayload& payload,
                                 const Phasor& v_boundary);

/// Voltage-dependent derating of the HVDC terminal: 1 at and above 0.9 pu,
/// linear to zero below.
double hvdc_derate(double v);

}  // namespace emtgis::grbc
