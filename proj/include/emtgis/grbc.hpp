#pragma once

// Boundary surface of a generalized region of black-box components (GRBC).
// The coordinator sees a GRBC only through `evaluate` and
// `adapter_is_opaque`; nothing here exposes internal models or derivatives.

#include "emtgis/netmodel.hpp"
#include "emtgis/phasor.hpp"

namespace emtgis::grbc {

struct GrbcEvaluation {
    double p_tilde = 0.0;  // power injected INTO the torn boundary node from the GRBC side
    double q_tilde = 0.0;
    int evaluation_cost = 0;
};

/// Injected boundary power of `decl` at boundary voltage `v_boundary`.
/// Pure in its arguments; safe to call concurrently on distinct declarations.
GrbcEvaluation evaluate(const GrbcDeclaration& decl, const Phasor& v_boundary);

/// True unless the declaration is a white-box network in oracle mode.
bool adapter_is_opaque(const GrbcDeclaration& decl);

}  // namespace emtgis::grbc
