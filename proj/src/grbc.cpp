#include "emtgis/grbc.hpp"
#include "emtgis/error.hpp"
#include "emtgis/expression.hpp"
#include "emtgis/grbc_internal.hpp"

#include <cmath>

namespace emtgis::grbc {

double hvdc_derate(double v) {
    return v >= 0.9 ? 1.0 : v / 0.9;
}

PowerFlowSolution solve_whitebox(const GrbcDeclaration& decl, const WhiteBoxPayload& payload,
                                 const Phasor& v_boundary) {
    BusRecord boundary;
    boundary.id = decl.boundary_bus;
    boundary.kind = BusKind::Slack;
    std::vector<BusRecord> buses{boundary};
    buses.insert(buses.end(), payload.buses.begin(), payload.buses.end());
    PowerFlowProblem pr = make_problem(buses, payload.branches, payload.machines);
    pr.fixed_voltage[0] = v_boundary;
    try {
        return solve_power_flow(pr, {kInternalTolerance, 30});
    } catch (const Error& e) {
        if (e.code() == ErrorCode::NonConvergence || e.code() == ErrorCode::SingularJacobian) {
            throw Error(ErrorCode::InternalNonConvergence, "GRBC '" + decl.name + "': " + e.what());
        }
        throw;
    }
}

GrbcEvaluation evaluate(const GrbcDeclaration& decl, const Phasor& v_boundary) {
    if (!(v_boundary.magnitude() > 0.0) || !std::isfinite(v_boundary.magnitude())) {
        throw Error(ErrorCode::InvalidVoltage, "GRBC '" + decl.name + "' evaluated at non-positive voltage");
    }
    GrbcEvaluation out;
    if (const auto* wb = std::get_if<WhiteBoxPayload>(&decl.payload)) {
        const PowerFlowSolution sol = solve_whitebox(decl, *wb, v_boundary);
        // The slack injection flows from the boundary node into the GRBC network.
        out.p_tilde = -sol.p[0];
        out.q_tilde = -sol.q[0];
        out.evaluation_cost = sol.iterations;
    } else if (const auto* sc = std::get_if<ScriptedPayload>(&decl.payload)) {
        out.p_tilde = sc->p_expr->evaluate(v_boundary.magnitude(), v_boundary.angle());
        out.q_tilde = sc->q_expr->evaluate(v_boundary.magnitude(), v_boundary.angle());
        out.evaluation_cost = 1;
    } else if (const auto* hv = std::get_if<HvdcPayload>(&decl.payload)) {
        out.p_tilde = -hv->p_dc * hvdc_derate(v_boundary.magnitude());
        out.q_tilde = out.p_tilde * hv->tan_phi;
        out.evaluation_cost = 1;
    }
    if (!std::isfinite(out.p_tilde) || !std::isfinite(out.q_tilde)) {
        throw Error(ErrorCode::NonFinite, "GRBC '" + decl.name + "' returned a non-finite injection");
    }
    return out;
}

bool adapter_is_opaque(const GrbcDeclaration& decl) {
    const auto* wb = std::get_if<WhiteBoxPayload>(&decl.payload);
    return wb == nullptr || !wb->oracle;
}

}  // namespace emtgis::grbc
