#pragma once

#include "emtgis/netmodel.hpp"
#include "emtgis/phasor.hpp"

#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace emtgis {

struct PowerFlowOptions {
    double tol = 1e-8;
    int max_iter = 30;
};

/// Result of a Newton-Raphson solve. `p`/`q` are the complex power injected
/// into the network at each bus, S_i = V_i * conj((Y V)_i).
struct PowerFlowSolution {
    std::vector<std::string> bus_ids;
    std::vector<Phasor> voltage;
    std::vector<double> p;
    std::vector<double> q;
    int iterations = 0;
    bool converged = false;
    double max_mismatch = 0.0;
    std::vector<double> mismatch_history;

    [[nodiscard]] int index_of(const std::string& id) const;
    [[nodiscard]] const Phasor& voltage_at(const std::string& id) const;
    [[nodiscard]] Complex injection_at(const std::string& id) const;
};

/// A generic power-flow problem: buses with Slack or Boundary kind are held
/// at `fixed_voltage`; PV buses hold |V| at v_set and P at p_spec; PQ buses
/// hold p_spec/q_spec.
struct PowerFlowProblem {
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
    std::vector<double> p_spec;
    std::vector<double> q_spec;
    std::vector<Phasor> fixed_voltage;  // used for Slack/Boundary buses and PV magnitudes
};

PowerFlowSolution solve_power_flow(const PowerFlowProblem& problem, const PowerFlowOptions& opts,
                                   const std::vector<Phasor>* warm_start = nullptr);

/// Builds specified injections from loads and machine dispatch.
PowerFlowProblem make_problem(const std::vector<BusRecord>& buses, const std::vector<BranchRecord>& branches,
                              const std::vector<MachineRecord>& machines);

/// Power flow of the white-box main system with every Boundary bus held at
/// the supplied phasor.
PowerFlowSolution solve_main(const CaseFile& c, const std::map<std::string, Phasor>& boundary_voltages,
                             const PowerFlowOptions& opts = {});

/// Power the main system pushes into each torn boundary node (positive into
/// the node). Boundary-bus loads are main-side.
std::map<std::string, std::pair<double, double>> boundary_injections(const PowerFlowSolution& sol,
                                                                     const CaseFile& c);

/// Un-torn whole-system power flow; every GRBC must be white-box in oracle mode.
PowerFlowSolution solve_monolithic(const CaseFile& full_case, const PowerFlowOptions& opts = {});

/// The un-torn bus/branch/machine sets used by solve_monolithic.
PowerFlowProblem monolithic_problem(const CaseFile& full_case);

void write_solution_csv(const PowerFlowSolution& sol, std::ostream& out);

/// Locale-independent shortest round-trip decimal.
std::string format_double(double v);

}  // namespace emtgis
