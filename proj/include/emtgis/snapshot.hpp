#pragma once

// Initialized snapshots. The white-box main system is initialized from
// power-flow phasors, each black-box region is ramped into steady state
// behind a Thevenin equivalent of the main system, and the resulting
// snapshots are spliced at phase-aligned instants into one EMT state.

#include "emtgis/coordinator.hpp"
#include "emtgis/emtkernel.hpp"
#include "emtgis/netmodel.hpp"
#include "emtgis/powerflow.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace emtgis {

/// Steady operating point of every bus, main and white-box internal alike.
struct OperatingPoint {
    std::map<std::string, Complex> voltage;
    std::map<std::string, Complex> generation;      // machine output at its bus, generation positive
    std::map<std::string, Complex> grbc_injection;  // power a GRBC injects into its boundary node
};

OperatingPoint operating_point(const CaseFile& c, const PowerFlowSolution& pf);
/// From a converged boundary state: re-solves the main system at the boundary
/// voltages and every white-box region behind its boundary.
OperatingPoint operating_point(const CaseFile& c, const BoundaryState& boundary, const JfngConfig& cfg = {});

/// An EMT network together with the steady phasor of each of its nodes.
struct BuiltNetwork {
    emt::EmtNetwork net;
    std::map<std::string, Complex> node_phasor;
    std::vector<std::string> boundary_nodes;
};

// Loads become constant impedances at their operating voltage; classical
// machines get E' = V + j x'd I and Pm = Re(E' conj(I)).
BuiltNetwork build_main_network(const CaseFile& c, const OperatingPoint& op);
BuiltNetwork build_grbc_network(const CaseFile& c, const GrbcDeclaration& g, const OperatingPoint& op);
BuiltNetwork build_full_network(const CaseFile& c, const OperatingPoint& op);

enum class Provenance { PhasorInit, RampInit, Spliced };
std::string_view to_string(Provenance p);

struct BoundaryPhasor {
    Phasor v;
    Phasor i;  // flowing from the main system into the region
};

struct Snapshot {
    std::string subsystem;
    Provenance provenance = Provenance::PhasorInit;
    std::vector<std::string> nodes;
    std::vector<std::string> elements;
    std::vector<std::string> machines;
    std::vector<std::string> pq_devices;
    emt::EmtState state;
    std::map<std::string, BoundaryPhasor> boundary;

    [[nodiscard]] std::int64_t timestamp_steps() const { return state.step; }
    [[nodiscard]] double timestamp() const { return state.time(); }
};

Snapshot make_snapshot(const emt::EmtNetwork& net, emt::EmtState state, std::string subsystem, Provenance p);

/// The snapshot state reordered to `net`; throws IncompatibleSnapshot when
/// any node, element or device of `net` is absent or the sizes disagree.
emt::EmtState bind_snapshot(const Snapshot& s, const emt::EmtNetwork& net);

/// Largest |v(t) - sqrt2 Re(V e^{jwt})| over boundary voltages and currents
/// (phase a), the snapshot's phasor-consistency figure.
double phasor_consistency(const Snapshot& s, double omega);

/// Instantaneous state of `net` at `step` from steady node phasors.
emt::EmtState phasor_state(const BuiltNetwork& built, double dt, std::int64_t step);

Snapshot phasor_init(const BuiltNetwork& built, const OperatingPoint& op, double dt, std::int64_t step,
                     const std::string& subsystem = "main");
/// Whole case (no GRBCs) from a converged power flow.
Snapshot phasor_init(const CaseFile& c, const PowerFlowSolution& pf, double dt, std::int64_t step);

struct TheveninEquivalent {
    Phasor e_eq;
    Complex z_eq;
};

/// Z = V_b / (I_Fb - I_b), E = I_b Z + V_b with both currents flowing out of
/// the equivalent source toward the boundary.
TheveninEquivalent thevenin_from_measurements(Complex v_b, Complex i_b, Complex i_fb);

/// Linear phasor network: nodal admittances, Norton injections and
/// voltage-fixed nodes.
struct PhasorNetwork {
    std::vector<std::string> ids;
    Eigen::MatrixXcd y;
    Eigen::VectorXcd injection;
    std::vector<std::optional<Complex>> fixed;

    [[nodiscard]] int index_of(const std::string& id) const;
};

/// Node voltages with every fixed node held.
Eigen::VectorXcd solve_phasor_network(const PhasorNetwork& net);
/// Current flowing from the network into an external connection holding
/// `node` at `v_node`.
Complex node_current(const PhasorNetwork& net, int node, Complex v_node);
/// Current flowing from the network into a solid fault at `node`.
Complex fault_current(const PhasorNetwork& net, int node);

/// The main system seen from `boundary` with that region disconnected: other
/// regions and loads as admittances at their operating point, classical
/// machines as E' behind x'd, ideal sources held.
PhasorNetwork main_phasor_network(const CaseFile& c, const OperatingPoint& op, const std::string& boundary);

TheveninEquivalent thevenin_extract(const CaseFile& c, const OperatingPoint& op, const std::string& boundary);

struct RampConfig {
    double dt = 50e-6;
    double t_ramp = 0.5;
    double max_duration = 10.0;
    double consistency_tol = 1e-6;
};

/// Number of steps per fundamental cycle; InvalidConfig unless integral.
int samples_per_cycle(double frequency_hz, double dt);

struct RampResult {
    Snapshot snapshot;
    emt::EmtNetwork network;  // region plus the attached Thevenin source
};

/// Name of the Thevenin source node / element attached at `boundary`.
std::string thevenin_id(const std::string& boundary);

/// Attaches the equivalent at the boundary, ramps it from zero state and
/// captures the first steady, phasor-consistent state.
RampResult ramp_to_snapshot(const emt::EmtNetwork& region, const std::string& boundary,
                            const TheveninEquivalent& th, const RampConfig& cfg);

/// Continues an isolated region to `target_step` and recaptures it.
Snapshot advance_snapshot(const Snapshot& s, const emt::EmtNetwork& net, std::int64_t target_step);

struct SpliceSchedule {
    std::string reference;
    std::int64_t t_ref_steps = 0;
    std::int64_t period_steps = 0;
    int multiple = 2;  // splice offsets are multiples of multiple * T
    std::map<std::string, std::int64_t> t_adj_steps;
    std::map<std::string, std::int64_t> k;
};

SpliceSchedule splice_schedule(const std::map<std::string, std::int64_t>& ready_steps, std::int64_t period_steps,
                               int multiple = 2);

struct SpliceResult {
    Snapshot snapshot;
    std::map<std::string, double> deviation;  // per boundary bus
    double max_deviation = 0.0;
};

/// Merges region snapshots into one state of `full`. The first snapshot
/// holding a node wins, so the main system should come first. With a
/// schedule every snapshot must sit at its scheduled step.
SpliceResult splice(const std::vector<Snapshot>& snaps, const SpliceSchedule* schedule, const emt::EmtNetwork& full,
                    const std::vector<std::string>& boundary_nodes);

}  // namespace emtgis
