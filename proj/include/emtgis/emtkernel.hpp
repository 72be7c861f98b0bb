#pragma once

// Desk-scale EMT kernel: trapezoidal companion models on a fixed step,
// nodal solution of three decoupled phase networks, ideal (optionally
// ramped) voltage sources, classical machines, PQ-controlled current
// injections for black-box subsystems, faults and waveform recording.

#include "emtgis/phasor.hpp"

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace emtgis::emt {

inline constexpr int kPhases = 3;
inline constexpr int kGround = -1;

/// Phase shift of phase k (a, b, c) in a positive-sequence set.
inline double phase_shift(int k) { return -2.0 * kPi * k / 3.0; }

enum class ElementKind { Resistor, Inductor, Capacitor, Source };

/// i(t) = g v(t) + h v(t - dt) + j i(t - dt)
struct CompanionModel {
    ElementKind kind = ElementKind::Resistor;
    double g_coef = 0.0;
    double h_coef = 0.0;
    double j_coef = 0.0;
};

/// Two-terminal element between nodes a and b (kGround for ground). An
/// Inductor may carry a series resistance `r`.
struct Element {
    std::string id;
    ElementKind kind = ElementKind::Resistor;
    int a = kGround;
    int b = kGround;
    double r = 0.0;
    double l = 0.0;
    double c = 0.0;
};

CompanionModel companion_coefficients(const Element& e, double dt);

/// Ideal three-phase voltage source prescribing a node.
struct VoltageSource {
    std::string id;
    int node = kGround;
    Phasor e;
    bool ramped = true;
};

/// Classical machine: EMF |E'| at rotor angle delta behind x'_d. The EMF
/// prescribes `internal_node`; `element` is the x'_d inductor from the
/// internal node to the terminal.
struct Machine {
    std::string id;
    int internal_node = kGround;
    int element = -1;
    double e_mag = 0.0;
    double pm = 0.0;
    double inertia_h = 1.0;
    double damping = 0.0;
    bool ramped = true;
};

/// Black-box current injection: each step the node voltage phasor is
/// measured from the three-phase space vector and low-pass filtered (tau_v),
/// the declared response at the filtered voltage gives the power injected
/// into the node, a first-order lag of time constant tau filters it, and the
/// injected current realises that power at the filtered voltage. Below
/// `v_knee` the power scales with |V|^2. A shunt conductance g_damp sits at
/// the node and is compensated at the filtered voltage, which keeps a node
/// fed only through inductors from ringing at the step rate.
struct PqDevice {
    std::string id;
    int node = kGround;
    std::function<std::pair<double, double>(const Phasor&)> response;
    double tau = 0.02;
    double tau_v = 0.01;
    double v_knee = 0.7;
    double g_damp = 1.0;
};

struct EmtNetwork {
    double frequency_hz = 50.0;
    std::vector<std::string> nodes;
    std::vector<Element> elements;
    std::vector<VoltageSource> sources;
    std::vector<Machine> machines;
    std::vector<PqDevice> pq_devices;

    [[nodiscard]] double omega() const { return 2.0 * kPi * frequency_hz; }
    int add_node(const std::string& name);
    [[nodiscard]] int node_index(const std::string& name) const;
    [[nodiscard]] int element_index(const std::string& id) const;
    int add_element(Element e);
};

struct MachineState {
    double delta = 0.0;
    double omega = 1.0;  // per-unit speed
};

struct PqState {
    double p_cmd = 0.0;
    double q_cmd = 0.0;
    double v_re = 0.0;  // filtered voltage phasor
    double v_im = 0.0;
};

/// Instantaneous state at time step * dt. Element (v, i) pairs are the
/// history values used by the next step.
struct EmtState {
    std::int64_t step = 0;
    double dt = 0.0;
    std::array<std::vector<double>, kPhases> node_v;
    std::array<std::vector<double>, kPhases> elem_v;
    std::array<std::vector<double>, kPhases> elem_i;
    std::vector<MachineState> machines;
    std::vector<PqState> pq;

    [[nodiscard]] double time() const { return static_cast<double>(step) * dt; }
    static EmtState zero(const EmtNetwork& net, double dt);
};

/// 0 for t <= 0, t / t_ramp inside the ramp, 1 afterwards.
double ramp_profile(double t, double t_ramp);

struct RampSpec {
    double t_start = 0.0;
    double t_ramp = 0.5;
};

/// Fault to ground on all three phases through r_fault; an infinite
/// r_fault leaves the network unchanged.
enum class FaultKind { ThreePhaseToGround };
EmtNetwork apply_fault(const EmtNetwork& net, const std::string& bus, FaultKind kind, double r_fault);
EmtNetwork clear_fault(const EmtNetwork& net, const std::string& bus);

/// Voltage phasor (RMS) of a node from its three-phase space vector.
Phasor measure_phasor(const EmtState& st, int node, double omega);

class Simulator {
public:
    Simulator(EmtNetwork net, EmtState init);

    void set_ramp(std::optional<RampSpec> ramp) { ramp_ = ramp; }
    void set_network(EmtNetwork net);
    void step();

    [[nodiscard]] const EmtState& state() const noexcept { return state_; }
    [[nodiscard]] const EmtNetwork& network() const noexcept { return net_; }
    [[nodiscard]] double ramp_scale(double t) const;
    [[nodiscard]] double stored_energy() const;

private:
    void factorize();

    EmtNetwork net_;
    EmtState state_;
    std::optional<RampSpec> ramp_;
    std::vector<CompanionModel> companions_;
    std::vector<int> unknown_of_node_;  // -1 for prescribed nodes
    std::vector<int> unknown_nodes_;
    std::vector<int> prescribed_nodes_;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
    Eigen::MatrixXd g_uk_;
    std::vector<int> source_of_node_;   // prescribed node -> source index or -(machine + 2)
};

/// Probe address: "v:<node>", "i:<element>", "speed:<machine>", "delta:<machine>"
/// with optional ":a"/":b"/":c" phase suffix (default a).
struct Probe {
    enum class Kind { NodeVoltage, ElementCurrent, MachineSpeed, MachineAngle };
    std::string id;
    Kind kind = Kind::NodeVoltage;
    int index = 0;
    int phase = 0;
};

Probe parse_probe(const EmtNetwork& net, const std::string& id);
double read_probe(const Probe& probe, const EmtState& st);

struct Waveform {
    std::string probe;
    double t0 = 0.0;
    double dt = 0.0;
    std::vector<double> samples;

    [[nodiscard]] double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
};

struct Event {
    enum class Kind { Fault, ClearFault };
    double time = 0.0;
    Kind kind = Kind::Fault;
    std::string target;
    double r_fault = 0.0;
};

struct SimConfig {
    double dt = 20e-6;
    double duration = 0.0;
    std::vector<std::string> record;
    std::vector<Event> events;
    std::optional<RampSpec> ramp;

    void validate() const;
};

struct RunResult {
    std::vector<Waveform> waveforms;
    EmtState final_state;
};

/// Steps from `init` (zero state when null) for cfg.duration, applying
/// events on the step grid and recording probes (initial sample included).
RunResult run(const EmtNetwork& net, const EmtState* init, const SimConfig& cfg);

/// Cycle-RMS steady-state detector: steady once every probe's RMS over a
/// full cycle changed by less than `rel_tol` for `cycles` consecutive cycles.
class SteadyStateDetector {
public:
    SteadyStateDetector(std::size_t n_probes, int samples_per_cycle, double rel_tol = 5e-4, int cycles = 3);

    bool push(const std::vector<double>& values);
    [[nodiscard]] bool steady() const noexcept { return steady_; }
    [[nodiscard]] const std::vector<double>& last_rms() const noexcept { return rms_; }
    void reset();

private:
    int samples_per_cycle_;
    double rel_tol_;
    int cycles_;
    std::vector<double> sumsq_;
    std::vector<double> rms_;
    int count_ = 0;
    int good_ = 0;
    int completed_ = 0;
    bool steady_ = false;
};

/// RMS of each full cycle of a waveform.
std::vector<double> cycle_rms(const Waveform& w, int samples_per_cycle);

/// Single-frequency Fourier phasor (RMS) of samples [end - samples_per_cycle, end),
/// where sample `end - samples_per_cycle` is taken at time t_first.
Phasor fourier_phasor(const std::vector<double>& samples, std::size_t end, int samples_per_cycle, double t_first,
                      double dt, double omega);

// Waveform export: CSV (time + one column per probe) and the "EMTW" binary
// record (magic, u16 version, probe table, little-endian f64 samples).
void write_waveforms_csv(const std::vector<Waveform>& waves, std::ostream& out);
void write_waveforms_binary(const std::vector<Waveform>& waves, std::ostream& out);
std::vector<Waveform> read_waveforms_binary(std::istream& in);

}  // namespace emtgis::emt
