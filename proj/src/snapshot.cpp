#include "emtgis/snapshot.hpp"
#include "emtgis/error.hpp"
#include "emtgis/grbc.hpp"
#include "emtgis/grbc_internal.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <unordered_map>

namespace emtgis {

namespace {

Complex load_of(const BusRecord& b) { return {b.p_load, b.q_load}; }

/// E' = V + j x'd I with I the machine's output current.
Complex machine_emf(Complex v, Complex s_gen, double xd) {
    const Complex i = std::conj(s_gen / v);
    return v + Complex(0.0, xd) * i;
}

void add_generation(OperatingPoint& op, const PowerFlowSolution& sol, const std::vector<BusRecord>& buses,
                    const std::vector<MachineRecord>& machines) {
    for (const auto& m : machines) {
        const auto it = std::find_if(buses.begin(), buses.end(), [&](const BusRecord& b) { return b.id == m.bus; });
        if (it == buses.end() || sol.index_of(m.bus) < 0) {
            continue;
        }
        op.generation[m.bus] = sol.injection_at(m.bus) + load_of(*it);
    }
}

void add_voltages(OperatingPoint& op, const PowerFlowSolution& sol) {
    for (std::size_t i = 0; i < sol.bus_ids.size(); ++i) {
        op.voltage[sol.bus_ids[i]] = sol.voltage[i].to_complex();
    }
}

const Complex& at(const std::map<std::string, Complex>& m, const std::string& key, const char* what) {
    auto it = m.find(key);
    if (it == m.end()) {
        throw Error(ErrorCode::MissingComponentModel, std::string("no operating ") + what + " for '" + key + "'");
    }
    return it->second;
}

class NetworkBuilder {
public:
    NetworkBuilder(const OperatingPoint& op, double frequency_hz) : op_(op) {
        out_.net.frequency_hz = frequency_hz;
        w_ = out_.net.omega();
    }

    int node(const std::string& id) {
        const int idx = out_.net.add_node(id);
        if (out_.node_phasor.find(id) == out_.node_phasor.end()) {
            out_.node_phasor[id] = at(op_.voltage, id, "voltage");
        }
        return idx;
    }

    // Admittance y from node a to ground as a resistor and a reactive element.
    void shunt(const std::string& id, int a, Complex y) {
        if (y.real() != 0.0) {
            add(id + ":g", emt::ElementKind::Resistor, a, emt::kGround, 1.0 / y.real(), 0.0, 0.0);
        }
        reactive_shunt(id + ":b", a, y.imag());
    }

    void reactive_shunt(const std::string& id, int a, double b) {
        if (b > 0.0) {
            add(id, emt::ElementKind::Capacitor, a, emt::kGround, 0.0, 0.0, b / w_);
        } else if (b < 0.0) {
            add(id, emt::ElementKind::Inductor, a, emt::kGround, 0.0, -1.0 / (b * w_), 0.0);
        }
    }

    void bus_devices(const BusRecord& b) {
        const int n = node(b.id);
        const Complex v = out_.node_phasor.at(b.id);
        const Complex s = load_of(b);
        if (s != Complex(0.0, 0.0)) {
            shunt("ld:" + b.id, n, std::conj(s) / std::norm(v));
        }
        if (b.shunt_g != 0.0 || b.shunt_b != 0.0) {
            shunt("sh:" + b.id, n, Complex(b.shunt_g, b.shunt_b));
        }
    }

    void branch(const BranchRecord& br, const std::string& id) {
        if (br.tap != 1.0) {
            throw Error(ErrorCode::MissingComponentModel, "branch '" + id + "': off-nominal taps have no EMT model");
        }
        const int a = node(br.from);
        const int b = node(br.to);
        if (br.x > 0.0) {
            add(id, emt::ElementKind::Inductor, a, b, br.r, br.x / w_, 0.0);
        } else if (br.x == 0.0) {
            add(id, emt::ElementKind::Resistor, a, b, br.r, 0.0, 0.0);
        } else {
            throw Error(ErrorCode::MissingComponentModel, "branch '" + id + "': series capacitance has no EMT model");
        }
        reactive_shunt(id + ":bf", a, br.b_half);
        reactive_shunt(id + ":bt", b, br.b_half);
    }

    void machine(const MachineRecord& m) {
        const int n = node(m.bus);
        const Complex v = out_.node_phasor.at(m.bus);
        const std::string id = "gen:" + m.bus;
        if (m.kind == MachineKind::IdealSource) {
            out_.net.sources.push_back({id, n, Phasor::from_complex(v), true});
            return;
        }
        const Complex s = at(op_.generation, m.bus, "generation");
        const Complex e = machine_emf(v, s, m.xd_transient);
        const Complex i = std::conj(s / v);
        const std::string emf = "emf:" + m.bus;
        const int in = out_.net.add_node(emf);
        out_.node_phasor[emf] = e;
        const int el = add("xd:" + m.bus, emt::ElementKind::Inductor, in, n, 0.0, m.xd_transient / w_, 0.0);
        emt::Machine mc;
        mc.id = id;
        mc.internal_node = in;
        mc.element = el;
        mc.e_mag = std::abs(e);
        mc.pm = (e * std::conj(i)).real();
        mc.inertia_h = m.inertia_h;
        mc.damping = m.damping;
        out_.net.machines.push_back(mc);
    }

    void region(const GrbcDeclaration& g) {
        node(g.boundary_bus);
        if (std::find(out_.boundary_nodes.begin(), out_.boundary_nodes.end(), g.boundary_bus) ==
            out_.boundary_nodes.end()) {
            out_.boundary_nodes.push_back(g.boundary_bus);
        }
        if (const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload)) {
            for (const auto& b : wb->buses) {
                bus_devices(b);
            }
            for (std::size_t k = 0; k < wb->branches.size(); ++k) {
                const auto& br = wb->branches[k];
                branch(br, "br:" + g.name + ":" + br.from + "-" + br.to + "#" + std::to_string(k));
            }
            for (const auto& m : wb->machines) {
                machine(m);
            }
            return;
        }
        emt::PqDevice dev;
        dev.id = "grbc:" + g.name;
        dev.node = out_.net.node_index(g.boundary_bus);
        dev.response = [g](const Phasor& v) {
            const grbc::GrbcEvaluation e = grbc::evaluate(g, v);
            return std::pair<double, double>{e.p_tilde, e.q_tilde};
        };
        if (const auto* sc = std::get_if<ScriptedPayload>(&g.payload)) {
            dev.tau = sc->tau_s;
        } else if (const auto* hv = std::get_if<HvdcPayload>(&g.payload)) {
            dev.tau = hv->tau_s;
        }
        out_.net.pq_devices.push_back(std::move(dev));
    }

    void main_system(const CaseFile& c) {
        for (const auto& b : c.buses) {
            bus_devices(b);
            if (b.kind == BusKind::Boundary &&
                std::find(out_.boundary_nodes.begin(), out_.boundary_nodes.end(), b.id) == out_.boundary_nodes.end()) {
                out_.boundary_nodes.push_back(b.id);
            }
        }
        for (std::size_t k = 0; k < c.branches.size(); ++k) {
            const auto& br = c.branches[k];
            branch(br, "br:" + br.from + "-" + br.to + "#" + std::to_string(k));
        }
        for (const auto& m : c.machines) {
            machine(m);
        }
    }

    BuiltNetwork take() { return std::move(out_); }

private:
    int add(const std::string& id, emt::ElementKind kind, int a, int b, double r, double l, double cap) {
        emt::Element e;
        e.id = id;
        e.kind = kind;
        e.a = a;
        e.b = b;
        e.r = r;
        e.l = l;
        e.c = cap;
        return out_.net.add_element(std::move(e));
    }

    const OperatingPoint& op_;
    BuiltNetwork out_;
    double w_ = 0.0;
};

std::pair<double, double> pq_steady(const emt::PqDevice& dev, const Phasor& v) {
    if (!(v.magnitude() > 1e-9)) {
        return {0.0, 0.0};
    }
    auto s = dev.response(v);
    if (v.magnitude() < dev.v_knee) {
        const double k = (v.magnitude() / dev.v_knee) * (v.magnitude() / dev.v_knee);
        s.first *= k;
        s.second *= k;
    }
    return s;
}

Complex element_admittance(const emt::Element& e, double w) {
    switch (e.kind) {
    case emt::ElementKind::Resistor: return {1.0 / e.r, 0.0};
    case emt::ElementKind::Inductor: return 1.0 / Complex(e.r, w * e.l);
    case emt::ElementKind::Capacitor: return {0.0, w * e.c};
    case emt::ElementKind::Source: break;
    }
    throw Error(ErrorCode::MissingComponentModel, "element '" + e.id + "' has no phasor model");
}

double instantaneous(Complex x, double w, double t, int phase) {
    return kSqrt2 * std::abs(x) * std::cos(w * t + std::arg(x) + emt::phase_shift(phase));
}

std::unordered_map<std::string, std::size_t> index_map(const std::vector<std::string>& names) {
    std::unordered_map<std::string, std::size_t> m;
    for (std::size_t i = 0; i < names.size(); ++i) {
        m.emplace(names[i], i);
    }
    return m;
}

}  // namespace

OperatingPoint operating_point(const CaseFile& c, const PowerFlowSolution& pf) {
    if (!pf.converged) {
        throw Error(ErrorCode::NotConverged, "power flow did not converge");
    }
    OperatingPoint op;
    add_voltages(op, pf);
    add_generation(op, pf, c.buses, c.machines);
    for (const auto& g : c.grbcs) {
        if (const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload)) {
            add_generation(op, pf, wb->buses, wb->machines);
        }
        if (pf.index_of(g.boundary_bus) >= 0) {
            const auto e = grbc::evaluate(g, pf.voltage_at(g.boundary_bus));
            op.grbc_injection[g.boundary_bus] += Complex(e.p_tilde, e.q_tilde);
        }
    }
    return op;
}

OperatingPoint operating_point(const CaseFile& c, const BoundaryState& boundary, const JfngConfig& cfg) {
    const Eigen::Index n = boundary.n();
    std::map<std::string, Phasor> vb;
    for (Eigen::Index i = 0; i < n; ++i) {
        vb[boundary.bus_ids[static_cast<std::size_t>(i)]] = Phasor(boundary.x(i), boundary.x(n + i));
    }
    const PowerFlowSolution main = solve_main(c, vb, {cfg.pf_tol, 50});
    OperatingPoint op;
    add_voltages(op, main);
    add_generation(op, main, c.buses, c.machines);
    for (Eigen::Index i = 0; i < n; ++i) {
        op.grbc_injection[boundary.bus_ids[static_cast<std::size_t>(i)]] =
            Complex(boundary.p_tilde(i), boundary.q_tilde(i));
    }
    for (const auto& g : c.grbcs) {
        if (const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload)) {
            const PowerFlowSolution sol = grbc::solve_whitebox(g, *wb, vb.at(g.boundary_bus));
            for (std::size_t i = 1; i < sol.bus_ids.size(); ++i) {
                op.voltage[sol.bus_ids[i]] = sol.voltage[i].to_complex();
            }
            add_generation(op, sol, wb->buses, wb->machines);
        }
    }
    return op;
}

BuiltNetwork build_main_network(const CaseFile& c, const OperatingPoint& op) {
    NetworkBuilder b(op, c.frequency_hz);
    b.main_system(c);
    return b.take();
}

BuiltNetwork build_grbc_network(const CaseFile& c, const GrbcDeclaration& g, const OperatingPoint& op) {
    NetworkBuilder b(op, c.frequency_hz);
    b.region(g);
    return b.take();
}

BuiltNetwork build_full_network(const CaseFile& c, const OperatingPoint& op) {
    NetworkBuilder b(op, c.frequency_hz);
    b.main_system(c);
    for (const auto& g : c.grbcs) {
        b.region(g);
    }
    return b.take();
}

std::string_view to_string(Provenance p) {
    switch (p) {
    case Provenance::PhasorInit: return "PhasorInit";
    case Provenance::RampInit: return "RampInit";
    case Provenance::Spliced: return "Spliced";
    }
    return "?";
}

Snapshot make_snapshot(const emt::EmtNetwork& net, emt::EmtState state, std::string subsystem, Provenance p) {
    Snapshot s;
    s.subsystem = std::move(subsystem);
    s.provenance = p;
    s.nodes = net.nodes;
    for (const auto& e : net.elements) s.elements.push_back(e.id);
    for (const auto& m : net.machines) s.machines.push_back(m.id);
    for (const auto& d : net.pq_devices) s.pq_devices.push_back(d.id);
    s.state = std::move(state);
    return s;
}

emt::EmtState bind_snapshot(const Snapshot& s, const emt::EmtNetwork& net) {
    auto fail = [](const std::string& what) {
        throw Error(ErrorCode::IncompatibleSnapshot, "snapshot does not match network: " + what);
    };
    if (s.nodes.size() != net.nodes.size() || s.elements.size() != net.elements.size() ||
        s.machines.size() != net.machines.size() || s.pq_devices.size() != net.pq_devices.size()) {
        fail("component counts differ");
    }
    emt::EmtState st = emt::EmtState::zero(net, s.state.dt);
    st.step = s.state.step;
    const auto nodes = index_map(s.nodes);
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        auto it = nodes.find(net.nodes[i]);
        if (it == nodes.end()) fail("node '" + net.nodes[i] + "'");
        for (std::size_t k = 0; k < emt::kPhases; ++k) st.node_v[k][i] = s.state.node_v[k][it->second];
    }
    const auto elems = index_map(s.elements);
    for (std::size_t i = 0; i < net.elements.size(); ++i) {
        auto it = elems.find(net.elements[i].id);
        if (it == elems.end()) fail("element '" + net.elements[i].id + "'");
        for (std::size_t k = 0; k < emt::kPhases; ++k) {
            st.elem_v[k][i] = s.state.elem_v[k][it->second];
            st.elem_i[k][i] = s.state.elem_i[k][it->second];
        }
    }
    const auto machines = index_map(s.machines);
    for (std::size_t i = 0; i < net.machines.size(); ++i) {
        auto it = machines.find(net.machines[i].id);
        if (it == machines.end()) fail("machine '" + net.machines[i].id + "'");
        st.machines[i] = s.state.machines[it->second];
    }
    const auto pq = index_map(s.pq_devices);
    for (std::size_t i = 0; i < net.pq_devices.size(); ++i) {
        auto it = pq.find(net.pq_devices[i].id);
        if (it == pq.end()) fail("device '" + net.pq_devices[i].id + "'");
        st.pq[i] = s.state.pq[it->second];
    }
    return st;
}

double phasor_consistency(const Snapshot& s, double omega) {
    const auto nodes = index_map(s.nodes);
    const auto elems = index_map(s.elements);
    const double t = s.timestamp();
    double worst = 0.0;
    for (const auto& [bus, ph] : s.boundary) {
        auto n = nodes.find(bus);
        if (n != nodes.end()) {
            worst = std::max(worst, std::abs(s.state.node_v[0][n->second] - ph.v.instantaneous(omega, t, 0.0)));
        }
        auto e = elems.find(thevenin_id(bus));
        if (e != elems.end()) {
            worst = std::max(worst, std::abs(s.state.elem_i[0][e->second] - ph.i.instantaneous(omega, t, 0.0)));
        }
    }
    return worst;
}

emt::EmtState phasor_state(const BuiltNetwork& built, double dt, std::int64_t step) {
    const auto& net = built.net;
    const double w = net.omega();
    emt::EmtState st = emt::EmtState::zero(net, dt);
    st.step = step;
    const double t = st.time();
    std::vector<Complex> v(net.nodes.size());
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        v[i] = at(built.node_phasor, net.nodes[i], "node phasor");
        for (int k = 0; k < emt::kPhases; ++k) {
            st.node_v[static_cast<std::size_t>(k)][i] = instantaneous(v[i], w, t, k);
        }
    }
    for (std::size_t j = 0; j < net.elements.size(); ++j) {
        const auto& e = net.elements[j];
        const Complex va = e.a >= 0 ? v[static_cast<std::size_t>(e.a)] : Complex{};
        const Complex vb = e.b >= 0 ? v[static_cast<std::size_t>(e.b)] : Complex{};
        const Complex ve = va - vb;
        const Complex ie = element_admittance(e, w) * ve;
        for (int k = 0; k < emt::kPhases; ++k) {
            st.elem_v[static_cast<std::size_t>(k)][j] = instantaneous(ve, w, t, k);
            st.elem_i[static_cast<std::size_t>(k)][j] = instantaneous(ie, w, t, k);
        }
    }
    for (std::size_t m = 0; m < net.machines.size(); ++m) {
        st.machines[m].delta = std::arg(v[static_cast<std::size_t>(net.machines[m].internal_node)]);
        st.machines[m].omega = 1.0;
    }
    for (std::size_t d = 0; d < net.pq_devices.size(); ++d) {
        const auto& dev = net.pq_devices[d];
        const Complex vn = v[static_cast<std::size_t>(dev.node)];
        const auto s = pq_steady(dev, Phasor::from_complex(vn));
        st.pq[d] = {s.first, s.second, vn.real(), vn.imag()};
    }
    return st;
}

Snapshot phasor_init(const BuiltNetwork& built, const OperatingPoint& op, double dt, std::int64_t step,
                     const std::string& subsystem) {
    Snapshot s = make_snapshot(built.net, phasor_state(built, dt, step), subsystem, Provenance::PhasorInit);
    for (const auto& b : built.boundary_nodes) {
        const Complex v = at(op.voltage, b, "voltage");
        auto it = op.grbc_injection.find(b);
        const Complex s_in = it == op.grbc_injection.end() ? Complex{} : -it->second;
        s.boundary[b] = {Phasor::from_complex(v), Phasor::from_complex(std::conj(s_in / v))};
    }
    return s;
}

Snapshot phasor_init(const CaseFile& c, const PowerFlowSolution& pf, double dt, std::int64_t step) {
    const OperatingPoint op = operating_point(c, pf);
    return phasor_init(build_full_network(c, op), op, dt, step, "main");
}

// ---------------------------------------------------------------------------
// Thevenin equivalents
// ---------------------------------------------------------------------------

TheveninEquivalent thevenin_from_measurements(Complex v_b, Complex i_b, Complex i_fb) {
    const Complex delta = i_fb - i_b;
    if (!(std::abs(delta) > 1e-14 * std::max(1.0, std::abs(i_fb)))) {
        throw Error(ErrorCode::ZeroFaultCurrentDelta, "fault current equals the operating current");
    }
    TheveninEquivalent th;
    th.z_eq = v_b / delta;
    th.e_eq = Phasor::from_complex(i_b * th.z_eq + v_b);
    if (!(std::abs(th.z_eq) > 0.0)) {
        throw Error(ErrorCode::ZeroFaultCurrentDelta, "degenerate Thevenin impedance");
    }
    return th;
}

int PhasorNetwork::index_of(const std::string& id) const {
    auto it = std::find(ids.begin(), ids.end(), id);
    return it == ids.end() ? -1 : static_cast<int>(it - ids.begin());
}

Eigen::VectorXcd solve_phasor_network(const PhasorNetwork& net) {
    const auto n = static_cast<Eigen::Index>(net.ids.size());
    std::vector<Eigen::Index> free_idx;
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (net.fixed[static_cast<std::size_t>(i)]) {
            v(i) = *net.fixed[static_cast<std::size_t>(i)];
        } else {
            free_idx.push_back(i);
        }
    }
    const auto nf = static_cast<Eigen::Index>(free_idx.size());
    if (nf == 0) {
        return v;
    }
    Eigen::MatrixXcd yff(nf, nf);
    Eigen::VectorXcd rhs(nf);
    for (Eigen::Index r = 0; r < nf; ++r) {
        rhs(r) = net.injection(free_idx[static_cast<std::size_t>(r)]);
        for (Eigen::Index c = 0; c < n; ++c) {
            if (net.fixed[static_cast<std::size_t>(c)]) {
                rhs(r) -= net.y(free_idx[static_cast<std::size_t>(r)], c) * v(c);
            }
        }
        for (Eigen::Index c = 0; c < nf; ++c) {
            yff(r, c) = net.y(free_idx[static_cast<std::size_t>(r)], free_idx[static_cast<std::size_t>(c)]);
        }
    }
    Eigen::FullPivLU<Eigen::MatrixXcd> lu(yff);
    if (!lu.isInvertible()) {
        throw Error(ErrorCode::SingularNetwork, "phasor network is singular");
    }
    const Eigen::VectorXcd vf = lu.solve(rhs);
    for (Eigen::Index r = 0; r < nf; ++r) {
        v(free_idx[static_cast<std::size_t>(r)]) = vf(r);
    }
    return v;
}

Complex node_current(const PhasorNetwork& net, int node, Complex v_node) {
    PhasorNetwork held = net;
    held.fixed[static_cast<std::size_t>(node)] = v_node;
    const Eigen::VectorXcd v = solve_phasor_network(held);
    // (Y V)_k - I_k is the current leaving node k into the network.
    return -((net.y.row(node) * v)(0) - net.injection(node));
}

Complex fault_current(const PhasorNetwork& net, int node) { return node_current(net, node, Complex(0.0, 0.0)); }

PhasorNetwork main_phasor_network(const CaseFile& c, const OperatingPoint& op, const std::string& boundary) {
    const AdmittanceMatrix y = assemble_admittance(c.buses, c.branches);
    PhasorNetwork net;
    net.ids = y.bus_ids;
    net.y = y.y;
    net.injection = Eigen::VectorXcd::Zero(static_cast<Eigen::Index>(net.ids.size()));
    net.fixed.assign(net.ids.size(), std::nullopt);
    for (const auto& b : c.buses) {
        const int i = net.index_of(b.id);
        const Complex v = at(op.voltage, b.id, "voltage");
        net.y(i, i) += std::conj(load_of(b)) / std::norm(v);
    }
    for (const auto& g : c.grbcs) {
        if (g.boundary_bus == boundary) {
            continue;
        }
        const int i = net.index_of(g.boundary_bus);
        const Complex v = at(op.voltage, g.boundary_bus, "voltage");
        net.y(i, i) += std::conj(-at(op.grbc_injection, g.boundary_bus, "region injection")) / std::norm(v);
    }
    for (const auto& m : c.machines) {
        const int i = net.index_of(m.bus);
        const Complex v = at(op.voltage, m.bus, "voltage");
        if (m.kind == MachineKind::IdealSource) {
            net.fixed[static_cast<std::size_t>(i)] = v;
            continue;
        }
        const Complex e = machine_emf(v, at(op.generation, m.bus, "generation"), m.xd_transient);
        const Complex ym = 1.0 / Complex(0.0, m.xd_transient);
        net.y(i, i) += ym;
        net.injection(i) += ym * e;
    }
    return net;
}

TheveninEquivalent thevenin_extract(const CaseFile& c, const OperatingPoint& op, const std::string& boundary) {
    const BusRecord* bus = c.find_bus(boundary);
    if (bus == nullptr || bus->kind != BusKind::Boundary) {
        throw Error(ErrorCode::UnknownTarget, "'" + boundary + "' is not a boundary bus");
    }
    const PhasorNetwork net = main_phasor_network(c, op, boundary);
    const Complex v_b = at(op.voltage, boundary, "voltage");
    // Steady current measured on the main side, so the pair is exact for the
    // linear network whatever the coordination residual.
    const int b = net.index_of(boundary);
    return thevenin_from_measurements(v_b, node_current(net, b, v_b), fault_current(net, b));
}

// ---------------------------------------------------------------------------
// Ramping behind the equivalent
// ---------------------------------------------------------------------------

int samples_per_cycle(double frequency_hz, double dt) {
    const double spc = 1.0 / (frequency_hz * dt);
    const double rounded = std::round(spc);
    if (!(dt > 0.0) || rounded < 4.0 || std::abs(spc - rounded) > 1e-9 * spc) {
        throw Error(ErrorCode::InvalidConfig, "the fundamental period must be an integral number of steps");
    }
    return static_cast<int>(rounded);
}

std::string thevenin_id(const std::string& boundary) { return "thev:" + boundary; }

namespace {

/// Trailing-cycle recorder of the boundary voltage and Thevenin current.
class BoundaryWindow {
public:
    BoundaryWindow(int node, int element, int spc) : node_(node), element_(element), spc_(spc) {}

    void push(const emt::EmtState& st) {
        v_.push_back(st.node_v[0][static_cast<std::size_t>(node_)]);
        if (element_ >= 0) i_.push_back(st.elem_i[0][static_cast<std::size_t>(element_)]);
        if (v_.size() > static_cast<std::size_t>(spc_)) v_.pop_front();
        if (i_.size() > static_cast<std::size_t>(spc_)) i_.pop_front();
    }

    [[nodiscard]] bool full() const { return v_.size() == static_cast<std::size_t>(spc_); }

    BoundaryPhasor phasors(const emt::EmtState& st, double w) const {
        const double t_first = static_cast<double>(st.step - spc_ + 1) * st.dt;
        BoundaryPhasor out;
        const std::vector<double> v(v_.begin(), v_.end());
        out.v = emt::fourier_phasor(v, v.size(), spc_, t_first, st.dt, w);
        if (element_ >= 0) {
            const std::vector<double> i(i_.begin(), i_.end());
            out.i = emt::fourier_phasor(i, i.size(), spc_, t_first, st.dt, w);
        }
        return out;
    }

private:
    int node_;
    int element_;
    int spc_;
    std::deque<double> v_;
    std::deque<double> i_;
};

}  // namespace

RampResult ramp_to_snapshot(const emt::EmtNetwork& region, const std::string& boundary,
                            const TheveninEquivalent& th, const RampConfig& cfg) {
    const int spc = samples_per_cycle(region.frequency_hz, cfg.dt);
    emt::EmtNetwork net = region;
    const int b = net.node_index(boundary);
    if (b < 0) {
        throw Error(ErrorCode::UnknownTarget, "region has no boundary node '" + boundary + "'");
    }
    const std::string id = thevenin_id(boundary);
    const int src = net.add_node(id);
    net.sources.push_back({id, src, th.e_eq, true});
    emt::Element z;
    z.id = id;
    z.a = src;
    z.b = b;
    const double w = net.omega();
    const double x = th.z_eq.imag();
    const double r = th.z_eq.real();
    if (r < 0.0 || x < -1e-12 * std::abs(th.z_eq)) {
        throw Error(ErrorCode::MissingComponentModel, "Thevenin impedance is not a passive R-L");
    }
    if (x > 1e-12 * std::abs(th.z_eq)) {
        z.kind = emt::ElementKind::Inductor;
        z.r = r;
        z.l = x / w;
    } else {
        z.kind = emt::ElementKind::Resistor;
        z.r = r;
    }
    const int zi = net.add_element(z);

    emt::Simulator sim(net, emt::EmtState::zero(net, cfg.dt));
    sim.set_ramp(emt::RampSpec{0.0, cfg.t_ramp});
    emt::SteadyStateDetector detector(2, spc);
    BoundaryWindow window(b, zi, spc);
    const auto max_steps = static_cast<std::int64_t>(std::llround(cfg.max_duration / cfg.dt));
    while (sim.state().step < max_steps) {
        sim.step();
        const auto& st = sim.state();
        window.push(st);
        detector.push({st.node_v[0][static_cast<std::size_t>(b)], st.elem_i[0][static_cast<std::size_t>(zi)]});
        if (!detector.steady() || !window.full()) {
            continue;
        }
        const BoundaryPhasor ph = window.phasors(st, w);
        const double t = st.time();
        const double err = std::max(std::abs(st.node_v[0][static_cast<std::size_t>(b)] - ph.v.instantaneous(w, t, 0.0)),
                                    std::abs(st.elem_i[0][static_cast<std::size_t>(zi)] - ph.i.instantaneous(w, t, 0.0)));
        if (err <= cfg.consistency_tol) {
            RampResult out{make_snapshot(net, st, boundary, Provenance::RampInit), net};
            out.snapshot.boundary[boundary] = ph;
            return out;
        }
    }
    throw Error(ErrorCode::SteadyStateTimeout,
                "region at '" + boundary + "' not steady within " + format_double(cfg.max_duration) + " s");
}

Snapshot advance_snapshot(const Snapshot& s, const emt::EmtNetwork& net, std::int64_t target_step) {
    if (target_step < s.state.step) {
        throw Error(ErrorCode::ScheduleViolation, "cannot advance a snapshot backwards in time");
    }
    const int spc = samples_per_cycle(net.frequency_hz, s.state.dt);
    emt::Simulator sim(net, bind_snapshot(s, net));
    std::vector<std::pair<std::string, BoundaryWindow>> windows;
    for (const auto& [bus, ph] : s.boundary) {
        windows.emplace_back(bus, BoundaryWindow(net.node_index(bus), net.element_index(thevenin_id(bus)), spc));
    }
    while (sim.state().step < target_step) {
        sim.step();
        for (auto& [bus, win] : windows) win.push(sim.state());
    }
    Snapshot out = make_snapshot(net, sim.state(), s.subsystem, s.provenance);
    out.boundary = s.boundary;
    for (const auto& [bus, win] : windows) {
        // Steady phasors are referenced to absolute time, so a window
        // shorter than a cycle keeps the previous estimate.
        if (win.full()) out.boundary[bus] = win.phasors(sim.state(), net.omega());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splicing
// ---------------------------------------------------------------------------

SpliceSchedule splice_schedule(const std::map<std::string, std::int64_t>& ready_steps, std::int64_t period_steps,
                               int multiple) {
    if (period_steps <= 0 || multiple <= 0) {
        throw Error(ErrorCode::InvalidParameter, "splice period must be positive");
    }
    SpliceSchedule s;
    s.period_steps = period_steps;
    s.multiple = multiple;
    if (ready_steps.empty()) {
        return s;
    }
    auto ref = ready_steps.begin();
    for (auto it = ready_steps.begin(); it != ready_steps.end(); ++it) {
        if (it->second < 0) {
            throw Error(ErrorCode::InvalidParameter, "ready time of '" + it->first + "' is negative");
        }
        if (it->second < ref->second) ref = it;
    }
    s.reference = ref->first;
    s.t_ref_steps = ref->second;
    const std::int64_t unit = period_steps * multiple;
    for (const auto& [name, ready] : ready_steps) {
        const std::int64_t k = (ready - s.t_ref_steps + unit - 1) / unit;
        s.k[name] = k;
        s.t_adj_steps[name] = s.t_ref_steps + k * unit;
    }
    return s;
}

SpliceResult splice(const std::vector<Snapshot>& snaps, const SpliceSchedule* schedule, const emt::EmtNetwork& full,
                    const std::vector<std::string>& boundary_nodes) {
    if (snaps.empty()) {
        throw Error(ErrorCode::TopologyMismatch, "nothing to splice");
    }
    if (schedule != nullptr) {
        for (const auto& s : snaps) {
            auto it = schedule->t_adj_steps.find(s.subsystem);
            if (it == schedule->t_adj_steps.end() || it->second != s.timestamp_steps()) {
                throw Error(ErrorCode::ScheduleViolation,
                            "snapshot '" + s.subsystem + "' is not at its scheduled splice step");
            }
        }
    }
    SpliceResult out;
    if (snaps.size() == 1) {
        out.snapshot = snaps.front();
        return out;
    }
    const double dt = snaps.front().state.dt;
    std::int64_t step = 0;
    for (const auto& s : snaps) {
        if (s.state.dt != dt) {
            throw Error(ErrorCode::TopologyMismatch, "snapshots use different time steps");
        }
        step = std::max(step, s.timestamp_steps());
    }
    struct Indexed {
        std::unordered_map<std::string, std::size_t> nodes, elements, machines, pq;
    };
    std::vector<Indexed> idx;
    for (const auto& s : snaps) {
        idx.push_back({index_map(s.nodes), index_map(s.elements), index_map(s.machines), index_map(s.pq_devices)});
    }
    auto locate = [&](auto member, const std::string& name, const char* what) {
        for (std::size_t k = 0; k < snaps.size(); ++k) {
            const auto& m = idx[k].*member;
            auto it = m.find(name);
            if (it != m.end()) return std::pair<std::size_t, std::size_t>{k, it->second};
        }
        throw Error(ErrorCode::TopologyMismatch, std::string("no snapshot holds ") + what + " '" + name + "'");
    };

    emt::EmtState st = emt::EmtState::zero(full, dt);
    st.step = step;
    for (std::size_t i = 0; i < full.nodes.size(); ++i) {
        const auto [k, j] = locate(&Indexed::nodes, full.nodes[i], "node");
        for (std::size_t p = 0; p < emt::kPhases; ++p) st.node_v[p][i] = snaps[k].state.node_v[p][j];
    }
    for (std::size_t i = 0; i < full.elements.size(); ++i) {
        const auto [k, j] = locate(&Indexed::elements, full.elements[i].id, "element");
        for (std::size_t p = 0; p < emt::kPhases; ++p) {
            st.elem_v[p][i] = snaps[k].state.elem_v[p][j];
            st.elem_i[p][i] = snaps[k].state.elem_i[p][j];
        }
    }
    for (std::size_t i = 0; i < full.machines.size(); ++i) {
        const auto [k, j] = locate(&Indexed::machines, full.machines[i].id, "machine");
        st.machines[i] = snaps[k].state.machines[j];
    }
    for (std::size_t i = 0; i < full.pq_devices.size(); ++i) {
        const auto [k, j] = locate(&Indexed::pq, full.pq_devices[i].id, "device");
        st.pq[i] = snaps[k].state.pq[j];
    }

    for (const auto& bus : boundary_nodes) {
        double dev = 0.0;
        std::optional<std::pair<std::size_t, std::size_t>> first;
        for (std::size_t k = 0; k < snaps.size(); ++k) {
            auto it = idx[k].nodes.find(bus);
            if (it == idx[k].nodes.end()) continue;
            if (!first) {
                first = {k, it->second};
                continue;
            }
            for (std::size_t p = 0; p < emt::kPhases; ++p) {
                dev = std::max(dev, std::abs(snaps[first->first].state.node_v[p][first->second] -
                                             snaps[k].state.node_v[p][it->second]));
            }
        }
        out.deviation[bus] = dev;
        out.max_deviation = std::max(out.max_deviation, dev);
    }

    out.snapshot = make_snapshot(full, std::move(st), "spliced", Provenance::Spliced);
    for (const auto& s : snaps) {
        for (const auto& [bus, ph] : s.boundary) out.snapshot.boundary.emplace(bus, ph);
    }
    return out;
}

}  // namespace emtgis
