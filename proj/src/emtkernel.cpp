#include "emtgis/emtkernel.hpp"
#include "emtgis/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace emtgis::emt {

int EmtNetwork::add_node(const std::string& name) {
    const int existing = node_index(name);
    if (existing >= 0) {
        return existing;
    }
    nodes.push_back(name);
    return static_cast<int>(nodes.size()) - 1;
}

int EmtNetwork::node_index(const std::string& name) const {
    auto it = std::find(nodes.begin(), nodes.end(), name);
    return it == nodes.end() ? -1 : static_cast<int>(it - nodes.begin());
}

int EmtNetwork::element_index(const std::string& id) const {
    auto it = std::find_if(elements.begin(), elements.end(), [&](const Element& e) { return e.id == id; });
    return it == elements.end() ? -1 : static_cast<int>(it - elements.begin());
}

int EmtNetwork::add_element(Element e) {
    elements.push_back(std::move(e));
    return static_cast<int>(elements.size()) - 1;
}

CompanionModel companion_coefficients(const Element& e, double dt) {
    if (!(dt > 0.0)) {
        throw Error(ErrorCode::InvalidParameter, "time step must be positive");
    }
    CompanionModel cm;
    cm.kind = e.kind;
    switch (e.kind) {
    case ElementKind::Resistor:
        if (!(e.r != 0.0) || !std::isfinite(e.r)) {
            throw Error(ErrorCode::InvalidParameter, "resistor '" + e.id + "' needs a finite nonzero R");
        }
        cm.g_coef = 1.0 / e.r;
        break;
    case ElementKind::Inductor: {
        if (!(e.l != 0.0) || !std::isfinite(e.l) || e.r < 0.0) {
            throw Error(ErrorCode::InvalidParameter, "inductor '" + e.id + "' needs finite nonzero L and R >= 0");
        }
        // v = R i + L di/dt under the trapezoidal rule.
        const double k = 2.0 * e.l / dt;
        cm.g_coef = 1.0 / (e.r + k);
        cm.h_coef = cm.g_coef;
        cm.j_coef = cm.g_coef * (k - e.r);
        break;
    }
    case ElementKind::Capacitor:
        if (!(e.c != 0.0) || !std::isfinite(e.c)) {
            throw Error(ErrorCode::InvalidParameter, "capacitor '" + e.id + "' needs finite nonzero C");
        }
        cm.g_coef = 2.0 * e.c / dt;
        cm.h_coef = -cm.g_coef;
        cm.j_coef = -1.0;
        break;
    case ElementKind::Source:
        break;
    }
    return cm;
}

EmtState EmtState::zero(const EmtNetwork& net, double dt) {
    EmtState st;
    st.dt = dt;
    for (int k = 0; k < kPhases; ++k) {
        st.node_v[static_cast<std::size_t>(k)].assign(net.nodes.size(), 0.0);
        st.elem_v[static_cast<std::size_t>(k)].assign(net.elements.size(), 0.0);
        st.elem_i[static_cast<std::size_t>(k)].assign(net.elements.size(), 0.0);
    }
    st.machines.assign(net.machines.size(), MachineState{});
    st.pq.assign(net.pq_devices.size(), PqState{});
    return st;
}

double ramp_profile(double t, double t_ramp) {
    if (!(t_ramp > 0.0)) {
        throw Error(ErrorCode::InvalidParameter, "ramp time must be positive");
    }
    if (t <= 0.0) {
        return 0.0;
    }
    if (t >= t_ramp) {
        return 1.0;
    }
    return t / t_ramp;
}

EmtNetwork apply_fault(const EmtNetwork& net, const std::string& bus, FaultKind, double r_fault) {
    const int node = net.node_index(bus);
    if (node < 0) {
        throw Error(ErrorCode::UnknownTarget, "fault at unknown bus '" + bus + "'");
    }
    EmtNetwork out = net;
    if (std::isinf(r_fault)) {
        return out;
    }
    if (!(r_fault > 0.0)) {
        throw Error(ErrorCode::InvalidParameter, "fault resistance must be positive");
    }
    Element e;
    e.id = "fault:" + bus;
    e.kind = ElementKind::Resistor;
    e.a = node;
    e.r = r_fault;
    const int existing = out.element_index(e.id);
    if (existing >= 0) {
        out.elements[static_cast<std::size_t>(existing)] = e;
    } else {
        out.add_element(e);
    }
    return out;
}

EmtNetwork clear_fault(const EmtNetwork& net, const std::string& bus) {
    EmtNetwork out = net;
    const int idx = out.element_index("fault:" + bus);
    if (idx < 0) {
        throw Error(ErrorCode::UnknownTarget, "no fault to clear at '" + bus + "'");
    }
    out.elements.erase(out.elements.begin() + idx);
    return out;
}

Phasor measure_phasor(const EmtState& st, int node, double omega) {
    const auto n = static_cast<std::size_t>(node);
    const Complex a = std::polar(1.0, 2.0 * kPi / 3.0);
    const Complex s = (2.0 / 3.0) * (st.node_v[0][n] + a * st.node_v[1][n] + a * a * st.node_v[2][n]);
    return Phasor::from_complex(s * std::polar(1.0, -omega * st.time()) / kSqrt2);
}

// ---------------------------------------------------------------------------
// Simulator
// ---------------------------------------------------------------------------

Simulator::Simulator(EmtNetwork net, EmtState init) : net_(std::move(net)), state_(std::move(init)) {
    const auto nn = net_.nodes.size();
    const auto ne = net_.elements.size();
    for (int k = 0; k < kPhases; ++k) {
        if (state_.node_v[static_cast<std::size_t>(k)].size() != nn ||
            state_.elem_v[static_cast<std::size_t>(k)].size() != ne ||
            state_.elem_i[static_cast<std::size_t>(k)].size() != ne) {
            throw Error(ErrorCode::IncompatibleSnapshot, "state does not match network topology");
        }
    }
    if (state_.machines.size() != net_.machines.size() || state_.pq.size() != net_.pq_devices.size()) {
        throw Error(ErrorCode::IncompatibleSnapshot, "state does not match network devices");
    }
    factorize();
}

void Simulator::set_network(EmtNetwork net) {
    EmtState remapped = EmtState::zero(net, state_.dt);
    remapped.step = state_.step;
    for (std::size_t i = 0; i < net.nodes.size(); ++i) {
        const int old = net_.node_index(net.nodes[i]);
        if (old >= 0) {
            for (std::size_t k = 0; k < kPhases; ++k) {
                remapped.node_v[k][i] = state_.node_v[k][static_cast<std::size_t>(old)];
            }
        }
    }
    for (std::size_t i = 0; i < net.elements.size(); ++i) {
        const int old = net_.element_index(net.elements[i].id);
        if (old >= 0) {
            for (std::size_t k = 0; k < kPhases; ++k) {
                remapped.elem_v[k][i] = state_.elem_v[k][static_cast<std::size_t>(old)];
                remapped.elem_i[k][i] = state_.elem_i[k][static_cast<std::size_t>(old)];
            }
        }
    }
    for (std::size_t i = 0; i < net.machines.size(); ++i) {
        for (std::size_t j = 0; j < net_.machines.size(); ++j) {
            if (net_.machines[j].id == net.machines[i].id) {
                remapped.machines[i] = state_.machines[j];
            }
        }
    }
    for (std::size_t i = 0; i < net.pq_devices.size(); ++i) {
        for (std::size_t j = 0; j < net_.pq_devices.size(); ++j) {
            if (net_.pq_devices[j].id == net.pq_devices[i].id) {
                remapped.pq[i] = state_.pq[j];
            }
        }
    }
    net_ = std::move(net);
    state_ = std::move(remapped);
    factorize();
}

void Simulator::factorize() {
    const int nn = static_cast<int>(net_.nodes.size());
    companions_.clear();
    for (const auto& e : net_.elements) {
        companions_.push_back(companion_coefficients(e, state_.dt));
    }
    source_of_node_.assign(static_cast<std::size_t>(nn), std::numeric_limits<int>::min());
    for (std::size_t s = 0; s < net_.sources.size(); ++s) {
        source_of_node_[static_cast<std::size_t>(net_.sources[s].node)] = static_cast<int>(s);
    }
    for (std::size_t m = 0; m < net_.machines.size(); ++m) {
        source_of_node_[static_cast<std::size_t>(net_.machines[m].internal_node)] = -static_cast<int>(m) - 2;
    }
    unknown_of_node_.assign(static_cast<std::size_t>(nn), -1);
    unknown_nodes_.clear();
    prescribed_nodes_.clear();
    for (int i = 0; i < nn; ++i) {
        if (source_of_node_[static_cast<std::size_t>(i)] == std::numeric_limits<int>::min()) {
            unknown_of_node_[static_cast<std::size_t>(i)] = static_cast<int>(unknown_nodes_.size());
            unknown_nodes_.push_back(i);
        } else {
            prescribed_nodes_.push_back(i);
        }
    }
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(nn, nn);
    for (std::size_t k = 0; k < net_.elements.size(); ++k) {
        const auto& e = net_.elements[k];
        const double gc = companions_[k].g_coef;
        if (e.a >= 0) g(e.a, e.a) += gc;
        if (e.b >= 0) g(e.b, e.b) += gc;
        if (e.a >= 0 && e.b >= 0) {
            g(e.a, e.b) -= gc;
            g(e.b, e.a) -= gc;
        }
    }
    for (const auto& dev : net_.pq_devices) {
        if (dev.node >= 0) g(dev.node, dev.node) += dev.g_damp;
    }
    const auto nu = static_cast<Eigen::Index>(unknown_nodes_.size());
    const auto np = static_cast<Eigen::Index>(prescribed_nodes_.size());
    Eigen::MatrixXd guu(nu, nu);
    g_uk_.resize(nu, np);
    for (Eigen::Index r = 0; r < nu; ++r) {
        for (Eigen::Index c = 0; c < nu; ++c) {
            guu(r, c) = g(unknown_nodes_[static_cast<std::size_t>(r)], unknown_nodes_[static_cast<std::size_t>(c)]);
        }
        for (Eigen::Index c = 0; c < np; ++c) {
            g_uk_(r, c) = g(unknown_nodes_[static_cast<std::size_t>(r)], prescribed_nodes_[static_cast<std::size_t>(c)]);
        }
    }
    if (nu > 0) {
        lu_.compute(guu);
        if (!(lu_.rcond() > 1e-14)) {
            throw Error(ErrorCode::SingularConductance, "nodal conductance matrix is singular");
        }
    }
}

double Simulator::ramp_scale(double t) const {
    return ramp_ ? ramp_profile(t - ramp_->t_start, ramp_->t_ramp) : 1.0;
}

double Simulator::stored_energy() const {
    double e = 0.0;
    for (std::size_t k = 0; k < net_.elements.size(); ++k) {
        const auto& el = net_.elements[k];
        for (std::size_t p = 0; p < kPhases; ++p) {
            if (el.kind == ElementKind::Inductor) {
                e += 0.5 * el.l * state_.elem_i[p][k] * state_.elem_i[p][k];
            } else if (el.kind == ElementKind::Capacitor) {
                e += 0.5 * el.c * state_.elem_v[p][k] * state_.elem_v[p][k];
            }
        }
    }
    return e;
}

void Simulator::step() {
    const double w = net_.omega();
    const double dt = state_.dt;
    const double t_next = static_cast<double>(state_.step + 1) * dt;
    const double r = ramp_scale(t_next);
    const auto nn = net_.nodes.size();
    const auto ne = net_.elements.size();

    // Prescribed node voltages at t_next.
    const auto np = static_cast<Eigen::Index>(prescribed_nodes_.size());
    Eigen::MatrixXd vk(np, kPhases);
    for (Eigen::Index c = 0; c < np; ++c) {
        const int tag = source_of_node_[static_cast<std::size_t>(prescribed_nodes_[static_cast<std::size_t>(c)])];
        for (int p = 0; p < kPhases; ++p) {
            if (tag >= 0) {
                const auto& s = net_.sources[static_cast<std::size_t>(tag)];
                vk(c, p) = (s.ramped ? r : 1.0) * s.e.instantaneous(w, t_next, phase_shift(p));
            } else {
                const auto m = static_cast<std::size_t>(-tag - 2);
                const auto& mc = net_.machines[m];
                vk(c, p) = (mc.ramped ? r : 1.0) * kSqrt2 * mc.e_mag *
                           std::cos(w * t_next + state_.machines[m].delta + phase_shift(p));
            }
        }
    }

    // Nodal current injections (history terms and controlled sources).
    std::vector<std::array<double, kPhases>> inj(nn, {0.0, 0.0, 0.0});
    std::vector<std::array<double, kPhases>> hist(ne);
    for (std::size_t k = 0; k < ne; ++k) {
        const auto& e = net_.elements[k];
        const auto& cm = companions_[k];
        for (std::size_t p = 0; p < kPhases; ++p) {
            const double ih = cm.h_coef * state_.elem_v[p][k] + cm.j_coef * state_.elem_i[p][k];
            hist[k][p] = ih;
            if (e.a >= 0) inj[static_cast<std::size_t>(e.a)][p] -= ih;
            if (e.b >= 0) inj[static_cast<std::size_t>(e.b)][p] += ih;
        }
    }
    for (std::size_t d = 0; d < net_.pq_devices.size(); ++d) {
        const auto& dev = net_.pq_devices[d];
        auto& ps = state_.pq[d];
        const Complex measured = measure_phasor(state_, dev.node, w).to_complex();
        const double alpha_v = 1.0 - std::exp(-dt / dev.tau_v);
        const Complex vf = Complex(ps.v_re, ps.v_im) + alpha_v * (measured - Complex(ps.v_re, ps.v_im));
        ps.v_re = vf.real();
        ps.v_im = vf.imag();
        const double vm = std::abs(vf);
        std::pair<double, double> target{0.0, 0.0};
        if (vm > 1e-9) {
            target = dev.response(Phasor::from_complex(vf));
            if (vm < dev.v_knee) {
                const double scale = (vm / dev.v_knee) * (vm / dev.v_knee);
                target.first *= scale;
                target.second *= scale;
            }
        }
        const double alpha = 1.0 - std::exp(-dt / dev.tau);
        ps.p_cmd += alpha * (target.first - ps.p_cmd);
        ps.q_cmd += alpha * (target.second - ps.q_cmd);
        if (vm > 1e-9) {
            // The damping shunt draws g_damp * v; compensate it at the filtered voltage.
            const Phasor ip = Phasor::from_complex(std::conj(Complex(ps.p_cmd, ps.q_cmd) / vf) + dev.g_damp * vf);
            for (int p = 0; p < kPhases; ++p) {
                inj[static_cast<std::size_t>(dev.node)][static_cast<std::size_t>(p)] +=
                    ip.instantaneous(w, t_next, phase_shift(p));
            }
        }
    }

    const auto nu = static_cast<Eigen::Index>(unknown_nodes_.size());
    Eigen::MatrixXd rhs(nu, kPhases);
    for (Eigen::Index r_ = 0; r_ < nu; ++r_) {
        for (int p = 0; p < kPhases; ++p) {
            rhs(r_, p) = inj[static_cast<std::size_t>(unknown_nodes_[static_cast<std::size_t>(r_)])][static_cast<std::size_t>(p)];
        }
    }
    if (nu > 0) {
        if (np > 0) {
            rhs -= g_uk_ * vk;
        }
        rhs = lu_.solve(rhs).eval();
    }

    for (Eigen::Index r_ = 0; r_ < nu; ++r_) {
        for (int p = 0; p < kPhases; ++p) {
            state_.node_v[static_cast<std::size_t>(p)][static_cast<std::size_t>(unknown_nodes_[static_cast<std::size_t>(r_)])] = rhs(r_, p);
        }
    }
    for (Eigen::Index c = 0; c < np; ++c) {
        for (int p = 0; p < kPhases; ++p) {
            state_.node_v[static_cast<std::size_t>(p)][static_cast<std::size_t>(prescribed_nodes_[static_cast<std::size_t>(c)])] = vk(c, p);
        }
    }
    for (std::size_t k = 0; k < ne; ++k) {
        const auto& e = net_.elements[k];
        for (std::size_t p = 0; p < kPhases; ++p) {
            const double va = e.a >= 0 ? state_.node_v[p][static_cast<std::size_t>(e.a)] : 0.0;
            const double vb = e.b >= 0 ? state_.node_v[p][static_cast<std::size_t>(e.b)] : 0.0;
            const double v = va - vb;
            state_.elem_v[p][k] = v;
            state_.elem_i[p][k] = companions_[k].g_coef * v + hist[k][p];
        }
    }

    // Swing dynamics of classical machines (semi-implicit Euler).
    for (std::size_t m = 0; m < net_.machines.size(); ++m) {
        const auto& mc = net_.machines[m];
        auto& ms = state_.machines[m];
        double pe = 0.0;
        const auto el = static_cast<std::size_t>(mc.element);
        const auto in = static_cast<std::size_t>(mc.internal_node);
        for (std::size_t p = 0; p < kPhases; ++p) {
            pe += state_.node_v[p][in] * state_.elem_i[p][el];
        }
        pe /= 3.0;
        const double pm = (mc.ramped ? r * r : 1.0) * mc.pm;  // power scales with the square of the ramp
        ms.omega += dt / (2.0 * mc.inertia_h) * (pm - pe - mc.damping * (ms.omega - 1.0));
        ms.delta += dt * w * (ms.omega - 1.0);
    }
    ++state_.step;
}

// ---------------------------------------------------------------------------
// Probes, runs, steady-state detection
// ---------------------------------------------------------------------------

Probe parse_probe(const EmtNetwork& net, const std::string& id) {
    Probe p;
    p.id = id;
    const auto colon = id.find(':');
    if (colon == std::string::npos) {
        throw Error(ErrorCode::UnknownTarget, "malformed probe '" + id + "'");
    }
    const std::string kind = id.substr(0, colon);
    auto resolve = [&](const std::string& target) {
        if (kind == "v") return net.node_index(target);
        if (kind == "i") return net.element_index(target);
        if (kind == "speed" || kind == "delta") {
            for (std::size_t m = 0; m < net.machines.size(); ++m) {
                if (net.machines[m].id == target) return static_cast<int>(m);
            }
        }
        return -1;
    };
    if (kind == "v") p.kind = Probe::Kind::NodeVoltage;
    else if (kind == "i") p.kind = Probe::Kind::ElementCurrent;
    else if (kind == "speed") p.kind = Probe::Kind::MachineSpeed;
    else if (kind == "delta") p.kind = Probe::Kind::MachineAngle;

    const std::string target = id.substr(colon + 1);
    p.index = resolve(target);
    // A trailing ":a"/":b"/":c" selects the phase unless the full name is itself a target
    // (fault elements are called "fault:<bus>").
    if (p.index < 0 && target.size() > 2 && target[target.size() - 2] == ':') {
        const char ph = target.back();
        if (ph < 'a' || ph > 'c') {
            throw Error(ErrorCode::UnknownTarget, "bad phase in probe '" + id + "'");
        }
        p.phase = ph - 'a';
        p.index = resolve(target.substr(0, target.size() - 2));
    }
    if (p.index < 0) {
        throw Error(ErrorCode::UnknownTarget, "probe '" + id + "' names an unknown target");
    }
    return p;
}

double read_probe(const Probe& probe, const EmtState& st) {
    const auto ph = static_cast<std::size_t>(probe.phase);
    const auto i = static_cast<std::size_t>(probe.index);
    switch (probe.kind) {
    case Probe::Kind::NodeVoltage: return st.node_v[ph][i];
    case Probe::Kind::ElementCurrent: return st.elem_i[ph][i];
    case Probe::Kind::MachineSpeed: return st.machines[i].omega;
    case Probe::Kind::MachineAngle: return st.machines[i].delta;
    }
    return 0.0;
}

void SimConfig::validate() const {
    if (!(dt > 0.0) || !(duration >= 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "simulation needs dt > 0 and duration >= 0");
    }
}

RunResult run(const EmtNetwork& net, const EmtState* init, const SimConfig& cfg) {
    cfg.validate();
    EmtState start = init != nullptr ? *init : EmtState::zero(net, cfg.dt);
    if (init != nullptr && std::abs(init->dt - cfg.dt) > 1e-15 * cfg.dt) {
        throw Error(ErrorCode::IncompatibleSnapshot, "snapshot time step differs from simulation time step");
    }
    Simulator sim(net, std::move(start));
    sim.set_ramp(cfg.ramp);

    std::vector<Event> events = cfg.events;
    std::stable_sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.time < b.time; });
    for (const auto& ev : events) {
        if (net.node_index(ev.target) < 0) {
            throw Error(ErrorCode::UnknownTarget, "event on unknown target '" + ev.target + "'");
        }
    }

    std::vector<Probe> probes;
    RunResult out;
    for (const auto& id : cfg.record) {
        probes.push_back(parse_probe(net, id));
        out.waveforms.push_back({id, sim.state().time(), cfg.dt, {}});
    }
    auto record = [&] {
        for (std::size_t p = 0; p < probes.size(); ++p) {
            out.waveforms[p].samples.push_back(read_probe(probes[p], sim.state()));
        }
    };
    record();

    const auto n_steps = static_cast<std::int64_t>(std::llround(cfg.duration / cfg.dt));
    std::size_t next_event = 0;
    for (std::int64_t s = 0; s < n_steps; ++s) {
        while (next_event < events.size() &&
               std::llround(events[next_event].time / cfg.dt) <= sim.state().step) {
            const auto& ev = events[next_event++];
            if (ev.kind == Event::Kind::Fault) {
                sim.set_network(apply_fault(sim.network(), ev.target, FaultKind::ThreePhaseToGround, ev.r_fault));
            } else {
                sim.set_network(clear_fault(sim.network(), ev.target));
            }
        }
        sim.step();
        record();
    }
    out.final_state = sim.state();
    return out;
}

SteadyStateDetector::SteadyStateDetector(std::size_t n_probes, int samples_per_cycle, double rel_tol, int cycles)
    : samples_per_cycle_(samples_per_cycle), rel_tol_(rel_tol), cycles_(cycles), sumsq_(n_probes, 0.0),
      rms_(n_probes, 0.0) {}

void SteadyStateDetector::reset() {
    std::fill(sumsq_.begin(), sumsq_.end(), 0.0);
    std::fill(rms_.begin(), rms_.end(), 0.0);
    count_ = 0;
    good_ = 0;
    completed_ = 0;
    steady_ = false;
}

bool SteadyStateDetector::push(const std::vector<double>& values) {
    for (std::size_t i = 0; i < sumsq_.size(); ++i) {
        sumsq_[i] += values[i] * values[i];
    }
    if (++count_ < samples_per_cycle_) {
        return steady_;
    }
    bool all_ok = true;
    for (std::size_t i = 0; i < sumsq_.size(); ++i) {
        const double rms = std::sqrt(sumsq_[i] / samples_per_cycle_);
        if (completed_ > 0) {
            const double prev = rms_[i];
            const double scale = std::max(std::abs(prev), 1e-9);
            if (std::abs(rms - prev) > rel_tol_ * scale) {
                all_ok = false;
            }
        } else {
            all_ok = false;
        }
        rms_[i] = rms;
        sumsq_[i] = 0.0;
    }
    ++completed_;
    count_ = 0;
    good_ = all_ok ? good_ + 1 : 0;
    steady_ = good_ >= cycles_;
    return steady_;
}

std::vector<double> cycle_rms(const Waveform& w, int samples_per_cycle) {
    std::vector<double> out;
    const auto spc = static_cast<std::size_t>(samples_per_cycle);
    for (std::size_t start = 0; start + spc <= w.samples.size(); start += spc) {
        double acc = 0.0;
        for (std::size_t k = start; k < start + spc; ++k) {
            acc += w.samples[k] * w.samples[k];
        }
        out.push_back(std::sqrt(acc / static_cast<double>(spc)));
    }
    return out;
}

Phasor fourier_phasor(const std::vector<double>& samples, std::size_t end, int samples_per_cycle, double t_first,
                      double dt, double omega) {
    const auto spc = static_cast<std::size_t>(samples_per_cycle);
    if (end < spc || end > samples.size()) {
        throw Error(ErrorCode::InvalidParameter, "not enough samples for a full-cycle phasor");
    }
    Complex acc(0.0, 0.0);
    for (std::size_t k = 0; k < spc; ++k) {
        const double t = t_first + static_cast<double>(k) * dt;
        acc += samples[end - spc + k] * std::polar(1.0, -omega * t);
    }
    return Phasor::from_complex(acc * (kSqrt2 / static_cast<double>(spc)));
}

}  // namespace emtgis::emt
