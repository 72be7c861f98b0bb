#include "emtgis/pipeline.hpp"
#include "emtgis/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <thread>

namespace emtgis {

using ojson = nlohmann::ordered_json;

namespace {

template <typename F>
auto staged(const char* stage, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (Error& e) {
        e.set_stage(stage);
        throw;
    }
}

std::int64_t to_steps(double t, double dt) { return static_cast<std::int64_t>(std::llround(t / dt)); }

std::vector<double> slice(const std::vector<double>& x, std::size_t from, std::size_t to) {
    return {x.begin() + static_cast<std::ptrdiff_t>(from), x.begin() + static_cast<std::ptrdiff_t>(to)};
}

}  // namespace

GisConfig GisConfig::from_case(const CaseFile& c) {
    GisConfig g;
    g.dt = c.setting("dt", g.dt);
    g.t_ramp = c.setting("t_ramp", g.t_ramp);
    g.max_ramp_duration = c.setting("max_ramp_duration", g.max_ramp_duration);
    g.consistency_tol = c.setting("consistency_tol", g.consistency_tol);
    g.splice_multiple = static_cast<int>(c.setting("splice_multiple", g.splice_multiple));
    g.jfng.eps1 = c.setting("eps1", g.jfng.eps1);
    g.jfng.eps2 = c.setting("eps2", g.jfng.eps2);
    g.jfng.m_restart = static_cast<int>(c.setting("gmres_m", g.jfng.m_restart));
    g.jfng.omega = c.setting("omega", g.jfng.omega);
    return g;
}

IpfOutcome integrated_power_flow(const CaseFile& c, const JfngConfig& cfg) {
    IpfOutcome out;
    if (c.grbcs.empty()) {
        const PowerFlowSolution pf = solve_main(c, {}, {cfg.pf_tol, 50});
        out.op = operating_point(c, pf);
        out.trace.status = IterationTrace::Status::Converged;
        return out;
    }
    const JfngResult r = jfng_solve(c, c.grbcs, flat_start(c.grbcs.size()), cfg);
    out.boundary = r.state;
    out.trace = r.trace;
    out.op = operating_point(c, r.state, cfg);
    return out;
}

GisResult run_emtgis(const CaseFile& c, const GisConfig& cfg) {
    GisResult res;
    const IpfOutcome ipf = staged("ipf", [&] { return integrated_power_flow(c, cfg.jfng); });
    res.report.trace = ipf.trace;
    res.report.boundary = ipf.boundary;
    res.op = ipf.op;

    const int spc = staged("phasor_init", [&] { return samples_per_cycle(c.frequency_hz, cfg.dt); });
    res.full = staged("phasor_init", [&] { return build_full_network(c, res.op); });
    Snapshot main = staged("phasor_init", [&] {
        return phasor_init(build_main_network(c, res.op), res.op, cfg.dt, 0, "main");
    });
    res.report.ready_steps["main"] = 0;
    if (c.grbcs.empty()) {
        res.report.schedule = splice_schedule(res.report.ready_steps, spc, cfg.splice_multiple);
        res.snapshot = std::move(main);
        return res;
    }

    // Each region is ramped on its own simulator; no state is shared.
    struct RegionRun {
        TheveninEquivalent th;
        RampResult ramp;
    };
    auto run_region = [&](const GrbcDeclaration& g) {
        RegionRun rr;
        rr.th = staged("thevenin_extract", [&] { return thevenin_extract(c, res.op, g.boundary_bus); });
        rr.ramp = staged("ramp_to_snapshot", [&] {
            const BuiltNetwork region = build_grbc_network(c, g, res.op);
            RampConfig rc{cfg.dt, cfg.t_ramp, cfg.max_ramp_duration, cfg.consistency_tol};
            RampResult r = ramp_to_snapshot(region.net, g.boundary_bus, rr.th, rc);
            r.snapshot.subsystem = g.name;
            return r;
        });
        return rr;
    };
    const std::size_t hw = std::max(1U, std::thread::hardware_concurrency());
    const std::size_t batch = cfg.threads <= 0 ? hw : static_cast<std::size_t>(cfg.threads);
    std::vector<RegionRun> regions;
    for (std::size_t start = 0; start < c.grbcs.size(); start += batch) {
        std::vector<std::future<RegionRun>> pending;
        const std::size_t end = std::min(c.grbcs.size(), start + batch);
        for (std::size_t i = start; i < end; ++i) {
            pending.push_back(std::async(batch > 1 ? std::launch::async : std::launch::deferred, run_region,
                                         std::cref(c.grbcs[i])));
        }
        for (auto& f : pending) regions.push_back(f.get());
    }

    std::vector<Snapshot> ready{main};
    for (std::size_t i = 0; i < c.grbcs.size(); ++i) {
        res.report.thevenin[c.grbcs[i].name] = regions[i].th;
        res.report.ready_steps[c.grbcs[i].name] = regions[i].ramp.snapshot.timestamp_steps();
        ready.push_back(regions[i].ramp.snapshot);
    }
    res.report.schedule = splice_schedule(res.report.ready_steps, spc, cfg.splice_multiple);
    const auto& sched = res.report.schedule;

    res.report.unscheduled_deviation = staged("splice", [&] {
        return splice(ready, nullptr, res.full.net, res.full.boundary_nodes).max_deviation;
    });

    std::vector<Snapshot> aligned;
    aligned.push_back(staged("phasor_init", [&] {
        return phasor_init(build_main_network(c, res.op), res.op, cfg.dt, sched.t_adj_steps.at("main"), "main");
    }));
    for (std::size_t i = 0; i < c.grbcs.size(); ++i) {
        aligned.push_back(staged("splice", [&] {
            return advance_snapshot(regions[i].ramp.snapshot, regions[i].ramp.network,
                                    sched.t_adj_steps.at(c.grbcs[i].name));
        }));
    }
    SpliceResult sp = staged("splice", [&] { return splice(aligned, &sched, res.full.net, res.full.boundary_nodes); });
    res.report.splice_deviation = sp.deviation;
    res.report.max_splice_deviation = sp.max_deviation;
    res.report.splice_step = sp.snapshot.timestamp_steps();
    res.snapshot = std::move(sp.snapshot);
    return res;
}

std::string report_json(const GisReport& r, double dt) {
    ojson j;
    ojson trace = ojson::array();
    for (const auto& o : r.trace.outer) {
        trace.push_back({{"phi_norm", o.phi_norm}, {"inner_iters", o.inner_iters}, {"rho_final", o.rho_final}});
    }
    j["ipf"] = {{"status", r.trace.status == IterationTrace::Status::Converged ? "converged" : "not_converged"},
                {"residual_evaluations", r.trace.residual_evaluations},
                {"outer", std::move(trace)}};
    ojson ready = ojson::object();
    for (const auto& [name, step] : r.ready_steps) {
        ready[name] = {{"steps", step}, {"time", static_cast<double>(step) * dt}};
    }
    j["ready"] = std::move(ready);
    ojson sched = ojson::object();
    for (const auto& [name, step] : r.schedule.t_adj_steps) {
        sched[name] = {{"t_adj_steps", step}, {"k", r.schedule.k.at(name)}};
    }
    j["schedule"] = {{"reference", r.schedule.reference},
                     {"t_ref_steps", r.schedule.t_ref_steps},
                     {"period_steps", r.schedule.period_steps},
                     {"multiple", r.schedule.multiple},
                     {"subsystems", std::move(sched)}};
    ojson th = ojson::object();
    for (const auto& [name, t] : r.thevenin) {
        th[name] = {{"e_mag", t.e_eq.magnitude()},
                    {"e_angle", t.e_eq.angle()},
                    {"z_re", t.z_eq.real()},
                    {"z_im", t.z_eq.imag()}};
    }
    j["thevenin"] = std::move(th);
    ojson dev = ojson::object();
    for (const auto& [bus, d] : r.splice_deviation) dev[bus] = d;
    j["splice"] = {{"step", r.splice_step},
                   {"time", static_cast<double>(r.splice_step) * dt},
                   {"deviation", std::move(dev)},
                   {"max_deviation", r.max_splice_deviation},
                   {"unscheduled_deviation", r.unscheduled_deviation}};
    return j.dump(1) + "\n";
}

// ---------------------------------------------------------------------------
// Metrics and the baseline comparison
// ---------------------------------------------------------------------------

double average_relative_deviation(const std::vector<double>& a, std::size_t a0, const std::vector<double>& b,
                                  std::size_t b0, std::size_t n) {
    if (a0 + n > a.size() || b0 + n > b.size()) {
        throw Error(ErrorCode::InvalidParameter, "comparison window exceeds the waveform");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        num += std::abs(a[a0 + k] - b[b0 + k]);
        den += std::abs(b[b0 + k]);
    }
    return den > 0.0 ? num / den : num;
}

Settling settling_step(const std::vector<emt::Waveform>& waves, int samples_per_cycle, double rel_tol,
                       int tail_cycles) {
    Settling out;
    out.settled = true;
    std::size_t first_ok = 0;
    for (const auto& w : waves) {
        const std::vector<double> rms = emt::cycle_rms(w, samples_per_cycle);
        if (rms.size() < static_cast<std::size_t>(tail_cycles) + 1) {
            out.settled = false;
            continue;
        }
        const double final = rms.back();
        const double band = rel_tol * std::max(std::abs(final), 1e-9);
        std::size_t c = rms.size();
        while (c > 0 && std::abs(rms[c - 1] - final) <= band) --c;
        first_ok = std::max(first_ok, c);
        if (c + static_cast<std::size_t>(tail_cycles) > rms.size()) {
            out.settled = false;
        }
    }
    out.step = static_cast<std::int64_t>(first_ok) * samples_per_cycle;
    return out;
}

std::vector<std::string> bus_voltage_probes(const CaseFile& c) {
    std::vector<std::string> out;
    for (const auto& b : c.buses) out.push_back("v:" + b.id);
    return out;
}

CompareResult compare_schemes(const CaseFile& c, const GisConfig& gcfg, const CompareConfig& cfg) {
    CompareResult out;
    const GisResult gis = run_emtgis(c, gcfg);
    out.gis = gis.report;
    const double dt = gcfg.dt;
    const int spc = samples_per_cycle(c.frequency_hz, dt);
    const std::vector<std::string> probes = bus_voltage_probes(c);
    const std::int64_t horizon = to_steps(cfg.horizon, dt);
    const auto window = static_cast<std::size_t>(to_steps(cfg.window, dt));
    const std::int64_t t_s = gis.snapshot.timestamp_steps();
    if (horizon < t_s + static_cast<std::int64_t>(window) + to_steps(cfg.hold_duration, dt)) {
        throw Error(ErrorCode::InvalidConfig, "comparison horizon ends before the hold and comparison windows");
    }
    const bool faulted = !cfg.fault_bus.empty();
    const std::int64_t end = horizon + (faulted ? static_cast<std::int64_t>(window) : 0);

    emt::SimConfig zc;
    zc.dt = dt;
    zc.duration = static_cast<double>(end) * dt;
    zc.record = probes;
    zc.ramp = emt::RampSpec{0.0, gcfg.t_ramp};
    if (faulted) {
        zc.events.push_back({static_cast<double>(horizon) * dt, emt::Event::Kind::Fault, cfg.fault_bus, cfg.fault_r});
    }
    emt::SimConfig gc = zc;
    gc.ramp.reset();
    gc.duration = static_cast<double>(end - t_s) * dt;

    const emt::RunResult zero = staged("zero_state", [&] { return emt::run(gis.full.net, nullptr, zc); });
    emt::RunResult cont;
    if (cfg.self_check) {
        cont = zero;
    } else {
        const emt::EmtState init = bind_snapshot(gis.snapshot, gis.full.net);
        cont = staged("continuation", [&] { return emt::run(gis.full.net, &init, gc); });
    }
    const std::int64_t g0 = cfg.self_check ? 0 : t_s;  // absolute step of the first continuation sample

    auto pre_horizon = [&](const std::vector<emt::Waveform>& ws, std::int64_t first) {
        std::vector<emt::Waveform> cut = ws;
        for (auto& w : cut) w.samples.resize(static_cast<std::size_t>(horizon - first));
        return cut;
    };
    out.zero_settling = settling_step(pre_horizon(zero.waveforms, 0), spc, cfg.settle_tol);
    out.gis_settling = settling_step(pre_horizon(cont.waveforms, g0), spc, cfg.settle_tol);
    if (!out.zero_settling.settled || !out.gis_settling.settled) {
        Error e(ErrorCode::SteadyStateTimeout,
                std::string(out.zero_settling.settled ? "EMT-GIS" : "zero-state") + " run did not settle before the horizon");
        e.set_stage("compare");
        throw e;
    }
    out.zero_steps = out.zero_settling.step;
    out.gis_steps = g0 + out.gis_settling.step;
    out.step_ratio = out.gis_steps > 0 ? static_cast<double>(out.zero_steps) / static_cast<double>(out.gis_steps) : std::numeric_limits<double>::infinity();

    const auto hold_cycles = static_cast<std::size_t>(to_steps(cfg.hold_duration, dt) / spc);
    for (std::size_t p = 0; p < probes.size(); ++p) {
        ProbeComparison pc;
        pc.probe = probes[p];
        const auto& a = cont.waveforms[p].samples;
        const auto& b = zero.waveforms[p].samples;
        const auto ga = static_cast<std::size_t>(horizon - g0);
        const auto zb = static_cast<std::size_t>(horizon);
        pc.steady_deviation = average_relative_deviation(a, ga - window, b, zb - window, window);
        if (faulted) {
            pc.fault_deviation = average_relative_deviation(a, ga, b, zb, window);
        }
        const double v_ipf = std::abs(gis.op.voltage.at(probes[p].substr(2)));
        const emt::Waveform hold{probes[p], 0.0, dt, slice(a, 0, hold_cycles * static_cast<std::size_t>(spc))};
        for (double r : emt::cycle_rms(hold, spc)) {
            pc.hold_error = std::max(pc.hold_error, std::abs(r - v_ipf) / v_ipf);
        }
        out.max_steady_deviation = std::max(out.max_steady_deviation, pc.steady_deviation);
        out.max_fault_deviation = std::max(out.max_fault_deviation, pc.fault_deviation);
        out.max_hold_error = std::max(out.max_hold_error, pc.hold_error);
        out.probes.push_back(pc);
    }
    return out;
}

std::string compare_json(const CompareResult& r, double dt) {
    ojson j;
    ojson probes = ojson::array();
    for (const auto& p : r.probes) {
        probes.push_back({{"probe", p.probe},
                          {"steady_deviation", p.steady_deviation},
                          {"fault_deviation", p.fault_deviation},
                          {"hold_error", p.hold_error}});
    }
    j["probes"] = std::move(probes);
    j["gis_steps"] = r.gis_steps;
    j["zero_state_steps"] = r.zero_steps;
    j["gis_time"] = static_cast<double>(r.gis_steps) * dt;
    j["zero_state_time"] = static_cast<double>(r.zero_steps) * dt;
    if (std::isfinite(r.step_ratio)) {
        j["step_ratio"] = r.step_ratio;
    } else {
        j["step_ratio"] = nullptr;  // nothing to ramp
    }
    j["max_steady_deviation"] = r.max_steady_deviation;
    j["max_fault_deviation"] = r.max_fault_deviation;
    j["max_hold_error"] = r.max_hold_error;
    j["splice_step"] = r.gis.splice_step;
    j["max_splice_deviation"] = r.gis.max_splice_deviation;
    return j.dump(1) + "\n";
}

}  // namespace emtgis
