#include "fixtures.hpp"

#include "emtgis/coordinator.hpp"
#include "emtgis/error.hpp"
#include "emtgis/powerflow.hpp"
#include "emtgis/snapshot.hpp"
#include "emtgis/snapshot_io.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

using namespace emtgis;

namespace {

ErrorCode code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an error");
    return ErrorCode::ParseError;
}

// Largest relative spread of the cycle RMS of every recorded waveform.
double rms_spread(const emt::RunResult& res, int spc) {
    double worst = 0.0;
    for (const auto& w : res.waveforms) {
        const auto rms = emt::cycle_rms(w, spc);
        const auto [lo, hi] = std::minmax_element(rms.begin(), rms.end());
        worst = std::max(worst, (*hi - *lo) / *hi);
    }
    return worst;
}

// Synchronous machine alone feeding a 1 pu resistive load at its terminal.
CaseFile machine_island() {
    nlohmann::json j;
    j["base_mva"] = 100.0;
    j["frequency_hz"] = 50.0;
    j["buses"] = {{{"id", "G"}, {"kind", "Slack"}, {"base_kv", 20.0}, {"v_set", 1.0}, {"p_load", 1.0}}};
    j["branches"] = nlohmann::json::array();
    j["machines"] = {{{"bus", "G"},
                      {"kind", "SynchronousSimplified"},
                      {"xd_transient", 0.2},
                      {"v_set", 1.0},
                      {"inertia_h", 5.0},
                      {"damping", 2.0}}};
    j["grbcs"] = nlohmann::json::array();
    return fixtures::parse(j);
}

OperatingPoint machine_op() {
    OperatingPoint op;
    op.voltage["G"] = 1.0;
    op.generation["G"] = 1.0;
    return op;
}

emt::EmtNetwork rl_region(double r, double l) {
    emt::EmtNetwork net;
    const int b = net.add_node("B");
    emt::Element e;
    e.id = "load";
    e.kind = emt::ElementKind::Inductor;
    e.a = b;
    e.r = r;
    e.l = l;
    net.add_element(e);
    return net;
}

double rel(Complex a, Complex b) { return std::abs(a - b) / std::abs(b); }

}  // namespace

TEST_SUITE("snapshot") {

TEST_CASE("phasor init without load has no currents") {
    const CaseFile c = fixtures::parse(fixtures::two_bus(0.0, 0.1, 0.0, 0.0));
    const Snapshot s = phasor_init(c, solve_monolithic(c), 50e-6, 7);
    CHECK(s.provenance == Provenance::PhasorInit);
    CHECK(s.timestamp_steps() == 7);
    const double w = 2.0 * kPi * 50.0, t = 7 * 50e-6;
    for (std::size_t p = 0; p < emt::kPhases; ++p) {
        for (double i : s.state.elem_i[p]) CHECK(std::abs(i) < 1e-12);
        for (double v : s.state.node_v[p]) {
            CHECK(v == doctest::Approx(Phasor(1.0, 0.0).instantaneous(w, t, emt::phase_shift(static_cast<int>(p))))
                           .epsilon(1e-12));
        }
    }
}

TEST_CASE("phasor init of a unit load") {
    nlohmann::json j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0);
    j["buses"][0]["p_load"] = 1.0;
    const CaseFile c = fixtures::parse(j);
    const double dt = 50e-6, w = 2.0 * kPi * 50.0;
    const Snapshot s = phasor_init(c, solve_monolithic(c), dt, 13);
    const auto it = std::find(s.elements.begin(), s.elements.end(), "ld:1:g");
    REQUIRE(it != s.elements.end());
    const auto k = static_cast<std::size_t>(it - s.elements.begin());
    CHECK(s.state.elem_i[0][k] == doctest::Approx(kSqrt2 * std::cos(w * 13 * dt)).epsilon(1e-12));
}

TEST_CASE("classical machine from the phasor diagram") {
    const CaseFile c = machine_island();
    const BuiltNetwork built = build_main_network(c, machine_op());
    REQUIRE(built.net.machines.size() == 1);
    const auto& m = built.net.machines.front();
    CHECK(std::abs(built.node_phasor.at("emf:G") - Complex(1.0, 0.2)) < 1e-14);
    CHECK(m.e_mag == doctest::Approx(std::sqrt(1.04)).epsilon(1e-14));
    CHECK(m.pm == doctest::Approx(1.0).epsilon(1e-14));
    const Snapshot s = phasor_init(built, machine_op(), 50e-6, 0);
    CHECK(s.state.machines.front().delta == doctest::Approx(std::atan(0.2)).epsilon(1e-14));
    CHECK(s.state.machines.front().omega == 1.0);
}

TEST_CASE("phasor snapshots hold steady state") {
    const double dt = 50e-6;
    SUBCASE("machine island") {
        const BuiltNetwork built = build_main_network(machine_island(), machine_op());
        const Snapshot s = phasor_init(built, machine_op(), dt, 0);
        emt::SimConfig cfg;
        cfg.dt = dt;
        cfg.duration = 0.04;
        cfg.record = {"v:G", "v:G:b"};
        const emt::RunResult res = emt::run(built.net, &s.state, cfg);
        CHECK(rms_spread(res, 400) < 1e-3);
        for (double r : emt::cycle_rms(res.waveforms.front(), 400)) CHECK(r == doctest::Approx(1.0).epsilon(1e-3));
    }
    SUBCASE("nine-bus system") {
        const CaseFile c = fixtures::load("ninebus_plain.json");
        const PowerFlowSolution pf = solve_monolithic(c);
        const OperatingPoint op = operating_point(c, pf);
        const BuiltNetwork built = build_full_network(c, op);
        const Snapshot s = phasor_init(built, op, dt, 0);
        emt::SimConfig cfg;
        cfg.dt = dt;
        cfg.duration = 0.04;
        for (const auto& id : pf.bus_ids) cfg.record.push_back("v:" + id);
        const emt::RunResult res = emt::run(built.net, &s.state, cfg);
        for (std::size_t k = 0; k < pf.bus_ids.size(); ++k) {
            for (double r : emt::cycle_rms(res.waveforms[k], 400)) {
                CHECK(r == doctest::Approx(pf.voltage[k].magnitude()).epsilon(1e-3));
            }
        }
    }
}

TEST_CASE("Thevenin from measurements") {
    const TheveninEquivalent th = thevenin_from_measurements(1.0, 0.0, Complex(0.0, -10.0));
    CHECK(std::abs(th.z_eq - Complex(0.0, 0.1)) < 1e-15);
    CHECK(std::abs(th.e_eq.to_complex() - 1.0) < 1e-15);
    CHECK(code_of([] { thevenin_from_measurements(1.0, Complex(0.3, 0.1), Complex(0.3, 0.1)); }) ==
          ErrorCode::ZeroFaultCurrentDelta);
    // The pair is reproduced.
    const Complex v(0.97, -0.1), i(0.4, -0.2);
    const TheveninEquivalent t2 = thevenin_from_measurements(v, i, Complex(1.0, -7.0));
    CHECK(std::abs(t2.e_eq.to_complex() - (i * t2.z_eq + v)) < 1e-12);
}

TEST_CASE("Thevenin of a source behind a reactance") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.0, 0.0, "Boundary");
    j["grbcs"].push_back(fixtures::scripted("g", "2", "-0.4", "-0.1"));
    const CaseFile c = fixtures::parse(j);
    const JfngResult r = jfng_solve(c, c.grbcs, flat_start(1));
    const TheveninEquivalent th = thevenin_extract(c, operating_point(c, r.state), "2");
    CHECK(std::abs(th.z_eq - Complex(0.0, 0.1)) < 1e-9);
    CHECK(std::abs(th.e_eq.to_complex() - 1.0) < 1e-9);
}

TEST_CASE("ramping a region behind its Thevenin equivalent") {
    const TheveninEquivalent th{Phasor(1.0, 0.2), Complex(0.01, 0.1)};
    const double w = 2.0 * kPi * 50.0;
    RampConfig cfg;
    cfg.dt = 50e-6;
    cfg.t_ramp = 0.1;
    SUBCASE("RL load") {
        const double r = 0.8, l = 0.4 / w;
        const RampResult res = ramp_to_snapshot(rl_region(r, l), "B", th, cfg);
        const Complex zl(r, w * l);
        const Complex i = th.e_eq.to_complex() / (th.z_eq + zl);
        const BoundaryPhasor& got = res.snapshot.boundary.at("B");
        CHECK(res.snapshot.provenance == Provenance::RampInit);
        CHECK(rel(got.v.to_complex(), i * zl) < 2e-3);
        CHECK(rel(got.i.to_complex(), i) < 2e-3);
        CHECK(phasor_consistency(res.snapshot, w) <= cfg.consistency_tol);
    }
    SUBCASE("open circuit") {
        emt::EmtNetwork open;
        open.add_node("B");
        const RampResult res = ramp_to_snapshot(open, "B", th, cfg);
        const BoundaryPhasor& got = res.snapshot.boundary.at("B");
        CHECK(rel(got.v.to_complex(), th.e_eq.to_complex()) < 2e-3);
        CHECK(got.i.magnitude() < 1e-6);
    }
    SUBCASE("timeout") {
        RampConfig shorter = cfg;
        shorter.max_duration = 0.05;
        CHECK(code_of([&] { ramp_to_snapshot(rl_region(0.8, 0.4 / w), "B", th, shorter); }) ==
              ErrorCode::SteadyStateTimeout);
    }
}

TEST_CASE("splice schedule") {
    SUBCASE("one delayed period") {
        const SpliceSchedule s = splice_schedule({{"main", 1000}, {"g", 1013}}, 20);
        CHECK(s.reference == "main");
        CHECK(s.k.at("g") == 1);
        CHECK(s.t_adj_steps.at("g") == 1040);
        CHECK(s.t_adj_steps.at("main") == 1000);
    }
    SUBCASE("two periods") {
        const SpliceSchedule s = splice_schedule({{"main", 10000}, {"g", 10799}}, 200);
        CHECK(s.k.at("g") == 2);
        CHECK(s.t_adj_steps.at("g") == 10800);
    }
    SUBCASE("equal ready times") {
        const SpliceSchedule s = splice_schedule({{"main", 500}, {"g", 500}}, 20);
        CHECK(s.k.at("g") == 0);
        CHECK(s.t_adj_steps.at("g") == 500);
    }
    SUBCASE("random ready times") {
        std::mt19937_64 rng(11);
        std::uniform_int_distribution<std::int64_t> ready(0, 200000);
        std::uniform_int_distribution<std::int64_t> period(1, 1000);
        for (int trial = 0; trial < 1000; ++trial) {
            std::map<std::string, std::int64_t> r{{"a", ready(rng)}, {"b", ready(rng)}, {"c", ready(rng)}};
            const std::int64_t t = period(rng);
            const SpliceSchedule s = splice_schedule(r, t);
            for (const auto& [name, adj] : s.t_adj_steps) {
                CHECK((adj - s.t_ref_steps) % (2 * t) == 0);
                CHECK(adj >= r.at(name));
                CHECK(adj - 2 * t < r.at(name));
            }
        }
    }
}

TEST_CASE("splicing") {
    const CaseFile c = fixtures::load("ninebus.json");
    const PowerFlowSolution pf = solve_monolithic(c);
    const OperatingPoint op = operating_point(c, pf);
    const double dt = 50e-6;
    const GrbcDeclaration& g = c.grbcs.front();
    const Snapshot main = phasor_init(build_main_network(c, op), op, dt, 0, "main");
    const Snapshot region = phasor_init(build_grbc_network(c, g, op), op, dt, 0, g.name);
    const BuiltNetwork full = build_full_network(c, op);

    SUBCASE("single snapshot is the identity") {
        const SpliceResult r = splice({main}, nullptr, build_main_network(c, op).net, {});
        CHECK(snapshot_to_json(r.snapshot) == snapshot_to_json(main));
    }
    SUBCASE("off-schedule snapshot") {
        const SpliceSchedule s = splice_schedule({{"main", 0}, {g.name, 13}}, 400);
        CHECK(code_of([&] { splice({main, region}, &s, full.net, full.boundary_nodes); }) ==
              ErrorCode::ScheduleViolation);
    }
    SUBCASE("monolithic round trip") {
        const SpliceSchedule s = splice_schedule({{"main", 0}, {g.name, 0}}, 400);
        const SpliceResult r = splice({main, region}, &s, full.net, full.boundary_nodes);
        CHECK(r.max_deviation < 1e-6);
        emt::SimConfig cfg;
        cfg.dt = dt;
        cfg.duration = 0.1;
        for (const auto& id : pf.bus_ids) cfg.record.push_back("v:" + id);
        const emt::RunResult res = emt::run(full.net, &r.snapshot.state, cfg);
        CHECK(rms_spread(res, 400) < 1e-3);
    }
}

TEST_CASE("snapshot documents round trip") {
    const CaseFile c = fixtures::load("ninebus_plain.json");
    const Snapshot s = phasor_init(c, solve_monolithic(c), 50e-6, 123);
    const std::string text = snapshot_to_json(s);
    const Snapshot back = snapshot_from_json(text);
    CHECK(snapshot_to_json(back) == text);
    CHECK(back.state.node_v == s.state.node_v);
    CHECK(back.state.elem_i == s.state.elem_i);
    CHECK(back.timestamp_steps() == 123);
    CHECK_THROWS_AS(snapshot_from_json("{\"version\": 99}"), Error);
}

TEST_CASE("binding checks topology") {
    const CaseFile c = fixtures::load("ninebus_plain.json");
    const PowerFlowSolution pf = solve_monolithic(c);
    const Snapshot s = phasor_init(c, pf, 50e-6, 0);
    const CaseFile other = fixtures::parse(fixtures::two_bus(0.0, 0.1, 0.0, 0.0));
    const OperatingPoint op = operating_point(other, solve_monolithic(other));
    CHECK(code_of([&] { bind_snapshot(s, build_full_network(other, op).net); }) == ErrorCode::IncompatibleSnapshot);
}

TEST_CASE("samples per cycle must be integral") {
    CHECK(samples_per_cycle(50.0, 50e-6) == 400);
    CHECK_THROWS_AS(samples_per_cycle(50.0, 30e-6), Error);
}

}  // TEST_SUITE
