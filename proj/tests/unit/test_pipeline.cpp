#include "fixtures.hpp"

#include "emtgis/error.hpp"
#include "emtgis/pipeline.hpp"

#include <doctest.h>

#include <cmath>

using namespace emtgis;

namespace {

emt::Waveform sine(double amplitude_end, int cycles, int spc, int ramp_cycles) {
    emt::Waveform w;
    w.probe = "x";
    w.dt = 1.0 / (50.0 * spc);
    const int n = cycles * spc;
    for (int k = 0; k < n; ++k) {
        const double a = k < ramp_cycles * spc ? amplitude_end * k / (ramp_cycles * spc) : amplitude_end;
        w.samples.push_back(a * std::cos(2.0 * kPi * k / spc));
    }
    return w;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("case without regions reduces to phasor initialization") {
    const CaseFile c = fixtures::load("ninebus_plain.json");
    GisConfig cfg = GisConfig::from_case(c);
    const GisResult r = run_emtgis(c, cfg);
    CHECK(r.snapshot.provenance == Provenance::PhasorInit);
    CHECK(r.report.ready_steps.size() <= 1);
    const Snapshot direct = phasor_init(c, solve_monolithic(c), cfg.dt, r.snapshot.timestamp_steps());
    for (std::size_t p = 0; p < emt::kPhases; ++p) {
        for (std::size_t i = 0; i < direct.nodes.size(); ++i) {
            CHECK(r.snapshot.state.node_v[p][i] == doctest::Approx(direct.state.node_v[p][i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("spliced nine-bus snapshot with a scripted region holds steady state") {
    const CaseFile c = fixtures::load("ninebus_scripted.json");
    const GisConfig cfg = GisConfig::from_case(c);
    const GisResult r = run_emtgis(c, cfg);
    CHECK(r.snapshot.provenance == Provenance::Spliced);
    CHECK(r.report.max_splice_deviation < 1e-3);
    // Every region snapshot sits on the schedule.
    for (const auto& [name, step] : r.report.schedule.t_adj_steps) {
        CHECK((step - r.report.schedule.t_ref_steps) % (2 * r.report.schedule.period_steps) == 0);
        CHECK(step >= r.report.ready_steps.at(name));
    }

    emt::SimConfig sim;
    sim.dt = cfg.dt;
    sim.duration = 0.5;
    sim.record = bus_voltage_probes(c);
    const emt::RunResult res = emt::run(r.full.net, &r.snapshot.state, sim);
    const int spc = samples_per_cycle(c.frequency_hz, cfg.dt);
    for (const auto& w : res.waveforms) {
        CAPTURE(w.probe);
        const double expected = std::abs(r.op.voltage.at(w.probe.substr(2)));
        for (double rms : emt::cycle_rms(w, spc)) CHECK(std::abs(rms - expected) / expected < 5e-3);
    }
}

TEST_CASE("failures carry their stage") {
    const CaseFile c = fixtures::load("ninebus_scripted.json");
    GisConfig cfg = GisConfig::from_case(c);
    cfg.max_ramp_duration = 0.05;
    try {
        run_emtgis(c, cfg);
        FAIL("expected a timeout");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::SteadyStateTimeout);
        CHECK(e.stage() == "ramp_to_snapshot");
    }
    cfg = GisConfig::from_case(c);
    cfg.jfng.max_outer = 0;
    try {
        run_emtgis(c, cfg);
        FAIL("expected MaxOuterExceeded");
    } catch (const Error& e) {
        CHECK(e.stage() == "ipf");
    }
}

TEST_CASE("case settings override defaults") {
    auto j = fixtures::two_bus(0.0, 0.1, 0.5, 0.1);
    j["settings"] = {{"dt", 1e-4}, {"t_ramp", 0.2}, {"gmres_m", 7}};
    const GisConfig g = GisConfig::from_case(fixtures::parse(j));
    CHECK(g.dt == 1e-4);
    CHECK(g.t_ramp == 0.2);
    CHECK(g.jfng.m_restart == 7);
    CHECK(g.max_ramp_duration == GisConfig{}.max_ramp_duration);
}

TEST_CASE("average relative deviation") {
    const std::vector<double> b{1.0, -2.0, 3.0, 4.0};
    CHECK(average_relative_deviation(b, 0, b, 0, 4) == 0.0);
    const std::vector<double> a{0.0, 1.1, -1.8, 3.3};
    // Shifted by one sample: |1.1 - 1| + |-1.8 + 2| + |3.3 - 3| over 6.
    CHECK(average_relative_deviation(a, 1, b, 0, 3) == doctest::Approx(0.6 / 6.0));
}

TEST_CASE("settling detection") {
    const int spc = 100;
    SUBCASE("ramp then constant") {
        const Settling s = settling_step({sine(1.0, 40, spc, 10)}, spc, 1e-3);
        CHECK(s.settled);
        CHECK(s.step == 10 * spc);
    }
    SUBCASE("constant from the start") {
        const Settling s = settling_step({sine(2.0, 20, spc, 0)}, spc, 1e-3);
        CHECK(s.settled);
        CHECK(s.step == 0);
    }
    SUBCASE("still growing") {
        const Settling s = settling_step({sine(1.0, 40, spc, 40)}, spc, 1e-3);
        CHECK(!s.settled);
    }
    SUBCASE("the slowest waveform decides") {
        const Settling s = settling_step({sine(1.0, 40, spc, 5), sine(1.0, 40, spc, 12)}, spc, 1e-3);
        CHECK(s.settled);
        CHECK(s.step == 12 * spc);
    }
}

TEST_CASE("bus voltage probes") {
    const auto probes = bus_voltage_probes(fixtures::load("ninebus_plain.json"));
    CHECK(probes.size() == 9);
    CHECK(probes.front() == "v:1");
}

}  // TEST_SUITE
