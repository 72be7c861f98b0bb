#pragma once

// End-to-end initialization: integrated power flow, phasor snapshot of the
// main system, Thevenin ramping of every region, phase-aligned splice; plus
// the zero-state ramping baseline and the metrics used to compare the two.

#include "emtgis/coordinator.hpp"
#include "emtgis/snapshot.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace emtgis {

struct GisConfig {
    JfngConfig jfng;
    double dt = 50e-6;
    double t_ramp = 0.5;
    double max_ramp_duration = 10.0;
    double consistency_tol = 1e-6;  // capture gate on boundary phasor vs samples
    int splice_multiple = 2;
    int threads = 1;  // concurrent region ramps (0 = hardware)

    /// Built-in defaults overridden by the case's `settings` block.
    static GisConfig from_case(const CaseFile& c);
};

struct IpfOutcome {
    BoundaryState boundary;
    IterationTrace trace;
    OperatingPoint op;
};

/// JFNG boundary coordination when the case has regions, a plain power flow
/// otherwise.
IpfOutcome integrated_power_flow(const CaseFile& c, const JfngConfig& cfg);

struct GisReport {
    IterationTrace trace;
    BoundaryState boundary;
    std::map<std::string, std::int64_t> ready_steps;
    SpliceSchedule schedule;
    std::map<std::string, TheveninEquivalent> thevenin;
    std::map<std::string, double> splice_deviation;
    double max_splice_deviation = 0.0;
    double unscheduled_deviation = 0.0;  // the same snapshots spliced at their ready steps
    std::int64_t splice_step = 0;
};

struct GisResult {
    Snapshot snapshot;
    GisReport report;
    OperatingPoint op;
    BuiltNetwork full;
};

/// Failures carry the stage name: ipf, phasor_init, thevenin_extract,
/// ramp_to_snapshot, splice.
GisResult run_emtgis(const CaseFile& c, const GisConfig& cfg);

std::string report_json(const GisReport& r, double dt);

// ---------------------------------------------------------------------------
// Waveform metrics
// ---------------------------------------------------------------------------

/// Sum |a - b| / sum |b| over n samples starting at a0 / b0.
double average_relative_deviation(const std::vector<double>& a, std::size_t a0, const std::vector<double>& b,
                                  std::size_t b0, std::size_t n);

struct Settling {
    bool settled = false;
    std::int64_t step = 0;  // samples from the waveform start
};

/// First cycle boundary after which every waveform's cycle-RMS stays within
/// rel_tol of its final cycle-RMS. Settled when the last `tail_cycles`
/// cycles are also mutually within rel_tol.
Settling settling_step(const std::vector<emt::Waveform>& waves, int samples_per_cycle, double rel_tol,
                       int tail_cycles = 10);

/// Phase-a voltage probes of every main-system bus.
std::vector<std::string> bus_voltage_probes(const CaseFile& c);

struct CompareConfig {
    double horizon = 20.0;      // absolute time at which both runs are compared
    double window = 0.1;
    double hold_duration = 0.5;
    double settle_tol = 1e-3;
    std::string fault_bus;      // empty: no fault run
    double fault_r = 0.01;
    bool self_check = false;    // compare the zero-state run with itself
};

struct ProbeComparison {
    std::string probe;
    double steady_deviation = 0.0;
    double fault_deviation = 0.0;
    double hold_error = 0.0;  // worst cycle-RMS error against the power flow over the hold period
};

struct CompareResult {
    std::vector<ProbeComparison> probes;
    GisReport gis;
    Settling gis_settling;
    Settling zero_settling;
    std::int64_t gis_steps = 0;
    std::int64_t zero_steps = 0;
    double step_ratio = 0.0;
    double max_steady_deviation = 0.0;
    double max_fault_deviation = 0.0;
    double max_hold_error = 0.0;
};

/// Runs EMT-GIS and the zero-state ramping baseline on the same case up to
/// `horizon` (and through the optional fault window) and compares them.
CompareResult compare_schemes(const CaseFile& c, const GisConfig& gcfg, const CompareConfig& cfg);

std::string compare_json(const CompareResult& r, double dt);

}  // namespace emtgis
