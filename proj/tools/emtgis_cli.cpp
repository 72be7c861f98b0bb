// emtgis command-line front end.
//
// Exit codes
//   0  success
//   1  input error (unreadable or invalid case, bad flags, other failures)
//   2  ipf: boundary coordination hit the outer-iteration limit
//   3  init: a pipeline stage failed (stage named in report.json)
//   4  simulate: snapshot incompatible with the case network
//   5  compare: a scheme failed to settle

#include "emtgis/coordinator.hpp"
#include "emtgis/error.hpp"
#include "emtgis/netmodel.hpp"
#include "emtgis/pipeline.hpp"
#include "emtgis/powerflow.hpp"
#include "emtgis/snapshot.hpp"
#include "emtgis/snapshot_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;
using namespace emtgis;

namespace {

constexpr const char* kToolVersion = "1.0.0";

struct Globals {
    std::string out = "out";
    std::optional<double> dt;
    std::optional<double> eps1;
    std::optional<double> eps2;
    std::optional<int> gmres_m;
    std::optional<double> omega;
    bool quiet = false;
};

struct Options {
    Globals g;
    std::string case_path;
    std::optional<int> max_outer;
    std::string snapshot;
    bool zero_state = false;
    double duration = 1.0;
    std::vector<std::string> faults;
    double fault_r = 0.01;
    std::vector<std::string> probes;
    double window = 0.1;
    double horizon = 20.0;
    std::string compare_fault;
    bool self_check = false;
    std::string manifest;
};

int env_threads() {
    const char* v = std::getenv("EMTGIS_THREADS");
    if (v == nullptr) return 1;
    try {
        return std::max(0, std::stoi(v));
    } catch (...) {
        return 1;
    }
}

GisConfig gis_config(const CaseFile& c, const Globals& g) {
    GisConfig cfg = GisConfig::from_case(c);
    if (g.dt) cfg.dt = *g.dt;
    if (g.eps1) cfg.jfng.eps1 = *g.eps1;
    if (g.eps2) cfg.jfng.eps2 = *g.eps2;
    if (g.gmres_m) cfg.jfng.m_restart = *g.gmres_m;
    if (g.omega) cfg.jfng.omega = *g.omega;
    cfg.threads = env_threads();
    cfg.jfng.threads = cfg.threads;
    return cfg;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error(ErrorCode::Io, "cannot write '" + p.string() + "'");
    out << text;
}

void write_manifest(const Options& o, const std::string& command, const std::vector<std::string>& args) {
    ojson overrides = ojson::object();
    if (o.g.dt) overrides["dt"] = *o.g.dt;
    if (o.g.eps1) overrides["eps1"] = *o.g.eps1;
    if (o.g.eps2) overrides["eps2"] = *o.g.eps2;
    if (o.g.gmres_m) overrides["gmres_m"] = *o.g.gmres_m;
    if (o.g.omega) overrides["omega"] = *o.g.omega;
    ojson m;
    m["tool"] = "emtgis";
    m["version"] = kToolVersion;
    m["command"] = command;
    m["case"] = o.case_path;
    m["out"] = o.g.out;
    m["overrides"] = std::move(overrides);
    m["deterministic"] = true;
    m["args"] = args;
    write_file(fs::path(o.g.out) / "manifest.json", m.dump(1) + "\n");
}

void say(const Options& o, const std::string& msg) {
    if (!o.g.quiet) std::cout << msg << '\n';
}

int cmd_validate(const Options& o) {
    const CaseFile c = load_case(o.case_path);
    const ValidationReport rep = validate_case(c);
    ojson doc;
    doc["case"] = o.case_path;
    doc["valid"] = rep.empty();
    doc["violations"] = ojson::array();
    for (const auto& v : rep) {
        std::cerr << to_string(v.kind) << ": " << v.message << '\n';
        doc["violations"].push_back({{"kind", to_string(v.kind)}, {"message", v.message}});
    }
    write_file(fs::path(o.g.out) / "validation.json", doc.dump(1) + "\n");
    say(o, rep.empty() ? "case is valid" : "case has " + std::to_string(rep.size()) + " violation(s)");
    return rep.empty() ? 0 : 1;
}

CaseFile load_valid(const std::string& path) {
    CaseFile c = load_case(path);
    const ValidationReport rep = validate_case(c);
    if (!rep.empty()) {
        throw Error(ErrorCode::InvalidCase, std::string(to_string(rep.front().kind)) + ": " + rep.front().message);
    }
    return c;
}

int cmd_ipf(const Options& o) {
    const CaseFile c = load_valid(o.case_path);
    GisConfig cfg = gis_config(c, o.g);
    if (o.max_outer) cfg.jfng.max_outer = *o.max_outer;
    const fs::path out(o.g.out);
    auto emit = [&](const BoundaryState& bs, const IterationTrace& tr) {
        write_file(out / "boundary_state.json", boundary_state_json(bs));
        std::ostringstream csv;
        write_trace_csv(tr, csv);
        write_file(out / "ipf_trace.csv", csv.str());
    };
    try {
        const IpfOutcome r = integrated_power_flow(c, cfg.jfng);
        emit(r.boundary, r.trace);
        std::ostringstream pf;
        pf << "bus_id,v_pu,theta_deg\n";
        for (const auto& [bus, v] : r.op.voltage) {
            pf << bus << ',' << format_double(std::abs(v)) << ',' << format_double(std::arg(v) * 180.0 / kPi) << '\n';
        }
        write_file(out / "power_flow.csv", pf.str());
        say(o, "ipf converged in " + std::to_string(r.trace.outer.empty() ? 0 : r.trace.outer.size() - 1) +
                   " outer iterations");
        return 0;
    } catch (const MaxOuterExceeded& e) {
        emit(e.partial().state, e.partial().trace);
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}

int cmd_init(const Options& o) {
    const CaseFile c = load_valid(o.case_path);
    const GisConfig cfg = gis_config(c, o.g);
    const fs::path out(o.g.out);
    try {
        const GisResult r = run_emtgis(c, cfg);
        save_snapshot(r.snapshot, (out / "snapshot.json").string());
        write_file(out / "report.json", report_json(r.report, cfg.dt));
        say(o, "snapshot at step " + std::to_string(r.snapshot.timestamp_steps()) +
                   ", splice deviation " + format_double(r.report.max_splice_deviation));
        return 0;
    } catch (const Error& e) {
        ojson rep;
        rep["error"] = std::string(to_string(e.code()));
        rep["stage"] = e.stage();
        rep["message"] = e.what();
        write_file(out / "report.json", rep.dump(1) + "\n");
        std::cerr << "error in stage " << e.stage() << ": " << e.what() << '\n';
        return 3;
    }
}

emt::Event parse_fault(const std::string& spec, double r) {
    const auto at = spec.rfind('@');
    if (at == std::string::npos) {
        throw Error(ErrorCode::InvalidConfig, "fault must be given as BUS@TIME");
    }
    emt::Event ev;
    ev.kind = emt::Event::Kind::Fault;
    ev.target = spec.substr(0, at);
    ev.time = std::stod(spec.substr(at + 1));
    ev.r_fault = r;
    return ev;
}

int cmd_simulate(const Options& o) {
    const CaseFile c = load_valid(o.case_path);
    GisConfig cfg = gis_config(c, o.g);
    std::optional<Snapshot> snap;
    if (!o.zero_state) {
        snap = load_snapshot(o.snapshot);
        if (!o.g.dt) cfg.dt = snap->state.dt;
    }
    const IpfOutcome ipf = integrated_power_flow(c, cfg.jfng);
    const BuiltNetwork full = build_full_network(c, ipf.op);
    emt::SimConfig sc;
    sc.dt = cfg.dt;
    sc.duration = o.duration;
    sc.record = o.probes.empty() ? bus_voltage_probes(c) : o.probes;
    for (const auto& f : o.faults) sc.events.push_back(parse_fault(f, o.fault_r));
    emt::RunResult rr;
    if (snap) {
        if (snap->state.dt != cfg.dt) {
            throw Error(ErrorCode::IncompatibleSnapshot, "snapshot time step differs from --dt");
        }
        const emt::EmtState init = bind_snapshot(*snap, full.net);
        rr = emt::run(full.net, &init, sc);
    } else {
        sc.ramp = emt::RampSpec{0.0, cfg.t_ramp};
        rr = emt::run(full.net, nullptr, sc);
    }
    const fs::path out(o.g.out);
    std::ostringstream csv;
    emt::write_waveforms_csv(rr.waveforms, csv);
    write_file(out / "waveforms.csv", csv.str());
    std::ostringstream bin;
    emt::write_waveforms_binary(rr.waveforms, bin);
    write_file(out / "waveforms.emtw", bin.str());
    say(o, "simulated " + std::to_string(rr.final_state.step) + " steps");
    return 0;
}

int cmd_compare(const Options& o) {
    const CaseFile c = load_valid(o.case_path);
    const GisConfig cfg = gis_config(c, o.g);
    CompareConfig cc;
    cc.window = o.window;
    cc.horizon = o.horizon;
    cc.fault_bus = o.compare_fault;
    cc.self_check = o.self_check;
    try {
        const CompareResult r = compare_schemes(c, cfg, cc);
        write_file(fs::path(o.g.out) / "compare.json", compare_json(r, cfg.dt));
        say(o, "step ratio " + format_double(r.step_ratio) + ", max deviation " +
                   format_double(r.max_steady_deviation));
        return 0;
    } catch (const Error& e) {
        if (e.code() == ErrorCode::SteadyStateTimeout) {
            std::cerr << "error: " << e.what() << '\n';
            return 5;
        }
        throw;
    }
}

int dispatch(const std::vector<std::string>& args, int depth);

int cmd_replay(const Options& o, int depth) {
    std::ifstream in(o.manifest, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "manifest not found: " + o.manifest);
    ojson m;
    try {
        m = ojson::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed manifest: ") + e.what());
    }
    if (depth > 0) throw Error(ErrorCode::InvalidConfig, "a manifest cannot replay another manifest");
    return dispatch(m.at("args").get<std::vector<std::string>>(), depth + 1);
}

int dispatch(const std::vector<std::string>& args, int depth) {
    CLI::App app{"EMT initialization from integrated power flow, phasor snapshots and splicing"};
    app.require_subcommand(1);
    app.fallthrough();
    Options o;
    app.add_option("--out", o.g.out, "output directory");
    app.add_option("--dt", o.g.dt, "EMT time step in seconds");
    app.add_option("--tol-eps1", o.g.eps1, "outer tolerance on ||Phi||");
    app.add_option("--tol-eps2", o.g.eps2, "relative GMRES tolerance");
    app.add_option("--gmres-m", o.g.gmres_m, "GMRES restart dimension");
    app.add_option("--omega", o.g.omega, "finite-difference scale");
    app.add_flag("--quiet", o.g.quiet, "suppress progress output");

    auto* ipf = app.add_subcommand("ipf", "integrated power flow");
    ipf->add_option("case", o.case_path)->required();
    ipf->add_option("--max-outer", o.max_outer, "outer iteration limit");

    auto* init = app.add_subcommand("init", "EMT-GIS initialization to a spliced snapshot");
    init->add_option("case", o.case_path)->required();

    auto* sim = app.add_subcommand("simulate", "run the EMT kernel from a snapshot or zero state");
    sim->add_option("case", o.case_path)->required();
    auto* snap_opt = sim->add_option("--snapshot", o.snapshot, "snapshot file");
    auto* zero_opt = sim->add_flag("--zero-state", o.zero_state, "start from zero state with ramped sources");
    snap_opt->excludes(zero_opt);
    sim->add_option("--duration", o.duration, "simulated seconds");
    sim->add_option("--fault", o.faults, "three-phase fault as BUS@TIME");
    sim->add_option("--fault-r", o.fault_r, "fault resistance, per unit");
    sim->add_option("--probes", o.probes, "probe ids")->delimiter(',');

    auto* cmp = app.add_subcommand("compare", "EMT-GIS against zero-state ramping");
    cmp->add_option("case", o.case_path)->required();
    cmp->add_option("--window", o.window, "comparison window in seconds");
    cmp->add_option("--horizon", o.horizon, "absolute comparison time in seconds");
    cmp->add_option("--fault", o.compare_fault, "bus faulted at the horizon");
    cmp->add_flag("--self-check", o.self_check, "compare the zero-state run with itself");

    auto* val = app.add_subcommand("validate", "check a case file");
    val->add_option("case", o.case_path)->required();

    auto* rep = app.add_subcommand("replay", "re-run the command recorded in a manifest");
    rep->add_option("manifest", o.manifest)->required();

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }
    if (sim->parsed() && !o.zero_state && o.snapshot.empty()) {
        std::cerr << "error: simulate needs --snapshot or --zero-state\n";
        return 1;
    }

    try {
        if (rep->parsed()) return cmd_replay(o, depth);
        fs::create_directories(o.g.out);
        std::string command;
        int code = 1;
        if (val->parsed()) {
            command = "validate";
            write_manifest(o, command, args);
            code = cmd_validate(o);
        } else if (ipf->parsed()) {
            command = "ipf";
            write_manifest(o, command, args);
            code = cmd_ipf(o);
        } else if (init->parsed()) {
            command = "init";
            write_manifest(o, command, args);
            code = cmd_init(o);
        } else if (sim->parsed()) {
            command = "simulate";
            write_manifest(o, command, args);
            code = cmd_simulate(o);
        } else if (cmp->parsed()) {
            command = "compare";
            write_manifest(o, command, args);
            code = cmd_compare(o);
        }
        return code;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        if (sim->parsed() && e.code() == ErrorCode::IncompatibleSnapshot) return 4;
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return dispatch(args, 0);
}
