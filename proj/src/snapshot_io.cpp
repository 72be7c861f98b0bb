#include "emtgis/snapshot_io.hpp"
#include "emtgis/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace emtgis {

using ojson = nlohmann::ordered_json;

namespace {

ojson phases(const std::array<std::vector<double>, emt::kPhases>& x, std::size_t i) {
    return ojson::array({x[0][i], x[1][i], x[2][i]});
}

void set_phases(std::array<std::vector<double>, emt::kPhases>& x, std::size_t i, const ojson& j) {
    if (!j.is_array() || j.size() != emt::kPhases) {
        throw Error(ErrorCode::ParseError, "snapshot entry needs three phase values");
    }
    for (std::size_t k = 0; k < emt::kPhases; ++k) x[k][i] = j[k].get<double>();
}

Provenance parse_provenance(const std::string& s) {
    if (s == "PhasorInit") return Provenance::PhasorInit;
    if (s == "RampInit") return Provenance::RampInit;
    if (s == "Spliced") return Provenance::Spliced;
    throw Error(ErrorCode::ParseError, "unknown snapshot provenance '" + s + "'");
}

}  // namespace

std::string snapshot_to_json(const Snapshot& s) {
    ojson j;
    j["version"] = kSnapshotVersion;
    j["subsystem"] = s.subsystem;
    j["provenance"] = std::string(to_string(s.provenance));
    j["timestamp_steps"] = s.state.step;
    j["dt"] = s.state.dt;
    ojson nodes = ojson::array();
    for (std::size_t i = 0; i < s.nodes.size(); ++i) {
        nodes.push_back({{"node", s.nodes[i]}, {"v", phases(s.state.node_v, i)}});
    }
    j["node_voltages"] = std::move(nodes);
    ojson currents = ojson::array();
    ojson hist = ojson::array();
    for (std::size_t i = 0; i < s.elements.size(); ++i) {
        currents.push_back({{"element", s.elements[i]}, {"i", phases(s.state.elem_i, i)}});
        hist.push_back({{"element", s.elements[i]}, {"v", phases(s.state.elem_v, i)}, {"i", phases(s.state.elem_i, i)}});
    }
    j["branch_currents"] = std::move(currents);
    j["histories"] = std::move(hist);
    ojson machines = ojson::array();
    for (std::size_t i = 0; i < s.machines.size(); ++i) {
        machines.push_back(
            {{"machine", s.machines[i]}, {"delta", s.state.machines[i].delta}, {"omega", s.state.machines[i].omega}});
    }
    j["machine_states"] = std::move(machines);
    ojson controllers = ojson::array();
    for (std::size_t i = 0; i < s.pq_devices.size(); ++i) {
        controllers.push_back(
            {{"device", s.pq_devices[i]}, {"p_cmd", s.state.pq[i].p_cmd}, {"q_cmd", s.state.pq[i].q_cmd},
             {"v_re", s.state.pq[i].v_re}, {"v_im", s.state.pq[i].v_im}});
    }
    j["controller_states"] = std::move(controllers);
    ojson bp = ojson::object();
    for (const auto& [bus, ph] : s.boundary) {
        bp[bus] = {{"v_mag", ph.v.magnitude()},
                   {"v_angle", ph.v.angle()},
                   {"i_mag", ph.i.magnitude()},
                   {"i_angle", ph.i.angle()}};
    }
    j["boundary_phasors"] = std::move(bp);
    return j.dump(1) + "\n";
}

Snapshot snapshot_from_json(const std::string& text) {
    ojson j;
    try {
        j = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed snapshot: ") + e.what());
    }
    try {
        if (j.at("version").get<int>() != kSnapshotVersion) {
            throw Error(ErrorCode::IncompatibleSnapshot, "unsupported snapshot version");
        }
        Snapshot s;
        s.subsystem = j.at("subsystem").get<std::string>();
        s.provenance = parse_provenance(j.at("provenance").get<std::string>());
        s.state.step = j.at("timestamp_steps").get<std::int64_t>();
        s.state.dt = j.at("dt").get<double>();
        const auto& nodes = j.at("node_voltages");
        for (std::size_t k = 0; k < emt::kPhases; ++k) s.state.node_v[k].resize(nodes.size());
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            s.nodes.push_back(nodes[i].at("node").get<std::string>());
            set_phases(s.state.node_v, i, nodes[i].at("v"));
        }
        const auto& hist = j.at("histories");
        for (std::size_t k = 0; k < emt::kPhases; ++k) {
            s.state.elem_v[k].resize(hist.size());
            s.state.elem_i[k].resize(hist.size());
        }
        for (std::size_t i = 0; i < hist.size(); ++i) {
            s.elements.push_back(hist[i].at("element").get<std::string>());
            set_phases(s.state.elem_v, i, hist[i].at("v"));
            set_phases(s.state.elem_i, i, hist[i].at("i"));
        }
        for (const auto& m : j.at("machine_states")) {
            s.machines.push_back(m.at("machine").get<std::string>());
            s.state.machines.push_back({m.at("delta").get<double>(), m.at("omega").get<double>()});
        }
        for (const auto& d : j.value("controller_states", ojson::array())) {
            s.pq_devices.push_back(d.at("device").get<std::string>());
            s.state.pq.push_back({d.at("p_cmd").get<double>(), d.at("q_cmd").get<double>(),
                                  d.at("v_re").get<double>(), d.at("v_im").get<double>()});
        }
        for (const auto& [bus, ph] : j.at("boundary_phasors").items()) {
            s.boundary[bus] = {Phasor(ph.at("v_mag").get<double>(), ph.at("v_angle").get<double>()),
                               Phasor(ph.at("i_mag").get<double>(), ph.at("i_angle").get<double>())};
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed snapshot: ") + e.what());
    }
}

void save_snapshot(const Snapshot& s, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error(ErrorCode::Io, "cannot write snapshot '" + path + "'");
    }
    out << snapshot_to_json(s);
}

Snapshot load_snapshot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(ErrorCode::Io, "snapshot file not found: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return snapshot_from_json(ss.str());
}

}  // namespace emtgis
