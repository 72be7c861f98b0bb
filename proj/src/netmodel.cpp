#include "emtgis/netmodel.hpp"
#include "emtgis/error.hpp"
#include "emtgis/expression.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace emtgis {

using nlohmann::json;

const BusRecord* CaseFile::find_bus(const std::string& id) const {
    auto it = std::find_if(buses.begin(), buses.end(), [&](const BusRecord& b) { return b.id == id; });
    return it == buses.end() ? nullptr : &*it;
}

double CaseFile::setting(const std::string& key, double fallback) const {
    auto it = settings.find(key);
    return it == settings.end() ? fallback : it->second;
}

std::string_view to_string(ViolationKind kind) {
    switch (kind) {
    case ViolationKind::DuplicateId: return "DuplicateId";
    case ViolationKind::UnknownBus: return "UnknownBus";
    case ViolationKind::BoundaryMultiplyOwned: return "BoundaryMultiplyOwned";
    case ViolationKind::BoundaryUnowned: return "BoundaryUnowned";
    case ViolationKind::SlackCount: return "SlackCount";
    case ViolationKind::ZeroImpedance: return "ZeroImpedance";
    case ViolationKind::BadTap: return "BadTap";
    case ViolationKind::BadMachine: return "BadMachine";
    case ViolationKind::MissingSetpoint: return "MissingSetpoint";
    case ViolationKind::BadBaseKv: return "BadBaseKv";
    case ViolationKind::BadBase: return "BadBase";
    case ViolationKind::Disconnected: return "Disconnected";
    case ViolationKind::BadGrbc: return "BadGrbc";
    }
    return "Unknown";
}

std::string_view to_string(BusKind kind) {
    switch (kind) {
    case BusKind::Slack: return "Slack";
    case BusKind::PV: return "PV";
    case BusKind::PQ: return "PQ";
    case BusKind::Boundary: return "Boundary";
    }
    return "Unknown";
}

namespace {

// Union-find over string ids.
class Components {
public:
    void add(const std::string& id) {
        if (index_.emplace(id, parent_.size()).second) {
            parent_.push_back(parent_.size());
        }
    }
    void join(const std::string& a, const std::string& b) {
        auto ia = index_.find(a);
        auto ib = index_.find(b);
        if (ia == index_.end() || ib == index_.end()) {
            return;
        }
        parent_[root(ia->second)] = root(ib->second);
    }
    std::size_t group(const std::string& id) { return root(index_.at(id)); }

private:
    std::size_t root(std::size_t i) {
        while (parent_[i] != i) {
            parent_[i] = parent_[parent_[i]];
            i = parent_[i];
        }
        return i;
    }
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::size_t> parent_;
};

void check_branches(const std::vector<BranchRecord>& branches, const std::set<std::string>& known,
                    const std::string& where, ValidationReport& report) {
    for (const auto& br : branches) {
        const std::string label = where + "branch " + br.from + "-" + br.to;
        for (const auto* end : {&br.from, &br.to}) {
            if (!known.count(*end)) {
                report.push_back({ViolationKind::UnknownBus, label + " references unknown bus '" + *end + "'"});
            }
        }
        if (br.r == 0.0 && br.x == 0.0) {
            report.push_back({ViolationKind::ZeroImpedance, label + " has zero impedance"});
        }
        if (!(br.tap > 0.0)) {
            report.push_back({ViolationKind::BadTap, label + " has non-positive tap"});
        }
    }
}

void check_machines(const std::vector<MachineRecord>& machines, const std::vector<BusRecord>& buses,
                    const std::string& where, ValidationReport& report) {
    std::set<std::string> seen;
    for (const auto& m : machines) {
        auto it = std::find_if(buses.begin(), buses.end(), [&](const BusRecord& b) { return b.id == m.bus; });
        if (it == buses.end()) {
            report.push_back({ViolationKind::UnknownBus, where + "machine references unknown bus '" + m.bus + "'"});
            continue;
        }
        if (!seen.insert(m.bus).second) {
            report.push_back({ViolationKind::BadMachine, where + "more than one machine at bus '" + m.bus + "'"});
        }
        if (it->kind != BusKind::Slack && it->kind != BusKind::PV) {
            report.push_back({ViolationKind::BadMachine, where + "machine at bus '" + m.bus + "' which is not Slack/PV"});
        }
        if (m.kind == MachineKind::SynchronousSimplified && !(m.xd_transient > 0.0)) {
            report.push_back({ViolationKind::BadMachine, where + "machine at '" + m.bus + "' needs xd_transient > 0"});
        }
        if (m.kind == MachineKind::SynchronousSimplified && !(m.inertia_h > 0.0)) {
            report.push_back({ViolationKind::BadMachine, where + "machine at '" + m.bus + "' needs inertia_h > 0"});
        }
    }
    for (const auto& b : buses) {
        if (b.kind == BusKind::Slack || b.kind == BusKind::PV) {
            bool has_set = b.v_set.has_value();
            for (const auto& m : machines) {
                has_set = has_set || (m.bus == b.id && m.v_set.has_value());
            }
            if (!has_set) {
                report.push_back({ViolationKind::MissingSetpoint, where + "bus '" + b.id + "' has no v_set"});
            }
        }
    }
}

}  // namespace

ValidationReport validate_case(const CaseFile& c) {
    ValidationReport report;
    if (!(c.base_mva > 0.0) || !(c.frequency_hz > 0.0)) {
        report.push_back({ViolationKind::BadBase, "base_mva and frequency_hz must be positive"});
    }

    std::set<std::string> all_ids;
    std::set<std::string> main_ids;
    auto register_bus = [&](const BusRecord& b, const std::string& where) {
        if (!all_ids.insert(b.id).second) {
            report.push_back({ViolationKind::DuplicateId, where + "duplicate bus id '" + b.id + "'"});
        }
        if (!(b.base_kv > 0.0)) {
            report.push_back({ViolationKind::BadBaseKv, where + "bus '" + b.id + "' has base_kv <= 0"});
        }
    };
    for (const auto& b : c.buses) {
        register_bus(b, "");
        main_ids.insert(b.id);
    }

    check_branches(c.branches, main_ids, "", report);
    check_machines(c.machines, c.buses, "", report);

    // Boundary ownership.
    std::map<std::string, int> owners;
    std::set<std::string> grbc_names;
    for (const auto& g : c.grbcs) {
        if (!grbc_names.insert(g.name).second) {
            report.push_back({ViolationKind::DuplicateId, "duplicate GRBC name '" + g.name + "'"});
        }
        const BusRecord* b = c.find_bus(g.boundary_bus);
        if (b == nullptr) {
            report.push_back({ViolationKind::UnknownBus, "GRBC '" + g.name + "' references unknown bus '" + g.boundary_bus + "'"});
            continue;
        }
        if (b->kind != BusKind::Boundary) {
            report.push_back({ViolationKind::BadGrbc, "GRBC '" + g.name + "' boundary bus '" + g.boundary_bus + "' is not marked Boundary"});
        }
        ++owners[g.boundary_bus];
    }
    for (const auto& b : c.buses) {
        if (b.kind != BusKind::Boundary) {
            continue;
        }
        const int n = owners.count(b.id) ? owners.at(b.id) : 0;
        if (n == 0) {
            report.push_back({ViolationKind::BoundaryUnowned, "boundary bus '" + b.id + "' has no GRBC"});
        } else if (n > 1) {
            report.push_back({ViolationKind::BoundaryMultiplyOwned,
                              "boundary bus '" + b.id + "' appears in " + std::to_string(n) + " GRBC declarations"});
        }
    }

    // Islands of the main system: at most one Slack each, and some voltage reference.
    Components islands;
    for (const auto& b : c.buses) {
        islands.add(b.id);
    }
    for (const auto& br : c.branches) {
        islands.join(br.from, br.to);
    }
    struct IslandRefs {
        std::string first;
        int slack = 0;
        int boundary = 0;
    };
    std::map<std::size_t, IslandRefs> refs;
    std::vector<std::size_t> order;
    for (const auto& b : c.buses) {
        const std::size_t g = islands.group(b.id);
        auto [it, fresh] = refs.try_emplace(g);
        if (fresh) {
            it->second.first = b.id;
            order.push_back(g);
        }
        it->second.slack += b.kind == BusKind::Slack ? 1 : 0;
        it->second.boundary += b.kind == BusKind::Boundary ? 1 : 0;
    }
    for (std::size_t g : order) {
        const auto& r = refs[g];
        if (r.slack > 1) {
            report.push_back({ViolationKind::SlackCount, "island containing '" + r.first + "' has " +
                                                             std::to_string(r.slack) + " slack buses"});
        } else if (r.slack == 0 && r.boundary == 0) {
            report.push_back({ViolationKind::Disconnected, "island containing '" + r.first + "' has no slack or boundary bus"});
        }
    }

    // GRBC payloads.
    for (const auto& g : c.grbcs) {
        const std::string where = "GRBC '" + g.name + "': ";
        if (const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload)) {
            std::set<std::string> known{g.boundary_bus};
            for (const auto& b : wb->buses) {
                register_bus(b, where);
                known.insert(b.id);
                if (b.kind == BusKind::Slack || b.kind == BusKind::Boundary) {
                    report.push_back({ViolationKind::BadGrbc, where + "internal bus '" + b.id + "' must be PV or PQ"});
                }
            }
            check_branches(wb->branches, known, where, report);
            check_machines(wb->machines, wb->buses, where, report);
            Components inner;
            for (const auto& id : known) {
                inner.add(id);
            }
            for (const auto& br : wb->branches) {
                inner.join(br.from, br.to);
            }
            for (const auto& b : wb->buses) {
                if (inner.group(b.id) != inner.group(g.boundary_bus)) {
                    report.push_back({ViolationKind::Disconnected, where + "internal bus '" + b.id + "' is not connected to the boundary"});
                }
            }
        } else if (const auto* sc = std::get_if<ScriptedPayload>(&g.payload)) {
            if (!sc->p_expr || !sc->q_expr) {
                report.push_back({ViolationKind::BadGrbc, where + "scripted response needs p and q expressions"});
            }
            if (!(sc->tau_s > 0.0)) {
                report.push_back({ViolationKind::BadGrbc, where + "tau_s must be positive"});
            }
        } else if (const auto* hv = std::get_if<HvdcPayload>(&g.payload)) {
            if (!std::isfinite(hv->p_dc) || !std::isfinite(hv->tan_phi) || !(hv->tau_s > 0.0)) {
                report.push_back({ViolationKind::BadGrbc, where + "invalid HVDC terminal parameters"});
            }
        }
    }
    return report;
}

int AdmittanceMatrix::index_of(const std::string& id) const {
    auto it = std::find(bus_ids.begin(), bus_ids.end(), id);
    return it == bus_ids.end() ? -1 : static_cast<int>(it - bus_ids.begin());
}

AdmittanceMatrix assemble_admittance(const std::vector<BusRecord>& buses,
                                     const std::vector<BranchRecord>& branches) {
    AdmittanceMatrix y;
    const auto n = static_cast<Eigen::Index>(buses.size());
    y.y = Eigen::MatrixXcd::Zero(n, n);
    std::unordered_map<std::string, Eigen::Index> index;
    for (Eigen::Index i = 0; i < n; ++i) {
        y.bus_ids.push_back(buses[static_cast<std::size_t>(i)].id);
        index[y.bus_ids.back()] = i;
        const auto& b = buses[static_cast<std::size_t>(i)];
        y.y(i, i) += Complex(b.shunt_g, b.shunt_b);
    }
    std::vector<bool> connected(static_cast<std::size_t>(n), false);
    for (const auto& br : branches) {
        auto f = index.find(br.from);
        auto t = index.find(br.to);
        if (f == index.end() || t == index.end()) {
            throw Error(ErrorCode::InvalidCase, "branch " + br.from + "-" + br.to + " references a bus outside the network");
        }
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ysh(0.0, br.b_half);
        const double t2 = br.tap * br.tap;
        y.y(f->second, f->second) += (ys + ysh) / t2;
        y.y(t->second, t->second) += ys + ysh;
        y.y(f->second, t->second) -= ys / br.tap;
        y.y(t->second, f->second) -= ys / br.tap;
        connected[static_cast<std::size_t>(f->second)] = true;
        connected[static_cast<std::size_t>(t->second)] = true;
    }
    if (n > 1) {
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& b = buses[static_cast<std::size_t>(i)];
            if (!connected[static_cast<std::size_t>(i)] && b.shunt_g == 0.0 && b.shunt_b == 0.0) {
                throw Error(ErrorCode::SingularNetwork, "bus '" + b.id + "' has no connection");
            }
        }
    }
    return y;
}

AdmittanceMatrix build_admittance(const CaseFile& c, bool exclude_grbc) {
    std::vector<BusRecord> buses = c.buses;
    std::vector<BranchRecord> branches = c.branches;
    if (!exclude_grbc) {
        for (const auto& g : c.grbcs) {
            if (const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload)) {
                buses.insert(buses.end(), wb->buses.begin(), wb->buses.end());
                branches.insert(branches.end(), wb->branches.begin(), wb->branches.end());
            }
        }
    }
    return assemble_admittance(buses, branches);
}

// ---------------------------------------------------------------------------
// JSON parsing
// ---------------------------------------------------------------------------

namespace {

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    auto it = j.find(key);
    return (it == j.end() || it->is_null()) ? fallback : it->get<T>();
}

std::optional<double> get_opt(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) {
        return std::nullopt;
    }
    return it->get<double>();
}

BusKind parse_bus_kind(const std::string& s) {
    if (s == "Slack") return BusKind::Slack;
    if (s == "PV") return BusKind::PV;
    if (s == "PQ") return BusKind::PQ;
    if (s == "Boundary") return BusKind::Boundary;
    throw Error(ErrorCode::ParseError, "unknown bus kind '" + s + "'");
}

MachineKind parse_machine_kind(const std::string& s) {
    if (s == "IdealSource") return MachineKind::IdealSource;
    if (s == "SynchronousSimplified") return MachineKind::SynchronousSimplified;
    throw Error(ErrorCode::ParseError, "unknown machine kind '" + s + "'");
}

BusRecord parse_bus(const json& j) {
    BusRecord b;
    b.id = j.at("id").get<std::string>();
    b.kind = parse_bus_kind(j.at("kind").get<std::string>());
    b.base_kv = get_or(j, "base_kv", 1.0);
    b.v_set = get_opt(j, "v_set");
    b.angle = get_or(j, "angle_deg", 0.0) * kPi / 180.0;
    b.p_load = get_or(j, "p_load", 0.0);
    b.q_load = get_or(j, "q_load", 0.0);
    b.shunt_g = get_or(j, "shunt_g", 0.0);
    b.shunt_b = get_or(j, "shunt_b", 0.0);
    return b;
}

BranchRecord parse_branch(const json& j) {
    BranchRecord br;
    br.from = j.at("from").get<std::string>();
    br.to = j.at("to").get<std::string>();
    br.r = get_or(j, "r", 0.0);
    br.x = get_or(j, "x", 0.0);
    br.b_half = get_or(j, "b_half", 0.0);
    br.tap = get_or(j, "tap", 1.0);
    return br;
}

MachineRecord parse_machine(const json& j) {
    MachineRecord m;
    m.bus = j.at("bus").get<std::string>();
    m.kind = parse_machine_kind(j.at("kind").get<std::string>());
    m.xd_transient = get_or(j, "xd_transient", 0.0);
    m.p_set = get_or(j, "p_set", 0.0);
    m.v_set = get_opt(j, "v_set");
    m.inertia_h = get_or(j, "inertia_h", 0.0);
    m.damping = get_or(j, "damping", 0.0);
    return m;
}

GrbcDeclaration parse_grbc(const json& j) {
    GrbcDeclaration g;
    g.name = j.at("name").get<std::string>();
    g.boundary_bus = j.at("boundary_bus").get<std::string>();
    const std::string kind = j.at("kind").get<std::string>();
    const json payload = j.value("payload", json::object());
    if (kind == "WhiteBoxNetwork") {
        g.kind = GrbcKind::WhiteBoxNetwork;
        WhiteBoxPayload wb;
        wb.oracle = get_or(payload, "oracle", false);
        for (const auto& b : payload.value("buses", json::array())) wb.buses.push_back(parse_bus(b));
        for (const auto& b : payload.value("branches", json::array())) wb.branches.push_back(parse_branch(b));
        for (const auto& m : payload.value("machines", json::array())) wb.machines.push_back(parse_machine(m));
        g.payload = std::move(wb);
    } else if (kind == "ScriptedResponse") {
        g.kind = GrbcKind::ScriptedResponse;
        ScriptedPayload sc;
        sc.p_source = payload.at("p").get<std::string>();
        sc.q_source = payload.at("q").get<std::string>();
        sc.p_expr = Expression::parse(sc.p_source);
        sc.q_expr = Expression::parse(sc.q_source);
        sc.tau_s = get_or(payload, "tau_s", sc.tau_s);
        g.payload = std::move(sc);
    } else if (kind == "SimplifiedHvdcTerminal") {
        g.kind = GrbcKind::SimplifiedHvdcTerminal;
        HvdcPayload hv;
        hv.p_dc = payload.at("p_dc").get<double>();
        hv.tan_phi = payload.at("tan_phi").get<double>();
        hv.tau_s = get_or(payload, "tau_s", hv.tau_s);
        g.payload = hv;
    } else {
        throw Error(ErrorCode::ParseError, "unknown GRBC kind '" + kind + "'");
    }
    return g;
}

}  // namespace

CaseFile parse_case(const std::string& json_text) {
    try {
        const json j = json::parse(json_text);
        CaseFile c;
        c.base_mva = get_or(j, "base_mva", 100.0);
        c.frequency_hz = get_or(j, "frequency_hz", 50.0);
        for (const auto& b : j.value("buses", json::array())) c.buses.push_back(parse_bus(b));
        for (const auto& b : j.value("branches", json::array())) c.branches.push_back(parse_branch(b));
        for (const auto& m : j.value("machines", json::array())) c.machines.push_back(parse_machine(m));
        for (const auto& g : j.value("grbcs", json::array())) c.grbcs.push_back(parse_grbc(g));
        const json settings = j.value("settings", json::object());
        for (const auto& [key, value] : settings.items()) {
            c.settings[key] = value.get<double>();
        }
        return c;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("malformed case file: ") + e.what());
    }
}

CaseFile load_case(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::Io, "case file not found: " + path);
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_case(buf.str());
}

}  // namespace emtgis
