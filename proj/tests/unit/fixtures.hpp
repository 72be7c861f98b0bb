#pragma once

#include "emtgis/netmodel.hpp"

#include <json.hpp>

#include <string>

namespace fixtures {

inline std::string case_path(const std::string& name) { return std::string(EMTGIS_SOURCE_DIR) + "/cases/" + name; }

inline emtgis::CaseFile load(const std::string& name) { return emtgis::load_case(case_path(name)); }

/// Slack "1" at 1.0 feeding bus "2" through r + jx; bus 2 has the given kind.
inline nlohmann::json two_bus(double r, double x, double p_load, double q_load, const std::string& kind2 = "PQ") {
    nlohmann::json j;
    j["base_mva"] = 100.0;
    j["frequency_hz"] = 50.0;
    nlohmann::json b2 = {{"id", "2"}, {"kind", kind2}, {"base_kv", 110.0}};
    if (p_load != 0.0) b2["p_load"] = p_load;
    if (q_load != 0.0) b2["q_load"] = q_load;
    j["buses"] = {{{"id", "1"}, {"kind", "Slack"}, {"base_kv", 110.0}, {"v_set", 1.0}}, b2};
    j["branches"] = {{{"from", "1"}, {"to", "2"}, {"r", r}, {"x", x}}};
    j["machines"] = {{{"bus", "1"}, {"kind", "IdealSource"}, {"v_set", 1.0}}};
    j["grbcs"] = nlohmann::json::array();
    return j;
}

inline nlohmann::json scripted(const std::string& name, const std::string& bus, const std::string& p,
                               const std::string& q) {
    return {{"name", name},
            {"boundary_bus", bus},
            {"kind", "ScriptedResponse"},
            {"payload", {{"p", p}, {"q", q}}}};
}

inline emtgis::CaseFile parse(const nlohmann::json& j) { return emtgis::parse_case(j.dump()); }

}  // namespace fixtures
