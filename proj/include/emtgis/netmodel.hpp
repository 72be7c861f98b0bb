#pragma once

// Grid data model: bus/branch/machine records, GRBC declarations, case
// validation and nodal admittance assembly. All quantities are per-unit on
// the case base; angles are radians in memory and degrees in case files.

#include "emtgis/phasor.hpp"

#include <Eigen/Dense>

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace emtgis {

class Expression;

enum class BusKind { Slack, PV, PQ, Boundary };

struct BusRecord {
    std::string id;
    BusKind kind = BusKind::PQ;
    double base_kv = 1.0;
    std::optional<double> v_set;  // Slack / PV only
    double angle = 0.0;           // Slack reference angle, radians
    double p_load = 0.0;
    double q_load = 0.0;
    double shunt_g = 0.0;
    double shunt_b = 0.0;
};

struct BranchRecord {
    std::string from;
    std::string to;
    double r = 0.0;
    double x = 0.0;
    double b_half = 0.0;
    double tap = 1.0;
};

enum class MachineKind { IdealSource, SynchronousSimplified };

struct MachineRecord {
    std::string bus;
    MachineKind kind = MachineKind::IdealSource;
    double xd_transient = 0.0;
    double p_set = 0.0;
    std::optional<double> v_set;
    double inertia_h = 0.0;
    double damping = 0.0;  // per-unit power per per-unit speed deviation
};

enum class GrbcKind { WhiteBoxNetwork, ScriptedResponse, SimplifiedHvdcTerminal };

/// Internal network of a white-box GRBC. The boundary bus is referenced by
/// id from `branches` but is not listed in `buses`.
struct WhiteBoxPayload {
    bool oracle = false;
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
    std::vector<MachineRecord> machines;
};

struct ScriptedPayload {
    std::string p_source;
    std::string q_source;
    std::shared_ptr<const Expression> p_expr;
    std::shared_ptr<const Expression> q_expr;
    double tau_s = 0.02;  // lag of the EMT realisation
};

struct HvdcPayload {
    double p_dc = 0.0;
    double tan_phi = 0.0;
    double tau_s = 0.05;
};

using GrbcPayload = std::variant<WhiteBoxPayload, ScriptedPayload, HvdcPayload>;

struct GrbcDeclaration {
    std::string name;
    std::string boundary_bus;
    GrbcKind kind = GrbcKind::ScriptedResponse;
    GrbcPayload payload;
};

struct CaseFile {
    double base_mva = 100.0;
    double frequency_hz = 50.0;
    std::vector<BusRecord> buses;
    std::vector<BranchRecord> branches;
    std::vector<MachineRecord> machines;
    std::vector<GrbcDeclaration> grbcs;
    /// Numeric defaults that CLI flags may override (dt, t_ramp, eps1, ...).
    std::map<std::string, double> settings;

    [[nodiscard]] double omega() const { return 2.0 * kPi * frequency_hz; }
    [[nodiscard]] double period() const { return 1.0 / frequency_hz; }
    [[nodiscard]] const BusRecord* find_bus(const std::string& id) const;
    [[nodiscard]] double setting(const std::string& key, double fallback) const;
};

enum class ViolationKind {
    DuplicateId,
    UnknownBus,
    BoundaryMultiplyOwned,
    BoundaryUnowned,
    SlackCount,
    ZeroImpedance,
    BadTap,
    BadMachine,
    MissingSetpoint,
    BadBaseKv,
    BadBase,
    Disconnected,
    BadGrbc,
};

struct Violation {
    ViolationKind kind;
    std::string message;
};

using ValidationReport = std::vector<Violation>;

std::string_view to_string(ViolationKind kind);
std::string_view to_string(BusKind kind);

/// Returns every invariant violation of `c` in a stable order; empty means valid.
ValidationReport validate_case(const CaseFile& c);

/// Dense nodal admittance matrix with its bus ordering.
struct AdmittanceMatrix {
    std::vector<std::string> bus_ids;
    Eigen::MatrixXcd y;

    [[nodiscard]] std::size_t dimension() const { return bus_ids.size(); }
    [[nodiscard]] int index_of(const std::string& id) const;
};

/// Standard pi-model assembly. With `exclude_grbc` the internal networks of
/// white-box GRBCs are left out and only the main system (boundary buses
/// included) is assembled.
AdmittanceMatrix build_admittance(const CaseFile& c, bool exclude_grbc);

/// Assembles an arbitrary bus/branch set in the given bus order.
AdmittanceMatrix assemble_admittance(const std::vector<BusRecord>& buses,
                                     const std::vector<BranchRecord>& branches);

CaseFile parse_case(const std::string& json_text);
CaseFile load_case(const std::string& path);

}  // namespace emtgis
