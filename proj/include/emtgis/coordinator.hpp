#pragma once

// Boundary coordination: assembles the boundary mismatch Phi(x) over the
// torn buses and drives it to zero with a Jacobian-free Newton-GMRES(m)
// iteration whose right preconditioner is refined by rank-one secant
// corrections.

#include "emtgis/error.hpp"
#include "emtgis/netmodel.hpp"

#include <Eigen/Dense>

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace emtgis {

struct JfngConfig {
    double eps1 = 1e-6;        // outer tolerance on ||Phi||_2
    double eps2 = 1e-3;        // relative GMRES tolerance
    int m_restart = 20;
    double omega = 1e-6;       // finite-difference scale factor
    int max_outer = 50;
    double eps_den = 1e-12;    // rank-one update denominator guard
    int max_line_search = 4;
    int max_omega_halvings = 5;
    double voltage_floor = 0.2;
    double pf_tol = 1e-11;     // main-system power-flow tolerance inside residual
    int threads = 1;           // concurrent GRBC evaluations (0 = hardware)

    void validate() const;
};

/// x = (V_1..V_n, theta_1..theta_n); phi = (dP_1..dP_n, dQ_1..dQ_n).
struct BoundaryState {
    std::vector<std::string> bus_ids;
    Eigen::VectorXd x;
    Eigen::VectorXd p;
    Eigen::VectorXd q;
    Eigen::VectorXd p_tilde;
    Eigen::VectorXd q_tilde;
    Eigen::VectorXd phi;

    [[nodiscard]] Eigen::Index n() const { return static_cast<Eigen::Index>(bus_ids.size()); }
};

struct Preconditioner {
    Eigen::MatrixXd m;

    static Preconditioner identity(Eigen::Index dim) { return {Eigen::MatrixXd::Identity(dim, dim)}; }
};

struct GmresResult {
    Eigen::VectorXd dx;
    int iterations = 0;
    double rho = 0.0;
    double eps_g = 0.0;
    std::vector<double> rho_history;
    bool converged = false;
    bool restarted = false;
    int precond_updates = 0;
    int precond_skips = 0;
};

struct OuterRecord {
    double phi_norm = 0.0;
    int inner_iters = 0;
    double rho_final = 0.0;
    std::vector<double> rho_history;
    bool restarted = false;
    int line_search_halvings = 0;
    double wall_seconds = 0.0;
};

struct IterationTrace {
    enum class Status { Running, Converged, MaxOuterExceeded };
    std::vector<OuterRecord> outer;
    Status status = Status::Running;
    int residual_evaluations = 0;
    int precond_skips = 0;
    int opaque_grbcs = 0;

    [[nodiscard]] double final_phi_norm() const { return outer.empty() ? 0.0 : outer.back().phi_norm; }
};

struct JfngResult {
    BoundaryState state;
    IterationTrace trace;
};

class MaxOuterExceeded : public Error {
public:
    MaxOuterExceeded(const std::string& message, JfngResult partial)
        : Error(ErrorCode::MaxOuterExceeded, message), partial_(std::move(partial)) {}
    [[nodiscard]] const JfngResult& partial() const noexcept { return partial_; }

private:
    JfngResult partial_;
};

using VectorFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Boundary buses in GRBC declaration order.
std::vector<std::string> boundary_order(const std::vector<GrbcDeclaration>& grbcs);

/// Evaluates both torn sides at the voltages in `x` and assembles Phi.
BoundaryState residual(const CaseFile& c, const std::vector<GrbcDeclaration>& grbcs,
                       const Eigen::VectorXd& x, const JfngConfig& cfg = {});

/// (Phi(x + omega z) - Phi(x)) / omega with one residual evaluation.
Eigen::VectorXd directional_difference(const Eigen::VectorXd& phi_x, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& z, double omega, const VectorFn& residual_fn);

/// Rank-one secant correction M += (dx - M dphi) dx^T M / (dx^T M dphi).
/// Returns false (M untouched) when the denominator is below the guard.
bool precond_update(Preconditioner& m, const Eigen::VectorXd& dx, const Eigen::VectorXd& dphi, double eps_den);

/// One GMRES(m) cycle on Phi'(x) dx = -Phi(x) with right preconditioning.
/// `probe(z)` returns the action Phi'(x) z. M is corrected after every probe.
GmresResult gmres_m(const Eigen::VectorXd& phi_at_x, const VectorFn& probe, Preconditioner& m,
                    const JfngConfig& cfg);

JfngResult jfng_solve(const CaseFile& c, const std::vector<GrbcDeclaration>& grbcs,
                      const Eigen::VectorXd& x0, const JfngConfig& cfg = {});

/// Flat start x0 = (1..1, 0..0).
Eigen::VectorXd flat_start(std::size_t n_boundaries);

void write_trace_csv(const IterationTrace& trace, std::ostream& out);
std::string boundary_state_json(const BoundaryState& state);

}  // namespace emtgis
