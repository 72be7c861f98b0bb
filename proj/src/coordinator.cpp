#include "emtgis/coordinator.hpp"
#include "emtgis/grbc.hpp"
#include "emtgis/powerflow.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <future>
#include <map>
#include <optional>
#include <ostream>
#include <thread>

namespace emtgis {

void JfngConfig::validate() const {
    if (!(eps1 > 0.0) || !(eps2 > 0.0) || !(omega > 0.0) || m_restart < 1 || max_outer < 0) {
        throw Error(ErrorCode::InvalidConfig, "JFNG config requires eps1, eps2, omega > 0 and m_restart >= 1");
    }
}

std::vector<std::string> boundary_order(const std::vector<GrbcDeclaration>& grbcs) {
    std::vector<std::string> ids;
    ids.reserve(grbcs.size());
    for (const auto& g : grbcs) {
        ids.push_back(g.boundary_bus);
    }
    return ids;
}

Eigen::VectorXd flat_start(std::size_t n_boundaries) {
    const auto n = static_cast<Eigen::Index>(n_boundaries);
    Eigen::VectorXd x = Eigen::VectorXd::Zero(2 * n);
    x.head(n).setOnes();
    return x;
}

BoundaryState residual(const CaseFile& c, const std::vector<GrbcDeclaration>& grbcs,
                       const Eigen::VectorXd& x, const JfngConfig& cfg) {
    const auto n = static_cast<Eigen::Index>(grbcs.size());
    if (x.size() != 2 * n) {
        throw Error(ErrorCode::InvalidConfig, "boundary vector has wrong length");
    }
    BoundaryState st;
    st.bus_ids = boundary_order(grbcs);
    st.x = x;
    std::map<std::string, Phasor> voltages;
    std::vector<Phasor> per_grbc;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(x(i) > 0.0) || !std::isfinite(x(i)) || !std::isfinite(x(n + i))) {
            throw Error(ErrorCode::NonFinite, "boundary voltage magnitude must be positive and finite");
        }
        per_grbc.emplace_back(x(i), x(n + i));
        voltages[st.bus_ids[static_cast<std::size_t>(i)]] = per_grbc.back();
    }

    auto eval_one = [&](std::size_t i) {
        try {
            return grbc::evaluate(grbcs[i], per_grbc[i]);
        } catch (Error& e) {
            e.set_stage("grbc:" + grbcs[i].name);
            throw;
        }
    };

    // GRBC evaluations fan out; the main-system solve runs on this thread.
    unsigned threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::max(1u, std::thread::hardware_concurrency());
    std::vector<std::future<grbc::GrbcEvaluation>> pending;
    std::vector<grbc::GrbcEvaluation> evals(grbcs.size());
    const bool parallel = threads > 1 && grbcs.size() > 1;
    if (parallel) {
        for (std::size_t i = 0; i < grbcs.size(); ++i) {
            pending.push_back(std::async(std::launch::async, eval_one, i));
        }
    }
    PowerFlowSolution main_sol;
    try {
        main_sol = solve_main(c, voltages, {cfg.pf_tol, 30});
    } catch (Error& e) {
        for (auto& f : pending) {
            f.wait();
        }
        e.set_stage("main");
        throw;
    }
    for (std::size_t i = 0; i < grbcs.size(); ++i) {
        evals[i] = parallel ? pending[i].get() : eval_one(i);
    }

    const auto inj = boundary_injections(main_sol, c);
    st.p.resize(n);
    st.q.resize(n);
    st.p_tilde.resize(n);
    st.q_tilde.resize(n);
    st.phi.resize(2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& [p, q] = inj.at(st.bus_ids[static_cast<std::size_t>(i)]);
        st.p(i) = p;
        st.q(i) = q;
        st.p_tilde(i) = evals[static_cast<std::size_t>(i)].p_tilde;
        st.q_tilde(i) = evals[static_cast<std::size_t>(i)].q_tilde;
        st.phi(i) = st.p(i) + st.p_tilde(i);
        st.phi(n + i) = st.q(i) + st.q_tilde(i);
    }
    return st;
}

Eigen::VectorXd directional_difference(const Eigen::VectorXd& phi_x, const Eigen::VectorXd& x,
                                       const Eigen::VectorXd& z, double omega, const VectorFn& residual_fn) {
    if (!(omega > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "omega must be positive");
    }
    const Eigen::VectorXd shifted = residual_fn(x + omega * z);
    Eigen::VectorXd out = (shifted - phi_x) / omega;
    if (!out.allFinite()) {
        throw Error(ErrorCode::NonFinite, "directional difference is not finite");
    }
    return out;
}

bool precond_update(Preconditioner& m, const Eigen::VectorXd& dx, const Eigen::VectorXd& dphi, double eps_den) {
    const Eigen::RowVectorXd dx_t_m = dx.transpose() * m.m;
    const double den = dx_t_m.dot(dphi);
    if (!(std::abs(den) >= eps_den * dx.norm() * dphi.norm()) || den == 0.0) {
        return false;
    }
    m.m += (dx - m.m * dphi) * dx_t_m / den;
    return true;
}

namespace {

void apply_givens(double& a, double& b, double c, double s) {
    const double t = c * a + s * b;
    b = -s * a + c * b;
    a = t;
}

}  // namespace

GmresResult gmres_m(const Eigen::VectorXd& phi_at_x, const VectorFn& probe, Preconditioner& m,
                    const JfngConfig& cfg) {
    const Eigen::Index dim = phi_at_x.size();
    const int mr = cfg.m_restart;
    GmresResult out;
    const Eigen::VectorXd r0 = -phi_at_x;
    const double beta = r0.norm();
    if (!(beta > 0.0)) {
        throw Error(ErrorCode::InvalidConfig, "gmres_m requires a nonzero residual");
    }
    out.eps_g = cfg.eps2 * beta;

    Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(dim, mr + 1);
    Eigen::MatrixXd zs = Eigen::MatrixXd::Zero(dim, mr);
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(mr + 1, mr);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(mr + 1);
    std::vector<double> cs(static_cast<std::size_t>(mr)), sn(static_cast<std::size_t>(mr));
    basis.col(0) = r0 / beta;
    g(0) = beta;

    int l = 0;
    double rho = beta;
    for (; l < mr; ++l) {
        const Eigen::VectorXd z = m.m * basis.col(l);
        zs.col(l) = z;
        Eigen::VectorXd w = probe(z);
        const Eigen::VectorXd jz = w;

        // Modified Gram-Schmidt, with a second pass on loss of orthogonality.
        for (int i = 0; i <= l; ++i) {
            h(i, l) = w.dot(basis.col(i));
            w -= h(i, l) * basis.col(i);
        }
        double wn = w.norm();
        if (wn > 0.0) {
            double loss = 0.0;
            for (int i = 0; i <= l; ++i) {
                loss = std::max(loss, std::abs(w.dot(basis.col(i))) / wn);
            }
            if (loss > 1e-8) {
                for (int i = 0; i <= l; ++i) {
                    const double corr = w.dot(basis.col(i));
                    h(i, l) += corr;
                    w -= corr * basis.col(i);
                }
                wn = w.norm();
            }
        }
        h(l + 1, l) = wn;

        // Secant correction of M from the probe pair (applied after the new
        // Krylov vector is formed).
        if (precond_update(m, z, jz, cfg.eps_den)) {
            ++out.precond_updates;
        } else {
            ++out.precond_skips;
        }

        for (int i = 0; i < l; ++i) {
            apply_givens(h(i, l), h(i + 1, l), cs[static_cast<std::size_t>(i)], sn[static_cast<std::size_t>(i)]);
        }
        const double a = h(l, l);
        const double b = h(l + 1, l);
        const double r = std::hypot(a, b);
        const double c = r == 0.0 ? 1.0 : a / r;
        const double s = r == 0.0 ? 0.0 : b / r;
        cs[static_cast<std::size_t>(l)] = c;
        sn[static_cast<std::size_t>(l)] = s;
        h(l, l) = r;
        h(l + 1, l) = 0.0;
        g(l + 1) = -s * g(l);
        g(l) = c * g(l);
        rho = std::abs(g(l + 1));
        out.rho_history.push_back(rho);

        if (rho <= out.eps_g) {
            out.converged = true;
            ++l;
            break;
        }
        if (wn < 1e-14) {
            throw Error(ErrorCode::InnerBreakdown,
                        "GMRES breakdown at inner iteration " + std::to_string(l + 1) + " with rho = " +
                            std::to_string(rho));
        }
        basis.col(l + 1) = w / wn;
    }
    if (!out.converged) {
        out.restarted = true;
    }
    out.iterations = l;
    out.rho = rho;

    // Back-substitution on the rotated upper-triangular system.
    Eigen::VectorXd y = Eigen::VectorXd::Zero(l);
    for (int i = l - 1; i >= 0; --i) {
        double acc = g(i);
        for (int j = i + 1; j < l; ++j) {
            acc -= h(i, j) * y(j);
        }
        y(i) = h(i, i) != 0.0 ? acc / h(i, i) : 0.0;
    }
    out.dx = zs.leftCols(l) * y;
    return out;
}

JfngResult jfng_solve(const CaseFile& c, const std::vector<GrbcDeclaration>& grbcs,
                      const Eigen::VectorXd& x0, const JfngConfig& cfg) {
    cfg.validate();
    using clock = std::chrono::steady_clock;
    const auto n = static_cast<Eigen::Index>(grbcs.size());

    JfngResult res;
    for (const auto& g : grbcs) {
        res.trace.opaque_grbcs += grbc::adapter_is_opaque(g) ? 1 : 0;
    }
    auto eval = [&](const Eigen::VectorXd& x) {
        ++res.trace.residual_evaluations;
        return residual(c, grbcs, x, cfg);
    };
    auto below_floor = [&](const Eigen::VectorXd& x) {
        return (x.head(n).array() < cfg.voltage_floor).any();
    };

    Eigen::VectorXd x = x0;
    BoundaryState state = eval(x);
    Preconditioner m = Preconditioner::identity(2 * n);

    for (int k = 0;; ++k) {
        const auto t0 = clock::now();
        OuterRecord rec;
        rec.phi_norm = state.phi.norm();
        if (rec.phi_norm <= cfg.eps1) {
            res.trace.outer.push_back(rec);
            res.trace.status = IterationTrace::Status::Converged;
            res.state = std::move(state);
            return res;
        }
        if (k >= cfg.max_outer) {
            res.trace.outer.push_back(rec);
            res.trace.status = IterationTrace::Status::MaxOuterExceeded;
            res.state = state;
            throw MaxOuterExceeded("boundary coordination did not converge in " + std::to_string(k) +
                                       " outer iterations (||Phi|| = " + format_double(rec.phi_norm) + ")",
                                   res);
        }

        // Matrix-free Jacobian action; the probe step shrinks if the shifted
        // point leaves the power-flow basin.
        const Eigen::VectorXd phi = state.phi;
        auto probe = [&](const Eigen::VectorXd& z) -> Eigen::VectorXd {
            double omega = cfg.omega * std::max(1.0, x.norm()) / std::max(1e-12, z.norm());
            for (int attempt = 0;; ++attempt) {
                try {
                    return directional_difference(phi, x, z, omega, [&](const Eigen::VectorXd& xp) {
                        if (below_floor(xp)) {
                            throw Error(ErrorCode::NonFinite, "probe point below voltage floor");
                        }
                        return eval(xp).phi;
                    });
                } catch (const Error& e) {
                    const bool retry = e.code() == ErrorCode::NonFinite || e.code() == ErrorCode::NonConvergence ||
                                       e.code() == ErrorCode::InternalNonConvergence ||
                                       e.code() == ErrorCode::SingularJacobian;
                    if (!retry || attempt >= cfg.max_omega_halvings) {
                        throw;
                    }
                    omega *= 0.5;
                }
            }
        };
        GmresResult gm = gmres_m(phi, probe, m, cfg);
        rec.inner_iters = gm.iterations;
        rec.rho_final = gm.rho;
        rec.rho_history = gm.rho_history;
        rec.restarted = gm.restarted;
        res.trace.precond_skips += gm.precond_skips;

        // Step with halving while ||Phi|| does not decrease.
        double lambda = 1.0;
        std::optional<BoundaryState> accepted;
        Eigen::VectorXd x_new;
        for (int tries = 0; tries <= cfg.max_line_search; ++tries) {
            x_new = x + lambda * gm.dx;
            std::optional<BoundaryState> trial;
            if (!below_floor(x_new)) {
                try {
                    trial = eval(x_new);
                } catch (const Error& e) {
                    if (e.code() != ErrorCode::NonConvergence && e.code() != ErrorCode::InternalNonConvergence &&
                        e.code() != ErrorCode::SingularJacobian && e.code() != ErrorCode::NonFinite) {
                        throw;
                    }
                }
            }
            if (trial && (trial->phi.norm() < rec.phi_norm || tries == cfg.max_line_search)) {
                accepted = std::move(trial);
                break;
            }
            if (tries < cfg.max_line_search) {
                lambda *= 0.5;
                ++rec.line_search_halvings;
            }
        }
        if (!accepted) {
            throw Error(ErrorCode::NonConvergence, "no admissible Newton step: every trial point failed to evaluate");
        }

        const Eigen::VectorXd dx = x_new - x;
        const Eigen::VectorXd dphi = accepted->phi - phi;
        if (!precond_update(m, dx, dphi, cfg.eps_den)) {
            ++res.trace.precond_skips;
        }
        x = x_new;
        state = std::move(*accepted);
        rec.wall_seconds = std::chrono::duration<double>(clock::now() - t0).count();
        res.trace.outer.push_back(rec);
    }
}

void write_trace_csv(const IterationTrace& trace, std::ostream& out) {
    out << "outer_iter,inner_iters,phi_norm,rho_final\n";
    for (std::size_t k = 0; k < trace.outer.size(); ++k) {
        const auto& r = trace.outer[k];
        out << k << ',' << r.inner_iters << ',' << format_double(r.phi_norm) << ',' << format_double(r.rho_final)
            << '\n';
    }
}

std::string boundary_state_json(const BoundaryState& st) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    const Eigen::Index n = st.n();
    for (Eigen::Index i = 0; i < n; ++i) {
        j[st.bus_ids[static_cast<std::size_t>(i)]] = {
            {"v_pu", st.x(i)},          {"theta_rad", st.x(n + i)}, {"p_main", st.p(i)},
            {"p_grbc", st.p_tilde(i)},  {"q_main", st.q(i)},        {"q_grbc", st.q_tilde(i)},
        };
    }
    return j.dump(2) + "\n";
}

}  // namespace emtgis
