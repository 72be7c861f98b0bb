#include "emtgis/powerflow.hpp"
#include "emtgis/error.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <ostream>
#include <sstream>

namespace emtgis {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    if (ec != std::errc()) {
        return "nan";
    }
    return std::string(buf, ptr);
}

int PowerFlowSolution::index_of(const std::string& id) const {
    auto it = std::find(bus_ids.begin(), bus_ids.end(), id);
    return it == bus_ids.end() ? -1 : static_cast<int>(it - bus_ids.begin());
}

const Phasor& PowerFlowSolution::voltage_at(const std::string& id) const {
    const int i = index_of(id);
    if (i < 0) {
        throw Error(ErrorCode::UnknownTarget, "bus '" + id + "' not in power-flow solution");
    }
    return voltage[static_cast<std::size_t>(i)];
}

Complex PowerFlowSolution::injection_at(const std::string& id) const {
    const int i = index_of(id);
    if (i < 0) {
        throw Error(ErrorCode::UnknownTarget, "bus '" + id + "' not in power-flow solution");
    }
    return {p[static_cast<std::size_t>(i)], q[static_cast<std::size_t>(i)]};
}

namespace {

bool is_fixed(BusKind k) { return k == BusKind::Slack || k == BusKind::Boundary; }

double bus_v_set(const BusRecord& b, const std::vector<MachineRecord>& machines) {
    if (b.v_set) {
        return *b.v_set;
    }
    for (const auto& m : machines) {
        if (m.bus == b.id && m.v_set) {
            return *m.v_set;
        }
    }
    return 1.0;
}

}  // namespace

PowerFlowProblem make_problem(const std::vector<BusRecord>& buses, const std::vector<BranchRecord>& branches,
                              const std::vector<MachineRecord>& machines) {
    PowerFlowProblem pr;
    pr.buses = buses;
    pr.branches = branches;
    for (const auto& b : buses) {
        double gen = 0.0;
        for (const auto& m : machines) {
            if (m.bus == b.id) {
                gen += m.p_set;
            }
        }
        pr.p_spec.push_back(gen - b.p_load);
        pr.q_spec.push_back(-b.q_load);
        const double v = (b.kind == BusKind::Slack || b.kind == BusKind::PV) ? bus_v_set(b, machines) : 1.0;
        pr.fixed_voltage.emplace_back(v, b.kind == BusKind::Slack ? b.angle : 0.0);
    }
    return pr;
}

PowerFlowSolution solve_power_flow(const PowerFlowProblem& pr, const PowerFlowOptions& opts,
                                   const std::vector<Phasor>* warm_start) {
    const AdmittanceMatrix adm = assemble_admittance(pr.buses, pr.branches);
    const Eigen::MatrixXcd& Y = adm.y;
    const auto n = static_cast<Eigen::Index>(pr.buses.size());

    // Flat start unless warm-started; fixed buses always at their phasor.
    Eigen::VectorXd vm = Eigen::VectorXd::Ones(n);
    Eigen::VectorXd va = Eigen::VectorXd::Zero(n);
    std::vector<Eigen::Index> pvpq;
    std::vector<Eigen::Index> pq;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& b = pr.buses[static_cast<std::size_t>(i)];
        const auto& fv = pr.fixed_voltage[static_cast<std::size_t>(i)];
        if (warm_start != nullptr) {
            vm(i) = (*warm_start)[static_cast<std::size_t>(i)].magnitude();
            va(i) = (*warm_start)[static_cast<std::size_t>(i)].angle();
        }
        if (is_fixed(b.kind)) {
            vm(i) = fv.magnitude();
            va(i) = fv.angle();
        } else {
            pvpq.push_back(i);
            if (b.kind == BusKind::PV) {
                vm(i) = fv.magnitude();
            } else {
                pq.push_back(i);
            }
        }
    }
    const auto npvpq = static_cast<Eigen::Index>(pvpq.size());
    const auto npq = static_cast<Eigen::Index>(pq.size());

    auto voltages = [&] {
        Eigen::VectorXcd v(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            v(i) = std::polar(vm(i), va(i));
        }
        return v;
    };
    auto mismatch = [&](const Eigen::VectorXcd& s) {
        Eigen::VectorXd f(npvpq + npq);
        for (Eigen::Index k = 0; k < npvpq; ++k) {
            f(k) = pr.p_spec[static_cast<std::size_t>(pvpq[static_cast<std::size_t>(k)])] - s(pvpq[static_cast<std::size_t>(k)]).real();
        }
        for (Eigen::Index k = 0; k < npq; ++k) {
            f(npvpq + k) = pr.q_spec[static_cast<std::size_t>(pq[static_cast<std::size_t>(k)])] - s(pq[static_cast<std::size_t>(k)]).imag();
        }
        return f;
    };

    PowerFlowSolution sol;
    sol.bus_ids = adm.bus_ids;
    Eigen::VectorXcd v = voltages();
    Eigen::VectorXcd s = v.cwiseProduct((Y * v).conjugate());
    Eigen::VectorXd f = mismatch(s);
    double norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
    sol.mismatch_history.push_back(norm);

    int iter = 0;
    while (norm > opts.tol) {
        if (iter >= opts.max_iter || !std::isfinite(norm)) {
            throw Error(ErrorCode::NonConvergence,
                        "power flow did not converge in " + std::to_string(iter) +
                            " iterations (mismatch " + format_double(norm) + ")");
        }
        // dS/dVa and dS/dVm, complex form.
        const Eigen::VectorXcd ibus = Y * v;
        Eigen::VectorXcd vnorm(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            vnorm(i) = v(i) / std::abs(v(i));
        }
        const Eigen::MatrixXcd diag_v = v.asDiagonal();
        const Eigen::MatrixXcd ds_dva =
            Complex(0, 1) * diag_v * (Eigen::MatrixXcd(ibus.asDiagonal()) - Y * diag_v).conjugate();
        const Eigen::MatrixXcd ds_dvm = diag_v * (Y * Eigen::MatrixXcd(vnorm.asDiagonal())).conjugate() +
                                        Eigen::MatrixXcd(ibus.conjugate().asDiagonal()) * Eigen::MatrixXcd(vnorm.asDiagonal());

        Eigen::MatrixXd J(npvpq + npq, npvpq + npq);
        for (Eigen::Index r = 0; r < npvpq; ++r) {
            const auto br = pvpq[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < npvpq; ++c) {
                J(r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).real();
            }
            for (Eigen::Index c = 0; c < npq; ++c) {
                J(r, npvpq + c) = ds_dvm(br, pq[static_cast<std::size_t>(c)]).real();
            }
        }
        for (Eigen::Index r = 0; r < npq; ++r) {
            const auto br = pq[static_cast<std::size_t>(r)];
            for (Eigen::Index c = 0; c < npvpq; ++c) {
                J(npvpq + r, c) = ds_dva(br, pvpq[static_cast<std::size_t>(c)]).imag();
            }
            for (Eigen::Index c = 0; c < npq; ++c) {
                J(npvpq + r, npvpq + c) = ds_dvm(br, pq[static_cast<std::size_t>(c)]).imag();
            }
        }
        Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
        if (!(lu.rcond() > 1e-14)) {
            throw Error(ErrorCode::SingularJacobian,
                        "singular power-flow Jacobian at iteration " + std::to_string(iter));
        }
        const Eigen::VectorXd dx = lu.solve(f);
        for (Eigen::Index k = 0; k < npvpq; ++k) {
            va(pvpq[static_cast<std::size_t>(k)]) += dx(k);
        }
        for (Eigen::Index k = 0; k < npq; ++k) {
            vm(pq[static_cast<std::size_t>(k)]) += dx(npvpq + k);
        }
        ++iter;
        v = voltages();
        s = v.cwiseProduct((Y * v).conjugate());
        f = mismatch(s);
        norm = f.size() ? f.cwiseAbs().maxCoeff() : 0.0;
        sol.mismatch_history.push_back(norm);
    }

    sol.iterations = iter;
    sol.converged = true;
    sol.max_mismatch = norm;
    for (Eigen::Index i = 0; i < n; ++i) {
        sol.voltage.push_back(Phasor::from_complex(v(i)));
        sol.p.push_back(s(i).real());
        sol.q.push_back(s(i).imag());
    }
    // Fixed buses keep exactly the specified phasor.
    for (Eigen::Index i = 0; i < n; ++i) {
        if (is_fixed(pr.buses[static_cast<std::size_t>(i)].kind)) {
            sol.voltage[static_cast<std::size_t>(i)] = pr.fixed_voltage[static_cast<std::size_t>(i)];
        }
    }
    return sol;
}

PowerFlowSolution solve_main(const CaseFile& c, const std::map<std::string, Phasor>& boundary_voltages,
                             const PowerFlowOptions& opts) {
    PowerFlowProblem pr = make_problem(c.buses, c.branches, c.machines);
    for (std::size_t i = 0; i < pr.buses.size(); ++i) {
        if (pr.buses[i].kind != BusKind::Boundary) {
            continue;
        }
        auto it = boundary_voltages.find(pr.buses[i].id);
        if (it == boundary_voltages.end()) {
            throw Error(ErrorCode::InvalidConfig, "no boundary voltage supplied for bus '" + pr.buses[i].id + "'");
        }
        pr.fixed_voltage[i] = it->second;
    }
    return solve_power_flow(pr, opts);
}

std::map<std::string, std::pair<double, double>> boundary_injections(const PowerFlowSolution& sol,
                                                                     const CaseFile& c) {
    if (!sol.converged) {
        throw Error(ErrorCode::NotConverged, "boundary injections need a converged power flow");
    }
    std::map<std::string, std::pair<double, double>> out;
    for (const auto& b : c.buses) {
        if (b.kind != BusKind::Boundary) {
            continue;
        }
        const Complex s = sol.injection_at(b.id);
        out[b.id] = {-s.real() - b.p_load, -s.imag() - b.q_load};
    }
    return out;
}

PowerFlowProblem monolithic_problem(const CaseFile& full_case) {
    std::vector<BusRecord> buses = full_case.buses;
    std::vector<BranchRecord> branches = full_case.branches;
    std::vector<MachineRecord> machines = full_case.machines;
    for (auto& b : buses) {
        if (b.kind == BusKind::Boundary) {
            b.kind = BusKind::PQ;
        }
    }
    for (const auto& g : full_case.grbcs) {
        const auto* wb = std::get_if<WhiteBoxPayload>(&g.payload);
        if (wb == nullptr || !wb->oracle) {
            throw Error(ErrorCode::OracleUnavailable,
                        "GRBC '" + g.name + "' is a black box; monolithic oracle unavailable");
        }
        buses.insert(buses.end(), wb->buses.begin(), wb->buses.end());
        branches.insert(branches.end(), wb->branches.begin(), wb->branches.end());
        machines.insert(machines.end(), wb->machines.begin(), wb->machines.end());
    }
    return make_problem(buses, branches, machines);
}

PowerFlowSolution solve_monolithic(const CaseFile& full_case, const PowerFlowOptions& opts) {
    return solve_power_flow(monolithic_problem(full_case), opts);
}

void write_solution_csv(const PowerFlowSolution& sol, std::ostream& out) {
    out << "bus_id,v_pu,theta_deg,p_pu,q_pu\n";
    for (std::size_t i = 0; i < sol.bus_ids.size(); ++i) {
        out << sol.bus_ids[i] << ',' << format_double(sol.voltage[i].magnitude()) << ','
            << format_double(sol.voltage[i].angle() * 180.0 / kPi) << ',' << format_double(sol.p[i]) << ','
            << format_double(sol.q[i]) << '\n';
    }
}

}  // namespace emtgis
