#include "voltctl/powerflow.hpp"

#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include "voltctl/errors.hpp"

namespace voltctl {

namespace {

[[noreturn]] void fail_convergence(int max_iter, std::vector<double> trace) {
    std::ostringstream msg;
    msg << "power flow did not converge in " << max_iter << " iterations (last residual "
        << (trace.empty() ? 0.0 : trace.back()) << ")";
    throw PowerFlowError(msg.str(), std::move(trace));
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

FlowSolver::FlowSolver(const RadialNetwork& net, FlowOptions opts)
    : net_(net), opts_(opts), topo_(build_topology(net)) {
    validate(net_);
    if (!(opts_.tol > 0.0)) throw std::invalid_argument("FlowSolver: tol must be > 0");
    if (opts_.max_iter < 1) throw std::invalid_argument("FlowSolver: max_iter must be >= 1");
}

FlowSolution FlowSolver::solve(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    const auto n = static_cast<Eigen::Index>(net_.state_size());
    if (p.size() != n || q.size() != n) throw std::invalid_argument("power flow: injection vector has wrong length");
    return net_.phase_model == PhaseModel::single ? solve_single(p, q) : solve_three(p, q);
}

FlowSolution FlowSolver::solve_single(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    const std::size_t nodes = net_.bus_count() + 1;
    // Per-bus quantities of the line feeding each bus, indexed by bus id.
    std::vector<double> P(nodes, 0.0), Q(nodes, 0.0), l(nodes, 0.0), v(nodes, net_.v0);
    std::vector<double> trace;

    FlowSolution sol;
    for (int it = 1; it <= opts_.max_iter; ++it) {
        // Backward sweep: line flow = downstream flows + local withdrawal + losses.
        for (auto k = topo_.order.rbegin(); k != topo_.order.rend(); ++k) {
            const BusId j = *k;
            if (j == 0) continue;
            const Line& ln = net_.lines[static_cast<std::size_t>(topo_.parent_line[j])];
            double pj = -p(j - 1), qj = -q(j - 1);
            for (BusId c : topo_.children[j]) {
                pj += P[c];
                qj += Q[c];
            }
            P[j] = pj + ln.r * l[j];
            Q[j] = qj + ln.x * l[j];
        }
        // Forward sweep on squared magnitudes.
        double delta = 0.0;
        for (BusId j : topo_.order) {
            if (j == 0) continue;
            const BusId i = topo_.parent[j];
            const Line& ln = net_.lines[static_cast<std::size_t>(topo_.parent_line[j])];
            const double vj = v[i] - 2.0 * (ln.r * P[j] + ln.x * Q[j]) + (ln.r * ln.r + ln.x * ln.x) * l[j];
            if (!(vj > 0.0)) {
                trace.push_back(std::numeric_limits<double>::infinity());
                throw InfeasibleOperatingPoint("non-positive squared voltage at bus " + std::to_string(j),
                                               std::move(trace));
            }
            delta = std::max(delta, std::abs(vj - v[j]));
            v[j] = vj;
        }
        for (BusId j : topo_.order) {
            if (j == 0) continue;
            l[j] = (P[j] * P[j] + Q[j] * Q[j]) / v[topo_.parent[j]];
        }
        trace.push_back(delta);
        if (!std::isfinite(delta)) break;
        if (delta < opts_.tol) {
            sol.iterations = it;
            sol.residual = delta;
            break;
        }
        if (it == opts_.max_iter) fail_convergence(opts_.max_iter, std::move(trace));
    }
    if (sol.iterations == 0) fail_convergence(opts_.max_iter, std::move(trace));

    const auto n = static_cast<Eigen::Index>(net_.bus_count());
    sol.v.resize(n);
    for (Eigen::Index b = 0; b < n; ++b) sol.v(b) = v[static_cast<std::size_t>(b + 1)];
    const auto m = static_cast<Eigen::Index>(net_.lines.size());
    sol.P.resize(m);
    sol.Q.resize(m);
    sol.l.resize(m);
    for (BusId j = 1; j < static_cast<BusId>(nodes); ++j) {
        const auto k = static_cast<Eigen::Index>(topo_.parent_line[j]);
        sol.P(k) = P[j];
        sol.Q(k) = Q[j];
        sol.l(k) = l[j];
    }
    return sol;
}

FlowSolution FlowSolver::solve_three(const Eigen::VectorXd& p, const Eigen::VectorXd& q) const {
    using Vec3c = Eigen::Matrix<Complex, 3, 1>;
    const std::size_t nodes = net_.bus_count() + 1;
    const Complex a = std::polar(1.0, -2.0 * std::numbers::pi / 3.0);
    const Vec3c v_root = std::sqrt(net_.v0) * Vec3c(1.0, a, a * a);

    std::vector<Vec3c> V(nodes, v_root), J(nodes, Vec3c::Zero());
    std::vector<double> trace;
    FlowSolution sol;

    for (int it = 1; it <= opts_.max_iter; ++it) {
        // Backward sweep on branch currents; a bus withdraws conj(-s / V).
        for (auto k = topo_.order.rbegin(); k != topo_.order.rend(); ++k) {
            const BusId j = *k;
            if (j == 0) continue;
            Vec3c cur = Vec3c::Zero();
            for (int ph = 0; ph < 3; ++ph) {
                const auto idx = static_cast<Eigen::Index>(net_.state_index(j, ph));
                const Complex s{p(idx), q(idx)};
                cur(ph) = std::conj(-s / V[j](ph));
            }
            for (BusId c : topo_.children[j]) cur += J[c];
            J[j] = cur;
        }
        double delta = 0.0;
        for (BusId j : topo_.order) {
            if (j == 0) continue;
            const Line& ln = net_.lines[static_cast<std::size_t>(topo_.parent_line[j])];
            const Vec3c vj = V[topo_.parent[j]] - ln.z * J[j];
            for (int ph = 0; ph < 3; ++ph) {
                const double mag2 = std::norm(vj(ph));
                if (!(mag2 > 0.0) || !std::isfinite(mag2)) {
                    trace.push_back(std::numeric_limits<double>::infinity());
                    throw InfeasibleOperatingPoint("non-positive squared voltage at bus " + std::to_string(j),
                                                   std::move(trace));
                }
                delta = std::max(delta, std::abs(mag2 - std::norm(V[j](ph))));
            }
            V[j] = vj;
        }
        trace.push_back(delta);
        if (delta < opts_.tol) {
            sol.iterations = it;
            sol.residual = delta;
            break;
        }
        if (it == opts_.max_iter) fail_convergence(opts_.max_iter, std::move(trace));
    }

    const auto n = static_cast<Eigen::Index>(net_.bus_count());
    sol.v.resize(3 * n);
    for (Eigen::Index b = 0; b < n; ++b)
        for (int ph = 0; ph < 3; ++ph) sol.v(3 * b + ph) = std::norm(V[static_cast<std::size_t>(b + 1)](ph));
    const auto m = static_cast<Eigen::Index>(net_.lines.size());
    sol.P.resize(3 * m);
    sol.Q.resize(3 * m);
    sol.l.resize(3 * m);
    for (BusId j = 1; j < static_cast<BusId>(nodes); ++j) {
        const auto k = static_cast<Eigen::Index>(topo_.parent_line[j]);
        for (int ph = 0; ph < 3; ++ph) {
            const Complex s = V[topo_.parent[j]](ph) * std::conj(J[j](ph));
            sol.P(3 * k + ph) = s.real();
            sol.Q(3 * k + ph) = s.imag();
            sol.l(3 * k + ph) = std::norm(J[j](ph));
        }
    }
    return sol;
}

FlowSolution solve_distflow(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                            const FlowOptions& opts) {
    if (net.phase_model != PhaseModel::single)
        throw std::invalid_argument("solve_distflow: network is three-phase");
    return FlowSolver(net, opts).solve(p, q);
}

FlowSolution solve_distflow_threephase(const RadialNetwork& net, const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& q, const FlowOptions& opts) {
    if (net.phase_model != PhaseModel::three)
        throw std::invalid_argument("solve_distflow_threephase: network is single-phase");
    return FlowSolver(net, opts).solve(p, q);
}

FlowSolution solve_flow(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q,
                        const FlowOptions& opts) {
    return FlowSolver(net, opts).solve(p, q);
}

nlohmann::json to_json(const FlowSolution& sol) {
    return {{"v", to_std(sol.v)},       {"P", to_std(sol.P)},
            {"Q", to_std(sol.Q)},       {"l", to_std(sol.l)},
            {"iterations", sol.iterations}, {"residual", sol.residual}};
}

}  // namespace voltctl
