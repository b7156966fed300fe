#include "voltctl/grid.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <deque>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "voltctl/errors.hpp"

namespace voltctl {

namespace {

const std::array<Complex, 3>& phase_rotation() {
    static const std::array<Complex, 3> alpha = [] {
        const Complex a = std::polar(1.0, -2.0 * std::numbers::pi / 3.0);
        return std::array<Complex, 3>{Complex{1.0, 0.0}, a, a * a};
    }();
    return alpha;
}

void check_line_values(const RadialNetwork& net, std::size_t k) {
    const Line& ln = net.lines[k];
    const std::string where = "lines[" + std::to_string(k) + "]";
    if (net.phase_model == PhaseModel::single) {
        if (!(ln.r > 0.0)) throw SchemaError(where + ".r", "must be > 0");
        if (!(ln.x > 0.0)) throw SchemaError(where + ".x", "must be > 0");
        return;
    }
    for (int a = 0; a < 3; ++a) {
        if (!(ln.z(a, a).real() > 0.0))
            throw SchemaError(where + ".z_matrix", "diagonal resistance must be > 0");
        for (int b = 0; b < 3; ++b) {
            if (std::abs(ln.z(a, b) - ln.z(b, a)) > 1e-12)
                throw SchemaError(where + ".z_matrix", "must be symmetric");
        }
    }
}

}  // namespace

Topology build_topology(const RadialNetwork& net) {
    const std::size_t n_nodes = net.bus_count() + 1;
    if (net.limits.empty()) throw StructuralError("network has no buses", 0);
    if (net.lines.size() != n_nodes - 1) {
        throw StructuralError("a radial network over " + std::to_string(n_nodes) + " buses needs " +
                                  std::to_string(n_nodes - 1) + " lines, got " +
                                  std::to_string(net.lines.size()),
                              0);
    }

    Topology topo;
    topo.parent.assign(n_nodes, -1);
    topo.parent_line.assign(n_nodes, -1);
    topo.children.assign(n_nodes, {});
    std::vector<std::vector<std::pair<BusId, int>>> adj(n_nodes);
    for (std::size_t k = 0; k < net.lines.size(); ++k) {
        const Line& ln = net.lines[k];
        for (BusId b : {ln.from, ln.to}) {
            if (b < 0 || static_cast<std::size_t>(b) >= n_nodes)
                throw StructuralError("line " + std::to_string(k) + " references unknown bus " +
                                          std::to_string(b),
                                      b);
        }
        if (ln.from == ln.to)
            throw StructuralError("line " + std::to_string(k) + " is a self-loop at bus " +
                                      std::to_string(ln.from),
                                  ln.from);
        adj[ln.from].emplace_back(ln.to, static_cast<int>(k));
        adj[ln.to].emplace_back(ln.from, static_cast<int>(k));
    }

    std::vector<bool> seen(n_nodes, false);
    std::deque<BusId> queue{0};
    seen[0] = true;
    while (!queue.empty()) {
        const BusId i = queue.front();
        queue.pop_front();
        topo.order.push_back(i);
        for (auto [j, k] : adj[i]) {
            if (k == topo.parent_line[i]) continue;
            if (seen[j]) {
                throw StructuralError("cycle detected: bus " + std::to_string(j) +
                                          " is reachable from the substation twice (via line " +
                                          std::to_string(k) + ")",
                                      j);
            }
            seen[j] = true;
            topo.parent[j] = i;
            topo.parent_line[j] = k;
            topo.children[i].push_back(j);
            queue.push_back(j);
        }
    }
    for (std::size_t b = 0; b < n_nodes; ++b) {
        if (!seen[b])
            throw StructuralError("bus " + std::to_string(b) + " is not connected to the substation",
                                  static_cast<BusId>(b));
    }
    return topo;
}

void validate(const RadialNetwork& net) {
    build_topology(net);
    for (std::size_t k = 0; k < net.lines.size(); ++k) check_line_values(net, k);
    if (!(net.v0 > 0.0)) throw SchemaError("v0", "must be > 0");
    for (std::size_t b = 1; b < net.limits.size(); ++b) {
        const auto& lim = net.limits[b];
        if (!(lim.lower < net.v0 && net.v0 < lim.upper)) {
            throw SchemaError("buses[id=" + std::to_string(b) + "]",
                              "limits must satisfy v_lower < v0 < v_upper");
        }
    }
    std::vector<BusId> sorted = net.controlled;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const BusId b = sorted[k];
        if (b <= 0 || static_cast<std::size_t>(b) > net.bus_count())
            throw SchemaError("controlled", "bus " + std::to_string(b) + " is not a non-root bus");
        if (k > 0 && sorted[k - 1] == b)
            throw SchemaError("controlled", "bus " + std::to_string(b) + " listed twice");
    }
}

std::vector<std::vector<std::size_t>> build_path_sets(const RadialNetwork& net) {
    const Topology topo = build_topology(net);
    std::vector<std::vector<std::size_t>> paths(topo.parent.size());
    for (BusId b : topo.order) {
        if (b == 0) continue;
        paths[b] = paths[topo.parent[b]];
        paths[b].push_back(static_cast<std::size_t>(topo.parent_line[b]));
    }
    return paths;
}

Matrix3c hat_impedance(const Matrix3c& z) {
    const auto& alpha = phase_rotation();
    Matrix3c out;
    for (int m = 0; m < 3; ++m)
        for (int n = 0; n < 3; ++n) out(m, n) = std::conj(alpha[m]) * z(m, n) * alpha[n];
    return out;
}

PdCertificate check_positive_definite(const Eigen::MatrixXd& m) {
    if (m.rows() != m.cols()) throw std::invalid_argument("check_positive_definite: matrix not square");
    if (m.size() == 0) return {true, std::numeric_limits<double>::infinity()};
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10)
        throw std::invalid_argument("check_positive_definite: matrix not symmetric to 1e-10");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    const double min_eig = es.eigenvalues().minCoeff();
    return {min_eig > 0.0, min_eig};
}

bool check_diagonal_dominance(const Line& line) {
    Eigen::Matrix3d xt;
    const auto x = [&](int a, int b) { return line.z(a, b).imag(); };
    // Printed sign pattern kept as-is; only magnitudes enter the test.
    xt << 2 * x(0, 0), -x(0, 1), x(0, 2),
          -x(0, 1), 2 * x(1, 1), x(1, 2),
          -x(0, 2), -x(1, 2), 2 * x(2, 2);
    xt *= 0.5;
    for (int a = 0; a < 3; ++a) {
        if (!(xt(a, a) > 0.0)) return false;
        double off = 0.0;
        for (int b = 0; b < 3; ++b)
            if (b != a) off += std::abs(xt(a, b));
        if (!(std::abs(xt(a, a)) > off)) return false;
    }
    return true;
}

GridMatrices build_rx_matrices(const RadialNetwork& net) {
    validate(net);
    const auto paths = build_path_sets(net);
    const std::size_t n = net.bus_count();
    const std::size_t ph = net.phases();

    // members[k]: buses whose root path contains line k (the subtree below it).
    std::vector<std::vector<std::size_t>> members(net.lines.size());
    for (std::size_t b = 1; b <= n; ++b)
        for (std::size_t k : paths[b]) members[k].push_back(b);

    GridMatrices gm;
    gm.phase_model = net.phase_model;
    gm.R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n * ph), static_cast<Eigen::Index>(n * ph));
    gm.X = gm.R;

    for (std::size_t k = 0; k < net.lines.size(); ++k) {
        Eigen::MatrixXd rblk(ph, ph), xblk(ph, ph);
        if (net.phase_model == PhaseModel::single) {
            rblk(0, 0) = 2.0 * net.lines[k].r;
            xblk(0, 0) = 2.0 * net.lines[k].x;
        } else {
            const Matrix3c zh = hat_impedance(net.lines[k].z);
            const Eigen::Matrix3d re = zh.real();
            const Eigen::Matrix3d im = zh.imag();
            rblk = re + re.transpose();
            xblk = im + im.transpose();
        }
        for (std::size_t i : members[k]) {
            for (std::size_t j : members[k]) {
                const auto ri = static_cast<Eigen::Index>((i - 1) * ph);
                const auto rj = static_cast<Eigen::Index>((j - 1) * ph);
                gm.R.block(ri, rj, ph, ph) += rblk;
                gm.X.block(ri, rj, ph, ph) += xblk;
            }
        }
    }

    gm.x_certificate = check_positive_definite(gm.X);
    if (!gm.x_certificate.pd) {
        throw CertificateError("X is not positive definite (min eigenvalue " +
                                   std::to_string(gm.x_certificate.min_eig) + ")",
                               gm.x_certificate.min_eig);
    }
    gm.X_inv = gm.X.llt().solve(Eigen::MatrixXd::Identity(gm.X.rows(), gm.X.cols()));
    gm.X_inv = 0.5 * (gm.X_inv + gm.X_inv.transpose()).eval();
    return gm;
}

Eigen::VectorXd environment_voltage(const GridMatrices& gm, const Eigen::VectorXd& p, double v0) {
    if (p.size() != gm.size()) throw std::invalid_argument("environment_voltage: p has wrong length");
    return gm.R * p + Eigen::VectorXd::Constant(gm.size(), v0);
}

Eigen::VectorXd lindistflow_voltage(const GridMatrices& gm, const Eigen::VectorXd& p,
                                    const Eigen::VectorXd& q, double v0) {
    if (q.size() != gm.size()) throw std::invalid_argument("lindistflow_voltage: q has wrong length");
    return gm.X * q + environment_voltage(gm, p, v0);
}

VoltageState step_dynamics(const GridMatrices& gm, const VoltageState& s, const Eigen::VectorXd& u,
                           double dt) {
    if (!(dt > 0.0)) throw std::invalid_argument("step_dynamics: dt must be > 0");
    if (u.size() != gm.size() || s.v.size() != gm.size())
        throw std::invalid_argument("step_dynamics: dimension mismatch");
    VoltageState next;
    next.v = s.v + dt * (gm.X * u);
    next.q = (s.q.size() == u.size() ? s.q : Eigen::VectorXd::Zero(u.size())) + dt * u;
    next.t = s.t + 1;
    return next;
}

Eigen::PermutationMatrix<Eigen::Dynamic> phase_major_permutation(std::size_t n_buses) {
    // v = T v_check: bus-major slot (i, phase) is filled from phase-major slot (phase, i).
    const auto n = static_cast<Eigen::Index>(n_buses);
    Eigen::VectorXi idx(3 * n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index ph = 0; ph < 3; ++ph) idx(ph * n + i) = static_cast<int>(3 * i + ph);
    return Eigen::PermutationMatrix<Eigen::Dynamic>(idx);
}

std::vector<ControlChannel> control_channels(const RadialNetwork& net) {
    std::vector<BusId> buses = net.controlled;
    std::sort(buses.begin(), buses.end());
    std::vector<ControlChannel> out;
    for (BusId b : buses) {
        for (int ph = 0; ph < static_cast<int>(net.phases()); ++ph) {
            out.push_back({b, ph, net.state_index(b, ph), net.limits.at(static_cast<std::size_t>(b))});
        }
    }
    return out;
}

Eigen::MatrixXd channel_submatrix(const Eigen::MatrixXd& m, const std::vector<ControlChannel>& ch) {
    const auto k = static_cast<Eigen::Index>(ch.size());
    Eigen::MatrixXd out(k, k);
    for (Eigen::Index a = 0; a < k; ++a)
        for (Eigen::Index b = 0; b < k; ++b)
            out(a, b) = m(static_cast<Eigen::Index>(ch[a].state_index),
                          static_cast<Eigen::Index>(ch[b].state_index));
    return out;
}

Eigen::VectorXd channel_values(const Eigen::VectorXd& v, const std::vector<ControlChannel>& ch) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(ch.size()));
    for (std::size_t a = 0; a < ch.size(); ++a)
        out(static_cast<Eigen::Index>(a)) = v(static_cast<Eigen::Index>(ch[a].state_index));
    return out;
}

}  // namespace voltctl
