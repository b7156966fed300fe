#include <doctest.h>

#include <numbers>

#include "support.hpp"
#include "voltctl/errors.hpp"
#include "voltctl/network_io.hpp"
#include "voltctl/powerflow.hpp"

using namespace voltctl;

namespace {

using Vec3c = Eigen::Matrix<Complex, 3, 1>;

// Z-bus current-injection iteration: V = V_root - Zpath * I(V), solved with a
// Gauss-Seidel update over buses. Independent of the sweep bookkeeping.
Eigen::VectorXd zbus_oracle(const RadialNetwork& net, const Eigen::VectorXd& p, const Eigen::VectorXd& q) {
    const std::size_t n = net.bus_count();
    const int ph = static_cast<int>(net.phases());
    std::vector<BusId> parent(n + 1, -1);
    std::vector<const Line*> feeder(n + 1, nullptr);
    for (const auto& ln : net.lines) {
        parent[ln.to] = ln.from;
        feeder[ln.to] = &ln;
    }
    auto zline = [&](const Line* ln) {
        Matrix3c z = Matrix3c::Zero();
        if (ph == 1)
            z(0, 0) = {ln->r, ln->x};
        else
            z = ln->z;
        return z;
    };
    // Zpath(i, j): sum of line impedances on the common root path.
    std::vector<std::vector<int>> lines_of(n + 1);
    for (std::size_t b = 1; b <= n; ++b)
        for (BusId c = static_cast<BusId>(b); c != 0; c = parent[c]) lines_of[b].push_back(c);
    auto common = [&](std::size_t i, std::size_t j) {
        Matrix3c z = Matrix3c::Zero();
        for (int a : lines_of[i])
            for (int b : lines_of[j])
                if (a == b) z += zline(feeder[a]);
        return z;
    };
    std::vector<std::vector<Matrix3c>> Z(n + 1, std::vector<Matrix3c>(n + 1));
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j) Z[i][j] = common(i, j);

    const Complex a = std::polar(1.0, -2.0 * std::numbers::pi / 3.0);
    Vec3c root = std::sqrt(net.v0) * Vec3c(1.0, a, a * a);
    if (ph == 1) root = Vec3c(std::sqrt(net.v0), 0.0, 0.0);
    std::vector<Vec3c> V(n + 1, root);
    auto current = [&](std::size_t b) {
        Vec3c I = Vec3c::Zero();
        for (int k = 0; k < ph; ++k) {
            const auto idx = static_cast<Eigen::Index>(net.state_index(static_cast<BusId>(b), k));
            I(k) = std::conj(Complex(-p(idx), -q(idx)) / V[b](k));
        }
        return I;
    };
    for (int it = 0; it < 2000; ++it) {
        double change = 0.0;
        for (std::size_t i = 1; i <= n; ++i) {
            Vec3c vi = root;
            for (std::size_t j = 1; j <= n; ++j) vi -= Z[i][j] * current(j);
            change = std::max(change, (vi - V[i]).cwiseAbs().maxCoeff());
            V[i] = vi;
        }
        if (change < 1e-14) break;
    }
    Eigen::VectorXd v(static_cast<Eigen::Index>(n * static_cast<std::size_t>(ph)));
    for (std::size_t b = 1; b <= n; ++b)
        for (int k = 0; k < ph; ++k) v(static_cast<Eigen::Index>(net.state_index(static_cast<BusId>(b), k))) = std::norm(V[b](k));
    return v;
}

FlowOptions tight() {
    FlowOptions o;
    o.tol = 1e-13;
    o.max_iter = 500;
    return o;
}

}  // namespace

TEST_CASE("zero injections give a flat profile") {
    auto net = test::chain_network();
    net.v0 = 1.02;
    const auto sol = solve_flow(net, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2));
    CHECK((sol.v.array() == 1.02).all());
    CHECK(sol.l.cwiseAbs().maxCoeff() == 0.0);

    std::mt19937_64 rng(1);
    const auto three = test::random_three_phase_tree(rng, 4, 0.01);
    const auto s3 = solve_flow(three, Eigen::VectorXd::Zero(12), Eigen::VectorXd::Zero(12));
    CHECK((s3.v.array() - 1.0).abs().maxCoeff() < 1e-15);
}

TEST_CASE("single line matches the scalar fixed point") {
    const double r = 0.03, x = 0.06, p = -0.4, q = -0.2;
    const auto net = test::scalar_network(r, x);
    // Receiving end consumes (-p, -q); sending end flow carries the losses.
    double P = -p, Q = -q, v1 = 1.0;
    for (int it = 0; it < 200; ++it) {
        const double l = (P * P + Q * Q) / 1.0;
        P = -p + r * l;
        Q = -q + x * l;
        v1 = 1.0 - 2.0 * (r * P + x * Q) + (r * r + x * x) * l;
    }
    const auto sol = solve_flow(net, Eigen::VectorXd::Constant(1, p), Eigen::VectorXd::Constant(1, q), tight());
    CHECK(sol.v(0) == doctest::Approx(v1).epsilon(1e-12));
    CHECK(sol.P(0) == doctest::Approx(P).epsilon(1e-12));
    CHECK(sol.Q(0) == doctest::Approx(Q).epsilon(1e-12));
}

TEST_CASE("single-phase sweep agrees with the Z-bus oracle") {
    std::mt19937_64 rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        const auto net = test::random_tree(rng, 3 + trial % 12);
        const auto n = static_cast<Eigen::Index>(net.bus_count());
        const Eigen::VectorXd p = 0.05 * Eigen::VectorXd::Random(n);
        const Eigen::VectorXd q = 0.05 * Eigen::VectorXd::Random(n);
        const auto sol = solve_flow(net, p, q, tight());
        CHECK((sol.v - zbus_oracle(net, p, q)).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("three-phase sweep") {
    SUBCASE("unbalanced load on coupled lines matches the Z-bus oracle") {
        std::mt19937_64 rng(3);
        for (int trial = 0; trial < 10; ++trial) {
            const auto net = test::random_three_phase_tree(rng, 2 + trial % 6, 0.02);
            const auto m = static_cast<Eigen::Index>(net.state_size());
            const Eigen::VectorXd p = 0.04 * Eigen::VectorXd::Random(m);
            const Eigen::VectorXd q = 0.04 * Eigen::VectorXd::Random(m);
            const auto sol = solve_flow(net, p, q, tight());
            const Eigen::VectorXd oracle = zbus_oracle(net, p, q);
            CHECK((sol.v - oracle).cwiseAbs().maxCoeff() < 1e-8);
            // Phases differ under unbalance.
            CHECK(std::abs(sol.v(0) - sol.v(1)) > 1e-6);
        }
    }

    SUBCASE("balanced load on uncoupled lines equals the single-phase solution") {
        std::mt19937_64 rng(4);
        const auto single = test::random_tree(rng, 8);
        RadialNetwork three = single;
        three.phase_model = PhaseModel::three;
        for (auto& ln : three.lines) ln.z = Matrix3c::Identity() * Complex(ln.r, ln.x);
        const Eigen::VectorXd p1 = -0.05 * Eigen::VectorXd::Random(8).cwiseAbs();
        const Eigen::VectorXd q1 = -0.02 * Eigen::VectorXd::Random(8).cwiseAbs();
        Eigen::VectorXd p3(24), q3(24);
        for (Eigen::Index b = 0; b < 8; ++b)
            for (int k = 0; k < 3; ++k) {
                p3(3 * b + k) = p1(b);
                q3(3 * b + k) = q1(b);
            }
        const auto s1 = solve_flow(single, p1, q1, tight());
        const auto s3 = solve_flow(three, p3, q3, tight());
        for (Eigen::Index b = 0; b < 8; ++b)
            for (int k = 0; k < 3; ++k) CHECK(std::abs(s3.v(3 * b + k) - s1.v(b)) < 1e-10);
    }
}

TEST_CASE("power balance and losses at convergence") {
    std::mt19937_64 rng(5);
    const auto net = test::random_tree(rng, 15);
    const Eigen::VectorXd p = 0.05 * Eigen::VectorXd::Random(15);
    const Eigen::VectorXd q = 0.05 * Eigen::VectorXd::Random(15);
    const auto sol = solve_flow(net, p, q, tight());
    std::vector<Eigen::Index> line_to(16, -1);
    for (std::size_t k = 0; k < net.lines.size(); ++k) line_to[net.lines[k].to] = static_cast<Eigen::Index>(k);
    double losses = 0.0;
    for (std::size_t k = 0; k < net.lines.size(); ++k) {
        const auto& ln = net.lines[k];
        const auto kk = static_cast<Eigen::Index>(k);
        const double v_from = ln.from == 0 ? net.v0 : sol.v(ln.from - 1);
        CHECK(std::abs(sol.l(kk) * v_from - (sol.P(kk) * sol.P(kk) + sol.Q(kk) * sol.Q(kk))) < 1e-10);
        // Flow into bus j minus losses = withdrawal plus downstream flows.
        double down_p = -p(ln.to - 1), down_q = -q(ln.to - 1);
        for (const auto& c : net.lines)
            if (c.from == ln.to) {
                down_p += sol.P(line_to[c.to]);
                down_q += sol.Q(line_to[c.to]);
            }
        CHECK(std::abs(sol.P(kk) - ln.r * sol.l(kk) - down_p) < 1e-10);
        CHECK(std::abs(sol.Q(kk) - ln.x * sol.l(kk) - down_q) < 1e-10);
        losses += ln.r * sol.l(kk);
    }
    CHECK(losses >= 0.0);
    CHECK((sol.v.array() > 0.0).all());
}

TEST_CASE("nonlinear gap to LinDistFlow shrinks quadratically") {
    const auto net = load_network(std::filesystem::path(VOLTCTL_DATA_DIR) / "ieee13_single.json");
    const auto gm = build_rx_matrices(net);
    const auto n = gm.size();
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::VectorXd p(n), q(n);
    for (Eigen::Index k = 0; k < n; ++k) {
        p(k) = u(rng);
        q(k) = u(rng);
    }
    FlowOptions o;
    o.tol = 1e-15;
    o.max_iter = 200;
    std::vector<double> lx, ly;
    for (double s : {1e-1, 1e-2, 1e-3, 1e-4}) {
        const auto sol = solve_flow(net, s * p, s * q, o);
        const double gap = (sol.v - lindistflow_voltage(gm, s * p, s * q, net.v0)).norm();
        lx.push_back(std::log(s));
        ly.push_back(std::log(gap));
    }
    const double slope = (ly.back() - ly.front()) / (lx.back() - lx.front());
    CHECK(slope == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("infeasible operating point and non-convergence") {
    const auto net = test::scalar_network(0.3, 0.3);
    CHECK_THROWS_AS(solve_flow(net, Eigen::VectorXd::Constant(1, -5.0), Eigen::VectorXd::Constant(1, -5.0)),
                    PowerFlowError);
    FlowOptions o;
    o.max_iter = 1;
    try {
        solve_flow(test::chain_network(), Eigen::Vector2d(-0.3, -0.3), Eigen::Vector2d::Zero(), o);
        FAIL("expected non-convergence");
    } catch (const PowerFlowError& e) {
        CHECK(!e.residual_trace().empty());
    }
}
