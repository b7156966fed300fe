#include <doctest.h>

#include <set>

#include "support.hpp"
#include "voltctl/errors.hpp"
#include "voltctl/grid.hpp"
#include "voltctl/network_io.hpp"

using namespace voltctl;

namespace {

// Brute force: walk parents to the root and intersect the line sets.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> oracle_rx(const RadialNetwork& net) {
    const std::size_t n = net.bus_count();
    std::vector<int> parent_line(n + 1, -1);
    std::vector<BusId> parent(n + 1, -1);
    for (std::size_t k = 0; k < net.lines.size(); ++k) {
        parent[net.lines[k].to] = net.lines[k].from;
        parent_line[net.lines[k].to] = static_cast<int>(k);
    }
    std::vector<std::set<int>> on_path(n + 1);
    for (std::size_t b = 1; b <= n; ++b)
        for (BusId c = static_cast<BusId>(b); c != 0; c = parent[c]) on_path[b].insert(parent_line[c]);
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    Eigen::MatrixXd X = R;
    for (std::size_t i = 1; i <= n; ++i)
        for (std::size_t j = 1; j <= n; ++j)
            for (int k : on_path[i])
                if (on_path[j].count(k)) {
                    R(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1)) += 2 * net.lines[k].r;
                    X(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1)) += 2 * net.lines[k].x;
                }
    return {R, X};
}

}  // namespace

TEST_CASE("chain feeder matrices and voltage") {
    const auto gm = build_rx_matrices(test::chain_network());
    Eigen::Matrix2d x_expect, r_expect;
    x_expect << 0.2, 0.2, 0.2, 0.6;
    r_expect << 0.1, 0.1, 0.1, 0.3;
    CHECK((gm.X - x_expect).norm() < 1e-15);
    CHECK((gm.R - r_expect).norm() < 1e-15);

    const Eigen::Vector2d v = lindistflow_voltage(gm, Eigen::Vector2d(-0.1, -0.1), Eigen::Vector2d::Zero(), 1.0);
    CHECK(v(0) == doctest::Approx(0.98).epsilon(1e-14));
    CHECK(v(1) == doctest::Approx(0.96).epsilon(1e-14));

    const Eigen::Vector2d z = lindistflow_voltage(gm, Eigen::Vector2d::Zero(), Eigen::Vector2d::Zero(), 1.0);
    CHECK(z == Eigen::Vector2d::Ones());
}

TEST_CASE("q cancelling the environment voltage restores v0") {
    const auto gm = build_rx_matrices(test::chain_network());
    const Eigen::Vector2d p(0.3, -0.2);
    const Eigen::VectorXd venv = environment_voltage(gm, p, 1.0);
    const Eigen::VectorXd q = -gm.X_inv * (venv - Eigen::VectorXd::Ones(2));
    CHECK((lindistflow_voltage(gm, p, q, 1.0) - Eigen::VectorXd::Ones(2)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("R and X match the common-path oracle on random trees") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const auto net = test::random_tree(rng, 1 + trial % 25);
        const auto gm = build_rx_matrices(net);
        const auto [R, X] = oracle_rx(net);
        CHECK((gm.R - R).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((gm.X - X).cwiseAbs().maxCoeff() < 1e-14);
        CHECK((gm.X - gm.X.transpose()).norm() == 0.0);
        CHECK((gm.R - gm.R.transpose()).norm() == 0.0);
        const auto id = Eigen::MatrixXd::Identity(gm.size(), gm.size());
        CHECK((gm.X * gm.X_inv - id).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("X is positive definite on random trees with positive reactance") {
    std::mt19937_64 rng(12);
    for (int trial = 0; trial < 200; ++trial) {
        std::uniform_int_distribution<std::size_t> size(1, 30);
        const auto gm = build_rx_matrices(test::random_tree(rng, size(rng), 1e-4, 0.2));
        CHECK(gm.x_certificate.pd);
        CHECK(gm.X.llt().info() == Eigen::Success);
        CHECK(check_positive_definite(gm.R).pd);
    }
}

TEST_CASE("LinDistFlow is affine in the injections") {
    std::mt19937_64 rng(13);
    const auto net = test::random_tree(rng, 12);
    const auto gm = build_rx_matrices(net);
    const Eigen::VectorXd p1 = Eigen::VectorXd::Random(12), q1 = Eigen::VectorXd::Random(12);
    const Eigen::VectorXd p2 = Eigen::VectorXd::Random(12), q2 = Eigen::VectorXd::Random(12);
    const double a = 0.3, b = -1.7;
    const Eigen::VectorXd lhs = lindistflow_voltage(gm, a * p1 + b * p2, a * q1 + b * q2, 1.0);
    const Eigen::VectorXd v1 = lindistflow_voltage(gm, p1, q1, 1.0) - Eigen::VectorXd::Ones(12);
    const Eigen::VectorXd v2 = lindistflow_voltage(gm, p2, q2, 1.0) - Eigen::VectorXd::Ones(12);
    const Eigen::VectorXd rhs = a * v1 + b * v2 + Eigen::VectorXd::Ones(12);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("step dynamics") {
    GridMatrices gm;
    gm.X = Eigen::MatrixXd::Constant(1, 1, 0.2);
    VoltageState s{Eigen::VectorXd::Constant(1, 1.1), Eigen::VectorXd::Zero(1), 0};
    const auto n = step_dynamics(gm, s, Eigen::VectorXd::Constant(1, -0.25), 1.0);
    CHECK(n.v(0) == doctest::Approx(1.05).epsilon(1e-15));
    CHECK(n.q(0) == -0.25);
    CHECK(n.t == 1);

    const auto z = step_dynamics(gm, s, Eigen::VectorXd::Zero(1), 1.0);
    CHECK(z.v == s.v);

    const auto chain = build_rx_matrices(test::chain_network());
    VoltageState c{Eigen::Vector2d(1.07, 0.93), Eigen::VectorXd::Zero(2), 0};
    const Eigen::Vector2d u(0.4, -0.3);
    const auto back = step_dynamics(chain, step_dynamics(chain, c, u, 0.5), -u, 0.5);
    CHECK((back.v - c.v).cwiseAbs().maxCoeff() < 1e-15);

    // u = -X^-1 (v - v*) / dt lands on v* in one step.
    const Eigen::Vector2d target(1.0, 1.0);
    const double dt = 0.25;
    const Eigen::VectorXd u_star = -chain.X_inv * (c.v - target) / dt;
    CHECK((step_dynamics(chain, c, u_star, dt).v - target).cwiseAbs().maxCoeff() < 1e-12);

    CHECK_THROWS_AS(step_dynamics(chain, c, u, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(step_dynamics(chain, c, Eigen::VectorXd::Zero(3), 1.0), std::invalid_argument);
}

TEST_CASE("three-phase matrices") {
    SUBCASE("uncoupled lines reduce to per-phase copies of the single-phase matrices") {
        std::mt19937_64 rng(14);
        RadialNetwork single = test::random_tree(rng, 7);
        RadialNetwork three = single;
        three.phase_model = PhaseModel::three;
        for (auto& ln : three.lines) ln.z = Matrix3c::Identity() * Complex(ln.r, ln.x);
        const auto g1 = build_rx_matrices(single);
        const auto g3 = build_rx_matrices(three);
        for (Eigen::Index i = 0; i < 7; ++i)
            for (Eigen::Index j = 0; j < 7; ++j)
                for (int a = 0; a < 3; ++a)
                    for (int b = 0; b < 3; ++b) {
                        const double expect = a == b ? g1.X(i, j) : 0.0;
                        CHECK(std::abs(g3.X(3 * i + a, 3 * j + b) - expect) < 1e-14);
                    }
    }

    SUBCASE("dominant lines give X > 0 and reordering preserves the spectrum") {
        std::mt19937_64 rng(15);
        int tested = 0;
        for (int trial = 0; trial < 100; ++trial) {
            auto net = test::random_three_phase_tree(rng, 1 + trial % 10, 0.015);
            bool dominant = true;
            for (const auto& ln : net.lines) dominant = dominant && check_diagonal_dominance(ln);
            if (!dominant) continue;
            ++tested;
            const auto gm = build_rx_matrices(net);
            CHECK(gm.x_certificate.pd);
            const auto T = phase_major_permutation(net.bus_count());
            const Eigen::MatrixXd check = T.transpose() * gm.X * T;
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(gm.X), e2(check);
            CHECK((e1.eigenvalues() - e2.eigenvalues()).cwiseAbs().maxCoeff() < 1e-12);
        }
        CHECK(tested > 50);
    }

    SUBCASE("permutation maps phase-major to bus-major") {
        const auto T = phase_major_permutation(2);
        Eigen::VectorXd pm(6);
        pm << 10, 11, 20, 21, 30, 31;  // phase a of bus 1, 2, then phase b, ...
        const Eigen::VectorXd bm = T * pm;
        Eigen::VectorXd expect(6);
        expect << 10, 20, 30, 11, 21, 31;
        CHECK(bm == expect);
    }

    SUBCASE("dominance test") {
        Line ln;
        ln.z = Matrix3c::Identity() * Complex(0.01, 0.1);
        CHECK(check_diagonal_dominance(ln));
        ln.z(0, 1) = ln.z(1, 0) = Complex(0.0, 0.25);
        CHECK_FALSE(check_diagonal_dominance(ln));
        ln.z = Matrix3c::Identity() * Complex(0.01, -0.1);
        CHECK_FALSE(check_diagonal_dominance(ln));
    }
}

TEST_CASE("structural and schema errors") {
    SUBCASE("cycle") {
        auto net = test::chain_network();
        net.lines.push_back({2, 1, 0.1, 0.1, Matrix3c::Zero()});
        CHECK_THROWS_AS(build_rx_matrices(net), StructuralError);
    }
    SUBCASE("disconnected bus") {
        auto net = test::chain_network();
        net.limits.push_back(test::band());
        CHECK_THROWS_AS(build_rx_matrices(net), StructuralError);
    }
    SUBCASE("non-positive reactance") {
        auto net = test::chain_network();
        net.lines[1].x = 0.0;
        CHECK_THROWS_AS(build_rx_matrices(net), SchemaError);
    }
    SUBCASE("limits not around v0") {
        auto net = test::chain_network();
        net.limits[2] = {1.01, 1.05};
        CHECK_THROWS_AS(build_rx_matrices(net), SchemaError);
    }
    SUBCASE("unknown controlled bus") {
        auto net = test::chain_network();
        net.controlled = {3};
        CHECK_THROWS_AS(build_rx_matrices(net), SchemaError);
    }
    SUBCASE("non-symmetric matrix") {
        Eigen::Matrix2d m;
        m << 1, 0.5, 0, 1;
        CHECK_THROWS_AS(check_positive_definite(m), std::invalid_argument);
    }
}

TEST_CASE("network file format") {
    const auto net = test::chain_network();
    const auto back = parse_network(network_to_json(net));
    const auto g1 = build_rx_matrices(net);
    const auto g2 = build_rx_matrices(back);
    CHECK(g1.X == g2.X);
    CHECK(g1.R == g2.R);
    CHECK(back.controlled == net.controlled);

    const std::string ohm = R"({"base": {"s_mva": 2.0, "v_kv": 4.0}, "buses": [{"id": 1, "v_lower_pu": 0.95, "v_upper_pu": 1.05}],
        "lines": [{"from": 0, "to": 1, "r_ohm": 0.8, "x_ohm": 1.6}], "controlled": [1]})";
    const auto o = parse_network_text(ohm);
    CHECK(o.lines[0].r == doctest::Approx(0.1));
    CHECK(o.lines[0].x == doctest::Approx(0.2));

    CHECK_THROWS_AS(parse_network_text(R"({"base": {"s_mva": 1, "v_kv": 1}, "buses": [], "bogus": 1})"), SchemaError);
    CHECK_THROWS_AS(parse_network_text("{ not json"), SchemaError);
    try {
        parse_network_text("{\n  \"buses\": [\n  }");
        FAIL("expected a parse error");
    } catch (const SchemaError& e) {
        CHECK(e.where().rfind("network:3:", 0) == 0);
    }
}

TEST_CASE("bundled feeders load and certify") {
    for (const char* f : {"ieee13_single.json", "ieee13_three.json"}) {
        const auto net = load_network(std::filesystem::path(VOLTCTL_DATA_DIR) / f);
        const auto gm = build_rx_matrices(net);
        CHECK(gm.x_certificate.pd);
        if (net.phase_model == PhaseModel::three)
            for (const auto& ln : net.lines) CHECK(check_diagonal_dominance(ln));
    }
}
