#include <doctest.h>

#include <fstream>
#include <set>
#include <sstream>

#include "support.hpp"
#include "voltctl/errors.hpp"
#include "voltctl/lyapunov.hpp"
#include "voltctl/rl.hpp"

using namespace voltctl;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TrainConfig small_config(std::size_t episodes) {
    TrainConfig cfg;
    cfg.episodes = episodes;
    cfg.checkpoint_every = 10;
    cfg.seed = 5;
    return cfg;
}

}  // namespace

TEST_CASE("replay buffer keeps the newest entries in order") {
    ReplayBuffer buf(4);
    for (int k = 0; k < 10; ++k) buf.push({double(k), 0.0, 0.0, 0.0});
    CHECK(buf.size() == 4);
    CHECK(buf.capacity() == 4);
    for (std::size_t k = 0; k < 4; ++k) CHECK(buf.at(k).v == 6.0 + static_cast<double>(k));
    CHECK_THROWS_AS(buf.push({std::nan(""), 0.0, 0.0, 0.0}), TrainingFault);
    CHECK_THROWS_AS(buf.push({0.0, 0.0, std::numeric_limits<double>::infinity(), 0.0}), TrainingFault);
    CHECK(buf.size() == 4);
}

TEST_CASE("replay sampling is uniform without replacement") {
    ReplayBuffer buf(20);
    for (int k = 0; k < 20; ++k) buf.push({double(k), 0.0, 0.0, 0.0});
    std::mt19937_64 rng(51);
    std::vector<double> count(20, 0.0);
    const int draws = 20000;
    for (int d = 0; d < draws; ++d) {
        const auto s = buf.sample(5, rng);
        std::set<double> seen;
        for (const auto& t : s) {
            seen.insert(t.v);
            count[static_cast<std::size_t>(t.v)] += 1.0;
        }
        CHECK(seen.size() == 5);
    }
    const double expect = draws * 5.0 / 20.0;
    double chi2 = 0.0;
    for (double c : count) chi2 += (c - expect) * (c - expect) / expect;
    // 19 degrees of freedom, p = 0.001 critical value.
    CHECK(chi2 < 43.82);
    CHECK_THROWS(buf.sample(21, rng));
}

TEST_CASE("critic gradients match finite differences") {
    std::mt19937_64 rng(52);
    Mlp critic({2, 8, 8, 1}, rng), target({2, 8, 8, 1}, rng);
    CriticBatch b{Eigen::MatrixXd::Random(2, 6), Eigen::MatrixXd::Random(2, 6), Eigen::RowVectorXd::Random(6)};
    Eigen::VectorXd grad;
    critic_loss(critic, target, b, 0.9, &grad);
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < critic.parameters().size(); k += 7) {
        Mlp a = critic, c = critic;
        a.parameters()(k) += h;
        c.parameters()(k) -= h;
        const double fd = (critic_loss(a, target, b, 0.9, nullptr) - critic_loss(c, target, b, 0.9, nullptr)) / (2 * h);
        CHECK(std::abs(fd - grad(k)) < 1e-7);
    }
    const Eigen::VectorXd dq = critic_action_gradient(critic, b.sa);
    for (Eigen::Index j = 0; j < 6; ++j) {
        Eigen::VectorXd a = b.sa.col(j), c = b.sa.col(j);
        a(1) += h;
        c(1) -= h;
        CHECK(std::abs((critic(a) - critic(c)) / (2 * h) - dq(j)) < 1e-7);
    }
}

TEST_CASE("critic with gamma = 0 converges to the stage cost") {
    std::mt19937_64 rng(53);
    Mlp critic({2, 64, 64, 1}, rng);
    const Mlp target = critic;
    Adam opt(static_cast<std::size_t>(critic.parameters().size()), 1e-3);
    const int n = 12;
    CriticBatch b{Eigen::MatrixXd(2, n), Eigen::MatrixXd::Zero(2, n), Eigen::RowVectorXd(n)};
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int j = 0; j < n; ++j) {
        b.sa(0, j) = u(rng);
        b.sa(1, j) = u(rng);
        b.cost(j) = 0.5 * b.sa(0, j) * b.sa(0, j) + 0.1 * std::abs(b.sa(1, j));
    }
    for (int it = 0; it < 30000; ++it) critic_update(critic, opt, target, b, 0.0);
    const Eigen::RowVectorXd q = critic.forward(b.sa).row(0);
    CHECK((q - b.cost).cwiseAbs().maxCoeff() < 1e-3);
}

TEST_CASE("actor parameter gradient matches finite differences") {
    std::mt19937_64 rng(54);
    const auto p = test::random_params(rng, 6, ProjectionLimits{}, Deadband{-1.0, 1.0});
    const Eigen::VectorXd theta = flatten(p);
    CHECK(unflatten(theta, 6) == p);
    const double h = 1e-7;
    for (double x : {-2.3, -1.7, 1.45, 2.9}) {
        const Eigen::VectorXd g = flatten(stacked_relu_param_grad(p, x));
        for (Eigen::Index k = 0; k < theta.size(); ++k) {
            Eigen::VectorXd a = theta, b = theta;
            a(k) += h;
            b(k) -= h;
            const double fd =
                (eval_stacked_relu(unflatten(a, 6), x) - eval_stacked_relu(unflatten(b, 6), x)) / (2 * h);
            CHECK(std::abs(fd - g(k)) < 1e-6);
        }
    }
}

TEST_CASE("actor updates stay feasible and saturate at the slope ceiling") {
    // Quadratic critic Q = (a + K x)^2 wants g(x) = K x with K far above the ceiling.
    const double K = 10.0;
    ProjectionLimits lim;
    lim.max_slope = 2.0;
    const Deadband band{-0.5, 0.5};
    std::mt19937_64 rng(55);
    auto p = test::random_params(rng, 8, lim, band);
    Adam opt(32, 1e-2);
    std::vector<double> xs;
    for (int k = -30; k <= 30; ++k) xs.push_back(k * 0.1);
    const ActionGradient dq = [&](double x, double a) { return 2.0 * (a + K * x); };
    for (int it = 0; it < 3000; ++it) {
        actor_update(p, opt, xs, dq, lim, band);
        REQUIRE(is_feasible(p, lim, band));
    }
    double smax = 0.0;
    for (const auto& s : slope_segments(p)) smax = std::max(smax, s.slope);
    CHECK(smax == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(stacked_relu_slope(p, 2.5) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(stacked_relu_slope(p, -2.5) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("training config") {
    const TrainConfig cfg;
    const auto back = train_config_from_json(to_json(cfg));
    CHECK(to_json(back) == to_json(cfg));

    auto doc = to_json(cfg);
    doc["gamma"] = 1.5;
    CHECK_THROWS_AS(train_config_from_json(doc), SchemaError);
    doc = to_json(cfg);
    doc["learning_rate"] = 0.1;
    CHECK_THROWS_AS(train_config_from_json(doc), SchemaError);
    doc = to_json(cfg);
    doc["actor"] = "transformer";
    CHECK_THROWS_AS(train_config_from_json(doc), SchemaError);

    const auto bundled = load_train_config(std::filesystem::path(VOLTCTL_DATA_DIR) / "train_config.json");
    CHECK(bundled.episodes <= 2000);
    CHECK(bundled.actor == ActorKind::monotone);
}

TEST_CASE("curve CSV round-trip") {
    std::vector<CurveRow> rows{{0, -12.5, 30.0, false}, {1, -0.1 / 3.0, 7.0, false}, {2, 0.0, 0.0, false}};
    const auto text = curve_csv(rows);
    CHECK(text.rfind("episode,return,mean_recovery_steps\n", 0) == 0);
    CHECK(parse_curve_csv(text) == rows);
    CHECK_THROWS_AS(parse_curve_csv("episode,return\n0,1\n"), SchemaError);
    CHECK_THROWS_AS(parse_curve_csv(std::string(kCurveHeader) + "\n0,x,1\n"), SchemaError);
}

TEST_CASE("zero episodes write only the initial checkpoint") {
    const auto net = test::chain_network();
    const auto gm = build_rx_matrices(net);
    const auto dir = test::temp_dir("train0");
    const auto res = train(net, gm, small_config(0), {dir, {}});
    CHECK(res.curve.empty());
    CHECK(std::filesystem::exists(dir / "checkpoint_00000.json"));
    CHECK(std::filesystem::exists(dir / "policy_final.json"));
    CHECK(slurp(dir / "curve.csv") == "episode,return,mean_recovery_steps\n");
    CHECK(load_policy(dir / "checkpoint_00000.json") == *res.policy);
}

TEST_CASE("training is deterministic and every checkpoint certifies") {
    const auto net = test::chain_network();
    const auto gm = build_rx_matrices(net);
    const auto model = make_control_model(net, gm);
    const auto d1 = test::temp_dir("train_a");
    const auto d2 = test::temp_dir("train_b");
    const auto cfg = small_config(30);
    const auto r1 = train(net, gm, cfg, {d1, {}});
    const auto r2 = train(net, gm, cfg, {d2, {}});
    CHECK(r1.curve == r2.curve);
    CHECK(*r1.policy == *r2.policy);
    CHECK(slurp(d1 / "curve.csv") == slurp(d2 / "curve.csv"));
    REQUIRE(r1.checkpoints.size() == 5);  // 0, 10, 20, 30, final
    for (const auto& ck : r1.checkpoints) {
        CHECK(slurp(ck) == slurp(d2 / ck.filename()));
        CHECK(certify(model, load_policy(ck), cfg.dt).passed);
    }
    auto other = cfg;
    other.seed = 6;
    CHECK_FALSE(train(net, gm, other).curve == r1.curve);
}

TEST_CASE("two-bus toy: trained policy stabilizes random violations") {
    const auto net = test::chain_network();
    const auto gm = build_rx_matrices(net);
    TrainConfig cfg;
    cfg.episodes = 500;
    cfg.seed = 1;
    const auto res = train(net, gm, cfg);
    REQUIRE(res.policy);
    const auto model = make_control_model(net, gm);
    CHECK(certify(model, *res.policy, cfg.dt).passed);

    ScenarioConfig sc;
    sc.count = 100;
    sc.seed = 99;
    const auto scenarios = generate(net, gm, sc);
    VoltageEnvironment env(net, gm, EnvMode::linear, cfg.dt);
    int ok = 0;
    for (const auto& s : scenarios) {
        env.reset(s.p, s.q0);
        for (int t = 0; t < 100; ++t) env.step(act(*res.policy, env.channel_voltages()));
        ok += in_band(env.channel_voltages(), model.channels, 1e-3) ? 1 : 0;
    }
    CHECK(ok == 100);
}

TEST_CASE("unconstrained actor checkpoints round-trip") {
    const auto net = test::chain_network();
    const auto gm = build_rx_matrices(net);
    auto cfg = small_config(3);
    cfg.actor = ActorKind::mlp;
    const auto dir = test::temp_dir("train_mlp");
    const auto res = train(net, gm, cfg, {dir, {}});
    REQUIRE(res.mlp_policy);
    const auto doc = nlohmann::json::parse(slurp(dir / "policy_final.json"));
    CHECK(doc["kind"] == "mlp");
    const auto back = mlp_policy_from_json(doc, control_channels(net));
    for (double v : {0.9, 1.0, 1.1}) CHECK(back.action(1, v) == res.mlp_policy->action(1, v));
    CHECK_THROWS_AS(load_policy(dir / "policy_final.json"), SchemaError);
}
