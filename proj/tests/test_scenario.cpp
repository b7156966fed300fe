#include <doctest.h>

#include "support.hpp"
#include "voltctl/errors.hpp"
#include "voltctl/lyapunov.hpp"
#include "voltctl/network_io.hpp"
#include "voltctl/scenario.hpp"

using namespace voltctl;

namespace {

RadialNetwork bundled() { return load_network(std::filesystem::path(VOLTCTL_DATA_DIR) / "ieee13_single.json"); }

MonotonePolicy certified_policy(const RadialNetwork& net, const GridMatrices& gm, double dt, std::uint64_t seed) {
    const auto model = make_control_model(net, gm);
    ProjectionLimits lim;
    lim.max_slope = certified_slope_cap(model, dt, 0.9);
    std::mt19937_64 rng(seed);
    return make_monotone_policy(model.channels, 6, 0.5 * lim.max_slope, 0.05, lim, rng);
}

}  // namespace

TEST_CASE("single-bus scenario solves for the target deviation") {
    const auto net = test::scalar_network(0.04, 0.08, {0.97, 1.03});
    const auto gm = build_rx_matrices(net);
    ScenarioConfig cfg;
    cfg.kind = ScenarioKind::high;
    cfg.deviation_lo = cfg.deviation_hi = 0.05;
    const auto s = generate_scenario(net, gm, cfg, 0);
    CHECK(s.p(0) == doctest::Approx(0.05 * net.v0 / gm.R(0, 0)).epsilon(1e-14));
    CHECK(s.v0_expected(0) == doctest::Approx(1.05).epsilon(1e-14));
    CHECK(s.q0.isZero());

    cfg.kind = ScenarioKind::low;
    const auto lo = generate_scenario(net, gm, cfg, 0);
    CHECK(lo.p(0) == doctest::Approx(-0.05 * net.v0 / gm.R(0, 0)).epsilon(1e-14));
    CHECK(lo.v0_expected(0) == doctest::Approx(0.95).epsilon(1e-14));
}

TEST_CASE("generated scenarios violate the band and hit the deviation range") {
    const auto net = bundled();
    const auto gm = build_rx_matrices(net);
    const auto channels = control_channels(net);
    const FlowSolver solver(net);
    ScenarioConfig cfg;
    cfg.count = 200;
    cfg.seed = 3;
    const auto all = generate(net, gm, cfg);
    REQUIRE(all.size() == 200);
    int high = 0;
    for (const auto& s : all) {
        const Eigen::VectorXd lin = channel_values(s.v0_expected, channels);
        CHECK_FALSE(in_band(lin, channels));
        const Eigen::VectorXd nl = channel_values(solver.solve(s.p, s.q0).v, channels);
        CHECK_FALSE(in_band(nl, channels));
        for (Eigen::Index k = 0; k < lin.size(); ++k) {
            const double d = std::abs(lin(k) / net.v0 - 1.0);
            CHECK(d >= 0.05 - 1e-12);
            CHECK(d <= 0.15 + 1e-12);
            const double dn = std::abs(nl(k) / net.v0 - 1.0);
            CHECK(dn >= 0.05 - 0.02);
            CHECK(dn <= 0.15 + 0.02);
        }
        high += lin(0) > net.v0 ? 1 : 0;
    }
    CHECK(high > 50);
    CHECK(high < 150);
}

TEST_CASE("scenario kinds and seeds") {
    const auto net = bundled();
    const auto gm = build_rx_matrices(net);
    ScenarioConfig cfg;
    cfg.count = 20;
    cfg.kind = ScenarioKind::low;
    for (const auto& s : generate(net, gm, cfg)) CHECK((s.v0_expected.array() < net.v0).any());

    cfg.kind = ScenarioKind::mixed;
    cfg.seed = 8;
    const auto a = generate(net, gm, cfg);
    const auto b = generate(net, gm, cfg);
    CHECK(a == b);
    // Scenario k depends only on (seed, k).
    CHECK(generate_scenario(net, gm, cfg, 13) == a[13]);
    cfg.seed = 9;
    CHECK_FALSE(generate_scenario(net, gm, cfg, 13) == a[13]);

    cfg.deviation_lo = 0.2;
    cfg.deviation_hi = 0.1;
    CHECK_THROWS_AS(generate(net, gm, cfg), std::invalid_argument);
    CHECK_THROWS_AS(scenario_kind_from_string("sideways"), std::invalid_argument);
}

TEST_CASE("scenario JSON round-trip") {
    const auto net = bundled();
    const auto gm = build_rx_matrices(net);
    ScenarioConfig cfg;
    cfg.count = 5;
    const auto s = generate(net, gm, cfg);
    const auto back = scenarios_from_json(nlohmann::json::parse(scenarios_to_json(s, cfg).dump()));
    CHECK(back == s);
    auto doc = scenarios_to_json(s, cfg);
    doc["scenarios"][2].erase("p");
    CHECK_THROWS_AS(scenarios_from_json(doc), SchemaError);
    doc = scenarios_to_json(s, cfg);
    doc["version"] = 7;
    CHECK_THROWS_AS(scenarios_from_json(doc), SchemaError);
}

TEST_CASE("time-series CSV") {
    const std::string good =
        "timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw\n"
        "0,1,10,2,0\n0,2,20,4,5\n"
        "900,2,21,4.5,6\n900,1,11,2.5,1\n";
    const auto ts = parse_timeseries(good);
    CHECK(ts.samples() == 2);
    CHECK(ts.bus_ids == std::vector<BusId>{1, 2});
    CHECK(ts.load_p_kw(1, 0) == 11.0);
    CHECK(ts.pv_p_kw(1, 1) == 6.0);
    CHECK(parse_timeseries(timeseries_to_csv(ts)) == ts);

    SUBCASE("column order is free") {
        const auto t2 = parse_timeseries("bus_id,timestamp,pv_p_kw,load_p_kw,load_q_kvar\n1,0,3,1,2\n");
        CHECK(t2.load_p_kw(0, 0) == 1.0);
        CHECK(t2.load_q_kvar(0, 0) == 2.0);
        CHECK(t2.pv_p_kw(0, 0) == 3.0);
    }
    SUBCASE("missing column is named") {
        try {
            parse_timeseries("timestamp,bus_id,load_p_kw,load_q_kvar\n0,1,1,1\n", "f.csv");
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(std::string(e.what()).find("pv_p_kw") != std::string::npos);
        }
    }
    SUBCASE("bad cell is located") {
        try {
            parse_timeseries("timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw\n0,1,1,1,0\n900,1,x,1,0\n", "f.csv");
            FAIL("expected SchemaError");
        } catch (const SchemaError& e) {
            CHECK(e.where() == "f.csv:3 column load_p_kw");
        }
    }
    SUBCASE("structural problems") {
        const std::string h = "timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw\n";
        CHECK_THROWS_AS(parse_timeseries(h), SchemaError);
        CHECK_THROWS_AS(parse_timeseries(h + "900,1,1,1,0\n0,1,1,1,0\n"), SchemaError);
        CHECK_THROWS_AS(parse_timeseries(h + "0,1,1,1,0\n900,2,1,1,0\n"), SchemaError);
        CHECK_THROWS_AS(parse_timeseries(h + "0,1,1,1,0\n0,1,1,1,0\n"), SchemaError);
        CHECK_THROWS_AS(parse_timeseries(h + "0,1,1,1\n"), SchemaError);
        CHECK_THROWS_AS(parse_timeseries(h + "0,1.5,1,1,0\n"), SchemaError);
        CHECK_THROWS_AS(parse_timeseries("timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw,extra\n"), SchemaError);
    }
}

TEST_CASE("kW to per-unit injections") {
    auto net = test::chain_network();
    net.base.s_mva = 2.0;
    const auto ts = parse_timeseries("timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw\n0,2,100,40,300\n");
    Eigen::VectorXd p, q;
    timeseries_injections(ts, net, 0, p, q);
    CHECK(p(0) == 0.0);
    CHECK(p(1) == doctest::Approx(200.0 / 2000.0));
    CHECK(q(1) == doctest::Approx(-40.0 / 2000.0));

    std::mt19937_64 rng(1);
    auto three = test::random_three_phase_tree(rng, 2, 0.01);
    three.base.s_mva = 1.0;
    timeseries_injections(ts, three, 0, p, q);
    for (int ph = 0; ph < 3; ++ph) CHECK(p(3 + ph) == doctest::Approx(200.0 / 1000.0 / 3.0));

    const auto bad = parse_timeseries("timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw\n0,9,1,1,0\n");
    CHECK_THROWS_AS(timeseries_injections(bad, net, 0, p, q), SchemaError);
}

TEST_CASE("synthetic profile") {
    const auto net = bundled();
    ProfileConfig cfg;
    const auto a = synthetic_daily_profile(net, cfg);
    CHECK(a.samples() == 97);
    CHECK(a.bus_ids.size() == net.bus_count());
    CHECK(a == synthetic_daily_profile(net, cfg));
    CHECK((a.pv_p_kw.row(0).array() == 0.0).all());  // midnight
    CHECK((a.pv_p_kw.row(48).array() > 0.0).all());  // noon
    CHECK(parse_timeseries(timeseries_to_csv(a)) == a);
    cfg.seed = 1;
    CHECK_FALSE(synthetic_daily_profile(net, cfg) == a);

    const auto shipped = load_timeseries(std::filesystem::path(VOLTCTL_DATA_DIR) / "daily_profile.csv");
    CHECK(shipped == a);
}

TEST_CASE("replay") {
    const auto net = bundled();
    const auto gm = build_rx_matrices(net);
    const auto pol = certified_policy(net, gm, 1.0, 4);

    SUBCASE("all-zero series gives flat traces") {
        TimeSeries ts = synthetic_daily_profile(net, {});
        ts.load_p_kw.setZero();
        ts.load_q_kvar.setZero();
        ts.pv_p_kw.setZero();
        const auto rep = replay(net, pol, ts, 1.0, 3);
        CHECK(rep.time.size() == 3 * 97);
        CHECK((rep.v_uncontrolled.array() == net.v0).all());
        CHECK((rep.v_controlled.array() == net.v0).all());
        CHECK((rep.u.array() == 0.0).all());
    }

    SUBCASE("constant heavy generation: controlled trace recovers, uncontrolled does not") {
        TimeSeries ts;
        ts.bus_ids.clear();
        for (std::size_t b = 1; b <= net.bus_count(); ++b) ts.bus_ids.push_back(static_cast<BusId>(b));
        const auto m = static_cast<Eigen::Index>(ts.bus_ids.size());
        ts.timestamps = {0.0, 300.0};
        ts.load_p_kw = Eigen::MatrixXd::Zero(2, m);
        ts.load_q_kvar = Eigen::MatrixXd::Zero(2, m);
        ts.pv_p_kw = Eigen::MatrixXd::Constant(2, m, 150.0);
        const auto rep = replay(net, pol, ts, 1.0, 300);
        const auto ch = control_channels(net);
        const auto last = rep.v_controlled.rows() - 1;
        CHECK_FALSE(in_band(rep.v_uncontrolled.row(last).transpose(), ch));
        CHECK_FALSE(in_band(rep.v_controlled.row(0).transpose(), ch));
        CHECK(in_band(rep.v_controlled.row(last).transpose(), ch, 1e-3));

        // Uncontrolled trace does not depend on the policy.
        const auto other = certified_policy(net, gm, 1.0, 5);
        CHECK(replay(net, other, ts, 1.0, 300).v_uncontrolled == rep.v_uncontrolled);
    }

    SUBCASE("argument checks") {
        const auto ts = synthetic_daily_profile(net, {});
        CHECK_THROWS_AS(replay(net, pol, ts, 0.0, 1), std::invalid_argument);
        CHECK_THROWS_AS(replay(net, pol, ts, 1.0, 0), std::invalid_argument);
    }
}
