#include <benchmark/benchmark.h>

#include <filesystem>
#include <random>

#include "voltctl/eval.hpp"
#include "voltctl/lyapunov.hpp"
#include "voltctl/network_io.hpp"
#include "voltctl/powerflow.hpp"
#include "voltctl/scenario.hpp"

using namespace voltctl;

namespace {

const RadialNetwork& feeder() {
    static const RadialNetwork net = load_network(std::filesystem::path(VOLTCTL_DATA_DIR) / "ieee13_single.json");
    return net;
}

const RadialNetwork& feeder3() {
    static const RadialNetwork net = load_network(std::filesystem::path(VOLTCTL_DATA_DIR) / "ieee13_three.json");
    return net;
}

MonotonePolicy certified(const RadialNetwork& net, const GridMatrices& gm) {
    const auto model = make_control_model(net, gm);
    ProjectionLimits lim;
    lim.max_slope = certified_slope_cap(model, 1.0, 0.9);
    std::mt19937_64 rng(3);
    return make_monotone_policy(model.channels, 8, 0.5 * lim.max_slope, 0.05, lim, rng);
}

void BM_BuildRX(benchmark::State& st) {
    const auto& net = st.range(0) ? feeder3() : feeder();
    for (auto _ : st) benchmark::DoNotOptimize(build_rx_matrices(net));
}
BENCHMARK(BM_BuildRX)->Arg(0)->Arg(1);

void BM_PowerFlow(benchmark::State& st) {
    const auto& net = st.range(0) ? feeder3() : feeder();
    const FlowSolver solver(net);
    const auto n = build_rx_matrices(net).size();
    const Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 0.02), q = Eigen::VectorXd::Constant(n, -0.01);
    for (auto _ : st) benchmark::DoNotOptimize(solver.solve(p, q));
}
BENCHMARK(BM_PowerFlow)->Arg(0)->Arg(1);

void BM_Certify(benchmark::State& st) {
    const auto gm = build_rx_matrices(feeder());
    const auto model = make_control_model(feeder(), gm);
    const auto mp = certified(feeder(), gm);
    for (auto _ : st) benchmark::DoNotOptimize(certify(model, mp, 1.0));
}
BENCHMARK(BM_Certify);

void BM_Evaluate(benchmark::State& st) {
    const auto& net = feeder();
    const auto gm = build_rx_matrices(net);
    const auto mp = certified(net, gm);
    ScenarioConfig sc;
    sc.count = static_cast<std::size_t>(st.range(0));
    const auto scenarios = generate(net, gm, sc);
    EvalConfig cfg;
    for (auto _ : st) benchmark::DoNotOptimize(evaluate(net, gm, mp, scenarios, cfg));
    st.SetItemsProcessed(st.iterations() * st.range(0));
}
BENCHMARK(BM_Evaluate)->Arg(20)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
