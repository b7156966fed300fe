#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "voltctl/grid.hpp"
#include "voltctl/policy.hpp"

namespace voltctl::test {

inline VoltageLimits band(double lo = 0.95, double hi = 1.05) { return {lo, hi}; }

/// 0 - 1 - 2 with r = (0.05, 0.1) and x = (0.1, 0.2); X = [[0.2, 0.2], [0.2, 0.6]].
inline RadialNetwork chain_network() {
    RadialNetwork net;
    net.limits = {band(), band(), band()};
    net.lines.push_back({0, 1, 0.05, 0.1, Matrix3c::Zero()});
    net.lines.push_back({1, 2, 0.1, 0.2, Matrix3c::Zero()});
    net.controlled = {1, 2};
    return net;
}

/// One line 0 - 1; X = [2x], R = [2r].
inline RadialNetwork scalar_network(double r, double x, VoltageLimits lim = band()) {
    RadialNetwork net;
    net.limits = {lim, lim};
    net.lines.push_back({0, 1, r, x, Matrix3c::Zero()});
    net.controlled = {1};
    return net;
}

/// Random recursive tree on n non-root buses: bus k attaches to a uniform
/// earlier bus. Bus ids are shuffled away from insertion order.
inline RadialNetwork random_tree(std::mt19937_64& rng, std::size_t n, double rx_lo = 0.005, double rx_hi = 0.05,
                                 std::size_t controlled = 0) {
    std::vector<BusId> ids(n);
    for (std::size_t k = 0; k < n; ++k) ids[k] = static_cast<BusId>(k + 1);
    std::shuffle(ids.begin(), ids.end(), rng);
    std::uniform_real_distribution<double> imp(rx_lo, rx_hi);
    RadialNetwork net;
    net.limits.assign(n + 1, band());
    for (std::size_t k = 0; k < n; ++k) {
        const std::size_t u = std::uniform_int_distribution<std::size_t>(0, k)(rng);
        const BusId parent = u == 0 ? 0 : ids[u - 1];
        net.lines.push_back({parent, ids[k], imp(rng), imp(rng), Matrix3c::Zero()});
    }
    std::vector<BusId> all(ids);
    std::shuffle(all.begin(), all.end(), rng);
    const std::size_t m = controlled == 0 ? n : std::min(controlled, n);
    net.controlled.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(net.controlled.begin(), net.controlled.end());
    return net;
}

/// Symmetric 3x3 line impedance with strong self terms and weak coupling.
inline Matrix3c coupled_impedance(std::mt19937_64& rng, double coupling) {
    std::uniform_real_distribution<double> self(0.01, 0.04);
    std::uniform_real_distribution<double> mutual(0.0, coupling);
    Matrix3c z;
    for (int i = 0; i < 3; ++i) z(i, i) = {self(rng), self(rng)};
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j) z(i, j) = z(j, i) = {mutual(rng) * 0.5, mutual(rng)};
    return z;
}

inline RadialNetwork random_three_phase_tree(std::mt19937_64& rng, std::size_t n, double coupling) {
    RadialNetwork net = random_tree(rng, n);
    net.phase_model = PhaseModel::three;
    for (auto& ln : net.lines) {
        ln.z = coupled_impedance(rng, coupling);
        ln.r = ln.x = 0.0;
    }
    return net;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("voltctl_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

/// Random feasible stacked-ReLU parameters: raw Gaussian draws pushed through the projection.
inline StackedRelu random_params(std::mt19937_64& rng, std::size_t d, const ProjectionLimits& lim,
                                 const std::optional<Deadband>& anchors) {
    std::normal_distribution<double> w(0.0, 2.0);
    std::normal_distribution<double> b(0.0, 0.2);
    StackedRelu p;
    for (std::size_t l = 0; l < d; ++l) {
        p.w_plus.push_back(w(rng));
        p.w_minus.push_back(w(rng));
        p.b_plus.push_back(b(rng));
        p.b_minus.push_back(b(rng));
    }
    return project_params(p, lim, anchors);
}

/// Random policy with every out-of-band slope in [lo, 1] * cap, kinks spread
/// over about 0.05 per side.
inline MonotonePolicy steep_policy(const std::vector<ControlChannel>& channels, double cap, double lo,
                                   std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> units(2, 6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<ChannelPolicy> out;
    for (const auto& c : channels) {
        ChannelPolicy cp;
        cp.bus = c.bus;
        cp.phase = c.phase;
        cp.v_ref = 0.5 * (c.limits.lower + c.limits.upper);
        cp.band = {c.limits.lower - cp.v_ref, c.limits.upper - cp.v_ref};
        const std::size_t d = units(rng);
        auto side = [&](std::vector<double>& w, std::vector<double>& b, double edge, double sign) {
            w.assign(d, 0.0);
            b.assign(d, 0.0);
            double prefix = 0.0, off = 0.0;
            for (std::size_t l = 1; l < d; ++l) {
                const double next = std::max(prefix, (lo + (1.0 - lo) * u(rng)) * cap);
                w[l] = sign * (next - prefix);
                prefix = next;
                b[l] = edge - off;
                off += 0.05 * u(rng);
            }
        };
        side(cp.params.w_plus, cp.params.b_plus, -cp.band.upper, 1.0);
        side(cp.params.w_minus, cp.params.b_minus, cp.band.lower, -1.0);
        out.push_back(cp);
    }
    return MonotonePolicy(out);
}

}  // namespace voltctl::test
