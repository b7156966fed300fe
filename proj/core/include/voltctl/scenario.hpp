#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voltctl/environment.hpp"
#include "voltctl/grid.hpp"
#include "voltctl/policy.hpp"
#include "voltctl/powerflow.hpp"

namespace voltctl {

enum class ScenarioKind { high, low, mixed };

std::string_view to_string(ScenarioKind k);
ScenarioKind scenario_kind_from_string(std::string_view s);

struct ScenarioConfig {
    ScenarioKind kind = ScenarioKind::mixed;
    std::size_t count = 1;
    double deviation_lo = 0.05;
    double deviation_hi = 0.15;
    std::uint64_t seed = 0;
    /// Buses whose voltage is pushed to the target deviation; empty means the controlled buses.
    std::vector<BusId> bus_subset;
    /// Nonlinear initial deviations may leave the range by at most this much; draws
    /// that do are resampled.
    double nonlinear_tolerance = 0.02;
    std::size_t max_attempts = 100;
    FlowOptions flow;
};

/// Fixed active injections for one episode plus the initial state.
struct Scenario {
    std::size_t index = 0;
    Eigen::VectorXd p;
    Eigen::VectorXd q0;
    Eigen::VectorXd v0_expected;  // LinDistFlow profile at t = 0
    bool operator==(const Scenario&) const = default;
};

/// Throws std::invalid_argument on a bad config.
void validate(const ScenarioConfig& cfg);

/// Scenario `index` depends only on (cfg.seed, index). Throws Error when no
/// feasible draw is found within cfg.max_attempts.
Scenario generate_scenario(const RadialNetwork& net, const GridMatrices& gm, const ScenarioConfig& cfg,
                           std::size_t index);
std::vector<Scenario> generate(const RadialNetwork& net, const GridMatrices& gm, const ScenarioConfig& cfg);

/// Solves R_SS p_S = target - v0 for the injections on the subset S, zero elsewhere.
Eigen::VectorXd injections_for_target(const GridMatrices& gm, const std::vector<std::size_t>& subset,
                                      const Eigen::VectorXd& target, double v0);

/// State indices (all phases) of the given buses.
std::vector<std::size_t> state_indices(const RadialNetwork& net, const std::vector<BusId>& buses);

nlohmann::json scenarios_to_json(const std::vector<Scenario>& s, const ScenarioConfig& cfg);
std::vector<Scenario> scenarios_from_json(const nlohmann::json& doc);

/// Per-bus load and PV series in kW / kvar. Rows of the matrices are time
/// samples, columns follow bus_ids.
struct TimeSeries {
    std::vector<double> timestamps;
    std::vector<BusId> bus_ids;
    Eigen::MatrixXd load_p_kw;
    Eigen::MatrixXd load_q_kvar;
    Eigen::MatrixXd pv_p_kw;

    std::size_t samples() const { return timestamps.size(); }
    bool operator==(const TimeSeries&) const = default;
};

inline constexpr std::string_view kTimeSeriesHeader = "timestamp,bus_id,load_p_kw,load_q_kvar,pv_p_kw";

TimeSeries parse_timeseries(std::string_view text, const std::string& source = "<timeseries>");
TimeSeries load_timeseries(const std::filesystem::path& path);
std::string timeseries_to_csv(const TimeSeries& ts);
void write_timeseries(const TimeSeries& ts, const std::filesystem::path& path);

/// Per-unit injections at sample k. Three-phase buses split the bus total
/// equally over the phases.
void timeseries_injections(const TimeSeries& ts, const RadialNetwork& net, std::size_t k, Eigen::VectorXd& p,
                           Eigen::VectorXd& q);

struct ProfileConfig {
    double hours = 24.0;
    double step_minutes = 15.0;
    double load_base_kw = 30.0;
    double load_peak_kw = 70.0;
    double pv_peak_kw = 150.0;
    double power_factor = 0.95;
    double noise = 0.05;  // relative
    std::uint64_t seed = 0;
};

/// Daily shape: sinusoidal load with an evening peak, a midday PV bell and
/// seeded multiplicative noise, on every non-root bus.
TimeSeries synthetic_daily_profile(const RadialNetwork& net, const ProfileConfig& cfg);

struct ReplayReport {
    std::vector<double> time;                // seconds, one entry per control step
    std::vector<std::size_t> sample;         // series row driving each step
    Eigen::MatrixXd v_uncontrolled;          // steps x channels
    Eigen::MatrixXd v_controlled;
    Eigen::MatrixXd u;                       // action applied after measuring v_controlled
    std::vector<bool> diverged_uncontrolled;
    std::vector<bool> diverged_controlled;
    std::vector<ControlChannel> channels;
};

/// Drives the nonlinear power flow through the series with and without the
/// controller. `substeps` control steps are taken per series row.
ReplayReport replay(const RadialNetwork& net, const Controller& policy, const TimeSeries& ts, double dt,
                    std::size_t substeps = 1, FlowOptions opts = {});

}  // namespace voltctl
