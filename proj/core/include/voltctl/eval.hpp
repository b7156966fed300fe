#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "voltctl/environment.hpp"
#include "voltctl/policy.hpp"
#include "voltctl/scenario.hpp"

namespace voltctl {

/// eta1 |band violation|^2 + eta2 |u|.
double stage_cost(double v, double u, const VoltageLimits& band, double eta1, double eta2);

struct EvalConfig {
    EnvMode mode = EnvMode::nonlinear;
    long cap = 100;
    double dt = 1.0;
    /// A channel counts as in band when it is within this distance of [lower, upper].
    double band_tol = 1e-3;
    double eta1 = 100.0;
    double eta2 = 1.0;
    /// Upper edges of the violation histogram buckets as fractions of nominal;
    /// a final bucket collects everything above the last edge.
    std::vector<double> bucket_edges{0.01, 0.03, 0.05};
    unsigned jobs = 1;
    bool keep_traces = false;
    FlowOptions flow;
};

inline constexpr std::string_view kEffortDefinition =
    "reactive_effort = sum over t < recovery_steps of ||u(t)||_1, in MVar (per-unit times base MVA)";

struct ScenarioResult {
    std::size_t index = 0;
    long recovery_steps = 0;
    bool stabilized = false;
    bool diverged = false;
    double reactive_effort = 0.0;
    double transient_cost = 0.0;
    /// Per channel distance to the band at the last step, as a fraction of nominal.
    std::vector<double> final_violations;
    /// Channel voltages v(0..cap) when EvalConfig::keep_traces is set.
    std::vector<std::vector<double>> trace;

    bool operator==(const ScenarioResult&) const = default;
};

struct Stat {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
    bool operator==(const Stat&) const = default;
};

Stat summarize(const std::vector<double>& x);

struct EvalReport {
    std::string policy;
    EnvMode mode = EnvMode::nonlinear;
    long cap = 100;
    double dt = 1.0;
    double band_tol = 1e-3;
    std::vector<ScenarioResult> scenarios;
    Stat recovery_steps;
    Stat reactive_effort;
    Stat transient_cost;
    double stabilization_rate = 0.0;
    std::vector<double> bucket_edges;
    std::vector<std::size_t> histogram;

    bool operator==(const EvalReport&) const = default;
};

/// Rolls out every scenario for `cap` steps and collects the metrics.
EvalReport evaluate(const RadialNetwork& net, const GridMatrices& gm, const Controller& policy,
                    const std::vector<Scenario>& scenarios, const EvalConfig& cfg, std::string name = "policy");

/// Single rollout used by evaluate.
ScenarioResult rollout(VoltageEnvironment& env, const Controller& policy, const Scenario& s, const EvalConfig& cfg,
                       double s_base_mva);

/// Fills the aggregates of a report from its per-scenario results.
void aggregate(EvalReport& r, const std::vector<double>& bucket_edges);

struct ComparisonRow {
    std::string policy;
    bool starred = false;
    std::size_t scenarios = 0;
    double stabilization_rate = 0.0;
    std::optional<Stat> recovery_steps;
    std::optional<Stat> reactive_effort;
    std::optional<Stat> transient_cost;
};

/// One row per report plus a starred row over that report's stabilized
/// scenarios (statistics empty when none). Throws std::invalid_argument when
/// the reports do not share scenario indices or environment mode.
std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports);

std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_table(const std::vector<ComparisonRow>& rows);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& doc);

/// Fixed column order, see kScenarioCsvHeader.
inline constexpr std::string_view kScenarioCsvHeader =
    "scenario,recovery_steps,stabilized,diverged,reactive_effort_mvar,transient_cost,max_final_violation";
std::string report_csv(const EvalReport& r);
/// "bucket_lo bucket_hi count" lines.
std::string histogram_plotdata(const EvalReport& r);

enum class EmitFormat { json, csv, plotdata };
EmitFormat emit_format_from_string(std::string_view s);

/// Writes <stem>.json, <stem>.csv or <stem>_histogram.dat under dir; returns the file path.
std::filesystem::path emit(const EvalReport& r, EmitFormat fmt, const std::filesystem::path& dir,
                           const std::string& stem = "report");

/// Two-column "x y" series, one block per channel separated by blank lines.
std::string replay_plotdata(const ReplayReport& rep, bool controlled);

}  // namespace voltctl
