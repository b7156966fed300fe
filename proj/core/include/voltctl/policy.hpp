#pragma once

#include <cstddef>
#include <filesystem>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include <json.hpp>

#include "voltctl/grid.hpp"

namespace voltctl {

/// Single-input stacked-ReLU monotone network
///   g(x) = w+ . ReLU(x + b+)  +  w- . ReLU(-x + b-)
/// Feasible parameters have b[0] = 0, non-increasing biases, positive prefix
/// sums of w+ and negative prefix sums of w-, so g is nondecreasing with
/// g(0) = 0.
struct StackedRelu {
    std::vector<double> w_plus;
    std::vector<double> b_plus;
    std::vector<double> w_minus;
    std::vector<double> b_minus;

    std::size_t units() const { return w_plus.size(); }
    bool operator==(const StackedRelu&) const = default;
};

/// Centered deadband: g is pinned to zero on [lower, upper], lower <= 0 <= upper.
/// Anchoring sets w[0] = 0, b+[1] = -upper and b-[1] = lower.
struct Deadband {
    double lower = 0.0;
    double upper = 0.0;
};

struct ProjectionLimits {
    double eps_w = 1e-3;  // floor on |prefix sums|: strict monotonicity outside the band
    double eps_b = 0.0;   // minimum gap between consecutive biases
    double max_slope = std::numeric_limits<double>::infinity();
    double min_slope = 0.0;  // additional floor used by the exponential-stability mode
};

double eval_stacked_relu(const StackedRelu& p, double x);

/// Exact right-derivative g'(x).
double stacked_relu_slope(const StackedRelu& p, double x);

/// Piece of the piecewise-constant derivative: g' = slope on [from, to).
struct SlopeSegment {
    double from;
    double to;
    double slope;
};

/// Every slope g' actually takes, with its interval, ordered left to right.
std::vector<SlopeSegment> slope_segments(const StackedRelu& p);

/// Minimal forward-pass correction onto the feasible set: bias prefix-min,
/// prefix sums clamped into [max(eps_w, min_slope), max_slope], anchors
/// restored when a deadband is given. Idempotent.
StackedRelu project_params(StackedRelu p, const ProjectionLimits& lim,
                           const std::optional<Deadband>& anchors = std::nullopt);

bool is_feasible(const StackedRelu& p, const ProjectionLimits& lim,
                 const std::optional<Deadband>& anchors = std::nullopt);

/// Same function in rescaled coordinates: g_phys(x) = u_scale * g(x / x_scale).
StackedRelu rescale(const StackedRelu& p, double x_scale, double u_scale);

/// Decentralized controller: one scalar action per channel from the local voltage.
class Controller {
  public:
    virtual ~Controller() = default;
    virtual std::size_t channel_count() const = 0;
    virtual double action(std::size_t channel, double v) const = 0;
};

Eigen::VectorXd act(const Controller& c, const Eigen::VectorXd& v_channels);

struct ChannelPolicy {
    BusId bus = 0;
    int phase = 0;
    double v_ref = 1.0;
    Deadband band;
    StackedRelu params;
};

/// u = -g(v - v_ref) per channel, zero on the channel's band.
class MonotonePolicy : public Controller {
  public:
    MonotonePolicy() = default;
    explicit MonotonePolicy(std::vector<ChannelPolicy> channels) : channels_(std::move(channels)) {}

    std::size_t channel_count() const override { return channels_.size(); }
    double action(std::size_t channel, double v) const override;

    const std::vector<ChannelPolicy>& channels() const { return channels_; }
    std::vector<ChannelPolicy>& channels() { return channels_; }

    bool operator==(const MonotonePolicy& o) const;

  private:
    std::vector<ChannelPolicy> channels_;
};

double eval_policy(const MonotonePolicy& mp, std::size_t channel, double v);
/// du/dv = -g'(v - v_ref), right-derivative at kinks.
double policy_derivative(const MonotonePolicy& mp, std::size_t channel, double v);
/// Per-channel supremum of g'.
Eigen::VectorXd max_slope(const MonotonePolicy& mp);
/// Per-channel infimum of g' over the out-of-band region.
Eigen::VectorXd min_out_of_band_slope(const MonotonePolicy& mp);

/// Random feasible policy with deadbands on each channel's limits. Initial
/// slopes are spread around `slope` and thresholds over `span` beyond the band.
MonotonePolicy make_monotone_policy(const std::vector<ControlChannel>& channels, std::size_t units,
                                    double slope, double span, const ProjectionLimits& lim,
                                    std::mt19937_64& rng);

/// Re-projects every channel with its own deadband anchors.
void project_policy(MonotonePolicy& mp, const ProjectionLimits& lim);

struct LinearDroopParams {
    std::vector<double> gain;
};

/// u = -eps ([v - v_upper]+ - [v_lower - v]+).
class LinearDroop : public Controller {
  public:
    LinearDroop(std::vector<ControlChannel> channels, LinearDroopParams params);
    /// Same gain on every channel.
    LinearDroop(std::vector<ControlChannel> channels, double gain);

    std::size_t channel_count() const override { return channels_.size(); }
    double action(std::size_t channel, double v) const override;
    const LinearDroopParams& params() const { return params_; }

  private:
    std::vector<ControlChannel> channels_;
    LinearDroopParams params_;
};

double eval_linear_droop(const LinearDroop& lp, std::size_t channel, double v);

/// 2 sigma_min(X) / sigma_max(X)^2; throws CertificateError if X is not PD.
double stability_gain_bound(const Eigen::MatrixXd& x);

inline constexpr int kCheckpointVersion = 1;

nlohmann::json policy_to_json(const MonotonePolicy& mp);
/// Throws SchemaError on malformed or infeasible checkpoints.
MonotonePolicy policy_from_json(const nlohmann::json& doc);
void save_policy(const MonotonePolicy& mp, const std::filesystem::path& path);
MonotonePolicy load_policy(const std::filesystem::path& path);

}  // namespace voltctl
