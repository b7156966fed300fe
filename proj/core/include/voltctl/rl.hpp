#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "voltctl/environment.hpp"
#include "voltctl/eval.hpp"
#include "voltctl/nn.hpp"
#include "voltctl/policy.hpp"
#include "voltctl/scenario.hpp"

namespace voltctl {

/// Local experience of one inverter.
struct Transition {
    double v = 0.0;
    double u = 0.0;
    double c = 0.0;
    double v_next = 0.0;
    bool operator==(const Transition&) const = default;
};

/// Fixed-capacity FIFO ring with uniform sampling without replacement.
class ReplayBuffer {
  public:
    explicit ReplayBuffer(std::size_t capacity = 50000);

    /// Throws TrainingFault on non-finite entries.
    void push(const Transition& t);
    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    /// Element k in insertion order, 0 being the oldest still stored.
    const Transition& at(std::size_t k) const;
    /// n distinct entries; requires n <= size().
    std::vector<Transition> sample(std::size_t n, std::mt19937_64& rng) const;

  private:
    std::size_t capacity_;
    std::size_t head_ = 0;  // next slot to overwrite once full
    std::vector<Transition> data_;
};

/// Maps physical (v, u) of one channel to the unit-scale coordinates the
/// networks see: x = (v - v_ref) / x_scale, a = u / u_scale.
struct ChannelScaling {
    double v_ref = 1.0;
    double x_scale = 0.05;
    double u_scale = 1.0;
};

enum class ActorKind { monotone, mlp };

struct TrainConfig {
    double gamma = 0.95;
    double lr_actor = 1e-4;
    double lr_critic = 1e-3;
    std::size_t batch = 64;
    std::size_t buffer = 50000;
    std::size_t episodes = 400;
    std::size_t steps = 30;
    double dt = 1.0;
    double tau = 0.005;
    double eta1 = 100.0;
    double eta2 = 1.0;
    std::uint64_t seed = 0;

    std::size_t units = 8;
    std::size_t critic_hidden = 64;
    std::size_t critic_layers = 2;
    std::size_t mlp_actor_hidden = 16;
    ActorKind actor = ActorKind::monotone;
    /// Projection ceiling as a fraction of 2 / (dt lambda_max(X_CC)).
    double slope_cap_fraction = 0.9;
    /// Initial slopes as a fraction of the ceiling.
    double init_slope_fraction = 0.2;
    double init_span = 0.1;
    double x_scale = 0.05;
    /// Gaussian noise on the normalized action; voids the during-training certificate.
    double action_noise = 0.0;
    EnvMode env = EnvMode::linear;
    double band_tol = 1e-3;
    std::size_t checkpoint_every = 50;
    ScenarioKind scenario_kind = ScenarioKind::mixed;
    double deviation_lo = 0.05;
    double deviation_hi = 0.15;
};

/// Throws std::invalid_argument naming the offending field.
void validate(const TrainConfig& cfg);
nlohmann::json to_json(const TrainConfig& cfg);
/// Unknown keys and out-of-range values raise SchemaError.
TrainConfig train_config_from_json(const nlohmann::json& doc);
TrainConfig load_train_config(const std::filesystem::path& path);

// ---------------------------------------------------------------- critic

/// Critic inputs: column k is (x_k, a_k); next-state columns use the target actor.
struct CriticBatch {
    Eigen::MatrixXd sa;
    Eigen::MatrixXd sa_next;
    Eigen::RowVectorXd cost;
};

/// Mean squared TD error (Q(s,a) - (c + gamma Q_target(s',a')))^2; adds its
/// gradient with respect to the critic parameters into `grad` if given.
double critic_loss(const Mlp& critic, const Mlp& target, const CriticBatch& b, double gamma, Eigen::VectorXd* grad);

/// One Adam step on the TD loss. Returns the loss before the step.
double critic_update(Mlp& critic, Adam& opt, const Mlp& target, const CriticBatch& b, double gamma);

/// dQ/da at each column of sa.
Eigen::VectorXd critic_action_gradient(const Mlp& critic, const Eigen::MatrixXd& sa);

// ---------------------------------------------------------------- actor

/// d g(x) / d theta, laid out like the parameters themselves.
StackedRelu stacked_relu_param_grad(const StackedRelu& p, double x);

Eigen::VectorXd flatten(const StackedRelu& p);
StackedRelu unflatten(const Eigen::VectorXd& theta, std::size_t units);

using ActionGradient = std::function<double(double x, double a)>;

/// Deterministic policy-gradient step for a = -g(x): descends
/// (1/N) sum dQ/da * (-dg/dtheta), then projects onto the feasible set.
void actor_update(StackedRelu& p, Adam& opt, const std::vector<double>& xs, const ActionGradient& dq_da,
                  const ProjectionLimits& lim, const Deadband& band);
void actor_update(StackedRelu& p, Adam& opt, const std::vector<double>& xs, const Mlp& critic,
                  const ProjectionLimits& lim, const Deadband& band);

/// Same step for an unconstrained network actor a = mlp(x); no projection.
void mlp_actor_update(Mlp& actor, Adam& opt, const std::vector<double>& xs, const Mlp& critic);

/// Unconstrained per-channel network controller: u = u_scale * mlp((v - v_ref) / x_scale).
class MlpPolicy : public Controller {
  public:
    MlpPolicy(std::vector<ControlChannel> channels, std::vector<ChannelScaling> scaling, std::vector<Mlp> nets);
    std::size_t channel_count() const override { return nets_.size(); }
    double action(std::size_t channel, double v) const override;

    const std::vector<ControlChannel>& channels() const { return channels_; }
    const std::vector<ChannelScaling>& scaling() const { return scaling_; }
    const std::vector<Mlp>& nets() const { return nets_; }

  private:
    std::vector<ControlChannel> channels_;
    std::vector<ChannelScaling> scaling_;
    std::vector<Mlp> nets_;
};

nlohmann::json mlp_policy_to_json(const MlpPolicy& p);
MlpPolicy mlp_policy_from_json(const nlohmann::json& doc, const std::vector<ControlChannel>& channels);

// ---------------------------------------------------------------- training

struct CurveRow {
    std::size_t episode = 0;
    double ret = 0.0;  // -(sum over steps and channels of the stage cost)
    double mean_recovery_steps = 0.0;
    bool diverged = false;
    bool operator==(const CurveRow&) const = default;
};

inline constexpr std::string_view kCurveHeader = "episode,return,mean_recovery_steps";
std::string curve_csv(const std::vector<CurveRow>& curve);
std::vector<CurveRow> parse_curve_csv(std::string_view text);

struct TrainOptions {
    /// When set, checkpoints, curve.csv and the final policy are written here.
    std::optional<std::filesystem::path> out_dir;
    /// Called after every episode (progress reporting).
    std::function<void(const CurveRow&)> on_episode;
};

struct TrainResult {
    std::optional<MonotonePolicy> policy;  // monotone actor
    std::optional<MlpPolicy> mlp_policy;   // ablation actor
    std::vector<CurveRow> curve;
    std::vector<std::filesystem::path> checkpoints;
    std::size_t diverged_episodes = 0;
    double slope_cap = 0.0;
};

/// Per-inverter DDPG. Each step applies the joint action, stores local
/// transitions and, once a buffer holds more than `batch` entries, performs
/// one critic and one actor update per channel followed by target soft
/// updates. Monotone checkpoints are certified at cfg.dt before they are
/// written; a failing certificate raises TrainingFault.
TrainResult train(const RadialNetwork& net, const GridMatrices& gm, const TrainConfig& cfg,
                  const TrainOptions& opts = {});

}  // namespace voltctl
