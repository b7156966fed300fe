#pragma once

#include <string_view>

#include "voltctl/grid.hpp"
#include "voltctl/powerflow.hpp"

namespace voltctl {

enum class EnvMode { linear, nonlinear };

std::string_view to_string(EnvMode m);
EnvMode env_mode_from_string(std::string_view s);

/// The controlled part of a feeder: channels plus X restricted to them.
struct ControlModel {
    std::vector<ControlChannel> channels;
    Eigen::MatrixXd X;
    Eigen::MatrixXd X_inv;

    std::size_t size() const { return channels.size(); }
};

ControlModel make_control_model(const RadialNetwork& net, const GridMatrices& gm);

/// Closed-loop plant. Each step integrates the inverter commands into q
/// (q += dt u on controlled channels) and produces the next voltage either
/// from LinDistFlow (v += dt X u) or by re-solving the nonlinear power flow
/// with the active injections held fixed.
class VoltageEnvironment {
  public:
    VoltageEnvironment(const RadialNetwork& net, const GridMatrices& gm, EnvMode mode, double dt,
                       FlowOptions opts = {});

    /// Throws EnvironmentDiverged if the initial operating point is infeasible.
    void reset(const Eigen::VectorXd& p, const Eigen::VectorXd& q0);
    /// Throws EnvironmentDiverged when v <= 0, v > 10 v0 or the power flow fails.
    void step(const Eigen::VectorXd& u_channels);

    const Eigen::VectorXd& v() const { return v_; }
    const Eigen::VectorXd& q() const { return q_; }
    Eigen::VectorXd channel_voltages() const { return channel_values(v_, channels_); }
    const std::vector<ControlChannel>& channels() const { return channels_; }
    EnvMode mode() const { return mode_; }
    double dt() const { return dt_; }
    double nominal() const { return v0_; }

  private:
    void check_state() const;

    EnvMode mode_;
    double dt_;
    double v0_;
    FlowSolver solver_;
    std::vector<ControlChannel> channels_;
    Eigen::MatrixXd r_;
    Eigen::MatrixXd x_;
    Eigen::MatrixXd x_cols_;  // X[:, channels]
    Eigen::VectorXd p_;
    Eigen::VectorXd q_;
    Eigen::VectorXd v_;
};

/// Euclidean distance from v to the box [lower, upper] over the channels.
double distance_to_band(const Eigen::VectorXd& v_channels, const std::vector<ControlChannel>& ch);
bool in_band(const Eigen::VectorXd& v_channels, const std::vector<ControlChannel>& ch, double tol = 0.0);

}  // namespace voltctl
