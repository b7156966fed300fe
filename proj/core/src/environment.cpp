#include "voltctl/environment.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "voltctl/errors.hpp"

namespace voltctl {

std::string_view to_string(EnvMode m) { return m == EnvMode::linear ? "linear" : "nonlinear"; }

EnvMode env_mode_from_string(std::string_view s) {
    if (s == "linear") return EnvMode::linear;
    if (s == "nonlinear") return EnvMode::nonlinear;
    throw std::invalid_argument("unknown environment mode '" + std::string(s) + "'");
}

ControlModel make_control_model(const RadialNetwork& net, const GridMatrices& gm) {
    ControlModel cm;
    cm.channels = control_channels(net);
    cm.X = channel_submatrix(gm.X, cm.channels);
    const auto k = cm.X.rows();
    cm.X_inv = cm.X.llt().solve(Eigen::MatrixXd::Identity(k, k));
    cm.X_inv = 0.5 * (cm.X_inv + cm.X_inv.transpose()).eval();
    return cm;
}

VoltageEnvironment::VoltageEnvironment(const RadialNetwork& net, const GridMatrices& gm, EnvMode mode, double dt,
                                       FlowOptions opts)
    : mode_(mode), dt_(dt), v0_(net.v0), solver_(net, opts), channels_(control_channels(net)) {
    if (!(dt > 0.0)) throw std::invalid_argument("VoltageEnvironment: dt must be > 0");
    if (gm.size() != static_cast<Eigen::Index>(net.state_size()))
        throw std::invalid_argument("VoltageEnvironment: grid matrices do not match the network");
    r_ = gm.R;
    x_ = gm.X;
    x_cols_.resize(gm.size(), static_cast<Eigen::Index>(channels_.size()));
    for (std::size_t c = 0; c < channels_.size(); ++c)
        x_cols_.col(static_cast<Eigen::Index>(c)) = gm.X.col(static_cast<Eigen::Index>(channels_[c].state_index));
    p_ = Eigen::VectorXd::Zero(gm.size());
    q_ = p_;
    v_ = Eigen::VectorXd::Constant(gm.size(), v0_);
}

void VoltageEnvironment::reset(const Eigen::VectorXd& p, const Eigen::VectorXd& q0) {
    if (p.size() != p_.size() || q0.size() != q_.size())
        throw std::invalid_argument("VoltageEnvironment::reset: injection vector has wrong length");
    p_ = p;
    q_ = q0;
    if (mode_ == EnvMode::linear) {
        v_ = r_ * p_ + x_ * q_ + Eigen::VectorXd::Constant(p_.size(), v0_);
    } else {
        try {
            v_ = solver_.solve(p_, q_).v;
        } catch (const PowerFlowError& e) {
            throw EnvironmentDiverged(std::string("initial operating point: ") + e.what());
        }
    }
    check_state();
}

void VoltageEnvironment::step(const Eigen::VectorXd& u_channels) {
    if (u_channels.size() != static_cast<Eigen::Index>(channels_.size()))
        throw std::invalid_argument("VoltageEnvironment::step: one action per channel required");
    if (!u_channels.allFinite()) throw EnvironmentDiverged("non-finite control action");
    for (std::size_t c = 0; c < channels_.size(); ++c)
        q_(static_cast<Eigen::Index>(channels_[c].state_index)) += dt_ * u_channels(static_cast<Eigen::Index>(c));
    if (mode_ == EnvMode::linear) {
        v_.noalias() += dt_ * (x_cols_ * u_channels);
    } else {
        try {
            v_ = solver_.solve(p_, q_).v;
        } catch (const PowerFlowError& e) {
            throw EnvironmentDiverged(e.what());
        }
    }
    check_state();
}

void VoltageEnvironment::check_state() const {
    for (Eigen::Index k = 0; k < v_.size(); ++k) {
        if (!std::isfinite(v_(k)) || v_(k) <= 0.0 || v_(k) > 10.0 * v0_)
            throw EnvironmentDiverged("voltage left (0, 10 v0] at state index " + std::to_string(k));
    }
}

double distance_to_band(const Eigen::VectorXd& v, const std::vector<ControlChannel>& ch) {
    double s = 0.0;
    for (std::size_t c = 0; c < ch.size(); ++c) {
        const double x = v(static_cast<Eigen::Index>(c));
        const double e = x > ch[c].limits.upper ? x - ch[c].limits.upper
                         : x < ch[c].limits.lower ? ch[c].limits.lower - x
                                                  : 0.0;
        s += e * e;
    }
    return std::sqrt(s);
}

bool in_band(const Eigen::VectorXd& v, const std::vector<ControlChannel>& ch, double tol) {
    for (std::size_t c = 0; c < ch.size(); ++c) {
        const double x = v(static_cast<Eigen::Index>(c));
        if (x > ch[c].limits.upper + tol || x < ch[c].limits.lower - tol) return false;
    }
    return true;
}

}  // namespace voltctl
