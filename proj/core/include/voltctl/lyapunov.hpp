#pragma once

#include <vector>

#include <json.hpp>

#include "voltctl/environment.hpp"
#include "voltctl/policy.hpp"

namespace voltctl {

/// Result of the slope test
///   -(2/dt) X^-1  <  du/dv  <  0     (plain)
///   -(1+sqrt(1-c))/dt X^-1 < du/dv < -(1-sqrt(1-c))/dt X^-1   (exponential)
/// for a decentralized policy whose Jacobian is diag(-g_i').
struct StabilityCertificate {
    bool passed = false;
    bool exponential = false;
    double dt = 0.0;
    double c = 0.0;
    /// min eig of (k_hi/dt) X^-1 - diag(s_max); k_hi = 2 in the plain test.
    double min_eig_upper = 0.0;
    /// min eig of diag(s_min) - (k_lo/dt) X^-1; only meaningful in exponential mode.
    double min_eig_lower = 0.0;
    /// Every out-of-band slope is at least the slope floor.
    bool strict_negativity = false;
    /// Largest sampling interval for which the upper inequality holds.
    double dt_max = 0.0;
    /// Smallest sampling interval for which the lower inequality holds (exponential mode).
    double dt_min = 0.0;
    Eigen::VectorXd per_bus_slopes;
    Eigen::VectorXd min_slopes;
};

inline constexpr double kSlopeFloor = 1e-3;
inline constexpr double kEigenTolerance = 1e-10;

/// V(v) = dt^2 g(v)^T X g(v) with g = -u.
double lyapunov_value(const ControlModel& model, const Controller& policy, const Eigen::VectorXd& v_channels,
                      double dt);

StabilityCertificate certify(const ControlModel& model, const MonotonePolicy& policy, double dt,
                             double slope_floor = kSlopeFloor);

/// Throws std::invalid_argument unless 0 < c < 1.
StabilityCertificate certify_exponential(const ControlModel& model, const MonotonePolicy& policy, double dt,
                                         double c, double slope_floor = kSlopeFloor);

struct DecreaseReport {
    bool monotone = true;
    bool reached_sv = false;
    long steps_to_sv = -1;
    double final_distance = 0.0;
    std::vector<double> trace;  // V(v(t))
};

/// Simulates v(t+1) = v(t) + dt X u(v(t)) on the controlled channels and checks
/// that V strictly decreases while v is outside the band. Stops on entering
/// the band or when dist(v, S_v) <= dist_tol.
DecreaseReport verify_decrease(const ControlModel& model, const Controller& policy, const Eigen::VectorXd& v0,
                               double dt, long horizon, double dist_tol = 0.0);

/// Advisory variant on any environment (e.g. nonlinear power flow): reports,
/// but the decrease is not guaranteed there.
DecreaseReport verify_decrease(VoltageEnvironment& env, const ControlModel& model, const Controller& policy,
                               const Eigen::VectorXd& p, long horizon, double dist_tol = 0.0);

/// Slope ceiling s with diag(s 1) < (2/dt) X^-1 scaled by `fraction` in (0,1):
/// fraction * 2 / (dt lambda_max(X)).
double certified_slope_cap(const ControlModel& model, double dt, double fraction);

nlohmann::json to_json(const StabilityCertificate& cert);

}  // namespace voltctl
