#include "voltctl/lyapunov.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "voltctl/errors.hpp"

namespace voltctl {

namespace {

double min_eig(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return std::numeric_limits<double>::infinity();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

double max_eig(const Eigen::MatrixXd& m) {
    if (m.size() == 0) return 0.0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().maxCoeff();
}

void require_pd(const ControlModel& model) {
    const PdCertificate pd = check_positive_definite(model.X);
    if (!pd.pd) throw CertificateError("X restricted to the controlled channels is not positive definite", pd.min_eig);
}

// Largest dt with (k/dt) X^-1 - D > 0, i.e. k / lambda_max(D^1/2 X D^1/2).
double dt_limit(const ControlModel& model, const Eigen::VectorXd& s, double k) {
    const Eigen::VectorXd root = s.cwiseMax(0.0).cwiseSqrt();
    const double lam = max_eig(root.asDiagonal() * model.X * root.asDiagonal());
    return lam > 0.0 ? k / lam : std::numeric_limits<double>::infinity();
}

bool slopes_strict(const Eigen::VectorXd& s_min, double floor) {
    for (Eigen::Index k = 0; k < s_min.size(); ++k)
        if (!(s_min(k) >= floor * (1.0 - 1e-9))) return false;
    return true;
}

}  // namespace

double lyapunov_value(const ControlModel& model, const Controller& policy, const Eigen::VectorXd& v, double dt) {
    const Eigen::VectorXd g = -act(policy, v);
    return dt * dt * g.dot(model.X * g);
}

StabilityCertificate certify(const ControlModel& model, const MonotonePolicy& policy, double dt, double slope_floor) {
    if (!(dt > 0.0)) throw std::invalid_argument("certify: dt must be > 0");
    if (policy.channel_count() != model.size())
        throw std::invalid_argument("certify: policy and network have different channel counts");
    require_pd(model);

    StabilityCertificate cert;
    cert.dt = dt;
    cert.per_bus_slopes = max_slope(policy);
    cert.min_slopes = min_out_of_band_slope(policy);
    cert.min_eig_upper = min_eig((2.0 / dt) * model.X_inv - Eigen::MatrixXd(cert.per_bus_slopes.asDiagonal()));
    cert.min_eig_lower = std::numeric_limits<double>::quiet_NaN();
    cert.strict_negativity = slopes_strict(cert.min_slopes, slope_floor);
    cert.dt_max = dt_limit(model, cert.per_bus_slopes, 2.0);
    cert.passed = cert.min_eig_upper > kEigenTolerance && cert.strict_negativity;
    return cert;
}

StabilityCertificate certify_exponential(const ControlModel& model, const MonotonePolicy& policy, double dt, double c,
                                         double slope_floor) {
    if (!(c > 0.0 && c < 1.0)) throw std::invalid_argument("certify_exponential: c must lie in (0, 1)");
    StabilityCertificate cert = certify(model, policy, dt, slope_floor);
    const double root = std::sqrt(1.0 - c);
    const double k_hi = 1.0 + root;
    const double k_lo = 1.0 - root;
    cert.exponential = true;
    cert.c = c;
    cert.min_eig_upper = min_eig((k_hi / dt) * model.X_inv - Eigen::MatrixXd(cert.per_bus_slopes.asDiagonal()));
    cert.min_eig_lower = min_eig(Eigen::MatrixXd(cert.min_slopes.asDiagonal()) - (k_lo / dt) * model.X_inv);
    cert.dt_max = dt_limit(model, cert.per_bus_slopes, k_hi);
    // diag(s_min) > (k_lo/dt) X^-1  <=>  dt > k_lo lambda_max(S^-1/2 X^-1 S^-1/2)
    if (cert.min_slopes.minCoeff() > 0.0) {
        const Eigen::VectorXd inv_root = cert.min_slopes.cwiseSqrt().cwiseInverse();
        cert.dt_min = k_lo * max_eig(inv_root.asDiagonal() * model.X_inv * inv_root.asDiagonal());
    } else {
        cert.dt_min = std::numeric_limits<double>::infinity();
    }
    cert.passed = cert.min_eig_upper > kEigenTolerance && cert.min_eig_lower > kEigenTolerance &&
                  cert.strict_negativity;
    return cert;
}

DecreaseReport verify_decrease(const ControlModel& model, const Controller& policy, const Eigen::VectorXd& v0,
                               double dt, long horizon, double dist_tol) {
    if (horizon < 1) throw std::invalid_argument("verify_decrease: horizon must be >= 1");
    DecreaseReport rep;
    Eigen::VectorXd v = v0;
    for (long t = 0;; ++t) {
        const double dist = distance_to_band(v, model.channels);
        const double value = lyapunov_value(model, policy, v, dt);
        rep.trace.push_back(value);
        rep.final_distance = dist;
        if (dist == 0.0 || dist <= dist_tol) {
            rep.reached_sv = true;
            rep.steps_to_sv = t;
            break;
        }
        if (t > 0 && !(value < rep.trace[rep.trace.size() - 2])) rep.monotone = false;
        if (t >= horizon || !std::isfinite(value)) break;
        v.noalias() += dt * (model.X * act(policy, v));
    }
    return rep;
}

DecreaseReport verify_decrease(VoltageEnvironment& env, const ControlModel& model, const Controller& policy,
                               const Eigen::VectorXd& p, long horizon, double dist_tol) {
    if (horizon < 1) throw std::invalid_argument("verify_decrease: horizon must be >= 1");
    DecreaseReport rep;
    env.reset(p, Eigen::VectorXd::Zero(p.size()));
    for (long t = 0;; ++t) {
        const Eigen::VectorXd v = env.channel_voltages();
        const double dist = distance_to_band(v, model.channels);
        const double value = lyapunov_value(model, policy, v, env.dt());
        rep.trace.push_back(value);
        rep.final_distance = dist;
        if (dist == 0.0 || dist <= dist_tol) {
            rep.reached_sv = true;
            rep.steps_to_sv = t;
            break;
        }
        if (t > 0 && !(value < rep.trace[rep.trace.size() - 2])) rep.monotone = false;
        if (t >= horizon) break;
        try {
            env.step(act(policy, v));
        } catch (const EnvironmentDiverged&) {
            rep.monotone = false;
            break;
        }
    }
    return rep;
}

double certified_slope_cap(const ControlModel& model, double dt, double fraction) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("certified_slope_cap: fraction in (0,1)");
    require_pd(model);
    return fraction * 2.0 / (dt * max_eig(model.X));
}

nlohmann::json to_json(const StabilityCertificate& cert) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto num = [](double x) -> nlohmann::json {
        if (std::isfinite(x)) return x;
        return nullptr;
    };
    nlohmann::json j = {{"passed", cert.passed},
                        {"mode", cert.exponential ? "exponential" : "asymptotic"},
                        {"dt", cert.dt},
                        {"min_eig_upper", num(cert.min_eig_upper)},
                        {"strict_negativity", cert.strict_negativity},
                        {"dt_max", num(cert.dt_max)},
                        {"per_bus_slopes", vec(cert.per_bus_slopes)},
                        {"min_out_of_band_slopes", vec(cert.min_slopes)}};
    if (std::isfinite(cert.dt_max) && cert.dt_max > 0.0) j["control_frequency_min_hz"] = 1.0 / cert.dt_max;
    if (cert.exponential) {
        j["c"] = cert.c;
        j["min_eig_lower"] = num(cert.min_eig_lower);
        j["dt_min"] = num(cert.dt_min);
    }
    return j;
}

}  // namespace voltctl
