#include "voltctl/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "voltctl/errors.hpp"
#include "voltctl/network_io.hpp"

namespace voltctl {

using nlohmann::json;

namespace {

double relu(double x) { return x > 0.0 ? x : 0.0; }

void check_shape(const StackedRelu& p) {
    const std::size_t d = p.w_plus.size();
    if (d == 0 || p.b_plus.size() != d || p.w_minus.size() != d || p.b_minus.size() != d)
        throw std::invalid_argument("StackedRelu: all parameter vectors need the same non-zero length");
}

// Tolerance used for "already inside the bound" so that projection is a fixed point.
double slack(double bound) { return 1e-12 * std::max(1.0, std::abs(bound)); }

// Clamp the prefix sums of sign*w into [lo, hi], starting at `first`.
void clamp_prefix_sums(std::vector<double>& w, double sign, std::size_t first, double lo, double hi) {
    double s = 0.0;
    for (std::size_t l = 0; l < first; ++l) s += sign * w[l];
    for (std::size_t l = first; l < w.size(); ++l) {
        const double next = s + sign * w[l];
        if (next < lo - slack(lo)) {
            w[l] = sign * (lo - s);
            s = lo;
        } else if (next > hi + slack(hi)) {
            w[l] = sign * (hi - s);
            s = hi;
        } else {
            s = next;
        }
    }
}

void order_biases(std::vector<double>& b, std::size_t pinned_until, double eps_b) {
    for (std::size_t l = std::max<std::size_t>(1, pinned_until); l < b.size(); ++l)
        b[l] = std::min(b[l], b[l - 1] - eps_b);
}

bool prefix_ok(const std::vector<double>& w, double sign, std::size_t first, double lo, double hi) {
    double s = 0.0;
    for (std::size_t l = 0; l < w.size(); ++l) {
        s += sign * w[l];
        if (l < first) continue;
        if (s < lo - slack(lo) || s > hi + slack(hi)) return false;
    }
    return true;
}

std::vector<double> json_vector(const json& v, const std::string& where, std::size_t expect) {
    if (!v.is_array() || v.size() != expect)
        throw SchemaError(where, "expected an array of " + std::to_string(expect) + " numbers");
    std::vector<double> out;
    for (std::size_t k = 0; k < v.size(); ++k) {
        if (!v[k].is_number()) throw SchemaError(where + "[" + std::to_string(k) + "]", "expected a number");
        out.push_back(v[k].get<double>());
    }
    return out;
}

}  // namespace

double eval_stacked_relu(const StackedRelu& p, double x) {
    double g = 0.0;
    for (std::size_t l = 0; l < p.w_plus.size(); ++l) g += p.w_plus[l] * relu(x + p.b_plus[l]);
    for (std::size_t l = 0; l < p.w_minus.size(); ++l) g += p.w_minus[l] * relu(-x + p.b_minus[l]);
    return g;
}

double stacked_relu_slope(const StackedRelu& p, double x) {
    double s = 0.0;
    for (std::size_t l = 0; l < p.w_plus.size(); ++l)
        if (x + p.b_plus[l] >= 0.0) s += p.w_plus[l];
    for (std::size_t l = 0; l < p.w_minus.size(); ++l)
        if (x < p.b_minus[l]) s -= p.w_minus[l];
    return s;
}

std::vector<SlopeSegment> slope_segments(const StackedRelu& p) {
    std::vector<double> kinks;
    for (double b : p.b_plus) kinks.push_back(-b);
    for (double b : p.b_minus) kinks.push_back(b);
    std::sort(kinks.begin(), kinks.end());
    kinks.erase(std::unique(kinks.begin(), kinks.end()), kinks.end());

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<SlopeSegment> out;
    if (kinks.empty()) return {{-inf, inf, 0.0}};
    out.push_back({-inf, kinks.front(), stacked_relu_slope(p, kinks.front() - 1.0)});
    for (std::size_t k = 0; k < kinks.size(); ++k) {
        const double to = k + 1 < kinks.size() ? kinks[k + 1] : inf;
        out.push_back({kinks[k], to, stacked_relu_slope(p, kinks[k])});
    }
    return out;
}

StackedRelu project_params(StackedRelu p, const ProjectionLimits& lim, const std::optional<Deadband>& anchors) {
    check_shape(p);
    const std::size_t first = anchors ? 1 : 0;
    if (anchors) {
        if (p.units() < 2) throw std::invalid_argument("project_params: deadband anchors need >= 2 units");
        if (anchors->lower > 0.0 || anchors->upper < 0.0)
            throw std::invalid_argument("project_params: deadband must contain 0");
        p.w_plus[0] = 0.0;
        p.w_minus[0] = 0.0;
        p.b_plus[1] = -anchors->upper;
        p.b_minus[1] = anchors->lower;
    }
    p.b_plus[0] = 0.0;
    p.b_minus[0] = 0.0;
    order_biases(p.b_plus, anchors ? 2 : 1, lim.eps_b);
    order_biases(p.b_minus, anchors ? 2 : 1, lim.eps_b);

    const double floor = std::max(lim.eps_w, lim.min_slope);
    clamp_prefix_sums(p.w_plus, 1.0, first, floor, lim.max_slope);
    clamp_prefix_sums(p.w_minus, -1.0, first, floor, lim.max_slope);
    return p;
}

bool is_feasible(const StackedRelu& p, const ProjectionLimits& lim, const std::optional<Deadband>& anchors) {
    check_shape(p);
    const std::size_t first = anchors ? 1 : 0;
    if (p.b_plus[0] != 0.0 || p.b_minus[0] != 0.0) return false;
    if (anchors) {
        if (p.units() < 2) return false;
        if (p.w_plus[0] != 0.0 || p.w_minus[0] != 0.0) return false;
        if (p.b_plus[1] != -anchors->upper || p.b_minus[1] != anchors->lower) return false;
    }
    for (std::size_t l = 1; l < p.units(); ++l) {
        if (p.b_plus[l] > p.b_plus[l - 1] - lim.eps_b) return false;
        if (p.b_minus[l] > p.b_minus[l - 1] - lim.eps_b) return false;
    }
    const double floor = std::max(lim.eps_w, lim.min_slope);
    return prefix_ok(p.w_plus, 1.0, first, floor, lim.max_slope) &&
           prefix_ok(p.w_minus, -1.0, first, floor, lim.max_slope);
}

StackedRelu rescale(const StackedRelu& p, double x_scale, double u_scale) {
    StackedRelu out = p;
    const double wf = u_scale / x_scale;
    for (auto& w : out.w_plus) w *= wf;
    for (auto& w : out.w_minus) w *= wf;
    for (auto& b : out.b_plus) b *= x_scale;
    for (auto& b : out.b_minus) b *= x_scale;
    return out;
}

Eigen::VectorXd act(const Controller& c, const Eigen::VectorXd& v_channels) {
    Eigen::VectorXd u(v_channels.size());
    for (Eigen::Index k = 0; k < v_channels.size(); ++k) u(k) = c.action(static_cast<std::size_t>(k), v_channels(k));
    return u;
}

double MonotonePolicy::action(std::size_t channel, double v) const {
    const ChannelPolicy& ch = channels_.at(channel);
    return -eval_stacked_relu(ch.params, v - ch.v_ref);
}

bool MonotonePolicy::operator==(const MonotonePolicy& o) const {
    if (channels_.size() != o.channels_.size()) return false;
    for (std::size_t k = 0; k < channels_.size(); ++k) {
        const auto& a = channels_[k];
        const auto& b = o.channels_[k];
        if (a.bus != b.bus || a.phase != b.phase || a.v_ref != b.v_ref || a.band.lower != b.band.lower ||
            a.band.upper != b.band.upper || !(a.params == b.params))
            return false;
    }
    return true;
}

double eval_policy(const MonotonePolicy& mp, std::size_t channel, double v) { return mp.action(channel, v); }

double policy_derivative(const MonotonePolicy& mp, std::size_t channel, double v) {
    const ChannelPolicy& ch = mp.channels().at(channel);
    return -stacked_relu_slope(ch.params, v - ch.v_ref);
}

Eigen::VectorXd max_slope(const MonotonePolicy& mp) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(mp.channel_count()));
    for (std::size_t k = 0; k < mp.channel_count(); ++k) {
        double s = 0.0;
        for (const auto& seg : slope_segments(mp.channels()[k].params)) s = std::max(s, seg.slope);
        out(static_cast<Eigen::Index>(k)) = s;
    }
    return out;
}

Eigen::VectorXd min_out_of_band_slope(const MonotonePolicy& mp) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(mp.channel_count()));
    for (std::size_t k = 0; k < mp.channel_count(); ++k) {
        const ChannelPolicy& ch = mp.channels()[k];
        double s = std::numeric_limits<double>::infinity();
        for (const auto& seg : slope_segments(ch.params)) {
            if (seg.to > ch.band.upper || seg.from < ch.band.lower) s = std::min(s, seg.slope);
        }
        out(static_cast<Eigen::Index>(k)) = s;
    }
    return out;
}

MonotonePolicy make_monotone_policy(const std::vector<ControlChannel>& channels, std::size_t units, double slope,
                                    double span, const ProjectionLimits& lim, std::mt19937_64& rng) {
    if (units < 2) throw std::invalid_argument("make_monotone_policy: need at least 2 units per side");
    std::uniform_real_distribution<double> unit(0.5, 1.5);
    std::vector<ChannelPolicy> out;
    for (const ControlChannel& c : channels) {
        ChannelPolicy cp;
        cp.bus = c.bus;
        cp.phase = c.phase;
        cp.v_ref = 0.5 * (c.limits.lower + c.limits.upper);
        cp.band = {c.limits.lower - cp.v_ref, c.limits.upper - cp.v_ref};
        StackedRelu& p = cp.params;
        p.w_plus.assign(units, 0.0);
        p.w_minus.assign(units, 0.0);
        p.b_plus.assign(units, 0.0);
        p.b_minus.assign(units, 0.0);
        const double step = span / static_cast<double>(units - 1);
        for (std::size_t l = 1; l < units; ++l) {
            // First active unit carries about half the slope, the rest add up the other half.
            const double share = l == 1 ? 0.5 : 0.5 / static_cast<double>(units - 2);
            p.w_plus[l] = slope * share * unit(rng);
            p.w_minus[l] = -slope * share * unit(rng);
            p.b_plus[l] = -cp.band.upper - step * static_cast<double>(l - 1) * unit(rng);
            p.b_minus[l] = cp.band.lower - step * static_cast<double>(l - 1) * unit(rng);
        }
        p = project_params(p, lim, cp.band);
        out.push_back(std::move(cp));
    }
    return MonotonePolicy(std::move(out));
}

void project_policy(MonotonePolicy& mp, const ProjectionLimits& lim) {
    for (auto& ch : mp.channels()) ch.params = project_params(ch.params, lim, ch.band);
}

LinearDroop::LinearDroop(std::vector<ControlChannel> channels, LinearDroopParams params)
    : channels_(std::move(channels)), params_(std::move(params)) {
    if (params_.gain.size() != channels_.size())
        throw std::invalid_argument("LinearDroop: one gain per channel required");
    for (double g : params_.gain)
        if (!(g > 0.0)) throw std::invalid_argument("LinearDroop: gains must be > 0");
}

LinearDroop::LinearDroop(std::vector<ControlChannel> channels, double gain)
    : LinearDroop(channels, LinearDroopParams{std::vector<double>(channels.size(), gain)}) {}

double LinearDroop::action(std::size_t channel, double v) const {
    const auto& lim = channels_.at(channel).limits;
    return -params_.gain[channel] * (relu(v - lim.upper) - relu(lim.lower - v));
}

double eval_linear_droop(const LinearDroop& lp, std::size_t channel, double v) { return lp.action(channel, v); }

double stability_gain_bound(const Eigen::MatrixXd& x) {
    const PdCertificate cert = check_positive_definite(x);
    if (!cert.pd) throw CertificateError("stability_gain_bound: X is not positive definite", cert.min_eig);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(x, Eigen::EigenvaluesOnly);
    const double smin = es.eigenvalues().minCoeff();
    const double smax = es.eigenvalues().maxCoeff();
    return 2.0 * smin / (smax * smax);
}

json policy_to_json(const MonotonePolicy& mp) {
    json buses = json::array();
    for (const auto& ch : mp.channels()) {
        buses.push_back({{"bus", ch.bus},
                         {"phase", ch.phase},
                         {"d", ch.params.units()},
                         {"w_plus", ch.params.w_plus},
                         {"b_plus", ch.params.b_plus},
                         {"w_minus", ch.params.w_minus},
                         {"b_minus", ch.params.b_minus},
                         {"v_ref", ch.v_ref},
                         {"band", {ch.band.lower, ch.band.upper}}});
    }
    return {{"version", kCheckpointVersion}, {"kind", "monotone"}, {"buses", buses}};
}

MonotonePolicy policy_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaError("checkpoint", "expected a JSON object");
    if (!doc.contains("version") || !doc["version"].is_number_integer() ||
        doc["version"].get<int>() != kCheckpointVersion)
        throw SchemaError("checkpoint.version", "unsupported or missing version");
    if (doc.contains("kind") && doc["kind"] != "monotone")
        throw SchemaError("checkpoint.kind", "only monotone checkpoints can be loaded");
    if (!doc.contains("buses") || !doc["buses"].is_array())
        throw SchemaError("checkpoint.buses", "expected an array");
    std::vector<ChannelPolicy> chans;
    const json& buses = doc["buses"];
    for (std::size_t k = 0; k < buses.size(); ++k) {
        const std::string w = "checkpoint.buses[" + std::to_string(k) + "]";
        const json& b = buses[k];
        if (!b.is_object()) throw SchemaError(w, "expected an object");
        for (const char* key : {"bus", "d", "w_plus", "b_plus", "w_minus", "b_minus", "v_ref", "band"})
            if (!b.contains(key)) throw SchemaError(w + "." + key, "missing required field");
        if (!b["d"].is_number_integer() || b["d"].get<int>() < 2) throw SchemaError(w + ".d", "expected integer >= 2");
        const auto d = static_cast<std::size_t>(b["d"].get<int>());
        ChannelPolicy cp;
        cp.bus = b["bus"].get<int>();
        cp.phase = b.value("phase", 0);
        cp.params.w_plus = json_vector(b["w_plus"], w + ".w_plus", d);
        cp.params.b_plus = json_vector(b["b_plus"], w + ".b_plus", d);
        cp.params.w_minus = json_vector(b["w_minus"], w + ".w_minus", d);
        cp.params.b_minus = json_vector(b["b_minus"], w + ".b_minus", d);
        if (!b["v_ref"].is_number()) throw SchemaError(w + ".v_ref", "expected a number");
        cp.v_ref = b["v_ref"].get<double>();
        const auto band = json_vector(b["band"], w + ".band", 2);
        cp.band = {band[0], band[1]};
        if (!(cp.band.lower <= 0.0 && cp.band.upper >= 0.0))
            throw SchemaError(w + ".band", "deadband must contain 0 in centered coordinates");
        ProjectionLimits structural;
        structural.eps_w = 0.0;
        if (!is_feasible(cp.params, structural, cp.band))
            throw SchemaError(w, "parameters violate the monotone/deadband constraints");
        chans.push_back(std::move(cp));
    }
    return MonotonePolicy(std::move(chans));
}

void save_policy(const MonotonePolicy& mp, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << policy_to_json(mp).dump(2) << '\n';
}

MonotonePolicy load_policy(const std::filesystem::path& path) {
    return policy_from_json(parse_json_text(read_text_file(path), path.string()));
}

}  // namespace voltctl
