#include "voltctl/rl.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "voltctl/errors.hpp"
#include "voltctl/lyapunov.hpp"
#include "voltctl/network_io.hpp"

namespace voltctl {

using nlohmann::json;

// ---------------------------------------------------------------- replay buffer

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(const Transition& t) {
    if (!std::isfinite(t.v) || !std::isfinite(t.u) || !std::isfinite(t.c) || !std::isfinite(t.v_next))
        throw TrainingFault("non-finite transition");
    if (data_.size() < capacity_) {
        data_.push_back(t);
        return;
    }
    data_[head_] = t;
    head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(std::size_t k) const {
    if (k >= data_.size()) throw std::out_of_range("ReplayBuffer::at");
    return data_[(head_ + k) % data_.size()];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
    if (n > data_.size()) throw std::invalid_argument("ReplayBuffer::sample: batch larger than buffer");
    // Floyd's algorithm: n distinct indices with n draws.
    std::set<std::size_t> chosen;
    std::vector<Transition> out;
    out.reserve(n);
    const std::size_t m = data_.size();
    for (std::size_t j = m - n; j < m; ++j) {
        std::uniform_int_distribution<std::size_t> pick(0, j);
        const std::size_t k = pick(rng);
        const std::size_t idx = chosen.insert(k).second ? k : j;
        if (idx == j) chosen.insert(j);
        out.push_back(data_[idx]);
    }
    return out;
}

// ---------------------------------------------------------------- config

void validate(const TrainConfig& c) {
    auto need = [](bool ok, const char* field, const char* what) {
        if (!ok) throw std::invalid_argument(std::string("train config: ") + field + " " + what);
    };
    need(c.gamma > 0.0 && c.gamma <= 1.0, "gamma", "must lie in (0, 1]");
    need(c.lr_actor > 0.0, "lr_actor", "must be > 0");
    need(c.lr_critic > 0.0, "lr_critic", "must be > 0");
    need(c.batch > 0, "batch", "must be > 0");
    need(c.buffer >= c.batch, "buffer", "must be >= batch");
    need(c.steps > 0, "steps", "must be > 0");
    need(c.dt > 0.0, "dt", "must be > 0");
    need(c.tau > 0.0 && c.tau <= 1.0, "tau", "must lie in (0, 1]");
    need(c.eta1 >= 0.0 && c.eta2 >= 0.0, "eta1/eta2", "must be >= 0");
    need(c.units >= 2, "units", "must be >= 2");
    need(c.critic_hidden > 0 && c.critic_layers > 0, "critic", "needs at least one hidden layer");
    need(c.mlp_actor_hidden > 0, "mlp_actor_hidden", "must be > 0");
    need(c.slope_cap_fraction > 0.0 && c.slope_cap_fraction < 1.0, "slope_cap_fraction", "must lie in (0, 1)");
    need(c.init_slope_fraction > 0.0 && c.init_slope_fraction <= 1.0, "init_slope_fraction", "must lie in (0, 1]");
    need(c.init_span > 0.0, "init_span", "must be > 0");
    need(c.x_scale > 0.0, "x_scale", "must be > 0");
    need(c.action_noise >= 0.0, "action_noise", "must be >= 0");
    need(c.band_tol >= 0.0, "band_tol", "must be >= 0");
    need(c.deviation_lo > 0.0 && c.deviation_lo <= c.deviation_hi && c.deviation_hi < 1.0, "deviation_range",
         "must satisfy 0 < lo <= hi < 1");
}

json to_json(const TrainConfig& c) {
    return {{"gamma", c.gamma},
            {"lr_actor", c.lr_actor},
            {"lr_critic", c.lr_critic},
            {"batch", c.batch},
            {"buffer", c.buffer},
            {"episodes", c.episodes},
            {"steps", c.steps},
            {"dt", c.dt},
            {"tau", c.tau},
            {"eta1", c.eta1},
            {"eta2", c.eta2},
            {"seed", c.seed},
            {"units", c.units},
            {"critic_hidden", c.critic_hidden},
            {"critic_layers", c.critic_layers},
            {"mlp_actor_hidden", c.mlp_actor_hidden},
            {"actor", c.actor == ActorKind::monotone ? "monotone" : "mlp"},
            {"slope_cap_fraction", c.slope_cap_fraction},
            {"init_slope_fraction", c.init_slope_fraction},
            {"init_span", c.init_span},
            {"x_scale", c.x_scale},
            {"action_noise", c.action_noise},
            {"env", to_string(c.env)},
            {"band_tol", c.band_tol},
            {"checkpoint_every", c.checkpoint_every},
            {"scenario_kind", to_string(c.scenario_kind)},
            {"deviation_range", {c.deviation_lo, c.deviation_hi}}};
}

TrainConfig train_config_from_json(const json& doc) {
    if (!doc.is_object()) throw SchemaError("train", "expected a JSON object");
    TrainConfig c;
    const std::set<std::string> known = {
        "gamma", "lr_actor", "lr_critic", "batch", "buffer", "episodes", "steps", "dt", "tau", "eta1", "eta2",
        "seed", "units", "critic_hidden", "critic_layers", "mlp_actor_hidden", "actor", "slope_cap_fraction",
        "init_slope_fraction", "init_span", "x_scale", "action_noise", "env", "band_tol", "checkpoint_every",
        "scenario_kind", "deviation_range"};
    for (const auto& [k, v] : doc.items())
        if (!known.count(k)) throw SchemaError("train." + k, "unknown key");

    auto real = [&](const char* k, double& out) {
        if (!doc.contains(k)) return;
        if (!doc[k].is_number()) throw SchemaError(std::string("train.") + k, "expected a number");
        out = doc[k].get<double>();
    };
    auto count = [&](const char* k, auto& out) {
        if (!doc.contains(k)) return;
        if (!doc[k].is_number_unsigned()) throw SchemaError(std::string("train.") + k, "expected a non-negative integer");
        out = doc[k].get<std::remove_reference_t<decltype(out)>>();
    };
    real("gamma", c.gamma);
    real("lr_actor", c.lr_actor);
    real("lr_critic", c.lr_critic);
    count("batch", c.batch);
    count("buffer", c.buffer);
    count("episodes", c.episodes);
    count("steps", c.steps);
    real("dt", c.dt);
    real("tau", c.tau);
    real("eta1", c.eta1);
    real("eta2", c.eta2);
    count("seed", c.seed);
    count("units", c.units);
    count("critic_hidden", c.critic_hidden);
    count("critic_layers", c.critic_layers);
    count("mlp_actor_hidden", c.mlp_actor_hidden);
    real("slope_cap_fraction", c.slope_cap_fraction);
    real("init_slope_fraction", c.init_slope_fraction);
    real("init_span", c.init_span);
    real("x_scale", c.x_scale);
    real("action_noise", c.action_noise);
    real("band_tol", c.band_tol);
    count("checkpoint_every", c.checkpoint_every);
    try {
        if (doc.contains("actor")) {
            const auto a = doc["actor"].get<std::string>();
            if (a == "monotone") c.actor = ActorKind::monotone;
            else if (a == "mlp") c.actor = ActorKind::mlp;
            else throw SchemaError("train.actor", "expected 'monotone' or 'mlp'");
        }
        if (doc.contains("env")) c.env = env_mode_from_string(doc["env"].get<std::string>());
        if (doc.contains("scenario_kind")) c.scenario_kind = scenario_kind_from_string(doc["scenario_kind"].get<std::string>());
        if (doc.contains("deviation_range")) {
            const auto r = doc["deviation_range"].get<std::vector<double>>();
            if (r.size() != 2) throw SchemaError("train.deviation_range", "expected [lo, hi]");
            c.deviation_lo = r[0];
            c.deviation_hi = r[1];
        }
    } catch (const json::exception& e) {
        throw SchemaError("train", e.what());
    } catch (const std::invalid_argument& e) {
        throw SchemaError("train", e.what());
    }
    try {
        validate(c);
    } catch (const std::invalid_argument& e) {
        throw SchemaError("train", e.what());
    }
    return c;
}

TrainConfig load_train_config(const std::filesystem::path& path) {
    return train_config_from_json(parse_json_text(read_text_file(path), path.string()));
}

// ---------------------------------------------------------------- critic

double critic_loss(const Mlp& critic, const Mlp& target, const CriticBatch& b, double gamma, Eigen::VectorXd* grad) {
    const auto n = b.sa.cols();
    if (n == 0) throw std::invalid_argument("critic_loss: empty batch");
    if (b.sa_next.cols() != n || b.cost.size() != n) throw std::invalid_argument("critic_loss: batch shape mismatch");
    const Eigen::RowVectorXd y = b.cost + gamma * target.forward(b.sa_next).row(0);
    Mlp::Tape tape;
    const Eigen::RowVectorXd q = critic.forward(b.sa, grad ? &tape : nullptr).row(0);
    const Eigen::RowVectorXd err = q - y;
    const double loss = err.squaredNorm() / static_cast<double>(n);
    if (grad) {
        *grad = Eigen::VectorXd::Zero(critic.parameters().size());
        critic.backward(tape, (2.0 / static_cast<double>(n)) * err, grad);
    }
    return loss;
}

double critic_update(Mlp& critic, Adam& opt, const Mlp& target, const CriticBatch& b, double gamma) {
    Eigen::VectorXd grad;
    const double loss = critic_loss(critic, target, b, gamma, &grad);
    if (!std::isfinite(loss)) throw TrainingFault("critic loss is not finite");
    opt.step(critic.parameters(), grad);
    return loss;
}

Eigen::VectorXd critic_action_gradient(const Mlp& critic, const Eigen::MatrixXd& sa) {
    Mlp::Tape tape;
    critic.forward(sa, &tape);
    const Eigen::MatrixXd dx = critic.backward(tape, Eigen::RowVectorXd::Ones(sa.cols()), nullptr);
    return dx.row(1).transpose();
}

// ---------------------------------------------------------------- actor

StackedRelu stacked_relu_param_grad(const StackedRelu& p, double x) {
    StackedRelu g = p;
    for (std::size_t l = 0; l < p.units(); ++l) {
        const double zp = x + p.b_plus[l];
        const double zm = -x + p.b_minus[l];
        g.w_plus[l] = zp > 0.0 ? zp : 0.0;
        g.b_plus[l] = zp > 0.0 ? p.w_plus[l] : 0.0;
        g.w_minus[l] = zm > 0.0 ? zm : 0.0;
        g.b_minus[l] = zm > 0.0 ? p.w_minus[l] : 0.0;
    }
    return g;
}

Eigen::VectorXd flatten(const StackedRelu& p) {
    const auto d = static_cast<Eigen::Index>(p.units());
    Eigen::VectorXd t(4 * d);
    for (Eigen::Index l = 0; l < d; ++l) {
        const auto k = static_cast<std::size_t>(l);
        t(l) = p.w_plus[k];
        t(d + l) = p.b_plus[k];
        t(2 * d + l) = p.w_minus[k];
        t(3 * d + l) = p.b_minus[k];
    }
    return t;
}

StackedRelu unflatten(const Eigen::VectorXd& t, std::size_t units) {
    const auto d = static_cast<Eigen::Index>(units);
    if (t.size() != 4 * d) throw std::invalid_argument("unflatten: wrong parameter count");
    StackedRelu p;
    for (Eigen::Index l = 0; l < d; ++l) {
        p.w_plus.push_back(t(l));
        p.b_plus.push_back(t(d + l));
        p.w_minus.push_back(t(2 * d + l));
        p.b_minus.push_back(t(3 * d + l));
    }
    return p;
}

void actor_update(StackedRelu& p, Adam& opt, const std::vector<double>& xs, const ActionGradient& dq_da,
                  const ProjectionLimits& lim, const Deadband& band) {
    if (xs.empty()) throw std::invalid_argument("actor_update: empty batch");
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(4 * static_cast<Eigen::Index>(p.units()));
    for (double x : xs) {
        const double a = -eval_stacked_relu(p, x);
        grad -= dq_da(x, a) * flatten(stacked_relu_param_grad(p, x));
    }
    grad /= static_cast<double>(xs.size());
    if (!grad.allFinite()) throw TrainingFault("actor gradient is not finite");
    Eigen::VectorXd theta = flatten(p);
    opt.step(theta, grad);
    p = project_params(unflatten(theta, p.units()), lim, band);
}

void actor_update(StackedRelu& p, Adam& opt, const std::vector<double>& xs, const Mlp& critic,
                  const ProjectionLimits& lim, const Deadband& band) {
    if (xs.empty()) throw std::invalid_argument("actor_update: empty batch");
    Eigen::MatrixXd sa(2, static_cast<Eigen::Index>(xs.size()));
    for (std::size_t k = 0; k < xs.size(); ++k) {
        sa(0, static_cast<Eigen::Index>(k)) = xs[k];
        sa(1, static_cast<Eigen::Index>(k)) = -eval_stacked_relu(p, xs[k]);
    }
    const Eigen::VectorXd dq = critic_action_gradient(critic, sa);
    std::size_t k = 0;
    actor_update(p, opt, xs, [&](double, double) { return dq(static_cast<Eigen::Index>(k++)); }, lim, band);
}

void mlp_actor_update(Mlp& actor, Adam& opt, const std::vector<double>& xs, const Mlp& critic) {
    if (xs.empty()) throw std::invalid_argument("mlp_actor_update: empty batch");
    const auto n = static_cast<Eigen::Index>(xs.size());
    Eigen::MatrixXd x(1, n);
    for (Eigen::Index k = 0; k < n; ++k) x(0, k) = xs[static_cast<std::size_t>(k)];
    Mlp::Tape tape;
    const Eigen::MatrixXd a = actor.forward(x, &tape);
    Eigen::MatrixXd sa(2, n);
    sa.row(0) = x.row(0);
    sa.row(1) = a.row(0);
    const Eigen::VectorXd dq = critic_action_gradient(critic, sa);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(actor.parameters().size());
    actor.backward(tape, dq.transpose() / static_cast<double>(n), &grad);
    opt.step(actor.parameters(), grad);
}

MlpPolicy::MlpPolicy(std::vector<ControlChannel> channels, std::vector<ChannelScaling> scaling, std::vector<Mlp> nets)
    : channels_(std::move(channels)), scaling_(std::move(scaling)), nets_(std::move(nets)) {
    if (channels_.size() != nets_.size() || scaling_.size() != nets_.size())
        throw std::invalid_argument("MlpPolicy: one network and scaling per channel required");
    for (const auto& n : nets_)
        if (n.input_size() != 1 || n.output_size() != 1) throw std::invalid_argument("MlpPolicy: networks must be 1 -> 1");
}

double MlpPolicy::action(std::size_t channel, double v) const {
    const ChannelScaling& s = scaling_.at(channel);
    Eigen::VectorXd x(1);
    x(0) = (v - s.v_ref) / s.x_scale;
    return s.u_scale * nets_[channel](x);
}

json mlp_policy_to_json(const MlpPolicy& p) {
    json buses = json::array();
    for (std::size_t k = 0; k < p.nets().size(); ++k) {
        const auto& s = p.scaling()[k];
        buses.push_back({{"bus", p.channels()[k].bus},
                         {"phase", p.channels()[k].phase},
                         {"v_ref", s.v_ref},
                         {"x_scale", s.x_scale},
                         {"u_scale", s.u_scale},
                         {"net", mlp_to_json(p.nets()[k])}});
    }
    return {{"version", kCheckpointVersion}, {"kind", "mlp"}, {"buses", buses}};
}

MlpPolicy mlp_policy_from_json(const json& doc, const std::vector<ControlChannel>& channels) {
    try {
        if (doc.at("kind") != "mlp") throw SchemaError("checkpoint.kind", "expected 'mlp'");
        const json& buses = doc.at("buses");
        if (buses.size() != channels.size())
            throw SchemaError("checkpoint.buses", "channel count does not match the network");
        std::vector<ChannelScaling> sc;
        std::vector<Mlp> nets;
        for (std::size_t k = 0; k < buses.size(); ++k) {
            const json& b = buses[k];
            if (b.at("bus").get<int>() != channels[k].bus || b.value("phase", 0) != channels[k].phase)
                throw SchemaError("checkpoint.buses[" + std::to_string(k) + "]", "bus/phase does not match the network");
            sc.push_back({b.at("v_ref").get<double>(), b.at("x_scale").get<double>(), b.at("u_scale").get<double>()});
            nets.push_back(mlp_from_json(b.at("net")));
        }
        return MlpPolicy(channels, std::move(sc), std::move(nets));
    } catch (const json::exception& e) {
        throw SchemaError("checkpoint", e.what());
    }
}

// ---------------------------------------------------------------- curve

namespace {

std::string shortest(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

}  // namespace

std::string curve_csv(const std::vector<CurveRow>& curve) {
    std::string out(kCurveHeader);
    out += '\n';
    for (const auto& r : curve)
        out += std::to_string(r.episode) + ',' + shortest(r.ret) + ',' + shortest(r.mean_recovery_steps) + '\n';
    return out;
}

std::vector<CurveRow> parse_curve_csv(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != kCurveHeader) throw SchemaError("curve.csv:1", "unexpected header");
    std::vector<CurveRow> out;
    for (std::size_t ln = 2; std::getline(in, line); ++ln) {
        if (line.empty()) continue;
        CurveRow r;
        const char* p = line.data();
        const char* end = line.data() + line.size();
        auto field = [&](auto& dst) {
            const auto res = std::from_chars(p, end, dst);
            if (res.ec != std::errc()) throw SchemaError("curve.csv:" + std::to_string(ln), "malformed number");
            p = res.ptr;
            if (p < end && *p == ',') ++p;
        };
        field(r.episode);
        field(r.ret);
        field(r.mean_recovery_steps);
        if (p != end) throw SchemaError("curve.csv:" + std::to_string(ln), "trailing data");
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------- training

namespace {

struct Agent {
    ChannelScaling scale;
    Deadband band_n;       // deadband in normalized coordinates
    Deadband band_phys;
    StackedRelu actor, actor_target;
    Mlp mlp, mlp_target;
    Mlp critic, critic_target;
    Adam actor_opt, critic_opt;
    ReplayBuffer buffer;
    std::mt19937_64 rng;
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t k) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(k >> 32)};
    return std::mt19937_64(seq);
}

}  // namespace

TrainResult train(const RadialNetwork& net, const GridMatrices& gm, const TrainConfig& cfg, const TrainOptions& opts) {
    validate(cfg);
    const ControlModel model = make_control_model(net, gm);
    const auto& channels = model.channels;
    if (channels.empty()) throw std::invalid_argument("train: the network has no controlled buses");
    const double cap = certified_slope_cap(model, cfg.dt, cfg.slope_cap_fraction);
    const double u_scale = cap * cfg.x_scale;

    ProjectionLimits phys;
    phys.eps_w = kSlopeFloor;
    phys.max_slope = cap;
    ProjectionLimits norm;
    norm.eps_w = kSlopeFloor * cfg.x_scale / u_scale;
    norm.max_slope = 1.0;

    std::mt19937_64 init_rng = stream(cfg.seed, 0);
    const MonotonePolicy initial = make_monotone_policy(channels, cfg.units, cfg.init_slope_fraction * cap,
                                                        cfg.init_span, phys, init_rng);
    const bool monotone = cfg.actor == ActorKind::monotone;

    std::vector<Agent> agents;
    for (std::size_t c = 0; c < channels.size(); ++c) {
        const ChannelPolicy& cp = initial.channels()[c];
        Agent a{.scale = {cp.v_ref, cfg.x_scale, u_scale},
                .band_n = {cp.band.lower / cfg.x_scale, cp.band.upper / cfg.x_scale},
                .band_phys = cp.band,
                .actor = {},
                .actor_target = {},
                .mlp = {},
                .mlp_target = {},
                .critic = {},
                .critic_target = {},
                .actor_opt = {},
                .critic_opt = {},
                .buffer = ReplayBuffer(cfg.buffer),
                .rng = stream(cfg.seed, c + 1)};
        a.actor = project_params(rescale(cp.params, 1.0 / cfg.x_scale, 1.0 / u_scale), norm, a.band_n);
        a.actor_target = a.actor;
        std::vector<std::size_t> sizes{2};
        for (std::size_t l = 0; l < cfg.critic_layers; ++l) sizes.push_back(cfg.critic_hidden);
        sizes.push_back(1);
        a.critic = Mlp(sizes, a.rng);
        a.critic_target = a.critic;
        a.critic_opt = Adam(static_cast<std::size_t>(a.critic.parameters().size()), cfg.lr_critic);
        if (monotone) {
            a.actor_opt = Adam(4 * cfg.units, cfg.lr_actor);
        } else {
            a.mlp = Mlp({1, cfg.mlp_actor_hidden, cfg.mlp_actor_hidden, 1}, a.rng);
            a.mlp_target = a.mlp;
            a.actor_opt = Adam(static_cast<std::size_t>(a.mlp.parameters().size()), cfg.lr_actor);
        }
        agents.push_back(std::move(a));
    }

    auto export_policy = [&] {
        std::vector<ChannelPolicy> out;
        for (std::size_t c = 0; c < channels.size(); ++c) {
            const Agent& a = agents[c];
            ChannelPolicy cp = initial.channels()[c];
            cp.params = project_params(rescale(a.actor, a.scale.x_scale, a.scale.u_scale), phys, a.band_phys);
            out.push_back(std::move(cp));
        }
        return MonotonePolicy(std::move(out));
    };
    auto export_mlp = [&] {
        std::vector<ChannelScaling> sc;
        std::vector<Mlp> nets;
        for (const Agent& a : agents) {
            sc.push_back(a.scale);
            nets.push_back(a.mlp);
        }
        return MlpPolicy(channels, std::move(sc), std::move(nets));
    };

    TrainResult result;
    result.slope_cap = cap;
    if (opts.out_dir) std::filesystem::create_directories(*opts.out_dir);
    auto write_checkpoint = [&](const std::string& name) {
        if (!opts.out_dir) return;
        const auto path = *opts.out_dir / name;
        if (monotone) {
            const MonotonePolicy pol = export_policy();
            const StabilityCertificate cert = certify(model, pol, cfg.dt);
            if (!cert.passed)
                throw TrainingFault("refusing to write " + name + ": certificate failed (min_eig_upper = " +
                                    std::to_string(cert.min_eig_upper) + ")");
            save_policy(pol, path);
        } else {
            std::ofstream out(path, std::ios::binary);
            if (!out) throw Error("cannot write " + path.string());
            out << mlp_policy_to_json(export_mlp()).dump(2) << '\n';
        }
        result.checkpoints.push_back(path);
    };
    auto checkpoint_name = [](std::size_t ep) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "checkpoint_%05zu.json", ep);
        return std::string(buf);
    };

    write_checkpoint(checkpoint_name(0));

    ScenarioConfig scen;
    scen.kind = cfg.scenario_kind;
    scen.deviation_lo = cfg.deviation_lo;
    scen.deviation_hi = cfg.deviation_hi;
    scen.seed = stream(cfg.seed, 0x7261696eULL)();

    VoltageEnvironment env(net, gm, cfg.env, cfg.dt);
    std::mt19937_64 noise_rng = stream(cfg.seed, 0x6e6f697365ULL);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t nch = channels.size();

    auto normalized_action = [&](const Agent& a, double x, bool target) {
        if (monotone) return -eval_stacked_relu(target ? a.actor_target : a.actor, x);
        Eigen::VectorXd in(1);
        in(0) = x;
        return (target ? a.mlp_target : a.mlp)(in);
    };

    for (std::size_t ep = 0; ep < cfg.episodes; ++ep) {
        const Scenario s = generate_scenario(net, gm, scen, ep);
        CurveRow row;
        row.episode = ep;
        std::vector<bool> inside;
        try {
            env.reset(s.p, s.q0);
        } catch (const EnvironmentDiverged&) {
            row.diverged = true;
        }
        Eigen::VectorXd v = row.diverged ? Eigen::VectorXd() : env.channel_voltages();
        for (std::size_t t = 0; t < cfg.steps && !row.diverged; ++t) {
            Eigen::VectorXd u(static_cast<Eigen::Index>(nch));
            std::vector<double> cost(nch);
            for (std::size_t c = 0; c < nch; ++c) {
                const auto k = static_cast<Eigen::Index>(c);
                const Agent& a = agents[c];
                double an = normalized_action(a, (v(k) - a.scale.v_ref) / a.scale.x_scale, false);
                if (cfg.action_noise > 0.0) an += cfg.action_noise * noise(noise_rng);
                u(k) = a.scale.u_scale * an;
                cost[c] = stage_cost(v(k), u(k), channels[c].limits, cfg.eta1, cfg.eta2);
            }
            inside.push_back(in_band(v, channels, cfg.band_tol));
            try {
                env.step(u);
            } catch (const EnvironmentDiverged&) {
                row.diverged = true;
                break;
            }
            const Eigen::VectorXd v_next = env.channel_voltages();
            for (std::size_t c = 0; c < nch; ++c) {
                const auto k = static_cast<Eigen::Index>(c);
                agents[c].buffer.push({v(k), u(k), cost[c], v_next(k)});
                row.ret -= cost[c];
            }
            for (std::size_t c = 0; c < nch; ++c) {
                Agent& a = agents[c];
                if (a.buffer.size() <= cfg.batch) continue;
                const auto batch = a.buffer.sample(cfg.batch, a.rng);
                const auto n = static_cast<Eigen::Index>(batch.size());
                CriticBatch cb{Eigen::MatrixXd(2, n), Eigen::MatrixXd(2, n), Eigen::RowVectorXd(n)};
                std::vector<double> xs(batch.size());
                for (Eigen::Index j = 0; j < n; ++j) {
                    const Transition& tr = batch[static_cast<std::size_t>(j)];
                    const double x = (tr.v - a.scale.v_ref) / a.scale.x_scale;
                    const double xn = (tr.v_next - a.scale.v_ref) / a.scale.x_scale;
                    xs[static_cast<std::size_t>(j)] = x;
                    cb.sa(0, j) = x;
                    cb.sa(1, j) = tr.u / a.scale.u_scale;
                    cb.sa_next(0, j) = xn;
                    cb.sa_next(1, j) = normalized_action(a, xn, true);
                    cb.cost(j) = tr.c;
                }
                critic_update(a.critic, a.critic_opt, a.critic_target, cb, cfg.gamma);
                soft_update(a.critic_target.parameters(), a.critic.parameters(), cfg.tau);
                if (monotone) {
                    actor_update(a.actor, a.actor_opt, xs, a.critic, norm, a.band_n);
                    Eigen::VectorXd tgt = flatten(a.actor_target);
                    soft_update(tgt, flatten(a.actor), cfg.tau);
                    a.actor_target = project_params(unflatten(tgt, cfg.units), norm, a.band_n);
                } else {
                    mlp_actor_update(a.mlp, a.actor_opt, xs, a.critic);
                    soft_update(a.mlp_target.parameters(), a.mlp.parameters(), cfg.tau);
                }
            }
            v = v_next;
        }
        if (row.diverged) {
            ++result.diverged_episodes;
            row.mean_recovery_steps = static_cast<double>(cfg.steps);
        } else {
            inside.push_back(in_band(v, channels, cfg.band_tol));
            std::size_t rec = inside.size();
            for (std::size_t t = inside.size(); t-- > 0;) {
                if (!inside[t]) break;
                rec = t;
            }
            row.mean_recovery_steps = static_cast<double>(std::min(rec, cfg.steps));
        }
        result.curve.push_back(row);
        if (opts.on_episode) opts.on_episode(row);
        if (cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0) write_checkpoint(checkpoint_name(ep + 1));
    }

    if (monotone) result.policy = export_policy();
    else result.mlp_policy = export_mlp();
    if (opts.out_dir) {
        write_checkpoint("policy_final.json");
        std::ofstream out(*opts.out_dir / "curve.csv", std::ios::binary);
        if (!out) throw Error("cannot write curve.csv");
        out << curve_csv(result.curve);
    }
    return result;
}

}  // namespace voltctl
