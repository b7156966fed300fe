// voltctl: command-line front end for the voltage-control toolkit.
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "manifest.hpp"
#include "voltctl/errors.hpp"
#include "voltctl/eval.hpp"
#include "voltctl/grid.hpp"
#include "voltctl/lyapunov.hpp"
#include "voltctl/network_io.hpp"
#include "voltctl/policy.hpp"
#include "voltctl/rl.hpp"
#include "voltctl/scenario.hpp"

#ifndef VOLTCTL_VERSION
#define VOLTCTL_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;

namespace voltctl::cli {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitInput = 2;

/// Thrown for bad command-line input that CLI11 cannot catch itself.
struct InputError : Error {
    using Error::Error;
};

struct Loaded {
    RadialNetwork net;
    GridMatrices gm;
};

Loaded load(const fs::path& path) {
    Loaded l{load_network(path), {}};
    l.gm = build_rx_matrices(l.net);
    return l;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

json matrix_json(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(to_vec(m.row(i).transpose()));
    return rows;
}

void check_channels(const std::vector<ControlChannel>& net_ch, const std::vector<std::pair<BusId, int>>& pol,
                    const std::string& what) {
    if (pol.size() != net_ch.size())
        throw SchemaError(what, "policy has " + std::to_string(pol.size()) + " channels, network controls " +
                                    std::to_string(net_ch.size()));
    for (std::size_t k = 0; k < pol.size(); ++k)
        if (pol[k].first != net_ch[k].bus || pol[k].second != net_ch[k].phase)
            throw SchemaError(what, "channel " + std::to_string(k) + " is bus " + std::to_string(pol[k].first) +
                                        " phase " + std::to_string(pol[k].second) + ", network expects bus " +
                                        std::to_string(net_ch[k].bus) + " phase " + std::to_string(net_ch[k].phase));
}

MonotonePolicy load_monotone(const fs::path& path, const RadialNetwork& net) {
    MonotonePolicy mp = load_policy(path);
    std::vector<std::pair<BusId, int>> ids;
    for (const auto& c : mp.channels()) ids.emplace_back(c.bus, c.phase);
    check_channels(control_channels(net), ids, path.string());
    return mp;
}

std::unique_ptr<Controller> load_controller(const fs::path& path, const RadialNetwork& net) {
    const json doc = parse_json_text(read_text_file(path), path.string());
    if (doc.is_object() && doc.value("kind", "monotone") == "mlp")
        return std::make_unique<MlpPolicy>(mlp_policy_from_json(doc, control_channels(net)));
    return std::make_unique<MonotonePolicy>(load_monotone(path, net));
}

std::vector<std::string> argv_vector(int argc, char** argv) { return {argv, argv + argc}; }

void write_file(const fs::path& path, const std::string& body) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << body;
}

// ---------------------------------------------------------------- net

struct NetArgs {
    std::string network;
    bool json_out = false;
};

int cmd_net_inspect(const NetArgs& a) {
    const Loaded l = load(a.network);
    const auto topo = build_topology(l.net);
    const auto channels = control_channels(l.net);
    const Eigen::MatrixXd xcc = channel_submatrix(l.gm.X, channels);
    const PdCertificate rpd = check_positive_definite(l.gm.R);
    json lines = json::array();
    for (const Line& ln : l.net.lines) {
        json e = {{"from", ln.from}, {"to", ln.to}};
        if (l.net.phase_model == PhaseModel::three) e["dominant"] = check_diagonal_dominance(ln);
        else e["r_pu"] = ln.r, e["x_pu"] = ln.x;
        lines.push_back(e);
    }
    json out = {{"network", a.network},
                {"phase_model", l.net.phase_model == PhaseModel::three ? "three" : "single"},
                {"buses", l.net.bus_count()},
                {"lines", l.net.lines.size()},
                {"controlled", l.net.controlled},
                {"channels", channels.size()},
                {"base", {{"s_mva", l.net.base.s_mva}, {"v_kv", l.net.base.v_kv}}},
                {"v0_pu", l.net.v0},
                {"depth_order", topo.order},
                {"x_min_eig", l.gm.x_certificate.min_eig},
                {"x_positive_definite", l.gm.x_certificate.pd},
                {"r_min_eig", rpd.min_eig},
                {"line_checks", lines}};
    if (!channels.empty()) out["linear_gain_bound"] = stability_gain_bound(xcc);
    if (a.json_out) {
        std::cout << out.dump(2) << '\n';
        return kExitOk;
    }
    std::printf("network      %s\n", a.network.c_str());
    std::printf("phase model  %s\n", out["phase_model"].get<std::string>().c_str());
    std::printf("buses        %zu (plus substation)\n", l.net.bus_count());
    std::printf("lines        %zu\n", l.net.lines.size());
    std::printf("controlled   %s (%zu channels)\n", json(l.net.controlled).dump().c_str(), channels.size());
    std::printf("X min eig    %.6g (%s)\n", l.gm.x_certificate.min_eig,
                l.gm.x_certificate.pd ? "positive definite" : "NOT positive definite");
    std::printf("R min eig    %.6g\n", rpd.min_eig);
    if (out.contains("linear_gain_bound"))
        std::printf("linear gain  eps < %.6g (2 sigma_min / sigma_max^2 of X on controlled channels)\n",
                    out["linear_gain_bound"].get<double>());
    if (l.net.phase_model == PhaseModel::three) {
        std::printf("\nline  from  to  diagonal dominance\n");
        for (std::size_t k = 0; k < l.net.lines.size(); ++k)
            std::printf("%4zu  %4d  %2d  %s\n", k, l.net.lines[k].from, l.net.lines[k].to,
                        lines[k]["dominant"].get<bool>() ? "pass" : "FAIL");
    }
    return kExitOk;
}

int cmd_net_matrices(const NetArgs& a) {
    const Loaded l = load(a.network);
    if (a.json_out) {
        std::cout << json{{"R", matrix_json(l.gm.R)}, {"X", matrix_json(l.gm.X)},
                          {"x_min_eig", l.gm.x_certificate.min_eig}}
                         .dump(2)
                  << '\n';
        return kExitOk;
    }
    const Eigen::IOFormat fmt(Eigen::FullPrecision, 0, ", ", "\n", "[", "]", "[", "]");
    std::cout << "R =\n" << l.gm.R.format(fmt) << "\n\nX =\n" << l.gm.X.format(fmt) << "\n\nX min eig = "
              << l.gm.x_certificate.min_eig << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- certify

struct CertifyArgs {
    std::string network;
    std::string checkpoint;
    double dt = 1.0;
    std::optional<double> exponential;
    std::string out;
};

int cmd_certify(const CertifyArgs& a) {
    const Loaded l = load(a.network);
    const MonotonePolicy mp = load_monotone(a.checkpoint, l.net);
    const ControlModel model = make_control_model(l.net, l.gm);
    if (a.exponential && !(*a.exponential > 0.0 && *a.exponential < 1.0))
        throw InputError("--exponential must lie in (0, 1)");
    const StabilityCertificate cert =
        a.exponential ? certify_exponential(model, mp, a.dt, *a.exponential) : certify(model, mp, a.dt);
    const json j = to_json(cert);
    if (!a.out.empty()) write_file(a.out, j.dump(2) + "\n");
    std::cout << j.dump(2) << '\n';
    if (std::isfinite(cert.dt_max))
        std::cout << (cert.passed ? "PASS" : "FAIL") << ": certified for dt <= " << cert.dt_max
                  << " (control frequency above " << 1.0 / cert.dt_max << " Hz)\n";
    else
        std::cout << (cert.passed ? "PASS" : "FAIL") << '\n';
    return cert.passed ? kExitOk : kExitCheckFailed;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string network;
    std::string config;
    std::string out;
    std::optional<std::size_t> episodes;
    std::optional<std::uint64_t> seed;
    std::string actor;
    std::string env;
    bool quiet = false;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
    RunManifest m;
    m.command = "train";
    m.argv = argv;
    m.code_version = VOLTCTL_VERSION;
    m.started_at = utc_now();
    const Loaded l = load(a.network);
    m.add_input(a.network);
    TrainConfig cfg;
    if (!a.config.empty()) {
        cfg = load_train_config(a.config);
        m.add_input(a.config);
    }
    if (a.episodes) cfg.episodes = *a.episodes;
    if (a.seed) cfg.seed = *a.seed;
    try {
        if (a.actor == "mlp") cfg.actor = ActorKind::mlp;
        else if (a.actor == "monotone") cfg.actor = ActorKind::monotone;
        else if (!a.actor.empty()) throw InputError("--actor must be 'monotone' or 'mlp'");
        if (!a.env.empty()) cfg.env = env_mode_from_string(a.env);
        validate(cfg);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    m.config = to_json(cfg);
    m.seed = cfg.seed;

    TrainOptions opts;
    opts.out_dir = fs::path(a.out);
    if (!a.quiet) {
        const std::size_t every = std::max<std::size_t>(1, cfg.episodes / 20);
        opts.on_episode = [every](const CurveRow& r) {
            if ((r.episode + 1) % every == 0)
                std::fprintf(stderr, "episode %5zu  return %10.4f  recovery %5.1f%s\n", r.episode + 1, r.ret,
                             r.mean_recovery_steps, r.diverged ? "  (diverged)" : "");
        };
    }
    const TrainResult res = train(l.net, l.gm, cfg, opts);
    m.config["slope_cap"] = res.slope_cap;
    m.write(a.out);
    std::printf("wrote %zu checkpoints, curve.csv and manifest.json to %s (%zu diverged episodes)\n",
                res.checkpoints.size(), a.out.c_str(), res.diverged_episodes);
    return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
    std::string network;
    std::vector<std::string> policies;
    std::vector<double> linear;
    bool linear_auto = false;
    std::string scenarios;
    std::size_t generate = 0;
    std::uint64_t seed = 1;
    std::string kind = "mixed";
    std::vector<double> range{0.05, 0.15};
    std::string env = "nonlinear";
    double dt = 1.0;
    long cap = 100;
    double band_tol = 1e-3;
    unsigned jobs = 1;
    std::string out;
    std::vector<std::string> formats{"json", "csv", "plotdata"};
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv) {
    RunManifest m;
    m.command = "eval";
    m.argv = argv;
    m.code_version = VOLTCTL_VERSION;
    m.started_at = utc_now();
    const Loaded l = load(a.network);
    m.add_input(a.network);
    const auto channels = control_channels(l.net);

    std::vector<Scenario> scenarios;
    json scen_cfg;
    if (!a.scenarios.empty() && a.generate > 0) throw InputError("use either --scenarios or --generate");
    if (!a.scenarios.empty()) {
        scenarios = scenarios_from_json(parse_json_text(read_text_file(a.scenarios), a.scenarios));
        m.add_input(a.scenarios);
        for (const auto& s : scenarios)
            if (s.p.size() != l.gm.size())
                throw SchemaError(a.scenarios, "scenario " + std::to_string(s.index) + " does not match the network size");
        scen_cfg = {{"file", a.scenarios}};
    } else if (a.generate > 0) {
        ScenarioConfig sc;
        sc.count = a.generate;
        sc.seed = a.seed;
        if (a.range.size() != 2) throw InputError("--range expects two numbers");
        sc.deviation_lo = a.range[0];
        sc.deviation_hi = a.range[1];
        try {
            sc.kind = scenario_kind_from_string(a.kind);
            validate(sc);
        } catch (const std::invalid_argument& e) {
            throw InputError(e.what());
        }
        scenarios = generate(l.net, l.gm, sc);
        scen_cfg = scenarios_to_json({}, sc);
        scen_cfg.erase("scenarios");
        scen_cfg["count"] = sc.count;
        if (!a.out.empty()) write_file(fs::path(a.out) / "scenarios.json", scenarios_to_json(scenarios, sc).dump(2) + "\n");
    } else {
        throw InputError("eval needs --scenarios FILE or --generate N");
    }

    EvalConfig ec;
    try {
        ec.mode = env_mode_from_string(a.env);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    ec.dt = a.dt;
    ec.cap = a.cap;
    ec.band_tol = a.band_tol;
    ec.jobs = a.jobs;

    struct Named {
        std::string name;
        std::unique_ptr<Controller> c;
    };
    std::vector<Named> policies;
    for (const auto& p : a.policies) {
        policies.push_back({fs::path(p).stem().string(), load_controller(p, l.net)});
        m.add_input(p);
    }
    std::vector<double> gains = a.linear;
    std::optional<double> auto_gain;
    if (a.linear_auto) {
        auto_gain = stability_gain_bound(channel_submatrix(l.gm.X, channels));
        gains.push_back(*auto_gain);
    }
    for (double g : gains) {
        if (!(g > 0.0)) throw InputError("--linear gains must be > 0");
        char name[64];
        std::snprintf(name, sizeof name, "linear(eps=%.4g)", g);
        policies.push_back({name, std::make_unique<LinearDroop>(channels, g)});
    }
    if (policies.empty()) throw InputError("eval needs at least one --policy, --linear or --linear-auto");

    std::vector<EmitFormat> formats;
    try {
        for (const auto& f : a.formats) formats.push_back(emit_format_from_string(f));
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }

    std::vector<EvalReport> reports;
    for (std::size_t k = 0; k < policies.size(); ++k) {
        reports.push_back(evaluate(l.net, l.gm, *policies[k].c, scenarios, ec, policies[k].name));
        if (!a.out.empty())
            for (EmitFormat f : formats) emit(reports.back(), f, a.out, "report_" + std::to_string(k));
    }
    const auto rows = compare(reports);
    std::cout << "environment: " << to_string(ec.mode) << ", " << scenarios.size() << " scenarios, cap " << ec.cap
              << " steps\n"
              << comparison_table(rows) << kEffortDefinition << '\n';
    if (!a.out.empty()) {
        write_file(fs::path(a.out) / "comparison.csv", comparison_csv(rows));
        m.config = {{"env", to_string(ec.mode)}, {"dt", ec.dt},          {"cap", ec.cap},
                    {"band_tol", ec.band_tol},  {"scenarios", scen_cfg}, {"linear_gains", gains},
                    {"policies", a.policies}};
        if (auto_gain) m.config["linear_auto_eps"] = *auto_gain;
        m.seed = a.seed;
        m.write(a.out);
    }
    return kExitOk;
}

// ---------------------------------------------------------------- replay

struct ReplayArgs {
    std::string network;
    std::string checkpoint;
    std::string series;
    double dt = 1.0;
    std::size_t substeps = 0;  // 0: row spacing / dt
    std::string out;
};

int cmd_replay(const ReplayArgs& a, const std::vector<std::string>& argv) {
    RunManifest m;
    m.command = "replay";
    m.argv = argv;
    m.code_version = VOLTCTL_VERSION;
    m.started_at = utc_now();
    const Loaded l = load(a.network);
    const auto policy = load_controller(a.checkpoint, l.net);
    const TimeSeries ts = load_timeseries(a.series);
    for (const auto& p : {a.network, a.checkpoint, a.series}) m.add_input(p);
    if (!(a.dt > 0.0)) throw InputError("--dt must be > 0");
    std::size_t substeps = a.substeps;
    if (substeps == 0) {
        const double spacing = ts.samples() > 1 ? ts.timestamps[1] - ts.timestamps[0] : a.dt;
        substeps = static_cast<std::size_t>(std::max(1.0, std::round(spacing / a.dt)));
    }
    const ReplayReport rep = replay(l.net, *policy, ts, a.dt, substeps);

    const auto& ch = rep.channels;
    std::size_t unc_viol = 0, ctl_viol = 0, after = 0, after_in = 0;
    bool recovered = false;
    for (Eigen::Index k = 0; k < rep.v_controlled.rows(); ++k) {
        const bool unc_in = in_band(rep.v_uncontrolled.row(k).transpose(), ch);
        const bool ctl_in = in_band(rep.v_controlled.row(k).transpose(), ch, 1e-3);
        unc_viol += unc_in ? 0 : 1;
        ctl_viol += ctl_in ? 0 : 1;
        if (ctl_in) recovered = true;
        if (recovered) {
            ++after;
            after_in += ctl_in ? 1 : 0;
        }
    }
    // Settled value: the last control step of every series row.
    std::size_t settled = 0, settled_in = 0;
    bool settled_recovered = false;
    for (std::size_t s = 0; s < ts.samples(); ++s) {
        const auto k = static_cast<Eigen::Index>((s + 1) * substeps - 1);
        const bool in = in_band(rep.v_controlled.row(k).transpose(), ch, 1e-3);
        settled_recovered = settled_recovered || in;
        if (settled_recovered) {
            ++settled;
            settled_in += in ? 1 : 0;
        }
    }
    const std::size_t n = static_cast<std::size_t>(rep.v_controlled.rows());
    json summary = {{"steps", n},
                    {"samples", ts.samples()},
                    {"settled_in_band_after_first_recovery",
                     settled ? static_cast<double>(settled_in) / static_cast<double>(settled) : 0.0},
                    {"uncontrolled_violation_steps", unc_viol},
                    {"controlled_violation_steps", ctl_viol},
                    {"controlled_in_band_after_first_recovery", after ? static_cast<double>(after_in) / after : 0.0},
                    {"diverged_uncontrolled", std::count(rep.diverged_uncontrolled.begin(), rep.diverged_uncontrolled.end(), true)},
                    {"diverged_controlled", std::count(rep.diverged_controlled.begin(), rep.diverged_controlled.end(), true)}};
    if (!a.out.empty()) {
        const fs::path dir(a.out);
        write_file(dir / "uncontrolled.dat", replay_plotdata(rep, false));
        write_file(dir / "controlled.dat", replay_plotdata(rep, true));
        std::string actions = "# time_s";
        for (const auto& c : ch) actions += " u_bus" + std::to_string(c.bus) + "_ph" + std::to_string(c.phase);
        actions += '\n';
        for (Eigen::Index k = 0; k < rep.u.rows(); ++k) {
            actions += std::to_string(rep.time[static_cast<std::size_t>(k)]);
            for (Eigen::Index c = 0; c < rep.u.cols(); ++c) actions += ' ' + std::to_string(rep.u(k, c));
            actions += '\n';
        }
        write_file(dir / "actions.dat", actions);
        write_file(dir / "replay.json", summary.dump(2) + "\n");
        m.config = {{"dt", a.dt}, {"substeps", substeps}};
        m.write(dir);
    }
    std::cout << summary.dump(2) << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------- scenarios / profile

struct ScenarioArgs {
    std::string network;
    std::size_t count = 100;
    std::uint64_t seed = 1;
    std::string kind = "mixed";
    std::vector<double> range{0.05, 0.15};
    std::string out;
};

int cmd_scenarios(const ScenarioArgs& a) {
    const Loaded l = load(a.network);
    ScenarioConfig sc;
    sc.count = a.count;
    sc.seed = a.seed;
    try {
        sc.kind = scenario_kind_from_string(a.kind);
        if (a.range.size() != 2) throw std::invalid_argument("--range expects two numbers");
        sc.deviation_lo = a.range[0];
        sc.deviation_hi = a.range[1];
        validate(sc);
    } catch (const std::invalid_argument& e) {
        throw InputError(e.what());
    }
    const auto s = generate(l.net, l.gm, sc);
    const std::string body = scenarios_to_json(s, sc).dump(2) + "\n";
    if (a.out.empty()) std::cout << body;
    else write_file(a.out, body);
    return kExitOk;
}

struct ProfileArgs {
    std::string network;
    ProfileConfig cfg;
    std::string out;
};

int cmd_profile(const ProfileArgs& a) {
    const RadialNetwork net = load_network(a.network);
    const TimeSeries ts = synthetic_daily_profile(net, a.cfg);
    if (a.out.empty()) std::cout << timeseries_to_csv(ts);
    else write_timeseries(ts, a.out);
    return kExitOk;
}

}  // namespace
}  // namespace voltctl::cli

int main(int argc, char** argv) {
    using namespace voltctl;
    using namespace voltctl::cli;
    CLI::App app{"voltctl: stability-certified inverter voltage control on radial feeders"};
    app.set_version_flag("--version", VOLTCTL_VERSION);
    app.require_subcommand(1);
    const auto args = argv_vector(argc, argv);

    NetArgs net_args;
    auto* net = app.add_subcommand("net", "Inspect a feeder file");
    net->require_subcommand(1);
    auto* inspect = net->add_subcommand("inspect", "Topology summary, PD certificate and per-line checks");
    inspect->add_option("network", net_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    inspect->add_flag("--json", net_args.json_out, "Emit JSON");
    auto* matrices = net->add_subcommand("matrices", "Print the LinDistFlow R and X matrices");
    matrices->add_option("network", net_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    matrices->add_flag("--json", net_args.json_out, "Emit JSON");

    CertifyArgs cert_args;
    auto* cert = app.add_subcommand("certify", "Check a policy checkpoint against the slope stability condition");
    cert->add_option("network", cert_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    cert->add_option("checkpoint", cert_args.checkpoint, "Monotone policy checkpoint")->required()->check(CLI::ExistingFile);
    cert->add_option("--dt", cert_args.dt, "Sampling interval")->default_val(1.0)->check(CLI::PositiveNumber);
    cert->add_option("--exponential", cert_args.exponential, "Exponential-stability rate c in (0, 1)");
    cert->add_option("--out", cert_args.out, "Also write the certificate JSON here");

    TrainArgs train_args;
    auto* tr = app.add_subcommand("train", "Train per-inverter DDPG agents");
    tr->add_option("network", train_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    tr->add_option("--config", train_args.config, "Training config JSON")->check(CLI::ExistingFile);
    tr->add_option("--out", train_args.out, "Output directory")->required();
    tr->add_option("--episodes", train_args.episodes, "Override the episode count");
    tr->add_option("--seed", train_args.seed, "Override the seed");
    tr->add_option("--actor", train_args.actor, "monotone (default) or mlp (unconstrained ablation)");
    tr->add_option("--env", train_args.env, "linear or nonlinear training environment");
    tr->add_flag("--quiet", train_args.quiet, "No progress output");

    EvalArgs eval_args;
    auto* ev = app.add_subcommand("eval", "Evaluate policies on disturbance scenarios");
    ev->add_option("network", eval_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    ev->add_option("--policy", eval_args.policies, "Policy checkpoint (repeatable)")->check(CLI::ExistingFile);
    ev->add_option("--linear", eval_args.linear, "Linear droop gain (repeatable)");
    ev->add_flag("--linear-auto", eval_args.linear_auto, "Linear droop at the gain bound 2 sigma_min / sigma_max^2");
    ev->add_option("--scenarios", eval_args.scenarios, "Scenario JSON file")->check(CLI::ExistingFile);
    ev->add_option("--generate", eval_args.generate, "Generate N scenarios instead");
    ev->add_option("--seed", eval_args.seed, "Scenario seed for --generate")->default_val(1);
    ev->add_option("--kind", eval_args.kind, "high, low or mixed")->default_val("mixed");
    ev->add_option("--range", eval_args.range, "Deviation range lo hi")->expected(2)->default_str("0.05 0.15");
    ev->add_option("--env", eval_args.env, "linear or nonlinear")->default_val("nonlinear");
    ev->add_option("--dt", eval_args.dt, "Sampling interval")->default_val(1.0)->check(CLI::PositiveNumber);
    ev->add_option("--cap", eval_args.cap, "Episode cap in steps")->default_val(100);
    ev->add_option("--band-tol", eval_args.band_tol, "In-band tolerance for recovery")->default_val(1e-3);
    ev->add_option("--jobs", eval_args.jobs, "Worker threads")->default_val(1);
    ev->add_option("--out", eval_args.out, "Output directory for reports");
    ev->add_option("--format", eval_args.formats, "json, csv, plotdata (repeatable)")->default_str("json csv plotdata");

    ReplayArgs replay_args;
    auto* rp = app.add_subcommand("replay", "Replay a load/PV time series with and without control");
    rp->add_option("network", replay_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    rp->add_option("checkpoint", replay_args.checkpoint, "Policy checkpoint")->required()->check(CLI::ExistingFile);
    rp->add_option("timeseries", replay_args.series, "CSV: " + std::string(kTimeSeriesHeader))
        ->required()
        ->check(CLI::ExistingFile);
    rp->add_option("--dt", replay_args.dt, "Controller sampling interval")->default_val(1.0);
    rp->add_option("--substeps", replay_args.substeps, "Control steps per series row (0: row spacing / dt)")
        ->default_val(0);
    rp->add_option("--out", replay_args.out, "Output directory for traces");

    ScenarioArgs scen_args;
    auto* sc = app.add_subcommand("scenarios", "Generate disturbance scenarios as JSON");
    sc->add_option("network", scen_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    sc->add_option("--count", scen_args.count, "Number of scenarios")->default_val(100);
    sc->add_option("--seed", scen_args.seed, "Seed")->default_val(1);
    sc->add_option("--kind", scen_args.kind, "high, low or mixed")->default_val("mixed");
    sc->add_option("--range", scen_args.range, "Deviation range lo hi")->expected(2)->default_str("0.05 0.15");
    sc->add_option("--out", scen_args.out, "Output file (stdout if omitted)");

    ProfileArgs prof_args;
    auto* pf = app.add_subcommand("profile", "Write a synthetic daily load/PV profile CSV");
    pf->add_option("network", prof_args.network, "Network JSON file")->required()->check(CLI::ExistingFile);
    pf->add_option("--seed", prof_args.cfg.seed, "Noise seed")->default_val(0);
    pf->add_option("--hours", prof_args.cfg.hours, "Length in hours")->default_val(24.0);
    pf->add_option("--step-minutes", prof_args.cfg.step_minutes, "Sample spacing")->default_val(15.0);
    pf->add_option("--load-base-kw", prof_args.cfg.load_base_kw, "Night load per bus")->default_val(prof_args.cfg.load_base_kw);
    pf->add_option("--load-peak-kw", prof_args.cfg.load_peak_kw, "Evening peak load per bus")->default_val(prof_args.cfg.load_peak_kw);
    pf->add_option("--pv-peak-kw", prof_args.cfg.pv_peak_kw, "Midday PV peak per bus")->default_val(prof_args.cfg.pv_peak_kw);
    pf->add_option("--out", prof_args.out, "Output CSV (stdout if omitted)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInput;
    }

    try {
        if (*inspect) return cmd_net_inspect(net_args);
        if (*matrices) return cmd_net_matrices(net_args);
        if (*cert) return cmd_certify(cert_args);
        if (*tr) return cmd_train(train_args, args);
        if (*ev) return cmd_eval(eval_args, args);
        if (*rp) return cmd_replay(replay_args, args);
        if (*sc) return cmd_scenarios(scen_args);
        if (*pf) return cmd_profile(prof_args);
    } catch (const SchemaError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const StructuralError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const InputError& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const CertificateError& e) {
        std::cerr << "input error: " << e.what() << " (min eigenvalue " << e.min_eig() << ")\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitCheckFailed;
    }
    return kExitInput;
}
