#include "voltctl/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "voltctl/errors.hpp"

namespace voltctl {

using nlohmann::json;

double stage_cost(double v, double u, const VoltageLimits& band, double eta1, double eta2) {
    const double dev = std::max(v - band.upper, 0.0) + std::min(v - band.lower, 0.0);
    return eta1 * dev * dev + eta2 * std::abs(u);
}

Stat summarize(const std::vector<double>& x) {
    Stat s;
    s.n = x.size();
    if (x.empty()) return s;
    double sum = 0.0;
    for (double v : x) sum += v;
    s.mean = sum / static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(x.size()));
    return s;
}

namespace {

double excess(double v, const VoltageLimits& l) {
    return v > l.upper ? v - l.upper : v < l.lower ? l.lower - v : 0.0;
}

}  // namespace

ScenarioResult rollout(VoltageEnvironment& env, const Controller& policy, const Scenario& s, const EvalConfig& cfg,
                       double s_base_mva) {
    const auto& ch = env.channels();
    ScenarioResult res;
    res.index = s.index;
    std::vector<Eigen::VectorXd> vs;
    std::vector<Eigen::VectorXd> us;
    try {
        env.reset(s.p, s.q0);
        vs.push_back(env.channel_voltages());
        for (long t = 0; t < cfg.cap; ++t) {
            us.push_back(act(policy, vs.back()));
            env.step(us.back());
            vs.push_back(env.channel_voltages());
        }
    } catch (const EnvironmentDiverged&) {
        res.diverged = true;
    }

    if (cfg.keep_traces)
        for (const auto& v : vs) res.trace.emplace_back(v.data(), v.data() + v.size());

    if (res.diverged) {
        res.stabilized = false;
        res.recovery_steps = cfg.cap;
        res.final_violations.assign(ch.size(), std::numeric_limits<double>::quiet_NaN());
    } else {
        long rec = static_cast<long>(vs.size());
        for (long t = static_cast<long>(vs.size()) - 1; t >= 0; --t) {
            if (!in_band(vs[static_cast<std::size_t>(t)], ch, cfg.band_tol)) break;
            rec = t;
        }
        res.stabilized = rec <= cfg.cap;
        res.recovery_steps = std::min(rec, cfg.cap);
        for (std::size_t c = 0; c < ch.size(); ++c)
            res.final_violations.push_back(excess(vs.back()(static_cast<Eigen::Index>(c)), ch[c].limits) /
                                           env.nominal());
    }
    const long window = std::min<long>(res.recovery_steps, static_cast<long>(us.size()));
    for (long t = 0; t < window; ++t) {
        const auto& u = us[static_cast<std::size_t>(t)];
        const auto& v = vs[static_cast<std::size_t>(t)];
        res.reactive_effort += u.lpNorm<1>() * s_base_mva;
        for (std::size_t c = 0; c < ch.size(); ++c) {
            const auto k = static_cast<Eigen::Index>(c);
            res.transient_cost += stage_cost(v(k), u(k), ch[c].limits, cfg.eta1, cfg.eta2);
        }
    }
    return res;
}

void aggregate(EvalReport& r, const std::vector<double>& edges) {
    std::vector<double> rec, eff, cost;
    std::size_t ok = 0;
    r.bucket_edges = edges;
    r.histogram.assign(edges.size() + 1, 0);
    for (const auto& s : r.scenarios) {
        rec.push_back(static_cast<double>(s.recovery_steps));
        eff.push_back(s.reactive_effort);
        cost.push_back(s.transient_cost);
        if (s.stabilized) ++ok;
        for (double f : s.final_violations) {
            std::size_t b = edges.size();
            if (!s.diverged && std::isfinite(f)) {
                b = 0;
                while (b < edges.size() && f >= edges[b]) ++b;
            }
            ++r.histogram[b];
        }
    }
    r.recovery_steps = summarize(rec);
    r.reactive_effort = summarize(eff);
    r.transient_cost = summarize(cost);
    r.stabilization_rate = r.scenarios.empty() ? 0.0 : static_cast<double>(ok) / static_cast<double>(r.scenarios.size());
}

EvalReport evaluate(const RadialNetwork& net, const GridMatrices& gm, const Controller& policy,
                    const std::vector<Scenario>& scenarios, const EvalConfig& cfg, std::string name) {
    if (scenarios.empty()) throw std::invalid_argument("evaluate: empty scenario list");
    if (cfg.cap < 1) throw std::invalid_argument("evaluate: cap must be >= 1");
    if (policy.channel_count() != control_channels(net).size())
        throw std::invalid_argument("evaluate: policy channel count does not match the network");
    for (std::size_t k = 1; k < cfg.bucket_edges.size(); ++k)
        if (!(cfg.bucket_edges[k] > cfg.bucket_edges[k - 1]))
            throw std::invalid_argument("evaluate: bucket edges must be increasing");

    EvalReport r;
    r.policy = std::move(name);
    r.mode = cfg.mode;
    r.cap = cfg.cap;
    r.dt = cfg.dt;
    r.band_tol = cfg.band_tol;
    r.scenarios.resize(scenarios.size());

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        try {
            VoltageEnvironment env(net, gm, cfg.mode, cfg.dt, cfg.flow);
            for (std::size_t k = next++; k < scenarios.size(); k = next++)
                r.scenarios[k] = rollout(env, policy, scenarios[k], cfg, net.base.s_mva);
        } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
            next = scenarios.size();
        }
    };
    const unsigned jobs = std::max(1u, std::min<unsigned>(cfg.jobs, static_cast<unsigned>(scenarios.size())));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    aggregate(r, cfg.bucket_edges);
    return r;
}

std::vector<ComparisonRow> compare(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw std::invalid_argument("compare: no reports");
    const auto& ref = reports.front();
    for (const auto& r : reports) {
        if (r.mode != ref.mode) throw std::invalid_argument("compare: reports mix linear and nonlinear environments");
        bool same = r.scenarios.size() == ref.scenarios.size();
        for (std::size_t k = 0; same && k < r.scenarios.size(); ++k)
            same = r.scenarios[k].index == ref.scenarios[k].index;
        if (!same) throw std::invalid_argument("compare: reports cover different scenario sets");
    }
    std::vector<ComparisonRow> rows;
    for (const auto& r : reports) {
        ComparisonRow all;
        all.policy = r.policy;
        all.scenarios = r.scenarios.size();
        all.stabilization_rate = r.stabilization_rate;
        all.recovery_steps = r.recovery_steps;
        all.reactive_effort = r.reactive_effort;
        all.transient_cost = r.transient_cost;
        rows.push_back(all);

        ComparisonRow star;
        star.policy = r.policy + "*";
        star.starred = true;
        std::vector<double> rec, eff, cost;
        for (const auto& s : r.scenarios) {
            if (!s.stabilized) continue;
            rec.push_back(static_cast<double>(s.recovery_steps));
            eff.push_back(s.reactive_effort);
            cost.push_back(s.transient_cost);
        }
        star.scenarios = rec.size();
        star.stabilization_rate = rec.empty() ? 0.0 : 1.0;
        if (!rec.empty()) {
            star.recovery_steps = summarize(rec);
            star.reactive_effort = summarize(eff);
            star.transient_cost = summarize(cost);
        }
        rows.push_back(star);
    }
    return rows;
}

namespace {

std::string fmt(double x, int prec = 6) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, x);
    return buf;
}

std::string cell(const std::optional<Stat>& s, bool mean) {
    if (!s) return "NA";
    return fmt(mean ? s->mean : s->std);
}

}  // namespace

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::string out =
        "policy,scenarios,stabilization_rate,recovery_mean,recovery_std,effort_mvar_mean,effort_mvar_std,"
        "cost_mean,cost_std\n";
    for (const auto& r : rows) {
        out += r.policy + ',' + std::to_string(r.scenarios) + ',' + fmt(r.stabilization_rate) + ',' +
               cell(r.recovery_steps, true) + ',' + cell(r.recovery_steps, false) + ',' + cell(r.reactive_effort, true) +
               ',' + cell(r.reactive_effort, false) + ',' + cell(r.transient_cost, true) + ',' +
               cell(r.transient_cost, false) + '\n';
    }
    return out;
}

std::string comparison_table(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-20s %9s %8s %18s %22s\n", "policy", "scenarios", "stable", "recovery (steps)",
                  "reactive power (MVar)");
    os << line;
    auto pm = [](const std::optional<Stat>& s) {
        if (!s) return std::string("NA");
        char b[64];
        std::snprintf(b, sizeof b, "%.2f +/- %.2f", s->mean, s->std);
        return std::string(b);
    };
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%-20s %9zu %7.1f%% %18s %22s\n", r.policy.c_str(), r.scenarios,
                      100.0 * r.stabilization_rate, pm(r.recovery_steps).c_str(), pm(r.reactive_effort).c_str());
        os << line;
    }
    return os.str();
}

namespace {

json stat_json(const Stat& s) { return {{"mean", s.mean}, {"std", s.std}, {"n", s.n}}; }

Stat stat_from(const json& j) { return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()}; }

json number_or_null(double x) {
    if (std::isfinite(x)) return x;
    return nullptr;
}

}  // namespace

json report_to_json(const EvalReport& r) {
    json sc = json::array();
    for (const auto& s : r.scenarios) {
        json fv = json::array();
        for (double f : s.final_violations) fv.push_back(number_or_null(f));
        json e = {{"index", s.index},
                  {"recovery_steps", s.recovery_steps},
                  {"stabilized", s.stabilized},
                  {"diverged", s.diverged},
                  {"reactive_effort", s.reactive_effort},
                  {"transient_cost", s.transient_cost},
                  {"final_violations", fv}};
        if (!s.trace.empty()) e["trace"] = s.trace;
        sc.push_back(std::move(e));
    }
    return {{"version", 1},
            {"policy", r.policy},
            {"env", to_string(r.mode)},
            {"cap", r.cap},
            {"dt", r.dt},
            {"band_tol", r.band_tol},
            {"effort_definition", kEffortDefinition},
            {"aggregates",
             {{"recovery_steps", stat_json(r.recovery_steps)},
              {"reactive_effort", stat_json(r.reactive_effort)},
              {"transient_cost", stat_json(r.transient_cost)},
              {"stabilization_rate", r.stabilization_rate},
              {"histogram", {{"bucket_edges", r.bucket_edges}, {"counts", r.histogram}}}}},
            {"scenarios", sc}};
}

EvalReport report_from_json(const json& doc) {
    try {
        if (doc.at("version").get<int>() != 1) throw SchemaError("report.version", "unsupported version");
        EvalReport r;
        r.policy = doc.at("policy").get<std::string>();
        r.mode = env_mode_from_string(doc.at("env").get<std::string>());
        r.cap = doc.at("cap").get<long>();
        r.dt = doc.at("dt").get<double>();
        r.band_tol = doc.at("band_tol").get<double>();
        const json& a = doc.at("aggregates");
        r.recovery_steps = stat_from(a.at("recovery_steps"));
        r.reactive_effort = stat_from(a.at("reactive_effort"));
        r.transient_cost = stat_from(a.at("transient_cost"));
        r.stabilization_rate = a.at("stabilization_rate").get<double>();
        r.bucket_edges = a.at("histogram").at("bucket_edges").get<std::vector<double>>();
        r.histogram = a.at("histogram").at("counts").get<std::vector<std::size_t>>();
        for (const json& e : doc.at("scenarios")) {
            ScenarioResult s;
            s.index = e.at("index").get<std::size_t>();
            s.recovery_steps = e.at("recovery_steps").get<long>();
            s.stabilized = e.at("stabilized").get<bool>();
            s.diverged = e.at("diverged").get<bool>();
            s.reactive_effort = e.at("reactive_effort").get<double>();
            s.transient_cost = e.at("transient_cost").get<double>();
            for (const json& f : e.at("final_violations"))
                s.final_violations.push_back(f.is_null() ? std::numeric_limits<double>::quiet_NaN() : f.get<double>());
            if (e.contains("trace")) s.trace = e["trace"].get<std::vector<std::vector<double>>>();
            r.scenarios.push_back(std::move(s));
        }
        return r;
    } catch (const json::exception& e) {
        throw SchemaError("report", e.what());
    }
}

std::string report_csv(const EvalReport& r) {
    std::string out(kScenarioCsvHeader);
    out += '\n';
    for (const auto& s : r.scenarios) {
        double worst = 0.0;
        bool finite = true;
        for (double f : s.final_violations) {
            if (!std::isfinite(f)) finite = false;
            else worst = std::max(worst, f);
        }
        out += std::to_string(s.index) + ',' + std::to_string(s.recovery_steps) + ',' + (s.stabilized ? "1" : "0") +
               ',' + (s.diverged ? "1" : "0") + ',' + fmt(s.reactive_effort, 17) + ',' + fmt(s.transient_cost, 17) +
               ',' + (finite ? fmt(worst, 17) : "NA") + '\n';
    }
    return out;
}

std::string histogram_plotdata(const EvalReport& r) {
    std::string out = "# bucket_lo bucket_hi count (fractions of nominal voltage)\n";
    for (std::size_t b = 0; b < r.histogram.size(); ++b) {
        const double lo = b == 0 ? 0.0 : r.bucket_edges[b - 1];
        const std::string hi = b < r.bucket_edges.size() ? fmt(r.bucket_edges[b]) : "inf";
        out += fmt(lo) + ' ' + hi + ' ' + std::to_string(r.histogram[b]) + '\n';
    }
    return out;
}

EmitFormat emit_format_from_string(std::string_view s) {
    if (s == "json") return EmitFormat::json;
    if (s == "csv") return EmitFormat::csv;
    if (s == "plotdata") return EmitFormat::plotdata;
    throw std::invalid_argument("unknown output format '" + std::string(s) + "' (expected json, csv or plotdata)");
}

std::filesystem::path emit(const EvalReport& r, EmitFormat fmt_, const std::filesystem::path& dir,
                           const std::string& stem) {
    std::filesystem::create_directories(dir);
    std::filesystem::path path;
    std::string body;
    switch (fmt_) {
        case EmitFormat::json:
            path = dir / (stem + ".json");
            body = report_to_json(r).dump(2) + "\n";
            break;
        case EmitFormat::csv:
            path = dir / (stem + ".csv");
            body = report_csv(r);
            break;
        case EmitFormat::plotdata:
            path = dir / (stem + "_histogram.dat");
            body = histogram_plotdata(r);
            break;
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << body;
    return path;
}

std::string replay_plotdata(const ReplayReport& rep, bool controlled) {
    const Eigen::MatrixXd& v = controlled ? rep.v_controlled : rep.v_uncontrolled;
    std::string out = std::string("# time_s v_squared_pu (") + (controlled ? "controlled" : "uncontrolled") + ")\n";
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
        const auto& ch = rep.channels[static_cast<std::size_t>(c)];
        out += "# bus " + std::to_string(ch.bus) + " phase " + std::to_string(ch.phase) + "\n";
        for (Eigen::Index k = 0; k < v.rows(); ++k)
            out += fmt(rep.time[static_cast<std::size_t>(k)], 10) + ' ' + fmt(v(k, c), 10) + '\n';
        out += "\n\n";
    }
    return out;
}

}  // namespace voltctl
