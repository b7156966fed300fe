#include "voltctl/scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>

#include "voltctl/errors.hpp"
#include "voltctl/network_io.hpp"

namespace voltctl {

using nlohmann::json;

std::string_view to_string(ScenarioKind k) {
    switch (k) {
        case ScenarioKind::high: return "high";
        case ScenarioKind::low: return "low";
        case ScenarioKind::mixed: return "mixed";
    }
    return "mixed";
}

ScenarioKind scenario_kind_from_string(std::string_view s) {
    if (s == "high") return ScenarioKind::high;
    if (s == "low") return ScenarioKind::low;
    if (s == "mixed") return ScenarioKind::mixed;
    throw std::invalid_argument("unknown scenario kind '" + std::string(s) + "' (expected high, low or mixed)");
}

void validate(const ScenarioConfig& cfg) {
    if (!(cfg.deviation_lo > 0.0 && cfg.deviation_lo <= cfg.deviation_hi && cfg.deviation_hi < 1.0))
        throw std::invalid_argument("scenario deviation range must satisfy 0 < lo <= hi < 1");
    if (!(cfg.nonlinear_tolerance >= 0.0)) throw std::invalid_argument("scenario nonlinear_tolerance must be >= 0");
    if (cfg.max_attempts == 0) throw std::invalid_argument("scenario max_attempts must be >= 1");
}

std::vector<std::size_t> state_indices(const RadialNetwork& net, const std::vector<BusId>& buses) {
    std::vector<std::size_t> out;
    for (BusId b : buses) {
        if (b < 1 || static_cast<std::size_t>(b) > net.bus_count())
            throw std::invalid_argument("bus " + std::to_string(b) + " is not a non-root bus of the network");
        for (std::size_t ph = 0; ph < net.phases(); ++ph) out.push_back(net.state_index(b, static_cast<int>(ph)));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

Eigen::VectorXd injections_for_target(const GridMatrices& gm, const std::vector<std::size_t>& subset,
                                      const Eigen::VectorXd& target, double v0) {
    const auto k = static_cast<Eigen::Index>(subset.size());
    if (target.size() != k) throw std::invalid_argument("injections_for_target: one target per subset entry");
    Eigen::MatrixXd rss(k, k);
    for (Eigen::Index i = 0; i < k; ++i)
        for (Eigen::Index j = 0; j < k; ++j)
            rss(i, j) = gm.R(static_cast<Eigen::Index>(subset[i]), static_cast<Eigen::Index>(subset[j]));
    const Eigen::VectorXd ps = rss.ldlt().solve(target - Eigen::VectorXd::Constant(k, v0));
    Eigen::VectorXd p = Eigen::VectorXd::Zero(gm.size());
    for (Eigen::Index i = 0; i < k; ++i) p(static_cast<Eigen::Index>(subset[i])) = ps(i);
    return p;
}

namespace {

bool violates(const Eigen::VectorXd& v, const std::vector<ControlChannel>& ch) {
    return !in_band(channel_values(v, ch), ch);
}

}  // namespace

Scenario generate_scenario(const RadialNetwork& net, const GridMatrices& gm, const ScenarioConfig& cfg,
                           std::size_t index) {
    validate(cfg);
    const auto channels = control_channels(net);
    std::vector<BusId> buses = cfg.bus_subset;
    if (buses.empty())
        for (const auto& c : channels) buses.push_back(c.bus);
    const auto subset = state_indices(net, buses);
    const FlowSolver solver(net, cfg.flow);

    for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                          static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(attempt)};
        std::mt19937_64 rng(seq);
        std::uniform_real_distribution<double> dev(cfg.deviation_lo, cfg.deviation_hi);
        double sign = cfg.kind == ScenarioKind::low ? -1.0 : 1.0;
        if (cfg.kind == ScenarioKind::mixed) sign = std::bernoulli_distribution(0.5)(rng) ? 1.0 : -1.0;

        Eigen::VectorXd target(static_cast<Eigen::Index>(subset.size()));
        for (Eigen::Index k = 0; k < target.size(); ++k) {
            const double d = cfg.deviation_lo == cfg.deviation_hi ? cfg.deviation_lo : dev(rng);
            target(k) = net.v0 * (1.0 + sign * d);
        }
        Scenario s;
        s.index = index;
        s.p = injections_for_target(gm, subset, target, net.v0);
        s.q0 = Eigen::VectorXd::Zero(gm.size());
        s.v0_expected = lindistflow_voltage(gm, s.p, s.q0, net.v0);
        if (!violates(s.v0_expected, channels)) continue;
        Eigen::VectorXd v_nl;
        try {
            v_nl = solver.solve(s.p, s.q0).v;
        } catch (const PowerFlowError&) {
            continue;
        }
        if (!violates(v_nl, channels)) continue;
        bool in_range = true;
        for (std::size_t i : subset) {
            const double d = std::abs(v_nl(static_cast<Eigen::Index>(i)) / net.v0 - 1.0);
            in_range = in_range && d >= cfg.deviation_lo - cfg.nonlinear_tolerance &&
                       d <= cfg.deviation_hi + cfg.nonlinear_tolerance;
        }
        if (!in_range) continue;
        return s;
    }
    throw Error("scenario " + std::to_string(index) + ": no feasible violation found after " +
                std::to_string(cfg.max_attempts) + " attempts");
}

std::vector<Scenario> generate(const RadialNetwork& net, const GridMatrices& gm, const ScenarioConfig& cfg) {
    std::vector<Scenario> out;
    out.reserve(cfg.count);
    for (std::size_t k = 0; k < cfg.count; ++k) out.push_back(generate_scenario(net, gm, cfg, k));
    return out;
}

namespace {

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd vec_field(const json& j, const std::string& where) {
    if (!j.is_array()) throw SchemaError(where, "expected an array of numbers");
    Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
    for (std::size_t k = 0; k < j.size(); ++k) {
        if (!j[k].is_number()) throw SchemaError(where + "[" + std::to_string(k) + "]", "expected a number");
        v(static_cast<Eigen::Index>(k)) = j[k].get<double>();
    }
    return v;
}

}  // namespace

json scenarios_to_json(const std::vector<Scenario>& s, const ScenarioConfig& cfg) {
    json arr = json::array();
    for (const auto& sc : s)
        arr.push_back({{"index", sc.index}, {"p", to_vec(sc.p)}, {"q0", to_vec(sc.q0)},
                       {"v0_expected", to_vec(sc.v0_expected)}});
    return {{"version", 1},
            {"kind", to_string(cfg.kind)},
            {"seed", cfg.seed},
            {"deviation_range", {cfg.deviation_lo, cfg.deviation_hi}},
            {"nonlinear_tolerance", cfg.nonlinear_tolerance},
            {"bus_subset", cfg.bus_subset},
            {"scenarios", arr}};
}

std::vector<Scenario> scenarios_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("scenarios") || !doc["scenarios"].is_array())
        throw SchemaError("scenarios", "expected an object with a 'scenarios' array");
    if (doc.value("version", 0) != 1) throw SchemaError("scenarios.version", "unsupported or missing version");
    std::vector<Scenario> out;
    const json& arr = doc["scenarios"];
    for (std::size_t k = 0; k < arr.size(); ++k) {
        const std::string w = "scenarios[" + std::to_string(k) + "]";
        const json& e = arr[k];
        if (!e.is_object()) throw SchemaError(w, "expected an object");
        for (const char* key : {"p", "q0"})
            if (!e.contains(key)) throw SchemaError(w + "." + key, "missing required field");
        Scenario s;
        s.index = e.value("index", k);
        s.p = vec_field(e["p"], w + ".p");
        s.q0 = vec_field(e["q0"], w + ".q0");
        if (s.q0.size() != s.p.size()) throw SchemaError(w + ".q0", "length differs from p");
        s.v0_expected = e.contains("v0_expected") ? vec_field(e["v0_expected"], w + ".v0_expected")
                                                  : Eigen::VectorXd();
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------- time series

namespace {

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

std::vector<std::string_view> split(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

std::string format_number(double x) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, x);
    return {buf, r.ptr};
}

constexpr const char* kColumns[] = {"timestamp", "bus_id", "load_p_kw", "load_q_kvar", "pv_p_kw"};

}  // namespace

TimeSeries parse_timeseries(std::string_view text, const std::string& source) {
    std::vector<std::string_view> lines;
    {
        std::size_t start = 0;
        while (start <= text.size()) {
            const std::size_t nl = text.find('\n', start);
            lines.push_back(text.substr(start, nl == std::string_view::npos ? std::string_view::npos : nl - start));
            if (nl == std::string_view::npos) break;
            start = nl + 1;
        }
    }
    std::size_t first = 0;
    while (first < lines.size() && trim(lines[first]).empty()) ++first;
    if (first == lines.size()) throw SchemaError(source, "missing header");

    const auto header = split(lines[first]);
    std::map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) {
        const std::string name(header[k]);
        if (std::find(std::begin(kColumns), std::end(kColumns), name) == std::end(kColumns))
            throw SchemaError(source + ":" + std::to_string(first + 1), "unknown column '" + name + "'");
        if (!col.emplace(name, k).second)
            throw SchemaError(source + ":" + std::to_string(first + 1), "duplicate column '" + name + "'");
    }
    for (const char* c : kColumns)
        if (!col.count(c)) throw SchemaError(source + ":" + std::to_string(first + 1), std::string("missing column '") + c + "'");

    struct Row {
        double t;
        BusId bus;
        double lp, lq, pv;
    };
    std::vector<Row> rows;
    for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
        if (trim(lines[ln]).empty()) continue;
        const auto cells = split(lines[ln]);
        const std::string where = source + ":" + std::to_string(ln + 1);
        if (cells.size() != header.size())
            throw SchemaError(where, "expected " + std::to_string(header.size()) + " columns, found " +
                                         std::to_string(cells.size()));
        auto number = [&](const char* name) {
            const std::string_view cell = cells[col.at(name)];
            double x = 0.0;
            const auto r = std::from_chars(cell.data(), cell.data() + cell.size(), x);
            if (r.ec != std::errc() || r.ptr != cell.data() + cell.size() || !std::isfinite(x))
                throw SchemaError(where + " column " + name, "not a finite number: '" + std::string(cell) + "'");
            return x;
        };
        Row r{number("timestamp"), 0, number("load_p_kw"), number("load_q_kvar"), number("pv_p_kw")};
        const double id = number("bus_id");
        if (id != std::floor(id) || id < 1) throw SchemaError(where + " column bus_id", "expected a positive integer");
        r.bus = static_cast<BusId>(id);
        rows.push_back(r);
    }
    if (rows.empty()) throw SchemaError(source, "no samples");

    TimeSeries ts;
    std::size_t k = 0;
    while (k < rows.size()) {
        const double t = rows[k].t;
        if (!ts.timestamps.empty() && !(t > ts.timestamps.back()))
            throw SchemaError(source + " row " + std::to_string(k + 1), "timestamps must be strictly increasing");
        std::size_t end = k;
        while (end < rows.size() && rows[end].t == t) ++end;
        std::vector<BusId> ids;
        for (std::size_t r = k; r < end; ++r) ids.push_back(rows[r].bus);
        if (ts.timestamps.empty()) {
            if (std::set<BusId>(ids.begin(), ids.end()).size() != ids.size())
                throw SchemaError(source + " row " + std::to_string(k + 1), "duplicate bus_id within a timestamp");
            ts.bus_ids = ids;
        } else if (std::set<BusId>(ids.begin(), ids.end()) != std::set<BusId>(ts.bus_ids.begin(), ts.bus_ids.end()) ||
                   ids.size() != ts.bus_ids.size()) {
            throw SchemaError(source + " row " + std::to_string(k + 1),
                              "bus ids at this timestamp differ from the first timestamp");
        }
        ts.timestamps.push_back(t);
        k = end;
    }
    const auto n = static_cast<Eigen::Index>(ts.timestamps.size());
    const auto m = static_cast<Eigen::Index>(ts.bus_ids.size());
    ts.load_p_kw.resize(n, m);
    ts.load_q_kvar.resize(n, m);
    ts.pv_p_kw.resize(n, m);
    std::map<BusId, Eigen::Index> pos;
    for (Eigen::Index j = 0; j < m; ++j) pos[ts.bus_ids[static_cast<std::size_t>(j)]] = j;
    for (std::size_t r = 0, s = 0; r < rows.size(); ++r) {
        if (r > 0 && rows[r].t != rows[r - 1].t) ++s;
        const Eigen::Index j = pos.at(rows[r].bus);
        ts.load_p_kw(static_cast<Eigen::Index>(s), j) = rows[r].lp;
        ts.load_q_kvar(static_cast<Eigen::Index>(s), j) = rows[r].lq;
        ts.pv_p_kw(static_cast<Eigen::Index>(s), j) = rows[r].pv;
    }
    return ts;
}

TimeSeries load_timeseries(const std::filesystem::path& path) {
    return parse_timeseries(read_text_file(path), path.string());
}

std::string timeseries_to_csv(const TimeSeries& ts) {
    std::string out(kTimeSeriesHeader);
    out += '\n';
    for (std::size_t s = 0; s < ts.samples(); ++s) {
        for (std::size_t j = 0; j < ts.bus_ids.size(); ++j) {
            const auto r = static_cast<Eigen::Index>(s);
            const auto c = static_cast<Eigen::Index>(j);
            out += format_number(ts.timestamps[s]) + ',' + std::to_string(ts.bus_ids[j]) + ',' +
                   format_number(ts.load_p_kw(r, c)) + ',' + format_number(ts.load_q_kvar(r, c)) + ',' +
                   format_number(ts.pv_p_kw(r, c)) + '\n';
        }
    }
    return out;
}

void write_timeseries(const TimeSeries& ts, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << timeseries_to_csv(ts);
}

void timeseries_injections(const TimeSeries& ts, const RadialNetwork& net, std::size_t k, Eigen::VectorXd& p,
                           Eigen::VectorXd& q) {
    if (k >= ts.samples()) throw std::out_of_range("timeseries_injections: sample index out of range");
    const auto n = static_cast<Eigen::Index>(net.state_size());
    p = Eigen::VectorXd::Zero(n);
    q = Eigen::VectorXd::Zero(n);
    const double per_unit = 1.0 / (1000.0 * net.base.s_mva) / static_cast<double>(net.phases());
    const auto r = static_cast<Eigen::Index>(k);
    for (std::size_t j = 0; j < ts.bus_ids.size(); ++j) {
        const BusId b = ts.bus_ids[j];
        if (b < 1 || static_cast<std::size_t>(b) > net.bus_count())
            throw SchemaError("timeseries bus_id " + std::to_string(b), "bus is not part of the network");
        const auto c = static_cast<Eigen::Index>(j);
        for (std::size_t ph = 0; ph < net.phases(); ++ph) {
            const auto i = static_cast<Eigen::Index>(net.state_index(b, static_cast<int>(ph)));
            p(i) += (ts.pv_p_kw(r, c) - ts.load_p_kw(r, c)) * per_unit;
            q(i) -= ts.load_q_kvar(r, c) * per_unit;
        }
    }
}

TimeSeries synthetic_daily_profile(const RadialNetwork& net, const ProfileConfig& cfg) {
    if (!(cfg.hours > 0.0 && cfg.step_minutes > 0.0)) throw std::invalid_argument("profile: hours and step must be > 0");
    if (!(cfg.power_factor > 0.0 && cfg.power_factor <= 1.0)) throw std::invalid_argument("profile: power factor in (0, 1]");
    std::mt19937_64 rng(cfg.seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::uniform_real_distribution<double> spread(0.8, 1.2);

    TimeSeries ts;
    for (std::size_t b = 1; b <= net.bus_count(); ++b) ts.bus_ids.push_back(static_cast<BusId>(b));
    const auto m = static_cast<Eigen::Index>(ts.bus_ids.size());
    const auto n = static_cast<Eigen::Index>(std::floor(cfg.hours * 60.0 / cfg.step_minutes)) + 1;
    std::vector<double> load_scale(static_cast<std::size_t>(m)), pv_scale(static_cast<std::size_t>(m));
    for (Eigen::Index j = 0; j < m; ++j) {
        load_scale[static_cast<std::size_t>(j)] = spread(rng);
        pv_scale[static_cast<std::size_t>(j)] = spread(rng);
    }
    ts.load_p_kw.resize(n, m);
    ts.load_q_kvar.resize(n, m);
    ts.pv_p_kw.resize(n, m);
    const double tan_phi = std::tan(std::acos(cfg.power_factor));
    const double pi = std::numbers::pi;
    for (Eigen::Index s = 0; s < n; ++s) {
        const double minutes = static_cast<double>(s) * cfg.step_minutes;
        ts.timestamps.push_back(minutes * 60.0);
        const double h = std::fmod(minutes / 60.0, 24.0);
        const double load_shape = 0.5 * (1.0 + std::cos(2.0 * pi * (h - 19.0) / 24.0));
        const double sun = h > 6.0 && h < 18.0 ? std::pow(std::sin(pi * (h - 6.0) / 12.0), 2) : 0.0;
        for (Eigen::Index j = 0; j < m; ++j) {
            const std::size_t k = static_cast<std::size_t>(j);
            const double lp = (cfg.load_base_kw + (cfg.load_peak_kw - cfg.load_base_kw) * load_shape) *
                              load_scale[k] * std::max(0.0, 1.0 + cfg.noise * noise(rng));
            const double pv = cfg.pv_peak_kw * sun * pv_scale[k] * std::max(0.0, 1.0 + cfg.noise * noise(rng));
            ts.load_p_kw(s, j) = std::round(lp * 1000.0) / 1000.0;
            ts.load_q_kvar(s, j) = std::round(lp * tan_phi * 1000.0) / 1000.0;
            ts.pv_p_kw(s, j) = std::round(pv * 1000.0) / 1000.0;
        }
    }
    return ts;
}

ReplayReport replay(const RadialNetwork& net, const Controller& policy, const TimeSeries& ts, double dt,
                    std::size_t substeps, FlowOptions opts) {
    if (ts.samples() == 0) throw std::invalid_argument("replay: empty time series");
    if (!(dt > 0.0) || substeps == 0) throw std::invalid_argument("replay: dt > 0 and substeps >= 1 required");
    ReplayReport rep;
    rep.channels = control_channels(net);
    if (policy.channel_count() != rep.channels.size())
        throw std::invalid_argument("replay: policy has " + std::to_string(policy.channel_count()) +
                                    " channels, network controls " + std::to_string(rep.channels.size()));
    const FlowSolver solver(net, opts);
    const auto nch = static_cast<Eigen::Index>(rep.channels.size());
    const auto steps = static_cast<Eigen::Index>(ts.samples() * substeps);
    rep.v_uncontrolled.resize(steps, nch);
    rep.v_controlled.resize(steps, nch);
    rep.u.resize(steps, nch);

    const auto n = static_cast<Eigen::Index>(net.state_size());
    Eigen::VectorXd q_inv = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd v_unc = Eigen::VectorXd::Constant(n, net.v0);
    Eigen::VectorXd v_ctl = v_unc;
    Eigen::VectorXd p, q;
    Eigen::Index row = 0;
    for (std::size_t k = 0; k < ts.samples(); ++k) {
        timeseries_injections(ts, net, k, p, q);
        bool unc_failed = false;
        try {
            v_unc = solver.solve(p, q).v;
        } catch (const PowerFlowError&) {
            unc_failed = true;
        }
        const double step_dt = k + 1 < ts.samples() ? (ts.timestamps[k + 1] - ts.timestamps[k]) / static_cast<double>(substeps)
                               : k > 0 ? (ts.timestamps[k] - ts.timestamps[k - 1]) / static_cast<double>(substeps)
                                       : 0.0;
        for (std::size_t sub = 0; sub < substeps; ++sub, ++row) {
            bool ctl_failed = false;
            try {
                v_ctl = solver.solve(p, q + q_inv).v;
            } catch (const PowerFlowError&) {
                ctl_failed = true;
            }
            const Eigen::VectorXd vc = channel_values(v_ctl, rep.channels);
            const Eigen::VectorXd u = act(policy, vc);
            rep.time.push_back(ts.timestamps[k] + static_cast<double>(sub) * step_dt);
            rep.sample.push_back(k);
            rep.v_uncontrolled.row(row) = channel_values(v_unc, rep.channels).transpose();
            rep.v_controlled.row(row) = vc.transpose();
            rep.u.row(row) = u.transpose();
            rep.diverged_uncontrolled.push_back(unc_failed);
            rep.diverged_controlled.push_back(ctl_failed);
            for (Eigen::Index c = 0; c < nch; ++c)
                q_inv(static_cast<Eigen::Index>(rep.channels[static_cast<std::size_t>(c)].state_index)) += dt * u(c);
        }
    }
    return rep;
}

}  // namespace voltctl
