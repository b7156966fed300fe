#include "voltctl/network_io.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "voltctl/errors.hpp"

namespace voltctl {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw SchemaError(where + "." + key, "unknown field");
    }
}

const json& require(const json& obj, const std::string& where, const char* key) {
    if (!obj.is_object()) throw SchemaError(where, "expected an object");
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError(where + "." + key, "missing required field");
    return *it;
}

double number(const json& v, const std::string& where) {
    if (!v.is_number()) throw SchemaError(where, "expected a number");
    return v.get<double>();
}

int integer(const json& v, const std::string& where) {
    if (!v.is_number_integer()) throw SchemaError(where, "expected an integer");
    return v.get<int>();
}

Matrix3c parse_z(const json& v, const std::string& where, double scale) {
    if (!v.is_array() || v.size() != 3) throw SchemaError(where, "expected a 3x3 array");
    Matrix3c z;
    for (int a = 0; a < 3; ++a) {
        const std::string row = where + "[" + std::to_string(a) + "]";
        if (!v[a].is_array() || v[a].size() != 3) throw SchemaError(row, "expected 3 entries");
        for (int b = 0; b < 3; ++b) {
            const std::string cell = row + "[" + std::to_string(b) + "]";
            const json& e = v[a][b];
            if (!e.is_object()) throw SchemaError(cell, "expected {re, im}");
            reject_unknown(e, cell, {"re", "im"});
            z(a, b) = Complex{number(require(e, cell, "re"), cell + ".re"),
                              number(require(e, cell, "im"), cell + ".im")} /
                      scale;
        }
    }
    return z;
}

}  // namespace

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw SchemaError(path.string(), "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json_text(std::string_view text, const std::string& source) {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        std::size_t line = 1, col = 1;
        for (std::size_t k = 0; k + 1 < e.byte && k < text.size(); ++k) {
            if (text[k] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw SchemaError(source + ":" + std::to_string(line) + ":" + std::to_string(col),
                          "invalid JSON");
    }
}

RadialNetwork parse_network(const json& doc) {
    if (!doc.is_object()) throw SchemaError("network", "expected a JSON object");
    reject_unknown(doc, "network", {"base", "v0_pu", "buses", "lines", "controlled"});

    RadialNetwork net;
    const json& base = require(doc, "network", "base");
    reject_unknown(base, "base", {"s_mva", "v_kv"});
    net.base.s_mva = number(require(base, "base", "s_mva"), "base.s_mva");
    net.base.v_kv = number(require(base, "base", "v_kv"), "base.v_kv");
    if (!(net.base.s_mva > 0.0)) throw SchemaError("base.s_mva", "must be > 0");
    if (!(net.base.v_kv > 0.0)) throw SchemaError("base.v_kv", "must be > 0");
    net.v0 = doc.contains("v0_pu") ? number(doc["v0_pu"], "v0_pu") : 1.0;

    const json& buses = require(doc, "network", "buses");
    if (!buses.is_array()) throw SchemaError("buses", "expected an array");
    const json& lines = require(doc, "network", "lines");
    if (!lines.is_array() || lines.empty()) throw SchemaError("lines", "expected a non-empty array");

    const std::size_t n = lines.size();  // a tree over n+1 buses
    net.limits.assign(n + 1, VoltageLimits{});
    std::vector<bool> have(n + 1, false);
    have[0] = true;
    for (std::size_t k = 0; k < buses.size(); ++k) {
        const std::string w = "buses[" + std::to_string(k) + "]";
        const json& b = buses[k];
        if (!b.is_object()) throw SchemaError(w, "expected an object");
        reject_unknown(b, w, {"id", "v_lower_pu", "v_upper_pu"});
        const int id = integer(require(b, w, "id"), w + ".id");
        if (id < 0 || static_cast<std::size_t>(id) > n)
            throw SchemaError(w + ".id", "bus ids must be 0.." + std::to_string(n));
        if (id == 0) continue;  // the substation carries no limits
        if (have[id]) throw SchemaError(w + ".id", "duplicate bus id " + std::to_string(id));
        have[id] = true;
        net.limits[id].lower = number(require(b, w, "v_lower_pu"), w + ".v_lower_pu");
        net.limits[id].upper = number(require(b, w, "v_upper_pu"), w + ".v_upper_pu");
    }
    for (std::size_t id = 1; id <= n; ++id)
        if (!have[id]) throw SchemaError("buses", "missing entry for bus " + std::to_string(id));

    bool any_single = false, any_three = false;
    const double zb = net.base.z_base_ohm();
    for (std::size_t k = 0; k < n; ++k) {
        const std::string w = "lines[" + std::to_string(k) + "]";
        const json& l = lines[k];
        if (!l.is_object()) throw SchemaError(w, "expected an object");
        reject_unknown(l, w, {"from", "to", "r_pu", "x_pu", "r_ohm", "x_ohm", "z_matrix", "z_matrix_ohm"});
        Line ln;
        ln.from = integer(require(l, w, "from"), w + ".from");
        ln.to = integer(require(l, w, "to"), w + ".to");
        if (l.contains("z_matrix") || l.contains("z_matrix_ohm")) {
            any_three = true;
            ln.z = l.contains("z_matrix") ? parse_z(l["z_matrix"], w + ".z_matrix", 1.0)
                                          : parse_z(l["z_matrix_ohm"], w + ".z_matrix_ohm", zb);
        } else if (l.contains("r_pu") || l.contains("x_pu")) {
            any_single = true;
            ln.r = number(require(l, w, "r_pu"), w + ".r_pu");
            ln.x = number(require(l, w, "x_pu"), w + ".x_pu");
        } else if (l.contains("r_ohm") || l.contains("x_ohm")) {
            any_single = true;
            ln.r = number(require(l, w, "r_ohm"), w + ".r_ohm") / zb;
            ln.x = number(require(l, w, "x_ohm"), w + ".x_ohm") / zb;
        } else {
            throw SchemaError(w, "needs r_pu/x_pu, r_ohm/x_ohm or z_matrix");
        }
        net.lines.push_back(ln);
    }
    if (any_single && any_three)
        throw SchemaError("lines", "mixes single-phase and three-phase impedances");
    net.phase_model = any_three ? PhaseModel::three : PhaseModel::single;

    const json& ctrl = require(doc, "network", "controlled");
    if (!ctrl.is_array()) throw SchemaError("controlled", "expected an array of bus ids");
    for (std::size_t k = 0; k < ctrl.size(); ++k)
        net.controlled.push_back(integer(ctrl[k], "controlled[" + std::to_string(k) + "]"));

    validate(net);
    return net;
}

RadialNetwork parse_network_text(std::string_view text) {
    return parse_network(parse_json_text(text, "network"));
}

RadialNetwork load_network(const std::filesystem::path& path) {
    return parse_network(parse_json_text(read_text_file(path), path.string()));
}

json network_to_json(const RadialNetwork& net) {
    json doc;
    doc["base"] = {{"s_mva", net.base.s_mva}, {"v_kv", net.base.v_kv}};
    doc["v0_pu"] = net.v0;
    json buses = json::array();
    for (std::size_t b = 1; b < net.limits.size(); ++b)
        buses.push_back({{"id", b}, {"v_lower_pu", net.limits[b].lower}, {"v_upper_pu", net.limits[b].upper}});
    doc["buses"] = buses;
    json lines = json::array();
    for (const Line& ln : net.lines) {
        json l = {{"from", ln.from}, {"to", ln.to}};
        if (net.phase_model == PhaseModel::single) {
            l["r_pu"] = ln.r;
            l["x_pu"] = ln.x;
        } else {
            json z = json::array();
            for (int a = 0; a < 3; ++a) {
                json row = json::array();
                for (int b = 0; b < 3; ++b) row.push_back({{"re", ln.z(a, b).real()}, {"im", ln.z(a, b).imag()}});
                z.push_back(row);
            }
            l["z_matrix"] = z;
        }
        lines.push_back(l);
    }
    doc["lines"] = lines;
    doc["controlled"] = net.controlled;
    return doc;
}

}  // namespace voltctl
