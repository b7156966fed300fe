#pragma once

#include <filesystem>
#include <string_view>

#include <json.hpp>

#include "voltctl/grid.hpp"

namespace voltctl {

/// Parses the network file format:
///
///   { "base": {"s_mva": 1.0, "v_kv": 4.16},
///     "v0_pu": 1.0,
///     "buses": [{"id": 1, "v_lower_pu": 0.95, "v_upper_pu": 1.05}, ...],
///     "lines": [{"from": 0, "to": 1, "r_pu": .., "x_pu": ..}, ...],
///     "controlled": [2, 7, 9] }
///
/// Three-phase lines replace r/x with "z_matrix": 3x3 of {"re", "im"}.
/// Line impedances may instead be given in ohms ("r_ohm"/"x_ohm",
/// "z_matrix_ohm") and are converted with the base impedance v_kv^2/s_mva.
/// Limits bound the squared magnitude v directly. Unknown keys are rejected.
RadialNetwork parse_network(const nlohmann::json& doc);
RadialNetwork parse_network_text(std::string_view text);
RadialNetwork load_network(const std::filesystem::path& path);

nlohmann::json network_to_json(const RadialNetwork& net);

/// Reads a whole file; throws SchemaError naming the path when it cannot be opened.
std::string read_text_file(const std::filesystem::path& path);

/// Parses JSON text, reporting syntax errors as "line L, column C".
nlohmann::json parse_json_text(std::string_view text, const std::string& source);

}  // namespace voltctl
