#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace voltctl::cli {

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);
std::string utc_now();

/// Provenance record written as manifest.json next to every artifact set.
struct RunManifest {
    std::string command;
    std::vector<std::string> argv;
    nlohmann::json config = nlohmann::json::object();
    std::uint64_t seed = 0;
    std::string code_version;
    std::map<std::string, std::string> inputs;  // path -> sha256
    std::string started_at;
    std::string finished_at;

    void add_input(const std::filesystem::path& p) { inputs[p.string()] = sha256_file(p); }
    /// sha256 of the compact, key-sorted JSON of `config`.
    std::string config_hash() const;
    nlohmann::json to_json() const;
    void write(const std::filesystem::path& dir);
};

}  // namespace voltctl::cli
