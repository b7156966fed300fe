#include "manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <stdexcept>

#include <openssl/evp.h>

#include "voltctl/errors.hpp"
#include "voltctl/network_io.hpp"

namespace voltctl::cli {

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
        throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int k = 0; k < len; ++k) {
        out += hex[md[k] >> 4];
        out += hex[md[k] & 0xf];
    }
    return out;
}

std::string sha256_file(const std::filesystem::path& path) { return sha256_hex(read_text_file(path)); }

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string RunManifest::config_hash() const { return sha256_hex(config.dump()); }

nlohmann::json RunManifest::to_json() const {
    return {{"command", command},   {"argv", argv},
            {"config", config},     {"config_hash", config_hash()},
            {"seed", seed},         {"code_version", code_version},
            {"inputs", inputs},     {"started_at", started_at},
            {"finished_at", finished_at}};
}

void RunManifest::write(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    if (finished_at.empty()) finished_at = utc_now();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / "manifest.json").string());
    out << to_json().dump(2) << '\n';
}

}  // namespace voltctl::cli
