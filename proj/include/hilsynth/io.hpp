#ifndef HILSYNTH_IO_HPP
#define HILSYNTH_IO_HPP

#include <array>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>

#include <openssl/evp.h>

#include "json.hpp"

#include "hilsynth/errors.hpp"

namespace hilsynth {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// Shortest decimal that parses back to the same double (at most 17 significant digits).
inline std::string format_decimal(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw Error(Errc::ParseError, "cannot format number");
    return std::string(buf.data(), end);
}

inline double parse_decimal(std::string_view text) {
    double value = 0.0;
    auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || end != text.data() + text.size())
        throw Error(Errc::ParseError, "not a decimal number: '" + std::string(text) + "'");
    return value;
}

/// Accepts decimal strings (the canonical form) as well as plain JSON numbers.
inline double decimal_from_json(const json& j) {
    if (j.is_string()) return parse_decimal(j.get<std::string>());
    if (j.is_number()) return j.get<double>();
    throw Error(Errc::ParseError, "expected a decimal string, got " + j.dump());
}

/// Stable text form for hashing and persisting: sorted keys, two-space indent, trailing newline.
inline std::string canonical_dump(const json& j) { return j.dump(2) + "\n"; }

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::NotFound, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_text(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::NotFound, "cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
}

inline json parse_json(std::string_view text, std::string_view what = "document") {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::ParseError, std::string(what) + ": " + e.what());
    }
}

inline json read_json(const std::filesystem::path& path) { return parse_json(read_text(path), path.string()); }

inline std::string sha256_hex(std::string_view data) {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
        throw Error(Errc::InvalidParams, "sha256 failed");
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(2 * len);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

/// splitmix64 finalizer; used to derive independent per-episode / per-session seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace hilsynth

#endif // HILSYNTH_IO_HPP
