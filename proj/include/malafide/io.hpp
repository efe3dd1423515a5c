#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>

#include <json.hpp>

#include "malafide/error.hpp"
#include "malafide/filter.hpp"

namespace malafide {

inline constexpr int kFormatVersion = 1;

/// 17 significant digits: enough for a bit-exact double round trip.
inline std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

inline std::string format_array(std::span<const double> values) {
    std::string out = "[";
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i)
            out += ", ";
        out += format_double(values[i]);
    }
    out += "]";
    return out;
}

inline std::string json_quote(const std::string& s) { return nlohmann::json(s).dump(); }

/// Writes through a sibling temp file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec)
            throw ValidationError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    }
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out)
            throw ValidationError("cannot write " + tmp.string());
        out << contents;
        if (!out)
            throw ValidationError("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec)
        throw ValidationError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw ValidationError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path.string() + ": invalid JSON: " + e.what());
    }
}

inline std::string filter_to_json(const MalafideFilter& filter) {
    std::string out = "{\n";
    out += "  \"format_version\": " + std::to_string(kFormatVersion) + ",\n";
    out += "  \"length\": " + std::to_string(filter.length()) + ",\n";
    out += "  \"sample_rate\": " + std::to_string(filter.sample_rate()) + ",\n";
    out += "  \"attack_id\": " + json_quote(filter.attack_id()) + ",\n";
    out += "  \"scorer_id\": " + json_quote(filter.scorer_id()) + ",\n";
    out += "  \"coefficients\": " + format_array(filter.coefficients()) + "\n";
    out += "}\n";
    return out;
}

inline MalafideFilter filter_from_json(const nlohmann::json& j) {
    try {
        detail::require(j.at("format_version").get<int>() == kFormatVersion, "unsupported filter format_version");
        auto coefficients = j.at("coefficients").get<std::vector<double>>();
        const int length = j.at("length").get<int>();
        detail::require(static_cast<int>(coefficients.size()) == length,
                        "filter length field (" + std::to_string(length) + ") does not match coefficient count (" +
                            std::to_string(coefficients.size()) + ")");
        return MalafideFilter(std::move(coefficients), j.at("sample_rate").get<int>(),
                              j.at("attack_id").get<std::string>(), j.at("scorer_id").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed filter file: ") + e.what());
    }
}

inline void save_filter(const std::filesystem::path& path, const MalafideFilter& filter) {
    write_file_atomic(path, filter_to_json(filter));
}

inline MalafideFilter load_filter(const std::filesystem::path& path) {
    try {
        return filter_from_json(read_json(path));
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

} // namespace malafide
