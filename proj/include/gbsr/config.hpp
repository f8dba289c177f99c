#ifndef GBSR_CONFIG_HPP
#define GBSR_CONFIG_HPP

#include "gbsr/common.hpp"
#include "gbsr/io.hpp"

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace gbsr::config {

/// Ordered key=value pairs; later assignments override earlier ones.
using KeyValues = std::map<std::string, std::string>;

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

/// Parses "key=value" lines. Blank lines and lines starting with '#' are ignored.
inline KeyValues parse(std::string_view text, std::string_view origin = "config") {
    KeyValues out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) {
            end = text.size();
        }
        ++line_no;
        const std::string_view line = trim(text.substr(pos, end - pos));
        pos = end + 1;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key=value");
        }
        out[std::string(trim(line.substr(0, eq)))] = std::string(trim(line.substr(eq + 1)));
    }
    return out;
}

inline KeyValues parse_file(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw ConfigError("config file not found: " + path.string());
    }
    return parse(io::read_file(path), path.string());
}

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw ConfigError("invalid number for '" + key + "': '" + v + "'");
    }
    return out;
}

inline std::int64_t to_int(const std::string& key, const std::string& v) {
    std::int64_t out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc{} || r.ptr != v.data() + v.size()) {
        throw ConfigError("invalid integer for '" + key + "': '" + v + "'");
    }
    return out;
}

inline std::uint64_t to_uint(const std::string& key, const std::string& v) {
    const std::int64_t i = to_int(key, v);
    if (i < 0) {
        throw ConfigError("'" + key + "' must be non-negative");
    }
    return static_cast<std::uint64_t>(i);
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("invalid boolean for '" + key + "': '" + v + "'");
}

/// Comma-separated integers, e.g. "0,1,2".
inline std::vector<std::int64_t> to_int_list(const std::string& key, const std::string& v) {
    std::vector<std::int64_t> out;
    std::size_t pos = 0;
    while (pos <= v.size()) {
        std::size_t end = v.find(',', pos);
        if (end == std::string::npos) {
            end = v.size();
        }
        const std::string item(trim(std::string_view(v).substr(pos, end - pos)));
        if (!item.empty()) {
            out.push_back(to_int(key, item));
        }
        pos = end + 1;
    }
    if (out.empty()) {
        throw ConfigError("empty list for '" + key + "'");
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
    std::string out;
    for (std::size_t k = 0; k < xs.size(); ++k) {
        if (k) {
            out += ',';
        }
        out += std::to_string(xs[k]);
    }
    return out;
}

inline std::string to_text(const std::vector<std::pair<std::string, std::string>>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) {
        out += k + '=' + v + '\n';
    }
    return out;
}

} // namespace gbsr::config

#endif
