#ifndef PLUMESHINE_TEXT_HPP
#define PLUMESHINE_TEXT_HPP

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "plumeshine/error.hpp"

namespace plumeshine::text {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

inline std::string_view strip_comment(std::string_view s) {
    const auto hash = s.find('#');
    return hash == std::string_view::npos ? s : s.substr(0, hash);
}

inline std::vector<std::string_view> split_ws(std::string_view s) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
        const std::size_t start = i;
        while (i < s.size() && s[i] != ' ' && s[i] != '\t') ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

inline std::optional<std::uint64_t> parse_u64(std::string_view s) {
    s = trim(s);
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
    return value;
}

/// Shortest decimal string that parses back to exactly `v`.
inline std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

/// Scientific notation with `digits` significant digits.
inline std::string format_sci(double v, int digits = 9) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*e", digits - 1, v);
    return buf;
}

inline std::string format_fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Ordered `key: value` document. This is the format of config files and of
/// the metadata sidecars written next to every table, model and report.
class KeyValue {
  public:
    KeyValue() = default;

    static KeyValue parse(std::istream& in) {
        KeyValue kv;
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto body = trim(strip_comment(line));
            if (body.empty()) continue;
            const auto colon = body.find(':');
            if (colon == std::string_view::npos) {
                throw ParseError("expected 'key: value'", lineno);
            }
            const auto key = trim(body.substr(0, colon));
            if (key.empty()) throw ParseError("empty key", lineno);
            kv.set(std::string(key), std::string(trim(body.substr(colon + 1))));
        }
        return kv;
    }

    static KeyValue parse(const std::string& textual) {
        std::istringstream in(textual);
        return parse(in);
    }

    void set(const std::string& key, std::string value) {
        for (auto& [k, v] : entries_) {
            if (k == key) {
                v = std::move(value);
                return;
            }
        }
        entries_.emplace_back(key, std::move(value));
    }

    bool has(const std::string& key) const { return find(key) != nullptr; }

    std::string get(const std::string& key) const {
        if (const auto* v = find(key)) return *v;
        throw ValidationError("missing key '" + key + "'");
    }

    std::string get_or(const std::string& key, const std::string& fallback) const {
        if (const auto* v = find(key)) return *v;
        return fallback;
    }

    double get_double(const std::string& key) const {
        const auto raw = get(key);
        if (const auto v = parse_double(raw)) return *v;
        throw ValidationError("key '" + key + "' is not a number: " + raw);
    }

    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
        if (!has(key)) return fallback;
        const auto raw = get(key);
        if (const auto v = parse_u64(raw)) return *v;
        throw ValidationError("key '" + key + "' is not an unsigned integer: " + raw);
    }

    /// Comma-separated list value.
    std::vector<std::string> get_list(const std::string& key) const {
        std::vector<std::string> out;
        const auto raw = get(key);
        std::string_view rest = raw;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const auto item = trim(rest.substr(0, comma));
            if (!item.empty()) out.emplace_back(item);
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        return out;
    }

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

    void write(std::ostream& out) const {
        for (const auto& [k, v] : entries_) out << k << ": " << v << '\n';
    }

    std::string str() const {
        std::ostringstream out;
        write(out);
        return out.str();
    }

  private:
    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : entries_) {
            if (k == key) return &v;
        }
        return nullptr;
    }

    std::vector<std::pair<std::string, std::string>> entries_;
};

}  // namespace plumeshine::text

#endif
