#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "pudet/errors.hpp"

namespace pudet {

// 17 significant digits: enough to round-trip any double exactly.
inline std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// FNV-1a over the canonical text of a config; used to stamp result files so
// every row is traceable to the exact configuration that produced it.
inline std::uint64_t content_hash(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline double parse_real(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0')
        throw ConfigError("not a real number: '" + s + "'");
    return v;
}

inline long long parse_int(const std::string& s) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0')
        throw ConfigError("not an integer: '" + s + "'");
    return v;
}

namespace detail {
inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}
}  // namespace detail

// Flat key=value configuration, '#' starts a comment line. Insertion order is
// preserved so emitted files are stable.
class KeyValues {
public:
    static KeyValues parse(std::istream& is) {
        KeyValues kv;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty() || t[0] == '#') continue;
            const std::size_t eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) +
                                  " is not key=value: '" + t + "'");
            kv.set(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
        }
        return kv;
    }

    static KeyValues parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("cannot open config file: " + path);
        return parse(is);
    }

    void set(const std::string& key, const std::string& value) {
        for (auto& item : items_)
            if (item.first == key) {
                item.second = value;
                return;
            }
        items_.emplace_back(key, value);
    }

    void set_real(const std::string& key, double v) { set(key, format_real(v)); }
    void set_int(const std::string& key, long long v) { set(key, std::to_string(v)); }
    void set_u64(const std::string& key, unsigned long long v) { set(key, std::to_string(v)); }

    void set_real_list(const std::string& key, const std::vector<double>& vs) {
        std::string out;
        for (std::size_t i = 0; i < vs.size(); ++i) {
            if (i) out += ",";
            out += format_real(vs[i]);
        }
        set(key, out);
    }

    bool has(const std::string& key) const { return find(key) != nullptr; }

    std::optional<std::string> get(const std::string& key) const {
        const std::string* v = find(key);
        return v ? std::optional<std::string>(*v) : std::nullopt;
    }

    std::string require(const std::string& key) const {
        const std::string* v = find(key);
        if (!v) throw ConfigError("missing required config key: " + key);
        return *v;
    }

    double get_real(const std::string& key, double fallback) const {
        const std::string* v = find(key);
        return v ? parse_real(*v) : fallback;
    }

    long long get_int(const std::string& key, long long fallback) const {
        const std::string* v = find(key);
        return v ? parse_int(*v) : fallback;
    }

    unsigned long long get_u64(const std::string& key, unsigned long long fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        char* end = nullptr;
        const unsigned long long r = std::strtoull(v->c_str(), &end, 10);
        if (end == v->c_str() || *end != '\0')
            throw ConfigError("not an unsigned integer: '" + *v + "'");
        return r;
    }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        const std::string* v = find(key);
        return v ? *v : fallback;
    }

    std::vector<double> get_real_list(const std::string& key,
                                      const std::vector<double>& fallback) const {
        const std::string* v = find(key);
        if (!v) return fallback;
        std::vector<double> out;
        std::stringstream ss(*v);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const std::string t = detail::trim(part);
            if (!t.empty()) out.push_back(parse_real(t));
        }
        if (out.empty()) throw ConfigError("empty list for key: " + key);
        return out;
    }

    const std::vector<std::pair<std::string, std::string>>& items() const { return items_; }

    void write(std::ostream& os) const {
        for (const auto& [key, value] : items_) os << key << "=" << value << "\n";
    }

private:
    const std::string* find(const std::string& key) const {
        for (const auto& item : items_)
            if (item.first == key) return &item.second;
        return nullptr;
    }

    std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace pudet
