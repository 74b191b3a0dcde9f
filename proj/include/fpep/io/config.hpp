#pragma once

// Flat key-value configuration. A config document is either a JSON object of
// scalars (or a full experiment record, whose "config" member is used) or a
// text file of `key = value` lines with `#` comments. Keys are matched after
// mapping '-' to '_', so flag spellings (`out-dir`) and snake_case agree.
//
// Readers declare every key they accept together with its default; any key
// left unread is reported as a ConfigError naming it.

#include <cerrno>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "fpep/error.hpp"

namespace fpep::io {

inline std::string normalize_key(std::string key) {
    for (char& c : key)
        if (c == '-') c = '_';
    return key;
}

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

/// Interprets a bare text value: integer, real, boolean, JSON array, or string.
inline nlohmann::json parse_scalar_text(const std::string& raw) {
    const std::string v = trim(raw);
    if (!v.empty() && v.front() == '[') {
        auto arr = nlohmann::json::parse(v, nullptr, false);
        if (arr.is_discarded()) fail(ErrorCode::ConfigError, "malformed list '" + v + "'");
        return arr;
    }
    if (v == "true") return true;
    if (v == "false") return false;
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\''))) {
        return v.substr(1, v.size() - 2);
    }
    std::int64_t i = 0;
    auto [pi, ei] = std::from_chars(v.data(), v.data() + v.size(), i);
    if (ei == std::errc() && pi == v.data() + v.size() && !v.empty()) return i;
    double d = 0.0;
    auto [pd, ed] = std::from_chars(v.data(), v.data() + v.size(), d);
    if (ed == std::errc() && pd == v.data() + v.size() && !v.empty()) return d;
    return v;
}

using ConfigMap = std::map<std::string, nlohmann::json>;

inline ConfigMap config_from_json(const nlohmann::json& j) {
    const nlohmann::json* obj = &j;
    if (j.is_object() && j.contains("config") && j.contains("command") && j["config"].is_object()) obj = &j["config"];
    if (!obj->is_object()) fail(ErrorCode::ConfigError, "config document must be a JSON object");
    ConfigMap out;
    for (auto it = obj->begin(); it != obj->end(); ++it) {
        if (it.value().is_object()) fail(ErrorCode::ConfigError, "config key '" + it.key() + "' must be a scalar or list");
        out[normalize_key(it.key())] = it.value();
    }
    return out;
}

inline ConfigMap parse_config_text(const std::string& text) {
    const std::string body = trim(text);
    if (!body.empty() && body.front() == '{') {
        try {
            return config_from_json(nlohmann::json::parse(body));
        } catch (const nlohmann::json::parse_error& e) {
            fail(ErrorCode::ConfigError, std::string("invalid JSON config: ") + e.what());
        }
    }
    ConfigMap out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            fail(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
        }
        const std::string key = normalize_key(trim(line.substr(0, eq)));
        if (key.empty()) fail(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": empty key");
        out[key] = parse_scalar_text(line.substr(eq + 1));
    }
    return out;
}

inline ConfigMap load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) fail(ErrorCode::ConfigError, "cannot open config file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

/// Typed access with defaults. Every value read (or defaulted) is recorded in
/// `resolved()`, which is the config embedded in experiment records.
class ConfigReader {
public:
    explicit ConfigReader(ConfigMap values) : values_(std::move(values)) {}

    double real(const std::string& key, double def) {
        const auto v = fetch(key, def);
        if (!v.is_number()) bad(key, "a number");
        return record(key, v.get<double>());
    }

    std::int64_t integer(const std::string& key, std::int64_t def) {
        const auto v = fetch(key, def);
        if (v.is_number_integer()) return record(key, v.get<std::int64_t>());
        if (v.is_number_float()) {
            const double d = v.get<double>();
            if (d == static_cast<double>(static_cast<std::int64_t>(d))) return record(key, static_cast<std::int64_t>(d));
        }
        bad(key, "an integer");
    }

    std::uint64_t seed(const std::string& key, std::uint64_t def) {
        const auto v = fetch(key, def);
        if (v.is_number_unsigned()) return record(key, v.get<std::uint64_t>());
        if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return record(key, static_cast<std::uint64_t>(v.get<std::int64_t>()));
        bad(key, "a nonnegative integer");
    }

    bool boolean(const std::string& key, bool def) {
        const auto v = fetch(key, def);
        if (v.is_boolean()) return record(key, v.get<bool>());
        if (v.is_number_integer() && (v.get<std::int64_t>() == 0 || v.get<std::int64_t>() == 1)) {
            return record(key, v.get<std::int64_t>() == 1);
        }
        bad(key, "true or false");
    }

    std::string string(const std::string& key, const std::string& def) {
        const auto v = fetch(key, def);
        if (v.is_string()) return record(key, v.get<std::string>());
        if (v.is_number()) return record(key, v.dump());
        bad(key, "a string");
    }

    std::string choice(const std::string& key, const std::string& def, const std::vector<std::string>& allowed) {
        const std::string s = string(key, def);
        for (const auto& a : allowed)
            if (a == s) return s;
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        fail(ErrorCode::ConfigError, "config key '" + key + "' must be one of {" + list + "}, got '" + s + "'");
    }

    /// A list of reals, given as a JSON array or a comma-separated string.
    std::vector<double> real_list(const std::string& key, const std::vector<double>& def) {
        const auto v = fetch(key, nlohmann::json(def));
        std::vector<double> out;
        if (v.is_array()) {
            for (const auto& e : v) {
                if (!e.is_number()) bad(key, "a list of numbers");
                out.push_back(e.get<double>());
            }
        } else if (v.is_number()) {
            out.push_back(v.get<double>());
        } else if (v.is_string()) {
            std::stringstream ss(v.get<std::string>());
            std::string item;
            while (std::getline(ss, item, ',')) {
                const auto parsed = parse_scalar_text(item);
                if (!parsed.is_number()) bad(key, "a comma-separated list of numbers");
                out.push_back(parsed.get<double>());
            }
        } else {
            bad(key, "a list of numbers");
        }
        resolved_[key] = out;
        return out;
    }

    std::vector<std::int64_t> integer_list(const std::string& key, const std::vector<std::int64_t>& def) {
        std::vector<double> defs(def.begin(), def.end());
        const auto reals = real_list(key, defs);
        std::vector<std::int64_t> out;
        for (double r : reals) {
            if (r != static_cast<double>(static_cast<std::int64_t>(r))) bad(key, "a list of integers");
            out.push_back(static_cast<std::int64_t>(r));
        }
        resolved_[key] = out;
        return out;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    /// ConfigError naming the first key that no reader asked for.
    void reject_unknown() const {
        for (const auto& [k, v] : values_) {
            if (!resolved_.contains(k)) fail(ErrorCode::ConfigError, "unknown config key '" + k + "'");
        }
    }

    const nlohmann::json& resolved() const { return resolved_; }

private:
    nlohmann::json fetch(const std::string& key, const nlohmann::json& def) const {
        const auto it = values_.find(key);
        return it == values_.end() ? def : it->second;
    }

    template <class T>
    T record(const std::string& key, T value) {
        resolved_[key] = value;
        return value;
    }

    [[noreturn]] void bad(const std::string& key, const std::string& what) const {
        fail(ErrorCode::ConfigError, "config key '" + key + "' must be " + what);
    }

    ConfigMap values_;
    nlohmann::json resolved_ = nlohmann::json::object();
};

}  // namespace fpep::io
