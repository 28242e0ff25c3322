#pragma once

#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "medctx/errors.hpp"

namespace medctx {

// Line-oriented run configuration: "section.key = value", '#' comments,
// blank lines ignored. Command-line overrides use the same "key=value" form
// and take precedence over file values. The fully resolved map is echoed
// into every run directory.

class RunConfig {
public:
    RunConfig() = default;

    static RunConfig from_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open config file: " + path);
        RunConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string trimmed = strip_comment(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
            cfg.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
        return cfg;
    }

    void set(const std::string& key, const std::string& value) {
        validate_key(key);
        kv_[key] = value;
    }

    /// Apply "key=value" override strings (e.g. from --set flags).
    void apply_overrides(const std::vector<std::string>& overrides) {
        for (const auto& o : overrides) {
            const auto eq = o.find('=');
            if (eq == std::string::npos)
                throw ConfigError("override must be key=value, got: " + o);
            set(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
        }
    }

    bool has(const std::string& key) const { return kv_.count(key) != 0; }

    std::string get_str(const std::string& key, const std::string& def) const {
        auto it = kv_.find(key);
        return it == kv_.end() ? def : it->second;
    }

    int64_t get_i64(const std::string& key, int64_t def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        try {
            size_t pos = 0;
            int64_t v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected integer, got '" + it->second + "'");
        }
    }

    double get_f64(const std::string& key, double def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        try {
            size_t pos = 0;
            double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected real number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError(key + ": expected true/false, got '" + it->second + "'");
    }

    /// Whitespace- or comma-separated integer list.
    std::vector<int64_t> get_i64_list(const std::string& key, std::vector<int64_t> def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        std::vector<int64_t> out;
        std::string item;
        std::stringstream ss(it->second);
        while (ss >> item) {
            for (auto& c : item)
                if (c == ',') c = ' ';
            std::stringstream inner(item);
            std::string tok;
            while (inner >> tok) {
                try {
                    out.push_back(std::stoll(tok));
                } catch (const std::exception&) {
                    throw ConfigError(key + ": expected integer list, got '" + it->second + "'");
                }
            }
        }
        if (out.empty()) throw ConfigError(key + ": empty list");
        return out;
    }

    std::vector<double> get_f64_list(const std::string& key, std::vector<double> def) const {
        auto it = kv_.find(key);
        if (it == kv_.end()) return def;
        std::string s = it->second;
        for (auto& c : s)
            if (c == ',') c = ' ';
        std::vector<double> out;
        std::stringstream ss(s);
        std::string tok;
        while (ss >> tok) {
            try {
                out.push_back(std::stod(tok));
            } catch (const std::exception&) {
                throw ConfigError(key + ": expected real list, got '" + it->second + "'");
            }
        }
        if (out.empty()) throw ConfigError(key + ": empty list");
        return out;
    }

    /// Echo the fully resolved configuration, sorted by key.
    void write_resolved(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot write resolved config: " + path);
        for (const auto& [k, v] : kv_) os << k << " = " << v << "\n";
    }

    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
    }

    static std::string strip_comment(const std::string& s) {
        const auto h = s.find('#');
        return trim(h == std::string::npos ? s : s.substr(0, h));
    }

    static void validate_key(const std::string& key) {
        const auto dot = key.find('.');
        if (dot == std::string::npos || dot == 0 || dot + 1 == key.size())
            throw ConfigError("config key must be section.key, got '" + key + "'");
        const std::string section = key.substr(0, dot);
        for (const char* known : {"data", "net", "loss", "train", "metric", "run"})
            if (section == known) return;
        throw ConfigError("unknown config section '" + section + "' in key '" + key + "'");
    }

    std::map<std::string, std::string> kv_;
};

} // namespace medctx
