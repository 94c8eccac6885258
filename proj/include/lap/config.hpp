/// @file config.hpp Flat key-value run configuration.
///
///     # comment
///     [section]
///     key = value
///
/// Keys are addressed as "section.key". Values are strings, numbers or
/// whitespace-separated number lists. Unknown sections or keys, duplicates
/// and malformed lines are errors that carry the line number.

#pragma once

#include "types.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace lap {

class ConfigError : public Error {
public:
    ConfigError(const std::string& source, int line, const std::string& msg)
        : Error(source + (line > 0 ? ":" + std::to_string(line) : "") + ": " + msg), line_(line) {}
    int line() const { return line_; }

private:
    int line_;
};

/// Keys a config may contain, by section.
inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema{
        {"model", {"key", "hidden", "sigma", "drift", "offset", "sigma_x", "b", "a", "lambda", "mu"}},
        {"run", {"horizon", "level", "seed", "z0"}},
        {"data", {"observations", "events"}},
        {"prior", {"kind", "mean", "variance"}},
        {"solve", {"starts", "tol", "force_multiple"}},
        {"check", {"levels"}},
    };
    return schema;
}

class Config {
public:
    struct Entry {
        std::string value;
        int line = 0;
    };

    Config() = default;

    static Config parse(std::istream& in, const std::string& source = "<config>") {
        Config c;
        c.source_ = source;
        std::string raw, section;
        int line = 0;
        while (std::getline(in, raw)) {
            ++line;
            const auto hash = raw.find('#');
            std::string s = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
            if (s.empty()) continue;
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError(source, line, "unterminated section header");
                section = trim(s.substr(1, s.size() - 2));
                if (!config_schema().count(section)) throw ConfigError(source, line, "unknown section [" + section + "]");
                continue;
            }
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(source, line, "expected 'key = value'");
            if (section.empty()) throw ConfigError(source, line, "key outside of any section");
            const std::string key = trim(s.substr(0, eq)), value = trim(s.substr(eq + 1));
            if (key.empty()) throw ConfigError(source, line, "empty key");
            if (!config_schema().at(section).count(key))
                throw ConfigError(source, line, "unknown key '" + key + "' in [" + section + "]");
            const std::string full = section + "." + key;
            if (c.entries_.count(full)) throw ConfigError(source, line, "duplicate key '" + full + "'");
            c.entries_[full] = {value, line};
        }
        return c;
    }

    static Config load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError(path, 0, "cannot open config file");
        return parse(in, path);
    }

    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string str(const std::string& key, const std::string& fallback = "") const {
        const auto it = entries_.find(key);
        return it == entries_.end() ? fallback : it->second.value;
    }

    double num(const std::string& key, double fallback) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return fallback;
        const auto v = numbers(it->first);
        if (v.size() != 1) throw ConfigError(source_, it->second.line, "'" + key + "' must be a single number");
        return v.front();
    }

    int integer(const std::string& key, int fallback) const {
        const double v = num(key, fallback);
        if (v != std::floor(v)) throw ConfigError(source_, line(key), "'" + key + "' must be an integer");
        return static_cast<int>(v);
    }

    std::vector<double> numbers(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) return {};
        std::istringstream ss(it->second.value);
        std::vector<double> out;
        std::string tok;
        while (ss >> tok) {
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size()) throw ConfigError(source_, it->second.line, "'" + tok + "' is not a number");
            out.push_back(v);
        }
        return out;
    }

    /// Error for a semantically invalid value, pointing at its line.
    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        throw ConfigError(source_, line(key), msg);
    }

    int line(const std::string& key) const {
        const auto it = entries_.find(key);
        return it == entries_.end() ? 0 : it->second.line;
    }

    const std::string& source() const { return source_; }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }

    std::string source_ = "<config>";
    std::map<std::string, Entry> entries_;
};

} // namespace lap
