#pragma once

// Flat key=value configuration with [section] headers. Keys are addressed as
// "section.key". Every lookup records the resolved value so the effective
// configuration can be echoed next to the outputs; keys nobody asked for are
// rejected by finish().

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tgir/error.hpp"
#include "tgir/uvfield.hpp"

namespace tgir {

class ConfigError : public InvalidArgument {
public:
    using InvalidArgument::InvalidArgument;
};

class Config {
public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<config>") {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const std::string where = origin + ":" + std::to_string(lineno);
            if (line.front() == '[') {
                if (line.back() != ']') throw ConfigError(where + ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) throw ConfigError(where + ": empty section name");
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ConfigError(where + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            if (key.empty()) throw ConfigError(where + ": empty key");
            const std::string full = section.empty() ? key : section + "." + key;
            if (cfg.values_.count(full)) throw ConfigError(where + ": duplicate key " + full);
            cfg.values_[full] = trim(line.substr(eq + 1));
        }
        return cfg;
    }

    static Config load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw IoError("config: cannot open " + path.string());
        std::stringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path.string());
    }

    /// Command-line overrides win over file values.
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) {
        const auto it = values_.find(key);
        const std::string v = it == values_.end() ? def : it->second;
        resolved_[key] = v;
        return v;
    }

    template <typename T>
    T get(const std::string& key, T def) {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            resolved_[key] = format(def);
            return def;
        }
        T out = convert<T>(key, it->second);
        resolved_[key] = it->second;
        return out;
    }

    /// Keys read so far.
    std::set<std::string> looked_up() const {
        std::set<std::string> out;
        for (const auto& [k, v] : resolved_) out.insert(k);
        return out;
    }

    /// Throws naming every key that was supplied but never read, unless it is in `elsewhere`.
    void finish(const std::set<std::string>& elsewhere = {}) const {
        std::vector<std::string> unknown;
        for (const auto& [k, v] : values_)
            if (!resolved_.count(k) && !elsewhere.count(k)) unknown.push_back(k);
        if (unknown.empty()) return;
        std::string msg = "unknown config key";
        msg += unknown.size() > 1 ? "s: " : ": ";
        for (std::size_t i = 0; i < unknown.size(); ++i) msg += (i ? ", " : "") + unknown[i];
        throw ConfigError(msg);
    }

    /// Effective configuration (every key that was looked up) in config syntax.
    std::string echo() const {
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
        for (const auto& [k, v] : resolved_) {
            const auto dot = k.find('.');
            if (dot == std::string::npos)
                sections[""].emplace_back(k, v);
            else
                sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
        }
        std::string out;
        for (const auto& [name, entries] : sections) {
            if (!name.empty()) out += "[" + name + "]\n";
            for (const auto& [k, v] : entries) out += k + " = " + v + "\n";
        }
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    template <typename T>
    static std::string format(const T& v) {
        if constexpr (std::is_same_v<T, bool>) {
            return v ? "true" : "false";
        } else if constexpr (std::is_same_v<T, std::string>) {
            return v;
        } else if constexpr (std::is_floating_point_v<T>) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        } else {
            return std::to_string(v);
        }
    }

    template <typename T>
    static T convert(const std::string& key, const std::string& s) {
        if constexpr (std::is_same_v<T, bool>) {
            if (s == "true" || s == "1" || s == "yes") return true;
            if (s == "false" || s == "0" || s == "no") return false;
            throw ConfigError("config key " + key + ": expected a boolean, got '" + s + "'");
        } else if constexpr (std::is_same_v<T, std::string>) {
            return s;
        } else {
            T out{};
            const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
            if (ec != std::errc() || p != s.data() + s.size())
                throw ConfigError("config key " + key + ": cannot parse '" + s + "'");
            return out;
        }
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::string> resolved_;
};

}  // namespace tgir
