#ifndef REFEDIT_CONFIG_HPP
#define REFEDIT_CONFIG_HPP

// Plain-text run configuration: `[section]` headers, `key = value` lines,
// `#`/`;` comments. Sections and keys are validated against the schema below
// so a typo fails loudly instead of silently using a default. Path-valued
// keys resolve relative to the config file's directory, which makes a config
// a self-contained record of a run; command-line flags override config
// values.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

namespace refedit {

namespace detail {

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    const size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) {
        return "";
    }
    return s.substr(a, s.find_last_not_of(ws) - a + 1);
}

inline const std::map<std::string, std::set<std::string>>& config_schema() {
    static const std::map<std::string, std::set<std::string>> schema = {
        {"forge",
         {"out", "count", "seed", "pp_drop_percentile", "er_drop_percentile", "txt_floor",
          "flip_prob", "max_rotate_deg", "max_scale_dev", "max_translate"}},
        {"train",
         {"phase", "steps", "batch", "lr", "p_text", "p_image", "p_both", "quality_fraction",
          "lambda", "seed", "wt_mode", "checkpoint_every", "manifest", "ckpt_in", "ckpt_out",
          "loss_log"}},
        {"edit",
         {"ckpt", "image", "instruction", "reference", "reference_text", "lambda", "steps",
          "text_scale", "image_scale", "seed", "out"}},
        {"eval", {"manifest", "results", "out"}},
    };
    return schema;
}

inline const std::set<std::string>& path_keys() {
    static const std::set<std::string> keys = {"out",     "manifest", "ckpt_in", "ckpt_out",
                                               "loss_log", "ckpt",    "image",   "reference",
                                               "results"};
    return keys;
}

}  // namespace detail

struct RunConfig {
    std::map<std::string, std::map<std::string, std::string>> sections;
    std::filesystem::path base = ".";  // directory the config file lives in

    static RunConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) {
            throw std::runtime_error("cannot read config " + path);
        }
        RunConfig cfg;
        cfg.base = std::filesystem::path(path).parent_path();
        if (cfg.base.empty()) {
            cfg.base = ".";
        }
        const auto& schema = detail::config_schema();
        std::string line, section;
        size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string at = path + ":" + std::to_string(lineno);
            std::string s = detail::trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') {
                continue;
            }
            if (s.front() == '[') {
                if (s.back() != ']') {
                    throw std::invalid_argument(at + ": unterminated section header");
                }
                section = detail::trim(s.substr(1, s.size() - 2));
                if (!schema.count(section)) {
                    throw std::invalid_argument(at + ": unknown section [" + section + "]");
                }
                continue;
            }
            const size_t eq = s.find('=');
            if (eq == std::string::npos) {
                throw std::invalid_argument(at + ": expected key = value");
            }
            if (section.empty()) {
                throw std::invalid_argument(at + ": key outside any section");
            }
            const std::string key = detail::trim(s.substr(0, eq));
            const std::string value = detail::trim(s.substr(eq + 1));
            if (!schema.at(section).count(key)) {
                throw std::invalid_argument(at + ": unknown key '" + key + "' in [" + section +
                                            "]");
            }
            if (cfg.sections[section].count(key)) {
                throw std::invalid_argument(at + ": duplicate key '" + key + "'");
            }
            cfg.sections[section][key] = value;
        }
        return cfg;
    }

    bool has(const std::string& section, const std::string& key) const {
        auto s = sections.find(section);
        return s != sections.end() && s->second.count(key) > 0;
    }

    std::string get(const std::string& section, const std::string& key,
                    const std::string& fallback = "") const {
        auto s = sections.find(section);
        if (s == sections.end()) {
            return fallback;
        }
        auto k = s->second.find(key);
        return k == s->second.end() ? fallback : k->second;
    }

    // path values are relative to the config file, not the process cwd
    std::string get_path(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        if (v.empty()) {
            return "";
        }
        std::filesystem::path p(v);
        return p.is_absolute() ? p.string() : (base / p).string();
    }

    double get_double(const std::string& section, const std::string& key, double fallback) const {
        if (!has(section, key)) {
            return fallback;
        }
        const std::string v = get(section, key);
        try {
            size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) {
                throw std::invalid_argument(v);
            }
            return d;
        } catch (const std::exception&) {
            throw std::invalid_argument("bad value for " + section + "." + key + ": '" + v + "'");
        }
    }

    uint64_t get_u64(const std::string& section, const std::string& key, uint64_t fallback) const {
        if (!has(section, key)) {
            return fallback;
        }
        const std::string v = get(section, key);
        try {
            size_t used = 0;
            const unsigned long long u = std::stoull(v, &used);
            if (used != v.size()) {
                throw std::invalid_argument(v);
            }
            return u;
        } catch (const std::exception&) {
            throw std::invalid_argument("bad value for " + section + "." + key + ": '" + v + "'");
        }
    }
};

}  // namespace refedit

#endif  // REFEDIT_CONFIG_HPP
