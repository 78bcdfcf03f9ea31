#pragma once

// Flat `key = value` configuration text. Lines starting with '#' are
// comments; keys are case sensitive; later assignments override earlier ones.

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pconv/core/error.hpp"

namespace pconv {

namespace detail {
    inline std::string trim(std::string_view s)
    {
        const auto first = s.find_first_not_of(" \t\r");
        if (first == std::string_view::npos) {
            return {};
        }
        const auto last = s.find_last_not_of(" \t\r");
        return std::string(s.substr(first, last - first + 1));
    }
} // namespace detail

class KeyValueConfig {
public:
    static KeyValueConfig parse(std::istream& is)
    {
        KeyValueConfig cfg;
        std::string line;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string t = detail::trim(line);
            if (t.empty() || t.front() == '#') {
                continue;
            }
            const auto eq = t.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
            }
            const std::string key = detail::trim(std::string_view(t).substr(0, eq));
            if (key.empty()) {
                throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
            }
            cfg.set(key, detail::trim(std::string_view(t).substr(eq + 1)));
        }
        return cfg;
    }

    static KeyValueConfig parse_text(const std::string& text)
    {
        std::istringstream is(text);
        return parse(is);
    }

    static KeyValueConfig load(const std::filesystem::path& path)
    {
        std::ifstream is(path);
        if (!is) {
            throw LoadError("cannot open config file '" + path.string() + "'");
        }
        return parse(is);
    }

    void set(const std::string& key, std::string value)
    {
        if (!values_.contains(key)) {
            order_.push_back(key);
        }
        values_[key] = std::move(value);
    }

    bool has(const std::string& key) const { return values_.contains(key); }

    std::optional<std::string> find(const std::string& key) const
    {
        auto it = values_.find(key);
        if (it == values_.end()) {
            return std::nullopt;
        }
        return it->second;
    }

    std::string get(const std::string& key) const
    {
        auto v = find(key);
        if (!v) {
            throw ConfigError("missing config key '" + key + "'");
        }
        return *v;
    }

    std::string get_or(const std::string& key, const std::string& fallback) const
    {
        return find(key).value_or(fallback);
    }

    double get_double(const std::string& key, std::optional<double> fallback = std::nullopt) const
    {
        auto v = find(key);
        if (!v) {
            if (fallback) {
                return *fallback;
            }
            throw ConfigError("missing config key '" + key + "'");
        }
        try {
            std::size_t used = 0;
            const double d = std::stod(*v, &used);
            if (used != v->size()) {
                throw std::invalid_argument("trailing characters");
            }
            return d;
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "': '" + *v + "' is not a number");
        }
    }

    long long get_int(const std::string& key, std::optional<long long> fallback = std::nullopt) const
    {
        auto v = find(key);
        if (!v) {
            if (fallback) {
                return *fallback;
            }
            throw ConfigError("missing config key '" + key + "'");
        }
        long long out = 0;
        const auto* end = v->data() + v->size();
        auto [ptr, ec] = std::from_chars(v->data(), end, out);
        if (ec != std::errc() || ptr != end) {
            throw ConfigError("config key '" + key + "': '" + *v + "' is not an integer");
        }
        return out;
    }

    bool get_bool(const std::string& key, std::optional<bool> fallback = std::nullopt) const
    {
        auto v = find(key);
        if (!v) {
            if (fallback) {
                return *fallback;
            }
            throw ConfigError("missing config key '" + key + "'");
        }
        if (*v == "true" || *v == "1" || *v == "yes") {
            return true;
        }
        if (*v == "false" || *v == "0" || *v == "no") {
            return false;
        }
        throw ConfigError("config key '" + key + "': '" + *v + "' is not a boolean");
    }

    /// Keys in first-assignment order.
    const std::vector<std::string>& keys() const noexcept { return order_; }

    std::string to_text() const
    {
        std::ostringstream os;
        for (const auto& k : order_) {
            os << k << " = " << values_.at(k) << '\n';
        }
        return os.str();
    }

private:
    std::map<std::string, std::string> values_;
    std::vector<std::string> order_;
};

inline std::vector<std::string> split_list(const std::string& s, char sep = ',')
{
    std::vector<std::string> out;
    std::string item;
    std::istringstream is(s);
    while (std::getline(is, item, sep)) {
        item = detail::trim(item);
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

} // namespace pconv
