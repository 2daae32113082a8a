#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace msfpca {

// Minimal TOML-subset config: [section] headers, key = value lines with
// integers, reals, booleans, quoted strings, and (nested) arrays; '#'
// comments. Keys are addressed as "section.key".
class ConfigValue {
public:
    enum class Kind { Int, Real, Bool, String, Array };

    Kind kind = Kind::Int;
    std::int64_t int_value = 0;
    double real_value = 0.0;
    bool bool_value = false;
    std::string string_value;
    std::vector<ConfigValue> array;

    std::int64_t as_int() const;
    double as_real() const;
    bool as_bool() const;
    const std::string& as_string() const;
    std::vector<int> as_int_list() const;
    std::vector<std::vector<int>> as_int_lists() const;
};

class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    const ConfigValue& get(const std::string& key) const;

    std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
    double get_real(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;

private:
    std::map<std::string, ConfigValue> values_;
};

}  // namespace msfpca
