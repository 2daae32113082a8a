#include "msfpca/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

#include "msfpca/errors.hpp"

namespace msfpca {

std::int64_t ConfigValue::as_int() const {
    if (kind != Kind::Int) throw ConfigParse("expected an integer value");
    return int_value;
}

double ConfigValue::as_real() const {
    if (kind == Kind::Int) return static_cast<double>(int_value);
    if (kind != Kind::Real) throw ConfigParse("expected a numeric value");
    return real_value;
}

bool ConfigValue::as_bool() const {
    if (kind != Kind::Bool) throw ConfigParse("expected a boolean value");
    return bool_value;
}

const std::string& ConfigValue::as_string() const {
    if (kind != Kind::String) throw ConfigParse("expected a string value");
    return string_value;
}

std::vector<int> ConfigValue::as_int_list() const {
    if (kind != Kind::Array) throw ConfigParse("expected an array value");
    std::vector<int> out;
    for (const auto& v : array) out.push_back(static_cast<int>(v.as_int()));
    return out;
}

std::vector<std::vector<int>> ConfigValue::as_int_lists() const {
    if (kind != Kind::Array) throw ConfigParse("expected an array of arrays");
    std::vector<std::vector<int>> out;
    for (const auto& v : array) out.push_back(v.as_int_list());
    return out;
}

namespace {

struct Cursor {
    const std::string& text;
    std::size_t pos = 0;
    const std::string& origin;
    int line = 1;

    [[noreturn]] void fail(const std::string& msg) const {
        throw ConfigParse(origin + ":" + std::to_string(line) + ": " + msg);
    }
    bool done() const { return pos >= text.size(); }
    char peek() const { return text[pos]; }
    char take() {
        const char c = text[pos++];
        if (c == '\n') ++line;
        return c;
    }
    void skip_inline_ws() {
        while (!done() && (peek() == ' ' || peek() == '\t')) ++pos;
    }
};

ConfigValue parse_value(Cursor& cur);

ConfigValue parse_array(Cursor& cur) {
    ConfigValue v;
    v.kind = ConfigValue::Kind::Array;
    cur.take();  // '['
    while (true) {
        cur.skip_inline_ws();
        while (!cur.done() && (cur.peek() == '\n' || cur.peek() == '\r')) {
            cur.take();
            cur.skip_inline_ws();
        }
        if (cur.done()) cur.fail("unterminated array");
        if (cur.peek() == ']') {
            cur.take();
            return v;
        }
        v.array.push_back(parse_value(cur));
        cur.skip_inline_ws();
        while (!cur.done() && (cur.peek() == '\n' || cur.peek() == '\r')) {
            cur.take();
            cur.skip_inline_ws();
        }
        if (cur.done()) cur.fail("unterminated array");
        if (cur.peek() == ',') {
            cur.take();
            continue;
        }
        if (cur.peek() == ']') {
            cur.take();
            return v;
        }
        cur.fail("expected ',' or ']' in array");
    }
}

ConfigValue parse_value(Cursor& cur) {
    cur.skip_inline_ws();
    if (cur.done()) cur.fail("expected a value");
    const char c = cur.peek();
    if (c == '[') return parse_array(cur);
    ConfigValue v;
    if (c == '"') {
        cur.take();
        v.kind = ConfigValue::Kind::String;
        while (!cur.done() && cur.peek() != '"') v.string_value.push_back(cur.take());
        if (cur.done()) cur.fail("unterminated string");
        cur.take();
        return v;
    }
    std::string token;
    while (!cur.done() && cur.peek() != ',' && cur.peek() != ']' && cur.peek() != '\n' &&
           cur.peek() != '\r' && cur.peek() != '#')
        token.push_back(cur.take());
    while (!token.empty() && (token.back() == ' ' || token.back() == '\t')) token.pop_back();
    if (token == "true" || token == "false") {
        v.kind = ConfigValue::Kind::Bool;
        v.bool_value = token == "true";
        return v;
    }
    if (token.empty()) cur.fail("empty value");
    try {
        if (token.find_first_of(".eE") == std::string::npos) {
            std::size_t used = 0;
            const std::int64_t iv = std::stoll(token, &used);
            if (used == token.size()) {
                v.kind = ConfigValue::Kind::Int;
                v.int_value = iv;
                return v;
            }
        }
        std::size_t used = 0;
        const double dv = std::stod(token, &used);
        if (used != token.size()) cur.fail("bad numeric value '" + token + "'");
        v.kind = ConfigValue::Kind::Real;
        v.real_value = dv;
        return v;
    } catch (const ConfigParse&) {
        throw;
    } catch (const std::exception&) {
        cur.fail("bad value '" + token + "'");
    }
}

}  // namespace

Config Config::parse(const std::string& text, const std::string& origin) {
    Config cfg;
    Cursor cur{text, 0, origin, 1};
    std::string section;
    while (!cur.done()) {
        cur.skip_inline_ws();
        if (cur.done()) break;
        const char c = cur.peek();
        if (c == '\n' || c == '\r') {
            cur.take();
            continue;
        }
        if (c == '#') {
            while (!cur.done() && cur.peek() != '\n') cur.take();
            continue;
        }
        if (c == '[') {
            cur.take();
            section.clear();
            while (!cur.done() && cur.peek() != ']') section.push_back(cur.take());
            if (cur.done()) cur.fail("unterminated section header");
            cur.take();
            continue;
        }
        std::string key;
        while (!cur.done() && (std::isalnum(static_cast<unsigned char>(cur.peek())) ||
                               cur.peek() == '_' || cur.peek() == '.'))
            key.push_back(cur.take());
        cur.skip_inline_ws();
        if (cur.done() || cur.peek() != '=') cur.fail("expected '=' after key '" + key + "'");
        cur.take();
        ConfigValue value = parse_value(cur);
        // consume trailing whitespace / comment up to end of line
        cur.skip_inline_ws();
        if (!cur.done() && cur.peek() == '#')
            while (!cur.done() && cur.peek() != '\n') cur.take();
        const std::string full = section.empty() ? key : section + "." + key;
        cfg.values_[full] = std::move(value);
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FileNotFound(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
}

const ConfigValue& Config::get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigParse("missing config key '" + key + "'");
    return it->second;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
    return has(key) ? get(key).as_int() : fallback;
}

double Config::get_real(const std::string& key, double fallback) const {
    return has(key) ? get(key).as_real() : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get(key).as_bool() : fallback;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    return has(key) ? get(key).as_string() : fallback;
}

}  // namespace msfpca
