#include "tokmark/config.hpp"

#include <fstream>
#include <sstream>

#include "tokmark/rng.hpp"

namespace tokmark {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

} // namespace

Config Config::parse_string(const std::string& text, const std::string& origin) {
    Config cfg;
    cfg.origin_ = origin;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#' || t[0] == ';') continue;
        if (t.front() == '[') {
            if (t.back() != ']')
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": unterminated section header");
            section = trim(t.substr(1, t.size() - 2));
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected key=value");
        const std::string key = trim(t.substr(0, eq));
        if (key.empty())
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        cfg.values_[full] = {trim(t.substr(eq + 1)), lineno};
    }
    return cfg;
}

Config Config::parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse_string(buffer.str(), path);
}

void Config::fail(const std::string& key, const std::string& reason) const {
    const auto it = values_.find(key);
    if (it == values_.end())
        throw ConfigError(origin_ + ": missing required key '" + key + "'");
    throw ConfigError(origin_ + ":" + std::to_string(it->second.line) + ": key '" +
                      key + "' " + reason);
}

std::string Config::get_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) fail(key, "");
    return it->second.value;
}

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second.value;
}

int64_t Config::get_int(const std::string& key) const {
    try {
        return std::stoll(get_string(key));
    } catch (const std::logic_error&) {
        fail(key, "is not an integer");
    }
}

int64_t Config::get_int(const std::string& key, int64_t fallback) const {
    return has(key) ? get_int(key) : fallback;
}

uint64_t Config::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    try {
        return std::stoull(get_string(key));
    } catch (const std::logic_error&) {
        fail(key, "is not an unsigned integer");
    }
}

double Config::get_double(const std::string& key) const {
    try {
        return std::stod(get_string(key));
    } catch (const std::logic_error&) {
        fail(key, "is not a number");
    }
}

double Config::get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail(key, "is not a boolean");
}

std::string Config::location(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return key + " (unset)";
    return key + " at " + origin_ + ":" + std::to_string(it->second.line);
}

std::vector<std::string> Config::keys() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_) out.push_back(k);
    return out;
}

void Config::set(const std::string& key, const std::string& value) {
    values_[key] = {value, 0};
}

std::string Config::canonical() const {
    std::string out;
    for (const auto& [k, v] : values_) {
        out += k;
        out += '=';
        out += v.value;
        out += '\n';
    }
    return out;
}

uint64_t Config::hash() const {
    uint64_t h = 0x7061726d73ULL;
    for (const char c : canonical()) h = mix64(h, uint64_t(uint8_t(c)));
    return h;
}

} // namespace tokmark
