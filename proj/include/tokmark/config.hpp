#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace tokmark {

/// Error carrying the offending config line for CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Flat key=value configuration with [section] headers. Keys are addressed as
/// "section.key" ("" section for keys before any header). Remembers line
/// numbers so validation errors can cite them.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text, const std::string& origin = "<string>");

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    /// "key at file:line" for diagnostics.
    std::string location(const std::string& key) const;
    std::vector<std::string> keys() const;

    void set(const std::string& key, const std::string& value);

    /// Canonical "key=value\n" dump (sorted), used for hashing into reports.
    std::string canonical() const;
    uint64_t hash() const;

private:
    struct Entry {
        std::string value;
        int line = 0;
    };
    std::string origin_;
    std::map<std::string, Entry> values_;

    [[noreturn]] void fail(const std::string& key, const std::string& reason) const;
};

} // namespace tokmark
