#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace rapa {

// Flat `key = value` configuration with [section] headers. Every key is
// enumerated in the defaults registry; files or overrides naming anything
// else are rejected (silent typos are the top reproducibility killer).
class Config {
public:
    static Config defaults();
    static Config load(const std::string& path);  // defaults overlaid with the file

    // key is "section.name"; value parsed on access
    bool has(const std::string& key) const;
    void set(const std::string& key, const std::string& value);  // key must exist

    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::string get_string(const std::string& key) const;
    std::vector<int64_t> get_int_list(const std::string& key) const;  // comma separated

    std::string dump() const;                    // canonical text form
    void write(const std::string& path) const;   // effective-config echo

private:
    std::map<std::string, std::string> values_;
};

}  // namespace rapa
