#pragma once

#include <map>
#include <string>

#include "dctts/common.hpp"

namespace dctts {

// Flat "key = value" configuration, '#' comments, UTF-8. Later keys override
// earlier ones so run configs can layer on top of defaults.
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    void set_double(const std::string& key, double v);
    void set_int(const std::string& key, int64_t v);
    void merge(const Config& other);

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_string(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    void save(const std::string& path) const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace dctts
