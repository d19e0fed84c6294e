#pragma once

#include <map>
#include <string>

#include "vsa/common.hpp"

namespace vsa {

// Plain-text key=value configuration with dotted section prefixes.
// '#' starts a comment; whitespace around keys and values is trimmed.
class KVConfig {
public:
    static KVConfig parse(const std::string& text);
    static KVConfig load(const std::string& path);

    std::string serialize() const;  // sorted keys, canonical form

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback = "") const;
    long get_long(const std::string& key, long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
};

}  // namespace vsa
