#include "vsa/config.hpp"

#include <fstream>
#include <sstream>

namespace vsa {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

KVConfig KVConfig::parse(const std::string& text) {
    KVConfig cfg;
    std::stringstream ss(text);
    std::string line;
    long line_no = 0;
    while (std::getline(ss, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw FormatError("config line " + std::to_string(line_no) + " has no '='");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw FormatError("config line " + std::to_string(line_no) + " has empty key");
        }
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

KVConfig KVConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config '" + path + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

std::string KVConfig::serialize() const {
    std::ostringstream out;
    for (const auto& [key, value] : values_) {
        out << key << " = " << value << "\n";
    }
    return out.str();
}

std::string KVConfig::get(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long KVConfig::get_long(const std::string& key, long fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stol(it->second);
    } catch (const std::exception&) {
        throw FormatError("config key '" + key + "' is not an integer: " + it->second);
    }
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stod(it->second);
    } catch (const std::exception&) {
        throw FormatError("config key '" + key + "' is not a number: " + it->second);
    }
}

}  // namespace vsa
