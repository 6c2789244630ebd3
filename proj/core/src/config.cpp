#include "idfe/config.hpp"

#include <charconv>
#include <fstream>

namespace idfe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AssetError("config: cannot open " + path.string());

  Config cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash_pos = line.find('#');
    if (hash_pos != std::string::npos) line.resize(hash_pos);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("config: " + path.string() + ":" + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw FormatError("config: " + path.string() + ":" + std::to_string(lineno) +
                        ": empty key");
    }
    if (cfg.entries_.count(key)) {
      throw ConfigError("config: " + path.string() + ":" + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    }
    cfg.entries_.emplace(key, value);
  }
  return cfg;
}

void Config::set(const std::string& key, const std::string& value) {
  if (trim(key).empty()) throw ConfigError("config: empty key");
  entries_[trim(key)] = trim(value);
}

std::string Config::get_str(const std::string& key, const std::string& fallback) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

std::int64_t Config::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{} || ptr != it->second.data() + it->second.size()) {
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + it->second + "'");
  }
  return v;
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{} || ptr != it->second.data() + it->second.size()) {
    throw ConfigError("config: key '" + key + "' expects an unsigned integer, got '" + it->second +
                      "'");
  }
  return v;
}

double Config::get_double(const std::string& key, double fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(it->second.data(), it->second.data() + it->second.size(), v);
  if (ec != std::errc{} || ptr != it->second.data() + it->second.size()) {
    throw ConfigError("config: key '" + key + "' expects a number, got '" + it->second + "'");
  }
  return v;
}

bool Config::get_bool(const std::string& key, bool fallback) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  if (it->second == "true" || it->second == "1") return true;
  if (it->second == "false" || it->second == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + it->second + "'");
}

void Config::restrict_to(const std::set<std::string>& allowed) const {
  std::string unknown;
  for (const auto& [key, value] : entries_) {
    (void)value;
    if (!allowed.count(key)) unknown += (unknown.empty() ? "" : ", ") + ("'" + key + "'");
  }
  if (!unknown.empty()) throw ConfigError("config: unknown key " + unknown);
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [key, value] : entries_) {
    out += key;
    out += " = ";
    out += value;
    out += '\n';
  }
  return out;
}

std::uint64_t Config::hash() const { return fnv1a64(canonical()); }

}  // namespace idfe
