#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>

#include "idfe/errors.hpp"

namespace idfe {

// Flat `key = value` run settings. '#' starts a comment, blank lines are
// skipped. Values keep their raw text; the typed getters parse on demand and
// refuse trailing junk. set() overwrites, but a duplicate key inside one file
// is rejected — that is almost always an editing accident.
class Config {
 public:
  Config() = default;

  static Config from_file(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Rejects keys outside `allowed`, so a typo fails loudly instead of
  // silently falling back to a default.
  void restrict_to(const std::set<std::string>& allowed) const;

  // Sorted `key = value` lines — the payload of resolved-config snapshots.
  std::string canonical() const;
  std::uint64_t hash() const;  // FNV-1a over canonical()

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace idfe
