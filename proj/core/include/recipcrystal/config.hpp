#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace recip {

// Flat key = value configuration. '#' starts a comment; blank lines are
// ignored. Keys are kept in a sorted map so the canonical text (and the hash
// embedded in checkpoints) is independent of declaration order.
class Config {
 public:
  static Config parse_file(const std::string& path);
  static Config parse_string(const std::string& text);

  bool has(const std::string& key) const { return kv_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  std::string canonical_text() const;
  std::uint64_t hash() const;  // FNV-1a over the canonical text

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace recip
