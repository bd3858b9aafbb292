#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

namespace pixrec {

/// Ordered key=value settings. Text form: one `key=value` per line, `#`
/// starts a comment, surrounding whitespace is ignored.
class KeyValues {
 public:
  static KeyValues parse(std::string_view text, const std::string& origin = "<text>");
  static KeyValues load(const std::filesystem::path& path);
  std::string to_text() const;

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  /// Copies every entry of `other`, overwriting existing keys.
  void merge(const KeyValues& other);

  std::string get(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  const std::map<std::string, std::string>& entries() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace pixrec
