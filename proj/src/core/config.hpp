#pragma once

// Run configuration: a fixed schema of typed keys with defaults, loaded from
// `key=value` text and overridden from the command line. Unknown keys and
// ill-typed values are rejected. The echo lists every key, so feeding it
// back reproduces the run.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace protoedit {

class RunConfig {
 public:
  enum class Type { kUInt, kReal, kBool, kText, kRealList };

  struct Key {
    std::string name;
    Type type;
    std::string default_value;
    std::string help;
  };

  RunConfig();  // all defaults

  static const std::vector<Key>& schema();

  // `#` starts a comment; blank lines are ignored.
  static RunConfig parse(std::string_view text);
  static RunConfig load(const std::string& path);

  void set(std::string_view key, std::string_view value);
  bool is_default(std::string_view key) const;

  std::uint64_t get_uint(std::string_view key) const;
  double get_real(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  const std::string& get_text(std::string_view key) const;
  std::vector<double> get_real_list(std::string_view key) const;

  // One `key=value` line per schema key, in schema order.
  std::string echo() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  const Key& key_info(std::string_view key) const;
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace protoedit
