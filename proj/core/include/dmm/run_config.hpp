#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace dmm {

enum class ValueType { integer, unsigned_integer, real, boolean, text, list };

struct ConfigKey {
  std::string section;
  std::string name;
  ValueType type;
  std::string default_value;
  std::string help;

  std::string id() const { return section + "." + name; }
};

// Every key a run config may contain, in serialization order.
const std::vector<ConfigKey>& config_schema();

// Resolved run settings. Text form:
//
//   # comment
//   [section]
//   key = value
//
// Unknown sections or keys are errors, as are values that do not parse as
// the key's type. Keys not mentioned keep their defaults.
class RunConfig {
 public:
  // All keys at their defaults.
  RunConfig();

  static RunConfig parse(std::string_view text, std::string_view origin = "<config>");
  static RunConfig load(const std::filesystem::path& path);

  // id is "section.key".
  void set(std::string_view id, std::string_view value);
  // "section.key=value".
  void apply_override(std::string_view assignment);

  const std::string& get(std::string_view id) const;
  std::int64_t get_int(std::string_view id) const;
  std::uint64_t get_uint(std::string_view id) const;
  std::size_t get_size(std::string_view id) const { return static_cast<std::size_t>(get_uint(id)); }
  double get_double(std::string_view id) const;
  bool get_bool(std::string_view id) const;
  std::vector<std::string> get_list(std::string_view id) const;

  // Full text form with every key; parse(serialize()) == *this.
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

 private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace dmm
