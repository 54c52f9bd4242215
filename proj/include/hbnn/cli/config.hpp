#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace hbnn::cli {

/// One accepted key with its default value and a one-line description.
struct ConfigKey {
  std::string name;
  std::string default_value;
  std::string help;
};

/// Flat `key = value` configuration checked against a fixed schema.
/// Lines starting with '#' and blank lines are ignored; list values are
/// comma separated. Unknown keys and malformed lines raise Usage errors.
class RunConfig {
public:
  explicit RunConfig(std::vector<ConfigKey> schema);

  void load_file(const std::string &path);
  void parse(std::istream &in, const std::string &origin);
  /// "key=value" override, as given on the command line.
  void set_assignment(const std::string &assignment);
  void set(const std::string &key, const std::string &value);

  const std::string &get(const std::string &key) const;
  double get_double(const std::string &key) const;
  std::uint64_t get_u64(const std::string &key) const;
  bool get_bool(const std::string &key) const;
  std::vector<std::string> get_list(const std::string &key) const;
  std::vector<double> get_doubles(const std::string &key) const;
  std::vector<std::uint64_t> get_u64s(const std::string &key) const;

  /// Fully resolved configuration, one "key = value" line each, in schema order.
  void dump(std::ostream &os, const std::string &prefix = "") const;

private:
  std::vector<ConfigKey> schema_;
  std::map<std::string, std::string> values_;
};

std::vector<ConfigKey> approx_bench_schema();
std::vector<ConfigKey> train_schema();

} // namespace hbnn::cli
