#include "hbnn/cli/config.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "hbnn/error.hpp"

namespace hbnn::cli {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

} // namespace

RunConfig::RunConfig(std::vector<ConfigKey> schema) : schema_(std::move(schema)) {
  for (const auto &k : schema_)
    values_[k.name] = k.default_value;
}

void RunConfig::load_file(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorKind::Io, "cannot open config file " + path);
  parse(in, path);
}

void RunConfig::parse(std::istream &in, const std::string &origin) {
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::Usage,
           origin + ":" + std::to_string(number) + ": expected 'key = value', got '" + line + "'");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void RunConfig::set_assignment(const std::string &assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    fail(ErrorKind::Usage, "override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void RunConfig::set(const std::string &key, const std::string &value) {
  if (!values_.contains(key)) {
    std::string known;
    for (const auto &k : schema_)
      known += (known.empty() ? "" : ", ") + k.name;
    fail(ErrorKind::Usage, "unknown config key '" + key + "' (known: " + known + ")");
  }
  values_[key] = value;
}

const std::string &RunConfig::get(const std::string &key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    fail(ErrorKind::Usage, "config key '" + key + "' is not in the schema");
  return it->second;
}

double RunConfig::get_double(const std::string &key) const {
  const auto &v = get(key);
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (v.empty() || used != v.size())
    fail(ErrorKind::Usage, "config key '" + key + "': '" + v + "' is not a number");
  return out;
}

std::uint64_t RunConfig::get_u64(const std::string &key) const {
  const auto &v = get(key);
  if (v.empty() || !std::all_of(v.begin(), v.end(), [](char c) { return c >= '0' && c <= '9'; }))
    fail(ErrorKind::Usage, "config key '" + key + "': '" + v + "' is not a non-negative integer");
  try {
    return std::stoull(v);
  } catch (const std::exception &) {
    fail(ErrorKind::Usage, "config key '" + key + "': '" + v + "' is out of range");
  }
}

bool RunConfig::get_bool(const std::string &key) const {
  const auto &v = get(key);
  if (v == "true" || v == "1" || v == "yes")
    return true;
  if (v == "false" || v == "0" || v == "no")
    return false;
  fail(ErrorKind::Usage, "config key '" + key + "': '" + v + "' is not a boolean");
}

std::vector<std::string> RunConfig::get_list(const std::string &key) const {
  std::vector<std::string> out;
  std::istringstream is(get(key));
  std::string item;
  while (std::getline(is, item, ',')) {
    item = trim(item);
    if (!item.empty())
      out.push_back(item);
  }
  return out;
}

std::vector<double> RunConfig::get_doubles(const std::string &key) const {
  std::vector<double> out;
  for (const auto &item : get_list(key)) {
    RunConfig one({{key, item, ""}});
    out.push_back(one.get_double(key));
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::get_u64s(const std::string &key) const {
  std::vector<std::uint64_t> out;
  for (const auto &item : get_list(key)) {
    RunConfig one({{key, item, ""}});
    out.push_back(one.get_u64(key));
  }
  return out;
}

void RunConfig::dump(std::ostream &os, const std::string &prefix) const {
  for (const auto &k : schema_)
    os << prefix << k.name << " = " << values_.at(k.name) << '\n';
}

std::vector<ConfigKey> approx_bench_schema() {
  return {
      {"n", "1000000", "Gaussian tensor size"},
      {"seeds", "1,2,3,4,5", "tensor seeds"},
      {"bits", "1.2,1.4,1.6,1.8", "fractional average bitwidths"},
      {"heuristics", "mo,td,bu,random", "sort heuristics for fractional points"},
      {"policies", "adjacent,grid", "adjacent, paper-1.4, preset:..., or grid (best of the 0.05 grid)"},
      {"homogeneous", "1,2,3", "integer bitwidths run as uniform masks"},
      {"output", "-", "CSV path, '-' for standard output"},
  };
}

std::vector<ConfigKey> train_schema() {
  return {
      {"dataset", "synthetic", "synthetic or cifar"},
      {"data_dir", "", "CIFAR-10 binary directory"},
      {"train_size", "8000", "training samples"},
      {"test_size", "2000", "test samples"},
      {"data_seed", "42", "synthetic generator seed"},
      {"noise", "2.0", "synthetic pixel noise"},
      {"model", "conv4", "conv4 or dwsep"},
      {"width", "1", "channel width multiplier"},
      {"exclude_io", "true", "keep first and last layer inputs full precision"},
      {"scaling_init", "1.0", "initial value of the output scaling layer"},
      {"learning_rate", "0.01", "SGD learning rate"},
      {"momentum", "0.9", "SGD momentum"},
      {"weight_decay", "1e-4", "SGD weight decay"},
      {"epochs", "4", "training epochs per point"},
      {"batch_size", "64", "mini-batch size"},
      {"mask_refresh", "every-forward", "every-forward, every-epoch or frozen-after:K"},
      {"flip", "true", "random horizontal flips"},
      {"seeds", "1", "model seeds; one run per point and seed"},
      {"points", "full:1, full:1.4:mo:adjacent, full:2, full:full",
       "sweep points m:n[:heuristic[:policy]]"},
      {"output", "-", "results CSV path, '-' for standard output"},
      {"checkpoint_dir", "", "directory for final shadow weights, empty to skip"},
      {"verify_packed", "false", "compare packed and dense inference after training"},
      {"verify_samples", "16", "test samples used by the packed check"},
  };
}

} // namespace hbnn::cli
