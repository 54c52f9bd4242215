#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hbnn {

enum class Platform { Fpga, Asic };

/// A measured hardware implementation used as the anchor for extrapolation.
/// For FPGA rows `occupancy` is percent of LUTs; for ASIC rows it is die area
/// in mm^2. `unfolding` is 0 where it does not apply (ASIC).
struct CostBaseline {
  std::string id;
  Platform platform = Platform::Fpga;
  std::string device;
  std::string model;
  int unfolding = 0;
  double bits_in = 1.0;
  double bits_w = 1.0;
  double occupancy = 0.0;
  double throughput_kfps = 0.0;
  double power_w = 0.0;
  std::optional<double> top1;
};

struct CostEstimate {
  std::string base_id;
  Platform platform = Platform::Fpga;
  std::string device;
  std::string model;
  int unfolding = 0;
  double bits_in = 1.0;
  double bits_w = 1.0;
  double occupancy = 0.0;
  double throughput_kfps = 0.0;
  double power_w = 0.0;
  bool saturated = false;
  std::string rule;
  std::optional<double> top1;
};

std::string to_string(Platform p);
Platform parse_platform(const std::string &text);

/// FPGA metrics scale linearly with average bitwidth and with unfolding;
/// throughput scales inversely with bitwidth. Occupancy saturates at 100%.
CostEstimate fpga_estimate(const CostBaseline &base, double bits, int unfolding);

/// ASIC area and power scale with bits_in * bits_w; throughput is unchanged.
CostEstimate asic_estimate(const CostBaseline &base, double bits_in, double bits_w);

/// Treats an estimate as a new baseline (used for rebaselining chains).
CostBaseline as_baseline(const CostEstimate &e, const std::string &id);

/// Whitespace- or comma-separated table with a header row naming the columns
///   id platform device model unfolding bits_in bits_w occupancy kfps power_w top1
/// '#' starts a comment; '-' marks an empty field (unfolding, top1).
std::vector<CostBaseline> parse_baselines(std::istream &in);
std::vector<CostBaseline> load_baselines(const std::string &path);
const CostBaseline &find_baseline(const std::vector<CostBaseline> &rows, const std::string &id);

struct AccuracyEntry {
  std::string model;
  double bits = 0.0;
  double top1 = 0.0;
};

/// Accepts either `model,bits,top1` rows or a training results CSV
/// (columns n_bits and top1; entries averaged per bitwidth, model "*").
std::vector<AccuracyEntry> parse_accuracy_table(std::istream &in);

struct ParetoReport {
  std::vector<CostEstimate> estimates;
  /// Indices into `estimates` of the non-dominated points among those with a
  /// known accuracy, grouped per (platform, model).
  std::vector<std::size_t> pareto;
};

/// Indices of points not dominated under (accuracy up, power down,
/// occupancy down).
std::vector<std::size_t> pareto_front(const std::vector<CostEstimate> &points);

ParetoReport pareto_report(const std::vector<CostBaseline> &baselines,
                           const std::vector<double> &bit_grid,
                           const std::vector<AccuracyEntry> &accuracy);

void write_estimates_csv(std::ostream &os, const std::vector<CostEstimate> &rows,
                         const std::vector<std::size_t> &pareto = {});
std::string estimates_json(const std::vector<CostEstimate> &rows,
                           const std::vector<std::size_t> &pareto = {});

} // namespace hbnn
