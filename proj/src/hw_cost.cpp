#include "hbnn/hw_cost.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "hbnn/error.hpp"

namespace hbnn {

namespace {

// Comma-separated when the line has a comma, whitespace-separated otherwise.
std::vector<std::string> split_fields(const std::string &line) {
  std::vector<std::string> out;
  if (line.find(',') != std::string::npos) {
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      const auto b = field.find_first_not_of(" \t\r");
      const auto e = field.find_last_not_of(" \t\r");
      out.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    if (line.find_last_not_of(" \t\r") == line.rfind(','))
      out.emplace_back();
    return out;
  }
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok)
    out.push_back(tok);
  return out;
}

std::string strip_comment(const std::string &line) {
  const auto hash = line.find('#');
  return hash == std::string::npos ? line : line.substr(0, hash);
}

double parse_number(const std::string &s, const std::string &column, std::size_t line_no) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size())
      throw std::invalid_argument(s);
    return v;
  } catch (const std::exception &) {
    fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": column '" + column +
                                "' expects a number, got '" + s + "'");
  }
}

void check_bits(double bits) {
  if (!(bits > 0.0) || !std::isfinite(bits))
    fail(ErrorKind::InvalidInput, "bitwidth must be positive");
}

} // namespace

std::string to_string(Platform p) { return p == Platform::Fpga ? "fpga" : "asic"; }

Platform parse_platform(const std::string &text) {
  std::string lower = text;
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "fpga")
    return Platform::Fpga;
  if (lower == "asic")
    return Platform::Asic;
  fail(ErrorKind::InvalidInput, "unknown platform '" + text + "'");
}

CostEstimate fpga_estimate(const CostBaseline &base, double bits, int unfolding) {
  if (base.platform != Platform::Fpga)
    fail(ErrorKind::InvalidInput, "baseline " + base.id + " is not an FPGA row");
  check_bits(bits);
  if (unfolding <= 0 || base.unfolding <= 0)
    fail(ErrorKind::InvalidInput, "unfolding must be a positive integer");

  const double bit_ratio = bits / base.bits_w;
  const double unfold_ratio = static_cast<double>(unfolding) / base.unfolding;

  CostEstimate e;
  e.base_id = base.id;
  e.platform = base.platform;
  e.device = base.device;
  e.model = base.model;
  e.unfolding = unfolding;
  e.bits_in = bits;
  e.bits_w = bits;
  e.occupancy = base.occupancy * bit_ratio * unfold_ratio;
  if (e.occupancy > 100.0) {
    e.occupancy = 100.0;
    e.saturated = true;
  }
  e.throughput_kfps = base.throughput_kfps / bit_ratio * unfold_ratio;
  e.power_w = base.power_w * bit_ratio * unfold_ratio;

  std::ostringstream rule;
  rule << "fpga linear in bits from " << base.id << " (bits x" << bit_ratio << ", unfolding x"
       << unfold_ratio << ")";
  e.rule = rule.str();
  return e;
}

CostEstimate asic_estimate(const CostBaseline &base, double bits_in, double bits_w) {
  if (base.platform != Platform::Asic)
    fail(ErrorKind::InvalidInput, "baseline " + base.id + " is not an ASIC row");
  check_bits(bits_in);
  check_bits(bits_w);

  const double ratio = (bits_in * bits_w) / (base.bits_in * base.bits_w);
  CostEstimate e;
  e.base_id = base.id;
  e.platform = base.platform;
  e.device = base.device;
  e.model = base.model;
  e.bits_in = bits_in;
  e.bits_w = bits_w;
  e.occupancy = base.occupancy * ratio;
  e.throughput_kfps = base.throughput_kfps;
  e.power_w = base.power_w * ratio;

  std::ostringstream rule;
  rule << "asic product m*n from " << base.id << " (x" << ratio << ")";
  e.rule = rule.str();
  return e;
}

CostBaseline as_baseline(const CostEstimate &e, const std::string &id) {
  CostBaseline b;
  b.id = id;
  b.platform = e.platform;
  b.device = e.device;
  b.model = e.model;
  b.unfolding = e.unfolding;
  b.bits_in = e.bits_in;
  b.bits_w = e.bits_w;
  b.occupancy = e.occupancy;
  b.throughput_kfps = e.throughput_kfps;
  b.power_w = e.power_w;
  b.top1 = e.top1;
  return b;
}

std::vector<CostBaseline> parse_baselines(std::istream &in) {
  static const std::vector<std::string> kColumns = {
      "id", "platform", "device", "model", "unfolding", "bits_in",
      "bits_w", "occupancy", "kfps", "power_w", "top1"};

  std::vector<CostBaseline> rows;
  std::map<std::string, std::size_t> col;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(strip_comment(line));
    if (fields.empty())
      continue;
    if (col.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i)
        col[fields[i]] = i;
      for (const auto &c : kColumns)
        if (!col.contains(c))
          fail(ErrorKind::Format, "baseline header is missing column '" + c + "'");
      continue;
    }
    if (fields.size() != col.size())
      fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(col.size()) + " fields, got " +
                                  std::to_string(fields.size()));
    auto get = [&](const char *name) -> const std::string & { return fields[col.at(name)]; };

    CostBaseline b;
    b.id = get("id");
    b.platform = parse_platform(get("platform"));
    b.device = get("device");
    b.model = get("model");
    b.unfolding = get("unfolding") == "-"
                      ? 0
                      : static_cast<int>(parse_number(get("unfolding"), "unfolding", line_no));
    b.bits_in = parse_number(get("bits_in"), "bits_in", line_no);
    b.bits_w = parse_number(get("bits_w"), "bits_w", line_no);
    b.occupancy = parse_number(get("occupancy"), "occupancy", line_no);
    b.throughput_kfps = parse_number(get("kfps"), "kfps", line_no);
    b.power_w = parse_number(get("power_w"), "power_w", line_no);
    if (get("top1") != "-")
      b.top1 = parse_number(get("top1"), "top1", line_no);

    if (b.bits_in <= 0 || b.bits_w <= 0 || b.occupancy <= 0 || b.throughput_kfps <= 0 ||
        b.power_w <= 0)
      fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": metrics must be positive");
    if (b.platform == Platform::Fpga && (b.occupancy > 100.0 || b.unfolding <= 0))
      fail(ErrorKind::Format, "line " + std::to_string(line_no) +
                                  ": FPGA rows need occupancy <= 100 and a positive unfolding");
    rows.push_back(std::move(b));
  }
  if (col.empty())
    fail(ErrorKind::Format, "baseline table is empty");
  return rows;
}

std::vector<CostBaseline> load_baselines(const std::string &path) {
  std::ifstream in(path);
  if (!in)
    fail(ErrorKind::Io, "cannot open baseline file " + path);
  return parse_baselines(in);
}

const CostBaseline &find_baseline(const std::vector<CostBaseline> &rows, const std::string &id) {
  for (const auto &r : rows)
    if (r.id == id)
      return r;
  fail(ErrorKind::Usage, "unknown baseline id '" + id + "'");
}

std::vector<AccuracyEntry> parse_accuracy_table(std::istream &in) {
  std::vector<AccuracyEntry> out;
  std::map<std::string, std::size_t> col;
  std::map<double, std::pair<double, int>> averaged;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(strip_comment(line));
    if (fields.empty())
      continue;
    if (col.empty()) {
      for (std::size_t i = 0; i < fields.size(); ++i)
        col[fields[i]] = i;
      const bool simple = col.contains("model") && col.contains("bits") && col.contains("top1");
      const bool results = col.contains("n_bits") && col.contains("top1");
      if (!simple && !results)
        fail(ErrorKind::Format, "accuracy table needs model,bits,top1 or n_bits,top1 columns");
      continue;
    }
    if (fields.size() != col.size())
      fail(ErrorKind::Format, "line " + std::to_string(line_no) + ": wrong field count");
    if (col.contains("model") && col.contains("bits")) {
      out.push_back({fields[col["model"]], parse_number(fields[col["bits"]], "bits", line_no),
                     parse_number(fields[col["top1"]], "top1", line_no)});
    } else {
      const auto &nb = fields[col["n_bits"]];
      if (nb == "full")
        continue;
      auto &acc = averaged[parse_number(nb, "n_bits", line_no)];
      acc.first += parse_number(fields[col["top1"]], "top1", line_no);
      acc.second += 1;
    }
  }
  for (const auto &[bits, acc] : averaged)
    out.push_back({"*", bits, acc.first / acc.second});
  return out;
}

std::vector<std::size_t> pareto_front(const std::vector<CostEstimate> &points) {
  auto dominates = [](const CostEstimate &a, const CostEstimate &b) {
    const double acc_a = a.top1.value_or(0.0), acc_b = b.top1.value_or(0.0);
    const bool no_worse =
        acc_a >= acc_b && a.power_w <= b.power_w && a.occupancy <= b.occupancy;
    const bool better = acc_a > acc_b || a.power_w < b.power_w || a.occupancy < b.occupancy;
    return no_worse && better;
  };
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < points.size(); ++i) {
    bool dominated = false;
    for (std::size_t j = 0; j < points.size() && !dominated; ++j)
      dominated = j != i && dominates(points[j], points[i]);
    if (!dominated)
      out.push_back(i);
  }
  return out;
}

ParetoReport pareto_report(const std::vector<CostBaseline> &baselines,
                           const std::vector<double> &bit_grid,
                           const std::vector<AccuracyEntry> &accuracy) {
  auto lookup = [&](const std::string &model, double bits) -> std::optional<double> {
    for (const auto &a : accuracy)
      if ((a.model == model || a.model == "*") && std::fabs(a.bits - bits) < 1e-9)
        return a.top1;
    return std::nullopt;
  };

  ParetoReport report;
  for (const auto &base : baselines) {
    for (double bits : bit_grid) {
      CostEstimate e = base.platform == Platform::Fpga
                           ? fpga_estimate(base, bits, base.unfolding)
                           : asic_estimate(base, bits, bits);
      e.top1 = lookup(base.model, bits);
      if (!e.top1 && std::fabs(bits - base.bits_w) < 1e-9)
        e.top1 = base.top1;
      report.estimates.push_back(std::move(e));
    }
  }

  // Group by (platform, model, unfolding) and only rank annotated points.
  std::map<std::tuple<int, std::string, int>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < report.estimates.size(); ++i) {
    const auto &e = report.estimates[i];
    if (e.top1)
      groups[{static_cast<int>(e.platform), e.model, e.unfolding}].push_back(i);
  }
  for (const auto &[key, members] : groups) {
    std::vector<CostEstimate> subset;
    for (auto i : members)
      subset.push_back(report.estimates[i]);
    for (auto k : pareto_front(subset))
      report.pareto.push_back(members[k]);
  }
  std::sort(report.pareto.begin(), report.pareto.end());
  return report;
}

void write_estimates_csv(std::ostream &os, const std::vector<CostEstimate> &rows,
                         const std::vector<std::size_t> &pareto) {
  os << "base,platform,model,unfolding,bits_in,bits_w,occupancy,occupancy_unit,kfps,power_w,"
        "saturated,top1,pareto\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &e = rows[i];
    const bool on_front = std::find(pareto.begin(), pareto.end(), i) != pareto.end();
    os << e.base_id << ',' << to_string(e.platform) << ',' << e.model << ','
       << (e.unfolding > 0 ? std::to_string(e.unfolding) : "-") << ',' << e.bits_in << ','
       << e.bits_w << ',' << std::setprecision(6) << e.occupancy << ','
       << (e.platform == Platform::Fpga ? "percent" : "mm2") << ',' << e.throughput_kfps << ','
       << e.power_w << ',' << (e.saturated ? 1 : 0) << ',';
    if (e.top1)
      os << *e.top1;
    else
      os << '-';
    os << ',' << (on_front ? 1 : 0) << '\n';
  }
}

std::string estimates_json(const std::vector<CostEstimate> &rows,
                           const std::vector<std::size_t> &pareto) {
  nlohmann::json arr = nlohmann::json::array();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto &e = rows[i];
    nlohmann::json j = {
        {"base", e.base_id},
        {"platform", to_string(e.platform)},
        {"model", e.model},
        {"bits_in", e.bits_in},
        {"bits_w", e.bits_w},
        {"occupancy", e.occupancy},
        {"occupancy_unit", e.platform == Platform::Fpga ? "percent" : "mm2"},
        {"kfps", e.throughput_kfps},
        {"power_w", e.power_w},
        {"saturated", e.saturated},
        {"rule", e.rule},
        {"pareto", std::find(pareto.begin(), pareto.end(), i) != pareto.end()},
    };
    j["unfolding"] = e.unfolding > 0 ? nlohmann::json(e.unfolding) : nlohmann::json(nullptr);
    j["top1"] = e.top1 ? nlohmann::json(*e.top1) : nlohmann::json(nullptr);
    arr.push_back(std::move(j));
  }
  return arr.dump(2);
}

} // namespace hbnn
