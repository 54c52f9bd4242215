#include "hbnn/bit_alloc.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "hbnn/rng.hpp"

namespace hbnn {

namespace {

constexpr double kDistTolerance = 1e-9;

double parse_double(std::string_view s, const char *what) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    fail(ErrorKind::InvalidDistribution, std::string("cannot parse ") + what + " '" +
                                             std::string(s) + "'");
  return v;
}

void check_average(double b) {
  if (!std::isfinite(b) || b < 1.0 || b > kMaxBits)
    fail(ErrorKind::InvalidDistribution,
         "average bitwidth " + std::to_string(b) + " outside [1, " + std::to_string(kMaxBits) + "]");
}

// Rounds half to even, treating values within 1e-9 of a half-integer as exact
// halves so that e.g. 0.7 * 5 rounds like 3.5.
double round_boundary(double x) {
  const double halves = std::nearbyint(x * 2.0) / 2.0;
  if (std::fabs(x - halves) < 1e-9)
    x = halves;
  return std::nearbyint(x);
}

} // namespace

BitDistribution::BitDistribution(std::vector<BitFraction> entries) : entries_(std::move(entries)) {
  if (entries_.empty())
    fail(ErrorKind::InvalidDistribution, "distribution has no entries");
  double total = 0.0;
  int prev = 0;
  for (const auto &e : entries_) {
    if (e.bits < 1 || e.bits > kMaxBits)
      fail(ErrorKind::InvalidDistribution, "bitwidth " + std::to_string(e.bits) + " out of range");
    if (e.bits <= prev)
      fail(ErrorKind::InvalidDistribution, "bitwidths must be strictly increasing");
    if (!(e.fraction > 0.0) || e.fraction > 1.0 + kDistTolerance)
      fail(ErrorKind::InvalidDistribution, "fractions must lie in (0, 1]");
    prev = e.bits;
    total += e.fraction;
  }
  if (std::fabs(total - 1.0) > kDistTolerance)
    fail(ErrorKind::InvalidDistribution, "fractions sum to " + std::to_string(total) + ", not 1");
}

double BitDistribution::average() const noexcept {
  double avg = 0.0;
  for (const auto &e : entries_)
    avg += e.bits * e.fraction;
  return avg;
}

std::string BitDistribution::to_string() const {
  std::ostringstream os;
  for (std::size_t i = 0; i < entries_.size(); ++i)
    os << (i ? "/" : "") << entries_[i].bits << "=" << entries_[i].fraction;
  return os.str();
}

DistPolicy DistPolicy::parse(std::string_view text) {
  if (text == "adjacent")
    return adjacent();
  if (text == "paper-1.4")
    return paper_1_4();
  constexpr std::string_view prefix = "preset:";
  if (text.starts_with(prefix)) {
    std::vector<BitFraction> entries;
    std::string_view rest = text.substr(prefix.size());
    while (!rest.empty()) {
      const auto slash = rest.find('/');
      const auto item = rest.substr(0, slash);
      const auto eq = item.find('=');
      if (eq == std::string_view::npos)
        fail(ErrorKind::InvalidDistribution, "preset entries look like bits=fraction");
      const double bits = parse_double(item.substr(0, eq), "bitwidth");
      if (bits != std::floor(bits))
        fail(ErrorKind::InvalidDistribution, "preset bitwidths must be integers");
      entries.push_back({static_cast<int>(bits), parse_double(item.substr(eq + 1), "fraction")});
      rest = slash == std::string_view::npos ? std::string_view{} : rest.substr(slash + 1);
    }
    std::sort(entries.begin(), entries.end(),
              [](const BitFraction &a, const BitFraction &b) { return a.bits < b.bits; });
    BitDistribution{entries};
    return from_preset(std::move(entries));
  }
  fail(ErrorKind::InvalidDistribution, "unknown distribution policy '" + std::string(text) + "'");
}

std::string DistPolicy::name() const {
  switch (kind) {
  case Kind::Adjacent: return "adjacent";
  case Kind::Paper14: return "paper-1.4";
  case Kind::Preset: break;
  }
  std::ostringstream os;
  os << "preset:";
  for (std::size_t i = 0; i < preset.size(); ++i)
    os << (i ? "/" : "") << preset[i].bits << "=" << preset[i].fraction;
  return os.str();
}

BitDistribution dist_from_avg(double average_bits, const DistPolicy &policy) {
  check_average(average_bits);
  BitDistribution dist;
  switch (policy.kind) {
  case DistPolicy::Kind::Adjacent: {
    const double lo = std::floor(average_bits);
    const double hi_fraction = average_bits - lo;
    if (hi_fraction < 1e-12 || lo >= kMaxBits)
      dist = BitDistribution({{static_cast<int>(lo), 1.0}});
    else if (hi_fraction > 1.0 - 1e-12)
      dist = BitDistribution({{static_cast<int>(lo) + 1, 1.0}});
    else
      dist = BitDistribution({{static_cast<int>(lo), 1.0 - hi_fraction},
                              {static_cast<int>(lo) + 1, hi_fraction}});
    break;
  }
  case DistPolicy::Kind::Paper14:
    dist = BitDistribution({{1, 0.7}, {2, 0.2}, {3, 0.1}});
    break;
  case DistPolicy::Kind::Preset:
    dist = BitDistribution(policy.preset);
    break;
  }
  if (std::fabs(dist.average() - average_bits) > kDistTolerance)
    fail(ErrorKind::InvalidDistribution, "distribution " + dist.to_string() + " averages " +
                                             std::to_string(dist.average()) + ", requested " +
                                             std::to_string(average_bits));
  return dist;
}

std::vector<BitDistribution> distribution_grid(double average_bits, double step,
                                               const std::vector<int> &bitwidths) {
  check_average(average_bits);
  const long units = std::lround(1.0 / step);
  if (units <= 0 || std::fabs(units * step - 1.0) > 1e-9)
    fail(ErrorKind::InvalidDistribution, "grid step must divide 1");
  std::vector<int> bits = bitwidths;
  std::sort(bits.begin(), bits.end());

  std::vector<BitDistribution> out;
  std::vector<long> counts(bits.size(), 0);
  // Enumerate compositions of `units` into bits.size() nonnegative parts.
  auto recurse = [&](auto &&self, std::size_t idx, long remaining) -> void {
    if (idx + 1 == bits.size()) {
      counts[idx] = remaining;
      long weighted = 0;
      for (std::size_t i = 0; i < bits.size(); ++i)
        weighted += counts[i] * bits[i];
      if (std::fabs(static_cast<double>(weighted) / units - average_bits) > kDistTolerance)
        return;
      std::vector<BitFraction> entries;
      for (std::size_t i = 0; i < bits.size(); ++i)
        if (counts[i] > 0)
          entries.push_back({bits[i], static_cast<double>(counts[i]) / units});
      out.emplace_back(std::move(entries));
      return;
    }
    for (long c = remaining; c >= 0; --c) {
      counts[idx] = c;
      self(self, idx + 1, remaining - c);
    }
  };
  if (!bits.empty())
    recurse(recurse, 0, units);
  return out;
}

SortHeuristic SortHeuristic::parse(std::string_view text, std::uint64_t seed) {
  if (text == "td" || text == "top-down")
    return top_down();
  if (text == "mo" || text == "middle-out")
    return middle_out();
  if (text == "bu" || text == "bottom-up")
    return bottom_up();
  if (text == "random" || text == "r")
    return random(seed);
  if (text == "mo-signed")
    return middle_out_signed();
  fail(ErrorKind::InvalidInput, "unknown sort heuristic '" + std::string(text) + "'");
}

std::string SortHeuristic::name() const {
  switch (kind) {
  case Kind::TopDown: return "td";
  case Kind::MiddleOut: return "mo";
  case Kind::BottomUp: return "bu";
  case Kind::Random: return "random";
  case Kind::MiddleOutSigned: return "mo-signed";
  }
  return "?";
}

std::vector<std::size_t> sort_indices(const Tensor &t, const SortHeuristic &h) {
  if (t.empty())
    fail(ErrorKind::EmptyInput, "sort_indices of an empty tensor");
  const std::size_t n = t.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  if (h.kind == SortHeuristic::Kind::Random) {
    Rng rng(h.seed);
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.below(i + 1)]);
    return order;
  }

  std::vector<double> key(n);
  const double mean = mean_abs(t);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = std::fabs(t[i]);
    switch (h.kind) {
    case SortHeuristic::Kind::TopDown: key[i] = -a; break;
    case SortHeuristic::Kind::BottomUp: key[i] = a; break;
    case SortHeuristic::Kind::MiddleOut: key[i] = std::fabs(a - mean); break;
    case SortHeuristic::Kind::MiddleOutSigned: key[i] = a - mean; break;
    case SortHeuristic::Kind::Random: break;
    }
  }
  std::stable_sort(order.begin(), order.end(),
                   [&key](std::size_t a, std::size_t b) { return key[a] < key[b]; });
  return order;
}

std::vector<std::size_t> allocation_counts(const BitDistribution &dist, std::size_t n) {
  const auto &entries = dist.entries();
  std::vector<std::size_t> counts(entries.size(), 0);
  double cumulative = 0.0;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i + 1 < entries.size(); ++i) {
    cumulative += entries[i].fraction;
    const double boundary = round_boundary(cumulative * static_cast<double>(n));
    const auto upto = std::min(n, static_cast<std::size_t>(std::max(0.0, boundary)));
    counts[i] = upto > assigned ? upto - assigned : 0;
    assigned += counts[i];
  }
  counts.back() = n - assigned;
  return counts;
}

BitMask mask_from_order(const Shape &shape, const std::vector<std::size_t> &order,
                        const BitDistribution &dist) {
  const std::size_t n = shape_size(shape);
  if (order.size() != n)
    fail(ErrorKind::ShapeMismatch, "ordering length does not match the shape");
  const auto counts = allocation_counts(dist, n);
  std::vector<std::uint8_t> widths(n, 0);
  std::size_t cursor = 0;
  for (std::size_t e = 0; e < counts.size(); ++e) {
    const auto bits = static_cast<std::uint8_t>(dist.entries()[e].bits);
    for (std::size_t k = 0; k < counts[e]; ++k)
      widths[order[cursor++]] = bits;
  }
  return BitMask(shape, std::move(widths));
}

BitMask generate_mask(const Tensor &t, const BitDistribution &dist, const SortHeuristic &h) {
  return mask_from_order(t.shape(), sort_indices(t, h), dist);
}

BitMask generate_mask(const Tensor &t, double average_bits, const SortHeuristic &h,
                      const DistPolicy &policy) {
  return generate_mask(t, dist_from_avg(average_bits, policy), h);
}

GridChoice best_grid_distribution(const Tensor &t, const std::vector<std::size_t> &order,
                                  double average_bits, double step,
                                  const std::vector<int> &bitwidths) {
  const auto grid = distribution_grid(average_bits, step, bitwidths);
  if (grid.empty())
    fail(ErrorKind::InvalidDistribution,
         "no grid distribution averages " + std::to_string(average_bits) + " bits");
  GridChoice best;
  best.distance = std::numeric_limits<double>::infinity();
  for (const auto &dist : grid) {
    const double d =
        normalized_distance(t, reconstruct(hetero_binarize(t, mask_from_order(t.shape(), order, dist))));
    if (d < best.distance)
      best = {dist, d};
  }
  return best;
}

} // namespace hbnn
