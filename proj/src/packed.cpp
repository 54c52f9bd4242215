#include "hbnn/packed.hpp"

#include <bit>
#include <cmath>
#include <limits>
#include <string>

namespace hbnn {

PackedPlanes pack(const HeterogeneousBinaryTensor &h) {
  PackedPlanes out;
  out.shape = h.shape();
  out.element_count = h.size();
  const std::size_t words = out.words();
  out.planes.reserve(h.planes().size());
  for (const auto &plane : h.planes()) {
    PackedPlane pp;
    pp.scale = plane.scale;
    pp.signs.assign(words, 0);
    pp.activity.assign(words, 0);
    for (std::size_t j = 0; j < h.size(); ++j) {
      const auto s = plane.signs[j];
      if (s == 0)
        continue;
      const std::uint64_t bit = std::uint64_t{1} << (j % kWordBits);
      pp.activity[j / kWordBits] |= bit;
      if (s > 0)
        pp.signs[j / kWordBits] |= bit;
    }
    out.planes.push_back(std::move(pp));
  }
  return out;
}

void validate(const PackedPlanes &p) {
  const std::size_t words = p.words();
  const std::size_t tail = p.element_count % kWordBits;
  const std::uint64_t tail_mask = tail == 0 ? ~std::uint64_t{0} : (std::uint64_t{1} << tail) - 1;
  for (std::size_t i = 0; i < p.planes.size(); ++i) {
    const auto &plane = p.planes[i];
    if (plane.signs.size() != words || plane.activity.size() != words)
      fail(ErrorKind::Format, "plane " + std::to_string(i + 1) + " has the wrong word count");
    for (std::size_t w = 0; w < words; ++w) {
      if (plane.signs[w] & ~plane.activity[w])
        fail(ErrorKind::Format, "sign bit set on an inactive element");
      if (i > 0 && (plane.activity[w] & ~p.planes[i - 1].activity[w]))
        fail(ErrorKind::Format, "activity is not downward closed");
    }
    if (words > 0 && (plane.activity[words - 1] & ~tail_mask))
      fail(ErrorKind::Format, "padding bits must be zero");
  }
}

HeterogeneousBinaryTensor unpack(const PackedPlanes &p) {
  validate(p);
  if (shape_size(p.shape) != p.element_count)
    fail(ErrorKind::Format, "packed shape does not match element count");
  std::vector<std::uint8_t> widths(p.element_count, 0);
  std::vector<BitPlane> planes(p.planes.size());
  for (std::size_t i = 0; i < p.planes.size(); ++i) {
    const auto &src = p.planes[i];
    auto &dst = planes[i];
    dst.scale = src.scale;
    dst.signs.assign(p.element_count, 0);
    for (std::size_t j = 0; j < p.element_count; ++j) {
      const std::uint64_t bit = std::uint64_t{1} << (j % kWordBits);
      if (src.activity[j / kWordBits] & bit) {
        dst.signs[j] = (src.signs[j / kWordBits] & bit) ? 1 : -1;
        widths[j] = static_cast<std::uint8_t>(i + 1);
      }
    }
  }
  return HeterogeneousBinaryTensor(BitMask(p.shape, std::move(widths)), std::move(planes));
}

PackedPlanes gather(const PackedPlanes &src, std::span<const std::size_t> indices) {
  PackedPlanes out;
  out.element_count = indices.size();
  out.shape = {indices.size()};
  const std::size_t words = out.words();
  out.planes.resize(src.planes.size());
  for (std::size_t i = 0; i < src.planes.size(); ++i) {
    const auto &s = src.planes[i];
    auto &d = out.planes[i];
    d.scale = s.scale;
    d.signs.assign(words, 0);
    d.activity.assign(words, 0);
    for (std::size_t k = 0; k < indices.size(); ++k) {
      const std::size_t j = indices[k];
      if (j == std::numeric_limits<std::size_t>::max())
        continue;
      if (j >= src.element_count)
        fail(ErrorKind::ShapeMismatch, "gather index out of range");
      const std::uint64_t from = std::uint64_t{1} << (j % kWordBits);
      const std::uint64_t to = std::uint64_t{1} << (k % kWordBits);
      if (s.activity[j / kWordBits] & from)
        d.activity[k / kWordBits] |= to;
      if (s.signs[j / kWordBits] & from)
        d.signs[k / kWordBits] |= to;
    }
  }
  return out;
}

double xnor_dot(const PackedPlanes &w, const PackedPlanes &a) {
  if (w.element_count != a.element_count)
    fail(ErrorKind::ShapeMismatch, "xnor_dot: operands have " + std::to_string(w.element_count) +
                                       " and " + std::to_string(a.element_count) + " elements");
  const std::size_t words = w.words();
  double total = 0.0;
  for (const auto &wp : w.planes) {
    for (const auto &ap : a.planes) {
      std::int64_t agree = 0;
      std::int64_t common_count = 0;
      for (std::size_t k = 0; k < words; ++k) {
        const std::uint64_t common = wp.activity[k] & ap.activity[k];
        agree += std::popcount(~(wp.signs[k] ^ ap.signs[k]) & common);
        common_count += std::popcount(common);
      }
      total += wp.scale * ap.scale * static_cast<double>(2 * agree - common_count);
    }
  }
  return total;
}

Tensor xnor_matvec(std::span<const PackedPlanes> rows, const PackedPlanes &a) {
  if (rows.empty())
    fail(ErrorKind::EmptyInput, "xnor_matvec needs at least one row");
  Tensor out({rows.size()});
  for (std::size_t r = 0; r < rows.size(); ++r)
    out[r] = xnor_dot(rows[r], a);
  return out;
}

std::uint64_t active_pair_count(const PackedPlanes &w, const PackedPlanes &a) {
  if (w.element_count != a.element_count)
    fail(ErrorKind::ShapeMismatch, "active_pair_count: element counts differ");
  std::uint64_t total = 0;
  for (const auto &wp : w.planes)
    for (const auto &ap : a.planes)
      for (std::size_t k = 0; k < w.words(); ++k)
        total += static_cast<std::uint64_t>(std::popcount(wp.activity[k] & ap.activity[k]));
  return total;
}

BitopCount bitop_count(const BitDistribution &m_dist, const BitDistribution &n_dist,
                       std::size_t elements) {
  BitopCount out;
  out.mn_factor = m_dist.average() * n_dist.average();
  out.reduction_factor = static_cast<double>(kWordBits) / out.mn_factor;
  out.word_ops = static_cast<std::uint64_t>(
      std::ceil(static_cast<double>(word_count(elements)) * out.mn_factor - 1e-9));
  return out;
}

} // namespace hbnn
