#include "hbnn/io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace hbnn {

namespace {

template <typename T> void put_le(std::ostream &os, T value) {
  static_assert(std::is_unsigned_v<T>);
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i)
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xFF);
  os.write(bytes.data(), bytes.size());
}

template <typename T> T get_le(std::istream &is) {
  static_assert(std::is_unsigned_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  if (!is.read(reinterpret_cast<char *>(bytes.data()), bytes.size()))
    fail(ErrorKind::Format, "unexpected end of file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    value |= static_cast<T>(bytes[i]) << (8 * i);
  return value;
}

void put_f32(std::ostream &os, double v) {
  put_le(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
}

double get_f32(std::istream &is) {
  return static_cast<double>(std::bit_cast<float>(get_le<std::uint32_t>(is)));
}

void put_shape(std::ostream &os, const Shape &shape) {
  put_le(os, static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) {
    if (d > 0xFFFFFFFFu)
      fail(ErrorKind::InvalidShape, "dimension does not fit in 32 bits");
    put_le(os, static_cast<std::uint32_t>(d));
  }
}

Shape get_shape(std::istream &is) {
  const auto rank = get_le<std::uint32_t>(is);
  if (rank == 0 || rank > 16)
    fail(ErrorKind::Format, "unsupported rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto &d : shape)
    d = get_le<std::uint32_t>(is);
  shape_size(shape);
  return shape;
}

void expect_magic(std::istream &is, std::string_view magic) {
  std::string got(magic.size(), '\0');
  if (!is.read(got.data(), static_cast<std::streamsize>(got.size())) || got != magic)
    fail(ErrorKind::Format, "bad magic, expected '" + std::string(magic) + "'");
}

template <typename Fn> void with_output(const std::string &path, Fn &&fn) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    fail(ErrorKind::Io, "cannot open " + path + " for writing");
  fn(os);
  os.flush();
  if (!os)
    fail(ErrorKind::Io, "write to " + path + " failed");
}

std::ifstream open_input(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    fail(ErrorKind::Io, "cannot open " + path);
  return is;
}

} // namespace

void write_hbt(std::ostream &os, const PackedPlanes &p) {
  validate(p);
  os.write("HBT1", 4);
  put_le(os, kHbtVersion);
  put_shape(os, p.shape);
  put_le(os, static_cast<std::uint8_t>(p.planes.size()));
  put_le(os, static_cast<std::uint64_t>(p.element_count));

  const auto h = unpack(p);
  for (auto w : h.mask().widths())
    put_le(os, w);
  for (const auto &plane : p.planes) {
    put_f32(os, plane.scale);
    for (auto w : plane.activity)
      put_le(os, w);
    for (auto w : plane.signs)
      put_le(os, w);
  }
}

PackedPlanes read_hbt(std::istream &is) {
  expect_magic(is, "HBT1");
  const auto version = get_le<std::uint32_t>(is);
  if (version != kHbtVersion)
    fail(ErrorKind::Format, "unsupported HBT version " + std::to_string(version));

  PackedPlanes p;
  p.shape = get_shape(is);
  const auto max_bits = get_le<std::uint8_t>(is);
  p.element_count = get_le<std::uint64_t>(is);
  if (p.element_count != shape_size(p.shape))
    fail(ErrorKind::Format, "element count does not match dims");
  if (max_bits < 1 || max_bits > kMaxBits)
    fail(ErrorKind::Format, "max_bits out of range");

  std::vector<std::uint8_t> mask(p.element_count);
  for (auto &m : mask)
    m = get_le<std::uint8_t>(is);

  const std::size_t words = p.words();
  p.planes.resize(max_bits);
  for (auto &plane : p.planes) {
    plane.scale = get_f32(is);
    plane.activity.resize(words);
    plane.signs.resize(words);
    for (auto &w : plane.activity)
      w = get_le<std::uint64_t>(is);
    for (auto &w : plane.signs)
      w = get_le<std::uint64_t>(is);
  }

  const auto h = unpack(p);
  if (h.mask().widths() != mask)
    fail(ErrorKind::Format, "mask bytes disagree with plane activity");
  if (h.mask().max_bits() != max_bits)
    fail(ErrorKind::Format, "max_bits disagrees with mask");
  return p;
}

void save_hbt(const std::string &path, const PackedPlanes &p) {
  with_output(path, [&](std::ostream &os) { write_hbt(os, p); });
}

PackedPlanes load_hbt(const std::string &path) {
  auto is = open_input(path);
  return read_hbt(is);
}

void write_raw_tensor(std::ostream &os, const Tensor &t) {
  os.write("RAWTENS1", 8);
  put_shape(os, t.shape());
  for (double v : t.values())
    put_f32(os, v);
}

Tensor read_raw_tensor(std::istream &is) {
  expect_magic(is, "RAWTENS1");
  Shape shape = get_shape(is);
  std::vector<double> data(shape_size(shape));
  for (auto &v : data)
    v = get_f32(is);
  return Tensor(std::move(shape), std::move(data));
}

void save_raw_tensor(const std::string &path, const Tensor &t) {
  with_output(path, [&](std::ostream &os) { write_raw_tensor(os, t); });
}

Tensor load_raw_tensor(const std::string &path) {
  auto is = open_input(path);
  return read_raw_tensor(is);
}

} // namespace hbnn
