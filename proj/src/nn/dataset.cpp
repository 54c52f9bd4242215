#include "hbnn/nn/dataset.hpp"

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "hbnn/error.hpp"
#include "hbnn/rng.hpp"

namespace hbnn::nn {

namespace {

constexpr std::size_t kPlane = kImageSide * kImageSide;
constexpr std::size_t kImage = kImageChannels * kPlane;

struct Blob {
  double cx, cy, radius;
  std::array<double, 3> colour;
};

using ClassPattern = std::vector<Blob>;

constexpr std::size_t kBlobsPerClass = 4;
constexpr int kMaxShift = 3;

std::vector<ClassPattern> make_patterns(std::size_t classes, Rng &rng) {
  std::vector<ClassPattern> out(classes);
  for (auto &pattern : out)
    for (std::size_t b = 0; b < kBlobsPerClass; ++b) {
      Blob blob{};
      blob.cx = 6.0 + 20.0 * rng.uniform();
      blob.cy = 6.0 + 20.0 * rng.uniform();
      blob.radius = 2.5 + 4.0 * rng.uniform();
      for (auto &v : blob.colour)
        v = 2.0 * rng.uniform() - 1.0;
      pattern.push_back(blob);
    }
  return out;
}

void render(const ClassPattern &p, double weight, int dx, int dy, double *img) {
  for (const auto &blob : p) {
    const double inv = 1.0 / (2.0 * blob.radius * blob.radius);
    for (std::size_t y = 0; y < kImageSide; ++y)
      for (std::size_t x = 0; x < kImageSide; ++x) {
        const double ex = static_cast<double>(x) - blob.cx - dx;
        const double ey = static_cast<double>(y) - blob.cy - dy;
        const double v = weight * std::exp(-(ex * ex + ey * ey) * inv);
        for (std::size_t ch = 0; ch < kImageChannels; ++ch)
          img[ch * kPlane + y * kImageSide + x] += v * blob.colour[ch];
      }
  }
}

int shift(Rng &rng) {
  return static_cast<int>(rng.below(2 * kMaxShift + 1)) - kMaxShift;
}

Dataset generate(const std::vector<ClassPattern> &patterns, std::size_t n, Rng &rng, double noise) {
  Dataset d;
  d.classes = patterns.size();
  d.images = Tensor({n, kImageChannels, kImageSide, kImageSide});
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<std::size_t>(rng.below(patterns.size()));
    auto other = static_cast<std::size_t>(rng.below(patterns.size() - 1));
    if (other >= label)
      ++other;
    d.labels[i] = static_cast<int>(label);
    double *img = d.images.raw() + i * kImage;
    const double contrast = 0.6 + 0.8 * rng.uniform();
    render(patterns[label], contrast, shift(rng), shift(rng), img);
    render(patterns[other], contrast * 0.7 * rng.uniform(), shift(rng), shift(rng), img);
    for (std::size_t j = 0; j < kImage; ++j)
      img[j] += noise * rng.gaussian();
  }
  return d;
}

void read_cifar_file(const std::filesystem::path &path, std::size_t want, Dataset &d,
                     std::size_t &filled) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    fail(ErrorKind::Io, "cannot open " + path.string() +
                            "; download the CIFAR-10 binary version from "
                            "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz and "
                            "extract it, or use dataset = synthetic");
  std::array<unsigned char, kImage + 1> rec{};
  while (filled < want && in.read(reinterpret_cast<char *>(rec.data()), rec.size())) {
    if (rec[0] >= 10)
      fail(ErrorKind::Format, path.string() + ": label byte out of range");
    d.labels[filled] = rec[0];
    double *img = d.images.raw() + filled * kImage;
    for (std::size_t j = 0; j < kImage; ++j)
      img[j] = rec[j + 1] / 255.0;
    ++filled;
  }
}

} // namespace

Tensor Dataset::batch_images(std::span<const std::size_t> indices,
                             const std::vector<bool> *flip) const {
  Tensor out({indices.size(), kImageChannels, kImageSide, kImageSide});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    if (indices[b] >= size())
      fail(ErrorKind::InvalidInput, "sample index out of range");
    const double *src = images.raw() + indices[b] * kImage;
    double *dst = out.raw() + b * kImage;
    const bool mirror = flip && (*flip)[b];
    for (std::size_t ch = 0; ch < kImageChannels; ++ch)
      for (std::size_t y = 0; y < kImageSide; ++y)
        for (std::size_t x = 0; x < kImageSide; ++x) {
          const std::size_t sx = mirror ? kImageSide - 1 - x : x;
          dst[ch * kPlane + y * kImageSide + x] = src[ch * kPlane + y * kImageSide + sx];
        }
  }
  return out;
}

std::vector<int> Dataset::batch_labels(std::span<const std::size_t> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (auto i : indices)
    out.push_back(labels.at(i));
  return out;
}

DataSplit synthetic_dataset(std::size_t train_n, std::size_t test_n, std::uint64_t seed,
                            double noise) {
  if (train_n == 0 || test_n == 0)
    fail(ErrorKind::EmptyInput, "dataset sizes must be positive");
  Rng pattern_rng = Rng::derive(seed, 1);
  const auto patterns = make_patterns(10, pattern_rng);
  Rng train_rng = Rng::derive(seed, 2);
  Rng test_rng = Rng::derive(seed, 3);
  return {generate(patterns, train_n, train_rng, noise), generate(patterns, test_n, test_rng, noise)};
}

DataSplit load_cifar_binary(const std::string &dir, std::size_t train_n, std::size_t test_n) {
  if (train_n == 0 || test_n == 0)
    fail(ErrorKind::EmptyInput, "dataset sizes must be positive");
  if (train_n > 50000 || test_n > 10000)
    fail(ErrorKind::InvalidInput, "CIFAR-10 has 50000 training and 10000 test images");
  const std::filesystem::path root(dir);
  DataSplit s;
  for (Dataset *d : {&s.train, &s.test}) {
    const std::size_t n = d == &s.train ? train_n : test_n;
    d->images = Tensor({n, kImageChannels, kImageSide, kImageSide});
    d->labels.assign(n, 0);
  }
  std::size_t filled = 0;
  for (int b = 1; b <= 5 && filled < train_n; ++b)
    read_cifar_file(root / ("data_batch_" + std::to_string(b) + ".bin"), train_n, s.train, filled);
  if (filled < train_n)
    fail(ErrorKind::Format, "CIFAR training files hold fewer records than requested");
  filled = 0;
  read_cifar_file(root / "test_batch.bin", test_n, s.test, filled);
  if (filled < test_n)
    fail(ErrorKind::Format, "CIFAR test file holds fewer records than requested");
  return s;
}

void normalize_per_channel(DataSplit &split) {
  const std::size_t n = split.train.size();
  std::array<double, kImageChannels> mean{}, sd{};
  for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < kPlane; ++j) {
        const double v = split.train.images[i * kImage + ch * kPlane + j];
        sum += v;
        sq += v * v;
      }
    const double count = static_cast<double>(n * kPlane);
    mean[ch] = sum / count;
    sd[ch] = std::sqrt(std::max(sq / count - mean[ch] * mean[ch], 1e-12));
  }
  for (Dataset *d : {&split.train, &split.test})
    for (std::size_t i = 0; i < d->size(); ++i)
      for (std::size_t ch = 0; ch < kImageChannels; ++ch)
        for (std::size_t j = 0; j < kPlane; ++j) {
          double &v = d->images[i * kImage + ch * kPlane + j];
          v = (v - mean[ch]) / sd[ch];
        }
}

} // namespace hbnn::nn
