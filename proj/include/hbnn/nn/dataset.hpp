#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hbnn/tensor.hpp"

namespace hbnn::nn {

/// Images as (N, 3, 32, 32) plus one label per image.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::size_t classes = 10;

  std::size_t size() const noexcept { return labels.size(); }
  /// Copies the selected samples, optionally mirroring each one horizontally.
  Tensor batch_images(std::span<const std::size_t> indices,
                      const std::vector<bool> *flip = nullptr) const;
  std::vector<int> batch_labels(std::span<const std::size_t> indices) const;
};

struct DataSplit {
  Dataset train;
  Dataset test;
};

inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImageSide = 32;

/// Deterministic 10-class 32x32 RGB task: each class is a fixed layout of
/// coloured Gaussian blobs; samples get a random shift of up to 3 pixels,
/// random contrast, a weaker shifted copy of another class and pixel noise.
DataSplit synthetic_dataset(std::size_t train_n, std::size_t test_n, std::uint64_t seed,
                            double noise = 2.0);

/// CIFAR-10 binary version: `dir` holds data_batch_1.bin .. data_batch_5.bin
/// and test_batch.bin, each a run of 3073-byte records (label byte, then
/// 1024 red, 1024 green, 1024 blue bytes in row-major order). The first
/// train_n / test_n records are used. Missing files throw Io.
DataSplit load_cifar_binary(const std::string &dir, std::size_t train_n, std::size_t test_n);

/// Standardizes every channel with the training-set mean and deviation.
void normalize_per_channel(DataSplit &split);

} // namespace hbnn::nn
