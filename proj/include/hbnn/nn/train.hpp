#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "hbnn/nn/dataset.hpp"
#include "hbnn/nn/network.hpp"

namespace hbnn::nn {

/// When weight masks are regenerated from the shadow weights.
struct MaskRefresh {
  enum class Kind { EveryForward, EveryEpoch, FrozenAfter };
  Kind kind = Kind::EveryForward;
  std::size_t epoch = 0; ///< FrozenAfter: masks stop changing after this many epochs.

  /// "every-forward", "every-epoch" or "frozen-after:K".
  static MaskRefresh parse(const std::string &text);
  std::string name() const;
};

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  MaskRefresh mask_refresh;
  bool flip = true; ///< Random horizontal flip of training samples.
};

struct SgdState {
  std::vector<Tensor> velocity;
};

/// v <- momentum*v + grad + weight_decay*w, then w <- w - lr*v, per tensor.
void sgd_step(ShadowWeights &shadow, const Gradients &grads, const TrainConfig &cfg,
              SgdState &state);

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_top1 = 0.0;
  /// Largest |mask average - configured B| seen across refreshes this epoch.
  double max_mask_error = 0.0;
};

struct TrainOutcome {
  std::vector<EpochLog> epochs;
  std::vector<double> batch_losses;
  double test_top1 = 0.0;
  double wall_seconds = 0.0;
  MaskSet final_masks; ///< Empty under every-forward refresh.
};

/// Top-1 accuracy in percent.
double evaluate(const Network &net, const Dataset &data, std::size_t batch_size,
                const MaskSet *masks = nullptr);

using ProgressFn = std::function<void(const EpochLog &)>;

TrainOutcome train_model(Network &net, const Dataset &train, const Dataset &test,
                         const TrainConfig &cfg, const ProgressFn &progress = {});

/// One sweep point: input and weight binarization for the template.
struct SweepPoint {
  std::string id;
  QuantSpec inputs;
  QuantSpec weights;
  std::vector<QuantSpec> per_layer_weights; ///< Layer-level homogeneous mixes.

  std::string m_bits() const;
  std::string n_bits() const;
  std::string heuristic() const;
  std::string distribution() const;
};

/// "m:n[:heuristic[:policy]]": m and n are an average bitwidth or "full", and
/// n may also list per-layer widths separated by '|'.
SweepPoint parse_sweep_point(const std::string &text);

struct SweepConfig {
  std::string model = "conv4"; ///< conv4 or dwsep.
  std::size_t width_multiplier = 1;
  bool exclude_io = true;
  double scaling_init = 0.01;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1};
  std::vector<SweepPoint> points;
  bool verify_packed = false;
  std::size_t verify_samples = 16;
  std::string checkpoint_dir; ///< Empty disables checkpoints.
};

struct SweepRow {
  std::string point_id;
  std::string m_bits;
  std::string n_bits;
  std::string heuristic;
  std::string distribution;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  double wall_seconds = 0.0;
  std::optional<double> packed_divergence;
};

NetworkSpec sweep_network(const SweepConfig &cfg, const SweepPoint &point, std::size_t classes);

using SweepProgressFn = std::function<void(const SweepRow &)>;

std::vector<SweepRow> run_sweep(const Dataset &train, const Dataset &test, const SweepConfig &cfg,
                                const SweepProgressFn &progress = {});

/// Header: point-id,m_bits,n_bits,heuristic,distribution,seed,top1,wall_seconds
void write_sweep_csv(std::ostream &os, const std::vector<SweepRow> &rows);

/// Largest absolute logit difference between packed and dense Eval inference.
double packed_divergence(const Network &net, const Tensor &batch);

/// Checkpoint: u32 tensor count, then each tensor in the raw tensor layout.
void save_checkpoint(const std::string &path, const ShadowWeights &weights);
std::vector<Tensor> load_checkpoint(const std::string &path);

} // namespace hbnn::nn
