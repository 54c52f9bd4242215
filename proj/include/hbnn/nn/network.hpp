#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hbnn/binarize.hpp"
#include "hbnn/bit_alloc.hpp"
#include "hbnn/nn/ops.hpp"
#include "hbnn/tensor.hpp"

namespace hbnn::nn {

/// How a tensor is binarized inside the network; no average = full precision.
struct QuantSpec {
  std::optional<double> avg_bits;
  SortHeuristic heuristic = SortHeuristic::middle_out();
  DistPolicy policy = DistPolicy::adjacent();

  bool enabled() const noexcept { return avg_bits.has_value(); }
  static QuantSpec full() { return {}; }
  static QuantSpec bits(double b, SortHeuristic h = SortHeuristic::middle_out(),
                        DistPolicy p = DistPolicy::adjacent()) {
    return {b, h, std::move(p)};
  }
  std::string describe() const;
};

enum class LayerKind {
  Conv2d,
  DepthwiseConv2d,
  PointwiseConv2d,
  Dense,
  BatchNorm,
  /// Hard-tanh clip; with `input_quant` enabled the clipped activations are
  /// residual-binarized per sample (these become the next layer's inputs).
  ActivationBinarize,
  Scaling,
  GlobalAvgPool,
  /// Terminal marker: the network outputs logits, the loss lives in
  /// softmax_cross_entropy().
  SoftmaxCrossEntropy,
};

const char *to_string(LayerKind kind);

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::string name;
  std::size_t in_channels = 0;  ///< Channels, or features for dense.
  std::size_t out_channels = 0; ///< Output channels, or features for dense.
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool bias = false;
  double scaling_init = 0.01;
  QuantSpec weight_quant;
  QuantSpec input_quant;

  bool parameterized() const noexcept;
};

struct NetworkSpec {
  std::size_t in_channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t classes = 10;
  bool exclude_io = true;
  std::vector<LayerSpec> layers;
};

/// Options for the bundled desk-scale models.
struct TemplateOptions {
  std::size_t width_multiplier = 1;
  QuantSpec weights;                          ///< Applied to every quantizable layer...
  std::vector<QuantSpec> per_layer_weights;   ///< ...unless given per layer here.
  QuantSpec inputs;                           ///< Activation binarization.
  bool exclude_io = true;
  double scaling_init = 0.01;
};

/// Four-layer fully convolutional net: three stride-2 3x3 conv blocks
/// (conv, batch-norm, activation) and a 4x4 conv producing class logits.
NetworkSpec conv4_template(const TemplateOptions &opt, std::size_t classes = 10);

/// Stem conv plus three depthwise-separable blocks, global pooling and a
/// dense classifier. Only pointwise and classifier weights are quantized.
NetworkSpec dwsep_template(const TemplateOptions &opt, std::size_t classes = 10);

/// Parameterized layers (conv, dense) in spec order, as indices into layers.
std::vector<std::size_t> parameterized_layers(const NetworkSpec &spec);

/// Full-precision trainable parameters; binarization never writes them.
struct ShadowWeights {
  std::vector<Tensor> tensors;
  /// Per layer: index of its first parameter tensor (-1 when none).
  std::vector<long> first_param;
};

using Gradients = std::vector<Tensor>;

/// Weight masks keyed by layer index.
using MaskSet = std::map<std::size_t, BitMask>;

enum class Mode { Train, Eval };

struct LayerCache {
  Shape input_shape;
  Tensor input;                ///< Kept only where backward needs it.
  Tensor aux;                  ///< im2col columns, normalized BN input, or clipped input.
  Tensor quantized_weight;     ///< Weight actually used in the forward pass.
  std::vector<double> inv_std;
  std::vector<double> batch_mean;
  std::vector<double> batch_var;
};

struct ForwardCache {
  bool valid = false;
  Mode mode = Mode::Eval;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

class Network {
public:
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec &spec() const noexcept { return spec_; }
  ShadowWeights &weights() noexcept { return weights_; }
  const ShadowWeights &weights() const noexcept { return weights_; }

  /// Weight tensor of a parameterized layer.
  const Tensor &layer_weight(std::size_t layer) const;

  /// Batch is (N, C, H, W). Weight-quantized layers use `masks` when present,
  /// otherwise derive a mask from the current shadow weights.
  ForwardResult forward(const Tensor &batch, Mode mode, const MaskSet *masks = nullptr) const;

  /// Parameter gradients given dLoss/dLogits; binarization nodes use the
  /// straight-through estimator.
  Gradients backward(const ForwardCache &cache, const Tensor &logits_grad) const;

  /// Also returns the gradient with respect to the network input.
  Gradients backward(const ForwardCache &cache, const Tensor &logits_grad, Tensor *input_grad) const;

  /// Folds batch statistics from a training forward pass into the running
  /// batch-norm statistics used in Eval mode.
  void commit_batch_stats(const ForwardCache &cache, double momentum = 0.1);

  /// Masks for every weight-quantized layer from the current shadow weights.
  MaskSet weight_masks() const;

  /// Eval-mode inference in which every layer with quantized weights fed by
  /// binarized activations runs on packed planes with xnor_dot.
  Tensor infer_packed(const Tensor &batch, const MaskSet *masks = nullptr) const;

  struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
  };
  const std::vector<RunningStats> &running_stats() const noexcept { return running_; }

private:
  Tensor apply_layer(std::size_t li, Tensor in, Mode mode, const MaskSet *masks,
                     LayerCache &cache) const;

  NetworkSpec spec_;
  std::vector<std::vector<std::size_t>> shapes_; ///< Per-sample input shape of each layer, then the output.
  ShadowWeights weights_;
  std::vector<RunningStats> running_;
};

struct LossResult {
  double loss = 0.0;
  Tensor grad;              ///< dLoss/dLogits, already divided by the batch size.
  std::size_t correct = 0;
};

LossResult softmax_cross_entropy(const Tensor &logits, const std::vector<int> &labels);

} // namespace hbnn::nn
