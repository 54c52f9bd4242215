#include "hbnn/nn/network.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "hbnn/packed.hpp"
#include "hbnn/rng.hpp"

namespace hbnn::nn {

namespace {

constexpr double kBnEps = 1e-5;

// Activation shape per sample: {C, H, W} or {F}.
using SampleShape = std::vector<std::size_t>;

std::size_t prod(const SampleShape &s) {
  std::size_t n = 1;
  for (auto d : s)
    n *= d;
  return n;
}

ConvGeometry geometry_of(const LayerSpec &l, const SampleShape &in) {
  ConvGeometry g;
  g.channels = in[0];
  g.height = in[1];
  g.width = in[2];
  g.kernel = l.kernel;
  g.stride = l.stride;
  g.padding = l.padding;
  return g;
}

Tensor clip_unit(const Tensor &x) {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = std::clamp(x[i], -1.0, 1.0);
  return y;
}

Tensor sample_slice(const Tensor &batch, std::size_t n, const SampleShape &shape) {
  const std::size_t per = prod(shape);
  std::vector<double> data(batch.raw() + n * per, batch.raw() + (n + 1) * per);
  return Tensor(shape, std::move(data));
}

HeterogeneousBinaryTensor quantize(const Tensor &t, const QuantSpec &q, const BitMask *mask) {
  if (mask)
    return hetero_binarize(t, *mask);
  return hetero_binarize(t, generate_mask(t, *q.avg_bits, q.heuristic, q.policy));
}

std::vector<SampleShape> propagate_shapes(const NetworkSpec &spec) {
  std::vector<SampleShape> shapes;
  SampleShape cur = {spec.in_channels, spec.height, spec.width};
  for (const auto &l : spec.layers) {
    shapes.push_back(cur);
    const std::string where = "layer '" + l.name + "'";
    switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::PointwiseConv2d:
    case LayerKind::DepthwiseConv2d: {
      if (cur.size() != 3 || cur[0] != l.in_channels)
        fail(ErrorKind::ShapeMismatch, where + ": input channel mismatch");
      if (l.kind == LayerKind::PointwiseConv2d && l.kernel != 1)
        fail(ErrorKind::InvalidShape, where + ": pointwise kernel must be 1");
      if (l.kind == LayerKind::DepthwiseConv2d && l.out_channels != l.in_channels)
        fail(ErrorKind::InvalidShape, where + ": depthwise conv keeps the channel count");
      if (l.kernel == 0 || l.stride == 0 || cur[1] + 2 * l.padding < l.kernel ||
          cur[2] + 2 * l.padding < l.kernel)
        fail(ErrorKind::InvalidShape, where + ": kernel does not fit the input");
      const auto g = geometry_of(l, cur);
      cur = {l.out_channels, g.out_height(), g.out_width()};
      break;
    }
    case LayerKind::Dense:
      if (prod(cur) != l.in_channels)
        fail(ErrorKind::ShapeMismatch, where + ": input features mismatch");
      cur = {l.out_channels};
      break;
    case LayerKind::BatchNorm:
      if (cur[0] != l.in_channels)
        fail(ErrorKind::ShapeMismatch, where + ": channel mismatch");
      break;
    case LayerKind::GlobalAvgPool:
      if (cur.size() != 3)
        fail(ErrorKind::ShapeMismatch, where + ": needs a CHW input");
      cur = {cur[0]};
      break;
    case LayerKind::ActivationBinarize:
    case LayerKind::Scaling:
    case LayerKind::SoftmaxCrossEntropy:
      break;
    }
  }
  shapes.push_back(cur);
  return shapes;
}

} // namespace

std::string QuantSpec::describe() const {
  if (!avg_bits)
    return "full";
  std::ostringstream os;
  os << *avg_bits << ":" << heuristic.name() << ":" << policy.name();
  return os.str();
}

const char *to_string(LayerKind kind) {
  switch (kind) {
  case LayerKind::Conv2d:
    return "conv2d";
  case LayerKind::DepthwiseConv2d:
    return "depthwise-conv2d";
  case LayerKind::PointwiseConv2d:
    return "pointwise-conv2d";
  case LayerKind::Dense:
    return "dense";
  case LayerKind::BatchNorm:
    return "batch-norm";
  case LayerKind::ActivationBinarize:
    return "activation-binarize";
  case LayerKind::Scaling:
    return "scaling";
  case LayerKind::GlobalAvgPool:
    return "global-avg-pool";
  case LayerKind::SoftmaxCrossEntropy:
    return "softmax-cross-entropy";
  }
  return "?";
}

bool LayerSpec::parameterized() const noexcept {
  return kind == LayerKind::Conv2d || kind == LayerKind::DepthwiseConv2d ||
         kind == LayerKind::PointwiseConv2d || kind == LayerKind::Dense;
}

std::vector<std::size_t> parameterized_layers(const NetworkSpec &spec) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (spec.layers[i].parameterized())
      out.push_back(i);
  return out;
}

namespace {

LayerSpec conv(std::string name, std::size_t in, std::size_t out, std::size_t k, std::size_t s,
               std::size_t p, LayerKind kind = LayerKind::Conv2d) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  l.in_channels = in;
  l.out_channels = out;
  l.kernel = k;
  l.stride = s;
  l.padding = p;
  return l;
}

LayerSpec simple(LayerKind kind, std::string name, std::size_t channels = 0) {
  LayerSpec l;
  l.kind = kind;
  l.name = std::move(name);
  l.in_channels = channels;
  l.out_channels = channels;
  return l;
}

QuantSpec weight_quant_for(const TemplateOptions &opt, std::size_t ordinal) {
  if (!opt.per_layer_weights.empty())
    return opt.per_layer_weights.at(std::min(ordinal, opt.per_layer_weights.size() - 1));
  return opt.weights;
}

void finish(NetworkSpec &spec, const TemplateOptions &opt, bool last_quantized) {
  if (last_quantized) {
    auto s = simple(LayerKind::Scaling, "scale");
    s.scaling_init = opt.scaling_init;
    spec.layers.push_back(s);
  }
  spec.layers.push_back(simple(LayerKind::SoftmaxCrossEntropy, "loss"));
}

} // namespace

NetworkSpec conv4_template(const TemplateOptions &opt, std::size_t classes) {
  NetworkSpec spec;
  spec.classes = classes;
  spec.exclude_io = opt.exclude_io;
  const std::size_t m = std::max<std::size_t>(1, opt.width_multiplier);
  const std::size_t c1 = 16 * m, c2 = 32 * m, c3 = 64 * m;

  if (!opt.exclude_io && opt.inputs.enabled()) {
    auto a = simple(LayerKind::ActivationBinarize, "act0");
    a.input_quant = opt.inputs;
    spec.layers.push_back(a);
  }
  const std::size_t chans[4] = {3, c1, c2, c3};
  for (std::size_t i = 0; i < 3; ++i) {
    auto c = conv("conv" + std::to_string(i + 1), chans[i], chans[i + 1], 3, 2, 1);
    c.weight_quant = weight_quant_for(opt, i);
    spec.layers.push_back(c);
    spec.layers.push_back(simple(LayerKind::BatchNorm, "bn" + std::to_string(i + 1), chans[i + 1]));
    auto a = simple(LayerKind::ActivationBinarize, "act" + std::to_string(i + 1));
    // The activation feeding the output layer stays full precision under exclude-io.
    if (!(i == 2 && opt.exclude_io))
      a.input_quant = opt.inputs;
    spec.layers.push_back(a);
  }
  auto out = conv("conv4", c3, classes, 4, 1, 0);
  out.bias = true;
  out.weight_quant = weight_quant_for(opt, 3);
  spec.layers.push_back(out);
  finish(spec, opt, out.weight_quant.enabled());
  return spec;
}

NetworkSpec dwsep_template(const TemplateOptions &opt, std::size_t classes) {
  NetworkSpec spec;
  spec.classes = classes;
  spec.exclude_io = opt.exclude_io;
  const std::size_t m = std::max<std::size_t>(1, opt.width_multiplier);
  const std::size_t c0 = 16 * m;

  spec.layers.push_back(conv("stem", 3, c0, 3, 2, 1));
  spec.layers.push_back(simple(LayerKind::BatchNorm, "stem_bn", c0));
  spec.layers.push_back(simple(LayerKind::ActivationBinarize, "stem_act"));

  struct Block {
    std::size_t in, out, stride;
  };
  const Block blocks[3] = {{c0, 2 * c0, 2}, {2 * c0, 4 * c0, 2}, {4 * c0, 4 * c0, 1}};
  for (std::size_t b = 0; b < 3; ++b) {
    const auto tag = std::to_string(b + 1);
    spec.layers.push_back(conv("dw" + tag, blocks[b].in, blocks[b].in, 3, blocks[b].stride, 1,
                               LayerKind::DepthwiseConv2d));
    spec.layers.push_back(simple(LayerKind::BatchNorm, "dw" + tag + "_bn", blocks[b].in));
    auto a = simple(LayerKind::ActivationBinarize, "dw" + tag + "_act");
    a.input_quant = opt.inputs;
    spec.layers.push_back(a);
    auto pw = conv("pw" + tag, blocks[b].in, blocks[b].out, 1, 1, 0, LayerKind::PointwiseConv2d);
    pw.weight_quant = weight_quant_for(opt, b);
    spec.layers.push_back(pw);
    spec.layers.push_back(simple(LayerKind::BatchNorm, "pw" + tag + "_bn", blocks[b].out));
    spec.layers.push_back(simple(LayerKind::ActivationBinarize, "pw" + tag + "_act"));
  }
  spec.layers.push_back(simple(LayerKind::GlobalAvgPool, "pool"));
  auto fc = simple(LayerKind::Dense, "fc");
  fc.in_channels = 4 * c0;
  fc.out_channels = classes;
  fc.bias = true;
  fc.weight_quant = weight_quant_for(opt, 3);
  spec.layers.push_back(fc);
  finish(spec, opt, fc.weight_quant.enabled());
  return spec;
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
  if (spec_.layers.empty() || spec_.layers.back().kind != LayerKind::SoftmaxCrossEntropy)
    fail(ErrorKind::InvalidInput, "network must end with a softmax-cross-entropy layer");
  shapes_ = propagate_shapes(spec_);
  const auto &shapes = shapes_;
  if (prod(shapes.back()) != spec_.classes)
    fail(ErrorKind::ShapeMismatch, "network output does not match the class count");

  const auto params = parameterized_layers(spec_);
  if (spec_.exclude_io && !params.empty()) {
    // Neither the first nor the last parameterized layer may see binarized inputs.
    for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
      const auto &l = spec_.layers[i];
      if (l.kind != LayerKind::ActivationBinarize || !l.input_quant.enabled())
        continue;
      auto next = std::find_if(params.begin(), params.end(), [i](std::size_t p) { return p > i; });
      if (i < params.front() || (next != params.end() && *next == params.back()))
        fail(ErrorKind::InvalidInput,
             "exclude-io: layer '" + l.name + "' binarizes inputs of an input/output layer");
    }
  }
  for (const auto &l : spec_.layers)
    if (l.parameterized() && l.input_quant.enabled())
      fail(ErrorKind::InvalidInput, "layer '" + l.name +
                                        "': input binarization belongs on the preceding "
                                        "activation-binarize layer");

  Rng rng = Rng::derive(seed, 0x1417);
  weights_.first_param.assign(spec_.layers.size(), -1);
  running_.resize(spec_.layers.size());
  auto uniform_init = [&](Shape shape, std::size_t fan_in) {
    Tensor t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto &v : t.values())
      v = (2.0 * rng.uniform() - 1.0) * bound;
    return t;
  };

  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto &l = spec_.layers[i];
    const auto &in = shapes[i];
    const long first = static_cast<long>(weights_.tensors.size());
    switch (l.kind) {
    case LayerKind::Conv2d:
    case LayerKind::PointwiseConv2d: {
      const std::size_t fan_in = l.in_channels * l.kernel * l.kernel;
      weights_.tensors.push_back(
          uniform_init({l.out_channels, l.in_channels, l.kernel, l.kernel}, fan_in));
      if (l.bias)
        weights_.tensors.push_back(uniform_init({l.out_channels}, fan_in));
      break;
    }
    case LayerKind::DepthwiseConv2d: {
      const std::size_t fan_in = l.kernel * l.kernel;
      weights_.tensors.push_back(uniform_init({l.out_channels, 1, l.kernel, l.kernel}, fan_in));
      if (l.bias)
        weights_.tensors.push_back(uniform_init({l.out_channels}, fan_in));
      break;
    }
    case LayerKind::Dense:
      weights_.tensors.push_back(uniform_init({l.out_channels, l.in_channels}, l.in_channels));
      if (l.bias)
        weights_.tensors.push_back(uniform_init({l.out_channels}, l.in_channels));
      break;
    case LayerKind::BatchNorm:
      weights_.tensors.emplace_back(Shape{in[0]}, 1.0);
      weights_.tensors.emplace_back(Shape{in[0]}, 0.0);
      running_[i].mean.assign(in[0], 0.0);
      running_[i].var.assign(in[0], 1.0);
      break;
    case LayerKind::Scaling:
      weights_.tensors.emplace_back(Shape{1}, l.scaling_init);
      break;
    default:
      break;
    }
    if (static_cast<long>(weights_.tensors.size()) != first)
      weights_.first_param[i] = first;
  }
}

const Tensor &Network::layer_weight(std::size_t layer) const {
  const long first = weights_.first_param.at(layer);
  if (first < 0)
    fail(ErrorKind::InvalidInput, "layer has no parameters");
  return weights_.tensors[static_cast<std::size_t>(first)];
}

MaskSet Network::weight_masks() const {
  MaskSet masks;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto &l = spec_.layers[i];
    if (l.parameterized() && l.weight_quant.enabled()) {
      const auto &q = l.weight_quant;
      masks.emplace(i, generate_mask(layer_weight(i), *q.avg_bits, q.heuristic, q.policy));
    }
  }
  return masks;
}

Tensor Network::apply_layer(std::size_t li, Tensor in, Mode mode, const MaskSet *masks,
                            LayerCache &cache) const {
  const auto &l = spec_.layers[li];
  const auto &shapes = shapes_;
  const std::size_t batch_n = in.dim(0);
  const auto &in_shape = shapes[li];
  const auto &out_shape = shapes[li + 1];
  cache.input_shape = in.shape();
  if (l.kind == LayerKind::Scaling || l.kind == LayerKind::ActivationBinarize ||
      l.kind == LayerKind::Dense || l.kind == LayerKind::DepthwiseConv2d)
    cache.input = in;
  Tensor x = std::move(in);
  const long first = weights_.first_param[li];
  auto param = [&](long offset) -> const Tensor & {
    return weights_.tensors[static_cast<std::size_t>(first + offset)];
  };

  Shape out_full = {batch_n};
  out_full.insert(out_full.end(), out_shape.begin(), out_shape.end());

  switch (l.kind) {
  case LayerKind::Conv2d:
  case LayerKind::PointwiseConv2d:
  case LayerKind::DepthwiseConv2d:
  case LayerKind::Dense: {
    const Tensor &w = param(0);
    if (l.weight_quant.enabled()) {
      const BitMask *mask = nullptr;
      if (masks) {
        auto it = masks->find(li);
        if (it != masks->end())
          mask = &it->second;
      }
      cache.quantized_weight = reconstruct(quantize(w, l.weight_quant, mask));
    } else {
      cache.quantized_weight = w;
    }
    const Tensor &wq = cache.quantized_weight;
    Tensor y(out_full);

    if (l.kind == LayerKind::Dense) {
      const std::size_t f = l.in_channels, o = l.out_channels;
      gemm_nt(x.values(), wq.values(), y.values(), batch_n, f, o, false);
      if (l.bias)
        for (std::size_t n = 0; n < batch_n; ++n)
          for (std::size_t j = 0; j < o; ++j)
            y[n * o + j] += param(1)[j];
    } else if (l.kind == LayerKind::DepthwiseConv2d) {
      const auto g = geometry_of(l, in_shape);
      const std::size_t oh = g.out_height(), ow = g.out_width(), k = g.kernel;
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t c = 0; c < g.channels; ++c) {
          const double *img = x.raw() + (n * g.channels + c) * g.height * g.width;
          double *out = y.raw() + (n * g.channels + c) * oh * ow;
          for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
              double sum = l.bias ? param(1)[c] : 0.0;
              for (std::size_t ky = 0; ky < k; ++ky) {
                const long iy =
                    static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.padding);
                if (iy < 0 || iy >= static_cast<long>(g.height))
                  continue;
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long ix =
                      static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.padding);
                  if (ix < 0 || ix >= static_cast<long>(g.width))
                    continue;
                  sum += wq[(c * k + ky) * k + kx] *
                         img[static_cast<std::size_t>(iy) * g.width + static_cast<std::size_t>(ix)];
                }
              }
              out[oy * ow + ox] = sum;
            }
        }
    } else {
      const auto g = geometry_of(l, in_shape);
      const std::size_t kk = g.patch_size(), p = g.positions(), o = l.out_channels;
      const std::size_t wide = batch_n * p, per = prod(in_shape);
      // One column matrix for the whole batch: sample n owns columns [n*p, (n+1)*p).
      cache.aux = Tensor({kk, wide});
      for (std::size_t n = 0; n < batch_n; ++n)
        im2col(std::span<const double>(x.raw() + n * per, per), g,
               std::span<double>(cache.aux.raw() + n * p, kk * wide - n * p), wide);
      std::vector<double> out(o * wide);
      gemm_nn(wq.values(), cache.aux.values(), out, o, kk, wide, false);
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t j = 0; j < o; ++j) {
          const double b = l.bias ? param(1)[j] : 0.0;
          for (std::size_t q = 0; q < p; ++q)
            y[(n * o + j) * p + q] = out[j * wide + n * p + q] + b;
        }
    }
    x = std::move(y);
    break;
  }
  case LayerKind::BatchNorm: {
    const std::size_t c = in_shape[0];
    const std::size_t spatial = prod(in_shape) / c;
    const double count = static_cast<double>(batch_n * spatial);
    cache.batch_mean.assign(c, 0.0);
    cache.batch_var.assign(c, 0.0);
    cache.inv_std.assign(c, 0.0);
    if (mode == Mode::Train) {
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t s = 0; s < spatial; ++s)
            cache.batch_mean[ch] += x[(n * c + ch) * spatial + s];
      for (auto &m : cache.batch_mean)
        m /= count;
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t s = 0; s < spatial; ++s) {
            const double d = x[(n * c + ch) * spatial + s] - cache.batch_mean[ch];
            cache.batch_var[ch] += d * d;
          }
      for (auto &v : cache.batch_var)
        v /= count;
    } else {
      cache.batch_mean = running_[li].mean;
      cache.batch_var = running_[li].var;
    }
    for (std::size_t ch = 0; ch < c; ++ch)
      cache.inv_std[ch] = 1.0 / std::sqrt(cache.batch_var[ch] + kBnEps);
    cache.aux = Tensor(x.shape());
    Tensor y(x.shape());
    const Tensor &gamma = param(0), &beta = param(1);
    for (std::size_t n = 0; n < batch_n; ++n)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t idx = (n * c + ch) * spatial + s;
          const double xhat = (x[idx] - cache.batch_mean[ch]) * cache.inv_std[ch];
          cache.aux[idx] = xhat;
          y[idx] = gamma[ch] * xhat + beta[ch];
        }
    x = std::move(y);
    break;
  }
  case LayerKind::ActivationBinarize: {
    Tensor y = clip_unit(x);
    if (l.input_quant.enabled()) {
      const std::size_t per = prod(in_shape);
      for (std::size_t n = 0; n < batch_n; ++n) {
        const Tensor sample = sample_slice(y, n, in_shape);
        const Tensor q = reconstruct(quantize(sample, l.input_quant, nullptr));
        std::copy(q.values().begin(), q.values().end(), y.raw() + n * per);
      }
    }
    x = std::move(y);
    break;
  }
  case LayerKind::Scaling: {
    const double s = param(0)[0];
    for (auto &v : x.values())
      v *= s;
    break;
  }
  case LayerKind::GlobalAvgPool: {
    const std::size_t c = in_shape[0], spatial = in_shape[1] * in_shape[2];
    Tensor y(out_full);
    for (std::size_t n = 0; n < batch_n; ++n)
      for (std::size_t ch = 0; ch < c; ++ch) {
        double sum = 0.0;
        for (std::size_t s = 0; s < spatial; ++s)
          sum += x[(n * c + ch) * spatial + s];
        y[n * c + ch] = sum / static_cast<double>(spatial);
      }
    x = std::move(y);
    break;
  }
  case LayerKind::SoftmaxCrossEntropy:
    x = x.reshaped({batch_n, spec_.classes});
    break;
  }
  if (!x.all_finite())
    fail(ErrorKind::NumericFailure, "non-finite activation after layer '" + l.name + "'");
  return x;
}

ForwardResult Network::forward(const Tensor &batch, Mode mode, const MaskSet *masks) const {
  if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels || batch.dim(2) != spec_.height ||
      batch.dim(3) != spec_.width)
    fail(ErrorKind::ShapeMismatch, "input batch must be (N, " + std::to_string(spec_.in_channels) +
                                       ", " + std::to_string(spec_.height) + ", " +
                                       std::to_string(spec_.width) + ")");
  ForwardResult result;
  result.cache.mode = mode;
  result.cache.layers.resize(spec_.layers.size());
  Tensor x = batch;

  for (std::size_t li = 0; li < spec_.layers.size(); ++li)
    x = apply_layer(li, std::move(x), mode, masks, result.cache.layers[li]);
  result.logits = std::move(x);
  result.cache.valid = true;
  return result;
}

Gradients Network::backward(const ForwardCache &cache, const Tensor &logits_grad) const {
  return backward(cache, logits_grad, nullptr);
}

Gradients Network::backward(const ForwardCache &cache, const Tensor &logits_grad,
                            Tensor *input_grad) const {
  if (!cache.valid || cache.layers.size() != spec_.layers.size())
    fail(ErrorKind::Usage, "backward called without a valid forward cache");
  const auto &shapes = shapes_;
  const std::size_t batch_n = cache.layers.front().input_shape.at(0);
  if (logits_grad.size() != batch_n * spec_.classes)
    fail(ErrorKind::ShapeMismatch, "logit gradient has the wrong size");

  Gradients grads;
  grads.reserve(weights_.tensors.size());
  for (const auto &t : weights_.tensors)
    grads.emplace_back(t.shape(), 0.0);

  Tensor g = logits_grad;
  for (std::size_t li = spec_.layers.size(); li-- > 0;) {
    const auto &l = spec_.layers[li];
    const auto &lc = cache.layers[li];
    const auto &in_shape = shapes[li];
    const long first = weights_.first_param[li];
    auto grad_of = [&](long offset) -> Tensor & {
      return grads[static_cast<std::size_t>(first + offset)];
    };
    auto param = [&](long offset) -> const Tensor & {
      return weights_.tensors[static_cast<std::size_t>(first + offset)];
    };
    Tensor dx(lc.input_shape);

    switch (l.kind) {
    case LayerKind::SoftmaxCrossEntropy:
      dx = g.reshaped(lc.input_shape);
      break;
    case LayerKind::Scaling: {
      const double s = param(0)[0];
      double ds = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) {
        ds += g[i] * lc.input[i];
        dx[i] = s * g[i];
      }
      grad_of(0)[0] = ds;
      break;
    }
    case LayerKind::GlobalAvgPool: {
      const std::size_t c = in_shape[0], spatial = in_shape[1] * in_shape[2];
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t s = 0; s < spatial; ++s)
            dx[(n * c + ch) * spatial + s] = g[n * c + ch] / static_cast<double>(spatial);
      break;
    }
    case LayerKind::ActivationBinarize:
      // Straight-through: the clip and the optional binarization share the
      // indicator 1[|x| <= 1].
      dx = ste_gradient(lc.input, g.reshaped(lc.input.shape()));
      break;
    case LayerKind::BatchNorm: {
      const std::size_t c = in_shape[0];
      const std::size_t spatial = prod(in_shape) / c;
      const double count = static_cast<double>(batch_n * spatial);
      const Tensor &gamma = param(0);
      Tensor &dgamma = grad_of(0), &dbeta = grad_of(1);
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t idx = (n * c + ch) * spatial + s;
            dgamma[ch] += g[idx] * lc.aux[idx];
            dbeta[ch] += g[idx];
          }
      for (std::size_t n = 0; n < batch_n; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t s = 0; s < spatial; ++s) {
            const std::size_t idx = (n * c + ch) * spatial + s;
            if (cache.mode == Mode::Train)
              dx[idx] = gamma[ch] * lc.inv_std[ch] / count *
                        (count * g[idx] - dbeta[ch] - lc.aux[idx] * dgamma[ch]);
            else
              dx[idx] = gamma[ch] * lc.inv_std[ch] * g[idx];
          }
      break;
    }
    case LayerKind::Conv2d:
    case LayerKind::PointwiseConv2d:
    case LayerKind::DepthwiseConv2d:
    case LayerKind::Dense: {
      const Tensor &wq = lc.quantized_weight;
      Tensor dwq(wq.shape(), 0.0);
      if (l.kind == LayerKind::Dense) {
        const std::size_t f = l.in_channels, o = l.out_channels;
        gemm_tn(g.values(), lc.input.values(), dwq.values(), batch_n, o, f, false);
        gemm_nn(g.values(), wq.values(), dx.values(), batch_n, o, f, false);
        if (l.bias)
          for (std::size_t n = 0; n < batch_n; ++n)
            for (std::size_t j = 0; j < o; ++j)
              grad_of(1)[j] += g[n * o + j];
      } else if (l.kind == LayerKind::DepthwiseConv2d) {
        const auto geo = geometry_of(l, in_shape);
        const std::size_t oh = geo.out_height(), ow = geo.out_width(), k = geo.kernel;
        for (std::size_t n = 0; n < batch_n; ++n)
          for (std::size_t c = 0; c < geo.channels; ++c) {
            const std::size_t img_off = (n * geo.channels + c) * geo.height * geo.width;
            const double *gout = g.raw() + (n * geo.channels + c) * oh * ow;
            for (std::size_t oy = 0; oy < oh; ++oy)
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const double go = gout[oy * ow + ox];
                if (l.bias)
                  grad_of(1)[c] += go;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  const long iy =
                      static_cast<long>(oy * geo.stride + ky) - static_cast<long>(geo.padding);
                  if (iy < 0 || iy >= static_cast<long>(geo.height))
                    continue;
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const long ix =
                        static_cast<long>(ox * geo.stride + kx) - static_cast<long>(geo.padding);
                    if (ix < 0 || ix >= static_cast<long>(geo.width))
                      continue;
                    const std::size_t in_idx = img_off + static_cast<std::size_t>(iy) * geo.width +
                                               static_cast<std::size_t>(ix);
                    dwq[(c * k + ky) * k + kx] += go * lc.input[in_idx];
                    dx[in_idx] += go * wq[(c * k + ky) * k + kx];
                  }
                }
              }
          }
      } else {
        const auto geo = geometry_of(l, in_shape);
        const std::size_t kk = geo.patch_size(), p = geo.positions(), o = l.out_channels;
        const std::size_t wide = batch_n * p, per = prod(in_shape);
        std::vector<double> gout(o * wide), dcols(kk * wide);
        for (std::size_t n = 0; n < batch_n; ++n)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t q = 0; q < p; ++q)
              gout[j * wide + n * p + q] = g[(n * o + j) * p + q];
        gemm_nt(gout, lc.aux.values(), dwq.values(), o, wide, kk, false);
        gemm_tn(wq.values(), gout, dcols, o, kk, wide, false);
        for (std::size_t n = 0; n < batch_n; ++n)
          col2im(std::span<const double>(dcols.data() + n * p, kk * wide - n * p), geo,
                 std::span<double>(dx.raw() + n * per, per), wide);
        if (l.bias)
          for (std::size_t j = 0; j < o; ++j)
            for (std::size_t q = 0; q < wide; ++q)
              grad_of(1)[j] += gout[j * wide + q];
      }
      grad_of(0) = l.weight_quant.enabled() ? ste_gradient(param(0), dwq) : std::move(dwq);
      break;
    }
    }
    g = std::move(dx);
  }
  if (input_grad)
    *input_grad = std::move(g);
  return grads;
}

void Network::commit_batch_stats(const ForwardCache &cache, double momentum) {
  if (!cache.valid || cache.mode != Mode::Train)
    fail(ErrorKind::Usage, "batch statistics come from a valid training forward pass");
  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    if (spec_.layers[li].kind != LayerKind::BatchNorm)
      continue;
    const auto &lc = cache.layers[li];
    const double count = static_cast<double>(shape_size(lc.input_shape) / lc.batch_mean.size());
    const double unbias = count > 1 ? count / (count - 1) : 1.0;
    auto &rs = running_[li];
    for (std::size_t c = 0; c < rs.mean.size(); ++c) {
      rs.mean[c] = (1 - momentum) * rs.mean[c] + momentum * lc.batch_mean[c];
      rs.var[c] = (1 - momentum) * rs.var[c] + momentum * lc.batch_var[c] * unbias;
    }
  }
}

Tensor Network::infer_packed(const Tensor &batch, const MaskSet *masks) const {
  const auto &shapes = shapes_;
  const std::size_t batch_n = batch.dim(0);
  if (batch.rank() != 4 || batch.dim(1) != spec_.in_channels)
    fail(ErrorKind::ShapeMismatch, "input batch must be (N, C, H, W)");
  Tensor x = batch;
  // Per-sample packed activations produced by the latest binarizing layer.
  std::vector<PackedPlanes> binary_inputs;

  for (std::size_t li = 0; li < spec_.layers.size(); ++li) {
    const auto &l = spec_.layers[li];
    const auto &in_shape = shapes[li];
    const auto &out_shape = shapes[li + 1];
    const bool packed_path = l.parameterized() && l.weight_quant.enabled() &&
                             !binary_inputs.empty() && l.kind != LayerKind::DepthwiseConv2d;

    if (packed_path) {
      const long first = weights_.first_param[li];
      const Tensor &w = weights_.tensors[static_cast<std::size_t>(first)];
      const BitMask *mask = nullptr;
      if (masks) {
        auto it = masks->find(li);
        if (it != masks->end())
          mask = &it->second;
      }
      const PackedPlanes wp = pack(quantize(w, l.weight_quant, mask));
      const std::size_t o = l.out_channels;
      const std::size_t row_len = w.size() / o;
      std::vector<PackedPlanes> rows;
      std::vector<std::size_t> idx(row_len);
      for (std::size_t r = 0; r < o; ++r) {
        for (std::size_t k = 0; k < row_len; ++k)
          idx[k] = r * row_len + k;
        rows.push_back(gather(wp, idx));
      }
      Shape out_full = {batch_n};
      out_full.insert(out_full.end(), out_shape.begin(), out_shape.end());
      Tensor y(out_full);
      const Tensor *bias =
          l.bias ? &weights_.tensors[static_cast<std::size_t>(first + 1)] : nullptr;

      if (l.kind == LayerKind::Dense) {
        for (std::size_t n = 0; n < batch_n; ++n) {
          const Tensor r = xnor_matvec(rows, binary_inputs[n]);
          for (std::size_t j = 0; j < o; ++j)
            y[n * o + j] = r[j] + (bias ? (*bias)[j] : 0.0);
        }
      } else {
        const auto g = geometry_of(l, in_shape);
        const auto src = im2col_indices(g);
        const std::size_t kk = g.patch_size(), p = g.positions();
        std::vector<std::size_t> col(kk);
        for (std::size_t n = 0; n < batch_n; ++n)
          for (std::size_t q = 0; q < p; ++q) {
            for (std::size_t k = 0; k < kk; ++k)
              col[k] = src[k * p + q];
            const Tensor r = xnor_matvec(rows, gather(binary_inputs[n], col));
            for (std::size_t j = 0; j < o; ++j)
              y[(n * o + j) * p + q] = r[j] + (bias ? (*bias)[j] : 0.0);
          }
      }
      x = std::move(y);
      binary_inputs.clear();
      continue;
    }

    binary_inputs.clear();
    if (l.kind == LayerKind::ActivationBinarize && l.input_quant.enabled()) {
      Tensor y = clip_unit(x);
      const std::size_t per = prod(in_shape);
      for (std::size_t n = 0; n < batch_n; ++n) {
        const auto h = quantize(sample_slice(y, n, in_shape), l.input_quant, nullptr);
        const Tensor q = reconstruct(h);
        std::copy(q.values().begin(), q.values().end(), y.raw() + n * per);
        binary_inputs.push_back(pack(h));
      }
      x = std::move(y);
      continue;
    }
    LayerCache scratch;
    x = apply_layer(li, std::move(x), Mode::Eval, masks, scratch);
  }
  return x;
}

LossResult softmax_cross_entropy(const Tensor &logits, const std::vector<int> &labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    fail(ErrorKind::ShapeMismatch, "logits must be (N, classes) with one label per row");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossResult r;
  r.grad = Tensor(logits.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      fail(ErrorKind::InvalidInput, "label out of range");
    const double *row = logits.raw() + i * k;
    const std::size_t arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
    const double mx = row[arg];
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      sum += std::exp(row[j] - mx);
    const double log_z = mx + std::log(sum);
    r.loss += log_z - row[label];
    for (std::size_t j = 0; j < k; ++j)
      r.grad[i * k + j] =
          (std::exp(row[j] - log_z) - (j == static_cast<std::size_t>(label) ? 1.0 : 0.0)) /
          static_cast<double>(n);
    if (arg == static_cast<std::size_t>(label))
      ++r.correct;
  }
  r.loss /= static_cast<double>(n);
  return r;
}

} // namespace hbnn::nn
