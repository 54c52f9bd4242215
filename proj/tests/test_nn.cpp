#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <cstring>
#include <limits>

#include "hbnn/error.hpp"
#include "hbnn/nn/train.hpp"
#include "nn_fixtures.hpp"

using namespace hbnn;
using namespace hbnn::nn;

namespace {

LayerSpec layer(LayerKind kind, std::size_t in = 0, std::size_t out = 0) {
  LayerSpec l;
  l.kind = kind;
  l.name = to_string(kind);
  l.in_channels = in;
  l.out_channels = out;
  return l;
}

NetworkSpec flat_spec(std::size_t features, std::vector<LayerSpec> layers, std::size_t classes) {
  NetworkSpec s;
  s.in_channels = features;
  s.height = s.width = 1;
  s.classes = classes;
  s.exclude_io = false;
  s.layers = std::move(layers);
  s.layers.push_back(layer(LayerKind::SoftmaxCrossEntropy));
  return s;
}

Tensor column(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor({1, n, 1, 1}, std::move(v));
}

} // namespace

TEST_CASE("dense layer with binarized weights") {
  auto dense = layer(LayerKind::Dense, 2, 2);
  dense.weight_quant = QuantSpec::bits(1.0);
  auto scale = layer(LayerKind::Scaling);
  scale.scaling_init = 1.0;
  Network net(flat_spec(2, {dense, scale}, 2), 1);
  net.weights().tensors[0] = Tensor({2, 2}, {1.0, -1.0, 1.0, 1.0});
  const Tensor logits = net.forward(column({1.0, 1.0}), Mode::Eval).logits;
  CHECK(std::fabs(logits[0] - 0.0) <= 1e-9);
  CHECK(std::fabs(logits[1] - 2.0) <= 1e-9);
}

TEST_CASE("scaling and identity batch-norm") {
  auto scale = layer(LayerKind::Scaling);
  scale.scaling_init = 0.25;
  Network s(flat_spec(3, {scale}, 3), 1);
  const Tensor y = s.forward(column({4.0, -8.0, 1.0}), Mode::Eval).logits;
  CHECK(y == Tensor({1, 3}, {1.0, -2.0, 0.25}));

  Network bn(flat_spec(3, {layer(LayerKind::BatchNorm, 3, 3)}, 3), 1);
  const Tensor z = bn.forward(column({0.5, -1.5, 2.0}), Mode::Eval).logits;
  for (std::size_t i = 0; i < 3; ++i)
    CHECK(std::fabs(z[i] - std::vector<double>{0.5, -1.5, 2.0}[i] / std::sqrt(1.0 + 1e-5)) < 1e-12);
}

TEST_CASE("activation straight-through gradient") {
  Network net(flat_spec(2, {layer(LayerKind::ActivationBinarize)}, 2), 1);
  const auto fwd = net.forward(column({0.5, 1.5}), Mode::Train);
  Tensor input_grad;
  net.backward(fwd.cache, Tensor({1, 2}, {2.0, 2.0}), &input_grad);
  CHECK(input_grad[0] == 2.0);
  CHECK(input_grad[1] == 0.0);
}

TEST_CASE("backward requires a forward cache") {
  Network net(flat_spec(2, {layer(LayerKind::ActivationBinarize)}, 2), 1);
  try {
    net.backward(ForwardCache{}, Tensor({1, 2}, 0.0));
    FAIL("expected Usage");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::Usage);
  }
}

TEST_CASE("shape mismatch and non-finite activations") {
  Network net(fixtures::tiny_conv_spec(), 3);
  CHECK_THROWS_AS(net.forward(Tensor({1, 3, 9, 8}), Mode::Eval), Error);
  Tensor bad({1, 3, 8, 8}, 0.1);
  bad[5] = std::numeric_limits<double>::infinity();
  try {
    net.forward(bad, Mode::Eval);
    FAIL("expected NumericFailure");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::NumericFailure);
    CHECK(std::string(e.what()).find("conv1") != std::string::npos);
  }
}

TEST_CASE("full-precision gradients match finite differences") {
  Network net(fixtures::tiny_conv_spec(), 5);
  const Tensor batch = gaussian_tensor({4, 3, 8, 8}, 77);
  const auto check = fixtures::finite_difference_check(net, batch, {1, 4, 7, 2}, 60, 9, 1e-4);
  CHECK(check.failed == 0);
}

TEST_CASE("forward never writes shadow weights") {
  Network net(fixtures::tiny_conv_spec(QuantSpec::bits(1.4), QuantSpec::bits(2.0)), 5);
  const auto before = net.weights().tensors;
  const Tensor batch = gaussian_tensor({2, 3, 8, 8}, 1);
  net.forward(batch, Mode::Train);
  net.forward(batch, Mode::Eval);
  for (std::size_t i = 0; i < before.size(); ++i)
    CHECK(std::memcmp(before[i].raw(), net.weights().tensors[i].raw(),
                      before[i].size() * sizeof(double)) == 0);
}

TEST_CASE("exclude-io keeps inputs of the first and last layers full precision") {
  const auto spec = fixtures::tiny_conv_spec(QuantSpec::bits(1.4), QuantSpec::bits(1.4));
  for (const auto &l : spec.layers)
    if (l.kind == LayerKind::ActivationBinarize && l.name == "act3")
      CHECK_FALSE(l.input_quant.enabled());
  auto broken = spec;
  for (auto &l : broken.layers)
    if (l.name == "act3")
      l.input_quant = QuantSpec::bits(1.0);
  CHECK_THROWS_AS(Network(broken, 1), Error);
}

TEST_CASE("packed inference matches dense inference") {
  Network net(fixtures::tiny_conv_spec(QuantSpec::bits(1.4), QuantSpec::bits(1.4)), 11);
  const Tensor batch = gaussian_tensor({3, 3, 8, 8}, 4);
  CHECK(packed_divergence(net, batch) < 1e-9);

  TemplateOptions opt;
  opt.weights = QuantSpec::bits(1.6);
  opt.inputs = QuantSpec::bits(2.0);
  auto dw = dwsep_template(opt, 10);
  dw.height = dw.width = 16;
  Network dnet(dw, 2);
  CHECK(packed_divergence(dnet, gaussian_tensor({2, 3, 16, 16}, 8)) < 1e-9);
}

TEST_CASE("weight masks conserve the average bitwidth") {
  Network net(fixtures::tiny_conv_spec(QuantSpec::bits(1.4)), 1);
  const auto masks = net.weight_masks();
  CHECK(masks.size() == 4);
  for (const auto &[layer, mask] : masks)
    CHECK(std::fabs(mask.average() - 1.4) <= 1.0 / static_cast<double>(mask.size()) + 1e-12);
}

TEST_CASE("sgd recurrences") {
  ShadowWeights w;
  w.tensors = {Tensor({2}, {1.0, -2.0})};
  const Gradients g = {Tensor({2}, {0.5, 0.25})};

  TrainConfig plain;
  plain.learning_rate = 1.0;
  plain.momentum = 0.0;
  plain.weight_decay = 0.0;
  SgdState s1;
  auto a = w;
  sgd_step(a, g, plain, s1);
  CHECK(a.tensors[0] == Tensor({2}, {0.5, -2.25}));

  TrainConfig mom = plain;
  mom.momentum = 0.9;
  SgdState s2;
  auto b = w;
  sgd_step(b, g, mom, s2);
  const Tensor after_one = b.tensors[0];
  sgd_step(b, g, mom, s2);
  for (std::size_t i = 0; i < 2; ++i) {
    // Second step moves by 1.9 g; both steps together by 2.9 g.
    CHECK(std::fabs((after_one[i] - b.tensors[0][i]) - 1.9 * g[0][i]) <= 1e-12);
    CHECK(std::fabs((w.tensors[0][i] - b.tensors[0][i]) - 2.9 * g[0][i]) <= 1e-12);
  }

  TrainConfig decay;
  decay.learning_rate = 0.1;
  decay.momentum = 0.0;
  decay.weight_decay = 0.01;
  SgdState s3;
  auto c = w;
  sgd_step(c, {Tensor({2}, 0.0)}, decay, s3);
  CHECK(std::fabs(c.tensors[0][0] - 1.0 * (1 - 0.1 * 0.01)) <= 1e-15);
  CHECK(std::fabs(c.tensors[0][1] - -2.0 * (1 - 0.1 * 0.01)) <= 1e-15);
}

TEST_CASE("mask refresh and sweep point parsing") {
  CHECK(MaskRefresh::parse("frozen-after:3").epoch == 3);
  CHECK(MaskRefresh::parse("every-epoch").name() == "every-epoch");
  CHECK_THROWS_AS(MaskRefresh::parse("sometimes"), Error);

  const auto p = parse_sweep_point("full:1.4:mo:paper-1.4");
  CHECK_FALSE(p.inputs.enabled());
  CHECK(p.n_bits() == "1.4");
  CHECK(p.distribution() == "1=0.7/2=0.2/3=0.1");
  const auto layered = parse_sweep_point("2:1|2|2|1");
  CHECK(layered.per_layer_weights.size() == 4);
  CHECK(layered.n_bits() == "1|2|2|1");
  CHECK(layered.m_bits() == "2");
  CHECK_THROWS_AS(parse_sweep_point("full"), Error);
  CHECK_THROWS_AS(parse_sweep_point("full:0.5"), Error);
  CHECK_THROWS_AS(parse_sweep_point("full:1.5:mo:paper-1.4"), Error);
}

TEST_CASE("training is deterministic and the loss falls") {
  auto data = synthetic_dataset(256, 64, 3);
  normalize_per_channel(data);
  SweepConfig cfg;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 32;
  cfg.scaling_init = 1.0;
  const auto point = parse_sweep_point("full:full");
  auto run = [&] {
    Network net(sweep_network(cfg, point, 10), 4);
    const auto out = train_model(net, data.train, data.test, cfg.train);
    return std::make_pair(out, net.weights().tensors);
  };
  const auto [a, wa] = run();
  const auto [b, wb] = run();
  CHECK(a.test_top1 == b.test_top1);
  CHECK(wa == wb);
  const auto &losses = a.batch_losses;
  REQUIRE(losses.size() == 8);
  CHECK(losses.back() < losses.front());
}

TEST_CASE("checkpoint round trip") {
  Network net(fixtures::tiny_conv_spec(), 1);
  const auto path = (std::filesystem::temp_directory_path() / "hbnn_ckpt_test.bin").string();
  save_checkpoint(path, net.weights());
  const auto loaded = load_checkpoint(path);
  REQUIRE(loaded.size() == net.weights().tensors.size());
  for (std::size_t i = 0; i < loaded.size(); ++i)
    for (std::size_t j = 0; j < loaded[i].size(); ++j)
      CHECK(loaded[i][j] == static_cast<float>(net.weights().tensors[i][j]));
  std::filesystem::remove(path);
}

TEST_CASE("cifar loader reports missing data") {
  try {
    load_cifar_binary("/nonexistent/cifar", 10, 10);
    FAIL("expected Io");
  } catch (const Error &e) {
    CHECK(e.kind() == ErrorKind::Io);
    CHECK(std::string(e.what()).find("cifar-10-binary") != std::string::npos);
  }
}
