#include "hbnn/nn/train.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hbnn/io.hpp"
#include "hbnn/rng.hpp"

namespace hbnn::nn {

MaskRefresh MaskRefresh::parse(const std::string &text) {
  if (text == "every-forward")
    return {Kind::EveryForward, 0};
  if (text == "every-epoch")
    return {Kind::EveryEpoch, 0};
  const std::string prefix = "frozen-after:";
  if (text.starts_with(prefix)) {
    const std::string num = text.substr(prefix.size());
    if (!num.empty() && std::all_of(num.begin(), num.end(), ::isdigit))
      return {Kind::FrozenAfter, static_cast<std::size_t>(std::stoul(num))};
  }
  fail(ErrorKind::Usage, "unknown mask refresh policy '" + text +
                             "' (every-forward, every-epoch, frozen-after:K)");
}

std::string MaskRefresh::name() const {
  switch (kind) {
  case Kind::EveryForward:
    return "every-forward";
  case Kind::EveryEpoch:
    return "every-epoch";
  case Kind::FrozenAfter:
    return "frozen-after:" + std::to_string(epoch);
  }
  return "?";
}

void sgd_step(ShadowWeights &shadow, const Gradients &grads, const TrainConfig &cfg,
              SgdState &state) {
  if (grads.size() != shadow.tensors.size())
    fail(ErrorKind::ShapeMismatch, "gradient count does not match parameter count");
  if (state.velocity.empty())
    for (const auto &w : shadow.tensors)
      state.velocity.emplace_back(w.shape(), 0.0);
  for (std::size_t t = 0; t < shadow.tensors.size(); ++t) {
    Tensor &w = shadow.tensors[t];
    Tensor &v = state.velocity[t];
    require_same_shape(w, grads[t], "sgd_step");
    for (std::size_t i = 0; i < w.size(); ++i) {
      v[i] = cfg.momentum * v[i] + grads[t][i] + cfg.weight_decay * w[i];
      w[i] -= cfg.learning_rate * v[i];
    }
  }
}

double evaluate(const Network &net, const Dataset &data, std::size_t batch_size,
                const MaskSet *masks) {
  if (data.size() == 0)
    fail(ErrorKind::EmptyInput, "empty evaluation set");
  MaskSet derived;
  if (!masks) {
    derived = net.weight_masks();
    masks = &derived;
  }
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const auto out = net.forward(data.batch_images(idx), Mode::Eval, masks);
    correct += softmax_cross_entropy(out.logits, data.batch_labels(idx)).correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

double mask_error(const Network &net, const MaskSet &masks) {
  double worst = 0.0;
  for (const auto &[layer, mask] : masks) {
    const double target = *net.spec().layers[layer].weight_quant.avg_bits;
    worst = std::max(worst, std::abs(mask.average() - target));
  }
  return worst;
}

} // namespace

TrainOutcome train_model(Network &net, const Dataset &train, const Dataset &test,
                         const TrainConfig &cfg, const ProgressFn &progress) {
  if (cfg.batch_size == 0 || cfg.epochs == 0)
    fail(ErrorKind::InvalidInput, "epochs and batch size must be positive");
  if (train.size() == 0)
    fail(ErrorKind::EmptyInput, "empty training set");
  const auto start = std::chrono::steady_clock::now();
  Rng order_rng = Rng::derive(cfg.seed, 0x5eed);
  SgdState sgd;
  TrainOutcome outcome;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  MaskSet masks;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[static_cast<std::size_t>(order_rng.below(i))]);
    EpochLog log;
    log.epoch = epoch + 1;
    const bool epoch_refresh =
        cfg.mask_refresh.kind == MaskRefresh::Kind::EveryEpoch ||
        (cfg.mask_refresh.kind == MaskRefresh::Kind::FrozenAfter && epoch < cfg.mask_refresh.epoch) ||
        masks.empty();
    if (cfg.mask_refresh.kind != MaskRefresh::Kind::EveryForward && epoch_refresh) {
      masks = net.weight_masks();
      log.max_mask_error = mask_error(net, masks);
    }
    double loss_sum = 0.0;
    std::size_t correct = 0, batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min(cfg.batch_size, order.size() - b));
      std::vector<bool> flip(idx.size(), false);
      if (cfg.flip)
        for (std::size_t k = 0; k < idx.size(); ++k)
          flip[k] = order_rng.uniform() < 0.5;
      if (cfg.mask_refresh.kind == MaskRefresh::Kind::EveryForward) {
        masks = net.weight_masks();
        log.max_mask_error = std::max(log.max_mask_error, mask_error(net, masks));
      }
      const auto fwd = net.forward(train.batch_images(idx, &flip), Mode::Train, &masks);
      const auto loss = softmax_cross_entropy(fwd.logits, train.batch_labels(idx));
      if (!std::isfinite(loss.loss))
        fail(ErrorKind::NumericFailure, "training loss became non-finite");
      const auto grads = net.backward(fwd.cache, loss.grad);
      net.commit_batch_stats(fwd.cache);
      sgd_step(net.weights(), grads, cfg, sgd);
      loss_sum += loss.loss;
      correct += loss.correct;
      ++batches;
      outcome.batch_losses.push_back(loss.loss);
    }
    log.mean_loss = loss_sum / static_cast<double>(batches);
    log.train_top1 = 100.0 * static_cast<double>(correct) / static_cast<double>(train.size());
    outcome.epochs.push_back(log);
    if (progress)
      progress(log);
  }
  if (cfg.mask_refresh.kind != MaskRefresh::Kind::EveryForward) {
    outcome.final_masks = masks;
    outcome.test_top1 = evaluate(net, test, 256, &masks);
  } else {
    outcome.test_top1 = evaluate(net, test, 256, nullptr);
  }
  outcome.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return outcome;
}

namespace {

std::string format_bits(double b) {
  std::ostringstream os;
  os << b;
  return os.str();
}

std::vector<std::string> split(const std::string &s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep))
    out.push_back(cur);
  if (!s.empty() && s.back() == sep)
    out.emplace_back();
  return out;
}

std::optional<double> parse_width(const std::string &text) {
  if (text == "full" || text == "32")
    return std::nullopt;
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception &) {
    used = 0;
  }
  if (used != text.size() || text.empty())
    fail(ErrorKind::Usage, "bad bitwidth '" + text + "' (a number or 'full')");
  if (!(v >= 1.0 && v <= static_cast<double>(kMaxBits)))
    fail(ErrorKind::UnsupportedBitwidth, "bitwidth " + text + " outside [1, 8]");
  return v;
}

std::string sanitize(const std::string &id) {
  std::string out = id;
  for (auto &c : out)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-')
      c = '_';
  return out;
}

void put_u32(std::ostream &os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    os.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(std::istream &is) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char *>(b.data()), 4))
    fail(ErrorKind::Format, "truncated checkpoint");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

} // namespace

SweepPoint parse_sweep_point(const std::string &text) {
  const auto parts = split(text, ':');
  if (parts.size() < 2 || parts.size() > 4)
    fail(ErrorKind::Usage, "bad sweep point '" + text + "' (m:n[:heuristic[:policy]])");
  SweepPoint p;
  p.id = text;
  SortHeuristic h = SortHeuristic::middle_out();
  DistPolicy policy = DistPolicy::adjacent();
  if (parts.size() >= 3)
    h = SortHeuristic::parse(parts[2]);
  if (parts.size() == 4)
    policy = DistPolicy::parse(parts[3]);
  if (auto m = parse_width(parts[0]))
    p.inputs = QuantSpec::bits(*m, h, policy);
  const auto layers = split(parts[1], '|');
  if (layers.size() > 1) {
    for (const auto &l : layers) {
      const auto w = parse_width(l);
      p.per_layer_weights.push_back(w ? QuantSpec::bits(*w, h, policy) : QuantSpec::full());
    }
  } else if (auto n = parse_width(parts[1])) {
    p.weights = QuantSpec::bits(*n, h, policy);
  }
  // Validate the distribution now rather than at first forward pass.
  for (const auto *q : {&p.inputs, &p.weights})
    if (q->enabled())
      dist_from_avg(*q->avg_bits, q->policy);
  for (const auto &q : p.per_layer_weights)
    if (q.enabled())
      dist_from_avg(*q.avg_bits, q.policy);
  return p;
}

std::string SweepPoint::m_bits() const {
  return inputs.enabled() ? format_bits(*inputs.avg_bits) : "full";
}

std::string SweepPoint::n_bits() const {
  if (!per_layer_weights.empty()) {
    std::string out;
    for (const auto &q : per_layer_weights) {
      if (!out.empty())
        out += '|';
      out += q.enabled() ? format_bits(*q.avg_bits) : "full";
    }
    return out;
  }
  return weights.enabled() ? format_bits(*weights.avg_bits) : "full";
}

std::string SweepPoint::heuristic() const {
  if (weights.enabled())
    return weights.heuristic.name();
  for (const auto &q : per_layer_weights)
    if (q.enabled())
      return q.heuristic.name();
  return inputs.enabled() ? inputs.heuristic.name() : "-";
}

std::string SweepPoint::distribution() const {
  if (weights.enabled())
    return dist_from_avg(*weights.avg_bits, weights.policy).to_string();
  if (!per_layer_weights.empty())
    return "per-layer";
  return "full";
}

NetworkSpec sweep_network(const SweepConfig &cfg, const SweepPoint &point, std::size_t classes) {
  TemplateOptions opt;
  opt.width_multiplier = cfg.width_multiplier;
  opt.weights = point.weights;
  opt.per_layer_weights = point.per_layer_weights;
  opt.inputs = point.inputs;
  opt.exclude_io = cfg.exclude_io;
  opt.scaling_init = cfg.scaling_init;
  if (cfg.model == "conv4")
    return conv4_template(opt, classes);
  if (cfg.model == "dwsep")
    return dwsep_template(opt, classes);
  fail(ErrorKind::Usage, "unknown model '" + cfg.model + "' (conv4, dwsep)");
}

double packed_divergence(const Network &net, const Tensor &batch) {
  const MaskSet masks = net.weight_masks();
  const Tensor dense = net.forward(batch, Mode::Eval, &masks).logits;
  const Tensor packed = net.infer_packed(batch, &masks);
  double worst = 0.0;
  for (std::size_t i = 0; i < dense.size(); ++i)
    worst = std::max(worst, std::abs(dense[i] - packed[i]));
  return worst;
}

std::vector<SweepRow> run_sweep(const Dataset &train, const Dataset &test, const SweepConfig &cfg,
                                const SweepProgressFn &progress) {
  if (cfg.points.empty())
    fail(ErrorKind::Usage, "sweep has no points");
  if (cfg.seeds.empty())
    fail(ErrorKind::Usage, "sweep has no seeds");
  if (train.size() == 0 || test.size() == 0)
    fail(ErrorKind::Io, "dataset is empty");
  if (!cfg.checkpoint_dir.empty())
    std::filesystem::create_directories(cfg.checkpoint_dir);
  std::vector<SweepRow> rows;
  for (const auto &point : cfg.points)
    for (auto seed : cfg.seeds) {
      Network net(sweep_network(cfg, point, train.classes), seed);
      TrainConfig tc = cfg.train;
      tc.seed = seed;
      const auto outcome = train_model(net, train, test, tc);
      SweepRow row{point.id,   point.m_bits(), point.n_bits(), point.heuristic(),
                   point.distribution(), seed,    outcome.test_top1, outcome.wall_seconds,
                   std::nullopt};
      if (cfg.verify_packed) {
        std::vector<std::size_t> idx(std::min(cfg.verify_samples, test.size()));
        std::iota(idx.begin(), idx.end(), 0);
        row.packed_divergence = packed_divergence(net, test.batch_images(idx));
      }
      if (!cfg.checkpoint_dir.empty())
        save_checkpoint((std::filesystem::path(cfg.checkpoint_dir) /
                         (sanitize(point.id) + "_seed" + std::to_string(seed) + ".ckpt"))
                            .string(),
                        net.weights());
      if (progress)
        progress(row);
      rows.push_back(std::move(row));
    }
  return rows;
}

void write_sweep_csv(std::ostream &os, const std::vector<SweepRow> &rows) {
  os << "point-id,m_bits,n_bits,heuristic,distribution,seed,top1,wall_seconds\n";
  for (const auto &r : rows)
    os << r.point_id << ',' << r.m_bits << ',' << r.n_bits << ',' << r.heuristic << ','
       << r.distribution << ',' << r.seed << ',' << r.top1 << ',' << r.wall_seconds << '\n';
}

void save_checkpoint(const std::string &path, const ShadowWeights &weights) {
  std::ofstream os(path, std::ios::binary);
  if (!os)
    fail(ErrorKind::Io, "cannot open " + path + " for writing");
  put_u32(os, static_cast<std::uint32_t>(weights.tensors.size()));
  for (const auto &t : weights.tensors)
    write_raw_tensor(os, t);
  if (!os)
    fail(ErrorKind::Io, "write to " + path + " failed");
}

std::vector<Tensor> load_checkpoint(const std::string &path) {
  std::ifstream is(path, std::ios::binary);
  if (!is)
    fail(ErrorKind::Io, "cannot open " + path);
  const auto count = get_u32(is);
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < count; ++i)
    out.push_back(read_raw_tensor(is));
  return out;
}

} // namespace hbnn::nn
