#include "hbnn/cli/app.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>

#include "hbnn/binarize.hpp"
#include "hbnn/bit_alloc.hpp"
#include "hbnn/cli/config.hpp"
#include "hbnn/error.hpp"
#include "hbnn/hw_cost.hpp"
#include "hbnn/io.hpp"
#include "hbnn/nn/train.hpp"
#include "hbnn/packed.hpp"
#include "hbnn/rng.hpp"

namespace hbnn::cli {

namespace {

constexpr const char *kVersion = "0.1.0";

/// Writes to standard output for "-", otherwise to a file.
class Output {
public:
  Output(const std::string &path, std::ostream &fallback) {
    if (path.empty() || path == "-") {
      os_ = &fallback;
      return;
    }
    file_ = std::make_unique<std::ofstream>(path);
    if (!*file_)
      fail(ErrorKind::Io, "cannot open " + path + " for writing");
    os_ = file_.get();
  }
  std::ostream &stream() { return *os_; }
  void close() {
    if (file_) {
      file_->flush();
      if (!*file_)
        fail(ErrorKind::Io, "write failed");
    }
  }

private:
  std::unique_ptr<std::ofstream> file_;
  std::ostream *os_ = nullptr;
};

void apply_config(RunConfig &cfg, const std::string &path, const std::vector<std::string> &sets) {
  if (!path.empty())
    cfg.load_file(path);
  for (const auto &s : sets)
    cfg.set_assignment(s);
}

void approx_bench(const RunConfig &cfg, std::ostream &out, std::ostream &err) {
  const auto n = cfg.get_u64("n");
  if (n == 0)
    fail(ErrorKind::Usage, "n must be positive");
  const auto seeds = cfg.get_u64s("seeds");
  const auto bits = cfg.get_doubles("bits");
  const auto heuristics = cfg.get_list("heuristics");
  const auto policies = cfg.get_list("policies");
  const auto homogeneous = cfg.get_u64s("homogeneous");
  // Validate every combination before the long run starts.
  for (const auto &h : heuristics)
    SortHeuristic::parse(h);
  for (const auto &p : policies)
    for (double b : bits)
      if (p == "grid") {
        if (distribution_grid(b).empty())
          fail(ErrorKind::InvalidDistribution,
               "no grid distribution averages " + std::to_string(b) + " bits");
      } else
        dist_from_avg(b, DistPolicy::parse(p));
  for (auto b : homogeneous)
    if (b < 1 || b > kMaxBits)
      fail(ErrorKind::UnsupportedBitwidth, "homogeneous bitwidth outside [1, 8]");

  err << "# approx-bench config\n";
  cfg.dump(err, "# ");
  Output sink(cfg.get("output"), out);
  auto &os = sink.stream();
  os << "heuristic,avg_bits,distribution,seed,normalized_distance\n" << std::setprecision(9);
  for (auto seed : seeds) {
    const Tensor t = gaussian_tensor({static_cast<std::size_t>(n)}, seed);
    for (auto b : homogeneous) {
      const double d =
          normalized_distance(t, reconstruct(residual_binarize(t, static_cast<int>(b))));
      os << "homogeneous," << b << "," << b << "=1," << seed << "," << d << '\n';
    }
    for (const auto &h : heuristics) {
      const auto order = sort_indices(t, SortHeuristic::parse(h, seed));
      for (const auto &p : policies)
        for (double b : bits) {
          if (p == "grid") {
            const auto best = best_grid_distribution(t, order, b);
            os << h << ',' << b << ",grid:" << best.dist.to_string() << ',' << seed << ','
               << best.distance << '\n';
            continue;
          }
          const auto dist = dist_from_avg(b, DistPolicy::parse(p));
          const auto mask = mask_from_order(t.shape(), order, dist);
          const double d = normalized_distance(t, reconstruct(hetero_binarize(t, mask)));
          os << h << ',' << b << ',' << dist.to_string() << ',' << seed << ',' << d << '\n';
        }
    }
  }
  sink.close();
}

void train(const RunConfig &cfg, std::ostream &out, std::ostream &err) {
  nn::SweepConfig sc;
  sc.model = cfg.get("model");
  sc.width_multiplier = cfg.get_u64("width");
  sc.exclude_io = cfg.get_bool("exclude_io");
  sc.scaling_init = cfg.get_double("scaling_init");
  sc.train.learning_rate = cfg.get_double("learning_rate");
  sc.train.momentum = cfg.get_double("momentum");
  sc.train.weight_decay = cfg.get_double("weight_decay");
  sc.train.epochs = cfg.get_u64("epochs");
  sc.train.batch_size = cfg.get_u64("batch_size");
  sc.train.mask_refresh = nn::MaskRefresh::parse(cfg.get("mask_refresh"));
  sc.train.flip = cfg.get_bool("flip");
  sc.seeds = cfg.get_u64s("seeds");
  for (const auto &p : cfg.get_list("points"))
    sc.points.push_back(nn::parse_sweep_point(p));
  sc.checkpoint_dir = cfg.get("checkpoint_dir");
  sc.verify_packed = cfg.get_bool("verify_packed");
  sc.verify_samples = cfg.get_u64("verify_samples");
  if (sc.train.epochs == 0 || sc.train.batch_size == 0)
    fail(ErrorKind::Usage, "epochs and batch_size must be positive");
  if (sc.points.empty() || sc.seeds.empty())
    fail(ErrorKind::Usage, "points and seeds must not be empty");
  if (sc.model != "conv4" && sc.model != "dwsep")
    fail(ErrorKind::Usage, "unknown model '" + sc.model + "' (conv4, dwsep)");

  const auto train_n = cfg.get_u64("train_size");
  const auto test_n = cfg.get_u64("test_size");
  const auto &kind = cfg.get("dataset");
  nn::DataSplit data;
  if (kind == "synthetic")
    data = nn::synthetic_dataset(train_n, test_n, cfg.get_u64("data_seed"), cfg.get_double("noise"));
  else if (kind == "cifar")
    data = nn::load_cifar_binary(cfg.get("data_dir"), train_n, test_n);
  else
    fail(ErrorKind::Usage, "unknown dataset '" + kind + "' (synthetic, cifar)");
  nn::normalize_per_channel(data);

  err << "# train config\n";
  cfg.dump(err, "# ");
  Output sink(cfg.get("output"), out);
  double worst = 0.0;
  const auto rows = nn::run_sweep(data.train, data.test, sc, [&](const nn::SweepRow &r) {
    err << "# point " << r.point_id << " seed " << r.seed << ": top1 " << r.top1 << "% in "
        << r.wall_seconds << " s";
    if (r.packed_divergence) {
      err << ", packed-vs-dense max |logit diff| " << *r.packed_divergence;
      worst = std::max(worst, *r.packed_divergence);
    }
    err << '\n';
  });
  nn::write_sweep_csv(sink.stream(), rows);
  sink.close();
  if (sc.verify_packed)
    err << "# packed inference max |packed - dense| logit divergence: " << worst
        << (worst < 1e-6 ? " (ok)" : " (exceeds 1e-6)") << '\n';
}

} // namespace

int run(const std::vector<std::string> &args, std::ostream &out, std::ostream &err) {
  CLI::App app{"Heterogeneous bitwidth binarization toolkit", "hbnn"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;

  auto *bench = app.add_subcommand("approx-bench", "Gaussian tensor approximation benchmark");
  bench->add_option("--config", config_path, "key = value config file");
  bench->add_option("--set", sets, "key=value override (repeatable)");

  std::string input, output, heuristic = "mo", policy = "adjacent";
  double bits = 0.0;
  auto *quantize = app.add_subcommand("quantize", "Binarize a raw tensor into an HBT file");
  quantize->add_option("--input", input, "raw tensor (RAWTENS1)")->required();
  quantize->add_option("--output", output, "HBT output path")->required();
  quantize->add_option("--bits", bits, "average bitwidth")->required();
  quantize->add_option("--heuristic", heuristic, "td, mo, bu, random or mo-signed");
  quantize->add_option("--policy", policy, "adjacent, paper-1.4 or preset:b=f/...");

  auto *dequantize = app.add_subcommand("dequantize", "Reconstruct a raw tensor from an HBT file");
  dequantize->add_option("--input", input, "HBT file")->required();
  dequantize->add_option("--output", output, "raw tensor output path")->required();

  auto *train_cmd = app.add_subcommand("train", "Train a sweep of binarized models");
  train_cmd->add_option("--config", config_path, "key = value config file");
  train_cmd->add_option("--set", sets, "key=value override (repeatable)");

  std::string baselines_path = std::string(HBNN_DATA_DIR) + "/hw_baselines.csv";
  std::string accuracy_path = std::string(HBNN_DATA_DIR) + "/hw_accuracy.csv";
  std::string platform, base;
  std::optional<double> cost_bits, bits_in, bits_w;
  std::optional<int> unfolding;
  std::vector<double> grid;
  bool json = false, pareto = false;
  auto *cost = app.add_subcommand("cost", "Hardware cost extrapolation");
  cost->add_option("--baselines", baselines_path, "baseline table");
  cost->add_option("--platform", platform, "fpga or asic");
  cost->add_option("--base", base, "baseline row id");
  cost->add_option("--bits", cost_bits, "average bitwidth (asic: inputs and weights)");
  cost->add_option("--bits-in", bits_in, "asic input bitwidth");
  cost->add_option("--bits-w", bits_w, "asic weight bitwidth");
  cost->add_option("--unfolding", unfolding, "fpga unfolding factor");
  cost->add_flag("--pareto", pareto, "estimate every baseline over --grid and rank");
  cost->add_option("--grid", grid, "bitwidth grid for --pareto")->delimiter(',');
  cost->add_option("--accuracy", accuracy_path, "accuracy table for --pareto");
  cost->add_flag("--json", json, "JSON instead of CSV");

  app.add_subcommand("version", "Print version information");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (bench->parsed()) {
      RunConfig cfg(approx_bench_schema());
      apply_config(cfg, config_path, sets);
      approx_bench(cfg, out, err);
    } else if (quantize->parsed()) {
      const Tensor t = load_raw_tensor(input);
      const auto h = hetero_binarize(
          t, generate_mask(t, bits, SortHeuristic::parse(heuristic), DistPolicy::parse(policy)));
      save_hbt(output, pack(h));
      out << std::setprecision(9) << "average_bits = " << h.mask().average() << '\n'
          << "normalized_distance = " << normalized_distance(t, reconstruct(h)) << '\n';
    } else if (dequantize->parsed()) {
      save_raw_tensor(output, reconstruct(unpack(load_hbt(input))));
    } else if (train_cmd->parsed()) {
      RunConfig cfg(train_schema());
      apply_config(cfg, config_path, sets);
      train(cfg, out, err);
    } else if (cost->parsed()) {
      const auto baselines = load_baselines(baselines_path);
      std::vector<CostEstimate> rows;
      std::vector<std::size_t> front;
      if (pareto) {
        if (grid.empty())
          grid = {1.0, 1.2, 1.4, 1.6, 1.8, 2.0};
        std::ifstream acc(accuracy_path);
        if (!acc)
          fail(ErrorKind::Io, "cannot open accuracy table " + accuracy_path);
        auto report = pareto_report(baselines, grid, parse_accuracy_table(acc));
        rows = std::move(report.estimates);
        front = std::move(report.pareto);
      } else {
        if (base.empty())
          fail(ErrorKind::Usage, "cost needs --base (or --pareto)");
        const auto &b = find_baseline(baselines, base);
        if (!platform.empty() && parse_platform(platform) != b.platform)
          fail(ErrorKind::Usage, "baseline " + base + " is a " + to_string(b.platform) + " row");
        if (b.platform == Platform::Fpga) {
          if (bits_in || bits_w)
            fail(ErrorKind::Usage, "--bits-in/--bits-w apply to asic rows; use --bits");
          rows.push_back(fpga_estimate(b, cost_bits.value_or(b.bits_w), unfolding.value_or(b.unfolding)));
        } else {
          if (unfolding)
            fail(ErrorKind::Usage, "--unfolding applies to fpga rows");
          rows.push_back(asic_estimate(b, bits_in.value_or(cost_bits.value_or(b.bits_in)),
                                       bits_w.value_or(cost_bits.value_or(b.bits_w))));
        }
      }
      if (json)
        out << estimates_json(rows, front) << '\n';
      else
        write_estimates_csv(out, rows, front);
    } else {
      out << "hbnn " << kVersion << "\nrng " << Rng::kAlgorithm << "\nhbt version " << kHbtVersion
          << '\n';
    }
  } catch (const Error &e) {
    err << "error: " << e.what() << '\n';
    return e.kind() == ErrorKind::Io ? kExitIo : kExitUsage;
  } catch (const std::filesystem::filesystem_error &e) {
    err << "error: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitOk;
}

} // namespace hbnn::cli
