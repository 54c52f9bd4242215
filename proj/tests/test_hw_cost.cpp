#include <doctest.h>

#include <cmath>
#include <sstream>

#include "hbnn/error.hpp"
#include "hbnn/hw_cost.hpp"

using namespace hbnn;

namespace {

std::vector<CostBaseline> table() { return load_baselines(HBNN_DATA_DIR "/hw_baselines.csv"); }

bool within(double got, double printed, double rel) {
  return std::fabs(got - printed) <= rel * std::fabs(printed);
}

} // namespace

TEST_CASE("baseline table parses") {
  const auto rows = table();
  REQUIRE(rows.size() == 6);
  const auto &r1 = find_baseline(rows, "row1");
  CHECK(r1.platform == Platform::Fpga);
  CHECK(r1.unfolding == 1);
  CHECK(r1.occupancy == 21.2);
  const auto &r3 = find_baseline(rows, "row3");
  CHECK(r3.platform == Platform::Asic);
  CHECK(r3.unfolding == 0);
  CHECK_THROWS_AS(find_baseline(rows, "row99"), Error);
}

TEST_CASE("fpga estimates") {
  const auto rows = table();
  const auto e = fpga_estimate(find_baseline(rows, "row1"), 1.4, 1);
  CHECK(within(e.occupancy, 29.7, 0.01));
  CHECK(within(e.throughput_kfps, 15.6, 0.01));
  CHECK(within(e.power_w, 5.0, 0.01));
  const auto capped = fpga_estimate(find_baseline(rows, "row2"), 1.2, 4);
  CHECK(capped.occupancy == 100.0);
  CHECK(capped.saturated);
  CHECK_THROWS_AS(fpga_estimate(find_baseline(rows, "row1"), 0.0, 1), Error);
  CHECK_THROWS_AS(fpga_estimate(find_baseline(rows, "row3"), 1.0, 1), Error);
}

TEST_CASE("asic estimates") {
  const auto rows = table();
  const auto e = asic_estimate(find_baseline(rows, "row3"), 1.2, 1.2);
  CHECK(within(e.occupancy, 2.18, 0.01));
  CHECK(within(e.power_w, 0.14, 0.03));
  CHECK(e.throughput_kfps == 3.4);
}

TEST_CASE("comma separated baselines and comments") {
  std::istringstream in("# c\nid,platform,device,model,unfolding,bits_in,bits_w,occupancy,kfps,"
                        "power_w,top1\nx,fpga,Z,M,2,1,1,10,5,1,-\n");
  const auto rows = parse_baselines(in);
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].unfolding == 2);
  CHECK_FALSE(rows[0].top1.has_value());
  std::istringstream bad("id platform\nx fpga\n");
  CHECK_THROWS_AS(parse_baselines(bad), Error);
}

TEST_CASE("pareto front") {
  std::vector<CostEstimate> pts(3);
  pts[0].top1 = 80;
  pts[0].power_w = 1;
  pts[0].occupancy = 10;
  pts[1].top1 = 85;
  pts[1].power_w = 2;
  pts[1].occupancy = 20;
  pts[2].top1 = 79;
  pts[2].power_w = 3;
  pts[2].occupancy = 30;
  CHECK(pareto_front(pts) == std::vector<std::size_t>{0, 1});

  std::istringstream acc("model,bits,top1\nVGG-8,1.4,89.4\nVGG-8,1,80.9\n");
  const auto report = pareto_report(table(), {1.0, 1.4}, parse_accuracy_table(acc));
  CHECK_FALSE(report.estimates.empty());
  CHECK_FALSE(report.pareto.empty());
}

TEST_CASE("accuracy table from sweep results") {
  std::istringstream in("point-id,m_bits,n_bits,heuristic,distribution,seed,top1,wall_seconds\n"
                        "a,full,1,mo,1=1,1,70,1\na,full,1,mo,1=1,2,72,1\nb,full,2,mo,2=1,1,80,1\n");
  const auto acc = parse_accuracy_table(in);
  REQUIRE(acc.size() == 2);
  CHECK(acc[0].model == "*");
  CHECK(acc[0].top1 == 71.0);
}
