#include <doctest.h>

#include <cmath>

#include "hbnn/bit_alloc.hpp"
#include "hbnn/error.hpp"
#include "oracles.hpp"

using namespace hbnn;

namespace {

const Tensor kExample({4}, {0.1, -0.5, 0.9, -0.2});

std::vector<std::uint8_t> widths(const BitMask &m) { return m.widths(); }

} // namespace

TEST_CASE("dist_from_avg policies") {
  const auto adj = dist_from_avg(1.4, DistPolicy::adjacent());
  REQUIRE(adj.entries().size() == 2);
  CHECK(adj.entries()[0].bits == 1);
  CHECK(std::fabs(adj.entries()[0].fraction - 0.6) < 1e-12);
  CHECK(std::fabs(adj.entries()[1].fraction - 0.4) < 1e-12);

  const auto paper = dist_from_avg(1.4, DistPolicy::paper_1_4());
  REQUIRE(paper.entries().size() == 3);
  CHECK(paper.entries()[2].bits == 3);
  CHECK(std::fabs(paper.entries()[2].fraction - 0.1) < 1e-12);

  const auto preset = dist_from_avg(1.4, DistPolicy::parse("preset:1=0.8/3=0.2"));
  CHECK(std::fabs(preset.average() - 1.4) < 1e-12);
  CHECK(preset.to_string() == "1=0.8/3=0.2");

  CHECK(dist_from_avg(2.0, DistPolicy::adjacent()).entries().size() == 1);
  CHECK_THROWS_AS(dist_from_avg(1.5, DistPolicy::paper_1_4()), Error);
  CHECK_THROWS_AS(dist_from_avg(0.5, DistPolicy::adjacent()), Error);
  CHECK_THROWS_AS(dist_from_avg(8.5, DistPolicy::adjacent()), Error);
  CHECK_THROWS_AS(DistPolicy::parse("preset:2=0.5/2=0.5"), Error);
  CHECK_THROWS_AS(BitDistribution({{1, 0.5}, {2, 0.4}}), Error);
}

TEST_CASE("sort_indices hand values") {
  CHECK(sort_indices(kExample, SortHeuristic::middle_out()) ==
        std::vector<std::size_t>{1, 3, 0, 2});
  CHECK(sort_indices(kExample, SortHeuristic::top_down()) == std::vector<std::size_t>{2, 1, 3, 0});
  CHECK(sort_indices(kExample, SortHeuristic::bottom_up()) ==
        std::vector<std::size_t>{0, 3, 1, 2});
  // Signed deviations [-0.325, 0.075, 0.475, -0.225].
  CHECK(sort_indices(kExample, SortHeuristic::middle_out_signed()) ==
        std::vector<std::size_t>{0, 3, 1, 2});
}

TEST_CASE("sort_indices properties") {
  const Tensor t = gaussian_tensor({2000}, 4);
  Tensor scaled = t;
  for (auto &v : scaled.values())
    v *= 3.75;
  CHECK(sort_indices(t, SortHeuristic::middle_out()) ==
        sort_indices(scaled, SortHeuristic::middle_out()));
  CHECK(sort_indices(t, SortHeuristic::random(8)) == sort_indices(t, SortHeuristic::random(8)));
  CHECK(sort_indices(t, SortHeuristic::random(8)) != sort_indices(t, SortHeuristic::random(9)));
  // Ties keep ascending index order.
  CHECK(sort_indices(Tensor({3}, {1.0, -1.0, 1.0}), SortHeuristic::top_down()) ==
        std::vector<std::size_t>{0, 1, 2});
}

TEST_CASE("generate_mask hand values") {
  const auto half = DistPolicy::parse("preset:1=0.5/2=0.5");
  CHECK(widths(generate_mask(kExample, 1.5, SortHeuristic::middle_out(), half)) ==
        std::vector<std::uint8_t>{2, 1, 2, 1});
  CHECK(widths(generate_mask(kExample, 1.5, SortHeuristic::top_down(), half)) ==
        std::vector<std::uint8_t>{2, 1, 1, 2});
  CHECK(widths(generate_mask(kExample, 1.0, SortHeuristic::middle_out(), DistPolicy::adjacent())) ==
        std::vector<std::uint8_t>(4, 1));
  CHECK(widths(generate_mask(kExample, 3.0, SortHeuristic::middle_out(), DistPolicy::adjacent())) ==
        std::vector<std::uint8_t>(4, 3));
}

TEST_CASE("allocation_counts follows cumulative half-even rounding") {
  // Per-entry rounding would give 4/5/1 here, an average error of 1.4 / N.
  const BitDistribution d({{1, 0.35}, {2, 0.46}, {3, 0.19}});
  const auto c = allocation_counts(d, 10);
  CHECK(c == std::vector<std::size_t>{4, 4, 2});
  CHECK(oracle::counts_per_mille({350, 460, 190}, 10) == std::vector<std::uint64_t>{4, 4, 2});
  // 0.7 * 5 = 3.5 rounds to the even boundary 4.
  CHECK(allocation_counts(BitDistribution({{1, 0.7}, {2, 0.3}}), 5) ==
        std::vector<std::size_t>{4, 1});
  CHECK(allocation_counts(BitDistribution({{1, 0.5}, {2, 0.5}}), 5) ==
        std::vector<std::size_t>{2, 3});
}

TEST_CASE("distribution_grid covers the 1.4 presets") {
  const auto grid = distribution_grid(1.4);
  bool adjacent = false, paper = false, skewed = false;
  for (const auto &d : grid) {
    CHECK(std::fabs(d.average() - 1.4) < 1e-9);
    const auto s = d.to_string();
    adjacent = adjacent || s == "1=0.6/2=0.4";
    paper = paper || s == "1=0.7/2=0.2/3=0.1";
    skewed = skewed || s == "1=0.8/3=0.2";
  }
  CHECK(adjacent);
  CHECK(paper);
  CHECK(skewed);
}

TEST_CASE("grid sweep picks the closest distribution") {
  const Tensor t = gaussian_tensor({5000}, 3);
  const auto order = sort_indices(t, SortHeuristic::middle_out());
  const auto best = best_grid_distribution(t, order, 1.4);
  CHECK(std::fabs(best.dist.average() - 1.4) < 1e-9);
  for (const auto &d : distribution_grid(1.4)) {
    const auto mask = mask_from_order(t.shape(), order, d);
    CHECK(best.distance <= normalized_distance(t, reconstruct(hetero_binarize(t, mask))));
  }
  CHECK_THROWS_AS(best_grid_distribution(t, order, 1.23), Error);
}
