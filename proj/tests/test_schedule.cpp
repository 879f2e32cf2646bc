#include <gtest/gtest.h>

#include <random>

#include "checkerboard/schedule.hpp"

using namespace checkerboard;

TEST(MakeSchedule, PaperListsAtSide16) {
  EXPECT_EQ(make_schedule(RatioTag::Sqrt2, 16).sizes, (std::vector<int>{1, 2, 3, 4, 6, 8, 11, 16}));
  EXPECT_EQ(make_schedule(RatioTag::X2, 16).sizes, (std::vector<int>{1, 2, 4, 8, 16}));
  EXPECT_EQ(make_schedule(RatioTag::X3, 16).sizes, (std::vector<int>{1, 2, 5, 16}));
  EXPECT_EQ(make_schedule(RatioTag::X4, 16).sizes, (std::vector<int>{1, 4, 16}));
  EXPECT_EQ(make_schedule(RatioTag::Single, 4).sizes, (std::vector<int>{4}));
}

TEST(MakeSchedule, OtherSidesAreIncreasingFromOne) {
  for (RatioTag tag : {RatioTag::Sqrt2, RatioTag::X2, RatioTag::X3, RatioTag::X4}) {
    for (int side : {1, 2, 3, 5, 8, 12, 32, 64}) {
      const auto s = make_schedule(tag, side).sizes;
      EXPECT_EQ(s.front(), 1);
      EXPECT_EQ(s.back(), side);
      for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i - 1], s[i]);
    }
  }
  EXPECT_EQ(make_schedule(RatioTag::X2, 8).sizes, (std::vector<int>{1, 2, 4, 8}));
  EXPECT_EQ(make_schedule(RatioTag::X4, 8).sizes, (std::vector<int>{1, 2, 8}));
  EXPECT_THROW(make_schedule(RatioTag::X2, 0), std::invalid_argument);
  EXPECT_THROW(parse_ratio_tag("x5"), std::invalid_argument);
  EXPECT_EQ(parse_ratio_tag("sqrt2"), RatioTag::Sqrt2);
}

TEST(PartitionBlocks, TableStepCounts) {
  const auto x2 = partition_blocks(make_schedule(RatioTag::X2, 16), 4);
  EXPECT_EQ(x2.steps_per_scale, (std::vector<int>{1, 4, 4, 4, 4}));
  EXPECT_EQ(total_steps(x2), 17);
  const auto x4 = partition_blocks(make_schedule(RatioTag::X4, 16), 8);
  EXPECT_EQ(x4.steps_per_scale, (std::vector<int>{1, 8, 8}));
  EXPECT_EQ(total_steps(x4), 17);
  EXPECT_EQ(partition_blocks(single_scale(2), 8).steps_per_scale, (std::vector<int>{4}));
  EXPECT_THROW(partition_blocks(single_scale(2), 0), std::invalid_argument);
}

TEST(PartitionBlocks, InvariantsForManyP) {
  for (RatioTag tag : {RatioTag::Sqrt2, RatioTag::X2, RatioTag::X3, RatioTag::X4, RatioTag::Single}) {
    const ScaleSchedule sched = make_schedule(tag, 16);
    for (int p : {1, 2, 3, 4, 5, 7, 8, 16, 100, 300}) {
      const BlockPartition part = partition_blocks(sched, p);
      for (std::size_t s = 0; s < sched.sizes.size(); ++s) {
        const std::size_t n = static_cast<std::size_t>(sched.sizes[s]) * sched.sizes[s];
        const auto& blocks = part.blocks[s];
        EXPECT_EQ(part.steps_per_scale[s], static_cast<int>(std::min<std::size_t>(p, n)));
        ASSERT_EQ(blocks.size(), static_cast<std::size_t>(part.steps_per_scale[s]));
        // Concatenation reproduces the scan order; sizes differ by <= 1 and are non-increasing.
        std::vector<Position> cat;
        std::size_t lo = n, hi = 0, prev = n;
        for (const Block& b : blocks) {
          cat.insert(cat.end(), b.positions.begin(), b.positions.end());
          lo = std::min(lo, b.positions.size());
          hi = std::max(hi, b.positions.size());
          EXPECT_LE(b.positions.size(), prev);
          prev = b.positions.size();
        }
        EXPECT_EQ(cat, part.orders[s].positions);
        EXPECT_LE(hi - lo, 1u);
        EXPECT_GE(lo, 1u);
      }
    }
  }
}

TEST(PartitionBlocks, RemainderGoesToEarlierBlocks) {
  EXPECT_EQ(segment_sizes(10, 4), (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_EQ(segment_sizes(8, 4), (std::vector<std::size_t>{2, 2, 2, 2}));
  const auto part = partition_blocks(single_scale(3), 4);  // 9 tokens
  EXPECT_EQ(part.blocks[0][0].positions.size(), 3u);
  EXPECT_EQ(part.blocks[0][3].positions.size(), 2u);
}

TEST(PartitionBlocks, ScanOrderKinds) {
  const auto raster = partition_blocks(single_scale(4), 2, OrderKind::Raster);
  EXPECT_EQ(raster.blocks[0][0].positions.front(), (Position{0, 0}));
  EXPECT_EQ(raster.blocks[0][0].positions.back(), (Position{3, 1}));
  const auto checker = partition_blocks(single_scale(4), 2);
  for (const Position& p : checker.blocks[0][0].positions) EXPECT_EQ((p.x + p.y) % 2, 0);
}

TEST(SampleTrainingP, UniformOverCandidates) {
  std::mt19937_64 rng(5);
  const std::vector<int> cand{1, 2, 4, 8, 16};
  std::map<int, int> counts;
  for (int i = 0; i < 50000; ++i) ++counts[sample_training_P(rng, cand)];
  for (int p : cand) EXPECT_NEAR(counts[p], 10000, 500) << p;
  EXPECT_THROW(sample_training_P(rng, {}), std::invalid_argument);
}

TEST(Warmup, StepsThroughSideTwo) {
  EXPECT_EQ(steps_through_side(partition_blocks(make_schedule(RatioTag::X2, 16), 4), 2), 5);
  EXPECT_EQ(steps_through_side(partition_blocks(make_schedule(RatioTag::X4, 16), 8), 2), 1);
  EXPECT_EQ(steps_through_side(partition_blocks(make_schedule(RatioTag::Sqrt2, 16), 4), 2), 5);
}
