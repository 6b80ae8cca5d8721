#include <gtest/gtest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

#include "plasticity/rng.hpp"

namespace {

using namespace plasticity;

// Reference values from a separate stateful SplitMix64 implementation.
TEST(RngStream, SeedZeroIsClassicSplitMix64) {
  constexpr std::array<std::uint64_t, 8> expected{
      0xE220A8397B1DCDAFULL, 0x6E789E6AA1B965F4ULL, 0x06C45D188009454FULL, 0xF88BB8A8724C81ECULL,
      0x1B39896A51A8749BULL, 0x53CB9F0C747EA2EAULL, 0x2C829ABE1F4532E1ULL, 0xC584133AC916AB3CULL};
  RngStream rng(0);
  for (std::uint64_t v : expected) EXPECT_EQ(rng.next_u64(), v);
}

TEST(RngStream, SeedFortyTwoGolden) {
  RngStream rng(42);
  EXPECT_EQ(rng.next_u64(), 0xBDD732262FEB6E95ULL);
  EXPECT_EQ(rng.next_u64(), 0x28EFE333B266F103ULL);
  EXPECT_EQ(rng.next_u64(), 0x47526757130F9F52ULL);
  EXPECT_EQ(rng.next_u64(), 0x581CE1FF0E4AE394ULL);
}

TEST(RngStream, SplitGolden) {
  EXPECT_EQ(RngStream::hash_label("task"), 0xD9603BEF07A9524CULL);
  EXPECT_EQ(RngStream(7).split("init").next_u64(), 0xC5F928F1F9C0BFEEULL);
  EXPECT_EQ(RngStream(7).split(std::uint64_t{3}).next_u64(), 0xFB3BBFFB451B04C6ULL);
}

TEST(RngStream, Uniform01Golden) {
  RngStream rng(0);
  EXPECT_DOUBLE_EQ(rng.uniform01(), 0.8833108082136426);
}

TEST(RngStream, SplitDoesNotAdvanceParent) {
  RngStream a(5), b(5);
  (void)a.split("x");
  (void)a.split(std::uint64_t{2});
  EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngStream, DistinctLabelsAndIndicesGiveDistinctStreams) {
  const RngStream root(11);
  std::set<std::uint64_t> firsts;
  for (const char* label : {"init", "method", "probe", "task", "batch", "synthetic"}) {
    firsts.insert(root.split(label).next_u64());
  }
  for (std::uint64_t i = 0; i < 100; ++i) firsts.insert(root.split(i).next_u64());
  EXPECT_EQ(firsts.size(), 106u);
}

TEST(RngStream, UniformStaysInRange) {
  RngStream rng(3);
  double lo = 1.0, hi = -1.0, sum = 0.0;
  for (int i = 0; i < 20000; ++i) {
    const double x = rng.uniform(-0.25, 0.75);
    ASSERT_GE(x, -0.25);
    ASSERT_LT(x, 0.75);
    lo = std::min(lo, x);
    hi = std::max(hi, x);
    sum += x;
  }
  EXPECT_LT(lo, -0.24);
  EXPECT_GT(hi, 0.74);
  EXPECT_NEAR(sum / 20000.0, 0.25, 0.01);
}

TEST(RngStream, UniformRejectsEmptyInterval) {
  RngStream rng(0);
  EXPECT_THROW(rng.uniform(1.0, 1.0), ArgumentError);
  EXPECT_THROW(sample_uniform(rng, 2.0, 1.0, {3}), ArgumentError);
}

TEST(RngStream, BelowIsRoughlyUniform) {
  RngStream rng(8);
  std::array<int, 7> counts{};
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.below(7)];
  for (int c : counts) EXPECT_NEAR(c, n / 7, 400);
  EXPECT_THROW(rng.below(0), ArgumentError);
  EXPECT_EQ(rng.below(1), 0u);
}

TEST(RngStream, PermutationIsABijectionAndSeeded) {
  RngStream a(21), b(21);
  const auto p = a.permutation(50);
  EXPECT_EQ(p, b.permutation(50));
  auto sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < sorted.size(); ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(p, sorted);
  EXPECT_TRUE(RngStream(0).permutation(0).empty());
}

TEST(RngStream, PermutationPositionsAreUniform) {
  // Element 0 should land in each of 4 slots about a quarter of the time.
  std::array<int, 4> slot{};
  for (std::uint64_t s = 0; s < 8000; ++s) {
    RngStream rng(s);
    const auto p = rng.permutation(4);
    ++slot[std::find(p.begin(), p.end(), 0u) - p.begin()];
  }
  for (int c : slot) EXPECT_NEAR(c, 2000, 150);
}

}  // namespace
