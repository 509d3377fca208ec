#include "tacbench/rng.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <vector>

namespace tacbench {
namespace {

// Known-answer vectors published with the Random123 reference code.
TEST(Philox, KnownAnswers) {
  EXPECT_EQ(philox4x32({0, 0, 0, 0}, {0, 0}),
            (PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8}));
  EXPECT_EQ(philox4x32({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff},
                       {0xffffffff, 0xffffffff}),
            (PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd}));
  EXPECT_EQ(philox4x32({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344},
                       {0xa4093822, 0x299f31d0}),
            (PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1}));
}

TEST(CounterRng, SameKeySameStream) {
  CounterRng a(42, StreamDomain::kTrainReset, 7, 3);
  CounterRng b(42, StreamDomain::kTrainReset, 7, 3);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u32(), b.next_u32());
}

TEST(CounterRng, DomainsAndStreamsDiffer) {
  CounterRng train(42, StreamDomain::kTrainReset, 7, 3);
  CounterRng eval(42, StreamDomain::kEvalReset, 7, 3);
  CounterRng other_env(42, StreamDomain::kTrainReset, 8, 3);
  CounterRng other_episode(42, StreamDomain::kTrainReset, 7, 4);
  const auto x = train.next_u64();
  EXPECT_NE(x, eval.next_u64());
  EXPECT_NE(x, other_env.next_u64());
  EXPECT_NE(x, other_episode.next_u64());
}

TEST(CounterRng, UniformMomentsAndRange) {
  CounterRng rng(1, StreamDomain::kTest, 0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
    sum2 += u * u;
  }
  EXPECT_NEAR(sum / n, 0.5, 0.005);
  EXPECT_NEAR(sum2 / n - (sum / n) * (sum / n), 1.0 / 12.0, 0.002);
}

TEST(CounterRng, NormalMoments) {
  CounterRng rng(2, StreamDomain::kTest, 0);
  const int n = 200000;
  double sum = 0.0, sum2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sum2 += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(sum2 / n, 1.0, 0.01);
}

TEST(CounterRng, ShuffleIsPermutation) {
  CounterRng rng(3, StreamDomain::kTest, 0);
  std::vector<int> v(257);
  std::iota(v.begin(), v.end(), 0);
  rng.shuffle(std::span<int>(v));
  EXPECT_FALSE(std::is_sorted(v.begin(), v.end()));
  std::sort(v.begin(), v.end());
  for (int i = 0; i < 257; ++i) EXPECT_EQ(v[i], i);
}

}  // namespace
}  // namespace tacbench
