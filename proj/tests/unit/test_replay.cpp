#include <gtest/gtest.h>

#include <map>

#include "widenet/replay.hpp"

using namespace widenet;

namespace {

Transition make_transition(double tag) {
  Transition t;
  t.s = Matrix::Constant(1, 2, tag);
  t.a = Matrix::Constant(1, 1, -tag);
  t.r = tag;
  t.s_next = Matrix::Constant(1, 2, tag + 0.5);
  return t;
}

double naive_mass(const PrioritizedBuffer& buf) {
  double acc = 0.0;
  for (std::size_t i = 0; i < buf.size(); ++i) acc += std::pow(buf.priority(i), buf.options().alpha);
  return acc;
}

std::vector<double> frequencies(const PrioritizedBuffer& buf, int draws, std::size_t batch, Rng& rng) {
  std::vector<double> counts(buf.size(), 0.0);
  for (int d = 0; d < draws / static_cast<int>(batch); ++d) {
    auto s = buf.sample(batch, rng);
    for (auto& i : s.indices) counts[i.slot] += 1.0;
  }
  for (auto& c : counts) c /= static_cast<double>(draws);
  return counts;
}

}  // namespace

TEST(Add, FirstInsertSetsRoot) {
  PrioritizedBuffer buf(2, 1, {.capacity = 8, .alpha = 1.0});
  buf.add(make_transition(1), 2.5);
  EXPECT_EQ(buf.size(), 1u);
  EXPECT_EQ(buf.total_priority(), 2.5);
}

TEST(Add, RingOverwritesOldest) {
  PrioritizedBuffer buf(2, 1, {.capacity = 2});
  buf.add(make_transition(1));
  buf.add(make_transition(2));
  auto idx = buf.add(make_transition(3));
  EXPECT_EQ(buf.size(), 2u);
  EXPECT_EQ(idx.slot, 0u);
  std::vector<std::size_t> slots{0, 1};
  auto b = buf.gather(slots);
  EXPECT_EQ(b.r(0, 0), 3.0);
  EXPECT_EQ(b.r(1, 0), 2.0);
}

TEST(Add, RejectsNonPositivePriority) {
  PrioritizedBuffer buf(2, 1);
  EXPECT_THROW(buf.add(make_transition(1), 0.0), InvalidArgument);
  EXPECT_THROW(buf.add(make_transition(1), -1.0), InvalidArgument);
}

TEST(Add, DefaultPriorityIsCurrentMax) {
  PrioritizedBuffer buf(2, 1, {.capacity = 8, .alpha = 1.0});
  buf.add(make_transition(1), 4.0);
  buf.add(make_transition(2));
  EXPECT_EQ(buf.priority(1), 4.0);
}

TEST(Add, RandomAddsMatchNaiveSum) {
  PrioritizedBuffer buf(2, 1, {.capacity = 37, .alpha = 0.6});
  Rng rng(5);
  std::uniform_real_distribution<double> p(0.01, 10.0);
  for (int i = 0; i < 1000; ++i) {
    buf.add(make_transition(i), p(rng));
    ASSERT_NEAR(buf.total_priority(), naive_mass(buf), 1e-9);
  }
}

TEST(Sample, AlphaZeroIsUniformWithUnitWeights) {
  PrioritizedBuffer buf(2, 1, {.capacity = 16, .alpha = 0.0, .beta = 0.7});
  Rng rng(3);
  std::uniform_real_distribution<double> p(0.1, 5.0);
  for (int i = 0; i < 10; ++i) buf.add(make_transition(i), p(rng));
  auto s = buf.sample(10, rng);
  EXPECT_TRUE(s.is_weights == Matrix::Ones(10, 1));
  auto f = frequencies(buf, 100000, 10, rng);
  for (double v : f) EXPECT_NEAR(v, 0.1, 0.02);
}

TEST(Sample, TwoItemFrequenciesMatchClosedForm) {
  PrioritizedBuffer buf(2, 1, {.capacity = 2, .alpha = 1.0});
  buf.add(make_transition(0), 1.0);
  buf.add(make_transition(1), 3.0);
  Rng rng(11);
  std::vector<double> counts(2, 0.0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) counts[buf.sample(1, rng).indices[0].slot] += 1;
  EXPECT_NEAR(counts[0] / draws, 0.25, 0.02);
  EXPECT_NEAR(counts[1] / draws, 0.75, 0.02);
}

TEST(Sample, ImportanceWeightsNormalisedByMax) {
  PrioritizedBuffer buf(2, 1, {.capacity = 2, .alpha = 1.0, .beta = 1.0});
  buf.add(make_transition(0), 1.0);
  buf.add(make_transition(1), 3.0);
  Rng rng(1);
  // (N·P)^{-1} = (2, 2/3) → normalised (1, 1/3).
  for (int i = 0; i < 20; ++i) {
    auto s = buf.sample(2, rng);
    for (std::size_t k = 0; k < 2; ++k) {
      const double expected = s.indices[k].slot == 0 ? 1.0 : 1.0 / 3.0;
      EXPECT_NEAR(s.is_weights(static_cast<Index>(k), 0), expected, 1e-15);
    }
  }
}

TEST(Sample, SmallBuffersMatchClosedFormDistribution) {
  Rng rng(21);
  std::uniform_real_distribution<double> p(0.1, 4.0);
  for (std::size_t n : {3u, 7u, 16u}) {
    PrioritizedBuffer buf(2, 1, {.capacity = n, .alpha = 0.6});
    for (std::size_t i = 0; i < n; ++i) buf.add(make_transition(static_cast<double>(i)), p(rng));
    auto f = frequencies(buf, 100000, 1, rng);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(f[i], buf.leaf_mass(i) / buf.total_priority(), 0.02);
  }
}

TEST(Sample, EmptyOrUndersizedBufferRejected) {
  PrioritizedBuffer buf(2, 1);
  Rng rng(1);
  EXPECT_THROW(buf.sample(1, rng), StateError);
  buf.add(make_transition(0));
  EXPECT_THROW(buf.sample(2, rng), StateError);
}

TEST(Sample, UniformModeMatchesAlphaZeroIndices) {
  PrioritizedBuffer uni(2, 1, {.capacity = 50, .mode = ReplayMode::uniform});
  PrioritizedBuffer pri(2, 1, {.capacity = 50, .alpha = 0.0, .beta = 0.4});
  Rng prng(2);
  std::uniform_real_distribution<double> p(0.1, 9.0);
  for (int i = 0; i < 73; ++i) {
    const double pr = p(prng);
    uni.add(make_transition(i), pr);
    pri.add(make_transition(i), pr);
  }
  Rng r1(99), r2(99);
  for (int k = 0; k < 200; ++k) {
    auto a = uni.sample(32, r1);
    auto b = pri.sample(32, r2);
    ASSERT_EQ(a.indices, b.indices);
    ASSERT_TRUE(a.is_weights == b.is_weights);
  }
}

TEST(UpdatePriorities, ZeroErrorFloorsAtEpsilon) {
  PrioritizedBuffer buf(2, 1, {.capacity = 4, .alpha = 1.0});
  auto idx = buf.add(make_transition(0));
  std::vector<ReplayIndex> ids{idx};
  std::vector<double> td{0.0};
  buf.update_priorities(ids, td);
  EXPECT_EQ(buf.priority(0), 1e-6);
  EXPECT_GT(buf.total_priority(), 0.0);
}

TEST(UpdatePriorities, EqualPrioritiesGiveUniformSampling) {
  PrioritizedBuffer buf(2, 1, {.capacity = 8, .alpha = 0.6});
  Rng rng(4);
  std::vector<ReplayIndex> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(buf.add(make_transition(i), 0.5 + i));
  std::vector<double> td(8, 0.3);
  buf.update_priorities(ids, td);
  auto f = frequencies(buf, 100000, 8, rng);
  for (double v : f) EXPECT_NEAR(v, 0.125, 0.02);
}

TEST(UpdatePriorities, StaleIndicesIgnoredAndCounted) {
  PrioritizedBuffer buf(2, 1, {.capacity = 2, .alpha = 1.0});
  auto old = buf.add(make_transition(0), 1.0);
  buf.add(make_transition(1), 1.0);
  buf.add(make_transition(2), 2.0);  // overwrites slot 0
  std::vector<ReplayIndex> ids{old};
  std::vector<double> td{100.0};
  buf.update_priorities(ids, td);
  EXPECT_EQ(buf.stale_updates(), 1);
  EXPECT_EQ(buf.priority(0), 2.0);
}

TEST(SumTreeProperty, RootMatchesNaiveSumUnderRandomMutations) {
  PrioritizedBuffer buf(2, 1, {.capacity = 64, .alpha = 0.6});
  Rng rng(77);
  std::uniform_real_distribution<double> p(0.0, 20.0);
  std::uniform_int_distribution<int> coin(0, 1);
  std::vector<ReplayIndex> live;
  for (int op = 0; op < 10000; ++op) {
    if (live.empty() || coin(rng) == 0) {
      live.push_back(buf.add(make_transition(op), p(rng) + 1e-3));
    } else {
      auto s = buf.sample(std::min<std::size_t>(4, buf.size()), rng);
      std::vector<double> td;
      for (std::size_t k = 0; k < s.indices.size(); ++k) td.push_back(p(rng) - 10.0);
      buf.update_priorities(s.indices, td);
    }
    ASSERT_NEAR(buf.total_priority(), naive_mass(buf), 1e-9);
  }
  for (std::size_t i = 0; i < buf.size(); ++i) EXPECT_GT(buf.priority(i), 0.0);
}
