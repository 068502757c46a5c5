#include <gtest/gtest.h>

#include <cstring>

#include "widenet/envs.hpp"

using namespace widenet;

namespace {
bool bitwise_equal(const Matrix& a, const Matrix& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}
}  // namespace

TEST(Reset, SameSeedSameState) {
  for (const char* name : {"pendulum", "pointmass", "linsys"}) {
    auto a = make_env({name});
    auto b = make_env({name});
    EXPECT_TRUE(bitwise_equal(a->reset(17), b->reset(17))) << name;
    EXPECT_FALSE(bitwise_equal(a->reset(17), a->reset(18))) << name;
  }
}

TEST(Reset, PendulumRanges) {
  Pendulum env;
  for (std::uint64_t s = 0; s < 200; ++s) {
    env.reset(s);
    EXPECT_GE(env.theta(), -std::numbers::pi);
    EXPECT_LE(env.theta(), std::numbers::pi);
    EXPECT_GE(env.theta_dot(), -1.0);
    EXPECT_LE(env.theta_dot(), 1.0);
  }
}

TEST(Reset, LinearSystemDrawsStandardNormal) {
  LinearSystem env;
  Matrix s = env.reset(3);
  Rng rng(3);
  EXPECT_TRUE(bitwise_equal(s, gaussian(1, 4, rng)));
}

TEST(Step, PendulumUprightRestGivesZeroReward) {
  PendulumParams p;
  p.initial_state = std::make_pair(0.0, 0.0);
  Pendulum env(p);
  env.reset(0);
  auto r = env.step(Matrix::Zero(1, 1));
  EXPECT_EQ(r.reward, 0.0);
}

TEST(Step, PendulumDynamicsMatchFormula) {
  PendulumParams p;
  p.initial_state = std::make_pair(0.3, -0.2);
  Pendulum env(p);
  env.reset(0);
  auto r = env.step(Matrix::Constant(1, 1, 1.5));
  const double thdot = -0.2 + (15.0 * std::sin(0.3) + 3.0 * 1.5) * 0.05;
  const double th = 0.3 + thdot * 0.05;
  EXPECT_DOUBLE_EQ(r.state(0, 2), thdot);
  EXPECT_DOUBLE_EQ(r.state(0, 0), std::cos(th));
  EXPECT_NEAR(r.reward, -(0.09 + 0.1 * 0.04 + 0.001 * 2.25), 1e-14);
}

TEST(Step, LinearSystemNoiselessMatchesMatrixFormula) {
  LinearSystem env;
  Matrix s = env.reset(5);
  Matrix a(1, 2);
  a << 0.3, -0.7;
  auto r = env.step(a);
  const auto& d = env.dynamics();
  Matrix expected = (d.A * s.transpose() + d.B * a.transpose()).transpose();
  EXPECT_LT((r.state - expected).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Step, PendulumTruncatesAt200) {
  Pendulum env;
  env.reset(1);
  for (int i = 1; i <= 200; ++i) {
    auto r = env.step(Matrix::Zero(1, 1));
    EXPECT_FALSE(r.terminal);
    EXPECT_EQ(r.truncated, i == 200);
    EXPECT_EQ(r.done(), i == 200);
  }
  EXPECT_THROW(env.step(Matrix::Zero(1, 1)), StateError);
}

TEST(Step, OutOfBoundActionsAreClippedAndCounted) {
  PendulumParams p;
  p.initial_state = std::make_pair(0.0, 0.0);
  Pendulum a(p), b(p);
  a.reset(0);
  b.reset(0);
  auto ra = a.step(Matrix::Constant(1, 1, 5.0));
  auto rb = b.step(Matrix::Constant(1, 1, 2.0));
  EXPECT_EQ(a.clipped_actions(), 1);
  EXPECT_EQ(b.clipped_actions(), 0);
  EXPECT_TRUE(bitwise_equal(ra.state, rb.state));
}

TEST(Step, PendulumRewardBounded) {
  Pendulum env;
  Rng rng(8);
  const double lower = -(std::numbers::pi * std::numbers::pi + 0.1 * 64 + 0.001 * 4);
  for (int ep = 0; ep < 5; ++ep) {
    env.reset(ep);
    while (!env.done()) {
      auto r = env.step(uniform(1, 1, rng, -2, 2));
      EXPECT_LE(r.reward, 0.0);
      EXPECT_GE(r.reward, lower);
    }
  }
}

TEST(Step, TrajectoriesReproducible) {
  LinearDynamics d = LinearDynamics::defaults();
  d.noise = 0.1;
  LinearSystem a(d), b(d);
  a.reset(9);
  b.reset(9);
  Rng r1(4), r2(4);
  for (int i = 0; i < 50; ++i) {
    auto sa = a.step(uniform(1, 2, r1, -1, 1));
    auto sb = b.step(uniform(1, 2, r2, -1, 1));
    ASSERT_TRUE(bitwise_equal(sa.state, sb.state));
  }
}

TEST(Step, PointMassDoubleIntegrator) {
  PointMass env;
  Matrix s = env.reset(2);
  Matrix u(1, 2);
  u << 1.0, -0.5;
  auto r = env.step(u);
  EXPECT_DOUBLE_EQ(r.reward, -(s(0, 0) * s(0, 0) + s(0, 1) * s(0, 1)) - 0.01 * 1.25);
  EXPECT_DOUBLE_EQ(r.state(0, 2), 0.1);
  EXPECT_DOUBLE_EQ(r.state(0, 0), s(0, 0) + 0.1 * 0.1);
}

TEST(Factory, UnknownNameRejected) { EXPECT_THROW(make_env({"hopper"}), ConfigError); }
