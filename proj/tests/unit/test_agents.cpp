#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "widenet/agents.hpp"

using namespace widenet;

namespace {

constexpr int kState = 3;
constexpr int kAction = 2;

ActionBounds bounds(double b = 2.0) { return {Matrix::Constant(1, kAction, -b), Matrix::Constant(1, kAction, b)}; }

OfeNetConfig tiny_ofenet(bool enabled = true) {
  OfeNetConfig c;
  c.enabled = enabled;
  c.layers_s = 1;
  c.units_s = 3;
  c.layers_sa = 1;
  c.units_sa = 3;
  return c;
}

AgentConfig tiny(AgentKind kind, int units = 4, bool bn = false) {
  AgentConfig c = AgentConfig::defaults(kind);
  c.actor = {BlockKind::densenet, 2, units, Activation::swish, bn, 0};
  c.critic = {BlockKind::densenet, 2, units, Activation::swish, bn, 0};
  return c;
}

struct Fixture {
  Rng rng;
  OfeNet ofe;
  std::unique_ptr<Agent> agent;
  Fixture(AgentKind kind, AgentConfig cfg, std::uint64_t seed = 1, bool ofenet = true) : rng(seed) {
    ofe = OfeNet(kState, kAction, tiny_ofenet(ofenet), rng);
    // Move BN running statistics off their identity defaults.
    if (ofenet)
      for (int i = 0; i < 10; ++i) ofe.update(batch(16));
    agent = make_agent(cfg, ofe.state_feature_dim(), ofe.state_action_feature_dim(), bounds(), rng);
    (void)kind;
  }
  Batch batch(Index n) {
    return Batch{gaussian(n, kState, rng), uniform(n, kAction, rng, -2, 2), gaussian(n, 1, rng),
                 gaussian(n, kState, rng), Matrix::Zero(n, 1)};
  }
};

std::vector<Matrix> values(const ParamList& ps) {
  std::vector<Matrix> out;
  for (auto* p : ps) out.push_back(p->value);
  return out;
}

bool unchanged(const ParamList& ps, const std::vector<Matrix>& before) {
  for (std::size_t i = 0; i < ps.size(); ++i)
    if (ps[i]->value != before[i]) return false;
  return true;
}

double huber(double v, double d) { return std::abs(v) <= d ? 0.5 * v * v : d * (std::abs(v) - 0.5 * d); }

double row_q(Network& net, const Matrix& z) { return net.forward(z, Mode::eval)(0, 0); }

// Per-row SAC target: every scalar of the squashed-Gaussian sample and its
// log-probability is evaluated in a loop.
Matrix sac_target_oracle(SacAgent& agent, OfeNet& ofe, const Batch& b, const Matrix& noise) {
  const auto& cfg = agent.config();
  Matrix y(b.size(), 1);
  for (Index i = 0; i < b.size(); ++i) {
    Matrix s1 = b.s_next.row(i);
    Matrix head = agent.actor().forward(ofe.encode_state(s1), Mode::eval);
    Matrix a(1, kAction);
    double logp = 0.0;
    for (int j = 0; j < kAction; ++j) {
      const double ls = std::clamp(head(0, kAction + j), cfg.log_std_min, cfg.log_std_max);
      const double u = head(0, j) + std::exp(ls) * noise(i, j);
      const double th = std::tanh(u);
      a(0, j) = 2.0 * th;
      logp += -0.5 * noise(i, j) * noise(i, j) - ls - 0.5 * std::log(2.0 * std::numbers::pi) -
              std::log(1.0 - th * th + 1e-6);
    }
    Matrix zt = ofe.encode_state_action(s1, a, Mode::eval, true);
    const double q = std::min(row_q(agent.target_critic(0), zt), row_q(agent.target_critic(1), zt));
    y(i, 0) = b.r(i, 0) + cfg.gamma * (1.0 - b.done(i, 0)) * (q - agent.alpha() * logp);
  }
  return y;
}

double critic_loss_oracle(Agent& agent, OfeNet& ofe, const Batch& b, const Matrix& y, const Matrix& w) {
  double total = 0.0;
  for (int k = 0; k < 2; ++k) {
    double acc = 0.0;
    for (Index i = 0; i < b.size(); ++i) {
      Matrix z = ofe.encode_state_action(b.s.row(i), b.a.row(i));
      acc += w(i, 0) * huber(row_q(agent.critic(k), z) - y(i, 0), agent.config().huber_delta);
    }
    total += acc / static_cast<double>(b.size());
  }
  return total;
}

}  // namespace

TEST(Warmup, RandomBranchBeforeBoundary) {
  EXPECT_EQ(warmup_policy(0, 10000), Behavior::random);
  EXPECT_EQ(warmup_policy(9999, 10000), Behavior::random);
  EXPECT_EQ(warmup_policy(10000, 10000), Behavior::policy);
  EXPECT_EQ(warmup_policy(0, 0), Behavior::policy);
}

TEST(Warmup, PaperDefaults) {
  EXPECT_EQ(AgentConfig::defaults(AgentKind::sac).warmup_steps, 10000);
  EXPECT_EQ(AgentConfig::defaults(AgentKind::td3).warmup_steps, 100000);
  EXPECT_EQ(AgentConfig::defaults(AgentKind::td3).batch_size, 256);
}

TEST(Config, JointFinetuneRejected) {
  AgentConfig c = tiny(AgentKind::sac);
  c.joint_finetune = true;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Act, SacZeroHeadGivesCentreAction) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac));
  f.agent->actor().head().weight().value.setZero();
  f.agent->actor().head().bias().value.setZero();
  Matrix a = f.agent->act(gaussian(4, f.ofe.state_feature_dim(), f.rng), false, f.rng);
  EXPECT_TRUE(a == Matrix::Zero(4, kAction));
}

TEST(Act, Td3DeterministicIsPure) {
  Fixture f(AgentKind::td3, tiny(AgentKind::td3, 4, true));
  Matrix z = gaussian(3, f.ofe.state_feature_dim(), f.rng);
  Rng r1(1), r2(2);
  EXPECT_TRUE(f.agent->act(z, false, r1) == f.agent->act(z, false, r2));
}

TEST(Act, ActionsStayInBounds) {
  for (AgentKind k : {AgentKind::sac, AgentKind::td3}) {
    Fixture f(k, tiny(k));
    f.agent->actor().head().bias().value.setConstant(5.0);
    Matrix a = f.agent->act(gaussian(200, f.ofe.state_feature_dim(), f.rng), true, f.rng);
    EXPECT_LE(a.maxCoeff(), 2.0);
    EXPECT_GE(a.minCoeff(), -2.0);
  }
}

TEST(Act, SacStochasticMeanMatchesMonteCarloOracle) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac));
  auto& head = f.agent->actor().head();
  head.weight().value.setZero();
  head.bias().value << 0.3, -0.6, -0.5, 0.2;  // μ, log σ
  const int n = 100000;
  Matrix z = Matrix::Zero(n, f.ofe.state_feature_dim());
  Rng draw(123);
  Matrix a = f.agent->act(z, true, draw);

  Rng ref(987654);
  std::normal_distribution<double> eps;
  const double mu[2] = {0.3, -0.6}, ls[2] = {-0.5, 0.2};
  for (int j = 0; j < kAction; ++j) {
    double sum = 0, sq = 0;
    for (int i = 0; i < n; ++i) {
      const double v = 2.0 * std::tanh(mu[j] + std::exp(ls[j]) * eps(ref));
      sum += v;
      sq += v * v;
    }
    const double m = sum / n;
    const double sd = std::sqrt(sq / n - m * m);
    const double se = std::sqrt(2.0) * sd / std::sqrt(static_cast<double>(n));
    EXPECT_NEAR(a.col(j).mean(), m, 3 * se);
  }
}

TEST(CriticUpdate, NoBootstrapGivesUnitResiduals) {
  AgentConfig c = tiny(AgentKind::sac);
  c.gamma = 0.0;
  Fixture f(AgentKind::sac, c);
  for (int k = 0; k < 2; ++k) {
    f.agent->critic(k).head().weight().value.setZero();
    f.agent->critic(k).head().bias().value.setZero();
  }
  Batch b = f.batch(8);
  b.r.setOnes();
  auto r = f.agent->critic_update(b, Matrix::Ones(8, 1), f.ofe, f.rng);
  for (double td : r.td_errors) EXPECT_EQ(td, 1.0);
  EXPECT_DOUBLE_EQ(r.loss, 2 * 0.5);
}

TEST(CriticUpdate, TerminalRowsNeverBootstrap) {
  Rng g(3);
  for (AgentKind k : {AgentKind::sac, AgentKind::td3})
    for (double gamma : {0.0, 0.5, 0.99, 1.0}) {
      AgentConfig c = tiny(k);
      c.gamma = gamma;
      Fixture f(k, c, 5);
      Batch b = f.batch(8);
      for (Index i = 0; i < 8; i += 2) b.done(i, 0) = 1.0;
      Matrix y = f.agent->critic_targets(b, f.ofe, g);
      for (Index i = 0; i < 8; i += 2) EXPECT_EQ(y(i, 0), b.r(i, 0));
    }
}

TEST(CriticUpdate, SacLossMatchesLoopOracle) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 7);
  // Give the target critics their own weights.
  for (int k = 0; k < 2; ++k)
    for (auto* p : f.agent->target_critic(k).parameters())
      if (p->trainable()) p->value += 0.1 * gaussian(p->value.rows(), p->value.cols(), f.rng);
  Batch b = f.batch(8);
  b.done(3, 0) = 1.0;
  Matrix w = uniform(8, 1, f.rng, 0.2, 1.0);
  Rng r1(42), r2(42);
  Matrix noise = gaussian(8, kAction, r2);
  Matrix y = sac_target_oracle(static_cast<SacAgent&>(*f.agent), f.ofe, b, noise);
  const double expected = critic_loss_oracle(*f.agent, f.ofe, b, y, w);
  auto r = f.agent->critic_update(b, w, f.ofe, r1);
  EXPECT_NEAR(r.loss, expected, 1e-10);
}

TEST(CriticUpdate, Td3TargetMatchesLoopOracle) {
  Fixture f(AgentKind::td3, tiny(AgentKind::td3), 8);
  auto& agent = static_cast<Td3Agent&>(*f.agent);
  Batch b = f.batch(8);
  Rng r1(5), r2(5);
  Matrix noise = gaussian(8, kAction, r2);
  Matrix y = agent.critic_targets(b, f.ofe, r1);
  for (Index i = 0; i < 8; ++i) {
    Matrix zt = f.ofe.encode_state(b.s_next.row(i), Mode::eval, true);
    Matrix mu = agent.target_actor().forward(zt, Mode::eval);
    Matrix a(1, kAction);
    for (int j = 0; j < kAction; ++j) {
      const double eps = std::clamp(0.2 * noise(i, j), -0.5, 0.5);
      a(0, j) = std::clamp(2.0 * (std::tanh(mu(0, j)) + eps), -2.0, 2.0);
    }
    Matrix zsa = f.ofe.encode_state_action(b.s_next.row(i), a, Mode::eval, true);
    const double q = std::min(row_q(agent.target_critic(0), zsa), row_q(agent.target_critic(1), zsa));
    EXPECT_NEAR(y(i, 0), b.r(i, 0) + 0.99 * q, 1e-12);
  }
}

TEST(CriticUpdate, HugeHuberDeltaIsSquaredError) {
  AgentConfig c = tiny(AgentKind::sac);
  c.huber_delta = 1e6;
  Fixture f(AgentKind::sac, c, 9);
  Batch b = f.batch(16);
  Matrix w = uniform(16, 1, f.rng, 0.1, 1.0);
  Rng r(1);
  Matrix y = f.agent->critic_targets(b, f.ofe, r);
  Matrix z = f.ofe.encode_state_action(b.s, b.a);
  double jq = 0.0;
  for (int k = 0; k < 2; ++k) {
    Matrix q = f.agent->critic(k).forward(z, Mode::train);
    jq += (w.array() * 0.5 * (q - y).array().square()).mean();
  }
  Tape t(false);
  const double loss = t.scalar(f.agent->critic_loss(t, z, y, w));
  EXPECT_LT(std::abs(loss - jq) / std::abs(jq), 1e-8);
}

TEST(CriticUpdate, IdenticalTwinsGiveIdenticalResiduals) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 10);
  auto p0 = f.agent->critic(0).parameters(), p1 = f.agent->critic(1).parameters();
  for (std::size_t i = 0; i < p0.size(); ++i) p1[i]->value = p0[i]->value;
  Batch b = f.batch(8);
  Matrix z = f.ofe.encode_state_action(b.s, b.a);
  Rng r(1);
  Matrix y = f.agent->critic_targets(b, f.ofe, r);
  Matrix res;
  Tape t(false);
  f.agent->critic_loss(t, z, y, Matrix::Ones(8, 1), &res);
  EXPECT_TRUE(res.col(0) == res.col(1));
}

TEST(CriticUpdate, NonFiniteTargetRejected) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 11);
  Batch b = f.batch(8);
  b.r(2, 0) = std::numeric_limits<double>::infinity();
  auto before = values(f.agent->critic_parameters());
  EXPECT_THROW(f.agent->critic_update(b, Matrix::Ones(8, 1), f.ofe, f.rng), NumericError);
  EXPECT_TRUE(unchanged(f.agent->critic_parameters(), before));
}

TEST(CriticUpdate, TouchesOnlyCritics) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 12);
  auto actor = values(f.agent->actor().parameters());
  auto ofe = values(f.ofe.online_parameters());
  auto targets = values(f.agent->critic_target_parameters());
  auto critics = values(f.agent->critic_parameters());
  f.agent->critic_update(f.batch(8), Matrix::Ones(8, 1), f.ofe, f.rng);
  EXPECT_TRUE(unchanged(f.agent->actor().parameters(), actor));
  EXPECT_TRUE(unchanged(f.ofe.online_parameters(), ofe));
  EXPECT_TRUE(unchanged(f.agent->critic_target_parameters(), targets));
  EXPECT_FALSE(unchanged(f.agent->critic_parameters(), critics));
}

TEST(ActorUpdate, Td3OnlyStepsOnDelayedUpdates) {
  Fixture f(AgentKind::td3, tiny(AgentKind::td3, 4, true), 13);
  for (int step = 1; step <= 6; ++step) {
    auto before = values(f.agent->actor().parameters());
    auto targets = values(f.agent->critic_target_parameters());
    auto r = f.agent->update(f.batch(8), Matrix::Ones(8, 1), f.ofe, f.rng);
    const bool delayed = step % 2 == 0;
    EXPECT_EQ(r.actor_loss.has_value(), delayed) << step;
    EXPECT_EQ(unchanged(f.agent->actor().parameters(), before), !delayed) << step;
    EXPECT_EQ(unchanged(f.agent->critic_target_parameters(), targets), !delayed) << step;
  }
}

TEST(ActorUpdate, SacTargetsTrackByPolyak) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 14);
  auto targets = values(f.agent->critic_target_parameters());
  auto r = f.agent->update(f.batch(8), Matrix::Ones(8, 1), f.ofe, f.rng);
  ASSERT_TRUE(r.actor_loss.has_value());
  auto tg = f.agent->critic_target_parameters();
  auto on = f.agent->critic_parameters();
  for (std::size_t i = 0; i < tg.size(); ++i) {
    Matrix expected = 0.005 * on[i]->value + 0.995 * targets[i];
    EXPECT_LT((tg[i]->value - expected).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(ActorUpdate, ActorStepLeavesCriticsAndExtractor) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 15);
  auto critics = values(f.agent->critic_parameters());
  auto ofe = values(f.ofe.all_parameters());
  auto actor = values(f.agent->actor().parameters());
  f.agent->actor_update(f.batch(8), f.ofe, f.rng);
  EXPECT_TRUE(unchanged(f.agent->critic_parameters(), critics));
  EXPECT_TRUE(unchanged(f.ofe.all_parameters(), ofe));
  EXPECT_FALSE(unchanged(f.agent->actor().parameters(), actor));
}

TEST(ActorUpdate, TemperatureGradientVanishesAtTargetEntropy) {
  Fixture f(AgentKind::sac, tiny(AgentKind::sac), 16);
  auto& sac = static_cast<SacAgent&>(*f.agent);
  Matrix logp = Matrix::Constant(32, 1, -sac.target_entropy());
  EXPECT_EQ(sac.temperature_gradient(logp), 0.0);
  const double before = sac.log_alpha().value(0, 0);
  sac.temperature_step(logp);
  EXPECT_EQ(sac.log_alpha().value(0, 0), before);
  // Entropy below target (log π too high) pushes α up.
  sac.temperature_step(Matrix::Constant(32, 1, 5.0));
  EXPECT_GT(sac.log_alpha().value(0, 0), before);
}

TEST(ActorUpdate, PolicyGradientsMatchFiniteDifferences) {
  for (AgentKind k : {AgentKind::sac, AgentKind::td3}) {
    AgentConfig c = tiny(k, 2);
    c.actor.num_layers = 1;
    Fixture f(k, c, 17);
    Batch b = f.batch(6);
    Matrix z = f.ofe.encode_state(b.s);
    Matrix noise = gaussian(6, kAction, f.rng);
    auto build = [&](Tape& t) { return f.agent->actor_loss(t, z, f.ofe, noise); };
    auto r = oracle::gradcheck(f.agent->actor().parameters(), build);
    EXPECT_LT(r.max_rel_error, 1e-5) << to_string(k);
    EXPECT_GT(r.checked, 10u);
  }
}

TEST(ActorUpdate, WorksWithoutExtractor) {
  for (AgentKind k : {AgentKind::sac, AgentKind::td3}) {
    Fixture f(k, tiny(k), 18, false);
    EXPECT_EQ(f.ofe.state_action_feature_dim(), kState + kAction);
    for (int i = 0; i < 4; ++i) f.agent->update(f.batch(8), Matrix::Ones(8, 1), f.ofe, f.rng);
    EXPECT_EQ(f.agent->critic_updates(), 4);
  }
}
