#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "tacbench/nn.hpp"
#include "tacbench/ppo.hpp"

#include "oracles.hpp"

namespace tacbench {
namespace {

using namespace oracle;

TEST(Gae, SingleTerminatedStep) {
  std::vector<double> r{1.0}, v{0.0}, tv{0.0}, last{0.0};
  std::vector<std::uint8_t> term{1}, trunc{0};
  auto g = compute_gae(r, v, term, trunc, tv, last, 1, 0.99, 0.95);
  EXPECT_DOUBLE_EQ(g.advantages[0], 1.0);
}

TEST(Gae, UndiscountedTwoSteps) {
  std::vector<double> r{1.0, 1.0}, v{0.0, 0.0}, tv{0.0, 0.0}, last{0.0};
  std::vector<std::uint8_t> term{0, 1}, trunc{0, 0};
  auto g = compute_gae(r, v, term, trunc, tv, last, 1, 1.0, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 2.0);
  EXPECT_DOUBLE_EQ(g.advantages[1], 1.0);
}

TEST(Gae, TruncationBootstrapsTerminationDoesNot) {
  std::vector<double> r{0.0}, v{0.0}, tv{4.0}, last{100.0};
  std::vector<std::uint8_t> term{0}, trunc{1};
  auto g = compute_gae(r, v, term, trunc, tv, last, 1, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 2.0);
  term[0] = 1;
  trunc[0] = 0;
  g = compute_gae(r, v, term, trunc, tv, last, 1, 0.5, 1.0);
  EXPECT_DOUBLE_EQ(g.advantages[0], 0.0);
}

TEST(Gae, MatchesExplicitSumOracle) {
  CounterRng rng(11, StreamDomain::kTest, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto c = random_gae_case(rng);
    const auto g = compute_gae(c.r, c.v, c.term, c.trunc, c.tv, c.last, c.N, c.gamma, c.lambda);
    const auto oracle = gae_oracle(c);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      ASSERT_NEAR(g.advantages[i], static_cast<double>(oracle[i]), 1e-10) << trial << " " << i;
      ASSERT_NEAR(g.returns[i], static_cast<double>(oracle[i] + c.v[i]), 1e-10);
    }
  }
}

TEST(Gradients, LinearTwoParameterPolicy) {
  CounterRng rng(3, StreamDomain::kTest, 1);
  for (int k = 0; k < 20; ++k) {
    auto c = random_grad_case(rng, false, true);
    EXPECT_LT(max_rel_error(c), 1e-4);
  }
}

TEST(Gradients, SmallNetworkAllTerms) {
  CounterRng rng(3, StreamDomain::kTest, 2);
  for (int k = 0; k < 100; ++k) {
    auto c = random_grad_case(rng, k % 2 == 0, false);
    ASSERT_LE(c.params.size(), 64u);
    EXPECT_LT(max_rel_error(c), 1e-4) << k;
  }
}

TEST(Gradients, EachTermSeparately) {
  CounterRng rng(3, StreamDomain::kTest, 3);
  for (int term = 0; term < 4; ++term) {
    auto c = random_grad_case(rng, true, false);
    if (term != 0) std::fill(c.adv.begin(), c.adv.end(), 0.0);
    c.w.value_coef = term == 1 ? 1.0 : 0.0;
    c.w.entropy_coef = term == 2 ? 1.0 : 0.0;
    c.w.aux_coef = term == 3 ? 1.0 : 0.0;
    EXPECT_LT(max_rel_error(c), 1e-4) << term;
  }
}

TEST(Policy, EntropyIncreasesWithLogStd) {
  double prev = -INFINITY;
  for (double s = -4.9; s < 1.9; s += 0.1) {
    std::vector<double> ls{s, s};
    const double h = gaussian_entropy(ls);
    EXPECT_GT(h, prev);
    prev = h;
  }
}

TEST(Policy, RatioOneGivesZeroPolicyLossAfterNormalization) {
  CounterRng rng(5, StreamDomain::kTest, 0);
  auto c = random_grad_case(rng, false, false);
  const ParamLayout L(c.spec);
  double mean = 0.0;
  for (double a : c.adv) mean += a;
  mean /= c.adv.size();
  double sq = 0.0;
  for (double a : c.adv) sq += (a - mean) * (a - mean);
  const double sd = std::sqrt(sq / c.adv.size());
  for (std::size_t i = 0; i < c.adv.size(); ++i) {
    c.adv[i] = (c.adv[i] - mean) / (sd + 1e-8);
    EncoderPass pass;
    Mat m;
    Eigen::RowVectorXd v;
    policy_value(c.params, L, c.obs.col(i), m, v, pass);
    c.old_lp[i] = gaussian_log_prob({c.u.col(i).data(), 2}, {m.data(), 2},
                                    {c.params.data() + L.log_std, 2});
  }
  std::vector<double> g(c.params.size(), 0.0);
  ChunkData d{c.obs, c.u, c.old_lp, c.adv, c.ret, c.tgt, c.mask};
  const auto st = loss_and_grad(c.params, c.spec, L, d, c.w, g);
  EXPECT_NEAR(st.policy_loss, 0.0, 1e-12);
  EXPECT_NEAR(st.approx_kl, 0.0, 1e-12);
}

TEST(Policy, ClippedBranchUsesClippedRatio) {
  // One sample, linear policy with zero weights: mean 0, log-std 0.
  NetworkSpec spec;
  spec.obs_dim = 1;
  spec.n_actions = 1;
  spec.hidden = {};
  spec.init_log_std = 0.0;
  auto p = init_params(spec, 1);
  std::fill(p.begin(), p.end(), 0.0);
  const ParamLayout L(spec);
  Mat obs = Mat::Zero(1, 1), u = Mat::Zero(1, 1), tgt(0, 0);
  const double lp = gaussian_log_prob({u.data(), 1}, std::vector<double>{0.0}, {p.data() + L.log_std, 1});
  std::vector<double> old{lp - std::log(1.5)}, adv{2.0}, ret{0.0};
  std::vector<std::uint8_t> mask{0};
  LossWeights w;
  w.clip_epsilon = 0.2;
  w.value_coef = 1.0;
  std::vector<double> g(p.size(), 0.0);
  ChunkData d{obs, u, old, adv, ret, tgt, mask};
  const auto st = loss_and_grad(p, spec, L, d, w, g);
  EXPECT_NEAR(st.policy_loss, -1.2 * 2.0, 1e-12);
  EXPECT_EQ(g[L.mean.b], 0.0);
}

TEST(Aux, LossDefinition) {
  Mat pred = Mat::Random(4, 6);
  EXPECT_EQ(aux_forward_dynamics_loss(pred, pred, {}), 0.0);
  Mat off = pred.array() + 0.3;
  EXPECT_NEAR(aux_forward_dynamics_loss(off, pred, {}), 0.09, 1e-15);
}

TEST(Norm, MatchesTwoPassOracle) {
  CounterRng rng(9, StreamDomain::kTest, 0);
  const std::size_t D = 5;
  RunningNorm norm(D);
  std::vector<double> all;
  for (int batch = 0; batch < 40; ++batch) {
    const std::size_t rows = 1 + rng.below(50);
    std::vector<double> data(rows * D);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t i = 0; i < D; ++i) data[r * D + i] = 100.0 * i + (i + 1) * rng.normal();
    norm.update(data, rows);
    all.insert(all.end(), data.begin(), data.end());
  }
  const std::size_t n = all.size() / D;
  ASSERT_EQ(norm.count(), n);
  for (std::size_t i = 0; i < D; ++i) {
    Wide mean = 0;
    for (std::size_t r = 0; r < n; ++r) mean += all[r * D + i];
    mean /= n;
    Wide var = 0;
    for (std::size_t r = 0; r < n; ++r) var += (all[r * D + i] - mean) * (all[r * D + i] - mean);
    var /= n;
    EXPECT_NEAR(norm.mean()[i], static_cast<double>(mean), 1e-9 * std::abs(static_cast<double>(mean)) + 1e-12);
    EXPECT_NEAR(norm.variance(i), static_cast<double>(var), 1e-9 * static_cast<double>(var));
  }
}

TEST(Norm, ClipsAtBound) {
  RunningNorm norm(1);
  std::vector<double> data{0.0, 1.0, 0.0, 1.0};
  norm.update(data, 4);
  std::vector<double> in{100.0, -100.0}, out(2);
  norm.normalize(in, out);
  EXPECT_EQ(out[0], 5.0);
  EXPECT_EQ(out[1], -5.0);
}

TrainerConfig small_paddle(bool aux_head, double aux_coef, std::size_t threads = 1) {
  TrainerConfig c;
  c.morphology = *builtin_morphology("paddle");
  c.task.task = TaskKind::kBounce;
  c.n_train = 8;
  c.n_eval = 3;
  c.seed = 42;
  c.hidden = {16, 16};
  c.hp.rollout_horizon = 16;
  c.hp.n_minibatches = 2;
  c.hp.n_epochs = 2;
  c.hp.aux_coef = aux_coef;
  c.aux_head = aux_head;
  c.aux_hidden = 8;
  c.total_env_steps = 10'000;
  c.eval_interval = 1'000'000;
  c.eval_episodes = 3;
  c.threads = threads;
  return c;
}

TEST(Trainer, AuxCoefZeroMatchesDisabledHead) {
  Trainer with(small_paddle(true, 0.0));
  Trainer without(small_paddle(false, 0.0));
  for (int i = 0; i < 3; ++i) {
    with.iterate();
    without.iterate();
  }
  ASSERT_GT(with.params().size(), without.params().size());
  for (std::size_t i = 0; i < without.params().size(); ++i)
    ASSERT_EQ(with.params()[i], without.params()[i]) << i;
}

TEST(Trainer, AuxHeadTrainsEncoderWhenEnabled) {
  Trainer with(small_paddle(true, 1.0));
  Trainer without(small_paddle(false, 0.0));
  with.iterate();
  without.iterate();
  EXPECT_NE(with.params()[0], without.params()[0]);
}

TEST(Trainer, IterationTouchesOnlyTrainingEnvs) {
  Trainer t(small_paddle(false, 0.0));
  const auto eval_resets = t.eval_env().reset_counts();
  const auto eval_digest = t.eval_env().digest();
  const auto before = t.train_env().steps_taken();
  const auto m = t.iterate();
  EXPECT_EQ(t.train_env().steps_taken() - before, 16u * 8u);
  EXPECT_EQ(m.update.samples, 16u * 8u);
  EXPECT_EQ(t.eval_env().steps_taken(), 0u);
  EXPECT_EQ(t.eval_env().reset_counts(), eval_resets);
  EXPECT_EQ(t.eval_env().digest(), eval_digest);
  EXPECT_FALSE(m.eval.has_value());
}

TEST(Trainer, EvaluationFreezesNormalization) {
  Trainer t(small_paddle(false, 0.0));
  t.iterate();
  const RunningNorm before = t.norm();
  const auto params = t.params();
  const auto rep = t.evaluate(5);
  EXPECT_EQ(rep.episodes, 5);
  EXPECT_GE(rep.mean_return, 0.0);
  EXPECT_TRUE(t.norm() == before);
  EXPECT_EQ(t.params(), params);
}

TEST(Trainer, ThreadCountDoesNotChangeResults) {
  Trainer a(small_paddle(true, 0.5, 1));
  Trainer b(small_paddle(true, 0.5, 3));
  for (int i = 0; i < 2; ++i) {
    a.iterate();
    b.iterate();
  }
  EXPECT_EQ(a.digest(), b.digest());
  EXPECT_EQ(a.serialize_state(), b.serialize_state());
}

TEST(Trainer, ResumeIsByteIdentical) {
  Trainer straight(small_paddle(true, 0.5));
  for (int i = 0; i < 3; ++i) straight.iterate();

  Trainer first(small_paddle(true, 0.5));
  first.iterate();
  const std::string state = first.serialize_state();
  Trainer resumed(small_paddle(true, 0.5));
  resumed.restore_state(state);
  for (int i = 0; i < 2; ++i) resumed.iterate();
  EXPECT_EQ(resumed.serialize_state(), straight.serialize_state());
}

TEST(Trainer, NonFiniteLossRollsBack) {
  Trainer t(small_paddle(false, 0.0));
  t.iterate();
  t.params()[0] = NAN;
  const auto bad = t.params();
  const auto m = t.iterate();
  EXPECT_TRUE(m.update.rolled_back);
  ASSERT_EQ(t.params().size(), bad.size());
  EXPECT_TRUE(std::isnan(t.params()[0]));
  for (std::size_t i = 1; i < bad.size(); ++i) ASSERT_EQ(t.params()[i], bad[i]);
}

}  // namespace
}  // namespace tacbench
