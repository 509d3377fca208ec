#include "tacbench/env.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <string>

namespace tacbench {
namespace {

std::unique_ptr<HandEnv> make_env(const std::string& hand, TaskKind task, std::size_t n,
                                  ObservationMode mode = ObservationMode::kBlind,
                                  PhysicsConfig physics = {}, std::uint64_t seed = 1,
                                  StreamDomain domain = StreamDomain::kTrainReset) {
  auto morph = *builtin_morphology(hand);
  TaskConfig tc;
  tc.task = task;
  tc.target_positions = default_baoding_targets(morph);
  return std::make_unique<HandEnv>(morph, physics, tc, mode, 4, n, seed, domain);
}

std::vector<double> random_actions(std::size_t n, int width, std::uint64_t step) {
  CounterRng rng(99, StreamDomain::kTest, 0, step);
  std::vector<double> a(n * width);
  for (auto& x : a) x = rng.uniform(-1.0, 1.0);
  return a;
}

TEST(Env, BlindStackedWidthsMatchTable) {
  const std::pair<const char*, int> rows[] = {
      {"shadow", 388}, {"shadow_lite", 288}, {"allegro", 336}, {"orca", 340}};
  for (const auto& [hand, width] : rows) {
    auto env = make_env(hand, TaskKind::kBaoding, 2);
    EXPECT_EQ(env->obs_width(), width) << hand;
    EXPECT_EQ(env->frame_width() * 4, width) << hand;
  }
}

TEST(Env, StateModeAppendsSixPerBall) {
  auto env = make_env("shadow", TaskKind::kBaoding, 2, ObservationMode::kState);
  EXPECT_EQ(env->frame_width(), 97 + 12);
  auto bounce = make_env("shadow", TaskKind::kBounce, 2, ObservationMode::kState);
  EXPECT_EQ(bounce->frame_width(), 97 + 6);
}

TEST(Env, ResetFillsStackWithInitialFrame) {
  auto env = make_env("allegro", TaskKind::kBaoding, 3);
  const auto& m = env->morphology();
  for (std::size_t e = 0; e < 3; ++e) {
    const auto first = env->stack().frame(e, 0);
    for (int s = 1; s < 4; ++s) {
      const auto f = env->stack().frame(e, s);
      EXPECT_TRUE(std::equal(first.begin(), first.end(), f.begin()));
    }
    const int err_offset = m.obs_block_widths.tactile + 2 * m.n_joints;
    for (int i = 0; i < m.obs_block_widths.cmd_error; ++i) EXPECT_EQ(first[err_offset + i], 0.0);
  }
}

TEST(Env, BaodingResetStartsOnTargetsWithoutSwitch) {
  auto env = make_env("shadow", TaskKind::kBaoding, 16);
  const auto& tc = env->task();
  for (std::size_t e = 0; e < 16; ++e) {
    for (int b = 0; b < 2; ++b)
      EXPECT_LE((Eigen::Vector3d(env->world().pos(e, b)) - tc.target_positions[b]).norm(),
                tc.baoding_spawn_jitter + 1e-12);
    EXPECT_EQ(env->task_states()[e].switch_count, 0);
    EXPECT_EQ(env->task_states()[e].target_parity, 0);
  }
}

TEST(Env, NoContactsGiveZeroTactileBlock) {
  PhysicsConfig zero_g;
  zero_g.gravity.setZero();
  auto env = make_env("shadow", TaskKind::kBounce, 2, ObservationMode::kBlind, zero_g);
  ThreadPool pool(1);
  std::vector<double> actions(2 * env->n_actions(), 0.0);
  env->step(actions, pool);
  for (std::size_t e = 0; e < 2; ++e) {
    const auto f = env->stack().newest(e);
    for (int i = 0; i < 17; ++i) EXPECT_EQ(f[i], 0.0);
  }
}

TEST(Env, ControlStepIsOneSixtiethSecond) {
  PhysicsConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.control_period(), 1.0 / 60.0);
  auto env = make_env("paddle", TaskKind::kBounce, 1);
  const double z0 = env->world().pos(0, 0).z();
  ThreadPool pool(1);
  env->step(std::vector<double>{0.0, 0.0}, pool);
  // Four substeps of free flight: dz = -g dt^2 (1 + 2 + 3 + 4).
  EXPECT_NEAR(env->world().pos(0, 0).z() - z0, -9.81 / (240.0 * 240.0) * 10.0, 1e-15);
  EXPECT_NEAR(env->world().vel(0, 0).z(), -9.81 / 60.0, 1e-15);
}

TEST(Env, TruncatesOnStepSixHundred) {
  PhysicsConfig zero_g;
  zero_g.gravity.setZero();
  auto env = make_env("paddle", TaskKind::kBounce, 2, ObservationMode::kBlind, zero_g);
  ThreadPool pool(1);
  std::vector<double> actions(4, 0.0);
  for (int t = 1; t <= 600; ++t) {
    const auto& r = env->step(actions, pool);
    for (std::size_t e = 0; e < 2; ++e) {
      ASSERT_EQ(r.terminated[e], 0);
      ASSERT_EQ(r.truncated[e], t == 600 ? 1 : 0) << t;
    }
  }
  EXPECT_EQ(env->task_states()[0].steps_elapsed, 0);
  EXPECT_EQ(env->reset_counts()[0], 2u);
}

TEST(Env, StackShiftsByOneFrame) {
  auto env = make_env("orca", TaskKind::kBaoding, 4);
  ThreadPool pool(2);
  for (std::uint64_t t = 0; t < 5; ++t) {
    const std::vector<double> before = env->stack().data();
    const auto& r = env->step(random_actions(4, env->n_actions(), t), pool);
    const int fw = env->frame_width();
    for (std::size_t e = 0; e < 4; ++e) {
      if (r.done(e)) continue;
      for (int s = 0; s < 3; ++s)
        for (int i = 0; i < fw; ++i)
          ASSERT_EQ(env->stack().frame(e, s)[i], before[e * 4 * fw + (s + 1) * fw + i]);
    }
  }
}

TEST(Env, ThreadCountDoesNotChangeTrajectory) {
  std::uint64_t reference = 0;
  for (std::size_t threads : {1u, 2u, 4u, 8u}) {
    auto env = make_env("shadow", TaskKind::kBaoding, 21);
    ThreadPool pool(threads);
    for (std::uint64_t t = 0; t < 60; ++t) env->step(random_actions(21, env->n_actions(), t), pool);
    if (threads == 1) reference = env->digest();
    EXPECT_EQ(env->digest(), reference) << threads;
  }
}

TEST(Env, EvalStreamsUntouchedByTrainSteps) {
  auto train = make_env("paddle", TaskKind::kBounce, 8, ObservationMode::kBlind, {}, 5,
                        StreamDomain::kTrainReset);
  auto eval = make_env("paddle", TaskKind::kBounce, 8, ObservationMode::kBlind, {}, 5,
                       StreamDomain::kEvalReset);
  const auto eval_digest = eval->digest();
  const auto eval_resets = eval->reset_counts();
  ThreadPool pool(2);
  for (std::uint64_t t = 0; t < 700; ++t) train->step(random_actions(8, 2, t), pool);
  EXPECT_GT(train->reset_counts()[0], 1u);
  EXPECT_EQ(eval->digest(), eval_digest);
  EXPECT_EQ(eval->reset_counts(), eval_resets);
  // Same seed, different domain: different initial states.
  auto train_fresh = make_env("paddle", TaskKind::kBounce, 8, ObservationMode::kBlind, {}, 5,
                              StreamDomain::kTrainReset);
  EXPECT_NE(train_fresh->world().pos(0, 0).x(), eval->world().pos(0, 0).x());
}

TEST(Env, NonFiniteActionTerminatesWithZeroReward) {
  auto env = make_env("paddle", TaskKind::kBounce, 2);
  ThreadPool pool(1);
  std::vector<double> actions = {0.0, 0.0, std::nan(""), 0.0};
  const auto& r = env->step(actions, pool);
  EXPECT_EQ(r.terminated[0], 0);
  EXPECT_EQ(r.terminated[1], 1);
  EXPECT_EQ(r.invalid_action[1], 1);
  EXPECT_EQ(r.rewards[1], 0.0);
  EXPECT_EQ(env->reset_counts()[1], 2u);
}

TEST(Env, AutoResetReturnsFreshEpisode) {
  PhysicsConfig zero_g;
  zero_g.gravity.setZero();
  auto env = make_env("paddle", TaskKind::kBounce, 1, ObservationMode::kBlind, zero_g);
  ThreadPool pool(1);
  std::vector<double> push = {1.0, -1.0};
  for (int t = 0; t < 599; ++t) env->step(push, pool);
  const auto& r = env->step(push, pool);
  ASSERT_EQ(r.truncated[0], 1);
  // Post-reset stack is four copies of the initial frame.
  const auto f0 = env->stack().frame(0, 0);
  EXPECT_TRUE(std::equal(f0.begin(), f0.end(), env->stack().frame(0, 3).begin()));
  // The final observation kept the pre-reset joint targets.
  const int fw = env->frame_width();
  const int last_action_offset = 1 + 2 + 2 + 2;
  EXPECT_NE(r.final_observations[3 * fw + last_action_offset], f0[last_action_offset]);
}

// Zero-action paddle rollout. The contact bit sequence is frozen in a golden
// file; the bounce count must equal an independent window scan of that
// sequence, and the first contact must land where free fall predicts.
TEST(Env, ZeroActionPaddleGolden) {
  auto env = make_env("paddle", TaskKind::kBounce, 1, ObservationMode::kBlind, {}, 3);
  ThreadPool pool(1);
  std::vector<double> zero = {0.0, 0.0};
  std::string bits;
  int bounces = 0;
  bool saw_mid_step_contact = false;
  for (int t = 0; t < 600; ++t) {
    const auto& r = env->step(zero, pool);
    const bool c = env->stack().newest(0)[0] == 1.0 || (r.done(0) && r.final_observations[3 * 9] == 1.0);
    bits.push_back(c ? 'C' : 'N');
    if (c && detect_contacts(env->world(), env->model()).empty()) saw_mid_step_contact = true;
    bounces = r.bounces[0];
    if (r.done(0)) break;
  }
  int oracle = 0;
  for (int t = 5; t < static_cast<int>(bits.size()); ++t) {
    if (bits[t] != 'C') continue;
    bool quiet = true;
    for (int k = 1; k <= 5; ++k) quiet = quiet && bits[t - k] == 'N';
    oracle += quiet;
  }
  EXPECT_EQ(bounces, oracle);
  EXPECT_GE(bounces, 3);
  // Free fall from 8 cm onto a blade whose top is near z = 0 touches during
  // control step 7 (t = 0.1115 s), give or take the blade's reset noise.
  const auto first = bits.find('C');
  EXPECT_GE(first, 5u);
  EXPECT_LE(first, 7u);
  // Contacts inside a control step set the bit even when the ball has left
  // the blade by the end of the step.
  EXPECT_TRUE(saw_mid_step_contact);

  const std::string golden_path = std::string(TACBENCH_TEST_DATA_DIR) + "/paddle_zero_action.txt";
  std::ifstream in(golden_path);
  ASSERT_TRUE(in.good()) << golden_path;
  std::string golden;
  std::getline(in, golden);
  EXPECT_EQ(bits, golden);
}

}  // namespace
}  // namespace tacbench
