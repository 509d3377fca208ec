#include "tacbench/physics.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "tacbench/rng.hpp"

namespace tacbench {
namespace {

// One hinged bar along x (sensor) with a rigidly attached second bar
// continuing it (sensor). Lengths and radii are exact binary fractions so
// boundary cases are exact.
MorphologyConfig probe_morphology(double radius = 0.0078125) {
  MorphologyConfig m;
  m.name = "probe";
  m.n_joints = 1;
  m.n_actions = 1;
  m.n_tactile = 2;
  m.obs_block_widths = {2, 1, 1, 1, 1};
  m.coupling = Eigen::MatrixXd::Identity(1, 1);
  m.joint_limits = {{-1.0, 1.0}};
  m.action_scale = {1.0};
  LinkSpec a;
  a.name = "a";
  a.joint = 0;
  a.sensor = true;
  a.capsules.push_back({{-0.0625, 0, 0}, {0.0625, 0, 0}, radius});
  LinkSpec b;
  b.name = "b";
  b.parent = 0;
  b.offset = {0.0625, 0, 0};
  b.sensor = true;
  b.capsules.push_back({{0, 0, 0}, {0.0625, 0, 0}, radius});
  m.links = {a, b};
  return m;
}

struct Rig {
  MorphologyConfig morph;
  HandModel model;
  WorldBatch world;

  Rig(MorphologyConfig m, std::size_t envs, BallSpec ball)
      : morph(std::move(m)), model(morph), world(envs, model, {ball}) {
    for (std::size_t e = 0; e < envs; ++e) forward_kinematics(world, model, e);
  }
};

TEST(PdControl, Examples) {
  PhysicsConfig cfg;
  EXPECT_EQ(apply_pd_control(0.3, 0.0, 0.3, cfg), 0.0);
  cfg.pd_kp = 1.0;
  cfg.pd_kd = 0.0;
  cfg.max_joint_torque = 0.3;
  EXPECT_DOUBLE_EQ(apply_pd_control(0.0, 0.0, 0.5, cfg), 0.3);
  EXPECT_DOUBLE_EQ(apply_pd_control(0.0, 0.0, -0.5, cfg), -0.3);
  cfg.pd_kp = 2.0;
  cfg.pd_kd = 1.0;
  cfg.max_joint_torque = 10.0;
  EXPECT_NEAR(apply_pd_control(0.0, 0.05, 0.1, cfg), 0.15, 1e-15);
}

TEST(Physics, FreeFallMatchesSemiImplicitSum) {
  PhysicsConfig cfg;
  Rig rig(make_paddle(), 1, {0.02, 0.055, 0.8});
  rig.world.pos(0, 0) = Eigen::Vector3d(5.0, 5.0, 10.0);
  const double g = 9.81, dt = cfg.dt_sim;

  // Same arithmetic order as the integrator: bitwise equal.
  double z = 10.0, vz = 0.0;
  for (int n = 1; n <= 240; ++n) {
    step_substep(rig.world, cfg, rig.model, 0);
    vz += dt * -g;
    z += dt * vz;
    ASSERT_EQ(rig.world.pos(0, 0).z(), z) << n;
    ASSERT_EQ(rig.world.vel(0, 0).z(), vz) << n;
    const double t = n * dt;
    ASSERT_LE(std::abs(z - (10.0 - 0.5 * g * t * t)), g * dt * t / 2 + 1e-9);
  }
  // Closed form: dz = -g dt^2 sum_{n=1}^{240} n.
  EXPECT_NEAR(rig.world.pos(0, 0).z() - 10.0, -g * dt * dt * (240.0 * 241.0 / 2.0), 1e-12);
  EXPECT_NEAR(rig.world.pos(0, 0).z() - 10.0, -4.9254, 5e-5);
  EXPECT_NEAR(rig.world.vel(0, 0).z(), -9.81, 1e-12);
  EXPECT_EQ(rig.world.pos(0, 0).x(), 5.0);
}

TEST(Physics, FreeFallTwoSecondsWithinContinuousBound) {
  PhysicsConfig cfg;
  Rig rig(make_paddle(), 1, {0.02, 0.055, 0.8});
  rig.world.pos(0, 0) = Eigen::Vector3d(5.0, 5.0, 0.0);
  for (int n = 1; n <= 480; ++n) {
    step_substep(rig.world, cfg, rig.model, 0);
    const double t = n * cfg.dt_sim;
    ASSERT_LE(std::abs(rig.world.pos(0, 0).z() + 0.5 * 9.81 * t * t),
              9.81 * cfg.dt_sim * t / 2 + 1e-9);
  }
}

TEST(Physics, ZeroGravityRestIsFixedPoint) {
  PhysicsConfig cfg;
  cfg.gravity.setZero();
  Rig rig(make_shadow(), 2, {0.01905, 0.055, 0.1});
  for (std::size_t e = 0; e < 2; ++e) {
    for (int j = 0; j < rig.world.n_joints; ++j) {
      const double mid = rig.morph.joint_limits[j].mid();
      rig.world.q[e * rig.world.n_joints + j] = mid;
      rig.world.q_cmd[e * rig.world.n_joints + j] = mid;
    }
    rig.world.pos(e, 0) = Eigen::Vector3d(0.0, 0.0, 0.12);
    forward_kinematics(rig.world, rig.model, e);
  }
  Digest before;
  rig.world.hash_into(before);
  for (int n = 0; n < 500; ++n)
    for (std::size_t e = 0; e < 2; ++e) step_substep(rig.world, cfg, rig.model, e);
  Digest after;
  rig.world.hash_into(after);
  EXPECT_EQ(before.value(), after.value());
}

TEST(Physics, RestitutionOnStaticSurface) {
  PhysicsConfig cfg;
  cfg.gravity.setZero();
  Rig rig(make_paddle(), 1, {0.01905, 0.055, 0.8});
  // Directly above the centre blade capsule, slightly penetrating.
  rig.world.pos(0, 0) = Eigen::Vector3d(0.0, 0.0, 0.01905 - 1e-4);
  rig.world.vel(0, 0) = Eigen::Vector3d(0.0, 0.0, -2.0);
  step_substep(rig.world, cfg, rig.model, 0);
  EXPECT_NEAR(rig.world.vel(0, 0).z(), 1.6, 1e-9);
  EXPECT_NEAR(std::abs(rig.world.vel(0, 0).z()) / 2.0, 0.8, 1e-9);
  EXPECT_EQ(rig.world.touch[0], 1);
}

TEST(Physics, ImpulsesNeverInjectEnergy) {
  PhysicsConfig cfg;
  cfg.gravity.setZero();
  CounterRng rng(11, StreamDomain::kTest, 0);
  for (int trial = 0; trial < 2000; ++trial) {
    const double e = rng.uniform();
    Rig rig(probe_morphology(), 1, {0.015625, 0.055, e});
    // Spin the hinge so link points move.
    rig.world.qdot[0] = rng.uniform(-5.0, 5.0);
    rig.world.q_cmd[0] = rng.uniform(-1.0, 1.0);
    forward_kinematics(rig.world, rig.model, 0);
    const Eigen::Vector3d dir = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal()).normalized();
    const double x = rng.uniform(-0.06, 0.06);
    rig.world.pos(0, 0) = Eigen::Vector3d(x, 0, 0) + (0.0234375 - 0.002) * dir;
    rig.world.vel(0, 0) = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());

    // Replicate the substep up to the contact phase to read pre-impact speed.
    WorldBatch probe = rig.world;
    integrate_joints(probe, rig.model, cfg, 0);
    forward_kinematics(probe, rig.model, 0);
    const auto contacts = detect_contacts(probe, rig.model);
    if (contacts.size() != 1) continue;
    const auto& c = contacts.front();
    // Contact point velocity from the hinge: omega x r, omega about z.
    const Eigen::Vector3d omega(0, 0, probe.qdot[0]);
    const Eigen::Vector3d p = probe.pos(0, 0) - (0.015625 + 0.0078125 - c.penetration_depth) * c.contact_normal;
    const Eigen::Vector3d link_v = omega.cross(p);
    const double vn_pre = (probe.vel(0, 0) - link_v).dot(c.contact_normal);

    step_substep(rig.world, cfg, rig.model, 0);
    const double vn_post = (rig.world.vel(0, 0) - link_v).dot(c.contact_normal);
    if (vn_pre < 0.0) {
      EXPECT_LE(std::abs(vn_post), e * std::abs(vn_pre) + 1e-9) << trial;
    } else {
      EXPECT_NEAR(vn_post, vn_pre, 1e-12) << trial;
    }
  }
}

TEST(Contacts, ExactTouchIsNotContact) {
  Rig rig(probe_morphology(), 1, {0.015625, 0.055, 0.8});
  rig.world.pos(0, 0) = Eigen::Vector3d(0.0, 0.0, 0.0234375);
  EXPECT_TRUE(detect_contacts(rig.world, rig.model).empty());
  rig.world.pos(0, 0) = Eigen::Vector3d(0.0, 0.0, 0.0234375 - 0x1p-30);
  EXPECT_EQ(detect_contacts(rig.world, rig.model).size(), 1u);
}

TEST(Contacts, BallAcrossTwoAdjacentLinks) {
  Rig rig(probe_morphology(), 1, {0.015625, 0.055, 0.8});
  const Eigen::Vector3d center(0.0625, 0.0, 0.02);
  rig.world.pos(0, 0) = center;
  const auto contacts = detect_contacts(rig.world, rig.model);
  ASSERT_EQ(contacts.size(), 2u);
  EXPECT_EQ(contacts[0].sensor_link_index, 0);
  EXPECT_EQ(contacts[1].sensor_link_index, 1);
  // Brute force: densely sampled segment distance agrees for both links.
  for (int link = 0; link < 2; ++link) {
    double best = 1e9;
    for (int i = 0; i <= 10000; ++i) {
      const double x = link == 0 ? -0.0625 + 0.125 * i / 10000.0 : 0.0625 + 0.0625 * i / 10000.0;
      best = std::min(best, (center - Eigen::Vector3d(x, 0, 0)).norm());
    }
    EXPECT_LT(best, 0.015625 + 0.0078125);
    EXPECT_NEAR(contacts[link].penetration_depth, 0.0234375 - best, 1e-6);
    EXPECT_NEAR(contacts[link].contact_normal.norm(), 1.0, 1e-6);
  }
}

TEST(Contacts, FarBallHasNoContacts) {
  Rig rig(make_allegro(), 3, {0.0254, 0.055, 0.1});
  for (std::size_t e = 0; e < 3; ++e) rig.world.pos(e, 0) = Eigen::Vector3d(0, 0, 1.0);
  EXPECT_TRUE(detect_contacts(rig.world, rig.model).empty());
}

TEST(Contacts, OrderedByEnvLinkBall) {
  Rig rig(probe_morphology(), 3, {0.015625, 0.055, 0.8});
  for (std::size_t e = 0; e < 3; ++e) rig.world.pos(e, 0) = Eigen::Vector3d(0.0625, 0.0, 0.02);
  const auto contacts = detect_contacts(rig.world, rig.model);
  ASSERT_EQ(contacts.size(), 6u);
  for (std::size_t i = 1; i < contacts.size(); ++i) {
    const auto& a = contacts[i - 1];
    const auto& b = contacts[i];
    EXPECT_TRUE(a.env_index < b.env_index ||
                (a.env_index == b.env_index && a.sensor_link_index < b.sensor_link_index));
  }
}

WorldBatch scrambled_shadow_world(std::size_t envs, const HandModel& model,
                                  const MorphologyConfig& morph) {
  WorldBatch w(envs, model, {{0.01905, 0.055, 0.1}, {0.01905, 0.055, 0.1}});
  for (std::size_t e = 0; e < envs; ++e) {
    CounterRng rng(5, StreamDomain::kTest, static_cast<std::uint32_t>(e));
    for (int j = 0; j < w.n_joints; ++j) {
      const auto& lim = morph.joint_limits[j];
      w.q[e * w.n_joints + j] = rng.uniform(lim.lo, lim.hi);
      w.q_cmd[e * w.n_joints + j] = rng.uniform(lim.lo, lim.hi);
    }
    w.pos(e, 0) = Eigen::Vector3d(rng.uniform(-0.03, 0.03), 0.02, 0.03);
    w.pos(e, 1) = Eigen::Vector3d(rng.uniform(-0.03, 0.03), -0.02, 0.03);
    forward_kinematics(w, model, e);
  }
  return w;
}

TEST(Physics, ThreadCountDoesNotChangeState) {
  PhysicsConfig cfg;
  const auto morph = make_shadow();
  const HandModel model(morph);
  std::uint64_t reference = 0;
  for (std::size_t threads : {1u, 2u, 3u, 8u}) {
    auto w = scrambled_shadow_world(37, model, morph);
    ThreadPool pool(threads);
    for (int n = 0; n < 120; ++n) step_substep(w, cfg, model, pool);
    Digest d;
    w.hash_into(d);
    if (threads == 1) reference = d.value();
    EXPECT_EQ(d.value(), reference) << threads;
  }
}

TEST(Physics, EnvsAreIsolated) {
  PhysicsConfig cfg;
  const auto morph = make_shadow();
  const HandModel model(morph);
  auto a = scrambled_shadow_world(8, model, morph);
  auto b = scrambled_shadow_world(8, model, morph);
  b.pos(3, 0) += Eigen::Vector3d(0.0, 0.0, 0.01);
  b.q_cmd[3 * b.n_joints + 5] = 0.0;
  ThreadPool pool(2);
  for (int n = 0; n < 200; ++n) {
    step_substep(a, cfg, model, pool);
    step_substep(b, cfg, model, pool);
  }
  for (std::size_t e = 0; e < 8; ++e) {
    if (e == 3) continue;
    for (int k = 0; k < 6; ++k) EXPECT_EQ(a.ball_pos[e * 6 + k], b.ball_pos[e * 6 + k]);
    for (int j = 0; j < a.n_joints; ++j) EXPECT_EQ(a.q[e * a.n_joints + j], b.q[e * b.n_joints + j]);
  }
}

TEST(Physics, NonFiniteStateFlagsCorrupt) {
  PhysicsConfig cfg;
  Rig rig(make_paddle(), 2, {0.02, 0.055, 0.8});
  rig.world.pos(0, 0) = Eigen::Vector3d(0, 0, 0.1);
  rig.world.pos(1, 0) = Eigen::Vector3d(0, 0, 0.1);
  rig.world.vel(1, 0) = Eigen::Vector3d(std::nan(""), 0, 0);
  step_substep(rig.world, cfg, rig.model, 0);
  step_substep(rig.world, cfg, rig.model, 1);
  EXPECT_EQ(rig.world.corrupt[0], 0);
  EXPECT_EQ(rig.world.corrupt[1], 1);
}

TEST(Physics, JointLimitsHoldEverySubstep) {
  PhysicsConfig cfg;
  const auto morph = make_shadow();
  const HandModel model(morph);
  auto w = scrambled_shadow_world(4, model, morph);
  for (std::size_t e = 0; e < 4; ++e)
    for (int j = 0; j < w.n_joints; ++j) w.q_cmd[e * w.n_joints + j] = (j % 2 ? 10.0 : -10.0);
  for (int n = 0; n < 100; ++n) {
    for (std::size_t e = 0; e < 4; ++e) step_substep(w, cfg, model, e);
    for (std::size_t e = 0; e < 4; ++e)
      for (int j = 0; j < w.n_joints; ++j) {
        const double q = w.q[e * w.n_joints + j];
        ASSERT_GE(q, morph.joint_limits[j].lo);
        ASSERT_LE(q, morph.joint_limits[j].hi);
      }
  }
}

// Default gains are tuned so a joint tracks a step command within about
// three control steps without oscillating.
TEST(Physics, DefaultGainsTrackStepCommand) {
  PhysicsConfig cfg;
  Rig rig(make_paddle(), 1, {0.02, 0.055, 0.8});
  rig.world.pos(0, 0) = Eigen::Vector3d(5, 5, 5);
  const double target = 0.2;
  rig.world.q_cmd[0] = target;
  double peak = 0.0;
  for (int n = 0; n < 4 * 30; ++n) {
    step_substep(rig.world, cfg, rig.model, 0);
    peak = std::max(peak, rig.world.q[0]);
    if (n == 4 * 3 - 1) EXPECT_GT(rig.world.q[0], 0.85 * target);
    if (n == 4 * 5 - 1) EXPECT_NEAR(rig.world.q[0], target, 0.03 * target);
  }
  EXPECT_LT(peak, 1.02 * target);
  EXPECT_NEAR(rig.world.q[0], target, 1e-3);
}

}  // namespace
}  // namespace tacbench
