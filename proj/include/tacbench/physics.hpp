#pragma once

// Batched rigid-body stepping for capsule-link hands and spherical balls.
//
// Hands are kinematic chains of revolute joints driven by PD torques; joints
// have a scalar inertia and feel no reaction from the balls. Balls are point
// masses with a radius. Contacts are resolved with single-pass sequential
// impulses in (link, ball) then (ball, ball) order, with Coulomb friction
// approximated by clamping the tangential impulse to mu times the normal
// impulse.
//
// All state is stored field-major: one contiguous array per field, with the
// env index leading. Stepping an env reads and writes only that env's slice.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tacbench/binary_io.hpp"
#include "tacbench/morphology.hpp"
#include "tacbench/parallel.hpp"

namespace tacbench {

struct PhysicsConfig {
  double dt_sim = 1.0 / 240.0;
  int substeps_per_control = 4;
  Eigen::Vector3d gravity{0.0, 0.0, -9.81};
  double restitution_bounce_ball = 0.8;
  double restitution_baoding_ball = 0.1;
  double friction_mu = 0.5;
  // Approach speeds below this are resolved inelastically so resting balls
  // settle instead of chattering on the positional projection.
  double bounce_threshold = 0.3;
  double pd_kp = 20.0;
  double pd_kd = 0.5;
  double max_joint_torque = 2.0;
  // kd^2 / (4 kp): critically damped joint response at the default gains.
  double joint_inertia = 0.003125;

  double control_period() const { return dt_sim * substeps_per_control; }

  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    if (!(dt_sim > 0.0)) out.push_back("physics.dt_sim: must be positive");
    if (substeps_per_control < 1) out.push_back("physics.substeps_per_control: must be >= 1");
    if (!gravity.allFinite()) out.push_back("physics.gravity: must be finite");
    for (double e : {restitution_bounce_ball, restitution_baoding_ball})
      if (!(e >= 0.0 && e <= 1.0)) out.push_back("physics.restitution: must lie in [0, 1]");
    if (!(friction_mu >= 0.0)) out.push_back("physics.friction_mu: must be >= 0");
    if (!(bounce_threshold >= 0.0)) out.push_back("physics.bounce_threshold: must be >= 0");
    if (!(pd_kp >= 0.0) || !(pd_kd >= 0.0)) out.push_back("physics.pd gains: must be >= 0");
    if (!(max_joint_torque > 0.0)) out.push_back("physics.max_joint_torque: must be positive");
    if (!(joint_inertia > 0.0)) out.push_back("physics.joint_inertia: must be positive");
    return out;
  }
};

struct BallSpec {
  double radius = 0.01905;
  double mass = 0.055;
  double restitution = 0.8;
};

/// torque = clamp(kp (q_cmd - q) - kd qdot, +-max_joint_torque)
inline double apply_pd_control(double q, double qdot, double q_cmd,
                               const PhysicsConfig& cfg) {
  const double tau = cfg.pd_kp * (q_cmd - q) - cfg.pd_kd * qdot;
  return std::clamp(tau, -cfg.max_joint_torque, cfg.max_joint_torque);
}

/// Flattened kinematic model precomputed from a MorphologyConfig.
struct HandModel {
  int n_joints = 0;
  int n_links = 0;
  int n_capsules = 0;
  int n_sensors = 0;
  std::vector<int> parent;
  std::vector<int> joint;
  std::vector<int> sensor_of_link;  // -1 when the link does not sense
  std::vector<Eigen::Matrix3d> fixed_rot;
  std::vector<Eigen::Vector3d> offset;
  std::vector<Eigen::Vector3d> axis;
  std::vector<int> link_cap_begin;  // capsules of link i: [begin[i], begin[i+1])
  std::vector<Eigen::Vector3d> cap_p0;
  std::vector<Eigen::Vector3d> cap_p1;
  std::vector<double> cap_radius;
  std::vector<JointLimit> limits;

  explicit HandModel(const MorphologyConfig& m) {
    n_joints = m.n_joints;
    n_links = static_cast<int>(m.links.size());
    limits = m.joint_limits;
    link_cap_begin.push_back(0);
    for (const auto& l : m.links) {
      parent.push_back(l.parent);
      joint.push_back(l.joint);
      sensor_of_link.push_back(l.sensor ? n_sensors++ : -1);
      const Eigen::Matrix3d r =
          (Eigen::AngleAxisd(l.rpy.z(), Eigen::Vector3d::UnitZ()) *
           Eigen::AngleAxisd(l.rpy.y(), Eigen::Vector3d::UnitY()) *
           Eigen::AngleAxisd(l.rpy.x(), Eigen::Vector3d::UnitX()))
              .toRotationMatrix();
      fixed_rot.push_back(r);
      offset.push_back(l.offset);
      axis.push_back(l.axis);
      for (const auto& c : l.capsules) {
        cap_p0.push_back(c.p0);
        cap_p1.push_back(c.p1);
        cap_radius.push_back(c.radius);
      }
      link_cap_begin.push_back(static_cast<int>(cap_p0.size()));
    }
    n_capsules = static_cast<int>(cap_p0.size());
  }
};

/// Structure-of-arrays state of n_envs parallel worlds.
struct WorldBatch {
  std::size_t n_envs = 0;
  int n_balls = 0;
  int n_joints = 0;
  int n_capsules = 0;
  int n_sensors = 0;
  std::vector<BallSpec> balls;

  std::vector<double> ball_pos;  // [env][ball][3]
  std::vector<double> ball_vel;  // [env][ball][3]
  std::vector<double> q;         // [env][joint]
  std::vector<double> qdot;      // [env][joint]
  std::vector<double> q_cmd;     // [env][joint]
  std::vector<double> cap_a;     // [env][capsule][3] world endpoints
  std::vector<double> cap_b;
  std::vector<double> cap_va;    // endpoint velocities
  std::vector<double> cap_vb;
  std::vector<std::uint8_t> touch;    // [env][sensor], OR over substeps
  std::vector<std::uint8_t> corrupt;  // [env]

  WorldBatch() = default;
  WorldBatch(std::size_t envs, const HandModel& model, std::vector<BallSpec> ball_specs)
      : n_envs(envs),
        n_balls(static_cast<int>(ball_specs.size())),
        n_joints(model.n_joints),
        n_capsules(model.n_capsules),
        n_sensors(model.n_sensors),
        balls(std::move(ball_specs)),
        ball_pos(envs * n_balls * 3, 0.0),
        ball_vel(envs * n_balls * 3, 0.0),
        q(envs * n_joints, 0.0),
        qdot(envs * n_joints, 0.0),
        q_cmd(envs * n_joints, 0.0),
        cap_a(envs * n_capsules * 3, 0.0),
        cap_b(envs * n_capsules * 3, 0.0),
        cap_va(envs * n_capsules * 3, 0.0),
        cap_vb(envs * n_capsules * 3, 0.0),
        touch(envs * n_sensors, 0),
        corrupt(envs, 0) {}

  Eigen::Map<Eigen::Vector3d> pos(std::size_t env, int ball) {
    return Eigen::Map<Eigen::Vector3d>(&ball_pos[(env * n_balls + ball) * 3]);
  }
  Eigen::Map<const Eigen::Vector3d> pos(std::size_t env, int ball) const {
    return Eigen::Map<const Eigen::Vector3d>(&ball_pos[(env * n_balls + ball) * 3]);
  }
  Eigen::Map<Eigen::Vector3d> vel(std::size_t env, int ball) {
    return Eigen::Map<Eigen::Vector3d>(&ball_vel[(env * n_balls + ball) * 3]);
  }
  Eigen::Map<const Eigen::Vector3d> vel(std::size_t env, int ball) const {
    return Eigen::Map<const Eigen::Vector3d>(&ball_vel[(env * n_balls + ball) * 3]);
  }
  double* joints(std::vector<double>& field, std::size_t env) {
    return &field[env * n_joints];
  }
  const double* joints(const std::vector<double>& field, std::size_t env) const {
    return &field[env * n_joints];
  }

  template <class Fn>
  void for_each_field(Fn&& fn) {
    fn(ball_pos);
    fn(ball_vel);
    fn(q);
    fn(qdot);
    fn(q_cmd);
    fn(cap_a);
    fn(cap_b);
    fn(cap_va);
    fn(cap_vb);
    fn(touch);
    fn(corrupt);
  }
  template <class Fn>
  void for_each_field(Fn&& fn) const {
    const_cast<WorldBatch*>(this)->for_each_field(
        [&fn](const auto& field) { fn(field); });
  }

  void hash_into(Digest& d) const {
    for_each_field([&d](const auto& field) { d.add(field); });
  }
  void write(BinaryWriter& w) const {
    for_each_field([&w](const auto& field) { w.put(field); });
  }
  void read(BinaryReader& r) {
    for_each_field([&r](auto& field) { r.get_into(field); });
  }
};

struct ContactRecord {
  std::size_t env_index = 0;
  int sensor_link_index = 0;
  int ball_index = 0;
  Eigen::Vector3d contact_normal = Eigen::Vector3d::UnitZ();  // link -> ball
  double penetration_depth = 0.0;
};

namespace detail {

struct LinkFrame {
  Eigen::Matrix3d rot;
  Eigen::Vector3d pos;
  Eigen::Vector3d omega;
  Eigen::Vector3d vel;
};

struct LinkContact {
  int link = -1;
  int ball = -1;
  Eigen::Vector3d normal;
  double depth = 0.0;
  Eigen::Vector3d point_vel;
};

inline std::vector<LinkFrame>& frame_scratch(std::size_t n) {
  thread_local std::vector<LinkFrame> frames;
  if (frames.size() < n) frames.resize(n);
  return frames;
}

inline std::vector<LinkContact>& contact_scratch() {
  thread_local std::vector<LinkContact> contacts;
  contacts.clear();
  return contacts;
}

/// Deepest contact between `center` (radius r) and the capsules of `link`.
/// Strict inequality: touching exactly at the radii sum is not a contact.
inline bool link_ball_contact(const WorldBatch& w, const HandModel& model, std::size_t env,
                              int link, const Eigen::Vector3d& center, double r,
                              LinkContact& out) {
  bool found = false;
  for (int c = model.link_cap_begin[link]; c < model.link_cap_begin[link + 1]; ++c) {
    const std::size_t base = (env * w.n_capsules + c) * 3;
    const Eigen::Map<const Eigen::Vector3d> a(&w.cap_a[base]);
    const Eigen::Map<const Eigen::Vector3d> b(&w.cap_b[base]);
    const Eigen::Vector3d ab = b - a;
    const double len2 = ab.squaredNorm();
    double t = 0.0;
    if (len2 > 0.0) t = std::clamp((center - a).dot(ab) / len2, 0.0, 1.0);
    const Eigen::Vector3d closest = a + t * ab;
    const Eigen::Vector3d diff = center - closest;
    const double dist = diff.norm();
    const double reach = r + model.cap_radius[c];
    if (!(dist < reach)) continue;
    const double depth = reach - dist;
    if (found && depth <= out.depth) continue;
    found = true;
    out.link = link;
    out.depth = depth;
    out.normal = dist > 0.0 ? Eigen::Vector3d(diff / dist) : Eigen::Vector3d::UnitZ();
    const Eigen::Map<const Eigen::Vector3d> va(&w.cap_va[base]);
    const Eigen::Map<const Eigen::Vector3d> vb(&w.cap_vb[base]);
    out.point_vel = va + t * (vb - va);
  }
  return found;
}

}  // namespace detail

/// Recomputes world-frame capsule endpoints and endpoint velocities of one
/// env from its joint angles and velocities.
inline void forward_kinematics(WorldBatch& w, const HandModel& model, std::size_t env) {
  auto& frames = detail::frame_scratch(model.n_links);
  const double* q = w.joints(w.q, env);
  const double* qd = w.joints(w.qdot, env);
  for (int i = 0; i < model.n_links; ++i) {
    Eigen::Matrix3d parent_rot = Eigen::Matrix3d::Identity();
    Eigen::Vector3d parent_pos = Eigen::Vector3d::Zero();
    Eigen::Vector3d parent_omega = Eigen::Vector3d::Zero();
    Eigen::Vector3d parent_vel = Eigen::Vector3d::Zero();
    if (model.parent[i] >= 0) {
      const auto& p = frames[model.parent[i]];
      parent_rot = p.rot;
      parent_pos = p.pos;
      parent_omega = p.omega;
      parent_vel = p.vel;
    }
    auto& f = frames[i];
    f.pos = parent_pos + parent_rot * model.offset[i];
    f.vel = parent_vel + parent_omega.cross(f.pos - parent_pos);
    const Eigen::Matrix3d base_rot = parent_rot * model.fixed_rot[i];
    if (const int j = model.joint[i]; j >= 0) {
      f.rot = base_rot * Eigen::AngleAxisd(q[j], model.axis[i]).toRotationMatrix();
      f.omega = parent_omega + qd[j] * (base_rot * model.axis[i]);
    } else {
      f.rot = base_rot;
      f.omega = parent_omega;
    }
    for (int c = model.link_cap_begin[i]; c < model.link_cap_begin[i + 1]; ++c) {
      const std::size_t base = (env * w.n_capsules + c) * 3;
      Eigen::Map<Eigen::Vector3d> a(&w.cap_a[base]), b(&w.cap_b[base]);
      Eigen::Map<Eigen::Vector3d> va(&w.cap_va[base]), vb(&w.cap_vb[base]);
      a = f.pos + f.rot * model.cap_p0[c];
      b = f.pos + f.rot * model.cap_p1[c];
      va = f.vel + f.omega.cross(a - f.pos);
      vb = f.vel + f.omega.cross(b - f.pos);
    }
  }
}

inline void integrate_joints(WorldBatch& w, const HandModel& model, const PhysicsConfig& cfg,
                             std::size_t env) {
  double* q = w.joints(w.q, env);
  double* qd = w.joints(w.qdot, env);
  const double* cmd = w.joints(w.q_cmd, env);
  for (int j = 0; j < model.n_joints; ++j) {
    const double tau = apply_pd_control(q[j], qd[j], cmd[j], cfg);
    qd[j] += cfg.dt_sim * tau / cfg.joint_inertia;
    q[j] += cfg.dt_sim * qd[j];
    const auto& lim = model.limits[j];
    if (q[j] < lim.lo) {
      q[j] = lim.lo;
      qd[j] = std::max(qd[j], 0.0);
    } else if (q[j] > lim.hi) {
      q[j] = lim.hi;
      qd[j] = std::min(qd[j], 0.0);
    }
  }
}

namespace detail {

/// Velocity-level impulse between a ball and a kinematic (infinite mass)
/// link point, then positional projection out of penetration.
inline void resolve_link_contact(WorldBatch& w, std::size_t env, const LinkContact& c,
                                 double mu, double bounce_threshold) {
  auto v = w.vel(env, c.ball);
  const Eigen::Vector3d rel = v - c.point_vel;
  const double vn = rel.dot(c.normal);
  if (vn < 0.0) {
    const double e = -vn < bounce_threshold ? 0.0 : w.balls[c.ball].restitution;
    const double jn = -(1.0 + e) * vn;
    const Eigen::Vector3d vt = rel - vn * c.normal;
    v += jn * c.normal;
    const double vt_norm = vt.norm();
    if (vt_norm > 0.0) v -= std::min(vt_norm, mu * jn) * (vt / vt_norm);
  }
  w.pos(env, c.ball) += c.depth * c.normal;
}

inline void resolve_ball_pair(WorldBatch& w, std::size_t env, int i, int k, double mu,
                              double bounce_threshold) {
  auto pi = w.pos(env, i);
  auto pk = w.pos(env, k);
  const Eigen::Vector3d diff = pk - pi;
  const double dist = diff.norm();
  const double reach = w.balls[i].radius + w.balls[k].radius;
  if (!(dist < reach)) return;
  const Eigen::Vector3d n = dist > 0.0 ? Eigen::Vector3d(diff / dist) : Eigen::Vector3d::UnitZ();
  const double inv_i = 1.0 / w.balls[i].mass;
  const double inv_k = 1.0 / w.balls[k].mass;
  auto vi = w.vel(env, i);
  auto vk = w.vel(env, k);
  const Eigen::Vector3d rel = vk - vi;
  const double vn = rel.dot(n);
  if (vn < 0.0) {
    const double e = -vn < bounce_threshold
                         ? 0.0
                         : std::min(w.balls[i].restitution, w.balls[k].restitution);
    const double jn = -(1.0 + e) * vn / (inv_i + inv_k);
    vi -= jn * inv_i * n;
    vk += jn * inv_k * n;
    const Eigen::Vector3d vt = rel - vn * n;
    const double vt_norm = vt.norm();
    if (vt_norm > 0.0) {
      const double jt = std::min(vt_norm / (inv_i + inv_k), mu * jn);
      const Eigen::Vector3d dir = vt / vt_norm;
      vi += jt * inv_i * dir;
      vk -= jt * inv_k * dir;
    }
  }
  const double depth = reach - dist;
  pi -= depth * inv_i / (inv_i + inv_k) * n;
  pk += depth * inv_k / (inv_i + inv_k) * n;
}

template <class Range>
bool all_finite(const Range& r) {
  return std::all_of(r.begin(), r.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// One 240 Hz step of one env. Joint velocities take the PD torque, ball
/// velocities take gravity and then contact impulses, and positions follow
/// the new velocities. Contacts on sensing links OR into `touch`. Envs that
/// end up with non-finite state are flagged corrupt and left untouched from
/// then on; the caller resets them.
inline void step_substep(WorldBatch& w, const PhysicsConfig& cfg, const HandModel& model,
                         std::size_t env) {
  if (w.corrupt[env]) return;
  integrate_joints(w, model, cfg, env);
  forward_kinematics(w, model, env);

  for (int b = 0; b < w.n_balls; ++b) w.vel(env, b) += cfg.dt_sim * cfg.gravity;

  auto& contacts = detail::contact_scratch();
  for (int link = 0; link < model.n_links; ++link) {
    for (int b = 0; b < w.n_balls; ++b) {
      detail::LinkContact c;
      c.ball = b;
      if (!detail::link_ball_contact(w, model, env, link, Eigen::Vector3d(w.pos(env, b)),
                                     w.balls[b].radius, c))
        continue;
      contacts.push_back(c);
      if (const int s = model.sensor_of_link[link]; s >= 0) w.touch[env * w.n_sensors + s] = 1;
    }
  }
  for (const auto& c : contacts) detail::resolve_link_contact(w, env, c, cfg.friction_mu, cfg.bounce_threshold);
  for (int i = 0; i < w.n_balls; ++i)
    for (int k = i + 1; k < w.n_balls; ++k) detail::resolve_ball_pair(w, env, i, k, cfg.friction_mu, cfg.bounce_threshold);

  for (int b = 0; b < w.n_balls; ++b) w.pos(env, b) += cfg.dt_sim * w.vel(env, b);

  const auto slice = [&](const std::vector<double>& f, std::size_t width) {
    return std::span<const double>(f.data() + env * width, width);
  };
  const std::size_t nb = static_cast<std::size_t>(w.n_balls) * 3;
  const std::size_t nj = static_cast<std::size_t>(w.n_joints);
  if (!detail::all_finite(slice(w.ball_pos, nb)) || !detail::all_finite(slice(w.ball_vel, nb)) ||
      !detail::all_finite(slice(w.q, nj)) || !detail::all_finite(slice(w.qdot, nj))) {
    w.corrupt[env] = 1;
  }
}

/// Steps every env once, partitioned across the pool's workers.
inline void step_substep(WorldBatch& w, const PhysicsConfig& cfg, const HandModel& model,
                         ThreadPool& pool) {
  pool.parallel_for(w.n_envs, [&](std::size_t begin, std::size_t end) {
    for (std::size_t env = begin; env < end; ++env) step_substep(w, cfg, model, env);
  });
}

/// Sensing-link contacts of the current geometry, one record per
/// (sensor link, ball) pair, ordered by (env, link, ball).
inline std::vector<ContactRecord> detect_contacts(const WorldBatch& w, const HandModel& model) {
  std::vector<ContactRecord> out;
  for (std::size_t env = 0; env < w.n_envs; ++env) {
    for (int link = 0; link < model.n_links; ++link) {
      const int s = model.sensor_of_link[link];
      if (s < 0) continue;
      for (int b = 0; b < w.n_balls; ++b) {
        detail::LinkContact c;
        if (!detail::link_ball_contact(w, model, env, link, Eigen::Vector3d(w.pos(env, b)),
                                       w.balls[b].radius, c))
          continue;
        out.push_back({env, s, b, c.normal, c.depth});
      }
    }
  }
  return out;
}

}  // namespace tacbench
