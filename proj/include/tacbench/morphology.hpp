#pragma once

// Hand descriptions: observation/action dimensions, the action-to-joint
// coupling map, joint limits and schematic capsule geometry.
//
// The four named hands match the reference observation/action widths
// exactly; their geometry is a schematic palm plate plus serial capsule
// fingers. "paddle" is a two-joint toy used for fast tests and training
// smoke runs.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tacbench {

/// Raised for caller bugs such as mismatched dimensions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct JointLimit {
  double lo = 0.0;
  double hi = 0.0;
  double mid() const { return 0.5 * (lo + hi); }
};

/// Capsule segment in its link's local frame.
struct CapsuleSpec {
  Eigen::Vector3d p0 = Eigen::Vector3d::Zero();
  Eigen::Vector3d p1 = Eigen::Vector3d::Zero();
  double radius = 0.0;
};

/// One node of the kinematic tree. The link frame is the parent frame moved
/// by `offset`, rotated by the fixed roll-pitch-yaw `rpy`, then rotated by
/// the joint angle about `axis` (expressed in the link frame). Links without
/// a joint (`joint == -1`) are rigidly attached to their parent.
struct LinkSpec {
  std::string name;
  int parent = -1;
  int joint = -1;
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();
  Eigen::Vector3d rpy = Eigen::Vector3d::Zero();
  Eigen::Vector3d axis = Eigen::Vector3d::UnitZ();
  std::vector<CapsuleSpec> capsules;
  bool sensor = false;
};

/// Per-frame observation block widths in table order.
struct ObsBlockWidths {
  int tactile = 0;
  int joint_pos = 0;
  int joint_vel = 0;
  int cmd_error = 0;
  int last_action = 0;

  int total() const {
    return tactile + joint_pos + joint_vel + cmd_error + last_action;
  }
  int proprio() const { return joint_pos + joint_vel + cmd_error + last_action; }
  std::array<int, 5> as_array() const {
    return {tactile, joint_pos, joint_vel, cmd_error, last_action};
  }
  bool operator==(const ObsBlockWidths&) const = default;
};

struct MorphologyConfig {
  std::string name;
  int n_joints = 0;
  int n_actions = 0;
  int n_tactile = 0;
  ObsBlockWidths obs_block_widths;
  Eigen::MatrixXd coupling;  // n_joints x n_actions
  std::vector<JointLimit> joint_limits;
  std::vector<double> action_scale;  // rad per unit action, per joint
  std::vector<LinkSpec> links;
  double ball_radius = 0.01905;  // task ball radius used with this hand
};

/// Reference single-frame widths for the four named hands.
inline const std::map<std::string, ObsBlockWidths>& table_widths() {
  static const std::map<std::string, ObsBlockWidths> widths = {
      {"shadow", {17, 20, 20, 20, 20}},
      {"shadow_lite", {14, 16, 16, 13, 13}},
      {"allegro", {20, 16, 16, 16, 16}},
      {"orca", {17, 17, 17, 17, 17}},
  };
  return widths;
}

inline const std::map<std::string, int>& table_actions() {
  static const std::map<std::string, int> actions = {
      {"shadow", 20}, {"shadow_lite", 13}, {"allegro", 10}, {"orca", 17}};
  return actions;
}

inline int count_sensors(const MorphologyConfig& m) {
  return static_cast<int>(std::count_if(m.links.begin(), m.links.end(),
                                        [](const LinkSpec& l) { return l.sensor; }));
}

/// Checks every structural invariant. Never throws; returns one message per
/// violation, empty when the config is usable.
inline std::vector<std::string> validate_config(const MorphologyConfig& m) {
  std::vector<std::string> out;
  auto fail = [&out](const std::string& s) { out.push_back(s); };
  const auto& w = m.obs_block_widths;

  if (m.name.empty()) fail("name: must be non-empty");
  if (m.n_joints <= 0) fail("n_joints: must be positive");
  if (m.n_actions <= 0) fail("n_actions: must be positive");
  if (w.joint_pos != m.n_joints) fail("obs_block_widths.joint_pos: must equal n_joints");
  if (w.joint_vel != m.n_joints) fail("obs_block_widths.joint_vel: must equal n_joints");
  if (w.cmd_error != m.n_joints && w.cmd_error != m.n_actions)
    fail("obs_block_widths.cmd_error: must equal n_joints or n_actions");
  if (w.last_action != m.n_joints && w.last_action != m.n_actions)
    fail("obs_block_widths.last_action: must equal n_joints or n_actions");
  if (w.tactile != m.n_tactile) fail("obs_block_widths.tactile: must equal n_tactile");
  if (count_sensors(m) != m.n_tactile)
    fail("n_tactile: " + std::to_string(m.n_tactile) + " but " +
         std::to_string(count_sensors(m)) + " sensor links");

  if (m.coupling.rows() != m.n_joints || m.coupling.cols() != m.n_actions) {
    fail("coupling: expected " + std::to_string(m.n_joints) + "x" +
         std::to_string(m.n_actions));
  } else {
    for (int j = 0; j < m.n_joints; ++j) {
      double row = 0.0;
      for (int a = 0; a < m.n_actions; ++a) {
        if (!(m.coupling(j, a) >= 0.0)) {
          fail("coupling[" + std::to_string(j) + "][" + std::to_string(a) +
               "]: must be non-negative");
        }
        row += m.coupling(j, a);
      }
      if (std::abs(row - 1.0) > 1e-9)
        fail("coupling row " + std::to_string(j) + ": must sum to 1");
    }
    if (m.n_joints == m.n_actions &&
        !m.coupling.isApprox(Eigen::MatrixXd::Identity(m.n_joints, m.n_actions))) {
      fail("coupling: must be identity when n_joints == n_actions");
    }
  }

  if (static_cast<int>(m.joint_limits.size()) != m.n_joints) {
    fail("joint_limits: expected " + std::to_string(m.n_joints) + " entries");
  } else {
    for (int j = 0; j < m.n_joints; ++j) {
      const auto& lim = m.joint_limits[j];
      if (!std::isfinite(lim.lo) || !std::isfinite(lim.hi) || lim.lo > lim.hi)
        fail("joint_limits[" + std::to_string(j) + "]: lo > hi or non-finite");
    }
  }
  if (static_cast<int>(m.action_scale.size()) != m.n_joints) {
    fail("action_scale: expected " + std::to_string(m.n_joints) + " entries");
  } else {
    for (int j = 0; j < m.n_joints; ++j)
      if (!(m.action_scale[j] >= 0.0))
        fail("action_scale[" + std::to_string(j) + "]: must be non-negative");
  }

  std::vector<int> joint_users(std::max(m.n_joints, 0), 0);
  for (std::size_t i = 0; i < m.links.size(); ++i) {
    const auto& l = m.links[i];
    const std::string where = "links[" + std::to_string(i) + "]";
    if (l.parent < -1 || l.parent >= static_cast<int>(i))
      fail(where + ".parent: must precede the link (or be -1)");
    if (l.joint >= m.n_joints || l.joint < -1) {
      fail(where + ".joint: out of range");
    } else if (l.joint >= 0) {
      ++joint_users[l.joint];
      if (std::abs(l.axis.norm() - 1.0) > 1e-9) fail(where + ".axis: must be unit length");
    }
    for (const auto& c : l.capsules)
      if (!(c.radius > 0.0)) fail(where + ".capsules: radius must be positive");
  }
  for (int j = 0; j < m.n_joints; ++j)
    if (joint_users[j] != 1)
      fail("joint " + std::to_string(j) + ": must drive exactly one link");
  if (!(m.ball_radius > 0.0)) fail("ball_radius: must be positive");

  if (auto it = table_widths().find(m.name); it != table_widths().end()) {
    if (!(w == it->second))
      fail("obs_block_widths: " + m.name + " must match the reference widths");
    if (m.n_actions != table_actions().at(m.name))
      fail("n_actions: " + m.name + " must be " +
           std::to_string(table_actions().at(m.name)));
  }
  return out;
}

/// q_cmd = clamp_to_limits(mid + scale * (coupling * clamp(action, +-1))).
/// Writes n_joints targets into `q_cmd`.
inline void action_to_joint_targets(const double* action, const MorphologyConfig& m,
                                    double* q_cmd) {
  for (int j = 0; j < m.n_joints; ++j) {
    double mixed = 0.0;
    for (int a = 0; a < m.n_actions; ++a) {
      const double c = m.coupling(j, a);
      if (c != 0.0) mixed += c * std::clamp(action[a], -1.0, 1.0);
    }
    const auto& lim = m.joint_limits[j];
    q_cmd[j] = std::clamp(lim.mid() + m.action_scale[j] * mixed, lim.lo, lim.hi);
  }
}

inline Eigen::VectorXd action_to_joint_targets(const Eigen::VectorXd& action,
                                               const MorphologyConfig& m) {
  if (action.size() != m.n_actions)
    throw ConfigError("action has " + std::to_string(action.size()) +
                      " entries, " + m.name + " expects " +
                      std::to_string(m.n_actions));
  Eigen::VectorXd q(m.n_joints);
  action_to_joint_targets(action.data(), m, q.data());
  return q;
}

// ---------------------------------------------------------------------------
// Builtin hands.

namespace detail {

inline constexpr double kHalfPi = std::numbers::pi / 2.0;

struct HandBuilder {
  MorphologyConfig m;

  int add_joint(double lo, double hi) {
    m.joint_limits.push_back({lo, hi});
    m.action_scale.push_back(0.5 * (hi - lo));
    return m.n_joints++;
  }

  int add_link(LinkSpec l) {
    m.links.push_back(std::move(l));
    return static_cast<int>(m.links.size()) - 1;
  }

  /// Flat palm plate: `rows` capsules running along y, top surface at z = 0,
  /// grouped into `sensors` fixed sensing links.
  void palm(int sensors, int rows = 9, double half_width = 0.042) {
    const double pitch = 0.012, radius = 0.008;
    const double x0 = -0.5 * pitch * (rows - 1);
    for (int s = 0; s < sensors; ++s) {
      LinkSpec l;
      l.name = "palm_" + std::to_string(s);
      l.sensor = true;
      for (int r = 0; r < rows; ++r) {
        if (r * sensors / rows != s) continue;
        const double x = x0 + pitch * r;
        l.capsules.push_back({{x, -half_width, -radius}, {x, half_width, -radius}, radius});
      }
      add_link(std::move(l));
    }
  }

  struct Phalanx {
    double length;
    bool jointed = true;
  };

  /// Serial finger: optional abduction joint at the base (zero-length link),
  /// then phalanges flexing towards +z. Unjointed phalanges are rigidly
  /// attached to the previous one.
  void finger(const std::string& name, const Eigen::Vector3d& base, double yaw,
              bool abduction, double base_length, const std::vector<Phalanx>& phalanges,
              double radius = 0.009) {
    int parent = -1;
    Eigen::Vector3d offset = base;
    Eigen::Vector3d rpy(0.0, 0.0, yaw);
    if (abduction) {
      LinkSpec l;
      l.name = name + "_abd";
      l.parent = parent;
      l.offset = offset;
      l.rpy = rpy;
      l.axis = Eigen::Vector3d::UnitZ();
      l.joint = add_joint(-0.35, 0.35);
      if (base_length > 0.0) {
        l.capsules.push_back({Eigen::Vector3d::Zero(), {base_length, 0, 0}, radius});
        l.sensor = true;
      }
      parent = add_link(std::move(l));
      offset = Eigen::Vector3d(base_length, 0, 0);
      rpy.setZero();
    }
    for (std::size_t i = 0; i < phalanges.size(); ++i) {
      LinkSpec l;
      l.name = name + "_" + std::to_string(i);
      l.parent = parent;
      l.offset = offset;
      l.rpy = rpy;
      l.axis = -Eigen::Vector3d::UnitY();
      if (phalanges[i].jointed) l.joint = add_joint(-0.2, 1.6);
      l.capsules.push_back(
          {Eigen::Vector3d::Zero(), {phalanges[i].length, 0, 0}, radius});
      l.sensor = true;
      parent = add_link(std::move(l));
      offset = Eigen::Vector3d(phalanges[i].length, 0, 0);
      rpy.setZero();
    }
  }

  /// Thumb: a rotation joint about its own pointing axis, then flexing
  /// phalanges.
  void thumb(const Eigen::Vector3d& base, const std::vector<double>& lengths,
             bool extra_abduction = false) {
    LinkSpec rot;
    rot.name = "th_rot";
    rot.offset = base;
    rot.rpy = Eigen::Vector3d(0, 0, kHalfPi);
    rot.axis = Eigen::Vector3d::UnitX();
    rot.joint = add_joint(-0.6, 0.6);
    int parent = add_link(std::move(rot));
    if (extra_abduction) {
      LinkSpec abd;
      abd.name = "th_abd";
      abd.parent = parent;
      abd.axis = Eigen::Vector3d::UnitZ();
      abd.joint = add_joint(-0.35, 0.35);
      parent = add_link(std::move(abd));
    }
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      LinkSpec l;
      l.name = "th_" + std::to_string(i);
      l.parent = parent;
      l.offset = offset;
      l.axis = -Eigen::Vector3d::UnitY();
      l.joint = add_joint(-0.2, 1.4);
      l.capsules.push_back({Eigen::Vector3d::Zero(), {lengths[i], 0, 0}, 0.01});
      l.sensor = true;
      parent = add_link(std::move(l));
      offset = Eigen::Vector3d(lengths[i], 0, 0);
    }
  }

  MorphologyConfig finish(const std::string& name, std::vector<int> action_of_joint,
                          int n_actions, ObsBlockWidths widths, double ball_radius) {
    m.name = name;
    m.n_actions = n_actions;
    m.coupling = Eigen::MatrixXd::Zero(m.n_joints, n_actions);
    for (int j = 0; j < m.n_joints; ++j) m.coupling(j, action_of_joint[j]) = 1.0;
    m.n_tactile = count_sensors(m);
    m.obs_block_widths = widths;
    m.ball_radius = ball_radius;
    return m;
  }
};

inline std::vector<int> identity_actions(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

inline constexpr double kInch = 0.0254;

}  // namespace detail

/// 20 observable joints (four 4-joint fingers plus a 4-joint thumb), 17
/// sensing links (15 phalanges, 2 palm regions), identity coupling.
inline MorphologyConfig make_shadow() {
  detail::HandBuilder b;
  b.palm(2);
  const double ys[4] = {0.033, 0.011, -0.011, -0.033};
  const char* names[4] = {"ff", "mf", "rf", "lf"};
  for (int f = 0; f < 4; ++f)
    b.finger(names[f], {0.055, ys[f], 0.0}, 0.0, true, 0.0,
             {{0.045}, {0.025}, {0.026}});
  b.thumb({-0.01, 0.05, 0.0}, {0.038, 0.032, 0.027});
  return b.finish("shadow", detail::identity_actions(20), 20, {17, 20, 20, 20, 20},
                  0.75 * detail::kInch);
}

/// Three 4-joint fingers whose two distal joints share one action, plus a
/// 4-joint thumb: 16 joints, 13 actions, 14 sensing links.
inline MorphologyConfig make_shadow_lite() {
  detail::HandBuilder b;
  b.palm(2);
  const double ys[3] = {0.028, 0.0, -0.028};
  const char* names[3] = {"ff", "mf", "rf"};
  for (int f = 0; f < 3; ++f)
    b.finger(names[f], {0.055, ys[f], 0.0}, 0.0, true, 0.0,
             {{0.045}, {0.025}, {0.026}});
  b.thumb({-0.01, 0.05, 0.0}, {0.038, 0.032, 0.027});
  std::vector<int> act;
  for (int f = 0; f < 3; ++f) {
    act.push_back(3 * f);      // abduction
    act.push_back(3 * f + 1);  // knuckle
    act.push_back(3 * f + 2);  // middle and distal share
    act.push_back(3 * f + 2);
  }
  for (int t = 0; t < 4; ++t) act.push_back(9 + t);
  return b.finish("shadow_lite", act, 13, {14, 16, 16, 13, 13}, 0.6 * detail::kInch);
}

/// Four 4-link fingers (the base link also senses) over a 4-region palm:
/// 16 joints, 20 sensing links. The three fingers each take an abduction
/// action and one flexion action driving all three flexion joints; the thumb
/// is directly actuated, giving 10 actions.
inline MorphologyConfig make_allegro() {
  detail::HandBuilder b;
  b.palm(4, 9, 0.048);
  const double ys[3] = {0.045, 0.0, -0.045};
  const char* names[3] = {"if", "mf", "rf"};
  for (int f = 0; f < 3; ++f)
    b.finger(names[f], {0.055, ys[f], 0.0}, 0.0, true, 0.016,
             {{0.054}, {0.038}, {0.036}}, 0.0135);
  // Thumb: abduction base link plus three flexing phalanges.
  b.finger("th", {-0.01, 0.055, 0.0}, detail::kHalfPi, true, 0.016,
           {{0.05}, {0.04}, {0.04}}, 0.0135);
  std::vector<int> act;
  for (int f = 0; f < 3; ++f) {
    act.push_back(2 * f);
    act.push_back(2 * f + 1);
    act.push_back(2 * f + 1);
    act.push_back(2 * f + 1);
  }
  for (int t = 0; t < 4; ++t) act.push_back(6 + t);
  return b.finish("allegro", act, 10, {20, 16, 16, 16, 16}, 1.0 * detail::kInch);
}

/// Four fingers with abduction, knuckle and middle joints and a rigid tip,
/// plus a 5-joint thumb: 17 joints, 17 actions, 17 sensing links.
inline MorphologyConfig make_orca() {
  detail::HandBuilder b;
  b.palm(2);
  const double ys[4] = {0.033, 0.011, -0.011, -0.033};
  const char* names[4] = {"if", "mf", "rf", "pf"};
  for (int f = 0; f < 4; ++f)
    b.finger(names[f], {0.055, ys[f], 0.0}, 0.0, true, 0.0,
             {{0.042}, {0.028}, {0.022, false}});
  b.thumb({-0.01, 0.05, 0.0}, {0.036, 0.03, 0.026}, true);
  return b.finish("orca", detail::identity_actions(17), 17, {17, 17, 17, 17, 17},
                  0.75 * detail::kInch);
}

/// Two pitch joints: an arm hinged 15 cm behind the palm origin and a blade
/// hinged at the arm tip. Commanding q_blade = -q_arm keeps the blade level.
/// The blade is the single sensing link.
inline MorphologyConfig make_paddle() {
  detail::HandBuilder b;
  LinkSpec arm;
  arm.name = "arm";
  arm.offset = Eigen::Vector3d(-0.15, 0.0, 0.0);
  arm.axis = -Eigen::Vector3d::UnitY();
  arm.joint = b.add_joint(-0.3, 0.3);
  const int arm_idx = b.add_link(std::move(arm));

  LinkSpec blade;
  blade.name = "blade";
  blade.parent = arm_idx;
  blade.offset = Eigen::Vector3d(0.15, 0.0, 0.0);
  blade.axis = -Eigen::Vector3d::UnitY();
  blade.joint = b.add_joint(-0.3, 0.3);
  blade.sensor = true;
  const double radius = 0.008, pitch = 0.01;
  for (int r = -4; r <= 4; ++r) {
    const double y = pitch * r;
    blade.capsules.push_back({{-0.06, y, -radius}, {0.06, y, -radius}, radius});
  }
  b.add_link(std::move(blade));
  return b.finish("paddle", {0, 1}, 2, {1, 2, 2, 2, 2}, 0.75 * detail::kInch);
}

inline std::vector<std::string> builtin_morphology_names() {
  return {"shadow", "shadow_lite", "allegro", "orca", "paddle"};
}

inline std::optional<MorphologyConfig> builtin_morphology(const std::string& name) {
  if (name == "shadow") return make_shadow();
  if (name == "shadow_lite") return make_shadow_lite();
  if (name == "allegro") return make_allegro();
  if (name == "orca") return make_orca();
  if (name == "paddle") return make_paddle();
  return std::nullopt;
}

}  // namespace tacbench
