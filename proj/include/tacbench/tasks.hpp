#pragma once

// Bounce and Baoding reward machines, evaluated once per 60 Hz control step.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace tacbench {

enum class TaskKind { kBounce, kBaoding };

inline std::optional<TaskKind> parse_task(const std::string& s) {
  if (s == "bounce") return TaskKind::kBounce;
  if (s == "baoding") return TaskKind::kBaoding;
  return std::nullopt;
}

inline std::string to_string(TaskKind t) {
  return t == TaskKind::kBounce ? "bounce" : "baoding";
}

struct TaskConfig {
  TaskKind task = TaskKind::kBounce;
  double r_bounce = 10.0;
  double r_rotation = 10.0;
  double switch_radius = 0.01;
  int min_gap_steps = 5;
  int max_episode_steps = 600;
  double dist_weight = 0.05;
  double dist_sharpness = 30.0;
  // Palm frame; the default lateral spacing is widened per hand so the two
  // balls never overlap at their targets.
  std::array<Eigen::Vector3d, 2> target_positions = {Eigen::Vector3d(0.0, 0.02, 0.01905),
                                                     Eigen::Vector3d(0.0, -0.02, 0.01905)};
  double out_of_reach_halfextent = 0.25;
  // Initial-state distribution.
  double bounce_spawn_height = 0.08;
  double bounce_spawn_jitter = 0.01;
  double baoding_spawn_jitter = 0.003;
  double joint_reset_noise = 0.05;

  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    if (!(r_bounce >= 0.0) || !(r_rotation >= 0.0)) out.push_back("task: rewards must be >= 0");
    if (!(switch_radius > 0.0)) out.push_back("task.switch_radius: must be positive");
    if (min_gap_steps < 0) out.push_back("task.min_gap_steps: must be >= 0");
    if (max_episode_steps < 1) out.push_back("task.max_episode_steps: must be >= 1");
    if (!(out_of_reach_halfextent > 0.0))
      out.push_back("task.out_of_reach_halfextent: must be positive");
    return out;
  }
};

/// Per-env reward machine state.
struct TaskState {
  int no_contact_streak = 0;
  int bounce_count = 0;
  int target_parity = 0;
  int switch_count = 0;
  int steps_elapsed = 0;

  bool operator==(const TaskState&) const = default;
};

/// Reward for one control step of Bounce. A contact after at least
/// min_gap_steps contact-free steps is a bounce. The streak starts at 0 on
/// reset, resets on every contact and grows by one otherwise.
inline double update_bounce(TaskState& s, bool any_contact, const TaskConfig& cfg) {
  if (!any_contact) {
    ++s.no_contact_streak;
    return 0.0;
  }
  double reward = 0.0;
  if (s.no_contact_streak >= cfg.min_gap_steps) {
    ++s.bounce_count;
    reward = cfg.r_bounce;
  }
  s.no_contact_streak = 0;
  return reward;
}

struct BaodingStep {
  double reward = 0.0;
  bool switched = false;
  bool invalid = false;  // non-finite ball position: caller terminates the env
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Ball i is assigned target i under parity 0 and target 1-i under parity 1.
/// Dense reward w e^{-k d} per ball plus the rotation bonus when both balls
/// are within switch_radius (inclusive) of their targets, which swaps the
/// assignment.
inline BaodingStep compute_baoding_step(TaskState& s, const Eigen::Vector3d& ball0,
                                        const Eigen::Vector3d& ball1, const TaskConfig& cfg) {
  BaodingStep out;
  if (!ball0.allFinite() || !ball1.allFinite()) {
    out.invalid = true;
    return out;
  }
  const auto& t0 = cfg.target_positions[s.target_parity == 0 ? 0 : 1];
  const auto& t1 = cfg.target_positions[s.target_parity == 0 ? 1 : 0];
  out.d1 = (ball0 - t0).norm();
  out.d2 = (ball1 - t1).norm();
  out.reward = cfg.dist_weight * std::exp(-cfg.dist_sharpness * out.d1) +
               cfg.dist_weight * std::exp(-cfg.dist_sharpness * out.d2);
  if (out.d1 <= cfg.switch_radius && out.d2 <= cfg.switch_radius) {
    out.reward += cfg.r_rotation;
    out.switched = true;
    s.target_parity ^= 1;
    ++s.switch_count;
  }
  return out;
}

enum class EpisodeStatus { kRunning, kTruncated, kTerminated };

/// Terminated when any ball leaves the palm-frame box (strictly outside the
/// half-extent on some axis); otherwise truncated once steps_elapsed reaches
/// the episode length. Termination wins when both apply.
inline EpisodeStatus check_termination(const TaskState& s,
                                       const std::vector<Eigen::Vector3d>& ball_pos,
                                       const TaskConfig& cfg) {
  for (const auto& p : ball_pos) {
    if (!p.allFinite() || p.cwiseAbs().maxCoeff() > cfg.out_of_reach_halfextent)
      return EpisodeStatus::kTerminated;
  }
  if (s.steps_elapsed >= cfg.max_episode_steps) return EpisodeStatus::kTruncated;
  return EpisodeStatus::kRunning;
}

/// Rotations counted as pairs of target switches.
inline double rotations(const TaskState& s) { return 0.5 * s.switch_count; }

}  // namespace tacbench
