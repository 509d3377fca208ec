#pragma once

// Vectorized environment: 60 Hz control over 240 Hz physics, per-frame
// observation assembly, k-frame stacking and auto-reset.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tacbench/binary_io.hpp"
#include "tacbench/morphology.hpp"
#include "tacbench/parallel.hpp"
#include "tacbench/physics.hpp"
#include "tacbench/rng.hpp"
#include "tacbench/tasks.hpp"

namespace tacbench {

enum class ObservationMode { kBlind, kState };

inline std::optional<ObservationMode> parse_observation_mode(const std::string& s) {
  if (s == "blind") return ObservationMode::kBlind;
  if (s == "state") return ObservationMode::kState;
  return std::nullopt;
}

inline std::string to_string(ObservationMode m) {
  return m == ObservationMode::kBlind ? "blind" : "state";
}

struct EnvBatchConfig {
  std::size_t n_train = 8092;
  std::size_t n_eval = 100;
  std::uint64_t seed = 0;
  std::string morphology = "shadow";
  TaskKind task = TaskKind::kBounce;
  ObservationMode observation_mode = ObservationMode::kBlind;
  int stack_k = 4;
};

inline int ball_count(TaskKind t) { return t == TaskKind::kBounce ? 1 : 2; }

/// Width of one observation frame.
inline int frame_width(const MorphologyConfig& m, ObservationMode mode, int n_balls) {
  return m.obs_block_widths.total() + (mode == ObservationMode::kState ? 6 * n_balls : 0);
}

/// Per-env buffer of the last k frames, flattened oldest to newest.
class StackedObservation {
 public:
  StackedObservation() = default;
  StackedObservation(std::size_t n_envs, int k, int frame_width)
      : n_envs_(n_envs), k_(k), frame_width_(frame_width),
        data_(n_envs * static_cast<std::size_t>(k) * frame_width, 0.0) {}

  int k() const { return k_; }
  int frame_width() const { return frame_width_; }
  int width() const { return k_ * frame_width_; }
  std::size_t n_envs() const { return n_envs_; }

  std::span<const double> row(std::size_t env) const {
    return {data_.data() + env * width(), static_cast<std::size_t>(width())};
  }
  std::span<const double> frame(std::size_t env, int slot) const {
    return {data_.data() + env * width() + slot * frame_width_,
            static_cast<std::size_t>(frame_width_)};
  }
  std::span<const double> newest(std::size_t env) const { return frame(env, k_ - 1); }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  /// Drops the oldest frame and appends `f` as newest.
  void push(std::size_t env, std::span<const double> f) {
    double* r = data_.data() + env * width();
    std::copy(r + frame_width_, r + width(), r);
    std::copy(f.begin(), f.end(), r + (k_ - 1) * frame_width_);
  }

  void fill(std::size_t env, std::span<const double> f) {
    double* r = data_.data() + env * width();
    for (int s = 0; s < k_; ++s) std::copy(f.begin(), f.end(), r + s * frame_width_);
  }

 private:
  std::size_t n_envs_ = 0;
  int k_ = 0;
  int frame_width_ = 0;
  std::vector<double> data_;
};

/// Frame layout: [tactile bits, joint positions, joint velocities, command
/// error, last action] then, in state mode, [ball positions, ball velocities].
///
/// The command-error block is per joint (q_cmd - q) when its width equals
/// n_joints, otherwise per action channel as the coupling-weighted mean of
/// the joint errors. The last-action block is the current joint target
/// vector when its width equals n_joints, otherwise the last raw action.
inline void assemble_frame(const WorldBatch& w, std::size_t env, const MorphologyConfig& m,
                           ObservationMode mode, std::span<const double> last_action,
                           std::span<double> out) {
  const auto& widths = m.obs_block_widths;
  std::size_t o = 0;
  for (int s = 0; s < w.n_sensors; ++s) out[o++] = w.touch[env * w.n_sensors + s] ? 1.0 : 0.0;
  const double* q = w.joints(w.q, env);
  const double* qd = w.joints(w.qdot, env);
  const double* cmd = w.joints(w.q_cmd, env);
  for (int j = 0; j < m.n_joints; ++j) out[o++] = q[j];
  for (int j = 0; j < m.n_joints; ++j) out[o++] = qd[j];
  if (widths.cmd_error == m.n_joints) {
    for (int j = 0; j < m.n_joints; ++j) out[o++] = cmd[j] - q[j];
  } else {
    for (int a = 0; a < m.n_actions; ++a) {
      double num = 0.0, den = 0.0;
      for (int j = 0; j < m.n_joints; ++j) {
        num += m.coupling(j, a) * (cmd[j] - q[j]);
        den += m.coupling(j, a);
      }
      out[o++] = den > 0.0 ? num / den : 0.0;
    }
  }
  if (widths.last_action == m.n_joints) {
    for (int j = 0; j < m.n_joints; ++j) out[o++] = cmd[j];
  } else {
    for (int a = 0; a < m.n_actions; ++a) out[o++] = last_action[a];
  }
  if (mode == ObservationMode::kState) {
    for (int b = 0; b < w.n_balls; ++b)
      for (int i = 0; i < 3; ++i) out[o++] = w.pos(env, b)[i];
    for (int b = 0; b < w.n_balls; ++b)
      for (int i = 0; i < 3; ++i) out[o++] = w.vel(env, b)[i];
  }
}

struct StepResult {
  std::span<const double> observations;  // n_envs x obs_width, post auto-reset
  std::vector<double> rewards;
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> truncated;
  std::vector<std::uint8_t> invalid_action;
  // Counters of the episode the step belonged to (pre-reset for done envs).
  std::vector<int> bounces;
  std::vector<int> switches;
  std::vector<double> episode_return;
  std::vector<int> episode_length;
  // Observation that ended the episode; valid only where terminated or
  // truncated is set.
  std::vector<double> final_observations;

  bool done(std::size_t env) const { return terminated[env] || truncated[env]; }
};

/// Batch of identical hand environments. Randomness for env `i`'s episode
/// `e` comes from the counter stream (seed, domain, i, e) and nothing else,
/// so train and eval batches built with different domains never share draws.
class HandEnv {
 public:
  HandEnv(MorphologyConfig morph, PhysicsConfig physics, TaskConfig task,
          ObservationMode mode, int stack_k, std::size_t n_envs, std::uint64_t seed,
          StreamDomain domain)
      : morph_(std::move(morph)),
        physics_(physics),
        task_(task),
        mode_(mode),
        model_(morph_),
        seed_(seed),
        domain_(domain),
        world_(n_envs, model_, make_balls()),
        stack_(n_envs, stack_k, tacbench::frame_width(morph_, mode, ball_count(task.task))),
        task_state_(n_envs),
        last_action_(n_envs * morph_.n_actions, 0.0),
        resets_(n_envs, 0),
        episode_return_(n_envs, 0.0) {
    if (auto v = validate_config(morph_); !v.empty())
      throw ConfigError("morphology " + morph_.name + ": " + v.front());
    result_.rewards.assign(n_envs, 0.0);
    result_.terminated.assign(n_envs, 0);
    result_.truncated.assign(n_envs, 0);
    result_.invalid_action.assign(n_envs, 0);
    result_.bounces.assign(n_envs, 0);
    result_.switches.assign(n_envs, 0);
    result_.episode_return.assign(n_envs, 0.0);
    result_.episode_length.assign(n_envs, 0);
    result_.final_observations.assign(n_envs * stack_.width(), 0.0);
    result_.observations = stack_.data();
    for (std::size_t e = 0; e < n_envs; ++e) reset_env(e);
  }

  HandEnv(const HandEnv&) = delete;
  HandEnv& operator=(const HandEnv&) = delete;

  std::size_t n_envs() const { return world_.n_envs; }
  int n_actions() const { return morph_.n_actions; }
  int obs_width() const { return stack_.width(); }
  int frame_width() const { return stack_.frame_width(); }
  int stack_k() const { return stack_.k(); }
  const MorphologyConfig& morphology() const { return morph_; }
  const PhysicsConfig& physics() const { return physics_; }
  const TaskConfig& task() const { return task_; }
  ObservationMode mode() const { return mode_; }
  const HandModel& model() const { return model_; }
  const WorldBatch& world() const { return world_; }
  WorldBatch& world() { return world_; }
  const StackedObservation& stack() const { return stack_; }
  const std::vector<TaskState>& task_states() const { return task_state_; }
  const std::vector<std::uint64_t>& reset_counts() const { return resets_; }
  std::span<const double> observations() const { return stack_.data(); }

  /// Offset and width of the proprioceptive block inside one frame.
  int proprio_offset() const { return morph_.obs_block_widths.tactile; }
  int proprio_width() const { return morph_.obs_block_widths.proprio(); }

  /// Resets the envs whose mask entry is non-zero; returns all observations.
  std::span<const double> reset(std::span<const std::uint8_t> mask) {
    for (std::size_t e = 0; e < n_envs(); ++e)
      if (mask[e]) reset_env(e);
    return observations();
  }

  std::span<const double> reset_all() {
    for (std::size_t e = 0; e < n_envs(); ++e) reset_env(e);
    return observations();
  }

  /// One control step for every env. `actions` is n_envs x n_actions.
  const StepResult& step(std::span<const double> actions, ThreadPool& pool) {
    pool.parallel_for(n_envs(), [&](std::size_t begin, std::size_t end) {
      for (std::size_t e = begin; e < end; ++e)
        step_env(e, actions.subspan(e * morph_.n_actions, morph_.n_actions));
    });
    steps_taken_ += n_envs();
    return result_;
  }

  const StepResult& last_result() const { return result_; }

  /// Env-steps simulated since construction (control steps x envs).
  std::uint64_t steps_taken() const { return steps_taken_; }

  /// Simulated seconds per control step.
  double control_period() const { return physics_.control_period(); }

  void hash_into(Digest& d) const {
    world_.hash_into(d);
    d.add(stack_.data());
    d.add(task_state_);
    d.add(last_action_);
    d.add(resets_);
    d.add(episode_return_);
  }

  std::uint64_t digest() const {
    Digest d;
    hash_into(d);
    return d.value();
  }

  void write(BinaryWriter& w) const {
    world_.write(w);
    w.put(stack_.data());
    w.put(task_state_);
    w.put(last_action_);
    w.put(resets_);
    w.put(episode_return_);
    w.put(steps_taken_);
  }

  void read(BinaryReader& r) {
    world_.read(r);
    r.get_into(stack_.data());
    r.get_into(task_state_);
    r.get_into(last_action_);
    r.get_into(resets_);
    r.get_into(episode_return_);
    steps_taken_ = r.get<std::uint64_t>();
  }

 private:
  std::vector<BallSpec> make_balls() const {
    const bool bounce = task_.task == TaskKind::kBounce;
    BallSpec spec{morph_.ball_radius, 0.055,
                  bounce ? physics_.restitution_bounce_ball : physics_.restitution_baoding_ball};
    return std::vector<BallSpec>(ball_count(task_.task), spec);
  }

  void reset_env(std::size_t env) {
    CounterRng rng(seed_, domain_, static_cast<std::uint32_t>(env), resets_[env]);
    ++resets_[env];
    double* q = world_.joints(world_.q, env);
    double* qd = world_.joints(world_.qdot, env);
    double* cmd = world_.joints(world_.q_cmd, env);
    for (int j = 0; j < morph_.n_joints; ++j) {
      const auto& lim = morph_.joint_limits[j];
      const double noise = task_.joint_reset_noise * rng.uniform(-1.0, 1.0);
      q[j] = std::clamp(lim.mid() + noise, lim.lo, lim.hi);
      qd[j] = 0.0;
      cmd[j] = q[j];
    }
    world_.corrupt[env] = 0;
    std::fill_n(world_.touch.begin() + env * world_.n_sensors, world_.n_sensors, 0);
    forward_kinematics(world_, model_, env);

    if (task_.task == TaskKind::kBounce) {
      const double j = task_.bounce_spawn_jitter;
      world_.pos(env, 0) = Eigen::Vector3d(rng.uniform(-j, j), rng.uniform(-j, j),
                                           task_.bounce_spawn_height);
      world_.vel(env, 0).setZero();
    } else {
      const double j = task_.baoding_spawn_jitter / std::sqrt(3.0);
      for (int b = 0; b < 2; ++b) {
        Eigen::Vector3d jitter;
        for (int i = 0; i < 3; ++i) jitter[i] = rng.uniform(-j, j);
        world_.pos(env, b) = task_.target_positions[b] + jitter;
        world_.vel(env, b).setZero();
      }
    }
    task_state_[env] = TaskState{};
    episode_return_[env] = 0.0;
    std::fill_n(last_action_.begin() + env * morph_.n_actions, morph_.n_actions, 0.0);
    push_frame(env, true);
  }

  void push_frame(std::size_t env, bool fill) {
    thread_local std::vector<double> frame;
    frame.resize(stack_.frame_width());
    assemble_frame(world_, env, morph_, mode_,
                   std::span<const double>(last_action_).subspan(env * morph_.n_actions,
                                                                 morph_.n_actions),
                   frame);
    if (fill) {
      stack_.fill(env, frame);
    } else {
      stack_.push(env, frame);
    }
  }

  void step_env(std::size_t env, std::span<const double> action) {
    auto& s = task_state_[env];
    double reward = 0.0;
    bool terminated = false;
    const bool invalid = !std::all_of(action.begin(), action.end(),
                                      [](double a) { return std::isfinite(a); });
    std::fill_n(world_.touch.begin() + env * world_.n_sensors, world_.n_sensors, 0);
    if (invalid) {
      terminated = true;
    } else {
      double* last = &last_action_[env * morph_.n_actions];
      for (int a = 0; a < morph_.n_actions; ++a) last[a] = std::clamp(action[a], -1.0, 1.0);
      action_to_joint_targets(action.data(), morph_, world_.joints(world_.q_cmd, env));
      for (int k = 0; k < physics_.substeps_per_control; ++k)
        step_substep(world_, physics_, model_, env);
      ++s.steps_elapsed;
      if (world_.corrupt[env]) {
        terminated = true;
      } else if (task_.task == TaskKind::kBounce) {
        const auto* t = &world_.touch[env * world_.n_sensors];
        const bool any = std::any_of(t, t + world_.n_sensors, [](std::uint8_t b) { return b != 0; });
        reward = update_bounce(s, any, task_);
      } else {
        const auto r = compute_baoding_step(s, world_.pos(env, 0), world_.pos(env, 1), task_);
        if (r.invalid) {
          terminated = true;
        } else {
          reward = r.reward;
        }
      }
    }
    EpisodeStatus status = EpisodeStatus::kTerminated;
    if (!terminated) {
      thread_local std::vector<Eigen::Vector3d> balls;
      balls.clear();
      for (int b = 0; b < world_.n_balls; ++b) balls.emplace_back(world_.pos(env, b));
      status = check_termination(s, balls, task_);
    }
    episode_return_[env] += reward;
    push_frame(env, false);

    result_.rewards[env] = reward;
    result_.terminated[env] = status == EpisodeStatus::kTerminated;
    result_.truncated[env] = status == EpisodeStatus::kTruncated;
    result_.invalid_action[env] = invalid;
    result_.bounces[env] = s.bounce_count;
    result_.switches[env] = s.switch_count;
    result_.episode_return[env] = episode_return_[env];
    result_.episode_length[env] = s.steps_elapsed;
    if (status != EpisodeStatus::kRunning) {
      const auto row = stack_.row(env);
      std::copy(row.begin(), row.end(), result_.final_observations.begin() + env * stack_.width());
      reset_env(env);
    }
  }

  MorphologyConfig morph_;
  PhysicsConfig physics_;
  TaskConfig task_;
  ObservationMode mode_;
  HandModel model_;
  std::uint64_t seed_;
  StreamDomain domain_;
  WorldBatch world_;
  StackedObservation stack_;
  std::vector<TaskState> task_state_;
  std::vector<double> last_action_;
  std::vector<std::uint64_t> resets_;
  std::vector<double> episode_return_;
  std::uint64_t steps_taken_ = 0;
  StepResult result_;
};

/// Palm-frame Baoding targets spaced so balls of this hand do not overlap.
inline std::array<Eigen::Vector3d, 2> default_baoding_targets(const MorphologyConfig& m) {
  const double lateral = std::max(0.02, m.ball_radius + 0.003);
  return {Eigen::Vector3d(0.0, lateral, m.ball_radius),
          Eigen::Vector3d(0.0, -lateral, m.ball_radius)};
}

}  // namespace tacbench
