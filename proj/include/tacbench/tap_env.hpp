#pragma once

// Physics-free Bounce double: action channel 0 > 0 means "the ball touches
// the hand this step". Shares the batch interface of HandEnv so evaluation
// code runs unchanged, and isolates the reward machine from the simulator.

#include <cstdint>
#include <span>
#include <vector>

#include "tacbench/env.hpp"
#include "tacbench/parallel.hpp"
#include "tacbench/tasks.hpp"

namespace tacbench {

class TapEnv {
 public:
  TapEnv(std::size_t n_envs, TaskConfig task) : task_(task), state_(n_envs) {
    obs_.assign(n_envs * 2, 0.0);
    result_.rewards.assign(n_envs, 0.0);
    result_.terminated.assign(n_envs, 0);
    result_.truncated.assign(n_envs, 0);
    result_.invalid_action.assign(n_envs, 0);
    result_.bounces.assign(n_envs, 0);
    result_.switches.assign(n_envs, 0);
    result_.episode_return.assign(n_envs, 0.0);
    result_.episode_length.assign(n_envs, 0);
    result_.final_observations.assign(n_envs * 2, 0.0);
    returns_.assign(n_envs, 0.0);
    result_.observations = obs_;
  }

  std::size_t n_envs() const { return state_.size(); }
  int n_actions() const { return 1; }
  /// [contact on the previous step, steps elapsed in the episode]
  int obs_width() const { return 2; }
  std::span<const double> observations() const { return obs_; }

  std::span<const double> reset_all() {
    for (std::size_t e = 0; e < n_envs(); ++e) reset_env(e);
    return obs_;
  }

  const StepResult& step(std::span<const double> actions, ThreadPool&) {
    for (std::size_t e = 0; e < n_envs(); ++e) {
      auto& s = state_[e];
      const bool contact = actions[e] > 0.0;
      const double r = update_bounce(s, contact, task_);
      ++s.steps_elapsed;
      returns_[e] += r;
      obs_[2 * e] = contact ? 1.0 : 0.0;
      obs_[2 * e + 1] = s.steps_elapsed;
      const bool trunc = s.steps_elapsed >= task_.max_episode_steps;
      result_.rewards[e] = r;
      result_.terminated[e] = 0;
      result_.truncated[e] = trunc;
      result_.bounces[e] = s.bounce_count;
      result_.episode_return[e] = returns_[e];
      result_.episode_length[e] = s.steps_elapsed;
      if (trunc) {
        result_.final_observations[2 * e] = obs_[2 * e];
        result_.final_observations[2 * e + 1] = obs_[2 * e + 1];
        reset_env(e);
      }
    }
    return result_;
  }

 private:
  void reset_env(std::size_t e) {
    state_[e] = TaskState{};
    returns_[e] = 0.0;
    obs_[2 * e] = 0.0;
    obs_[2 * e + 1] = 0.0;
  }

  TaskConfig task_;
  std::vector<TaskState> state_;
  std::vector<double> obs_;
  std::vector<double> returns_;
  StepResult result_;
};

/// Scripted policy that touches on every sixth step (episode steps 5, 11,
/// ...), the fastest contact rhythm that still counts every touch as a
/// bounce.
struct ScriptedBounceOracle {
  int period = 6;

  void operator()(std::span<const double> obs, std::span<double> actions) const {
    for (std::size_t e = 0; e < actions.size(); ++e) {
      const auto t = static_cast<long>(obs[2 * e + 1]);
      actions[e] = (t % period == period - 1) ? 1.0 : -1.0;
    }
  }
};

}  // namespace tacbench
