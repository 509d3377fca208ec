#pragma once

// Synchronous on-policy PPO: rollout collection over the training batch,
// GAE, clipped-surrogate epochs over shuffled minibatches, and evaluation on
// a separate batch with frozen observation statistics.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tacbench/binary_io.hpp"
#include "tacbench/env.hpp"
#include "tacbench/nn.hpp"
#include "tacbench/parallel.hpp"
#include "tacbench/rng.hpp"

namespace tacbench {

struct PPOHyperparams {
  double learning_rate = 3e-4;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip_epsilon = 0.2;
  double entropy_coef = 0.0;
  double value_coef = 0.5;
  int rollout_horizon = 32;
  int n_epochs = 5;
  int n_minibatches = 4;
  double max_grad_norm = 1.0;
  double kl_target = 0.01;
  double aux_coef = 0.0;
  // Individually switchable training tricks.
  bool normalize_advantages = true;
  bool clip_gradients = true;
  bool normalize_observations = true;
  double lr_min = 1e-6;
  double lr_max = 1e-2;

  std::vector<std::string> validate(std::size_t n_envs) const {
    std::vector<std::string> out;
    if (!(learning_rate > 0.0)) out.push_back("ppo.learning_rate: must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) out.push_back("ppo.gamma: must lie in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) out.push_back("ppo.gae_lambda: must lie in [0, 1]");
    if (!(clip_epsilon > 0.0)) out.push_back("ppo.clip_epsilon: must be positive");
    if (!(entropy_coef >= 0.0)) out.push_back("ppo.entropy_coef: must be >= 0");
    if (!(value_coef > 0.0)) out.push_back("ppo.value_coef: must be positive");
    if (rollout_horizon < 1) out.push_back("ppo.rollout_horizon: must be >= 1");
    if (n_epochs < 1) out.push_back("ppo.n_epochs: must be >= 1");
    if (n_minibatches < 1) out.push_back("ppo.n_minibatches: must be >= 1");
    if (!(max_grad_norm > 0.0)) out.push_back("ppo.max_grad_norm: must be positive");
    if (!(kl_target >= 0.0)) out.push_back("ppo.kl_target: must be >= 0");
    if (!(aux_coef >= 0.0)) out.push_back("ppo.aux_coef: must be >= 0");
    if (!(lr_min > 0.0 && lr_min <= lr_max)) out.push_back("ppo.lr_min: must satisfy 0 < lr_min <= lr_max");
    if (rollout_horizon >= 1 && n_minibatches >= 1 &&
        (static_cast<std::size_t>(rollout_horizon) * n_envs) % n_minibatches != 0)
      out.push_back("ppo.n_minibatches: must divide rollout_horizon * n_train");
    return out;
  }
};

/// Advantages and returns over a (t, env) grid stored as [t * n_envs + env].
struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> returns;
};

/// `truncation_values` holds V of the observation that ended a truncated
/// episode (read only where truncated is set); `last_values` holds V of the
/// observation after the final step.
inline GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values,
                             std::span<const std::uint8_t> terminated,
                             std::span<const std::uint8_t> truncated,
                             std::span<const double> truncation_values,
                             std::span<const double> last_values, std::size_t n_envs, double gamma,
                             double lambda) {
  const std::size_t T = n_envs ? rewards.size() / n_envs : 0;
  GaeResult out;
  out.advantages.assign(rewards.size(), 0.0);
  out.returns.assign(rewards.size(), 0.0);
  for (std::size_t e = 0; e < n_envs; ++e) {
    double next_adv = 0.0;
    for (std::size_t t = T; t-- > 0;) {
      const std::size_t i = t * n_envs + e;
      double next_value;
      if (truncated[i]) {
        next_value = truncation_values[i];
      } else if (t + 1 == T) {
        next_value = last_values[e];
      } else {
        next_value = values[i + n_envs];
      }
      const double alive = terminated[i] ? 0.0 : 1.0;
      const double cont = (terminated[i] || truncated[i]) ? 0.0 : 1.0;
      const double delta = rewards[i] + gamma * next_value * alive - values[i];
      next_adv = delta + gamma * lambda * cont * next_adv;
      out.advantages[i] = next_adv;
      out.returns[i] = next_adv + values[i];
    }
  }
  return out;
}

/// Fixed-horizon on-policy storage. Per-sample arrays are indexed
/// [t * n_envs + env]; observations are stored already normalized.
struct RolloutBuffer {
  std::size_t n_envs = 0;
  int horizon = 0;
  int obs_dim = 0;
  int n_actions = 0;
  int aux_dim = 0;
  std::vector<double> obs;
  std::vector<double> u;
  std::vector<double> log_prob;
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<std::uint8_t> terminated;
  std::vector<std::uint8_t> truncated;
  std::vector<double> truncation_values;
  std::vector<double> last_values;
  std::vector<double> aux_target;
  std::vector<std::uint8_t> aux_mask;

  RolloutBuffer() = default;
  RolloutBuffer(std::size_t n, int T, int obs_w, int acts, int aux)
      : n_envs(n), horizon(T), obs_dim(obs_w), n_actions(acts), aux_dim(aux) {
    clear();
  }

  std::size_t size() const { return n_envs * static_cast<std::size_t>(horizon); }

  void clear() {
    const std::size_t M = size();
    obs.assign(M * obs_dim, 0.0);
    u.assign(M * n_actions, 0.0);
    log_prob.assign(M, 0.0);
    values.assign(M, 0.0);
    rewards.assign(M, 0.0);
    terminated.assign(M, 0);
    truncated.assign(M, 0);
    truncation_values.assign(M, 0.0);
    last_values.assign(n_envs, 0.0);
    aux_target.assign(M * aux_dim, 0.0);
    aux_mask.assign(M, 0);
  }
};

/// Policy mean and value over a batch of rows, computed in fixed-size
/// chunks so results do not depend on the worker count.
inline void batch_policy_value(const std::vector<double>& params, const ParamLayout& L,
                               const NetworkSpec& spec, std::span<const double> obs,
                               std::size_t rows, std::span<double> mu_out,
                               std::span<double> v_out, ThreadPool& pool) {
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (rows + kChunk - 1) / kChunk;
  const int W = spec.obs_dim;
  const int A = spec.n_actions;
  pool.parallel_for(chunks, [&](std::size_t cb, std::size_t ce) {
    EncoderPass pass;
    Mat mu;
    Eigen::RowVectorXd v;
    for (std::size_t c = cb; c < ce; ++c) {
      const std::size_t r0 = c * kChunk;
      const auto n = static_cast<Eigen::Index>(std::min(kChunk, rows - r0));
      ConstMatMap x(obs.data() + r0 * W, W, n);
      policy_value(params, L, x, mu, v, pass);
      std::copy(mu.data(), mu.data() + A * n, mu_out.data() + r0 * A);
      std::copy(v.data(), v.data() + n, v_out.data() + r0);
    }
  });
}

struct EvalReport {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_bounces = 0.0;
  double mean_switches = 0.0;
  double mean_rotations() const { return 0.5 * mean_switches; }
};

/// Runs `n_episodes` deterministic episodes. Each round resets every env and
/// keeps stepping until all of them have finished their first episode; the
/// first n_episodes completions in env order are kept. `act(obs, actions)`
/// maps raw stacked observations to actions in [-1, 1].
template <class Env, class Act>
EvalReport evaluate_policy(Env& env, ThreadPool& pool, Act&& act, int n_episodes) {
  EvalReport rep;
  if (n_episodes <= 0) return rep;
  const std::size_t N = env.n_envs();
  std::vector<double> returns, bounces, switches;
  std::vector<double> actions(N * env.n_actions(), 0.0);
  std::vector<std::uint8_t> finished(N);
  while (static_cast<int>(returns.size()) < n_episodes) {
    env.reset_all();
    std::fill(finished.begin(), finished.end(), 0);
    std::vector<double> r(N), b(N), s(N);
    std::size_t remaining = N;
    while (remaining > 0) {
      act(env.observations(), std::span<double>(actions));
      const auto& res = env.step(actions, pool);
      for (std::size_t e = 0; e < N; ++e) {
        if (finished[e] || !res.done(e)) continue;
        finished[e] = 1;
        --remaining;
        r[e] = res.episode_return[e];
        b[e] = res.bounces[e];
        s[e] = res.switches[e];
      }
    }
    for (std::size_t e = 0; e < N && static_cast<int>(returns.size()) < n_episodes; ++e) {
      returns.push_back(r[e]);
      bounces.push_back(b[e]);
      switches.push_back(s[e]);
    }
  }
  const double n = static_cast<double>(returns.size());
  rep.episodes = static_cast<int>(returns.size());
  rep.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double sq = 0.0;
  for (double x : returns) sq += (x - rep.mean_return) * (x - rep.mean_return);
  rep.std_return = std::sqrt(sq / n);
  rep.mean_bounces = std::accumulate(bounces.begin(), bounces.end(), 0.0) / n;
  rep.mean_switches = std::accumulate(switches.begin(), switches.end(), 0.0) / n;
  return rep;
}

struct UpdateStats {
  LossStats loss;  // means over all minibatches that ran
  double grad_norm = 0.0;
  double learning_rate = 0.0;
  std::size_t samples = 0;  // samples per epoch fed to gradient steps
  int minibatch_steps = 0;
  bool rolled_back = false;
};

/// PPO epochs over a filled buffer. Advantages and returns are computed from
/// the buffer's stored fields. `lr` is adapted in place when kl_target > 0.
/// On a non-finite loss or gradient the parameters and optimizer state are
/// restored to their values before the call.
inline UpdateStats ppo_update(const RolloutBuffer& buf, std::vector<double>& params,
                              const NetworkSpec& spec, Adam& adam, double& lr,
                              const PPOHyperparams& hp, std::uint64_t seed,
                              std::uint64_t update_index, ThreadPool& pool) {
  constexpr std::size_t kChunk = 256;
  const ParamLayout L(spec);
  const std::size_t M = buf.size();
  const std::size_t mb_size = M / static_cast<std::size_t>(hp.n_minibatches);
  const int W = buf.obs_dim;
  const int A = buf.n_actions;
  const int P = buf.aux_dim;
  const bool use_aux = spec.aux_head && hp.aux_coef != 0.0;

  auto gae = compute_gae(buf.rewards, buf.values, buf.terminated, buf.truncated,
                         buf.truncation_values, buf.last_values, buf.n_envs, hp.gamma,
                         hp.gae_lambda);
  std::vector<double> adv = gae.advantages;
  if (hp.normalize_advantages && M > 0) {
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(M);
    double sq = 0.0;
    for (double a : adv) sq += (a - mean) * (a - mean);
    const double sd = std::sqrt(sq / static_cast<double>(M));
    for (double& a : adv) a = (a - mean) / (sd + 1e-8);
  }

  const std::vector<double> params0 = params;
  const Adam adam0 = adam;
  const double lr0 = lr;

  UpdateStats out;
  std::vector<std::size_t> perm(M);
  std::vector<double> grad(params.size());
  const std::size_t waves_width = pool.size();
  std::vector<std::vector<double>> chunk_grads(waves_width, std::vector<double>(params.size()));
  std::vector<LossStats> chunk_stats(waves_width);

  for (int epoch = 0; epoch < hp.n_epochs; ++epoch) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    CounterRng rng(seed, StreamDomain::kMinibatch, 0,
                   update_index * static_cast<std::uint64_t>(hp.n_epochs) + epoch);
    rng.shuffle(std::span<std::size_t>(perm));
    double epoch_kl = 0.0;
    for (int mb = 0; mb < hp.n_minibatches; ++mb) {
      const std::size_t* idx = perm.data() + mb * mb_size;
      std::size_t aux_valid = 0;
      if (use_aux)
        for (std::size_t j = 0; j < mb_size; ++j) aux_valid += buf.aux_mask[idx[j]];
      LossWeights w;
      w.clip_epsilon = hp.clip_epsilon;
      w.value_coef = hp.value_coef;
      w.entropy_coef = hp.entropy_coef;
      w.aux_coef = use_aux ? hp.aux_coef : 0.0;
      w.sample_scale = 1.0 / static_cast<double>(mb_size);
      w.aux_scale = aux_valid ? 1.0 / static_cast<double>(aux_valid * P) : 0.0;

      std::fill(grad.begin(), grad.end(), 0.0);
      LossStats mb_stats;
      const std::size_t n_chunks = (mb_size + kChunk - 1) / kChunk;
      for (std::size_t wave = 0; wave < n_chunks; wave += waves_width) {
        const std::size_t in_wave = std::min(waves_width, n_chunks - wave);
        pool.parallel_for(in_wave, [&](std::size_t b, std::size_t e) {
          for (std::size_t k = b; k < e; ++k) {
            const std::size_t j0 = (wave + k) * kChunk;
            const std::size_t n = std::min(kChunk, mb_size - j0);
            Mat obs(W, n), u(A, n), tgt(use_aux ? P : 0, use_aux ? n : 0);
            std::vector<double> olp(n), a(n), ret(n);
            std::vector<std::uint8_t> mask(n, 0);
            for (std::size_t j = 0; j < n; ++j) {
              const std::size_t s = idx[j0 + j];
              obs.col(j) = ConstVecMap(buf.obs.data() + s * W, W);
              u.col(j) = ConstVecMap(buf.u.data() + s * A, A);
              olp[j] = buf.log_prob[s];
              a[j] = adv[s];
              ret[j] = gae.returns[s];
              if (use_aux) {
                tgt.col(j) = ConstVecMap(buf.aux_target.data() + s * P, P);
                mask[j] = buf.aux_mask[s];
              }
            }
            LossWeights wk = w;
            wk.entropy_scale = static_cast<double>(n) / static_cast<double>(mb_size);
            ChunkData cd{obs, u, olp, a, ret, tgt, mask};
            auto& g = chunk_grads[k];
            std::fill(g.begin(), g.end(), 0.0);
            chunk_stats[k] = loss_and_grad(params, spec, L, cd, wk, g);
          }
        });
        for (std::size_t k = 0; k < in_wave; ++k) {
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += chunk_grads[k][i];
          mb_stats += chunk_stats[k];
        }
      }
      bool finite = std::isfinite(mb_stats.total);
      for (double g : grad) finite = finite && std::isfinite(g);
      if (!finite) {
        params = params0;
        adam = adam0;
        lr = lr0;
        out.rolled_back = true;
        out.learning_rate = lr;
        return out;
      }
      out.grad_norm = hp.clip_gradients ? clip_grad_norm(grad, hp.max_grad_norm)
                                        : clip_grad_norm(grad, INFINITY);
      adam.step(params, grad, lr);
      out.loss += mb_stats;
      ++out.minibatch_steps;
      epoch_kl += mb_stats.approx_kl;
    }
    if (hp.kl_target > 0.0) {
      epoch_kl /= hp.n_minibatches;
      if (epoch_kl > 2.0 * hp.kl_target) {
        lr = std::max(hp.lr_min, lr * 0.5);
      } else if (epoch_kl < 0.5 * hp.kl_target) {
        lr = std::min(hp.lr_max, lr * 2.0);
      }
    }
  }
  if (out.minibatch_steps > 0) {
    const double k = 1.0 / out.minibatch_steps;
    out.loss.policy_loss *= k;
    out.loss.value_loss *= k;
    out.loss.entropy *= k;
    out.loss.approx_kl *= k;
    out.loss.clip_fraction *= k;
    out.loss.aux_loss *= k;
    out.loss.total *= k;
  }
  out.samples = mb_size * static_cast<std::size_t>(hp.n_minibatches);
  out.learning_rate = lr;
  return out;
}

struct TrainerConfig {
  MorphologyConfig morphology;
  PhysicsConfig physics;
  TaskConfig task;
  ObservationMode observation_mode = ObservationMode::kBlind;
  int stack_k = 4;
  std::size_t n_train = 8092;
  std::size_t n_eval = 100;
  std::uint64_t seed = 0;
  PPOHyperparams hp;
  std::vector<int> hidden = {256, 256};
  double init_log_std = -0.5;
  bool aux_head = false;
  int aux_hidden = 64;
  std::uint64_t total_env_steps = 1'000'000;
  std::uint64_t eval_interval = 100'000;
  int eval_episodes = 100;
  std::size_t threads = 0;
};

struct IterationMetrics {
  std::uint64_t iteration = 0;
  std::uint64_t env_steps = 0;
  int train_episodes = 0;
  std::optional<double> train_return;
  std::optional<double> train_bounces;
  std::optional<double> train_switches;
  std::optional<EvalReport> eval;
  UpdateStats update;
};

struct EvalPoint {
  std::uint64_t env_steps = 0;
  double mean_return = 0.0;
};

class Trainer {
 public:
  explicit Trainer(TrainerConfig cfg)
      : cfg_(std::move(cfg)),
        pool_(resolve_thread_count(cfg_.threads)),
        train_(cfg_.morphology, cfg_.physics, cfg_.task, cfg_.observation_mode, cfg_.stack_k,
               cfg_.n_train, cfg_.seed, StreamDomain::kTrainReset),
        eval_(cfg_.morphology, cfg_.physics, cfg_.task, cfg_.observation_mode, cfg_.stack_k,
              cfg_.n_eval, cfg_.seed, StreamDomain::kEvalReset) {
    spec_.obs_dim = train_.obs_width();
    spec_.n_actions = train_.n_actions();
    spec_.hidden = cfg_.hidden;
    spec_.init_log_std = cfg_.init_log_std;
    spec_.aux_head = cfg_.aux_head;
    spec_.aux_hidden = cfg_.aux_hidden;
    spec_.aux_target_dim = cfg_.aux_head ? train_.proprio_width() : 0;
    if (auto v = cfg_.hp.validate(cfg_.n_train); !v.empty()) throw ConfigError(v.front());
    params_ = init_params(spec_, cfg_.seed);
    adam_ = Adam(params_.size());
    norm_ = RunningNorm(spec_.obs_dim);
    lr_ = cfg_.hp.learning_rate;
    next_eval_ = std::max<std::uint64_t>(cfg_.eval_interval, 1);
    buf_ = RolloutBuffer(cfg_.n_train, cfg_.hp.rollout_horizon, spec_.obs_dim, spec_.n_actions,
                         spec_.aux_target_dim);
  }

  const TrainerConfig& config() const { return cfg_; }
  const NetworkSpec& spec() const { return spec_; }
  const std::vector<double>& params() const { return params_; }
  std::vector<double>& params() { return params_; }
  const RunningNorm& norm() const { return norm_; }
  const Adam& adam() const { return adam_; }
  double learning_rate() const { return lr_; }
  std::uint64_t env_steps() const { return env_steps_; }
  std::uint64_t iteration() const { return iteration_; }
  const HandEnv& train_env() const { return train_; }
  const HandEnv& eval_env() const { return eval_; }
  HandEnv& eval_env() { return eval_; }
  ThreadPool& pool() { return pool_; }
  const std::vector<EvalPoint>& eval_history() const { return eval_history_; }
  bool done() const { return env_steps_ >= cfg_.total_env_steps; }

  /// Writes normalized observations for `rows` raw rows.
  void normalize(std::span<const double> raw, std::span<double> out) const {
    if (cfg_.hp.normalize_observations) {
      norm_.normalize(raw, out);
    } else {
      std::copy(raw.begin(), raw.end(), out.begin());
    }
  }

  /// Deterministic actions tanh(mean) for raw observations.
  void act_deterministic(std::span<const double> raw, std::span<double> actions) {
    const std::size_t rows = raw.size() / spec_.obs_dim;
    scratch_obs_.resize(raw.size());
    normalize(raw, scratch_obs_);
    scratch_v_.resize(rows);
    batch_policy_value(params_, layout(), spec_, scratch_obs_, rows, actions, scratch_v_, pool_);
    for (double& a : actions) a = std::tanh(a);
  }

  EvalReport evaluate(int n_episodes) {
    return evaluate_policy(
        eval_, pool_,
        [&](std::span<const double> obs, std::span<double> act) { act_deterministic(obs, act); },
        n_episodes);
  }

  /// Collects one rollout, runs the update and, when due, an evaluation.
  IterationMetrics iterate() {
    IterationMetrics m;
    const std::size_t N = cfg_.n_train;
    const int T = cfg_.hp.rollout_horizon;
    const int W = spec_.obs_dim;
    const int A = spec_.n_actions;
    const int P = spec_.aux_target_dim;
    const ParamLayout& L = layout();
    buf_.clear();
    std::vector<double> mu(N * A), v(N), actions(N * A);
    double ret_sum = 0.0, bounce_sum = 0.0, switch_sum = 0.0;

    for (int t = 0; t < T; ++t) {
      const auto raw = train_.observations();
      if (cfg_.hp.normalize_observations) norm_.update(raw, N);
      std::span<double> obs_t(buf_.obs.data() + t * N * W, N * W);
      normalize(raw, obs_t);
      batch_policy_value(params_, L, spec_, obs_t, N, mu, v, pool_);
      const std::uint64_t step_index = control_steps_;
      pool_.parallel_for(N, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
          CounterRng rng(cfg_.seed, StreamDomain::kPolicy, static_cast<std::uint32_t>(i), step_index);
          const std::size_t s = t * N + i;
          double* u = buf_.u.data() + s * A;
          for (int a = 0; a < A; ++a) {
            const double sd = std::exp(clamped_log_std(params_[L.log_std + a]));
            u[a] = mu[i * A + a] + sd * rng.normal();
            actions[i * A + a] = std::tanh(u[a]);
          }
          buf_.log_prob[s] = gaussian_log_prob({u, static_cast<std::size_t>(A)},
                                               {mu.data() + i * A, static_cast<std::size_t>(A)},
                                               {params_.data() + L.log_std, static_cast<std::size_t>(A)});
          buf_.values[s] = v[i];
        }
      });
      const auto& res = train_.step(actions, pool_);
      ++control_steps_;
      env_steps_ += N;

      std::vector<std::size_t> trunc_envs;
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t s = t * N + i;
        buf_.rewards[s] = res.rewards[i];
        buf_.terminated[s] = res.terminated[i];
        buf_.truncated[s] = res.truncated[i];
        if (res.done(i)) {
          ++m.train_episodes;
          ret_sum += res.episode_return[i];
          bounce_sum += res.bounces[i];
          switch_sum += res.switches[i];
        }
        if (res.truncated[i]) trunc_envs.push_back(i);
      }
      if (!trunc_envs.empty()) {
        std::vector<double> fin(trunc_envs.size() * W), fin_n(fin.size());
        for (std::size_t k = 0; k < trunc_envs.size(); ++k)
          std::copy_n(res.final_observations.begin() + trunc_envs[k] * W, W, fin.begin() + k * W);
        normalize(fin, fin_n);
        std::vector<double> fmu(trunc_envs.size() * A), fv(trunc_envs.size());
        batch_policy_value(params_, L, spec_, fin_n, trunc_envs.size(), fmu, fv, pool_);
        for (std::size_t k = 0; k < trunc_envs.size(); ++k)
          buf_.truncation_values[t * N + trunc_envs[k]] = fv[k];
      }
      if (P > 0) {
        const auto next = train_.observations();
        const int off = (train_.stack_k() - 1) * train_.frame_width() + train_.proprio_offset();
        std::vector<double> row(W);
        for (std::size_t i = 0; i < N; ++i) {
          const std::size_t s = t * N + i;
          buf_.aux_mask[s] = !res.done(i);
          if (!buf_.aux_mask[s]) continue;
          normalize(next.subspan(i * W, W), row);
          std::copy_n(row.begin() + off, P, buf_.aux_target.begin() + s * P);
        }
      }
    }
    {
      std::vector<double> last(N * W);
      normalize(train_.observations(), last);
      batch_policy_value(params_, L, spec_, last, N, mu, buf_.last_values, pool_);
    }
    m.update = ppo_update(buf_, params_, spec_, adam_, lr_, cfg_.hp, cfg_.seed, iteration_, pool_);
    ++iteration_;
    m.iteration = iteration_;
    m.env_steps = env_steps_;
    if (m.train_episodes > 0) {
      m.train_return = ret_sum / m.train_episodes;
      m.train_bounces = bounce_sum / m.train_episodes;
      m.train_switches = switch_sum / m.train_episodes;
    }
    if (env_steps_ >= next_eval_ || done()) {
      m.eval = evaluate(cfg_.eval_episodes);
      eval_history_.push_back({env_steps_, m.eval->mean_return});
      while (next_eval_ <= env_steps_) next_eval_ += std::max<std::uint64_t>(cfg_.eval_interval, 1);
    }
    return m;
  }

  std::string serialize_state() const {
    BinaryWriter w;
    w.put(params_);
    norm_.write(w);
    adam_.write(w);
    w.put(lr_);
    w.put(iteration_);
    w.put(env_steps_);
    w.put(control_steps_);
    w.put(next_eval_);
    w.put(eval_history_);
    train_.write(w);
    eval_.write(w);
    return w.take();
  }

  void restore_state(std::string_view bytes) {
    BinaryReader r(bytes);
    r.get_into(params_);
    norm_.read(r);
    adam_.read(r);
    lr_ = r.get<double>();
    iteration_ = r.get<std::uint64_t>();
    env_steps_ = r.get<std::uint64_t>();
    control_steps_ = r.get<std::uint64_t>();
    next_eval_ = r.get<std::uint64_t>();
    eval_history_ = r.get_vector<EvalPoint>();
    train_.read(r);
    eval_.read(r);
    if (!r.done()) throw FormatError("trailing bytes in trainer state");
  }

  std::uint64_t digest() const {
    Digest d;
    d.add(params_);
    norm_.hash_into(d);
    train_.hash_into(d);
    eval_.hash_into(d);
    return d.value();
  }

 private:
  const ParamLayout& layout() {
    if (!layout_) layout_ = std::make_unique<ParamLayout>(spec_);
    return *layout_;
  }

  TrainerConfig cfg_;
  ThreadPool pool_;
  HandEnv train_;
  HandEnv eval_;
  NetworkSpec spec_;
  std::unique_ptr<ParamLayout> layout_;
  std::vector<double> params_;
  Adam adam_;
  RunningNorm norm_;
  double lr_ = 0.0;
  RolloutBuffer buf_;
  std::uint64_t iteration_ = 0;
  std::uint64_t env_steps_ = 0;
  std::uint64_t control_steps_ = 0;
  std::uint64_t next_eval_ = 0;
  std::vector<EvalPoint> eval_history_;
  std::vector<double> scratch_obs_, scratch_v_;
};

}  // namespace tacbench
