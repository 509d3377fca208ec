#pragma once

// Subcommands behind the `tacbench` executable. Each returns a process exit
// code: 0 ok, 1 runtime failure, 2 config or usage error.

#include <fcntl.h>
#include <signal.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <cinttypes>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tacbench/checkpoint.hpp"
#include "tacbench/config.hpp"
#include "tacbench/env.hpp"
#include "tacbench/ppo.hpp"
#include "tacbench/sweep.hpp"
#include "tacbench/tap_env.hpp"

namespace tacbench::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct RunOptions {
  std::string config_path;
  std::string preset;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<std::size_t> threads;
  bool resume = false;
  bool print_config = false;
};

/// Preset and file combined, then command-line overrides on top.
inline RunConfig resolve_config(const RunOptions& o) {
  RunConfig c;
  if (!o.config_path.empty()) {
    c = load_run_config_file(o.config_path, o.preset);
  } else if (!o.preset.empty()) {
    c = load_run_config("", "--preset", o.preset);
  } else {
    throw ConfigDiagnostic("<command line>", 0, "--config", "one of --config or --preset is required");
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = o.out;
  if (o.threads) c.threads = *o.threads;
  return c;
}

/// Config text with the fields that may legitimately differ between a run
/// and its resumption blanked out.
inline std::string comparable_config(RunConfig c) {
  c.threads = 0;
  c.output_dir.clear();
  return run_config_to_yaml(c);
}

// ---------------------------------------------------------------------------
// Output directory ownership.

class DirectoryLock {
 public:
  explicit DirectoryLock(const fs::path& dir) : path_(dir / ".tacbench.lock") {
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        held_ = true;
        return;
      }
      long owner = 0;
      std::ifstream(path_) >> owner;
      if (owner > 0 && owner != ::getpid() && ::kill(static_cast<pid_t>(owner), 0) == 0)
        throw std::runtime_error("output directory " + dir.string() + " is locked by running process " +
                                 std::to_string(owner));
      fs::remove(path_);  // stale
    }
    throw std::runtime_error("cannot lock output directory " + dir.string());
  }
  DirectoryLock(const DirectoryLock&) = delete;
  DirectoryLock& operator=(const DirectoryLock&) = delete;
  ~DirectoryLock() {
    if (held_) {
      std::error_code ec;
      fs::remove(path_, ec);
    }
  }

 private:
  fs::path path_;
  bool held_ = false;
};

// ---------------------------------------------------------------------------
// Interrupt handling: the first SIGINT/SIGTERM asks the loop to stop at the
// next iteration boundary.

/// Thrown out of a sweep objective on interrupt. Deliberately not a
/// std::exception so the sweep loop does not record it as a failed trial.
struct Interrupted {};

inline std::atomic<bool>& stop_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}

extern "C" inline void tacbench_on_signal(int) { stop_flag().store(true); }

class SignalScope {
 public:
  SignalScope() {
    stop_flag().store(false);
    struct sigaction sa{};
    sa.sa_handler = tacbench_on_signal;
    sigemptyset(&sa.sa_mask);
    ::sigaction(SIGINT, &sa, &old_int_);
    ::sigaction(SIGTERM, &sa, &old_term_);
  }
  ~SignalScope() {
    ::sigaction(SIGINT, &old_int_, nullptr);
    ::sigaction(SIGTERM, &old_term_, nullptr);
  }

 private:
  struct sigaction old_int_{};
  struct sigaction old_term_{};
};

// ---------------------------------------------------------------------------
// Line-delimited records.

/// Parses a JSONL file, dropping a final line that does not parse.
inline std::vector<json> read_jsonl(const fs::path& path) {
  std::vector<json> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      break;
    }
  }
  return out;
}

/// Keeps the records with iteration <= `last`, rewriting atomically.
inline void truncate_jsonl(const fs::path& path, std::uint64_t last) {
  if (!fs::exists(path)) return;
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& j : read_jsonl(path))
      if (j.value("iteration", std::uint64_t{0}) <= last) out << j.dump() << '\n';
  }
  fs::rename(tmp, path);
}

inline void append_line(std::ofstream& out, const json& j) {
  out << j.dump() << '\n';
  out.flush();
}

inline void write_text(const fs::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    out << text;
  }
  fs::rename(tmp, path);
}

inline json metrics_record(const IterationMetrics& m, TaskKind task, bool aux) {
  const bool bounce = task == TaskKind::kBounce;
  json j;
  j["iteration"] = m.iteration;
  j["env_steps"] = m.env_steps;
  j["train_episodes"] = m.train_episodes;
  j["train_return"] = m.train_return ? json(*m.train_return) : json(nullptr);
  if (bounce) {
    j["train_bounces"] = m.train_bounces ? json(*m.train_bounces) : json(nullptr);
  } else {
    j["train_switches"] = m.train_switches ? json(*m.train_switches) : json(nullptr);
    j["train_rotations"] = m.train_switches ? json(0.5 * *m.train_switches) : json(nullptr);
  }
  if (m.eval) {
    j["eval_return"] = m.eval->mean_return;
    j["eval_return_std"] = m.eval->std_return;
    j["eval_episodes"] = m.eval->episodes;
    if (bounce) {
      j["eval_bounces"] = m.eval->mean_bounces;
    } else {
      j["eval_switches"] = m.eval->mean_switches;
      j["eval_rotations"] = m.eval->mean_rotations();
    }
  }
  const auto& u = m.update;
  j["policy_loss"] = u.loss.policy_loss;
  j["value_loss"] = u.loss.value_loss;
  j["entropy"] = u.loss.entropy;
  j["approx_kl"] = u.loss.approx_kl;
  j["clip_fraction"] = u.loss.clip_fraction;
  if (aux) j["aux_loss"] = u.loss.aux_loss;
  j["learning_rate"] = u.learning_rate;
  j["grad_norm"] = u.grad_norm;
  j["samples"] = u.samples;
  j["rolled_back"] = u.rolled_back;
  return j;
}

inline Checkpoint trainer_checkpoint(const RunConfig& c, const Trainer& t) {
  return {kPolicyPpo, run_config_to_yaml(c), t.serialize_state()};
}

/// Checkpoint of the scripted Bounce oracle; evaluates on the physics-free
/// tap environment.
inline Checkpoint oracle_checkpoint(const RunConfig& c) {
  return {kPolicyScriptedBounceOracle, run_config_to_yaml(c), ""};
}

// ---------------------------------------------------------------------------
// train

struct TrainHooks {
  std::function<void(const Trainer&, const IterationMetrics&)> on_iteration;
};

inline int cmd_train(const RunOptions& opts, std::ostream& out, std::ostream& err,
                     const TrainHooks& hooks = {}) {
  const RunConfig cfg = resolve_config(opts);
  if (opts.print_config) {
    out << run_config_to_yaml(cfg);
    return kExitOk;
  }
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  DirectoryLock lock(dir);
  const fs::path ckpt_path = dir / "checkpoint.bin";
  const fs::path metrics_path = dir / "metrics.jsonl";
  const fs::path timing_path = dir / "timing.jsonl";
  const fs::path config_path = dir / "config.yaml";

  Trainer trainer(to_trainer_config(cfg));
  if (fs::exists(ckpt_path) || fs::exists(metrics_path)) {
    if (!opts.resume)
      throw std::runtime_error("output directory " + dir.string() +
                               " already holds a run; pass --resume to continue it");
  }
  if (opts.resume && fs::exists(ckpt_path)) {
    const auto ck = read_checkpoint(ckpt_path);
    if (ck.policy_kind != kPolicyPpo)
      throw FormatError("checkpoint policy kind '" + ck.policy_kind + "' cannot be trained");
    const auto saved = load_run_config(ck.config_yaml, ckpt_path.string() + " (embedded config)");
    if (comparable_config(saved) != comparable_config(cfg))
      throw ConfigDiagnostic(opts.config_path.empty() ? "--preset" : opts.config_path, 0, "<config>",
                             "differs from the config stored in " + ckpt_path.string());
    trainer.restore_state(ck.payload);
    out << "resumed at iteration " << trainer.iteration() << ", " << trainer.env_steps()
        << " env-steps\n";
  }
  truncate_jsonl(metrics_path, trainer.iteration());
  truncate_jsonl(timing_path, trainer.iteration());
  write_text(config_path, run_config_to_yaml(cfg));

  std::ofstream metrics(metrics_path, std::ios::app);
  std::ofstream timing(timing_path, std::ios::app);
  fs::create_directories(dir / "checkpoints");
  SignalScope signals;
  const auto t0 = std::chrono::steady_clock::now();
  std::uint64_t next_ckpt =
      cfg.checkpoint_interval > 0
          ? (trainer.env_steps() / cfg.checkpoint_interval + 1) * cfg.checkpoint_interval
          : UINT64_MAX;
  const bool aux = cfg.network.aux_head;

  while (!trainer.done() && !stop_flag().load()) {
    const auto it0 = std::chrono::steady_clock::now();
    const auto m = trainer.iterate();
    const auto it1 = std::chrono::steady_clock::now();
    append_line(metrics, metrics_record(m, cfg.env.task, aux));
    const double it_s = std::chrono::duration<double>(it1 - it0).count();
    append_line(timing, {{"iteration", m.iteration},
                         {"env_steps", m.env_steps},
                         {"wall_s", std::chrono::duration<double>(it1 - t0).count()},
                         {"iteration_s", it_s},
                         {"env_steps_per_s", it_s > 0 ? cfg.env.n_train * cfg.ppo.rollout_horizon / it_s : 0.0}});
    if (m.update.rolled_back)
      err << "warning: iteration " << m.iteration
          << ": non-finite loss or gradient, update rolled back\n";
    if (m.eval) {
      out << "iter " << m.iteration << "  env-steps " << m.env_steps << "  eval return "
          << m.eval->mean_return << "\n";
    }
    if (trainer.env_steps() >= next_ckpt) {
      char name[64];
      std::snprintf(name, sizeof name, "step_%012" PRIu64 ".bin", trainer.env_steps());
      const auto ck = trainer_checkpoint(cfg, trainer);
      write_checkpoint(dir / "checkpoints" / name, ck);
      write_checkpoint(ckpt_path, ck);
      while (next_ckpt <= trainer.env_steps()) next_ckpt += cfg.checkpoint_interval;
    }
    if (hooks.on_iteration) hooks.on_iteration(trainer, m);
  }
  write_checkpoint(ckpt_path, trainer_checkpoint(cfg, trainer));
  if (stop_flag().load() && !trainer.done()) {
    err << "interrupted at iteration " << trainer.iteration() << "; checkpoint written to "
        << ckpt_path.string() << "\n";
    return kExitFailure;
  }
  out << "done: " << trainer.env_steps() << " env-steps, checkpoint " << ckpt_path.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

inline void print_report(std::ostream& out, const EvalReport& r, TaskKind task) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "episodes: %d\nreturn: %.3f +- %.3f\n", r.episodes, r.mean_return,
                r.std_return);
  out << buf;
  if (task == TaskKind::kBounce) {
    std::snprintf(buf, sizeof buf, "bounces: %.3f\n", r.mean_bounces);
  } else {
    std::snprintf(buf, sizeof buf, "switches: %.3f\nrotations: %.3f\n", r.mean_switches,
                  r.mean_rotations());
  }
  out << buf;
}

inline int cmd_eval(const fs::path& checkpoint, int n_episodes, std::optional<std::size_t> threads,
                    std::ostream& out, EvalReport* report = nullptr) {
  if (n_episodes < 1) throw CLI::ValidationError("--episodes", "must be at least 1");
  const auto ck = read_checkpoint(checkpoint);
  RunConfig cfg = load_run_config(ck.config_yaml, checkpoint.string() + " (embedded config)");
  if (threads) cfg.threads = *threads;
  EvalReport r;
  if (ck.policy_kind == kPolicyPpo) {
    Trainer trainer(to_trainer_config(cfg));
    trainer.restore_state(ck.payload);
    r = trainer.evaluate(n_episodes);
  } else if (ck.policy_kind == kPolicyScriptedBounceOracle) {
    if (cfg.env.task != TaskKind::kBounce)
      throw FormatError("scripted bounce oracle checkpoint must use the bounce task");
    ThreadPool pool(1);
    TapEnv env(cfg.env.n_eval, to_trainer_config(cfg).task);
    r = evaluate_policy(env, pool, ScriptedBounceOracle{}, n_episodes);
  } else {
    throw FormatError("unknown policy kind '" + ck.policy_kind + "'");
  }
  print_report(out, r, cfg.env.task);
  if (report) *report = r;
  return kExitOk;
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
  std::size_t threads = 0;
  double seconds = 0.0;
  double control_steps_per_s = 0.0;
  double substeps_per_s = 0.0;
  std::uint64_t digest = 0;
};

/// Steps a fresh batch with a fixed random policy for each thread count.
inline std::vector<BenchRow> run_bench(const RunConfig& cfg, const std::vector<std::size_t>& counts) {
  const auto tc = to_trainer_config(cfg);
  const std::size_t N = cfg.bench.n_envs;
  const int steps = cfg.bench.steps;
  const int A = tc.morphology.n_actions;
  std::vector<double> actions(static_cast<std::size_t>(steps) * N * A);
  for (int s = 0; s < steps; ++s)
    for (std::size_t i = 0; i < N; ++i) {
      CounterRng rng(cfg.seed, StreamDomain::kBench, static_cast<std::uint32_t>(i), s);
      for (int a = 0; a < A; ++a) actions[(s * N + i) * A + a] = rng.uniform(-1.0, 1.0);
    }
  std::vector<BenchRow> rows;
  for (std::size_t n : counts) {
    ThreadPool pool(n);
    HandEnv env(tc.morphology, tc.physics, tc.task, tc.observation_mode, tc.stack_k, N, cfg.seed,
                StreamDomain::kTrainReset);
    const auto t0 = std::chrono::steady_clock::now();
    for (int s = 0; s < steps; ++s)
      env.step(std::span<const double>(actions.data() + s * N * A, N * A), pool);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    BenchRow row;
    row.threads = n;
    row.seconds = sec;
    row.control_steps_per_s = static_cast<double>(N) * steps / sec;
    row.substeps_per_s = row.control_steps_per_s * tc.physics.substeps_per_control;
    row.digest = env.digest();
    rows.push_back(row);
  }
  return rows;
}

inline std::vector<std::size_t> bench_thread_counts(std::size_t max_threads) {
  if (const auto cap = thread_cap_from_env(); cap > 0) max_threads = std::min(max_threads, cap);
  std::vector<std::size_t> out;
  for (std::size_t n = 1; n < max_threads; n *= 2) out.push_back(n);
  out.push_back(std::max<std::size_t>(1, max_threads));
  return out;
}

inline int cmd_bench(const RunOptions& opts, std::ostream& out, std::ostream& err,
                     std::vector<BenchRow>* result = nullptr) {
  RunConfig cfg = resolve_config(opts);
  if (opts.print_config) {
    out << run_config_to_yaml(cfg);
    return kExitOk;
  }
  const std::size_t max_threads = opts.threads ? *opts.threads : cfg.bench.max_threads;
  const auto rows = run_bench(cfg, bench_thread_counts(max_threads));
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-8s %16s %16s %9s  %s\n", "threads", "control-steps/s",
                "substeps/s", "speedup", "digest");
  out << buf;
  bool same = true;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-8zu %16.0f %16.0f %9.2f  %016" PRIx64 "\n", r.threads,
                  r.control_steps_per_s, r.substeps_per_s,
                  r.control_steps_per_s / rows.front().control_steps_per_s, r.digest);
    out << buf;
    same = same && r.digest == rows.front().digest;
  }
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    DirectoryLock lock(opts.out);
    std::ofstream f(fs::path(opts.out) / "bench.jsonl", std::ios::app);
    for (const auto& r : rows) {
      char hex[17];
      std::snprintf(hex, sizeof hex, "%016" PRIx64, r.digest);
      append_line(f, {{"morphology", cfg.env.morphology},
                      {"n_envs", cfg.bench.n_envs},
                      {"steps", cfg.bench.steps},
                      {"threads", r.threads},
                      {"control_steps_per_s", r.control_steps_per_s},
                      {"substeps_per_s", r.substeps_per_s},
                      {"digest", hex}});
    }
  }
  if (result) *result = rows;
  if (!same) {
    err << "determinism violation: final state digest differs across thread counts\n";
    return kExitFailure;
  }
  out << "final state identical across all thread counts\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// sweep

/// Mean of the evaluations taken in the last tenth of the budget; one extra
/// evaluation when none fell there.
inline double sweep_objective(const RunConfig& base, const std::vector<double>& values,
                              std::uint64_t seed) {
  RunConfig c = base;
  apply_sweep_params(c.sweep.space, values, c.ppo);
  if (auto v = c.ppo.validate(c.env.n_train); !v.empty()) throw ConfigError(v.front());
  c.seed = seed;
  c.total_env_steps = c.sweep.budget_steps_per_trial;
  Trainer trainer(to_trainer_config(c));
  while (!trainer.done()) {
    if (stop_flag().load()) throw Interrupted{};
    trainer.iterate();
  }
  const double tail = 0.9 * static_cast<double>(c.total_env_steps);
  double sum = 0.0;
  int n = 0;
  for (const auto& p : trainer.eval_history())
    if (static_cast<double>(p.env_steps) >= tail) {
      sum += p.mean_return;
      ++n;
    }
  return n > 0 ? sum / n : trainer.evaluate(c.eval_episodes).mean_return;
}

inline int cmd_sweep(const RunOptions& opts, std::ostream& out, std::ostream& err,
                     const TrialObjective& objective_override = {}) {
  const RunConfig cfg = resolve_config(opts);
  if (opts.print_config) {
    out << run_config_to_yaml(cfg);
    return kExitOk;
  }
  const fs::path dir = cfg.output_dir;
  fs::create_directories(dir);
  DirectoryLock lock(dir);
  const fs::path config_path = dir / "config.yaml";
  if (fs::exists(config_path)) {
    const auto saved = load_run_config(read_text_file(config_path), config_path.string());
    if (comparable_config(saved) != comparable_config(cfg))
      throw ConfigDiagnostic(config_path.string(), 0, "<config>",
                             "sweep directory was started with a different config");
  } else {
    write_text(config_path, run_config_to_yaml(cfg));
  }
  SignalScope signals;
  const TrialObjective objective =
      objective_override ? objective_override
                         : TrialObjective([&](const std::vector<double>& v, std::uint64_t s) {
                             return sweep_objective(cfg, v, s);
                           });
  try {
    run_sweep(
        cfg.sweep, cfg.seed,
        [&](const std::vector<double>& v, std::uint64_t s) {
          if (stop_flag().load()) throw Interrupted{};
          return objective(v, s);
        },
        dir / "history.jsonl",
        [&](const TrialRecord& t) {
          out << "trial " << t.index << (t.warmup ? " (warm-up)" : "") << ": ";
          if (t.objective) out << *t.objective;
          else out << "failed (" << t.error << ")";
          out << "\n";
        });
  } catch (const Interrupted&) {
    err << "interrupted; completed trials are saved in " << (dir / "history.jsonl").string() << "\n";
    return kExitFailure;
  }
  const auto all = load_history(dir / "history.jsonl", cfg.sweep.space);
  if (const auto best = best_trial(all)) {
    out << "best trial " << best->index << ": objective " << *best->objective << "\n";
    for (std::size_t d = 0; d < cfg.sweep.space.dims.size(); ++d)
      out << "  " << cfg.sweep.space.dims[d].name << ": " << best->params[d] << "\n";
  } else {
    err << "no successful trial\n";
    return kExitFailure;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point.

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"tacbench: tactile in-hand manipulation benchmark"};
  app.require_subcommand(1);
  RunOptions opts;
  auto add_run_flags = [&](CLI::App* sub) {
    sub->add_option("-c,--config", opts.config_path, "Run config file (YAML)");
    sub->add_option("-p,--preset", opts.preset, "Builtin preset used as the base config");
    sub->add_option("--seed", opts.seed, "Override the run seed");
    sub->add_option("-o,--out", opts.out, "Override the output directory");
    sub->add_option("-t,--threads", opts.threads, "Worker threads (0 = all cores)");
    sub->add_flag("--print-config", opts.print_config, "Print the resolved config and exit");
  };
  auto* train = app.add_subcommand("train", "Train a PPO policy");
  add_run_flags(train);
  train->add_flag("--resume", opts.resume, "Continue from the checkpoint in the output directory");
  auto* sweep = app.add_subcommand("sweep", "Hyperparameter sweep over PPO settings");
  add_run_flags(sweep);
  auto* bench = app.add_subcommand("bench", "Environment throughput and determinism check");
  add_run_flags(bench);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string ckpt;
  int episodes = 100;
  std::optional<std::size_t> eval_threads;
  eval->add_option("checkpoint", ckpt, "Checkpoint file")->required();
  eval->add_option("-n,--episodes", episodes, "Number of deterministic episodes");
  eval->add_option("-t,--threads", eval_threads, "Worker threads (0 = all cores)");
  auto* presets = app.add_subcommand("presets", "List builtin presets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }
  try {
    if (*train) return cmd_train(opts, out, err);
    if (*sweep) return cmd_sweep(opts, out, err);
    if (*bench) return cmd_bench(opts, out, err);
    if (*eval) return cmd_eval(ckpt, episodes, eval_threads, out);
    if (*presets) {
      for (const auto& n : preset_names()) out << n << "\n";
      return kExitOk;
    }
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitConfig;
}

inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  std::vector<const char*> argv{"tacbench"};
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data(), out, err);
}

}  // namespace tacbench::cli
