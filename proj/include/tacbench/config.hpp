#pragma once

// Run configuration: YAML load/dump with line-numbered diagnostics, named
// presets, and morphology definition files.

#include <yaml-cpp/yaml.h>

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tacbench/env.hpp"
#include "tacbench/morphology.hpp"
#include "tacbench/physics.hpp"
#include "tacbench/ppo.hpp"
#include "tacbench/sweep.hpp"
#include "tacbench/tasks.hpp"

namespace tacbench {

/// Config problem with a location, formatted "source:line: field: message".
class ConfigDiagnostic : public ConfigError {
 public:
  ConfigDiagnostic(const std::string& source, int line, const std::string& field,
                   const std::string& message)
      : ConfigError(format(source, line, field, message)), line_(line), field_(field) {}

  int line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  static std::string format(const std::string& source, int line, const std::string& field,
                            const std::string& message) {
    std::string s = source.empty() ? "<config>" : source;
    if (line > 0) s += ":" + std::to_string(line);
    return s + ": " + field + ": " + message;
  }
  int line_;
  std::string field_;
};

struct NetworkConfig {
  std::vector<int> hidden = {256, 256};
  double init_log_std = -0.5;
  bool aux_head = false;
  int aux_hidden = 64;
};

struct BenchConfig {
  std::size_t n_envs = 1024;
  int steps = 200;
  std::size_t max_threads = 8;
};

struct RunConfig {
  std::string name = "custom";
  std::uint64_t seed = 0;
  std::string output_dir = "runs/custom";
  std::uint64_t total_env_steps = 5'000'000;
  std::uint64_t eval_interval = 250'000;
  int eval_episodes = 100;
  std::uint64_t checkpoint_interval = 1'000'000;
  std::size_t threads = 0;
  EnvBatchConfig env;
  std::optional<MorphologyConfig> morphology_def;  // overrides env.morphology
  PhysicsConfig physics;
  TaskConfig task;
  bool auto_targets = true;  // Baoding targets derived from the hand
  NetworkConfig network;
  PPOHyperparams ppo;
  SweepConfig sweep;
  BenchConfig bench;
};

// ---------------------------------------------------------------------------
// Morphology files.

namespace detail {

/// Shortest text that reads back to the same double.
inline YAML::Node num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, r.ptr);
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return YAML::Node(s);
}

inline YAML::Node vec3_node(const Eigen::Vector3d& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (int i = 0; i < 3; ++i) n.push_back(num(v[i]));
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

template <class T>
YAML::Node flow_seq(const std::vector<T>& v) {
  YAML::Node n(YAML::NodeType::Sequence);
  for (const auto& x : v) {
    if constexpr (std::is_floating_point_v<T>) {
      n.push_back(num(x));
    } else {
      n.push_back(x);
    }
  }
  n.SetStyle(YAML::EmitterStyle::Flow);
  return n;
}

/// Typed access with location-aware errors. Records the line of every field
/// read so later semantic checks can point back into the source.
class Reader {
 public:
  explicit Reader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& field,
                         const std::string& msg) const {
    const int line = n.IsDefined() && n.Mark().line >= 0 ? n.Mark().line + 1 : line_of(field);
    throw ConfigDiagnostic(source_, line, field, msg);
  }

  [[noreturn]] void fail_field(const std::string& field, const std::string& msg) const {
    throw ConfigDiagnostic(source_, line_of(field), field, msg);
  }

  int line_of(const std::string& field) const {
    for (std::string f = field; !f.empty();) {
      if (auto it = lines_.find(f); it != lines_.end()) return it->second;
      if (f.back() == ']') {
        f.resize(f.rfind('['));
        continue;
      }
      const auto dot = f.rfind('.');
      if (dot == std::string::npos) break;
      f.resize(dot);
    }
    return 0;
  }

  void require_map(const YAML::Node& n, const std::string& path) const {
    if (!n.IsMap()) fail(n, path.empty() ? "<root>" : path, "expected a mapping");
  }

  void check_keys(const YAML::Node& n, const std::string& path,
                  const std::vector<std::string>& allowed) {
    require_map(n, path);
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      const std::string field = path.empty() ? key : path + "." + key;
      lines_[field] = kv.first.Mark().line + 1;
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
        fail(kv.first, field, "unknown field");
    }
  }

  template <class T>
  T as(const YAML::Node& n, const std::string& field) const {
    try {
      return n.as<T>();
    } catch (const YAML::Exception&) {
      fail(n, field, std::string("expected ") + type_name<T>());
    }
  }

  template <class T>
  bool get(const YAML::Node& parent, const std::string& key, const std::string& path, T& out) {
    const auto n = parent[key];
    if (!n.IsDefined() || n.IsNull()) return false;
    out = as<T>(n, path.empty() ? key : path + "." + key);
    return true;
  }

  bool get_vec3(const YAML::Node& parent, const std::string& key, const std::string& path,
                Eigen::Vector3d& out) {
    const auto n = parent[key];
    if (!n.IsDefined()) return false;
    const std::string field = path + "." + key;
    if (!n.IsSequence() || n.size() != 3) fail(n, field, "expected a list of 3 numbers");
    for (int i = 0; i < 3; ++i) out[i] = as<double>(n[i], field);
    return true;
  }

  const std::string& source() const { return source_; }

 private:
  template <class T>
  static const char* type_name() {
    if constexpr (std::is_same_v<T, bool>) return "true or false";
    if constexpr (std::is_integral_v<T>) return "an integer";
    if constexpr (std::is_floating_point_v<T>) return "a number";
    if constexpr (std::is_same_v<T, std::string>) return "a string";
    return "a list of numbers";
  }

  std::string source_;
  std::map<std::string, int> lines_;
};

}  // namespace detail

inline YAML::Node morphology_to_node(const MorphologyConfig& m) {
  YAML::Node n;
  n["name"] = m.name;
  n["n_joints"] = m.n_joints;
  n["n_actions"] = m.n_actions;
  n["n_tactile"] = m.n_tactile;
  YAML::Node w;
  w["tactile"] = m.obs_block_widths.tactile;
  w["joint_pos"] = m.obs_block_widths.joint_pos;
  w["joint_vel"] = m.obs_block_widths.joint_vel;
  w["cmd_error"] = m.obs_block_widths.cmd_error;
  w["last_action"] = m.obs_block_widths.last_action;
  n["obs_block_widths"] = w;
  n["ball_radius"] = detail::num(m.ball_radius);
  YAML::Node coupling(YAML::NodeType::Sequence);
  for (int j = 0; j < m.coupling.rows(); ++j) {
    std::vector<double> row(m.coupling.cols());
    for (int a = 0; a < m.coupling.cols(); ++a) row[a] = m.coupling(j, a);
    coupling.push_back(detail::flow_seq(row));
  }
  n["coupling"] = coupling;
  YAML::Node limits(YAML::NodeType::Sequence);
  for (const auto& l : m.joint_limits) limits.push_back(detail::flow_seq(std::vector<double>{l.lo, l.hi}));
  n["joint_limits"] = limits;
  n["action_scale"] = detail::flow_seq(m.action_scale);
  YAML::Node links(YAML::NodeType::Sequence);
  for (const auto& l : m.links) {
    YAML::Node ln;
    ln["name"] = l.name;
    ln["parent"] = l.parent;
    ln["joint"] = l.joint;
    ln["offset"] = detail::vec3_node(l.offset);
    ln["rpy"] = detail::vec3_node(l.rpy);
    ln["axis"] = detail::vec3_node(l.axis);
    ln["sensor"] = l.sensor;
    YAML::Node caps(YAML::NodeType::Sequence);
    for (const auto& c : l.capsules) {
      YAML::Node cn;
      cn["p0"] = detail::vec3_node(c.p0);
      cn["p1"] = detail::vec3_node(c.p1);
      cn["radius"] = detail::num(c.radius);
      cn.SetStyle(YAML::EmitterStyle::Flow);
      caps.push_back(cn);
    }
    ln["capsules"] = caps;
    links.push_back(ln);
  }
  n["links"] = links;
  return n;
}

inline MorphologyConfig morphology_from_node(const YAML::Node& n, detail::Reader& r,
                                             const std::string& path) {
  r.check_keys(n, path,
               {"name", "n_joints", "n_actions", "n_tactile", "obs_block_widths", "ball_radius",
                "coupling", "joint_limits", "action_scale", "links"});
  auto f = [&](const std::string& k) { return path.empty() ? k : path + "." + k; };
  auto need = [&](const std::string& k) {
    if (!n[k].IsDefined()) r.fail(n, f(k), "missing required field");
    return n[k];
  };
  MorphologyConfig m;
  m.name = r.as<std::string>(need("name"), f("name"));
  m.n_joints = r.as<int>(need("n_joints"), f("n_joints"));
  m.n_actions = r.as<int>(need("n_actions"), f("n_actions"));
  m.n_tactile = r.as<int>(need("n_tactile"), f("n_tactile"));
  r.get(n, "ball_radius", path, m.ball_radius);
  const auto w = need("obs_block_widths");
  const std::string wp = f("obs_block_widths");
  r.check_keys(w, wp, {"tactile", "joint_pos", "joint_vel", "cmd_error", "last_action"});
  r.get(w, "tactile", wp, m.obs_block_widths.tactile);
  r.get(w, "joint_pos", wp, m.obs_block_widths.joint_pos);
  r.get(w, "joint_vel", wp, m.obs_block_widths.joint_vel);
  r.get(w, "cmd_error", wp, m.obs_block_widths.cmd_error);
  r.get(w, "last_action", wp, m.obs_block_widths.last_action);

  const auto c = need("coupling");
  if (!c.IsSequence() || static_cast<int>(c.size()) != m.n_joints)
    r.fail(c, f("coupling"), "expected n_joints rows");
  m.coupling = Eigen::MatrixXd::Zero(m.n_joints, m.n_actions);
  for (int j = 0; j < m.n_joints; ++j) {
    const auto row = r.as<std::vector<double>>(c[j], f("coupling"));
    if (static_cast<int>(row.size()) != m.n_actions)
      r.fail(c[j], f("coupling"), "expected n_actions entries per row");
    for (int a = 0; a < m.n_actions; ++a) m.coupling(j, a) = row[a];
  }
  const auto lim = need("joint_limits");
  if (!lim.IsSequence()) r.fail(lim, f("joint_limits"), "expected a list of [lo, hi] pairs");
  for (const auto& l : lim) {
    const auto pair = r.as<std::vector<double>>(l, f("joint_limits"));
    if (pair.size() != 2) r.fail(l, f("joint_limits"), "expected [lo, hi]");
    m.joint_limits.push_back({pair[0], pair[1]});
  }
  if (n["action_scale"].IsDefined()) {
    m.action_scale = r.as<std::vector<double>>(n["action_scale"], f("action_scale"));
  } else {
    for (const auto& l : m.joint_limits) m.action_scale.push_back(0.5 * (l.hi - l.lo));
  }
  const auto links = need("links");
  if (!links.IsSequence()) r.fail(links, f("links"), "expected a list");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto ln = links[i];
    const std::string lp = f("links[" + std::to_string(i) + "]");
    r.check_keys(ln, lp, {"name", "parent", "joint", "offset", "rpy", "axis", "sensor", "capsules"});
    LinkSpec l;
    r.get(ln, "name", lp, l.name);
    r.get(ln, "parent", lp, l.parent);
    r.get(ln, "joint", lp, l.joint);
    r.get_vec3(ln, "offset", lp, l.offset);
    r.get_vec3(ln, "rpy", lp, l.rpy);
    r.get_vec3(ln, "axis", lp, l.axis);
    r.get(ln, "sensor", lp, l.sensor);
    if (ln["capsules"].IsDefined()) {
      for (const auto& cn : ln["capsules"]) {
        const std::string cp = lp + ".capsules";
        r.check_keys(cn, cp, {"p0", "p1", "radius"});
        CapsuleSpec cap;
        r.get_vec3(cn, "p0", cp, cap.p0);
        r.get_vec3(cn, "p1", cp, cap.p1);
        r.get(cn, "radius", cp, cap.radius);
        l.capsules.push_back(cap);
      }
    }
    m.links.push_back(std::move(l));
  }
  return m;
}

inline std::string emit(const YAML::Node& n) {
  YAML::Emitter out;
  out << n;
  return std::string(out.c_str()) + "\n";
}

inline std::string morphology_to_yaml(const MorphologyConfig& m) {
  return emit(morphology_to_node(m));
}

/// Parses and validates a morphology definition.
inline MorphologyConfig morphology_from_yaml(const std::string& text,
                                             const std::string& source = "<morphology>") {
  detail::Reader r(source);
  YAML::Node n;
  try {
    n = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigDiagnostic(source, e.mark.line + 1, "<syntax>", e.msg);
  }
  auto m = morphology_from_node(n, r, "");
  if (auto v = validate_config(m); !v.empty()) {
    const auto field = v.front().substr(0, v.front().find(':'));
    r.fail_field(field, v.front().substr(v.front().find(':') + 2));
  }
  return m;
}

inline std::string read_text_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Run configs.

inline std::vector<std::string> preset_names() {
  std::vector<std::string> out{"desk_paddle_bounce"};
  for (const char* hand : {"shadow", "shadow_lite", "allegro", "orca"})
    for (const char* task : {"bounce", "baoding"})
      for (const char* mode : {"blind", "state"})
        out.push_back(std::string("paper_") + hand + "_" + task + "_" + mode);
  return out;
}

/// Full-defaults preset by name.
inline std::optional<RunConfig> preset(const std::string& name) {
  RunConfig c;
  c.name = name;
  c.output_dir = "runs/" + name;
  if (name == "desk_paddle_bounce") {
    c.env.morphology = "paddle";
    c.env.task = TaskKind::kBounce;
    c.env.observation_mode = ObservationMode::kState;
    c.env.n_train = 1024;
    c.env.n_eval = 100;
    c.total_env_steps = 5'000'000;
    c.eval_interval = 250'000;
    c.network.hidden = {64, 64};
    c.sweep.budget_steps_per_trial = 500'000;
    return c;
  }
  for (const auto& n : preset_names()) {
    if (n != name) continue;
    // paper_<hand>_<task>_<mode>
    const std::string rest = name.substr(6);
    const auto mode_pos = rest.rfind('_');
    const auto task_pos = rest.rfind('_', mode_pos - 1);
    c.env.morphology = rest.substr(0, task_pos);
    c.env.task = *parse_task(rest.substr(task_pos + 1, mode_pos - task_pos - 1));
    c.env.observation_mode = *parse_observation_mode(rest.substr(mode_pos + 1));
    c.env.n_train = 8092;
    c.env.n_eval = 100;
    c.total_env_steps = 200'000'000;
    c.eval_interval = 2'000'000;
    c.checkpoint_interval = 10'000'000;
    c.ppo.n_minibatches = 4;  // 8092 * 32 / 4
    c.network.hidden = {256, 256};
    c.sweep.budget_steps_per_trial = 20'000'000;
    return c;
  }
  return std::nullopt;
}

inline YAML::Node run_config_to_node(const RunConfig& c) {
  YAML::Node n;
  n["name"] = c.name;
  n["seed"] = c.seed;
  n["output_dir"] = c.output_dir;
  n["total_env_steps"] = c.total_env_steps;
  n["eval_interval"] = c.eval_interval;
  n["eval_episodes"] = c.eval_episodes;
  n["checkpoint_interval"] = c.checkpoint_interval;
  n["threads"] = c.threads;

  YAML::Node env;
  env["morphology"] = c.env.morphology;
  if (c.morphology_def) env["morphology_def"] = morphology_to_node(*c.morphology_def);
  env["task"] = to_string(c.env.task);
  env["observation_mode"] = to_string(c.env.observation_mode);
  env["n_train"] = c.env.n_train;
  env["n_eval"] = c.env.n_eval;
  env["stack_k"] = c.env.stack_k;
  n["env"] = env;

  const auto& p = c.physics;
  YAML::Node ph;
  ph["dt_sim"] = detail::num(p.dt_sim);
  ph["substeps_per_control"] = p.substeps_per_control;
  ph["gravity"] = detail::vec3_node(p.gravity);
  ph["restitution_bounce_ball"] = detail::num(p.restitution_bounce_ball);
  ph["restitution_baoding_ball"] = detail::num(p.restitution_baoding_ball);
  ph["friction_mu"] = detail::num(p.friction_mu);
  ph["bounce_threshold"] = detail::num(p.bounce_threshold);
  ph["pd_kp"] = detail::num(p.pd_kp);
  ph["pd_kd"] = detail::num(p.pd_kd);
  ph["max_joint_torque"] = detail::num(p.max_joint_torque);
  ph["joint_inertia"] = detail::num(p.joint_inertia);
  n["physics"] = ph;

  const auto& t = c.task;
  YAML::Node tk;
  tk["r_bounce"] = detail::num(t.r_bounce);
  tk["r_rotation"] = detail::num(t.r_rotation);
  tk["switch_radius"] = detail::num(t.switch_radius);
  tk["min_gap_steps"] = t.min_gap_steps;
  tk["max_episode_steps"] = t.max_episode_steps;
  tk["dist_weight"] = detail::num(t.dist_weight);
  tk["dist_sharpness"] = detail::num(t.dist_sharpness);
  if (c.auto_targets) {
    tk["target_positions"] = "auto";
  } else {
    YAML::Node tp(YAML::NodeType::Sequence);
    tp.push_back(detail::vec3_node(t.target_positions[0]));
    tp.push_back(detail::vec3_node(t.target_positions[1]));
    tk["target_positions"] = tp;
  }
  tk["out_of_reach_halfextent"] = detail::num(t.out_of_reach_halfextent);
  tk["bounce_spawn_height"] = detail::num(t.bounce_spawn_height);
  tk["bounce_spawn_jitter"] = detail::num(t.bounce_spawn_jitter);
  tk["baoding_spawn_jitter"] = detail::num(t.baoding_spawn_jitter);
  tk["joint_reset_noise"] = detail::num(t.joint_reset_noise);
  n["task"] = tk;

  YAML::Node net;
  net["hidden"] = detail::flow_seq(c.network.hidden);
  net["init_log_std"] = detail::num(c.network.init_log_std);
  net["aux_head"] = c.network.aux_head;
  net["aux_hidden"] = c.network.aux_hidden;
  n["network"] = net;

  const auto& h = c.ppo;
  YAML::Node ppo;
  ppo["learning_rate"] = detail::num(h.learning_rate);
  ppo["gamma"] = detail::num(h.gamma);
  ppo["gae_lambda"] = detail::num(h.gae_lambda);
  ppo["clip_epsilon"] = detail::num(h.clip_epsilon);
  ppo["entropy_coef"] = detail::num(h.entropy_coef);
  ppo["value_coef"] = detail::num(h.value_coef);
  ppo["rollout_horizon"] = h.rollout_horizon;
  ppo["n_epochs"] = h.n_epochs;
  ppo["n_minibatches"] = h.n_minibatches;
  ppo["max_grad_norm"] = detail::num(h.max_grad_norm);
  ppo["kl_target"] = detail::num(h.kl_target);
  ppo["aux_coef"] = detail::num(h.aux_coef);
  ppo["normalize_advantages"] = h.normalize_advantages;
  ppo["clip_gradients"] = h.clip_gradients;
  ppo["normalize_observations"] = h.normalize_observations;
  ppo["lr_min"] = detail::num(h.lr_min);
  ppo["lr_max"] = detail::num(h.lr_max);
  n["ppo"] = ppo;

  const auto& s = c.sweep;
  YAML::Node sw;
  sw["trials"] = s.trials;
  sw["warmup"] = s.warmup;
  sw["good_quantile"] = detail::num(s.good_quantile);
  sw["candidates"] = s.candidates;
  sw["min_bandwidth"] = detail::num(s.min_bandwidth);
  sw["budget_steps_per_trial"] = s.budget_steps_per_trial;
  YAML::Node space;
  for (const auto& d : s.space.dims) {
    YAML::Node dn;
    dn["kind"] = to_string(d.kind);
    if (d.kind == Dimension::Kind::kChoice) {
      YAML::Node ch(YAML::NodeType::Sequence);
      for (double v : d.choices) {
        if (v == std::floor(v) && std::abs(v) < 1e15) {
          ch.push_back(static_cast<long long>(v));
        } else {
          ch.push_back(detail::num(v));
        }
      }
      ch.SetStyle(YAML::EmitterStyle::Flow);
      dn["choices"] = ch;
    } else {
      dn["low"] = detail::num(d.low);
      dn["high"] = detail::num(d.high);
    }
    dn.SetStyle(YAML::EmitterStyle::Flow);
    space[d.name] = dn;
  }
  sw["space"] = space;
  n["sweep"] = sw;

  YAML::Node b;
  b["n_envs"] = c.bench.n_envs;
  b["steps"] = c.bench.steps;
  b["max_threads"] = c.bench.max_threads;
  n["bench"] = b;
  return n;
}

inline std::string run_config_to_yaml(const RunConfig& c) { return emit(run_config_to_node(c)); }

namespace detail {

inline void overlay_run_config(const YAML::Node& n, Reader& r, RunConfig& c,
                               const std::filesystem::path& base_dir) {
  r.check_keys(n, "",
               {"preset", "name", "seed", "output_dir", "total_env_steps", "eval_interval",
                "eval_episodes", "checkpoint_interval", "threads", "env", "physics", "task",
                "network", "ppo", "sweep", "bench"});
  r.get(n, "name", "", c.name);
  r.get(n, "seed", "", c.seed);
  r.get(n, "output_dir", "", c.output_dir);
  r.get(n, "total_env_steps", "", c.total_env_steps);
  r.get(n, "eval_interval", "", c.eval_interval);
  r.get(n, "eval_episodes", "", c.eval_episodes);
  r.get(n, "checkpoint_interval", "", c.checkpoint_interval);
  r.get(n, "threads", "", c.threads);

  if (const auto e = n["env"]; e.IsDefined()) {
    r.check_keys(e, "env",
                 {"morphology", "morphology_file", "morphology_def", "task", "observation_mode",
                  "n_train", "n_eval", "stack_k"});
    if (r.get(e, "morphology", "env", c.env.morphology)) c.morphology_def.reset();
    std::string s;
    if (r.get(e, "task", "env", s)) {
      const auto t = parse_task(s);
      if (!t) r.fail(e["task"], "env.task", "unknown task '" + s + "' (bounce, baoding)");
      c.env.task = *t;
    }
    if (r.get(e, "observation_mode", "env", s)) {
      const auto m = parse_observation_mode(s);
      if (!m) r.fail(e["observation_mode"], "env.observation_mode", "unknown mode '" + s + "' (blind, state)");
      c.env.observation_mode = *m;
    }
    r.get(e, "n_train", "env", c.env.n_train);
    r.get(e, "n_eval", "env", c.env.n_eval);
    r.get(e, "stack_k", "env", c.env.stack_k);
    if (r.get(e, "morphology_file", "env", s)) {
      const auto path = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base_dir / s;
      std::string text;
      try {
        text = read_text_file(path);
      } catch (const ConfigError&) {
        r.fail(e["morphology_file"], "env.morphology_file", "cannot read " + path.string());
      }
      c.morphology_def = morphology_from_yaml(text, path.string());
      c.env.morphology = c.morphology_def->name;
    }
    if (e["morphology_def"].IsDefined()) {
      c.morphology_def = morphology_from_node(e["morphology_def"], r, "env.morphology_def");
      c.env.morphology = c.morphology_def->name;
    }
  }

  if (const auto p = n["physics"]; p.IsDefined()) {
    r.check_keys(p, "physics",
                 {"dt_sim", "substeps_per_control", "gravity", "restitution_bounce_ball",
                  "restitution_baoding_ball", "friction_mu", "bounce_threshold", "pd_kp", "pd_kd",
                  "max_joint_torque", "joint_inertia"});
    auto& ph = c.physics;
    r.get(p, "dt_sim", "physics", ph.dt_sim);
    r.get(p, "substeps_per_control", "physics", ph.substeps_per_control);
    r.get_vec3(p, "gravity", "physics", ph.gravity);
    r.get(p, "restitution_bounce_ball", "physics", ph.restitution_bounce_ball);
    r.get(p, "restitution_baoding_ball", "physics", ph.restitution_baoding_ball);
    r.get(p, "friction_mu", "physics", ph.friction_mu);
    r.get(p, "bounce_threshold", "physics", ph.bounce_threshold);
    r.get(p, "pd_kp", "physics", ph.pd_kp);
    r.get(p, "pd_kd", "physics", ph.pd_kd);
    r.get(p, "max_joint_torque", "physics", ph.max_joint_torque);
    r.get(p, "joint_inertia", "physics", ph.joint_inertia);
  }

  if (const auto t = n["task"]; t.IsDefined()) {
    r.check_keys(t, "task",
                 {"r_bounce", "r_rotation", "switch_radius", "min_gap_steps", "max_episode_steps",
                  "dist_weight", "dist_sharpness", "target_positions", "out_of_reach_halfextent",
                  "bounce_spawn_height", "bounce_spawn_jitter", "baoding_spawn_jitter",
                  "joint_reset_noise"});
    auto& tk = c.task;
    r.get(t, "r_bounce", "task", tk.r_bounce);
    r.get(t, "r_rotation", "task", tk.r_rotation);
    r.get(t, "switch_radius", "task", tk.switch_radius);
    r.get(t, "min_gap_steps", "task", tk.min_gap_steps);
    r.get(t, "max_episode_steps", "task", tk.max_episode_steps);
    r.get(t, "dist_weight", "task", tk.dist_weight);
    r.get(t, "dist_sharpness", "task", tk.dist_sharpness);
    if (const auto tp = t["target_positions"]; tp.IsDefined()) {
      if (tp.IsScalar() && tp.as<std::string>() == "auto") {
        c.auto_targets = true;
      } else {
        if (!tp.IsSequence() || tp.size() != 2)
          r.fail(tp, "task.target_positions", "expected 'auto' or two [x, y, z] points");
        YAML::Node wrap;
        wrap["a"] = tp[0];
        wrap["b"] = tp[1];
        r.get_vec3(wrap, "a", "task.target_positions", tk.target_positions[0]);
        r.get_vec3(wrap, "b", "task.target_positions", tk.target_positions[1]);
        c.auto_targets = false;
      }
    }
    r.get(t, "out_of_reach_halfextent", "task", tk.out_of_reach_halfextent);
    r.get(t, "bounce_spawn_height", "task", tk.bounce_spawn_height);
    r.get(t, "bounce_spawn_jitter", "task", tk.bounce_spawn_jitter);
    r.get(t, "baoding_spawn_jitter", "task", tk.baoding_spawn_jitter);
    r.get(t, "joint_reset_noise", "task", tk.joint_reset_noise);
  }

  if (const auto w = n["network"]; w.IsDefined()) {
    r.check_keys(w, "network", {"hidden", "init_log_std", "aux_head", "aux_hidden"});
    r.get(w, "hidden", "network", c.network.hidden);
    r.get(w, "init_log_std", "network", c.network.init_log_std);
    r.get(w, "aux_head", "network", c.network.aux_head);
    r.get(w, "aux_hidden", "network", c.network.aux_hidden);
  }

  if (const auto p = n["ppo"]; p.IsDefined()) {
    r.check_keys(p, "ppo",
                 {"learning_rate", "gamma", "gae_lambda", "clip_epsilon", "entropy_coef",
                  "value_coef", "rollout_horizon", "n_epochs", "n_minibatches", "max_grad_norm",
                  "kl_target", "aux_coef", "normalize_advantages", "clip_gradients",
                  "normalize_observations", "lr_min", "lr_max"});
    auto& h = c.ppo;
    r.get(p, "learning_rate", "ppo", h.learning_rate);
    r.get(p, "gamma", "ppo", h.gamma);
    r.get(p, "gae_lambda", "ppo", h.gae_lambda);
    r.get(p, "clip_epsilon", "ppo", h.clip_epsilon);
    r.get(p, "entropy_coef", "ppo", h.entropy_coef);
    r.get(p, "value_coef", "ppo", h.value_coef);
    r.get(p, "rollout_horizon", "ppo", h.rollout_horizon);
    r.get(p, "n_epochs", "ppo", h.n_epochs);
    r.get(p, "n_minibatches", "ppo", h.n_minibatches);
    r.get(p, "max_grad_norm", "ppo", h.max_grad_norm);
    r.get(p, "kl_target", "ppo", h.kl_target);
    r.get(p, "aux_coef", "ppo", h.aux_coef);
    r.get(p, "normalize_advantages", "ppo", h.normalize_advantages);
    r.get(p, "clip_gradients", "ppo", h.clip_gradients);
    r.get(p, "normalize_observations", "ppo", h.normalize_observations);
    r.get(p, "lr_min", "ppo", h.lr_min);
    r.get(p, "lr_max", "ppo", h.lr_max);
  }

  if (const auto s = n["sweep"]; s.IsDefined()) {
    r.check_keys(s, "sweep",
                 {"trials", "warmup", "good_quantile", "candidates", "min_bandwidth",
                  "budget_steps_per_trial", "space"});
    auto& sw = c.sweep;
    r.get(s, "trials", "sweep", sw.trials);
    r.get(s, "warmup", "sweep", sw.warmup);
    r.get(s, "good_quantile", "sweep", sw.good_quantile);
    r.get(s, "candidates", "sweep", sw.candidates);
    r.get(s, "min_bandwidth", "sweep", sw.min_bandwidth);
    r.get(s, "budget_steps_per_trial", "sweep", sw.budget_steps_per_trial);
    if (const auto sp = s["space"]; sp.IsDefined()) {
      r.require_map(sp, "sweep.space");
      sw.space.dims.clear();
      for (const auto& kv : sp) {
        Dimension d;
        d.name = kv.first.as<std::string>();
        const std::string dp = "sweep.space." + d.name;
        r.check_keys(kv.second, dp, {"kind", "low", "high", "choices"});
        std::string kind = "uniform";
        r.get(kv.second, "kind", dp, kind);
        const auto k = parse_dimension_kind(kind);
        if (!k) r.fail(kv.second["kind"], dp + ".kind", "expected uniform, log_uniform or choice");
        d.kind = *k;
        r.get(kv.second, "low", dp, d.low);
        r.get(kv.second, "high", dp, d.high);
        r.get(kv.second, "choices", dp, d.choices);
        sw.space.dims.push_back(d);
      }
    }
  }

  if (const auto b = n["bench"]; b.IsDefined()) {
    r.check_keys(b, "bench", {"n_envs", "steps", "max_threads"});
    r.get(b, "n_envs", "bench", c.bench.n_envs);
    r.get(b, "steps", "bench", c.bench.steps);
    r.get(b, "max_threads", "bench", c.bench.max_threads);
  }
}

}  // namespace detail

/// Morphology named by the config (inline definition first, then builtins).
inline std::optional<MorphologyConfig> resolve_morphology(const RunConfig& c) {
  if (c.morphology_def) return c.morphology_def;
  return builtin_morphology(c.env.morphology);
}

/// Applies one sweep sample to the PPO settings.
inline void apply_sweep_params(const SearchSpace& space, const std::vector<double>& values,
                               PPOHyperparams& hp) {
  for (std::size_t d = 0; d < space.dims.size(); ++d) {
    const auto& name = space.dims[d].name;
    const double v = values[d];
    if (name == "learning_rate") hp.learning_rate = v;
    else if (name == "gamma") hp.gamma = v;
    else if (name == "gae_lambda") hp.gae_lambda = v;
    else if (name == "clip_epsilon") hp.clip_epsilon = v;
    else if (name == "entropy_coef") hp.entropy_coef = v;
    else if (name == "value_coef") hp.value_coef = v;
    else if (name == "rollout_horizon") hp.rollout_horizon = static_cast<int>(v);
    else if (name == "n_minibatches") hp.n_minibatches = static_cast<int>(v);
    else if (name == "n_epochs") hp.n_epochs = static_cast<int>(v);
    else if (name == "max_grad_norm") hp.max_grad_norm = v;
    else if (name == "kl_target") hp.kl_target = v;
    else if (name == "aux_coef") hp.aux_coef = v;
    else throw ConfigError("sweep.space." + name + ": not a PPO parameter");
  }
}

/// Semantic checks over a fully assembled config; throws on the first
/// problem, pointing at the offending line when known.
inline void validate_run_config(const RunConfig& c, const detail::Reader& r) {
  if (!resolve_morphology(c)) {
    std::string known;
    for (const auto& n : builtin_morphology_names()) known += (known.empty() ? "" : ", ") + n;
    r.fail_field("env.morphology", "unknown morphology '" + c.env.morphology + "' (known: " + known + ")");
  }
  std::vector<std::string> problems;
  auto add = [&](const std::vector<std::string>& v) { problems.insert(problems.end(), v.begin(), v.end()); };
  if (c.env.n_train < 1) problems.push_back("env.n_train: must be >= 1");
  if (c.env.n_eval < 1) problems.push_back("env.n_eval: must be >= 1");
  if (c.env.stack_k < 1) problems.push_back("env.stack_k: must be >= 1");
  add(c.physics.validate());
  add(c.task.validate());
  add(c.ppo.validate(c.env.n_train));
  add(c.sweep.validate());
  if (c.network.aux_hidden < 1) problems.push_back("network.aux_hidden: must be >= 1");
  for (int h : c.network.hidden)
    if (h < 1) problems.push_back("network.hidden: widths must be >= 1");
  if (c.eval_episodes < 1) problems.push_back("eval_episodes: must be >= 1");
  if (c.total_env_steps < 1) problems.push_back("total_env_steps: must be >= 1");
  if (c.bench.n_envs < 1 || c.bench.steps < 1 || c.bench.max_threads < 1)
    problems.push_back("bench: n_envs, steps and max_threads must be >= 1");
  try {
    PPOHyperparams scratch;
    apply_sweep_params(c.sweep.space, std::vector<double>(c.sweep.space.dims.size(), 0.0), scratch);
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  if (!problems.empty()) {
    const auto& p = problems.front();
    const auto colon = p.find(':');
    std::string field = p.substr(0, colon);
    if (field.find(' ') != std::string::npos) field = field.substr(0, field.find(' '));
    r.fail_field(field, p.substr(colon + 2));
  }
}

/// Builds a config from an optional preset and an optional YAML text. A
/// `preset:` key inside the text selects the base when `preset_name` is
/// empty.
inline RunConfig load_run_config(const std::string& text, const std::string& source,
                                 const std::string& preset_name = "",
                                 const std::filesystem::path& base_dir = ".") {
  detail::Reader r(source);
  YAML::Node n;
  if (!text.empty()) {
    try {
      n = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
      throw ConfigDiagnostic(source, e.mark.line + 1, "<syntax>", e.msg);
    }
  }
  std::string base = preset_name;
  if (n.IsMap() && n["preset"].IsDefined() && base.empty()) base = r.as<std::string>(n["preset"], "preset");
  RunConfig c;
  if (!base.empty()) {
    auto p = preset(base);
    if (!p) {
      if (n.IsMap() && n["preset"].IsDefined()) r.fail(n["preset"], "preset", "unknown preset '" + base + "'");
      throw ConfigDiagnostic(source, 0, "preset", "unknown preset '" + base + "'");
    }
    c = *p;
  }
  if (n.IsDefined() && !n.IsNull()) detail::overlay_run_config(n, r, c, base_dir);
  validate_run_config(c, r);
  return c;
}

inline RunConfig load_run_config_file(const std::filesystem::path& path,
                                      const std::string& preset_name = "") {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const ConfigError&) {
    throw ConfigDiagnostic(path.string(), 0, "--config", "cannot read file");
  }
  return load_run_config(text, path.string(), preset_name, path.parent_path());
}

/// Trainer settings for a validated config.
inline TrainerConfig to_trainer_config(const RunConfig& c) {
  TrainerConfig t;
  t.morphology = *resolve_morphology(c);
  t.physics = c.physics;
  t.task = c.task;
  t.task.task = c.env.task;
  if (c.auto_targets) t.task.target_positions = default_baoding_targets(t.morphology);
  t.observation_mode = c.env.observation_mode;
  t.stack_k = c.env.stack_k;
  t.n_train = c.env.n_train;
  t.n_eval = c.env.n_eval;
  t.seed = c.seed;
  t.hp = c.ppo;
  t.hidden = c.network.hidden;
  t.init_log_std = c.network.init_log_std;
  t.aux_head = c.network.aux_head;
  t.aux_hidden = c.network.aux_hidden;
  t.total_env_steps = c.total_env_steps;
  t.eval_interval = c.eval_interval;
  t.eval_episodes = c.eval_episodes;
  t.threads = c.threads;
  return t;
}

}  // namespace tacbench
