#pragma once

// Sequential hyperparameter search: uniform warm-up trials, then a
// tree-structured Parzen estimator over the unit-normalized space.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tacbench/morphology.hpp"
#include "tacbench/rng.hpp"

namespace tacbench {

struct Dimension {
  enum class Kind { kUniform, kLogUniform, kChoice };
  std::string name;
  Kind kind = Kind::kUniform;
  double low = 0.0;
  double high = 1.0;
  std::vector<double> choices;

  bool operator==(const Dimension&) const = default;

  /// Maps a value to [0, 1]; choices map to index / (count - 1).
  double to_unit(double v) const {
    switch (kind) {
      case Kind::kUniform:
        return (v - low) / (high - low);
      case Kind::kLogUniform:
        return (std::log(v) - std::log(low)) / (std::log(high) - std::log(low));
      case Kind::kChoice: {
        const auto it = std::find(choices.begin(), choices.end(), v);
        const auto k = static_cast<double>(it - choices.begin());
        return choices.size() > 1 ? k / static_cast<double>(choices.size() - 1) : 0.0;
      }
    }
    return 0.0;
  }

  double from_unit(double x) const {
    x = std::clamp(x, 0.0, 1.0);
    switch (kind) {
      case Kind::kUniform:
        return low + x * (high - low);
      case Kind::kLogUniform:
        return std::clamp(std::exp(std::log(low) + x * (std::log(high) - std::log(low))), low,
                          high);
      case Kind::kChoice: {
        const auto k = static_cast<std::size_t>(std::lround(x * (choices.size() - 1)));
        return choices[std::min(k, choices.size() - 1)];
      }
    }
    return low;
  }

  std::size_t choice_index(double v) const {
    return static_cast<std::size_t>(std::find(choices.begin(), choices.end(), v) - choices.begin());
  }

  bool contains(double v) const {
    if (kind == Kind::kChoice) return choice_index(v) < choices.size();
    return v >= low && v <= high;
  }
};

inline std::string to_string(Dimension::Kind k) {
  switch (k) {
    case Dimension::Kind::kUniform:
      return "uniform";
    case Dimension::Kind::kLogUniform:
      return "log_uniform";
    case Dimension::Kind::kChoice:
      return "choice";
  }
  return "uniform";
}

inline std::optional<Dimension::Kind> parse_dimension_kind(const std::string& s) {
  if (s == "uniform") return Dimension::Kind::kUniform;
  if (s == "log_uniform") return Dimension::Kind::kLogUniform;
  if (s == "choice") return Dimension::Kind::kChoice;
  return std::nullopt;
}

struct SearchSpace {
  std::vector<Dimension> dims;

  bool operator==(const SearchSpace&) const = default;

  static SearchSpace ppo_default() {
    using K = Dimension::Kind;
    return {{
        {"learning_rate", K::kLogUniform, 1e-5, 1e-3, {}},
        {"gamma", K::kUniform, 0.95, 0.999, {}},
        {"gae_lambda", K::kUniform, 0.9, 1.0, {}},
        {"clip_epsilon", K::kUniform, 0.1, 0.3, {}},
        {"entropy_coef", K::kLogUniform, 1e-4, 1e-1, {}},
        {"rollout_horizon", K::kChoice, 0, 0, {16, 32, 64}},
        {"n_minibatches", K::kChoice, 0, 0, {2, 4, 8}},
    }};
  }

  std::vector<std::string> validate() const {
    std::vector<std::string> out;
    if (dims.size() != 7) out.push_back("sweep.space: expected exactly 7 dimensions");
    for (const auto& d : dims) {
      const std::string where = "sweep.space." + d.name;
      if (d.kind == Dimension::Kind::kChoice) {
        if (d.choices.empty()) out.push_back(where + ": choices must be non-empty");
        if (!std::is_sorted(d.choices.begin(), d.choices.end()) ||
            std::adjacent_find(d.choices.begin(), d.choices.end()) != d.choices.end())
          out.push_back(where + ": choices must be strictly increasing");
      } else {
        if (!(d.low < d.high)) out.push_back(where + ": low must be < high");
        if (d.kind == Dimension::Kind::kLogUniform && !(d.low > 0.0))
          out.push_back(where + ": log_uniform needs low > 0");
      }
    }
    return out;
  }
};

struct TrialRecord {
  enum class Status { kDone, kFailed };
  int index = 0;
  std::vector<double> params;  // aligned with SearchSpace::dims
  std::optional<double> objective;
  std::uint64_t seed = 0;
  Status status = Status::kDone;
  bool warmup = false;
  std::string error;

  bool operator==(const TrialRecord&) const = default;
};

struct SweepConfig {
  int trials = 40;
  int warmup = 8;
  double good_quantile = 0.25;
  int candidates = 24;
  double min_bandwidth = 0.02;
  std::uint64_t budget_steps_per_trial = 1'000'000;
  SearchSpace space = SearchSpace::ppo_default();

  bool operator==(const SweepConfig&) const = default;

  std::vector<std::string> validate() const {
    auto out = space.validate();
    if (trials < 1) out.push_back("sweep.trials: must be >= 1");
    if (warmup < 0) out.push_back("sweep.warmup: must be >= 0");
    if (!(good_quantile > 0.0 && good_quantile < 1.0))
      out.push_back("sweep.good_quantile: must lie in (0, 1)");
    if (candidates < 1) out.push_back("sweep.candidates: must be >= 1");
    if (!(min_bandwidth > 0.0)) out.push_back("sweep.min_bandwidth: must be positive");
    if (budget_steps_per_trial < 1) out.push_back("sweep.budget_steps_per_trial: must be >= 1");
    return out;
  }
};

/// Seed handed to the trial's training run.
inline std::uint64_t trial_seed(std::uint64_t sweep_seed, int index) {
  CounterRng rng(sweep_seed, StreamDomain::kSweep, 1, static_cast<std::uint64_t>(index));
  return rng.next_u64();
}

namespace detail {

inline std::vector<double> uniform_sample(const SearchSpace& space, CounterRng& rng) {
  std::vector<double> p;
  for (const auto& d : space.dims) {
    if (d.kind == Dimension::Kind::kChoice) {
      p.push_back(d.choices[rng.below(d.choices.size())]);
    } else {
      p.push_back(d.from_unit(rng.uniform()));
    }
  }
  return p;
}

/// Per-dimension Parzen density over unit coordinates (continuous) or
/// smoothed category frequencies (choice), each with a uniform prior
/// component of weight one.
struct Parzen {
  const Dimension* dim = nullptr;
  std::vector<double> points;  // unit coords
  double bandwidth = 1.0;
  std::vector<double> cat_prob;

  Parzen(const Dimension& d, const std::vector<double>& values, double min_bw) : dim(&d) {
    if (d.kind == Dimension::Kind::kChoice) {
      cat_prob.assign(d.choices.size(), 1.0);
      for (double v : values) cat_prob[d.choice_index(v)] += 1.0;
      const double total = static_cast<double>(values.size() + d.choices.size());
      for (double& c : cat_prob) c /= total;
      return;
    }
    for (double v : values) points.push_back(d.to_unit(v));
    const double n = static_cast<double>(points.size());
    double mean = 0.0;
    for (double x : points) mean += x;
    mean /= n;
    double sq = 0.0;
    for (double x : points) sq += (x - mean) * (x - mean);
    const double sd = n > 1 ? std::sqrt(sq / (n - 1)) : 0.0;
    bandwidth = std::max(1.06 * sd * std::pow(n, -0.2), min_bw);
  }

  double log_density(double v) const {
    if (dim->kind == Dimension::Kind::kChoice) return std::log(cat_prob[dim->choice_index(v)]);
    const double x = dim->to_unit(v);
    const double norm = 1.0 / (bandwidth * std::sqrt(2.0 * std::numbers::pi));
    double s = 1.0;  // prior
    for (double p : points) {
      const double z = (x - p) / bandwidth;
      s += norm * std::exp(-0.5 * z * z);
    }
    return std::log(s / static_cast<double>(points.size() + 1));
  }

  double sample(CounterRng& rng) const {
    if (dim->kind == Dimension::Kind::kChoice) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (std::size_t k = 0; k < cat_prob.size(); ++k) {
        acc += cat_prob[k];
        if (u < acc) return dim->choices[k];
      }
      return dim->choices.back();
    }
    const std::size_t c = rng.below(points.size() + 1);
    if (c == points.size()) return dim->from_unit(rng.uniform());
    return dim->from_unit(points[c] + bandwidth * rng.normal());
  }
};

}  // namespace detail

/// Parameters for trial `index`. Warm-up trials depend only on (seed, index);
/// later trials fit good/bad densities to the history.
inline std::vector<double> sample_trial(const std::vector<TrialRecord>& history,
                                        const SweepConfig& cfg, std::uint64_t seed, int index) {
  CounterRng rng(seed, StreamDomain::kSweep, 0, static_cast<std::uint64_t>(index));
  if (index < cfg.warmup) return detail::uniform_sample(cfg.space, rng);

  std::vector<const TrialRecord*> done, failed;
  for (const auto& t : history) {
    if (t.status == TrialRecord::Status::kDone && t.objective && std::isfinite(*t.objective)) {
      done.push_back(&t);
    } else {
      failed.push_back(&t);
    }
  }
  std::stable_sort(done.begin(), done.end(), [](const TrialRecord* a, const TrialRecord* b) {
    return *a->objective > *b->objective;
  });
  const auto n_good = static_cast<std::size_t>(
      std::ceil(cfg.good_quantile * static_cast<double>(done.size())));
  const bool all_equal = !done.empty() && *done.front()->objective == *done.back()->objective;
  if (n_good < 2 || all_equal || done.size() + failed.size() <= n_good)
    return detail::uniform_sample(cfg.space, rng);

  std::vector<detail::Parzen> good, bad;
  for (std::size_t d = 0; d < cfg.space.dims.size(); ++d) {
    std::vector<double> gv, bv;
    for (std::size_t i = 0; i < done.size(); ++i)
      (i < n_good ? gv : bv).push_back(done[i]->params[d]);
    for (const auto* t : failed) bv.push_back(t->params[d]);
    good.emplace_back(cfg.space.dims[d], gv, cfg.min_bandwidth);
    bad.emplace_back(cfg.space.dims[d], bv, cfg.min_bandwidth);
  }
  std::vector<double> best;
  double best_score = -INFINITY;
  for (int c = 0; c < cfg.candidates; ++c) {
    std::vector<double> x;
    double score = 0.0;
    for (std::size_t d = 0; d < good.size(); ++d) {
      x.push_back(good[d].sample(rng));
      score += good[d].log_density(x.back()) - bad[d].log_density(x.back());
    }
    if (score > best_score || best.empty()) {
      best_score = score;
      best = std::move(x);
    }
  }
  return best;
}

inline std::optional<TrialRecord> best_trial(const std::vector<TrialRecord>& history) {
  std::optional<TrialRecord> best;
  for (const auto& t : history) {
    if (t.status != TrialRecord::Status::kDone || !t.objective) continue;
    if (!best || *t.objective > *best->objective) best = t;
  }
  return best;
}

// ---------------------------------------------------------------------------
// History file: one JSON object per line.

inline nlohmann::json to_json(const TrialRecord& t, const SearchSpace& space) {
  nlohmann::json j;
  j["trial"] = t.index;
  j["warmup"] = t.warmup;
  j["seed"] = t.seed;
  j["status"] = t.status == TrialRecord::Status::kDone ? "done" : "failed";
  nlohmann::json p = nlohmann::json::object();
  for (std::size_t d = 0; d < space.dims.size(); ++d) p[space.dims[d].name] = t.params[d];
  j["params"] = p;
  j["objective"] = t.objective ? nlohmann::json(*t.objective) : nlohmann::json(nullptr);
  if (!t.error.empty()) j["error"] = t.error;
  return j;
}

inline TrialRecord trial_from_json(const nlohmann::json& j, const SearchSpace& space) {
  TrialRecord t;
  t.index = j.at("trial").get<int>();
  t.warmup = j.at("warmup").get<bool>();
  t.seed = j.at("seed").get<std::uint64_t>();
  t.status = j.at("status").get<std::string>() == "done" ? TrialRecord::Status::kDone
                                                         : TrialRecord::Status::kFailed;
  for (const auto& d : space.dims) t.params.push_back(j.at("params").at(d.name).get<double>());
  if (!j.at("objective").is_null()) t.objective = j.at("objective").get<double>();
  if (j.contains("error")) t.error = j.at("error").get<std::string>();
  return t;
}

/// Reads complete records; a truncated final line is ignored.
inline std::vector<TrialRecord> load_history(const std::filesystem::path& path,
                                             const SearchSpace& space) {
  std::vector<TrialRecord> out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      if (in.peek() == std::char_traits<char>::eof()) break;
      throw;
    }
    out.push_back(trial_from_json(j, space));
  }
  return out;
}

/// Rewrites the whole history through a temporary file and a rename.
inline void save_history(const std::filesystem::path& path,
                         const std::vector<TrialRecord>& history, const SearchSpace& space) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    for (const auto& t : history) out << to_json(t, space).dump() << '\n';
    out.flush();
    if (!out) throw std::runtime_error("cannot write " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

/// Objective callback: (params, trial seed) -> objective. Throwing marks the
/// trial failed.
using TrialObjective = std::function<double(const std::vector<double>&, std::uint64_t)>;

/// Runs the remaining trials of a sweep, persisting the history after each.
/// Trials already present in `history_path` are not re-run.
inline std::vector<TrialRecord> run_sweep(const SweepConfig& cfg, std::uint64_t seed,
                                          const TrialObjective& objective,
                                          const std::filesystem::path& history_path,
                                          const std::function<void(const TrialRecord&)>& on_trial = {}) {
  auto history = std::filesystem::exists(history_path) ? load_history(history_path, cfg.space)
                                                       : std::vector<TrialRecord>{};
  for (int i = static_cast<int>(history.size()); i < cfg.trials; ++i) {
    TrialRecord t;
    t.index = i;
    t.warmup = i < cfg.warmup;
    t.seed = trial_seed(seed, i);
    t.params = sample_trial(history, cfg, seed, i);
    try {
      const double obj = objective(t.params, t.seed);
      if (!std::isfinite(obj)) throw std::runtime_error("non-finite objective");
      t.objective = obj;
      t.status = TrialRecord::Status::kDone;
    } catch (const std::exception& e) {
      t.status = TrialRecord::Status::kFailed;
      t.error = e.what();
    }
    history.push_back(t);
    save_history(history_path, history, cfg.space);
    if (on_trial) on_trial(t);
  }
  return history;
}

}  // namespace tacbench
