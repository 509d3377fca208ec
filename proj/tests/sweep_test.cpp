#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "tacbench/sweep.hpp"

#include "oracles.hpp"

namespace tacbench {
namespace {

using namespace oracle;

namespace fs = std::filesystem;

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "tacbench_sweep_test";
  fs::create_directories(dir);
  auto p = dir / name;
  fs::remove(p);
  return p;
}

std::vector<TrialRecord> random_history(const SweepConfig& cfg, CounterRng& rng, int n) {
  std::vector<TrialRecord> h;
  for (int i = 0; i < n; ++i) {
    TrialRecord t;
    t.index = i;
    t.params = sample_trial({}, cfg, rng.next_u64(), 0);
    if (rng.uniform() < 0.1) {
      t.status = TrialRecord::Status::kFailed;
    } else {
      t.objective = rng.normal();
    }
    h.push_back(t);
  }
  return h;
}

TEST(SearchSpace, DefaultHasSevenOrderedDimensions) {
  const auto s = SearchSpace::ppo_default();
  EXPECT_TRUE(s.validate().empty());
  EXPECT_EQ(s.dims.size(), 7u);
  auto bad = s;
  bad.dims[0].low = bad.dims[0].high;
  EXPECT_FALSE(bad.validate().empty());
  bad = s;
  bad.dims.pop_back();
  EXPECT_FALSE(bad.validate().empty());
}

TEST(Sampler, WarmupIgnoresHistory) {
  SweepConfig cfg;
  CounterRng rng(1, StreamDomain::kTest, 0);
  for (int i = 0; i < cfg.warmup; ++i) {
    const auto a = sample_trial({}, cfg, 77, i);
    const auto b = sample_trial(random_history(cfg, rng, 30), cfg, 77, i);
    EXPECT_EQ(a, b) << i;
  }
  EXPECT_NE(sample_trial({}, cfg, 77, 0), sample_trial({}, cfg, 77, 1));
}

TEST(Sampler, DegenerateHistoryFallsBackToUniform) {
  SweepConfig cfg;
  CounterRng rng(2, StreamDomain::kTest, 0);
  auto h = random_history(cfg, rng, 20);
  for (auto& t : h) {
    t.status = TrialRecord::Status::kDone;
    t.objective = 3.0;
  }
  SweepConfig all_warm = cfg;
  all_warm.warmup = 1000;
  EXPECT_EQ(sample_trial(h, cfg, 5, 20), sample_trial({}, all_warm, 5, 20));
  h.resize(4);
  h[0].objective = 10.0;  // only one good point
  EXPECT_EQ(sample_trial(h, cfg, 5, 20), sample_trial({}, all_warm, 5, 20));
}

TEST(Sampler, GuidedSampleDiffersFromUniform) {
  SweepConfig cfg;
  CounterRng rng(2, StreamDomain::kTest, 1);
  const auto h = random_history(cfg, rng, 20);
  SweepConfig all_warm = cfg;
  all_warm.warmup = 1000;
  EXPECT_NE(sample_trial(h, cfg, 5, 20), sample_trial({}, all_warm, 5, 20));
}

TEST(Sampler, AlwaysInsideBounds) {
  SweepConfig cfg;
  CounterRng rng(3, StreamDomain::kTest, 0);
  for (int k = 0; k < 300; ++k) {
    const auto h = random_history(cfg, rng, static_cast<int>(rng.below(40)));
    const auto p = sample_trial(h, cfg, rng.next_u64(), static_cast<int>(h.size()));
    ASSERT_EQ(p.size(), 7u);
    for (std::size_t d = 0; d < p.size(); ++d)
      ASSERT_TRUE(cfg.space.dims[d].contains(p[d])) << cfg.space.dims[d].name << " " << p[d];
  }
}

TEST(Sweep, ReproducibleAndResumable) {
  SweepConfig cfg;
  const std::vector<double> c{0.2, 0.7, 0.5, 0.1, 0.9, 0.5, 1.0};
  int calls = 0;
  TrialObjective obj = [&](const std::vector<double>& p, std::uint64_t) {
    ++calls;
    return quadratic(cfg.space, p, c);
  };
  const auto a_path = temp_file("a.jsonl");
  const auto b_path = temp_file("b.jsonl");
  const auto a = run_sweep(cfg, 9, obj, a_path);
  ASSERT_EQ(a.size(), 40u);
  EXPECT_EQ(std::count_if(a.begin(), a.end(), [](const TrialRecord& t) { return t.warmup; }), 8);

  SweepConfig first = cfg;
  first.trials = 17;
  run_sweep(first, 9, obj, b_path);
  calls = 0;
  const auto b = run_sweep(cfg, 9, obj, b_path);
  EXPECT_EQ(calls, 23);
  ASSERT_EQ(b.size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << i;
  EXPECT_EQ(load_history(a_path, cfg.space), a);
}

TEST(Sweep, FailedTrialsAreRecordedAndSweepContinues) {
  SweepConfig cfg;
  cfg.trials = 12;
  const auto path = temp_file("fail.jsonl");
  const auto h = run_sweep(
      cfg, 4,
      [](const std::vector<double>& p, std::uint64_t) -> double {
        if (p[5] == 64) throw std::runtime_error("diverged");
        return p[0];
      },
      path);
  ASSERT_EQ(h.size(), 12u);
  for (const auto& t : h) {
    EXPECT_EQ(t.status == TrialRecord::Status::kFailed, t.params[5] == 64);
    EXPECT_EQ(t.objective.has_value(), t.status == TrialRecord::Status::kDone);
  }
}

TEST(Sweep, BestTrialOfEmptyHistoryIsEmpty) {
  EXPECT_FALSE(best_trial({}).has_value());
  TrialRecord t;
  t.status = TrialRecord::Status::kFailed;
  EXPECT_FALSE(best_trial({t}).has_value());
}

TEST(Sweep, TruncatedFinalLineIsIgnored) {
  SweepConfig cfg;
  cfg.trials = 3;
  const auto path = temp_file("trunc.jsonl");
  run_sweep(cfg, 1, [](const std::vector<double>& p, std::uint64_t) { return p[1]; }, path);
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"trial\": 3, \"warm";
  }
  EXPECT_EQ(load_history(path, cfg.space).size(), 3u);
}

TEST(Sweep, GuidedBeatsRandomOnQuadratic) {
  SweepConfig guided;
  SweepConfig random = guided;
  random.warmup = guided.trials;
  std::vector<double> best_guided, best_random;
  for (int r = 0; r < 10; ++r) {
    CounterRng rng(100 + r, StreamDomain::kTest, 0);
    std::vector<double> c;
    for (int d = 0; d < 7; ++d) c.push_back(rng.uniform());
    auto run = [&](const SweepConfig& cfg) {
      std::vector<TrialRecord> h;
      double best = -INFINITY;
      for (int i = 0; i < cfg.trials; ++i) {
        TrialRecord t;
        t.index = i;
        t.params = sample_trial(h, cfg, 1000 + r, i);
        t.objective = quadratic(cfg.space, t.params, c);
        best = std::max(best, *t.objective);
        h.push_back(t);
      }
      return best;
    };
    best_guided.push_back(run(guided));
    best_random.push_back(run(random));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return 0.5 * (v[4] + v[5]);
  };
  EXPECT_GE(median(best_guided), median(best_random));
}

}  // namespace
}  // namespace tacbench
