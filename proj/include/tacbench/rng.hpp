#pragma once

// Counter-based random streams (Philox4x32-10).
//
// Every random draw in the simulator and trainer is a pure function of
// (seed, domain, stream, substream, draw index). Nothing carries hidden
// generator state across envs or threads, so any partition of the env batch
// across workers produces the same numbers.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>

namespace tacbench {

using PhiloxCounter = std::array<std::uint32_t, 4>;
using PhiloxKey = std::array<std::uint32_t, 2>;

namespace detail {

inline constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
inline constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
inline constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
inline constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

constexpr void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& lo,
                       std::uint32_t& hi) {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  lo = static_cast<std::uint32_t>(p);
  hi = static_cast<std::uint32_t>(p >> 32);
}

}  // namespace detail

constexpr PhiloxCounter philox4x32(PhiloxCounter ctr, PhiloxKey key) {
  for (int round = 0; round < 10; ++round) {
    std::uint32_t lo0 = 0, hi0 = 0, lo1 = 0, hi1 = 0;
    detail::mulhilo(detail::kPhiloxM0, ctr[0], lo0, hi0);
    detail::mulhilo(detail::kPhiloxM1, ctr[2], lo1, hi1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += detail::kPhiloxW0;
    key[1] += detail::kPhiloxW1;
  }
  return ctr;
}

/// Stream domains keep unrelated consumers of randomness disjoint.
enum class StreamDomain : std::uint32_t {
  kTrainReset = 1,
  kEvalReset = 2,
  kPolicy = 3,
  kMinibatch = 4,
  kInit = 5,
  kSweep = 6,
  kBench = 7,
  kTest = 15,
};

/// One random stream: a fixed (seed, domain, stream, substream) tuple plus a
/// running draw index. Cheap to construct; construct one per (env, episode)
/// or (env, step) instead of sharing.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, StreamDomain domain, std::uint32_t stream,
             std::uint64_t substream = 0)
      : key_{static_cast<std::uint32_t>(seed),
             static_cast<std::uint32_t>(seed >> 32)},
        ctr_{0u, stream, static_cast<std::uint32_t>(substream),
             static_cast<std::uint32_t>(substream >> 32) ^
                 (static_cast<std::uint32_t>(domain) << 24)} {}

  std::uint32_t next_u32() {
    if (lane_ == 4) refill();
    return block_[lane_++];
  }

  std::uint64_t next_u64() {
    const std::uint64_t hi = next_u32();
    return (hi << 32) | next_u32();
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % n;
  }

  /// Standard normal via Box-Muller; one draw per call, no cached spare.
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  template <class T>
  void shuffle(std::span<T> values) {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(values[i - 1], values[j]);
    }
  }

 private:
  void refill() {
    block_ = philox4x32(ctr_, key_);
    ++ctr_[0];
    lane_ = 0;
  }

  PhiloxKey key_;
  PhiloxCounter ctr_;
  PhiloxCounter block_{};
  int lane_ = 4;
};

}  // namespace tacbench
