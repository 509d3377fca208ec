#pragma once

// Fixed-size worker pool with a blocking parallel_for over index ranges.
// Work items must be independent; results never depend on how the range is
// split, which is what makes multi-threaded stepping bitwise reproducible.

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace tacbench {

/// Worker cap from TACBENCH_MAX_THREADS, 0 when unset or malformed.
inline std::size_t thread_cap_from_env() {
  const char* raw = std::getenv("TACBENCH_MAX_THREADS");
  if (raw == nullptr) return 0;
  try {
    const long v = std::stol(raw);
    return v > 0 ? static_cast<std::size_t>(v) : 0;
  } catch (...) {
    return 0;
  }
}

inline std::size_t resolve_thread_count(std::size_t requested) {
  std::size_t n = requested;
  if (n == 0) n = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  if (const std::size_t cap = thread_cap_from_env(); cap > 0) n = std::min(n, cap);
  return std::max<std::size_t>(1, n);
}

class ThreadPool {
 public:
  explicit ThreadPool(std::size_t n_threads = 1)
      : n_threads_(std::max<std::size_t>(1, n_threads)) {
    for (std::size_t i = 1; i < n_threads_; ++i) {
      workers_.emplace_back([this, i] { worker_loop(i); });
    }
  }

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  ~ThreadPool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      ++generation_;
    }
    cv_start_.notify_all();
    for (auto& w : workers_) w.join();
  }

  std::size_t size() const { return n_threads_; }

  /// Calls fn(begin, end) on contiguous blocks covering [0, n). The calling
  /// thread takes block 0.
  void parallel_for(std::size_t n,
                    const std::function<void(std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t blocks = std::min(n_threads_, n);
    if (blocks == 1) {
      fn(0, n);
      return;
    }
    {
      std::lock_guard lock(mu_);
      job_ = &fn;
      job_n_ = n;
      job_blocks_ = blocks;
      pending_ = blocks - 1;
      ++generation_;
    }
    cv_start_.notify_all();
    run_block(0, n, blocks, fn);
    std::unique_lock lock(mu_);
    cv_done_.wait(lock, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  static void run_block(std::size_t idx, std::size_t n, std::size_t blocks,
                        const std::function<void(std::size_t, std::size_t)>& fn) {
    const std::size_t begin = n * idx / blocks;
    const std::size_t end = n * (idx + 1) / blocks;
    if (begin < end) fn(begin, end);
  }

  void worker_loop(std::size_t idx) {
    std::size_t seen = 0;
    for (;;) {
      const std::function<void(std::size_t, std::size_t)>* job = nullptr;
      std::size_t n = 0, blocks = 0;
      {
        std::unique_lock lock(mu_);
        cv_start_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        job = job_;
        n = job_n_;
        blocks = job_blocks_;
      }
      if (job != nullptr && idx < blocks) {
        run_block(idx, n, blocks, *job);
        std::lock_guard lock(mu_);
        if (--pending_ == 0) cv_done_.notify_one();
      }
    }
  }

  std::size_t n_threads_;
  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_start_;
  std::condition_variable cv_done_;
  const std::function<void(std::size_t, std::size_t)>* job_ = nullptr;
  std::size_t job_n_ = 0;
  std::size_t job_blocks_ = 0;
  std::size_t pending_ = 0;
  std::size_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace tacbench
