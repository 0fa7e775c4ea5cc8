#pragma once
// Shared basics: error type, string formatting, deterministic RNG, thread pool.

#include <atomic>
#include <condition_variable>
#include <cstdarg>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace bisplat {

// Validation / configuration problems. CLI maps this to exit code 1.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Runtime or numeric failures (non-finite loss, suite failures). Exit code 2.
struct RuntimeFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string strf(const char* fmt, ...) {
  va_list ap;
  va_start(ap, fmt);
  va_list ap2;
  va_copy(ap2, ap);
  int n = std::vsnprintf(nullptr, 0, fmt, ap);
  va_end(ap);
  std::string s(n > 0 ? size_t(n) : 0, '\0');
  if (n > 0) std::vsnprintf(s.data(), s.size() + 1, fmt, ap2);
  va_end(ap2);
  return s;
}

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

// splitmix64. Identical sequences on every platform, unlike the std
// distributions, so seeds stay meaningful across compilers.
struct Rng {
  uint64_t state;

  explicit Rng(uint64_t seed = 1) : state(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // [0,1)
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  int64_t next_below(int64_t n) { return int64_t(next_u64() % uint64_t(n)); }
};

// Chunked parallel-for over a persistent pool. Chunks are contiguous and
// disjoint; callers must write only outputs owned by their index range, which
// keeps every result independent of the worker count.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  void set_workers(int n) {
    if (n < 1) n = 1;
    std::lock_guard<std::mutex> outer(run_mutex_);
    stop_threads();
    n_workers_ = n;
  }

  int workers() const { return n_workers_; }

  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
    if (n <= 0) return;
    if (n_workers_ == 1 || inside_pool_ || n == 1) {
      fn(0, n);
      return;
    }
    std::lock_guard<std::mutex> outer(run_mutex_);
    ensure_threads();
    int64_t chunk = (n + n_workers_ * 4 - 1) / (n_workers_ * 4);
    if (chunk < 1) chunk = 1;
    {
      std::lock_guard<std::mutex> lk(m_);
      job_fn_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      next_chunk_.store(0);
      pending_ = int((n + chunk - 1) / chunk);
      ++generation_;
    }
    cv_.notify_all();
    work(fn, n, chunk);  // caller participates
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

  ~ThreadPool() { stop_threads(); }

 private:
  void ensure_threads() {
    if (!threads_.empty()) return;
    stopping_ = false;
    for (int i = 0; i < n_workers_ - 1; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  void stop_threads() {
    {
      std::lock_guard<std::mutex> lk(m_);
      stopping_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
    threads_.clear();
  }

  void worker_loop() {
    inside_pool_ = true;
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int64_t, int64_t)>* fn = nullptr;
      int64_t n = 0, chunk = 0;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return stopping_ || generation_ != seen; });
        seen = generation_;
        if (stopping_) return;
        fn = job_fn_;
        n = job_n_;
        chunk = job_chunk_;
      }
      if (fn) work(*fn, n, chunk);
    }
  }

  void work(const std::function<void(int64_t, int64_t)>& fn, int64_t n, int64_t chunk) {
    for (;;) {
      int64_t c = next_chunk_.fetch_add(1);
      int64_t begin = c * chunk;
      if (begin >= n) break;
      int64_t end = std::min(n, begin + chunk);
      fn(begin, end);
      std::lock_guard<std::mutex> lk(m_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  int n_workers_ = int(std::thread::hardware_concurrency() ? std::thread::hardware_concurrency() : 1);
  std::vector<std::thread> threads_;
  std::mutex run_mutex_;  // one parallel_for at a time
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0, job_chunk_ = 0;
  std::atomic<int64_t> next_chunk_{0};
  int pending_ = 0;
  uint64_t generation_ = 0;
  bool stopping_ = false;
  static thread_local bool inside_pool_;
};

inline thread_local bool ThreadPool::inside_pool_ = false;

inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  ThreadPool::instance().parallel_for(n, fn);
}

}  // namespace bisplat
