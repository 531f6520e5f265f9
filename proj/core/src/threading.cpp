#include "vldet/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace vldet {

int worker_count() {
  static int count = [] {
    if (const char* env = std::getenv("VLDET_THREADS")) {
      int n = std::atoi(env);
      if (n > 0) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }();
  return count;
}

namespace {

// True while this thread is executing pool work; nested parallel_for calls
// run inline instead of re-entering the pool, so ops stay usable from
// already-parallel callers (for example scene-parallel evaluation).
thread_local bool tls_in_pool = false;

// Lazily started pool. Chunks are handed out through an atomic cursor, so
// each index range is executed exactly once no matter which thread grabs it.
// A new job is only published once every worker is parked, which keeps the
// job state free of cross-generation races.
class Pool {
 public:
  explicit Pool(int workers) : workers_(workers) {
    for (int i = 1; i < workers_; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(std::size_t n, std::size_t grain,
           const std::function<void(std::size_t, std::size_t)>& fn) {
    std::size_t chunk = std::max<std::size_t>(grain, 1);
    std::size_t n_tasks = (n + chunk - 1) / chunk;
    std::size_t max_tasks = static_cast<std::size_t>(workers_) * 4;
    if (n_tasks > max_tasks) {
      chunk = (n + max_tasks - 1) / max_tasks;
      n_tasks = (n + chunk - 1) / chunk;
    }
    if (n_tasks <= 1) {
      fn(0, n);
      return;
    }
    std::lock_guard<std::mutex> run_lock(run_mu_);
    {
      std::unique_lock<std::mutex> lk(mu_);
      idle_cv_.wait(lk, [this] { return idle_ == workers_ - 1; });
      fn_ = &fn;
      total_ = n;
      chunk_ = chunk;
      next_.store(0, std::memory_order_relaxed);
      pending_ = static_cast<int>(n_tasks);
      generation_++;
    }
    cv_.notify_all();
    tls_in_pool = true;
    drain();
    tls_in_pool = false;
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    fn_ = nullptr;
  }

 private:
  void drain() {
    for (;;) {
      std::size_t i = next_.fetch_add(1, std::memory_order_relaxed);
      std::size_t begin = i * chunk_;
      if (begin >= total_) break;
      std::size_t end = std::min(total_, begin + chunk_);
      (*fn_)(begin, end);
      std::lock_guard<std::mutex> lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
  }

  void worker_loop() {
    uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock<std::mutex> lk(mu_);
        idle_++;
        idle_cv_.notify_all();
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        idle_--;
      }
      tls_in_pool = true;
      drain();
      tls_in_pool = false;
    }
  }

  int workers_;
  std::vector<std::thread> threads_;
  std::mutex run_mu_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_, idle_cv_;
  const std::function<void(std::size_t, std::size_t)>* fn_ = nullptr;
  std::size_t total_ = 0, chunk_ = 1;
  std::atomic<std::size_t> next_{0};
  int pending_ = 0;
  int idle_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t grain) {
  if (n == 0) return;
  if (tls_in_pool || worker_count() <= 1 || n <= grain) {
    fn(0, n);
    return;
  }
  static Pool pool(worker_count());
  pool.run(n, grain, fn);
}

}  // namespace vldet
