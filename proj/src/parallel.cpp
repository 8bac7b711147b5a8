#include "detnet/parallel.hpp"

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

namespace detnet {
namespace {

int detect_max_threads() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw <= 0) hw = 1;
  if (const char* env = std::getenv("DNET_THREADS")) {
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end != env && v > 0) hw = std::min<long>(hw, v);
    if (end != env && v == 1) return 1;
  }
  return hw;
}

// Minimal persistent pool; spawning threads per conv call would dominate the
// runtime of the many tiny convolutions in toy training.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { work(); });
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

  // Blocks until all tasks finish; the calling thread works through the
  // queue alongside the pool workers.
  void run(std::vector<std::function<void()>> tasks) {
    {
      std::lock_guard<std::mutex> lk(mu_);
      for (auto& t : tasks) queue_.push_back(std::move(t));
      pending_ += tasks.size();
    }
    cv_.notify_all();
    for (;;) {
      std::function<void()> task;
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (queue_.empty()) break;
        task = std::move(queue_.back());
        queue_.pop_back();
      }
      task();
      std::lock_guard<std::mutex> lk(mu_);
      if (--pending_ == 0) done_cv_.notify_all();
    }
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
  }

 private:
  void work() {
    for (;;) {
      std::function<void()> task;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !queue_.empty(); });
        if (stop_ && queue_.empty()) return;
        task = std::move(queue_.back());
        queue_.pop_back();
      }
      task();
      {
        std::lock_guard<std::mutex> lk(mu_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  std::vector<std::function<void()>> queue_;
  std::vector<std::thread> threads_;
  size_t pending_ = 0;
  bool stop_ = false;
};

Pool* pool_instance(int workers) {
  static Pool pool(workers);
  return &pool;
}

}  // namespace

int max_threads() {
  static int n = detect_max_threads();
  return n;
}

void parallel_for(std::int64_t count,
                  const std::function<void(std::int64_t, std::int64_t)>& fn,
                  std::int64_t min_per_thread) {
  if (count <= 0) return;
  int threads = max_threads();
  std::int64_t usable =
      std::min<std::int64_t>(threads, std::max<std::int64_t>(1, count / std::max<std::int64_t>(1, min_per_thread)));
  if (usable <= 1) {
    fn(0, count);
    return;
  }
  std::int64_t chunk = (count + usable - 1) / usable;
  std::vector<std::function<void()>> tasks;
  for (std::int64_t begin = 0; begin < count; begin += chunk) {
    std::int64_t end = std::min(begin + chunk, count);
    tasks.push_back([=, &fn] { fn(begin, end); });
  }
  pool_instance(threads - 1)->run(std::move(tasks));
}

}  // namespace detnet
