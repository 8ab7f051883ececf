#pragma once

#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace sg {

// Persistent worker pool for data-parallel loops. Tasks write disjoint
// output slices, so results are identical for any worker count.
class ThreadPool {
 public:
  static ThreadPool& instance();

  // Global worker count used by parallel_for (>= 1). Callers set it once at
  // startup (CLI --workers); changing it mid-run is allowed between loops.
  static void set_workers(int n);
  static int workers();

  // Runs fn(i) for i in [0, n). Blocks until done. Nested calls from inside
  // a worker run inline on the calling thread.
  void run(size_t n, const std::function<void(size_t)>& fn);

  ~ThreadPool();

 private:
  ThreadPool();
  void worker_loop();

  struct Job {
    const std::function<void(size_t)>* fn = nullptr;
    std::atomic<size_t> next{0};
    size_t count = 0;
    std::atomic<size_t> done{0};
  };

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_work_;
  std::condition_variable cv_done_;
  std::shared_ptr<Job> job_;
  uint64_t job_seq_ = 0;
  bool stop_ = false;
};

inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  ThreadPool::instance().run(n, fn);
}

}  // namespace sg
