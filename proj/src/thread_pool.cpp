#include "servograsp/thread_pool.hpp"

#include <atomic>
#include <memory>

namespace sg {

namespace {
std::atomic<int> g_workers{0};  // 0 = not set yet, use hardware_concurrency
thread_local bool t_in_worker = false;
}  // namespace

ThreadPool& ThreadPool::instance() {
  static ThreadPool pool;
  return pool;
}

void ThreadPool::set_workers(int n) { g_workers.store(n < 1 ? 1 : n); }

int ThreadPool::workers() {
  int n = g_workers.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

ThreadPool::ThreadPool() {
  unsigned hw = std::thread::hardware_concurrency();
  size_t n = hw > 1 ? hw - 1 : 0;  // calling thread participates too
  threads_.reserve(n);
  for (size_t i = 0; i < n; ++i) {
    threads_.emplace_back([this] { worker_loop(); });
  }
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_work_.notify_all();
  for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop() {
  t_in_worker = true;
  uint64_t seen = 0;
  for (;;) {
    std::shared_ptr<Job> job;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_work_.wait(lk, [&] { return stop_ || (job_ && job_seq_ != seen); });
      if (stop_) return;
      job = job_;
      seen = job_seq_;
    }
    for (;;) {
      size_t i = job->next.fetch_add(1);
      if (i >= job->count) break;
      (*job->fn)(i);
      job->done.fetch_add(1);
    }
    {
      // Synchronize the done-count update with waiters before notifying.
      std::lock_guard<std::mutex> lk(mu_);
    }
    cv_done_.notify_all();
  }
}

void ThreadPool::run(size_t n, const std::function<void(size_t)>& fn) {
  if (n == 0) return;
  int w = workers();
  if (t_in_worker || w <= 1 || n == 1 || threads_.empty()) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  auto job = std::make_shared<Job>();
  job->fn = &fn;
  job->count = n;
  {
    std::lock_guard<std::mutex> lk(mu_);
    job_ = job;
    ++job_seq_;
  }
  cv_work_.notify_all();
  for (;;) {
    size_t i = job->next.fetch_add(1);
    if (i >= job->count) break;
    fn(i);
    job->done.fetch_add(1);
  }
  {
    std::unique_lock<std::mutex> lk(mu_);
    cv_done_.wait(lk, [&] { return job->done.load() >= job->count; });
    job_.reset();
  }
}

}  // namespace sg
