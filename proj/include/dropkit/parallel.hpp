#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>

namespace dropkit::detail {

// One persistent worker thread paired with the caller. Persistence matters:
// the conv scratch buffers are thread_local, so a fresh thread per call would
// reallocate them every time.
class PairWorker {
 public:
  static PairWorker& instance() {
    static PairWorker w;
    return w;
  }

  // Runs `b` on the worker while the caller runs `a`; returns when both are
  // done. Callers are serialized.
  void run_pair(const std::function<void()>& a, const std::function<void()>& b) {
    std::lock_guard<std::mutex> caller_lock(caller_mutex_);
    {
      std::unique_lock<std::mutex> lk(m_);
      job_ = &b;
    }
    cv_.notify_one();
    a();
    std::unique_lock<std::mutex> lk(m_);
    done_cv_.wait(lk, [&] { return job_ == nullptr && !running_; });
  }

  PairWorker(const PairWorker&) = delete;
  PairWorker& operator=(const PairWorker&) = delete;

 private:
  PairWorker() : thread_([this] { loop(); }) {}

  ~PairWorker() {
    {
      std::unique_lock<std::mutex> lk(m_);
      stop_ = true;
    }
    cv_.notify_one();
    thread_.join();
  }

  void loop() {
    for (;;) {
      const std::function<void()>* job = nullptr;
      {
        std::unique_lock<std::mutex> lk(m_);
        cv_.wait(lk, [&] { return job_ != nullptr || stop_; });
        if (stop_) return;
        job = job_;
        running_ = true;
      }
      (*job)();
      {
        std::unique_lock<std::mutex> lk(m_);
        job_ = nullptr;
        running_ = false;
      }
      done_cv_.notify_all();
    }
  }

  std::mutex caller_mutex_;
  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  const std::function<void()>* job_ = nullptr;
  bool running_ = false;
  bool stop_ = false;
  std::thread thread_;
};

}  // namespace dropkit::detail
