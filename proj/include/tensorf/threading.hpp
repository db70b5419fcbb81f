#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace tensorf {

/// Worker threads for the run; TENSORF_THREADS overrides hardware detection.
inline int default_thread_count() {
    if (const char* env = std::getenv("TENSORF_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Persistent pool running statically partitioned index ranges. Partitioning
/// depends only on (n, thread count), so for a fixed thread count the
/// work-to-worker assignment is reproducible, which keeps per-worker
/// accumulation buffers mergeable in a deterministic order.
class ThreadPool {
  public:
    explicit ThreadPool(int threads = default_thread_count()) {
        thread_count_ = threads < 1 ? 1 : threads;
        for (int w = 1; w < thread_count_; ++w)
            workers_.emplace_back([this, w] { worker_loop(w); });
    }

    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            stop_ = true;
            ++generation_;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    int thread_count() const { return thread_count_; }

    /// Runs fn(worker, begin, end) over [0, n) split into thread_count()
    /// contiguous ranges; the calling thread handles range 0. Returns after
    /// every range completes.
    void parallel_ranges(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        if (thread_count_ == 1) {
            fn(0, 0, n);
            return;
        }
        {
            std::lock_guard<std::mutex> lock(mutex_);
            task_ = &fn;
            task_n_ = n;
            pending_ = thread_count_ - 1;
            error_ = nullptr;
            ++generation_;
        }
        cv_.notify_all();
        run_range(fn, n, 0);
        std::unique_lock<std::mutex> lock(mutex_);
        done_cv_.wait(lock, [this] { return pending_ == 0; });
        task_ = nullptr;
        if (error_) std::rethrow_exception(error_);
    }

  private:
    void run_range(const std::function<void(int, std::size_t, std::size_t)>& fn, std::size_t n,
                   int worker) {
        const std::size_t begin = n * static_cast<std::size_t>(worker) /
                                  static_cast<std::size_t>(thread_count_);
        const std::size_t end = n * (static_cast<std::size_t>(worker) + 1) /
                                static_cast<std::size_t>(thread_count_);
        if (begin >= end) return;
        try {
            fn(worker, begin, end);
        } catch (...) {
            std::lock_guard<std::mutex> lock(mutex_);
            if (!error_) error_ = std::current_exception();
        }
    }

    void worker_loop(int worker) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(int, std::size_t, std::size_t)>* task = nullptr;
            std::size_t n = 0;
            {
                std::unique_lock<std::mutex> lock(mutex_);
                cv_.wait(lock, [&] { return generation_ != seen; });
                seen = generation_;
                if (stop_) return;
                task = task_;
                n = task_n_;
            }
            if (task) run_range(*task, n, worker);
            {
                std::lock_guard<std::mutex> lock(mutex_);
                if (--pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    int thread_count_ = 1;
    std::vector<std::thread> workers_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(int, std::size_t, std::size_t)>* task_ = nullptr;
    std::size_t task_n_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    std::exception_ptr error_ = nullptr;
    bool stop_ = false;
};

}  // namespace tensorf
