// Copyright 2026 The sg2m Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sg2m {

/// Worker count: SG2M_THREADS if set (>= 1), else hardware concurrency.
inline int configured_threads() {
    static const int n = [] {
        int hw = static_cast<int>(std::thread::hardware_concurrency());
        if (hw < 1) hw = 1;
        if (const char* env = std::getenv("SG2M_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return std::min(v, 256);
        }
        return hw;
    }();
    return n;
}

namespace detail {

// Fixed-size pool. Each parallel_for call splits [0, n) into contiguous
// chunks; every index is processed by exactly one worker, so results never
// depend on the worker count as long as the body writes disjoint outputs.
class ThreadPool {
public:
    explicit ThreadPool(int workers) {
        for (int i = 0; i < workers; ++i) threads_.emplace_back([this] { loop(); });
    }
    ~ThreadPool() {
        {
            std::lock_guard lk(mu_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    int size() const { return static_cast<int>(threads_.size()) + 1; }

    void run(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body) {
        std::unique_lock call_lock(call_mu_);
        const std::size_t parts = std::min<std::size_t>(n, static_cast<std::size_t>(size()));
        {
            std::lock_guard lk(mu_);
            body_ = &body;
            n_ = n;
            parts_ = parts;
            next_part_ = 1;  // part 0 runs on the calling thread
            pending_ = parts - 1;
            ++generation_;
        }
        cv_.notify_all();
        run_part(0);
        std::unique_lock lk(mu_);
        done_cv_.wait(lk, [this] { return pending_ == 0; });
        body_ = nullptr;
    }

private:
    void run_part(std::size_t p) {
        const std::size_t begin = n_ * p / parts_;
        const std::size_t end = n_ * (p + 1) / parts_;
        if (begin < end) (*body_)(begin, end);
    }

    void loop() {
        std::size_t seen = 0;
        for (;;) {
            std::size_t part;
            {
                std::unique_lock lk(mu_);
                cv_.wait(lk, [&] { return stop_ || (generation_ != seen && next_part_ < parts_); });
                if (stop_) return;
                part = next_part_++;
                if (next_part_ >= parts_) seen = generation_;
            }
            run_part(part);
            {
                std::lock_guard lk(mu_);
                if (--pending_ == 0) done_cv_.notify_one();
            }
        }
    }

    std::vector<std::thread> threads_;
    std::mutex call_mu_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable done_cv_;
    const std::function<void(std::size_t, std::size_t)>* body_ = nullptr;
    std::size_t n_ = 0, parts_ = 1, next_part_ = 0, pending_ = 0, generation_ = 0;
    bool stop_ = false;
};

inline ThreadPool& pool() {
    static ThreadPool p(configured_threads() - 1);
    return p;
}

}  // namespace detail

/// Runs body(begin, end) over disjoint sub-ranges of [0, n). Falls back to a
/// direct call when only one worker is configured or the range is tiny.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body,
                         std::size_t min_parallel = 2) {
    if (n == 0) return;
    if (configured_threads() <= 1 || n < min_parallel) {
        body(0, n);
        return;
    }
    detail::pool().run(n, body);
}

}  // namespace sg2m
