#ifndef EDM_PARALLEL_HPP
#define EDM_PARALLEL_HPP

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

namespace edm
{

/// Fixed-size worker pool for fork-join loops. Iterations are handed out in
/// chunks from a shared counter, so faster threads pick up more chunks.
class ThreadPool
{
public:
    explicit ThreadPool(std::size_t threads = 1) : size_(std::max<std::size_t>(threads, 1))
    {
        for (std::size_t i = 1; i < size_; i++) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    ThreadPool(const ThreadPool &) = delete;
    ThreadPool &operator=(const ThreadPool &) = delete;

    ~ThreadPool()
    {
        {
            std::lock_guard lock(mutex_);
            stopping_ = true;
        }
        wake_.notify_all();
        for (auto &w : workers_) w.join();
    }

    std::size_t size() const { return size_; }

    /// Calls body(i) for i in [0, n). The calling thread participates.
    /// Not reentrant: nested calls from inside body run serially.
    void parallel_for(std::size_t n, const std::function<void(std::size_t)> &body,
                      std::size_t grain = 1)
    {
        if (n == 0) return;
        grain = std::max<std::size_t>(grain, 1);
        if (size_ == 1 || n <= grain || inside_) {
            for (std::size_t i = 0; i < n; i++) body(i);
            return;
        }

        std::unique_lock submit(submit_mutex_);
        Job job;
        job.body = &body;
        job.n = n;
        job.grain = grain;
        {
            std::lock_guard lock(mutex_);
            job_ = &job;
            generation_++;
            active_ = workers_.size();
        }
        wake_.notify_all();

        run_chunks(job);

        std::unique_lock lock(mutex_);
        done_.wait(lock, [&] { return active_ == 0; });
        job_ = nullptr;
        if (job.error) std::rethrow_exception(job.error);
    }

private:
    struct Job {
        const std::function<void(std::size_t)> *body = nullptr;
        std::size_t n = 0;
        std::size_t grain = 1;
        std::atomic<std::size_t> next{0};
        std::exception_ptr error;
        std::mutex error_mutex;
    };

    void run_chunks(Job &job)
    {
        const bool was_inside = std::exchange(inside_, true);
        for (;;) {
            const std::size_t begin = job.next.fetch_add(job.grain);
            if (begin >= job.n) break;
            const std::size_t end = std::min(begin + job.grain, job.n);
            try {
                for (std::size_t i = begin; i < end; i++) (*job.body)(i);
            } catch (...) {
                std::lock_guard lock(job.error_mutex);
                if (!job.error) job.error = std::current_exception();
                job.next.store(job.n);
            }
        }
        inside_ = was_inside;
    }

    void worker_loop()
    {
        std::size_t seen = 0;
        for (;;) {
            Job *job = nullptr;
            {
                std::unique_lock lock(mutex_);
                wake_.wait(lock, [&] { return stopping_ || generation_ != seen; });
                if (stopping_) return;
                seen = generation_;
                job = job_;
            }
            run_chunks(*job);
            {
                std::lock_guard lock(mutex_);
                active_--;
            }
            done_.notify_one();
        }
    }

    std::size_t size_;
    std::vector<std::thread> workers_;
    std::mutex submit_mutex_;
    std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable done_;
    Job *job_ = nullptr;
    std::size_t generation_ = 0;
    std::size_t active_ = 0;
    bool stopping_ = false;
    static inline thread_local bool inside_ = false;
};

/// Runs body over [0, n) on pool if given, serially otherwise.
inline void parallel_for(ThreadPool *pool, std::size_t n,
                         const std::function<void(std::size_t)> &body,
                         std::size_t grain = 1)
{
    if (pool) {
        pool->parallel_for(n, body, grain);
    } else {
        for (std::size_t i = 0; i < n; i++) body(i);
    }
}

} // namespace edm

#endif // EDM_PARALLEL_HPP
