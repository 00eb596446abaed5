#ifndef EDM_SCHEDULER_HPP
#define EDM_SCHEDULER_HPP

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "ccm.hpp"
#include "core.hpp"
#include "parallel.hpp"
#include "profile.hpp"
#include "simplex.hpp"

namespace edm
{

enum class TaskKind : std::uint8_t { simplex = 0, ccm_row = 1 };

inline const char *to_string(TaskKind k) { return k == TaskKind::simplex ? "simplex" : "ccm_row"; }

/// One library series for one phase. A re-queued task keeps its id, so a
/// late result from a lost worker is recognized as a duplicate.
struct Task {
    std::uint64_t id = 0;
    TaskKind kind = TaskKind::simplex;
    std::uint32_t series = 0;
};

using WorkerId = std::uint64_t;

/// Self-scheduling queue: workers pull one task at a time and report back.
/// All members are serialized by an internal mutex.
class WorkQueue
{
public:
    void push(const Task &task)
    {
        std::lock_guard lock(mutex_);
        pending_.push_back(task);
        total_++;
    }

    std::optional<Task> acquire(WorkerId worker)
    {
        std::lock_guard lock(mutex_);
        if (pending_.empty()) return std::nullopt;
        Task t = pending_.front();
        pending_.pop_front();
        in_flight_[t.id] = {t, worker};
        dispatches_[t.id]++;
        return t;
    }

    /// True for the first completion of an in-flight task; duplicates and
    /// unknown ids are ignored.
    bool complete(std::uint64_t task_id)
    {
        std::lock_guard lock(mutex_);
        auto it = in_flight_.find(task_id);
        if (it == in_flight_.end() || completed_.count(task_id)) return false;
        in_flight_.erase(it);
        completed_.insert({task_id, true});
        return true;
    }

    /// Puts every in-flight task of a lost worker back at the queue front.
    std::size_t release(WorkerId worker)
    {
        std::lock_guard lock(mutex_);
        std::size_t n = 0;
        for (auto it = in_flight_.begin(); it != in_flight_.end();) {
            if (it->second.worker == worker) {
                pending_.push_front(it->second.task);
                it = in_flight_.erase(it);
                n++;
            } else {
                ++it;
            }
        }
        return n;
    }

    bool drained() const
    {
        std::lock_guard lock(mutex_);
        return completed_.size() == total_;
    }

    std::size_t size() const
    {
        std::lock_guard lock(mutex_);
        return total_;
    }

    /// Number of times each task id was handed out.
    std::map<std::uint64_t, std::size_t> dispatch_counts() const
    {
        std::lock_guard lock(mutex_);
        return dispatches_;
    }

private:
    struct Assignment {
        Task task;
        WorkerId worker;
    };

    mutable std::mutex mutex_;
    std::deque<Task> pending_;
    std::map<std::uint64_t, Assignment> in_flight_;
    std::map<std::uint64_t, bool> completed_;
    std::map<std::uint64_t, std::size_t> dispatches_;
    std::size_t total_ = 0;
};

enum class RunPhase { simplex, broadcast, ccm, finished };

/// Two-phase task bookkeeping. CCM rows are queued only by open_ccm(), which
/// the owner calls once the complete optE vector has been distributed.
class TaskBoard
{
public:
    explicit TaskBoard(std::size_t n_series) : n_(n_series)
    {
        for (std::size_t i = 0; i < n_; i++) {
            simplex_.push({next_id_++, TaskKind::simplex, static_cast<std::uint32_t>(i)});
        }
        if (n_ == 0) phase_ = RunPhase::finished;
    }

    RunPhase phase() const
    {
        std::lock_guard lock(mutex_);
        return phase_;
    }

    std::size_t series() const { return n_; }

    /// Next task, or nullopt if none is available right now.
    std::optional<Task> try_acquire(WorkerId worker)
    {
        std::lock_guard lock(mutex_);
        return acquire_locked(worker);
    }

    /// Blocks until a task is available; nullopt once the run is finished.
    std::optional<Task> acquire(WorkerId worker)
    {
        std::unique_lock lock(mutex_);
        for (;;) {
            if (auto t = acquire_locked(worker)) return t;
            if (phase_ == RunPhase::finished) return std::nullopt;
            changed_.wait(lock);
        }
    }

    struct Completion {
        /// False for duplicates and unknown tasks.
        bool accepted = false;
        /// True for exactly the call that finished its phase.
        bool closed_phase = false;
    };

    /// Records a result. After the last simplex result the board moves to
    /// the broadcast phase.
    Completion complete(const Task &task)
    {
        std::lock_guard lock(mutex_);
        auto &queue = task.kind == TaskKind::simplex ? simplex_ : ccm_;
        if (phase_ == RunPhase::finished || !queue.complete(task.id)) return {};
        Completion c{true, queue.drained()};
        if (c.closed_phase) {
            phase_ = task.kind == TaskKind::simplex ? RunPhase::broadcast : RunPhase::finished;
        }
        changed_.notify_all();
        return c;
    }

    /// Stops handing out tasks; blocked acquirers return nullopt.
    void abort()
    {
        std::lock_guard lock(mutex_);
        phase_ = RunPhase::finished;
        aborted_ = true;
        changed_.notify_all();
    }

    bool aborted() const
    {
        std::lock_guard lock(mutex_);
        return aborted_;
    }

    /// Queues the CCM rows. Only valid in the broadcast phase.
    void open_ccm()
    {
        std::lock_guard lock(mutex_);
        if (phase_ != RunPhase::broadcast) {
            throw std::logic_error("open_ccm called before all simplex results arrived");
        }
        for (std::size_t i = 0; i < n_; i++) {
            ccm_.push({next_id_++, TaskKind::ccm_row, static_cast<std::uint32_t>(i)});
        }
        phase_ = RunPhase::ccm;
        changed_.notify_all();
    }

    /// Returns a lost worker's in-flight tasks to the queues.
    std::size_t release(WorkerId worker)
    {
        std::lock_guard lock(mutex_);
        const std::size_t n = simplex_.release(worker) + ccm_.release(worker);
        changed_.notify_all();
        return n;
    }

    std::map<std::uint64_t, std::size_t> dispatch_counts() const
    {
        std::lock_guard lock(mutex_);
        auto out = simplex_.dispatch_counts();
        for (const auto &[id, n] : ccm_.dispatch_counts()) out[id] = n;
        return out;
    }

private:
    std::optional<Task> acquire_locked(WorkerId worker)
    {
        switch (phase_) {
        case RunPhase::simplex: return simplex_.acquire(worker);
        case RunPhase::ccm: return ccm_.acquire(worker);
        default: return std::nullopt;
        }
    }

    std::size_t n_;
    mutable std::mutex mutex_;
    std::condition_variable changed_;
    RunPhase phase_ = RunPhase::simplex;
    bool aborted_ = false;
    WorkQueue simplex_;
    WorkQueue ccm_;
    std::uint64_t next_id_ = 0;
};

struct LocalOptions {
    std::size_t threads = 1;
    /// Pool size for per-E parallelism inside one task.
    std::size_t inner_threads = 1;
    Profile *profile = nullptr;
    RowSink on_row;
};

/// Single-process run: `threads` workers pull tasks from a shared board,
/// with the same phases and barrier as the distributed master.
inline CausalInference run_local(const TimeSeriesSet &ts, const CcmParams &params,
                                 const LocalOptions &options = {})
{
    const std::size_t n = ts.count();
    TaskBoard board(n);
    CausalInference result;
    result.embeddings.resize(n);
    result.map = CausalMap(n);
    std::vector<int> optE;
    std::vector<std::vector<SentinelEntry>> sentinels(n);
    std::exception_ptr error;
    std::mutex error_mutex;

    auto work = [&](WorkerId id) {
        std::optional<ThreadPool> pool;
        if (options.inner_threads > 1) pool.emplace(options.inner_threads);
        ThreadPool *inner = pool ? &*pool : nullptr;
        try {
            while (auto task = board.acquire(id)) {
                const std::size_t i = task->series;
                if (task->kind == TaskKind::simplex) {
                    result.embeddings[i] = find_optimal_E(ts.series(i), params.E_max, params.tau,
                                                          i, inner, options.profile);
                    if (board.complete(*task).closed_phase) {
                        // Everyone else is blocked in acquire until open_ccm.
                        optE = result.optE();
                        board.open_ccm();
                    }
                } else {
                    const auto tables = precompute_library_tables(
                        ts.series(i), params.E_max, params.tau, params.exclude_degenerate, i,
                        inner, options.profile);
                    auto row = ccm_row(tables, ts, optE, options.profile);
                    store_row(result.map, i, row);
                    if (options.on_row) options.on_row(i, row);
                    sentinels[i] = std::move(row.sentinels);
                    board.complete(*task);
                }
            }
        } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
            board.abort();
        }
    };

    const std::size_t threads = std::max<std::size_t>(options.threads, 1);
    std::vector<std::thread> workers;
    for (std::size_t w = 1; w < threads; w++) workers.emplace_back(work, w);
    work(0);
    for (auto &t : workers) t.join();
    if (error) std::rethrow_exception(error);

    for (auto &s : sentinels) {
        result.map.sentinels.insert(result.map.sentinels.end(), s.begin(), s.end());
    }
    return result;
}

} // namespace edm

#endif // EDM_SCHEDULER_HPP
