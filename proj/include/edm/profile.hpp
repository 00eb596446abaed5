#ifndef EDM_PROFILE_HPP
#define EDM_PROFILE_HPP

#include <atomic>
#include <chrono>
#include <cstdint>

namespace edm
{

/// Accumulated wall time per kernel category, summed across threads.
struct Profile {
    std::atomic<std::int64_t> knn_ns{0};
    std::atomic<std::int64_t> lookup_ns{0};
    std::atomic<std::int64_t> corrcoef_ns{0};
    std::atomic<std::int64_t> io_ns{0};

    static double seconds(const std::atomic<std::int64_t> &ns) { return ns.load() * 1e-9; }
};

/// Adds the lifetime of this object to a counter; no-op on nullptr.
class ScopedTimer
{
public:
    explicit ScopedTimer(std::atomic<std::int64_t> *counter)
        : counter_(counter), start_(std::chrono::steady_clock::now())
    {
    }
    ScopedTimer(const ScopedTimer &) = delete;
    ScopedTimer &operator=(const ScopedTimer &) = delete;
    ~ScopedTimer()
    {
        if (counter_) {
            const auto elapsed = std::chrono::steady_clock::now() - start_;
            counter_->fetch_add(
                std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed).count());
        }
    }

private:
    std::atomic<std::int64_t> *counter_;
    std::chrono::steady_clock::time_point start_;
};

#define EDM_PROFILE_SCOPE(profile, field) \
    ::edm::ScopedTimer edm_scoped_timer_##field((profile) ? &(profile)->field : nullptr)

} // namespace edm

#endif // EDM_PROFILE_HPP
