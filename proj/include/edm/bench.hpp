#ifndef EDM_BENCH_HPP
#define EDM_BENCH_HPP

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ccm.hpp"
#include "io.hpp"
#include "profile.hpp"
#include "scheduler.hpp"
#include "synth.hpp"

namespace edm::bench
{

/// Embedding range used by the scaling benchmarks. Small enough that the
/// largest configurations finish at desk scale; the L and N trends do not
/// depend on it.
inline constexpr int default_E_max = 3;

struct Sample {
    std::string mode;
    std::size_t series = 0;
    std::size_t length = 0;
    std::size_t threads = 1;
    int run = 0;
    double total = 0.0;
    double knn = 0.0;
    double lookup = 0.0;
    double corrcoef = 0.0;
    double io = 0.0;
};

/// One timed end-to-end local run on a dummy dataset, including writing the
/// causal map to `scratch`.
inline Sample time_run(const TimeSeriesSet &ts, const CcmParams &params, std::size_t threads,
                       const std::filesystem::path &scratch)
{
    Profile profile;
    const auto start = std::chrono::steady_clock::now();
    const auto result = run_local(ts, params, {.threads = threads, .profile = &profile});
    {
        EDM_PROFILE_SCOPE(&profile, io_ns);
        io::write_causal_map(scratch, result.map);
    }
    const double total =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::filesystem::remove(scratch);

    Sample s;
    s.series = ts.count();
    s.length = ts.length();
    s.threads = threads;
    s.total = total;
    s.knn = Profile::seconds(profile.knn_ns);
    s.lookup = Profile::seconds(profile.lookup_ns);
    s.corrcoef = Profile::seconds(profile.corrcoef_ns);
    s.io = Profile::seconds(profile.io_ns);
    return s;
}

struct Config {
    std::string mode; // scale-n, scale-l or workers
    std::vector<std::size_t> series;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> threads;
    int runs = 5;
    int E_max = default_E_max;
    std::uint64_t seed = 42;
    std::filesystem::path scratch = std::filesystem::temp_directory_path() / "edm-bench.edm";
};

/// Defaults: scale-l doubles L at N = 200, scale-n doubles N at L = 1000,
/// workers varies the thread count at N = 500, L = 1000.
inline Config default_config(const std::string &mode)
{
    Config c;
    c.mode = mode;
    if (mode == "scale-l") {
        c.series = {200};
        c.lengths = {2000, 4000};
        c.threads = {1};
    } else if (mode == "scale-n") {
        c.series = {500, 1000};
        c.lengths = {1000};
        c.threads = {1};
    } else if (mode == "workers") {
        c.series = {500};
        c.lengths = {1000};
        c.threads = {1, 2, 4, 8};
        c.runs = 3;
    } else {
        throw std::invalid_argument("unknown bench mode '" + mode + "'");
    }
    return c;
}

inline std::vector<Sample> run(const Config &c, std::ostream *progress = nullptr)
{
    std::vector<Sample> out;
    for (std::size_t n : c.series) {
        for (std::size_t len : c.lengths) {
            const auto ts = synth::scaled_dummy(n, len, c.seed);
            for (std::size_t p : c.threads) {
                for (int r = 0; r < c.runs; r++) {
                    auto s = time_run(ts, {c.E_max, 1, true}, p, c.scratch);
                    s.mode = c.mode;
                    s.run = r;
                    if (progress) {
                        *progress << c.mode << " N=" << n << " L=" << len << " P=" << p
                                  << " run " << r << ": " << s.total << " s\n";
                    }
                    out.push_back(s);
                }
            }
        }
    }
    return out;
}

inline double median(std::vector<double> v)
{
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

inline void write_csv(std::ostream &out, const std::vector<Sample> &samples)
{
    out << "mode,series,length,threads,run,total_s,knn_s,lookup_s,corrcoef_s,io_s\n";
    for (const auto &s : samples) {
        out << s.mode << ',' << s.series << ',' << s.length << ',' << s.threads << ',' << s.run
            << ',' << s.total << ',' << s.knn << ',' << s.lookup << ',' << s.corrcoef << ','
            << s.io << '\n';
    }
}

} // namespace edm::bench

#endif // EDM_BENCH_HPP
