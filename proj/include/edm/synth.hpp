#ifndef EDM_SYNTH_HPP
#define EDM_SYNTH_HPP

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"

namespace edm::synth
{

inline constexpr std::size_t logistic_transient = 300;

struct CouplingParams {
    /// Effect of y on x.
    double beta_xy = 0.0;
    /// Effect of x on y.
    double beta_yx = 0.0;
    double r_x = 3.8;
    double r_y = 3.8;
};

namespace detail
{

/// Per-stream generator so that pair p does not depend on how many pairs
/// were requested.
inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t attempt = 0)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream_id),
                      static_cast<std::uint32_t>(attempt)};
    return std::mt19937_64(seq);
}

/// One trajectory of the two-species map, transient removed. Returns false
/// if the orbit leaves [0, 1].
inline bool coupled_trajectory(const CouplingParams &p, std::size_t length, std::mt19937_64 &rng,
                               std::vector<double> &xs, std::vector<double> &ys)
{
    std::uniform_real_distribution<double> init(0.1, 0.9);
    double x = init(rng);
    double y = init(rng);
    xs.clear();
    ys.clear();
    for (std::size_t t = 0; t < logistic_transient + length; t++) {
        if (t >= logistic_transient) {
            xs.push_back(x);
            ys.push_back(y);
        }
        const double nx = x * (p.r_x * (1.0 - x) - p.beta_xy * y);
        const double ny = y * (p.r_y * (1.0 - y) - p.beta_yx * x);
        x = nx;
        y = ny;
        if (!(x >= 0.0 && x <= 1.0 && y >= 0.0 && y <= 1.0)) return false;
    }
    return true;
}

} // namespace detail

inline constexpr int max_reseed_attempts = 100;

/// n_pairs independent copies of the coupled logistic system. Columns are
/// ordered x0, y0, x1, y1, ...
inline TimeSeriesSet coupled_logistic(std::size_t n_pairs, std::size_t length,
                                      const CouplingParams &params, std::uint64_t seed)
{
    if (n_pairs == 0) throw std::invalid_argument("n_pairs must be positive");
    if (params.beta_xy < 0.0 || params.beta_xy > 0.5 || params.beta_yx < 0.0 ||
        params.beta_yx > 0.5) {
        throw std::invalid_argument("coupling strengths must lie in [0, 0.5]");
    }
    if (params.r_x <= 0.0 || params.r_x > 4.0 || params.r_y <= 0.0 || params.r_y > 4.0) {
        throw std::invalid_argument("growth rates must lie in (0, 4]");
    }

    std::vector<std::vector<double>> columns;
    std::vector<std::string> names;
    std::vector<double> xs, ys;
    for (std::size_t p = 0; p < n_pairs; p++) {
        bool ok = false;
        for (int attempt = 0; attempt < max_reseed_attempts && !ok; attempt++) {
            auto rng = detail::stream(seed, p, static_cast<std::uint64_t>(attempt));
            ok = detail::coupled_trajectory(params, length, rng, xs, ys);
        }
        if (!ok) {
            throw std::runtime_error("coupled_logistic: trajectory diverged after " +
                                     std::to_string(max_reseed_attempts) + " attempts");
        }
        columns.push_back(xs);
        columns.push_back(ys);
        names.push_back("x" + std::to_string(p));
        names.push_back("y" + std::to_string(p));
    }
    return TimeSeriesSet(std::move(columns), std::move(names));
}

/// i.i.d. standard normal entries.
inline TimeSeriesSet noise_dataset(std::size_t n, std::size_t length, std::uint64_t seed)
{
    std::vector<std::vector<double>> columns(n, std::vector<double>(length));
    for (std::size_t j = 0; j < n; j++) {
        auto rng = detail::stream(seed, j);
        std::normal_distribution<double> normal(0.0, 1.0);
        for (auto &v : columns[j]) v = normal(rng);
    }
    return TimeSeriesSet(std::move(columns));
}

/// Independent chaotic logistic maps with per-series growth rates, used as
/// stand-in data for scaling benchmarks.
inline TimeSeriesSet scaled_dummy(std::size_t n, std::size_t length, std::uint64_t seed)
{
    std::vector<std::vector<double>> columns(n);
    std::vector<double> ys;
    for (std::size_t j = 0; j < n; j++) {
        bool ok = false;
        for (int attempt = 0; attempt < max_reseed_attempts && !ok; attempt++) {
            auto rng = detail::stream(seed, j, static_cast<std::uint64_t>(attempt));
            std::uniform_real_distribution<double> rate(3.7, 3.95);
            const CouplingParams p{0.0, 0.0, rate(rng), 3.8};
            ok = detail::coupled_trajectory(p, length, rng, columns[j], ys);
        }
        if (!ok) throw std::runtime_error("scaled_dummy: trajectory diverged");
    }
    return TimeSeriesSet(std::move(columns));
}

} // namespace edm::synth

#endif // EDM_SYNTH_HPP
