#ifndef EDM_SIMPLEX_HPP
#define EDM_SIMPLEX_HPP

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "knn.hpp"
#include "parallel.hpp"
#include "profile.hpp"

namespace edm
{

/// Forecast horizon used when searching for the embedding dimension.
inline constexpr int simplex_horizon = 1;

/// First ceil(L/2) samples are the library, the remaining floor(L/2) the target.
inline std::pair<Series, Series> split_library_target(Series series)
{
    if (series.size() < 2) {
        throw SeriesTooShort("series too short to split: length " +
                             std::to_string(series.size()));
    }
    const std::size_t library_length = (series.size() + 1) / 2;
    return {series.first(library_length), series.subspan(library_length)};
}

/// True when the split halves support simplex projection at this E: E + 1
/// library neighbors with a future, and at least two scored target points.
inline bool simplex_feasible(std::size_t length, int E, int tau, int Tp = simplex_horizon)
{
    const EmbeddingSpec spec{E, tau, Tp};
    const std::size_t library_length = (length + 1) / 2;
    const std::size_t target_length = length / 2;
    const std::size_t scored = spec.points(target_length) > static_cast<std::size_t>(Tp)
                                   ? spec.points(target_length) - Tp
                                   : 0;
    return knn_feasible(library_length, target_length, spec, false) && scored >= 2;
}

/// Largest E in [1, E_max] feasible for a series of this length, 0 if none.
inline int max_feasible_E(std::size_t length, int E_max, int tau, int Tp = simplex_horizon)
{
    int best = 0;
    for (int E = 1; E <= E_max; E++) {
        if (!simplex_feasible(length, E, tau, Tp)) break;
        best = E;
    }
    return best;
}

/// Splits and checks that every E up to E_max is usable; the error names the
/// first E that is not.
inline std::pair<Series, Series> split_library_target(Series series, int E_max, int tau)
{
    auto halves = split_library_target(series);
    for (int E = 1; E <= E_max; E++) {
        if (!simplex_feasible(series.size(), E, tau)) {
            throw SeriesTooShort("series of length " + std::to_string(series.size()) +
                                 " too short for E=" + std::to_string(E) +
                                 " with tau=" + std::to_string(tau));
        }
    }
    return halves;
}

struct SimplexPrediction {
    std::vector<double> predictions;
    std::vector<double> observed;
};

/// Forecasts target(t + Tp) as the weighted mean of the futures of the E + 1
/// nearest library points. Target points without an observation at t + Tp
/// are left out of both vectors.
inline SimplexPrediction simplex_predict(Series library, Series target,
                                         const EmbeddingSpec &spec,
                                         ThreadPool *pool = nullptr,
                                         Profile *profile = nullptr)
{
    KnnTable table;
    {
        EDM_PROFILE_SCOPE(profile, knn_ns);
        table = compute_knn_table(library, target, spec, {.pool = pool});
    }

    EDM_PROFILE_SCOPE(profile, lookup_ns);
    SimplexPrediction out;
    const auto Tp = static_cast<std::size_t>(spec.Tp);
    for (std::size_t i = 0; i < table.rows; i++) {
        const std::size_t t = table.first_time + i;
        if (t + Tp >= target.size()) break;
        const auto idx = table.index_row(i);
        const auto w = table.weight_row(i);
        double p = 0.0;
        for (std::size_t j = 0; j < table.k; j++) p += w[j] * library[idx[j] + Tp];
        out.predictions.push_back(p);
        out.observed.push_back(target[t + Tp]);
    }
    if (out.predictions.empty()) {
        throw SeriesTooShort("simplex_predict: no target point has an observation at horizon " +
                             std::to_string(spec.Tp));
    }
    return out;
}

/// Skill of simplex projection on the split series at one E.
inline double simplex_skill(Series series, int E, int tau, ThreadPool *pool = nullptr,
                            Profile *profile = nullptr)
{
    const auto [library, target] = split_library_target(series);
    const auto result = simplex_predict(library, target, {E, tau, simplex_horizon}, pool, profile);
    EDM_PROFILE_SCOPE(profile, corrcoef_ns);
    if (result.predictions.size() < 2) return undefined_rho;
    return pearson_rho(result.predictions, result.observed);
}

/// Evaluates E = 1..E_max and picks the most skillful one. Ties go to the
/// smaller E; undefined skills never win. E beyond what the series supports
/// are skipped and the result is marked truncated.
inline OptimalEmbedding find_optimal_E(Series series, int E_max, int tau,
                                       std::size_t series_id = 0,
                                       ThreadPool *pool = nullptr, Profile *profile = nullptr)
{
    if (E_max < 1) throw std::invalid_argument("E_max must be at least 1");
    if (tau < 1) throw std::invalid_argument("tau must be at least 1");

    OptimalEmbedding result;
    result.series_id = series_id;
    const int feasible = max_feasible_E(series.size(), E_max, tau);
    result.truncated = feasible < E_max;
    result.rho_by_E.assign(static_cast<std::size_t>(feasible), undefined_rho);

    parallel_for(pool, static_cast<std::size_t>(feasible), [&](std::size_t e) {
        result.rho_by_E[e] = simplex_skill(series, static_cast<int>(e) + 1, tau, nullptr, profile);
    });

    result.bestE = 1;
    result.rho = undefined_rho;
    for (int E = 1; E <= feasible; E++) {
        const double rho = result.rho_by_E[static_cast<std::size_t>(E - 1)];
        if (is_undefined(rho)) continue;
        if (is_undefined(result.rho) || rho > result.rho) {
            result.rho = rho;
            result.bestE = E;
        }
    }
    result.undefined = is_undefined(result.rho);
    return result;
}

} // namespace edm

#endif // EDM_SIMPLEX_HPP
