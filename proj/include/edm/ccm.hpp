#ifndef EDM_CCM_HPP
#define EDM_CCM_HPP

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "core.hpp"
#include "knn.hpp"
#include "parallel.hpp"
#include "profile.hpp"
#include "simplex.hpp"

namespace edm
{

/// Cross mapping is simultaneous: the library manifold at time t estimates
/// the target value at the same t.
inline constexpr int ccm_horizon = 0;

struct CcmParams {
    int E_max = 20;
    int tau = 1;
    bool exclude_degenerate = true;
};

/// Neighbor tables of one library series for every feasible E in [1, E_max].
/// Built once and reused for every target series.
struct LibraryTables {
    std::size_t series_id = 0;
    int tau = 1;
    int E_max = 0;
    std::vector<KnnTable> tables;      // index E - 1; empty table when infeasible
    std::vector<int> infeasible;       // E values that could not be built

    const KnnTable *find(int E) const
    {
        if (E < 1 || E > E_max) return nullptr;
        const auto &t = tables[static_cast<std::size_t>(E - 1)];
        return t.k == static_cast<std::size_t>(E) + 1 ? &t : nullptr;
    }
};

inline LibraryTables precompute_library_tables(Series series, int E_max, int tau,
                                               bool exclude_degenerate = true,
                                               std::size_t series_id = 0,
                                               ThreadPool *pool = nullptr,
                                               Profile *profile = nullptr)
{
    if (E_max < 1) throw std::invalid_argument("E_max must be at least 1");
    if (tau < 1) throw std::invalid_argument("tau must be at least 1");

    EDM_PROFILE_SCOPE(profile, knn_ns);
    LibraryTables lt;
    lt.series_id = series_id;
    lt.tau = tau;
    lt.E_max = E_max;
    lt.tables.resize(static_cast<std::size_t>(E_max));

    std::vector<char> built(static_cast<std::size_t>(E_max), 0);
    // Larger E first: the cost grows with E, so the long tasks start early.
    parallel_for(pool, static_cast<std::size_t>(E_max), [&](std::size_t n) {
        const int E = E_max - static_cast<int>(n);
        const EmbeddingSpec spec{E, tau, ccm_horizon};
        if (!knn_feasible(series.size(), series.size(), spec, exclude_degenerate)) return;
        lt.tables[static_cast<std::size_t>(E - 1)] =
            compute_knn_table(series, series, spec, {.exclude_degenerate = exclude_degenerate});
        built[static_cast<std::size_t>(E - 1)] = 1;
    });
    for (int E = 1; E <= E_max; E++) {
        if (!built[static_cast<std::size_t>(E - 1)]) lt.infeasible.push_back(E);
    }
    return lt;
}

/// prediction[i] = sum_j weight(i, j) * target[index(i, j)].
inline void cross_map_lookup(const KnnTable &table, Series target, int E,
                             std::span<double> prediction)
{
    if (table.k != static_cast<std::size_t>(E) + 1) {
        throw std::invalid_argument("cross_map_lookup: table has " + std::to_string(table.k) +
                                    " neighbors, E=" + std::to_string(E) + " needs " +
                                    std::to_string(E + 1));
    }
    if (prediction.size() != table.rows) {
        throw std::invalid_argument("cross_map_lookup: output size mismatch");
    }
    for (std::size_t i = 0; i < table.rows; i++) {
        const std::uint32_t *idx = table.indices.data() + i * table.k;
        const double *w = table.weights.data() + i * table.k;
        double p = 0.0;
        for (std::size_t j = 0; j < table.k; j++) {
            if (idx[j] >= target.size()) {
                throw std::out_of_range("cross_map_lookup: neighbor index " +
                                        std::to_string(idx[j]) + " beyond target length " +
                                        std::to_string(target.size()));
            }
            p += w[j] * target[idx[j]];
        }
        prediction[i] = p;
    }
}

inline std::vector<double> cross_map_lookup(const KnnTable &table, Series target, int E)
{
    std::vector<double> prediction(table.rows);
    cross_map_lookup(table, target, E, prediction);
    return prediction;
}

struct CcmRow {
    std::vector<double> rho;
    std::vector<SentinelEntry> sentinels;
};

/// Skill of cross mapping `target` from a prebuilt table. The observed
/// values are the target samples at the table's query times.
inline double cross_map_skill(const KnnTable &table, Series target, int E,
                              std::vector<double> &buffer, Profile *profile = nullptr)
{
    buffer.resize(table.rows);
    {
        EDM_PROFILE_SCOPE(profile, lookup_ns);
        cross_map_lookup(table, target, E, buffer);
    }
    EDM_PROFILE_SCOPE(profile, corrcoef_ns);
    if (table.rows < 2) return undefined_rho;
    return pearson_rho(target.subspan(table.first_time, table.rows), buffer);
}

/// One row of the causal map: rho[j] = skill of predicting series j from
/// the library series the tables were built from, at E = optE[j].
inline CcmRow ccm_row(const LibraryTables &tables, const TimeSeriesSet &ts,
                      std::span<const int> optE, Profile *profile = nullptr)
{
    if (optE.size() != ts.count()) {
        throw std::invalid_argument("ccm_row: optE has " + std::to_string(optE.size()) +
                                    " entries for " + std::to_string(ts.count()) + " series");
    }
    CcmRow row;
    row.rho.assign(ts.count(), undefined_rho);
    std::vector<double> buffer;
    for (std::size_t j = 0; j < ts.count(); j++) {
        const KnnTable *table = tables.find(optE[j]);
        if (!table) {
            row.sentinels.push_back({tables.series_id, j, SentinelReason::infeasible_embedding});
            continue;
        }
        row.rho[j] = cross_map_skill(*table, ts.series(j), optE[j], buffer, profile);
        if (is_undefined(row.rho[j])) {
            row.sentinels.push_back({tables.series_id, j, SentinelReason::zero_variance});
        }
    }
    return row;
}

struct CausalInference {
    std::vector<OptimalEmbedding> embeddings;
    CausalMap map;

    std::vector<int> optE() const
    {
        std::vector<int> out;
        out.reserve(embeddings.size());
        for (const auto &e : embeddings) out.push_back(e.bestE);
        return out;
    }
};

/// Called with each finished row of the causal map. May run concurrently
/// for distinct rows.
using RowSink = std::function<void(std::size_t, const CcmRow &)>;

struct RunContext {
    ThreadPool *pool = nullptr;
    Profile *profile = nullptr;
    RowSink on_row;
};

/// Phase 1: optimal embedding dimension for every series.
inline std::vector<OptimalEmbedding> optimal_embeddings(const TimeSeriesSet &ts,
                                                        const CcmParams &params,
                                                        const RunContext &ctx = {})
{
    std::vector<OptimalEmbedding> out(ts.count());
    parallel_for(ctx.pool, ts.count(), [&](std::size_t i) {
        out[i] = find_optimal_E(ts.series(i), params.E_max, params.tau, i, nullptr, ctx.profile);
    });
    return out;
}

inline void store_row(CausalMap &map, std::size_t i, const CcmRow &row)
{
    std::copy(row.rho.begin(), row.rho.end(), map.row(i).begin());
}

/// All-pairs cross mapping with per-library table reuse.
inline CausalInference full_causal_inference(const TimeSeriesSet &ts, const CcmParams &params,
                                             const RunContext &ctx = {})
{
    CausalInference result;
    result.embeddings = optimal_embeddings(ts, params, ctx);
    const auto optE = result.optE();

    result.map = CausalMap(ts.count());
    std::vector<std::vector<SentinelEntry>> sentinels(ts.count());
    parallel_for(ctx.pool, ts.count(), [&](std::size_t i) {
        const auto tables = precompute_library_tables(ts.series(i), params.E_max, params.tau,
                                                       params.exclude_degenerate, i, nullptr,
                                                       ctx.profile);
        auto row = ccm_row(tables, ts, optE, ctx.profile);
        store_row(result.map, i, row);
        if (ctx.on_row) ctx.on_row(i, row);
        sentinels[i] = std::move(row.sentinels);
    });
    for (auto &s : sentinels) {
        result.map.sentinels.insert(result.map.sentinels.end(), s.begin(), s.end());
    }
    return result;
}

/// Reference all-pairs cross mapping that rebuilds the neighbor table for
/// every (library, target) pair. Serial and unoptimized on purpose.
inline CausalInference naive_causal_inference(const TimeSeriesSet &ts, const CcmParams &params,
                                              Profile *profile = nullptr)
{
    CausalInference result;
    result.embeddings = optimal_embeddings(ts, params, {.profile = profile});
    const auto optE = result.optE();

    result.map = CausalMap(ts.count());
    std::vector<double> buffer;
    for (std::size_t i = 0; i < ts.count(); i++) {
        const Series library = ts.series(i);
        for (std::size_t j = 0; j < ts.count(); j++) {
            const EmbeddingSpec spec{optE[j], params.tau, ccm_horizon};
            if (!knn_feasible(library.size(), library.size(), spec, params.exclude_degenerate)) {
                result.map.sentinels.push_back({i, j, SentinelReason::infeasible_embedding});
                continue;
            }
            KnnTable table;
            {
                EDM_PROFILE_SCOPE(profile, knn_ns);
                table = compute_knn_table(library, library, spec,
                                          {.exclude_degenerate = params.exclude_degenerate});
            }
            const double rho = cross_map_skill(table, ts.series(j), optE[j], buffer, profile);
            result.map(i, j) = rho;
            if (is_undefined(rho)) {
                result.map.sentinels.push_back({i, j, SentinelReason::zero_variance});
            }
        }
    }
    return result;
}

} // namespace edm

#endif // EDM_CCM_HPP
