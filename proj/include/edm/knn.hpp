#ifndef EDM_KNN_HPP
#define EDM_KNN_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "core.hpp"
#include "parallel.hpp"

namespace edm
{

/// Smallest pre-normalization weight; keeps far neighbors strictly positive.
inline constexpr double min_weight = 1e-6;

/// Absolute distance scale used when the nearest neighbor is an exact match.
inline constexpr double exact_match_scale = 1e-12;

inline constexpr std::size_t default_distance_budget = std::size_t{256} << 20;

/// Squared Euclidean distances, target points (rows) by library points (cols).
struct DistanceMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> d;

    double operator()(std::size_t i, std::size_t j) const { return d[i * cols + j]; }
};

struct KnnOptions {
    /// Drop the library point sharing the query's time index. Meaningful
    /// when library and target are the same series.
    bool exclude_degenerate = false;
    ThreadPool *pool = nullptr;
};

namespace detail
{

/// Squared distances from target points [row_begin, row_end) to library
/// points [0, cols). The innermost loop runs over library points, which are
/// contiguous in memory for a fixed delay k.
inline void distance_block(Series library, Series target, const EmbeddingSpec &spec,
                           std::size_t row_begin, std::size_t row_end,
                           std::size_t cols, double *out)
{
    const std::size_t shift = spec.shift();
    for (std::size_t i = row_begin; i < row_end; i++) {
        double *row = out + (i - row_begin) * cols;
        std::fill(row, row + cols, 0.0);
        for (int k = 0; k < spec.E; k++) {
            const std::size_t lag = static_cast<std::size_t>(k * spec.tau);
            const double q = target[i + shift - lag];
            const double *lib = library.data() + shift - lag;
            for (std::size_t j = 0; j < cols; j++) {
                const double diff = q - lib[j];
                row[j] += diff * diff;
            }
        }
    }
}

/// Heap-based selection of the k smallest (distance, index) pairs,
/// ordered by distance then index. Position `skip` is ignored.
inline void select_smallest(std::span<const double> distances,
                            std::span<const std::uint32_t> indices, std::size_t k,
                            std::size_t skip, std::uint32_t *out_indices,
                            double *out_distances,
                            std::vector<std::pair<double, std::uint32_t>> &heap)
{
    heap.clear();
    for (std::size_t j = 0; j < distances.size(); j++) {
        if (j == skip) continue;
        const std::pair<double, std::uint32_t> item{distances[j], indices[j]};
        if (heap.size() < k) {
            heap.push_back(item);
            std::push_heap(heap.begin(), heap.end());
        } else if (item < heap.front()) {
            std::pop_heap(heap.begin(), heap.end());
            heap.back() = item;
            std::push_heap(heap.begin(), heap.end());
        }
    }
    std::sort_heap(heap.begin(), heap.end());
    for (std::size_t j = 0; j < heap.size(); j++) {
        out_indices[j] = heap[j].second;
        out_distances[j] = heap[j].first;
    }
}

/// Identity index list 0..n-1, used when selecting over plain positions.
inline std::vector<std::uint32_t> iota_indices(std::size_t n, std::uint32_t first = 0)
{
    std::vector<std::uint32_t> out(n);
    for (std::size_t j = 0; j < n; j++) out[j] = first + static_cast<std::uint32_t>(j);
    return out;
}

} // namespace detail

/// Full target-by-library squared distance matrix. Refuses when the matrix
/// would exceed `budget` bytes.
inline DistanceMatrix all_pairs_distances(const EmbeddedView &library,
                                          const EmbeddedView &target,
                                          std::size_t budget = default_distance_budget)
{
    if (!(library.spec() == target.spec())) {
        throw std::invalid_argument("all_pairs_distances: library and target specs differ");
    }
    DistanceMatrix m;
    m.rows = target.size();
    m.cols = library.size();
    if (m.rows * m.cols > budget / sizeof(double)) {
        throw std::length_error("distance matrix of " + std::to_string(m.rows) + "x" +
                                std::to_string(m.cols) + " exceeds memory budget");
    }
    m.d.resize(m.rows * m.cols);
    detail::distance_block(library.source(), target.source(), library.spec(), 0, m.rows,
                           m.cols, m.d.data());
    return m;
}

/// The k smallest distances in non-decreasing order with co-sorted indices.
/// Equal distances resolve to the smaller index.
inline std::pair<std::vector<std::uint32_t>, std::vector<double>>
partial_select(std::span<const double> distances, std::span<const std::uint32_t> indices,
               std::size_t k)
{
    if (distances.size() != indices.size()) {
        throw std::invalid_argument("partial_select: distances and indices differ in length");
    }
    if (k > distances.size()) {
        throw std::invalid_argument("partial_select: k=" + std::to_string(k) +
                                    " exceeds row length " +
                                    std::to_string(distances.size()));
    }
    std::pair<std::vector<std::uint32_t>, std::vector<double>> out{
        std::vector<std::uint32_t>(k), std::vector<double>(k)};
    std::vector<std::pair<double, std::uint32_t>> heap;
    heap.reserve(k);
    detail::select_smallest(distances, indices, k, distances.size(), out.first.data(),
                            out.second.data(), heap);
    return out;
}

/// Exponential weights relative to the nearest distance, normalized to sum
/// to one. Input must be non-negative, non-decreasing Euclidean distances.
///
/// scale = max(d_1, 1e-12 * (mean(d) + 1e-300)) when d_1 > 0, otherwise the
/// absolute scale 1e-12, so exact matches get weight exp(0) = 1 and dominate.
/// Each raw weight is floored at min_weight before normalization.
inline void normalize_weights(std::span<const double> distances, std::span<double> out)
{
    if (distances.empty()) {
        throw std::invalid_argument("normalize_weights: empty row");
    }
    const double nearest = distances.front();
    double scale = exact_match_scale;
    if (nearest > 0.0) {
        double mean = 0.0;
        for (double d : distances) mean += d;
        mean /= static_cast<double>(distances.size());
        scale = std::max(nearest, 1e-12 * (mean + 1e-300));
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < distances.size(); j++) {
        out[j] = std::max(std::exp(-distances[j] / scale), min_weight);
        sum += out[j];
    }
    for (auto &w : out) w /= sum;
}

inline std::vector<double> normalize_weights(std::span<const double> distances)
{
    std::vector<double> out(distances.size());
    normalize_weights(distances, out);
    return out;
}

/// Number of library candidates available to each query.
inline std::size_t knn_candidates(std::size_t library_length, const EmbeddingSpec &spec)
{
    const std::size_t pts = spec.points(library_length);
    return pts > static_cast<std::size_t>(spec.Tp) ? pts - spec.Tp : 0;
}

/// True when compute_knn_table can find E + 1 neighbors for every query.
inline bool knn_feasible(std::size_t library_length, std::size_t target_length,
                         const EmbeddingSpec &spec, bool exclude_degenerate)
{
    const std::size_t needed = static_cast<std::size_t>(spec.E) + 1 + (exclude_degenerate ? 1 : 0);
    return spec.points(target_length) > 0 && knn_candidates(library_length, spec) >= needed;
}

/// E + 1 nearest library points for every embeddable target point.
///
/// Library candidates are points whose time s satisfies s + Tp < len(library),
/// so every neighbor has a future Tp steps ahead. Row i of the table is the
/// target point at time i + (E-1)*tau.
inline KnnTable compute_knn_table(Series library, Series target, const EmbeddingSpec &spec,
                                  const KnnOptions &options = {})
{
    spec.validate();
    const std::size_t k = static_cast<std::size_t>(spec.E) + 1;
    if (!knn_feasible(library.size(), target.size(), spec, options.exclude_degenerate)) {
        throw SeriesTooShort("series too short for E=" + std::to_string(spec.E) +
                             " (library length " + std::to_string(library.size()) +
                             ", target length " + std::to_string(target.size()) +
                             ", tau=" + std::to_string(spec.tau) + ")");
    }

    const std::size_t shift = spec.shift();
    const std::size_t rows = spec.points(target.size());
    const std::size_t cols = knn_candidates(library.size(), spec);
    KnnTable table(rows, k, shift);

    const auto indices = detail::iota_indices(cols, static_cast<std::uint32_t>(shift));
    // Each row is selected as soon as it is computed, so one row of scratch
    // per thread suffices and stays cache resident.
    parallel_for(options.pool, rows, [&](std::size_t i) {
        thread_local std::vector<double> row;
        thread_local std::vector<std::pair<double, std::uint32_t>> heap;
        row.resize(cols);
        detail::distance_block(library, target, spec, i, i + 1, cols, row.data());

        // Candidate j has time j + shift; the query has time i + shift.
        const std::size_t skip = options.exclude_degenerate ? i : cols;
        double *dist = table.distances.data() + i * k;
        detail::select_smallest(row, indices, k, skip, table.indices.data() + i * k, dist, heap);
        for (std::size_t j = 0; j < k; j++) dist[j] = std::sqrt(dist[j]);
        normalize_weights({dist, k}, {table.weights.data() + i * k, k});
    }, 16);
    return table;
}

} // namespace edm

#endif // EDM_KNN_HPP
