#include <gtest/gtest.h>

#include <cmath>
#include <mutex>
#include <vector>

#include "edm/ccm.hpp"
#include "edm/parallel.hpp"
#include "edm/synth.hpp"
#include "oracles.hpp"

using namespace edm;

namespace
{

TimeSeriesSet random_set(std::size_t n, std::size_t L, std::uint64_t seed)
{
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < n; j++) cols.push_back(oracle::uniform(L, seed * 1000 + j));
    return TimeSeriesSet(std::move(cols));
}

void expect_maps_equal(const CausalMap &a, const CausalMap &b, double tol)
{
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); i++) {
        for (std::size_t j = 0; j < a.size(); j++) {
            if (is_undefined(a(i, j)) || is_undefined(b(i, j))) {
                ASSERT_EQ(is_undefined(a(i, j)), is_undefined(b(i, j))) << i << "," << j;
            } else {
                ASSERT_NEAR(a(i, j), b(i, j), tol) << i << "," << j;
            }
        }
    }
}

} // namespace

TEST(LibraryTables, Shapes)
{
    const auto x = oracle::uniform(60, 1);
    const auto lt = precompute_library_tables(x, 3, 1);
    ASSERT_EQ(lt.tables.size(), 3u);
    for (int E = 1; E <= 3; E++) {
        ASSERT_NE(lt.find(E), nullptr);
        EXPECT_EQ(lt.find(E)->k, static_cast<std::size_t>(E) + 1);
    }
    EXPECT_TRUE(lt.infeasible.empty());
    EXPECT_EQ(lt.find(4), nullptr);
    EXPECT_EQ(lt.find(0), nullptr);
}

TEST(LibraryTables, EOneEqualsDirectCall)
{
    const auto x = oracle::uniform(60, 2);
    const auto lt = precompute_library_tables(x, 4, 2);
    EXPECT_EQ(*lt.find(1), compute_knn_table(x, x, {1, 2, 0}, {.exclude_degenerate = true}));
    EXPECT_EQ(*lt.find(3), compute_knn_table(x, x, {3, 2, 0}, {.exclude_degenerate = true}));
}

TEST(LibraryTables, RowsMatchBruteForce)
{
    const auto x = oracle::uniform(100, 3);
    for (bool exclude : {true, false}) {
        const auto lt = precompute_library_tables(x, 5, 1, exclude);
        for (int E = 1; E <= 5; E++) {
            const KnnTable &t = *lt.find(E);
            for (std::size_t i = 0; i < t.rows; i++) {
                const auto ref = oracle::knn(x, x, E, 1, 0, i + t.first_time, exclude);
                for (std::size_t j = 0; j < t.k; j++) {
                    ASSERT_EQ(t.index_row(i)[j], ref.index[j]);
                    ASSERT_NEAR(t.distance_row(i)[j], ref.distance[j], 1e-12);
                }
            }
        }
    }
}

TEST(LibraryTables, InfeasibleERecorded)
{
    const std::vector<double> x{1, 2, 3, 4, 5};
    const auto lt = precompute_library_tables(x, 5, 1);
    // E needs E + 2 candidates with exclusion: 5 - (E - 1) >= E + 2 only for E <= 2
    EXPECT_EQ(lt.infeasible, (std::vector<int>{3, 4, 5}));
    EXPECT_NE(lt.find(2), nullptr);
    EXPECT_EQ(lt.find(3), nullptr);
}

TEST(Lookup, DeltaWeights)
{
    KnnTable t(4, 2, 1);
    for (std::size_t i = 0; i < 4; i++) {
        t.indices[i * 2] = 7;
        t.indices[i * 2 + 1] = 2;
        t.weights[i * 2] = 1.0;
        t.weights[i * 2 + 1] = 0.0;
    }
    const auto target = oracle::uniform(10, 4);
    for (double p : cross_map_lookup(t, target, 1)) EXPECT_EQ(p, target[7]);
}

TEST(Lookup, UniformWeightsGiveMean)
{
    KnnTable t(1, 3, 2);
    t.indices = {0, 4, 5};
    t.weights = {1.0 / 3, 1.0 / 3, 1.0 / 3};
    const std::vector<double> target{3, 0, 0, 0, 6, 9};
    EXPECT_NEAR(cross_map_lookup(t, target, 2)[0], 6.0, 1e-12);
}

TEST(Lookup, RandomTableMatchesDirectSum)
{
    const auto x = oracle::uniform(80, 5);
    const auto y = oracle::uniform(80, 6);
    const auto t = compute_knn_table(x, x, {3, 1, 0}, {.exclude_degenerate = true});
    const auto p = cross_map_lookup(t, y, 3);
    for (std::size_t i = 0; i < t.rows; i++) {
        double s = 0.0;
        for (std::size_t j = 0; j < t.k; j++) s += t.weight_row(i)[j] * y[t.index_row(i)[j]];
        ASSERT_NEAR(p[i], s, 1e-15);
    }
}

TEST(Lookup, Errors)
{
    const auto x = oracle::uniform(30, 7);
    const auto t = compute_knn_table(x, x, {2, 1, 0});
    EXPECT_THROW(cross_map_lookup(t, x, 3), std::invalid_argument);
    const std::vector<double> short_target(5, 1.0);
    EXPECT_THROW(cross_map_lookup(t, short_target, 2), std::out_of_range);
}

TEST(CcmRow, ConstantTargetIsSentinel)
{
    auto cols = std::vector<std::vector<double>>{oracle::uniform(80, 8), std::vector<double>(80, 2.0)};
    const TimeSeriesSet ts(std::move(cols));
    const auto lt = precompute_library_tables(ts.series(0), 3, 1, true, 0);
    const std::vector<int> optE{2, 1};
    const auto row = ccm_row(lt, ts, optE);
    EXPECT_FALSE(is_undefined(row.rho[0]));
    EXPECT_TRUE(is_undefined(row.rho[1]));
    ASSERT_EQ(row.sentinels.size(), 1u);
    EXPECT_EQ(row.sentinels[0].target, 1u);
    EXPECT_EQ(row.sentinels[0].reason, SentinelReason::zero_variance);
}

TEST(CcmRow, InfeasibleEmbeddingIsSentinel)
{
    const TimeSeriesSet ts({oracle::uniform(80, 9), oracle::uniform(80, 10)});
    const auto lt = precompute_library_tables(ts.series(0), 3, 1, true, 0);
    const std::vector<int> optE{2, 5};
    const auto row = ccm_row(lt, ts, optE);
    EXPECT_TRUE(is_undefined(row.rho[1]));
    ASSERT_EQ(row.sentinels.size(), 1u);
    EXPECT_EQ(row.sentinels[0].reason, SentinelReason::infeasible_embedding);
    EXPECT_THROW(ccm_row(lt, ts, std::vector<int>{1}), std::invalid_argument);
}

TEST(CcmRow, SelfCrossMapOfChaosIsHigh)
{
    const auto ts = synth::coupled_logistic(1, 500, {0.0, 0.0}, 3);
    const auto r = full_causal_inference(ts, {8, 1, true});
    EXPECT_GE(r.map(0, 0), 0.9);
    EXPECT_GE(r.map(1, 1), 0.9);
}

TEST(CcmRow, MatchesNaiveRow)
{
    const auto ts = random_set(20, 100, 1);
    const auto naive = naive_causal_inference(ts, {5, 1, true});
    const auto optE = naive.optE();
    for (std::size_t i = 0; i < ts.count(); i++) {
        const auto lt = precompute_library_tables(ts.series(i), 5, 1, true, i);
        const auto row = ccm_row(lt, ts, optE);
        for (std::size_t j = 0; j < ts.count(); j++) ASSERT_NEAR(row.rho[j], naive.map(i, j), 1e-9);
    }
}

TEST(Causal, SingleSeries)
{
    const auto ts = synth::coupled_logistic(1, 200, {0.0, 0.0}, 1);
    const TimeSeriesSet one({std::vector<double>(ts.series(0).begin(), ts.series(0).end())});
    const auto r = full_causal_inference(one, {5, 1, true});
    ASSERT_EQ(r.map.size(), 1u);
    const auto lt = precompute_library_tables(one.series(0), 5, 1);
    std::vector<double> buffer;
    EXPECT_EQ(r.map(0, 0),
              cross_map_skill(*lt.find(r.embeddings[0].bestE), one.series(0), r.embeddings[0].bestE, buffer));
}

TEST(Causal, DuplicatedColumnsGiveDuplicatedRowsAndColumns)
{
    auto base = synth::coupled_logistic(2, 150, {0.0, 0.3}, 4);
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < base.count(); j++) {
        cols.emplace_back(base.series(j).begin(), base.series(j).end());
    }
    cols.push_back(cols[1]);
    const TimeSeriesSet ts(std::move(cols));
    const auto r = full_causal_inference(ts, {5, 1, true});
    const std::size_t n = ts.count(), a = 1, b = n - 1;
    for (std::size_t k = 0; k < n; k++) {
        EXPECT_NEAR(r.map(a, k), r.map(b, k), 1e-9);
        EXPECT_NEAR(r.map(k, a), r.map(k, b), 1e-9);
    }
}

TEST(CausalProperty, ReuseEqualsNaive)
{
    ThreadPool pool(3);
    for (std::uint64_t seed = 0; seed < 10; seed++) {
        const std::size_t n = 5 + seed * 2, L = 60 + seed * 9;
        const int E_max = 2 + static_cast<int>(seed % 5);
        const CcmParams params{E_max, 1 + static_cast<int>(seed % 2), seed % 3 != 0};
        const auto ts = random_set(n, L, 100 + seed);
        const auto naive = naive_causal_inference(ts, params);
        const auto full = full_causal_inference(ts, params);
        const auto pooled = full_causal_inference(ts, params, {.pool = &pool});
        expect_maps_equal(full.map, naive.map, 1e-9);
        // same arithmetic in the same order, so the bits agree too
        for (std::size_t i = 0; i < n * n; i++) {
            const double a = full.map.values()[i], b = pooled.map.values()[i];
            ASSERT_TRUE((is_undefined(a) && is_undefined(b)) || a == b);
        }
        EXPECT_EQ(full.optE(), naive.optE());
    }
}

TEST(CausalProperty, TablesDependOnlyOnLibrary)
{
    auto ts = random_set(4, 90, 7);
    const auto before = precompute_library_tables(ts.series(0), 4, 1);
    std::vector<std::vector<double>> cols;
    for (std::size_t j = 0; j < ts.count(); j++) {
        cols.emplace_back(ts.series(j).begin(), ts.series(j).end());
    }
    cols[2] = oracle::uniform(90, 999);
    const TimeSeriesSet changed(std::move(cols));
    const auto after = precompute_library_tables(changed.series(0), 4, 1);
    for (int E = 1; E <= 4; E++) EXPECT_EQ(*before.find(E), *after.find(E));
}

TEST(CausalProperty, EntriesInRangeOrSentinel)
{
    auto cols = std::vector<std::vector<double>>{};
    for (int j = 0; j < 6; j++) cols.push_back(oracle::uniform(70, 300 + j));
    cols.push_back(std::vector<double>(70, 1.0));
    const TimeSeriesSet ts(std::move(cols));
    const auto r = full_causal_inference(ts, {4, 1, true});
    for (double v : r.map.values()) {
        if (!is_undefined(v)) {
            ASSERT_GE(v, -1.0);
            ASSERT_LE(v, 1.0);
        }
    }
    // the constant column is a sentinel in every row, and its own row too
    for (std::size_t i = 0; i < ts.count(); i++) EXPECT_TRUE(is_undefined(r.map(i, 6)));
    EXPECT_TRUE(r.embeddings[6].undefined);
    EXPECT_GE(r.map.sentinels.size(), ts.count());
}

TEST(Causal, RowSinkSeesEveryRowOnce)
{
    const auto ts = random_set(6, 60, 2);
    std::mutex m;
    std::vector<int> seen(6, 0);
    ThreadPool pool(2);
    const auto r = full_causal_inference(ts, {3, 1, true}, {.pool = &pool, .on_row = [&](std::size_t i, const CcmRow &) {
        std::lock_guard lock(m);
        seen[i]++;
    }});
    EXPECT_EQ(seen, std::vector<int>(6, 1));
}
