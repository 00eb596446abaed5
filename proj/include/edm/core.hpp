#ifndef EDM_CORE_HPP
#define EDM_CORE_HPP

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

namespace edm
{

/// Raised when a series cannot support the requested embedding.
class SeriesTooShort : public std::invalid_argument
{
public:
    using std::invalid_argument::invalid_argument;
};

/// Undefined skill (zero-variance input). Stored as NaN in memory.
inline constexpr double undefined_rho = std::numeric_limits<double>::quiet_NaN();

inline bool is_undefined(double rho) { return std::isnan(rho); }

using Series = std::span<const double>;

/// L time steps by N series. Each series is stored contiguously so that
/// delay coordinates of one series are unit-stride.
class TimeSeriesSet
{
public:
    TimeSeriesSet() = default;

    /// Builds from series-major columns. All columns must share one length.
    explicit TimeSeriesSet(std::vector<std::vector<double>> columns,
                           std::vector<std::string> names = {})
        : names_(std::move(names))
    {
        if (columns.empty()) {
            throw std::invalid_argument("dataset must contain at least one series");
        }
        length_ = columns.front().size();
        if (length_ < 2) {
            throw std::invalid_argument("dataset must contain at least two time steps");
        }
        if (!names_.empty() && names_.size() != columns.size()) {
            throw std::invalid_argument("number of names does not match number of series");
        }
        count_ = columns.size();
        data_.reserve(length_ * count_);
        for (std::size_t j = 0; j < count_; j++) {
            if (columns[j].size() != length_) {
                throw std::invalid_argument("series " + std::to_string(j) +
                                            " has length " +
                                            std::to_string(columns[j].size()) +
                                            ", expected " + std::to_string(length_));
            }
            for (std::size_t t = 0; t < length_; t++) {
                if (!std::isfinite(columns[j][t])) {
                    throw std::invalid_argument(
                        "non-finite value at time " + std::to_string(t) +
                        ", series " + std::to_string(j));
                }
            }
            data_.insert(data_.end(), columns[j].begin(), columns[j].end());
        }
    }

    /// Builds from a row-major L x N buffer.
    static TimeSeriesSet from_row_major(std::span<const double> values,
                                        std::size_t rows, std::size_t cols,
                                        std::vector<std::string> names = {})
    {
        if (values.size() != rows * cols) {
            throw std::invalid_argument("row-major buffer size does not match shape");
        }
        std::vector<std::vector<double>> columns(cols, std::vector<double>(rows));
        for (std::size_t t = 0; t < rows; t++) {
            for (std::size_t j = 0; j < cols; j++) {
                columns[j][t] = values[t * cols + j];
            }
        }
        return TimeSeriesSet(std::move(columns), std::move(names));
    }

    std::size_t length() const { return length_; }
    std::size_t count() const { return count_; }

    Series series(std::size_t j) const
    {
        return Series(data_.data() + j * length_, length_);
    }

    double at(std::size_t t, std::size_t j) const { return data_[j * length_ + t]; }

    const std::vector<std::string> &names() const { return names_; }

    /// Name of series j, synthesized when the dataset is unlabeled.
    std::string name(std::size_t j) const
    {
        return names_.empty() ? "s" + std::to_string(j) : names_[j];
    }

    std::vector<double> row_major() const
    {
        std::vector<double> out(length_ * count_);
        for (std::size_t t = 0; t < length_; t++) {
            for (std::size_t j = 0; j < count_; j++) {
                out[t * count_ + j] = at(t, j);
            }
        }
        return out;
    }

    bool operator==(const TimeSeriesSet &) const = default;

private:
    std::vector<double> data_;
    std::vector<std::string> names_;
    std::size_t length_ = 0;
    std::size_t count_ = 0;
};

struct EmbeddingSpec {
    int E = 1;
    int tau = 1;
    int Tp = 0;

    /// Span in steps covered by one delay vector.
    std::size_t shift() const { return static_cast<std::size_t>((E - 1) * tau); }

    /// Number of embeddable points in a series of the given length, 0 if none.
    std::size_t points(std::size_t length) const
    {
        return length > shift() ? length - shift() : 0;
    }

    void validate() const
    {
        if (E < 1) throw std::invalid_argument("E must be at least 1");
        if (tau < 1) throw std::invalid_argument("tau must be at least 1");
        if (Tp < 0) throw std::invalid_argument("Tp must be non-negative");
    }

    /// Throws unless at least one point is embeddable with horizon Tp.
    void validate(std::size_t length) const
    {
        validate();
        if (shift() + static_cast<std::size_t>(Tp) >= length) {
            throw SeriesTooShort("series of length " + std::to_string(length) +
                                 " is too short for E=" + std::to_string(E) +
                                 ", tau=" + std::to_string(tau) +
                                 ", Tp=" + std::to_string(Tp));
        }
    }

    bool operator==(const EmbeddingSpec &) const = default;
};

/// x(t - k*tau) for the delay vector at time t. Pure, bounds-checked.
inline double embed_coordinate(Series series, const EmbeddingSpec &spec,
                               std::size_t t, int k)
{
    if (k < 0 || k >= spec.E) {
        throw std::out_of_range("delay index " + std::to_string(k) +
                                " outside [0, " + std::to_string(spec.E) + ")");
    }
    if (t < spec.shift() || t >= series.size()) {
        throw std::out_of_range("time " + std::to_string(t) +
                                " has no complete delay vector");
    }
    return series[t - static_cast<std::size_t>(k * spec.tau)];
}

/// Delay-coordinate view over one series; no copy is made.
class EmbeddedView
{
public:
    EmbeddedView(Series source, EmbeddingSpec spec) : source_(source), spec_(spec)
    {
        spec_.validate();
        if (spec_.points(source_.size()) == 0) {
            throw SeriesTooShort("series of length " + std::to_string(source_.size()) +
                                 " has no embeddable point for E=" +
                                 std::to_string(spec_.E));
        }
    }

    std::size_t size() const { return spec_.points(source_.size()); }

    /// Time index of the i-th embedded point.
    std::size_t time(std::size_t i) const { return i + spec_.shift(); }

    double coordinate(std::size_t i, int k) const
    {
        return source_[time(i) - static_cast<std::size_t>(k * spec_.tau)];
    }

    Series source() const { return source_; }
    const EmbeddingSpec &spec() const { return spec_; }

private:
    Series source_;
    EmbeddingSpec spec_;
};

/// Neighbor table: one row per query point, k = E + 1 columns.
/// indices hold library time indices; weights are normalized per row.
struct KnnTable {
    std::size_t rows = 0;
    std::size_t k = 0;
    /// Time index of the first query row (equals (E-1)*tau).
    std::size_t first_time = 0;
    std::vector<std::uint32_t> indices;
    /// Euclidean distances of the selected neighbors, non-decreasing per row.
    std::vector<double> distances;
    std::vector<double> weights;

    KnnTable() = default;
    KnnTable(std::size_t rows_, std::size_t k_, std::size_t first_time_)
        : rows(rows_), k(k_), first_time(first_time_), indices(rows_ * k_),
          distances(rows_ * k_), weights(rows_ * k_)
    {
    }

    std::span<const std::uint32_t> index_row(std::size_t i) const
    {
        return {indices.data() + i * k, k};
    }
    std::span<const double> distance_row(std::size_t i) const
    {
        return {distances.data() + i * k, k};
    }
    std::span<const double> weight_row(std::size_t i) const
    {
        return {weights.data() + i * k, k};
    }

    bool operator==(const KnnTable &) const = default;
};

struct OptimalEmbedding {
    std::size_t series_id = 0;
    int bestE = 1;
    double rho = undefined_rho;
    /// Skill for E = 1..rho_by_E.size(); only feasible E are evaluated.
    std::vector<double> rho_by_E;
    /// Set when no evaluated E produced a defined skill.
    bool undefined = false;
    /// Set when the series could not support the requested E_max.
    bool truncated = false;
};

enum class SentinelReason : std::uint8_t {
    none = 0,
    zero_variance = 1,
    infeasible_embedding = 2,
};

inline const char *to_string(SentinelReason reason)
{
    switch (reason) {
    case SentinelReason::none: return "none";
    case SentinelReason::zero_variance: return "zero_variance";
    case SentinelReason::infeasible_embedding: return "infeasible_embedding";
    }
    return "unknown";
}

struct SentinelEntry {
    std::size_t library = 0;
    std::size_t target = 0;
    SentinelReason reason = SentinelReason::none;
};

/// N x N cross-map skills. rho(i, j) is the skill of predicting series j
/// from the shadow manifold of series i; high values mean j CCM-causes i.
class CausalMap
{
public:
    CausalMap() = default;
    explicit CausalMap(std::size_t n) : n_(n), rho_(n * n, undefined_rho) {}

    std::size_t size() const { return n_; }
    double &operator()(std::size_t i, std::size_t j) { return rho_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return rho_[i * n_ + j]; }

    std::span<double> row(std::size_t i) { return {rho_.data() + i * n_, n_}; }
    std::span<const double> row(std::size_t i) const { return {rho_.data() + i * n_, n_}; }

    const std::vector<double> &values() const { return rho_; }

    std::vector<SentinelEntry> sentinels;

private:
    std::size_t n_ = 0;
    std::vector<double> rho_;
};

/// Pearson product-moment correlation. Returns undefined_rho when either
/// input has zero variance.
inline double pearson_rho(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size()) {
        throw std::invalid_argument("pearson_rho: length mismatch (" +
                                    std::to_string(a.size()) + " vs " +
                                    std::to_string(b.size()) + ")");
    }
    if (a.size() < 2) {
        throw std::invalid_argument("pearson_rho: need at least two samples");
    }
    const auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    };
    if (constant(a) || constant(b)) {
        return undefined_rho;
    }
    const auto n = static_cast<double>(a.size());
    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < a.size(); i++) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= n;
    mean_b /= n;

    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); i++) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) {
        return undefined_rho;
    }
    const double rho = sab / std::sqrt(saa * sbb);
    return std::clamp(rho, -1.0, 1.0);
}

} // namespace edm

#endif // EDM_CORE_HPP
