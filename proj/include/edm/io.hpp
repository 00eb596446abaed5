#ifndef EDM_IO_HPP
#define EDM_IO_HPP

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "core.hpp"

namespace edm::io
{

/// Malformed or unreadable input. The message names the offending location.
class FormatError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class Format { csv, edm1 };

inline Format parse_format(std::string_view name)
{
    if (name == "csv") return Format::csv;
    if (name == "edm1" || name == "edm") return Format::edm1;
    throw std::invalid_argument("unknown format '" + std::string(name) + "'");
}

/// Picks the format from the file extension; anything but .csv is EDM1.
inline Format format_for_path(const std::filesystem::path &path)
{
    return path.extension() == ".csv" ? Format::csv : Format::edm1;
}

// ---------------------------------------------------------------------------
// Little-endian primitives

inline void put_u32(std::string &out, std::uint32_t v)
{
    for (int b = 0; b < 4; b++) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline void put_u64(std::string &out, std::uint64_t v)
{
    for (int b = 0; b < 8; b++) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

inline std::uint32_t get_u32(const unsigned char *p)
{
    return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
           static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

inline std::uint64_t get_u64(const unsigned char *p)
{
    return static_cast<std::uint64_t>(get_u32(p)) | static_cast<std::uint64_t>(get_u32(p + 4)) << 32;
}

/// On-disk bit pattern for an undefined causal-map entry.
inline constexpr std::uint32_t sentinel_bits = 0x7FC00000u;

inline std::uint32_t encode_f32(double v)
{
    if (std::isnan(v)) return sentinel_bits;
    return std::bit_cast<std::uint32_t>(static_cast<float>(v));
}

// ---------------------------------------------------------------------------
// EDM1 matrix files
//
//   offset 0   magic "EDM1"
//   offset 4   rows     u32
//   offset 8   cols     u32
//   offset 12  dtype    u8 (0 = float32, 1 = float64)
//   offset 13  reserved 3 bytes, zero
//   offset 16  row-major payload, little-endian

enum class DType : std::uint8_t { float32 = 0, float64 = 1 };

inline std::size_t dtype_size(DType d) { return d == DType::float32 ? 4 : 8; }

struct MatrixFileHeader {
    static constexpr std::size_t size = 16;
    static constexpr std::array<char, 4> magic{'E', 'D', 'M', '1'};

    std::uint32_t rows = 0;
    std::uint32_t cols = 0;
    DType dtype = DType::float64;

    std::size_t payload_bytes() const
    {
        return static_cast<std::size_t>(rows) * cols * dtype_size(dtype);
    }

    std::string encode() const
    {
        std::string out(magic.begin(), magic.end());
        put_u32(out, rows);
        put_u32(out, cols);
        out.push_back(static_cast<char>(dtype));
        out.append(3, '\0');
        return out;
    }

    static MatrixFileHeader decode(std::string_view bytes)
    {
        if (bytes.size() < size) throw FormatError("EDM1 header truncated");
        if (std::memcmp(bytes.data(), magic.data(), 4) != 0) {
            throw FormatError("bad magic: not an EDM1 file");
        }
        const auto *p = reinterpret_cast<const unsigned char *>(bytes.data());
        MatrixFileHeader h;
        h.rows = get_u32(p + 4);
        h.cols = get_u32(p + 8);
        if (p[12] > 1) throw FormatError("unknown EDM1 dtype " + std::to_string(p[12]));
        h.dtype = static_cast<DType>(p[12]);
        if (p[13] != 0 || p[14] != 0 || p[15] != 0) {
            throw FormatError("EDM1 reserved bytes are not zero");
        }
        return h;
    }
};

struct Matrix {
    MatrixFileHeader header;
    std::vector<double> values; // row-major
};

inline std::string read_file(const std::filesystem::path &path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("no such file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline Matrix decode_matrix(std::string_view bytes)
{
    Matrix m;
    m.header = MatrixFileHeader::decode(bytes);
    const std::size_t expected = MatrixFileHeader::size + m.header.payload_bytes();
    if (bytes.size() != expected) {
        throw FormatError("EDM1 payload length " + std::to_string(bytes.size() - MatrixFileHeader::size) +
                          " does not match header (" + std::to_string(m.header.payload_bytes()) + ")");
    }
    const auto *p = reinterpret_cast<const unsigned char *>(bytes.data()) + MatrixFileHeader::size;
    const std::size_t n = static_cast<std::size_t>(m.header.rows) * m.header.cols;
    m.values.resize(n);
    for (std::size_t i = 0; i < n; i++) {
        if (m.header.dtype == DType::float32) {
            m.values[i] = std::bit_cast<float>(get_u32(p + 4 * i));
        } else {
            m.values[i] = std::bit_cast<double>(get_u64(p + 8 * i));
        }
    }
    return m;
}

inline std::string encode_matrix(std::span<const double> values, std::uint32_t rows,
                                 std::uint32_t cols, DType dtype)
{
    if (values.size() != static_cast<std::size_t>(rows) * cols) {
        throw std::invalid_argument("encode_matrix: value count does not match shape");
    }
    MatrixFileHeader h{rows, cols, dtype};
    std::string out = h.encode();
    out.reserve(MatrixFileHeader::size + h.payload_bytes());
    for (double v : values) {
        if (dtype == DType::float32) {
            put_u32(out, encode_f32(v));
        } else {
            put_u64(out, std::bit_cast<std::uint64_t>(v));
        }
    }
    return out;
}

inline Matrix read_matrix(const std::filesystem::path &path)
{
    return decode_matrix(read_file(path));
}

inline void write_file(const std::filesystem::path &path, std::string_view bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Datasets

namespace detail
{

inline std::string_view trim(std::string_view s)
{
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto comma = line.find(',', start);
        out.push_back(trim(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline bool parse_number(std::string_view s, double &out)
{
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    const auto *end = s.data() + s.size();
    const auto [ptr, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && ptr == end && !s.empty();
}

} // namespace detail

/// CSV with one row per time step and one column per series. A first row
/// containing any non-numeric cell is taken as the series names.
inline TimeSeriesSet read_csv(std::istream &in)
{
    std::vector<std::string> names;
    std::vector<std::vector<double>> columns;
    std::string line;
    std::size_t line_no = 0;
    std::size_t width = 0;
    bool first = true;

    while (std::getline(in, line)) {
        line_no++;
        const auto content = detail::trim(line);
        if (content.empty()) continue;
        const auto fields = detail::split_fields(content);

        std::vector<double> values(fields.size());
        std::size_t bad = fields.size();
        for (std::size_t c = 0; c < fields.size(); c++) {
            if (!detail::parse_number(fields[c], values[c])) {
                bad = c;
                break;
            }
        }

        if (first) {
            first = false;
            width = fields.size();
            columns.resize(width);
            if (bad < fields.size()) {
                for (auto f : fields) names.emplace_back(f);
                continue;
            }
        }
        if (fields.size() != width) {
            throw FormatError("ragged row at line " + std::to_string(line_no) + ": expected " +
                              std::to_string(width) + " fields, found " +
                              std::to_string(fields.size()));
        }
        if (bad < fields.size()) {
            throw FormatError("non-numeric cell '" + std::string(fields[bad]) + "' at line " +
                              std::to_string(line_no) + ", column " + std::to_string(bad + 1));
        }
        for (std::size_t c = 0; c < width; c++) {
            if (!std::isfinite(values[c])) {
                throw FormatError("non-finite value at line " + std::to_string(line_no) +
                                  ", column " + std::to_string(c + 1));
            }
            columns[c].push_back(values[c]);
        }
    }
    if (columns.empty() || columns.front().empty()) throw FormatError("empty dataset");
    if (columns.front().size() < 2) throw FormatError("dataset needs at least two time steps");
    return TimeSeriesSet(std::move(columns), std::move(names));
}

inline void write_csv(std::ostream &out, const TimeSeriesSet &ts)
{
    if (!ts.names().empty()) {
        for (std::size_t j = 0; j < ts.count(); j++) out << (j ? "," : "") << ts.names()[j];
        out << '\n';
    }
    char buf[32];
    for (std::size_t t = 0; t < ts.length(); t++) {
        for (std::size_t j = 0; j < ts.count(); j++) {
            std::snprintf(buf, sizeof buf, "%.17g", ts.at(t, j));
            out << (j ? "," : "") << buf;
        }
        out << '\n';
    }
}

/// EDM1 dataset: rows are time steps, columns are series.
inline TimeSeriesSet decode_dataset(std::string_view bytes)
{
    const auto m = decode_matrix(bytes);
    if (m.header.rows < 2 || m.header.cols < 1) {
        throw FormatError("EDM1 dataset must have at least 2 rows and 1 column");
    }
    for (std::size_t i = 0; i < m.values.size(); i++) {
        if (!std::isfinite(m.values[i])) {
            throw FormatError("non-finite value at row " + std::to_string(i / m.header.cols) +
                              ", column " + std::to_string(i % m.header.cols));
        }
    }
    return TimeSeriesSet::from_row_major(m.values, m.header.rows, m.header.cols);
}

inline std::string encode_dataset(const TimeSeriesSet &ts, DType dtype = DType::float64)
{
    return encode_matrix(ts.row_major(), static_cast<std::uint32_t>(ts.length()),
                         static_cast<std::uint32_t>(ts.count()), dtype);
}

inline TimeSeriesSet read_dataset(const std::filesystem::path &path, Format format)
{
    if (!std::filesystem::exists(path)) throw std::runtime_error("no such file: " + path.string());
    if (format == Format::csv) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open " + path.string());
        return read_csv(in);
    }
    return decode_dataset(read_file(path));
}

inline TimeSeriesSet read_dataset(const std::filesystem::path &path)
{
    return read_dataset(path, format_for_path(path));
}

inline void write_dataset(const std::filesystem::path &path, const TimeSeriesSet &ts, Format format,
                          DType dtype = DType::float64)
{
    if (format == Format::csv) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
        write_csv(out, ts);
        return;
    }
    write_file(path, encode_dataset(ts, dtype));
}

// ---------------------------------------------------------------------------
// Causal map files

/// Positional writer for an N x N float32 causal map. Rows may arrive in any
/// order. Rewriting a row is accepted only with identical bytes.
class CausalMapFile
{
public:
    CausalMapFile(const std::filesystem::path &path, std::size_t n) : path_(path), n_(n), written_(n, false)
    {
        file_.open(path, std::ios::binary | std::ios::in | std::ios::out | std::ios::trunc);
        if (!file_) throw std::runtime_error("cannot create causal map file " + path.string());
        const MatrixFileHeader h{static_cast<std::uint32_t>(n), static_cast<std::uint32_t>(n),
                                 DType::float32};
        std::string bytes = h.encode();
        bytes.resize(MatrixFileHeader::size + h.payload_bytes());
        // Unwritten rows read back as the sentinel.
        for (std::size_t i = 0; i < n * n; i++) {
            std::memcpy(bytes.data() + MatrixFileHeader::size + 4 * i, &sentinel_le(), 4);
        }
        file_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        file_.flush();
    }

    std::size_t size() const { return n_; }
    const std::filesystem::path &path() const { return path_; }

    static std::size_t row_offset(std::size_t n, std::size_t row)
    {
        return MatrixFileHeader::size + row * n * 4;
    }

    void write_row(std::size_t row, std::span<const double> values)
    {
        if (row >= n_) {
            throw std::out_of_range("row " + std::to_string(row) + " outside [0, " +
                                    std::to_string(n_) + ")");
        }
        if (values.size() != n_) {
            throw std::invalid_argument("row has " + std::to_string(values.size()) +
                                        " values, expected " + std::to_string(n_));
        }
        std::string bytes;
        bytes.reserve(4 * n_);
        for (double v : values) put_u32(bytes, encode_f32(v));

        if (written_[row]) {
            std::string existing(bytes.size(), '\0');
            file_.seekg(static_cast<std::streamoff>(row_offset(n_, row)));
            file_.read(existing.data(), static_cast<std::streamsize>(existing.size()));
            if (existing != bytes) {
                throw std::runtime_error("conflicting duplicate write of row " + std::to_string(row));
            }
            return;
        }
        file_.seekp(static_cast<std::streamoff>(row_offset(n_, row)));
        file_.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        file_.flush();
        if (!file_) throw std::runtime_error("write failed: " + path_.string());
        written_[row] = true;
    }

    bool has_row(std::size_t row) const { return written_[row]; }

private:
    static const std::array<char, 4> &sentinel_le()
    {
        static const std::array<char, 4> bytes = [] {
            std::string s;
            put_u32(s, sentinel_bits);
            return std::array<char, 4>{s[0], s[1], s[2], s[3]};
        }();
        return bytes;
    }

    std::filesystem::path path_;
    std::size_t n_;
    std::vector<bool> written_;
    std::fstream file_;
};

inline CausalMap read_causal_map(const std::filesystem::path &path)
{
    const auto m = read_matrix(path);
    if (m.header.rows != m.header.cols) throw FormatError("causal map is not square");
    CausalMap map(m.header.rows);
    for (std::size_t i = 0; i < m.header.rows; i++) {
        for (std::size_t j = 0; j < m.header.cols; j++) {
            const double v = m.values[i * m.header.cols + j];
            map(i, j) = std::isnan(v) ? undefined_rho : v;
        }
    }
    return map;
}

inline void write_causal_map(const std::filesystem::path &path, const CausalMap &map)
{
    CausalMapFile file(path, map.size());
    for (std::size_t i = 0; i < map.size(); i++) file.write_row(i, map.row(i));
}

/// Where a finished row lives before merging.
struct RowLocation {
    std::size_t row = 0;
    std::filesystem::path file;
    std::string worker;
};

/// Copies each listed row out of its worker-local file into a new map file.
/// Every row in [0, n) must be listed at least once.
inline void merge_row_files(const std::filesystem::path &output, std::size_t n,
                            const std::vector<RowLocation> &rows)
{
    std::vector<bool> seen(n, false);
    std::map<std::filesystem::path, CausalMap> cache;
    CausalMapFile out(output, n);
    for (const auto &loc : rows) {
        auto it = cache.find(loc.file);
        if (it == cache.end()) it = cache.emplace(loc.file, read_causal_map(loc.file)).first;
        if (it->second.size() != n) {
            throw FormatError("row file " + loc.file.string() + " has size " +
                              std::to_string(it->second.size()) + ", expected " + std::to_string(n));
        }
        out.write_row(loc.row, it->second.row(loc.row));
        seen[loc.row] = true;
    }
    for (std::size_t i = 0; i < n; i++) {
        if (!seen[i]) throw std::runtime_error("merge: row " + std::to_string(i) + " missing");
    }
}

// ---------------------------------------------------------------------------
// Manifests

/// 64-bit FNV-1a over the file contents.
inline std::uint64_t fnv1a(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct RunManifest {
    std::string dataset_path;
    std::string dataset_hash;
    std::size_t series = 0;
    std::size_t length = 0;
    int E_max = 0;
    int tau = 1;
    bool exclude_degenerate = true;
    std::string mode;
    std::string causal_map_path;
    std::string optE_path;
    std::vector<OptimalEmbedding> embeddings;
    std::vector<RowLocation> rows;
    std::vector<SentinelEntry> sentinels;
    /// Seconds per phase, e.g. "simplex", "ccm", "merge".
    std::vector<std::pair<std::string, double>> timings;
};

inline nlohmann::json to_json(const RunManifest &m)
{
    using nlohmann::json;
    const auto number = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };

    json rho_table = json::array();
    for (const auto &e : m.embeddings) {
        json curve = json::array();
        for (double r : e.rho_by_E) curve.push_back(number(r));
        rho_table.push_back({{"series", e.series_id},
                             {"bestE", e.bestE},
                             {"rho", number(e.rho)},
                             {"undefined", e.undefined},
                             {"truncated", e.truncated},
                             {"rho_by_E", curve}});
    }
    json rows = json::array();
    for (const auto &r : m.rows) {
        rows.push_back({{"row", r.row}, {"file", r.file.string()}, {"worker", r.worker}});
    }
    json sentinels = json::array();
    for (const auto &s : m.sentinels) {
        sentinels.push_back({{"library", s.library}, {"target", s.target}, {"reason", to_string(s.reason)}});
    }
    json timings = json::object();
    for (const auto &[k, v] : m.timings) timings[k] = v;

    return {{"dataset", {{"path", m.dataset_path}, {"fnv1a64", m.dataset_hash},
                         {"series", m.series}, {"length", m.length}}},
            {"params", {{"E_max", m.E_max}, {"tau", m.tau},
                        {"exclude_degenerate", m.exclude_degenerate}, {"mode", m.mode}}},
            {"causal_map", {{"path", m.causal_map_path}, {"dtype", "float32"},
                            {"sentinel", "0x7FC00000"}, {"orientation", "rho[i][j]: predict series j from manifold of series i"}}},
            {"optE", {{"path", m.optE_path}, {"embeddings", rho_table}}},
            {"rows", rows},
            {"sentinels", sentinels},
            {"timings_seconds", timings}};
}

inline void write_manifest(const std::filesystem::path &path, const RunManifest &m)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << to_json(m).dump(2) << '\n';
}

/// Per-series optimal E and skill as CSV: series,name,bestE,rho.
inline void write_optE_csv(const std::filesystem::path &path, const TimeSeriesSet &ts,
                           const std::vector<OptimalEmbedding> &embeddings)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << "series,name,bestE,rho\n";
    char buf[32];
    for (const auto &e : embeddings) {
        std::snprintf(buf, sizeof buf, "%.17g", e.rho);
        out << e.series_id << ',' << ts.name(e.series_id) << ',' << e.bestE << ','
            << (e.undefined ? "nan" : buf) << '\n';
    }
}

} // namespace edm::io

#endif // EDM_IO_HPP
