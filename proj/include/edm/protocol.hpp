#ifndef EDM_PROTOCOL_HPP
#define EDM_PROTOCOL_HPP

// Master/worker wire format.
//
// Every frame is a 4-byte little-endian body length followed by the body.
// The body starts with a 1-byte message type. Integers are little-endian,
// doubles are IEEE-754 binary64 bit patterns, strings are a u32 length
// followed by raw bytes.

#include <bit>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "core.hpp"
#include "io.hpp"
#include "scheduler.hpp"

namespace edm::proto
{

inline constexpr std::uint32_t protocol_version = 1;

/// Refuse frames above this size (a pushed dataset is the largest message).
inline constexpr std::uint32_t max_frame = 1u << 30;

class ProtocolError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

enum class MsgType : std::uint8_t {
    hello = 1,
    task_req = 2,
    task = 3,
    result = 4,
    opte_bcast = 5,
    done = 6,
    shutdown = 7,
    config = 8,
    push_dataset = 9,
};

/// Capability bit: the worker cannot read the dataset path and wants it pushed.
inline constexpr std::uint32_t cap_needs_dataset = 1;

/// Worker -> master, first message, sent once the worker is warmed up.
struct Hello {
    std::uint32_t version = protocol_version;
    std::string worker_id;
    std::uint32_t threads = 1;
    std::uint32_t capabilities = 0;
};

/// Master -> worker, reply to Hello.
struct Config {
    std::string dataset_path;
    std::uint8_t format = 0; // 0 = csv, 1 = edm1
    std::uint32_t series = 0;
    std::uint32_t E_max = 0;
    std::uint32_t tau = 1;
    std::uint8_t exclude_degenerate = 1;
    /// Directory for worker-local row files.
    std::string row_dir;
    /// Stem used to name the row files.
    std::string run_name;
};

struct PushDataset {
    std::string edm1; // an encoded EDM1 dataset
};

struct TaskReq {};

struct TaskMsg {
    std::uint64_t task_id = 0;
    TaskKind kind = TaskKind::simplex;
    std::uint32_t series = 0;
    /// E range evaluated by a simplex task; unused for CCM rows.
    std::uint32_t E_lo = 1;
    std::uint32_t E_hi = 1;
    /// Non-zero when more tasks of the same batch follow.
    std::uint8_t more = 0;
};

struct SimplexPayload {
    std::int32_t bestE = 1;
    double rho = 0.0;
    std::uint8_t undefined = 0;
    std::uint8_t truncated = 0;
    std::vector<double> rho_by_E;
};

struct RowPayload {
    /// Worker-local map file holding the row.
    std::string row_file;
    std::vector<std::pair<std::uint32_t, SentinelReason>> sentinels;
};

struct Result {
    std::uint64_t task_id = 0;
    TaskKind kind = TaskKind::simplex;
    std::uint32_t series = 0;
    SimplexPayload simplex;
    RowPayload row;
};

struct OptEBroadcast {
    std::vector<std::int32_t> optE;
};

struct Done {};
struct Shutdown {};

using Message = std::variant<Hello, Config, PushDataset, TaskReq, TaskMsg, Result, OptEBroadcast,
                             Done, Shutdown>;

namespace detail
{

class Writer
{
public:
    explicit Writer(MsgType type) { out_.push_back(static_cast<char>(type)); }

    Writer &u8(std::uint8_t v)
    {
        out_.push_back(static_cast<char>(v));
        return *this;
    }
    Writer &u32(std::uint32_t v)
    {
        io::put_u32(out_, v);
        return *this;
    }
    Writer &i32(std::int32_t v) { return u32(static_cast<std::uint32_t>(v)); }
    Writer &u64(std::uint64_t v)
    {
        io::put_u64(out_, v);
        return *this;
    }
    Writer &f64(double v) { return u64(std::bit_cast<std::uint64_t>(v)); }
    Writer &str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        out_.append(s);
        return *this;
    }

    /// Length-prefixed frame.
    std::string frame() const
    {
        std::string f;
        io::put_u32(f, static_cast<std::uint32_t>(out_.size()));
        return f + out_;
    }

private:
    std::string out_;
};

class Reader
{
public:
    explicit Reader(std::string_view body) : body_(body) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return io::get_u32(bytes(4)); }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    std::uint64_t u64() { return io::get_u64(bytes(8)); }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str()
    {
        const std::uint32_t n = u32();
        return std::string(take(n));
    }
    /// Element count that must fit in the remaining bytes.
    std::uint32_t count(std::size_t element_size)
    {
        const std::uint32_t n = u32();
        if (static_cast<std::size_t>(n) * element_size > body_.size() - pos_) {
            throw ProtocolError("element count exceeds message size");
        }
        return n;
    }

    void finish() const
    {
        if (pos_ != body_.size()) throw ProtocolError("trailing bytes in message");
    }

private:
    std::string_view take(std::size_t n)
    {
        if (body_.size() - pos_ < n) throw ProtocolError("truncated message");
        auto s = body_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    const unsigned char *bytes(std::size_t n)
    {
        return reinterpret_cast<const unsigned char *>(take(n).data());
    }

    std::string_view body_;
    std::size_t pos_ = 0;
};

inline TaskKind task_kind(std::uint8_t v)
{
    if (v > 1) throw ProtocolError("unknown task kind " + std::to_string(v));
    return static_cast<TaskKind>(v);
}

} // namespace detail

inline std::string encode(const Message &message)
{
    using detail::Writer;
    return std::visit(
        [](const auto &m) -> std::string {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, Hello>) {
                return Writer(MsgType::hello).u32(m.version).str(m.worker_id).u32(m.threads)
                    .u32(m.capabilities).frame();
            } else if constexpr (std::is_same_v<T, Config>) {
                return Writer(MsgType::config).str(m.dataset_path).u8(m.format).u32(m.series)
                    .u32(m.E_max).u32(m.tau).u8(m.exclude_degenerate).str(m.row_dir)
                    .str(m.run_name).frame();
            } else if constexpr (std::is_same_v<T, PushDataset>) {
                return Writer(MsgType::push_dataset).str(m.edm1).frame();
            } else if constexpr (std::is_same_v<T, TaskReq>) {
                return Writer(MsgType::task_req).frame();
            } else if constexpr (std::is_same_v<T, TaskMsg>) {
                return Writer(MsgType::task).u64(m.task_id).u8(static_cast<std::uint8_t>(m.kind))
                    .u32(m.series).u32(m.E_lo).u32(m.E_hi).u8(m.more).frame();
            } else if constexpr (std::is_same_v<T, Result>) {
                Writer w(MsgType::result);
                w.u64(m.task_id).u8(static_cast<std::uint8_t>(m.kind)).u32(m.series);
                if (m.kind == TaskKind::simplex) {
                    w.i32(m.simplex.bestE).f64(m.simplex.rho).u8(m.simplex.undefined)
                        .u8(m.simplex.truncated).u32(static_cast<std::uint32_t>(m.simplex.rho_by_E.size()));
                    for (double r : m.simplex.rho_by_E) w.f64(r);
                } else {
                    w.str(m.row.row_file).u32(static_cast<std::uint32_t>(m.row.sentinels.size()));
                    for (const auto &[j, reason] : m.row.sentinels) {
                        w.u32(j).u8(static_cast<std::uint8_t>(reason));
                    }
                }
                return w.frame();
            } else if constexpr (std::is_same_v<T, OptEBroadcast>) {
                Writer w(MsgType::opte_bcast);
                w.u32(static_cast<std::uint32_t>(m.optE.size()));
                for (auto e : m.optE) w.i32(e);
                return w.frame();
            } else if constexpr (std::is_same_v<T, Done>) {
                return Writer(MsgType::done).frame();
            } else {
                return Writer(MsgType::shutdown).frame();
            }
        },
        message);
}

/// Decodes one frame body (without the length prefix).
inline Message decode(std::string_view body)
{
    detail::Reader r(body);
    const auto type = static_cast<MsgType>(r.u8());
    Message out;
    switch (type) {
    case MsgType::hello: {
        Hello m;
        m.version = r.u32();
        if (m.version != protocol_version) {
            throw ProtocolError("unsupported protocol version " + std::to_string(m.version));
        }
        m.worker_id = r.str();
        m.threads = r.u32();
        m.capabilities = r.u32();
        out = m;
        break;
    }
    case MsgType::config: {
        Config m;
        m.dataset_path = r.str();
        m.format = r.u8();
        m.series = r.u32();
        m.E_max = r.u32();
        m.tau = r.u32();
        m.exclude_degenerate = r.u8();
        m.row_dir = r.str();
        m.run_name = r.str();
        out = m;
        break;
    }
    case MsgType::push_dataset: out = PushDataset{r.str()}; break;
    case MsgType::task_req: out = TaskReq{}; break;
    case MsgType::task: {
        TaskMsg m;
        m.task_id = r.u64();
        m.kind = detail::task_kind(r.u8());
        m.series = r.u32();
        m.E_lo = r.u32();
        m.E_hi = r.u32();
        m.more = r.u8();
        out = m;
        break;
    }
    case MsgType::result: {
        Result m;
        m.task_id = r.u64();
        m.kind = detail::task_kind(r.u8());
        m.series = r.u32();
        if (m.kind == TaskKind::simplex) {
            m.simplex.bestE = r.i32();
            m.simplex.rho = r.f64();
            m.simplex.undefined = r.u8();
            m.simplex.truncated = r.u8();
            m.simplex.rho_by_E.resize(r.count(8));
            for (auto &v : m.simplex.rho_by_E) v = r.f64();
        } else {
            m.row.row_file = r.str();
            m.row.sentinels.resize(r.count(5));
            for (auto &[j, reason] : m.row.sentinels) {
                j = r.u32();
                const auto code = r.u8();
                if (code > 2) throw ProtocolError("unknown sentinel reason");
                reason = static_cast<SentinelReason>(code);
            }
        }
        out = m;
        break;
    }
    case MsgType::opte_bcast: {
        OptEBroadcast m;
        m.optE.resize(r.count(4));
        for (auto &e : m.optE) e = r.i32();
        out = m;
        break;
    }
    case MsgType::done: out = Done{}; break;
    case MsgType::shutdown: out = Shutdown{}; break;
    default: throw ProtocolError("unknown message type " + std::to_string(static_cast<int>(type)));
    }
    r.finish();
    return out;
}

/// Accumulates stream bytes and yields complete frame bodies.
class FrameBuffer
{
public:
    void append(std::string_view bytes) { buf_.append(bytes); }

    /// Next complete body, if any.
    std::optional<std::string> next()
    {
        if (buf_.size() - pos_ < 4) return std::nullopt;
        const std::uint32_t len =
            io::get_u32(reinterpret_cast<const unsigned char *>(buf_.data() + pos_));
        if (len == 0 || len > max_frame) throw ProtocolError("invalid frame length " + std::to_string(len));
        if (buf_.size() - pos_ - 4 < len) return std::nullopt;
        std::string body = buf_.substr(pos_ + 4, len);
        pos_ += 4 + len;
        if (pos_ == buf_.size()) {
            buf_.clear();
            pos_ = 0;
        }
        return body;
    }

private:
    std::string buf_;
    std::size_t pos_ = 0;
};

} // namespace edm::proto

#endif // EDM_PROTOCOL_HPP
