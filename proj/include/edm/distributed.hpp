#ifndef EDM_DISTRIBUTED_HPP
#define EDM_DISTRIBUTED_HPP

#include <poll.h>
#include <unistd.h>

#include <chrono>
#include <csignal>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ccm.hpp"
#include "core.hpp"
#include "io.hpp"
#include "net.hpp"
#include "protocol.hpp"
#include "scheduler.hpp"
#include "simplex.hpp"
#include "synth.hpp"

namespace edm
{

struct MasterOptions {
    net::Address bind;
    /// If set, the bound port is written here once listening.
    std::filesystem::path port_file;
    std::filesystem::path dataset;
    io::Format format = io::Format::csv;
    CcmParams params;
    std::filesystem::path output;
    std::filesystem::path manifest;
    /// Directory for worker row files; defaults to the output's directory.
    std::filesystem::path row_dir;
    std::size_t tasks_per_request = 1;
    /// Abort if the run has not finished after this many seconds (0 = never).
    double timeout_seconds = 0.0;
    /// A task dispatched more often than this aborts the run.
    std::size_t max_dispatches = 5;
    bool verbose = false;
};

namespace detail
{

inline double seconds_since(std::chrono::steady_clock::time_point start)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

struct Connection {
    net::Socket socket;
    WorkerId id = 0;
    proto::FrameBuffer buffer;
    bool greeted = false;
    bool waiting = false;
    std::string name;
};

} // namespace detail

/// Self-scheduling master. Serves simplex tasks, broadcasts optE once all
/// of them are back, serves CCM rows, then merges the worker row files into
/// options.output. Workers that disconnect have their tasks re-queued.
inline io::RunManifest run_master(const MasterOptions &options)
{
    using clock = std::chrono::steady_clock;
    const auto start = clock::now();
    const auto log = [&](const std::string &msg) {
        if (options.verbose) std::cerr << "[master] " << msg << '\n';
    };

    const std::string raw = io::read_file(options.dataset);
    const TimeSeriesSet ts = options.format == io::Format::csv
                                 ? io::read_dataset(options.dataset, io::Format::csv)
                                 : io::decode_dataset(raw);
    const std::size_t n = ts.count();
    std::string pushed_dataset; // encoded lazily for pathless workers

    const auto row_dir = options.row_dir.empty()
                             ? std::filesystem::absolute(options.output).parent_path()
                             : std::filesystem::absolute(options.row_dir);
    std::filesystem::create_directories(row_dir);

    io::RunManifest manifest;
    manifest.dataset_path = options.dataset.string();
    manifest.dataset_hash = io::hex64(io::fnv1a(raw));
    manifest.series = n;
    manifest.length = ts.length();
    manifest.E_max = options.params.E_max;
    manifest.tau = options.params.tau;
    manifest.exclude_degenerate = options.params.exclude_degenerate;
    manifest.mode = "distributed";
    manifest.causal_map_path = options.output.string();
    manifest.embeddings.resize(n);

    proto::Config config;
    config.dataset_path = std::filesystem::absolute(options.dataset).string();
    config.format = options.format == io::Format::csv ? 0 : 1;
    config.series = static_cast<std::uint32_t>(n);
    config.E_max = static_cast<std::uint32_t>(options.params.E_max);
    config.tau = static_cast<std::uint32_t>(options.params.tau);
    config.exclude_degenerate = options.params.exclude_degenerate ? 1 : 0;
    config.row_dir = row_dir.string();
    config.run_name = options.output.stem().string();

    net::Address bind = options.bind;
    net::Socket listener = net::listen_tcp(bind);
    if (!options.port_file.empty()) {
        const auto tmp = options.port_file.string() + ".tmp";
        std::ofstream(tmp) << bind.port << '\n';
        std::filesystem::rename(tmp, options.port_file);
    }
    log("listening on " + bind.host + ":" + std::to_string(bind.port));

    TaskBoard board(n);
    std::map<int, detail::Connection> conns;
    WorkerId next_worker = 1;
    std::optional<proto::OptEBroadcast> broadcast;
    std::vector<std::optional<io::RowLocation>> rows(n);
    std::vector<std::vector<SentinelEntry>> row_sentinels(n);
    double simplex_seconds = 0.0;

    const auto send = [&](detail::Connection &c, const proto::Message &m) {
        try {
            net::send_message(c.socket.fd(), m);
        } catch (const net::NetError &) {
            // Reaped on the next poll.
        }
    };

    const auto serve = [&](detail::Connection &c) {
        std::vector<Task> batch;
        while (batch.size() < std::max<std::size_t>(options.tasks_per_request, 1)) {
            auto t = board.try_acquire(c.id);
            if (!t) break;
            batch.push_back(*t);
        }
        if (batch.empty()) {
            if (board.phase() == RunPhase::finished) {
                send(c, proto::Done{});
                c.waiting = false;
            } else {
                c.waiting = true;
            }
            return;
        }
        c.waiting = false;
        const auto counts = board.dispatch_counts();
        for (std::size_t b = 0; b < batch.size(); b++) {
            const Task &t = batch[b];
            if (counts.at(t.id) > options.max_dispatches) {
                throw std::runtime_error("task " + std::to_string(t.id) + " (series " +
                                         std::to_string(t.series) + ") failed on " +
                                         std::to_string(options.max_dispatches) + " workers");
            }
            proto::TaskMsg m;
            m.task_id = t.id;
            m.kind = t.kind;
            m.series = t.series;
            m.E_lo = 1;
            m.E_hi = static_cast<std::uint32_t>(options.params.E_max);
            m.more = b + 1 < batch.size() ? 1 : 0;
            send(c, m);
        }
    };

    const auto serve_waiting = [&] {
        for (auto &[fd, c] : conns) {
            if (c.greeted && c.waiting) serve(c);
        }
    };

    const auto drop = [&](int fd) {
        auto it = conns.find(fd);
        if (it == conns.end()) return;
        const std::size_t requeued = board.release(it->second.id);
        log("worker " + it->second.name + " disconnected, re-queued " + std::to_string(requeued) +
            " task(s)");
        conns.erase(it);
        serve_waiting();
    };

    const auto handle = [&](detail::Connection &c, const proto::Message &msg) {
        if (const auto *hello = std::get_if<proto::Hello>(&msg)) {
            c.greeted = true;
            c.name = hello->worker_id;
            log("worker " + c.name + " joined (" + std::to_string(hello->threads) + " threads)");
            send(c, config);
            if (hello->capabilities & proto::cap_needs_dataset) {
                if (pushed_dataset.empty()) pushed_dataset = io::encode_dataset(ts);
                send(c, proto::PushDataset{pushed_dataset});
            }
            if (broadcast) send(c, *broadcast);
        } else if (std::holds_alternative<proto::TaskReq>(msg)) {
            if (!c.greeted) throw proto::ProtocolError("task request before hello");
            serve(c);
        } else if (const auto *res = std::get_if<proto::Result>(&msg)) {
            const Task task{res->task_id, res->kind, res->series};
            if (res->series >= n) throw proto::ProtocolError("result for unknown series");
            if (res->kind == TaskKind::simplex) {
                auto &e = manifest.embeddings[res->series];
                const OptimalEmbedding candidate{res->series,         res->simplex.bestE,
                                                 res->simplex.rho,    res->simplex.rho_by_E,
                                                 res->simplex.undefined != 0,
                                                 res->simplex.truncated != 0};
                const auto done = board.complete(task);
                if (!done.accepted) return;
                e = candidate;
                if (done.closed_phase) {
                    simplex_seconds = detail::seconds_since(start);
                    proto::OptEBroadcast b;
                    for (const auto &emb : manifest.embeddings) b.optE.push_back(emb.bestE);
                    broadcast = b;
                    for (auto &[fd, other] : conns) {
                        if (other.greeted) send(other, b);
                    }
                    board.open_ccm();
                    log("optE broadcast; CCM phase open");
                    serve_waiting();
                }
            } else {
                const auto done = board.complete(task);
                if (!done.accepted) return;
                rows[res->series] = io::RowLocation{res->series, res->row.row_file, c.name};
                for (const auto &[j, reason] : res->row.sentinels) {
                    row_sentinels[res->series].push_back({res->series, j, reason});
                }
            }
        } else {
            throw proto::ProtocolError("unexpected message from worker");
        }
    };

    while (board.phase() != RunPhase::finished) {
        if (options.timeout_seconds > 0 && detail::seconds_since(start) > options.timeout_seconds) {
            throw std::runtime_error("master timed out");
        }
        std::vector<pollfd> fds;
        fds.push_back({listener.fd(), POLLIN, 0});
        for (const auto &[fd, c] : conns) fds.push_back({fd, POLLIN, 0});
        const int ready = ::poll(fds.data(), fds.size(), 200);
        if (ready < 0) {
            if (errno == EINTR) continue;
            throw net::NetError("poll failed");
        }
        if (fds[0].revents & POLLIN) {
            const int fd = ::accept(listener.fd(), nullptr, nullptr);
            if (fd >= 0) {
                detail::Connection c;
                c.socket = net::Socket(fd);
                c.id = next_worker++;
                conns.emplace(fd, std::move(c));
            }
        }
        for (std::size_t k = 1; k < fds.size(); k++) {
            if (!(fds[k].revents & (POLLIN | POLLHUP | POLLERR))) continue;
            const int fd = fds[k].fd;
            auto it = conns.find(fd);
            if (it == conns.end()) continue;
            bool alive = true;
            try {
                alive = net::read_some(fd, it->second.buffer);
                while (alive) {
                    auto body = it->second.buffer.next();
                    if (!body) break;
                    handle(it->second, proto::decode(*body));
                }
            } catch (const net::NetError &) {
                alive = false;
            } catch (const proto::ProtocolError &e) {
                log(std::string("protocol error: ") + e.what());
                alive = false;
            }
            if (!alive) drop(fd);
        }
    }

    const double ccm_end = detail::seconds_since(start);
    for (auto &[fd, c] : conns) send(c, proto::Shutdown{});
    conns.clear();

    for (auto &r : rows) manifest.rows.push_back(*r);
    for (auto &s : row_sentinels) manifest.sentinels.insert(manifest.sentinels.end(), s.begin(), s.end());
    io::merge_row_files(options.output, n, manifest.rows);
    const double merge_end = detail::seconds_since(start);

    manifest.timings = {{"simplex", simplex_seconds},
                        {"ccm", ccm_end - simplex_seconds},
                        {"merge", merge_end - ccm_end}};
    if (!options.manifest.empty()) {
        manifest.optE_path = (options.manifest.parent_path() / (options.output.stem().string() + ".optE.csv")).string();
        io::write_optE_csv(manifest.optE_path, ts, manifest.embeddings);
        io::write_manifest(options.manifest, manifest);
    }
    log("done");
    return manifest;
}

struct WorkerOptions {
    net::Address master;
    std::size_t threads = 1;
    std::string worker_id;
    /// Ask the master to push the dataset instead of reading its path.
    bool fetch_dataset = false;
    int reconnect_attempts = 5;
    int backoff_ms = 100;
    /// Fault injection: SIGKILL self after writing this many rows, before
    /// acknowledging the last one (0 = never).
    int crash_after_rows = 0;
    /// Extra sleep per task, for exercising the scheduler.
    int task_delay_ms = 0;
    bool verbose = false;
};

inline std::string default_worker_id()
{
    char host[256] = {0};
    ::gethostname(host, sizeof host - 1);
    return std::string(host) + "-" + std::to_string(::getpid());
}

/// Runs tasks from the master until it says DONE or SHUTDOWN. Returns the
/// process exit code: 0 on a clean finish, 1 if the master is unreachable.
inline int run_worker(const WorkerOptions &options)
{
    const std::string id = options.worker_id.empty() ? default_worker_id() : options.worker_id;
    const auto log = [&](const std::string &msg) {
        if (options.verbose) std::cerr << "[worker " << id << "] " << msg << '\n';
    };

    // Warm-up so that first-task timing is not skewed by cold start.
    {
        const auto warm = synth::scaled_dummy(1, 64, 0);
        (void)find_optimal_E(warm.series(0), 2, 1);
    }

    std::optional<ThreadPool> pool;
    if (options.threads > 1) pool.emplace(options.threads);
    ThreadPool *inner = pool ? &*pool : nullptr;

    std::optional<proto::Config> config;
    std::optional<TimeSeriesSet> ts;
    std::vector<int> optE;
    std::unique_ptr<io::CausalMapFile> row_file;
    int rows_written = 0;

    const auto compute = [&](const proto::TaskMsg &t) {
        if (!ts || !config) throw proto::ProtocolError("task before dataset");
        if (options.task_delay_ms > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(options.task_delay_ms));
        }
        proto::Result r;
        r.task_id = t.task_id;
        r.kind = t.kind;
        r.series = t.series;
        if (t.series >= ts->count()) throw proto::ProtocolError("task for unknown series");
        const Series series = ts->series(t.series);
        if (t.kind == TaskKind::simplex) {
            const auto e = find_optimal_E(series, static_cast<int>(t.E_hi),
                                          static_cast<int>(config->tau), t.series, inner);
            r.simplex = {e.bestE, e.rho, static_cast<std::uint8_t>(e.undefined),
                         static_cast<std::uint8_t>(e.truncated), e.rho_by_E};
            return r;
        }
        if (optE.size() != ts->count()) throw proto::ProtocolError("CCM task before optE broadcast");
        const auto tables = precompute_library_tables(series, static_cast<int>(config->E_max),
                                                      static_cast<int>(config->tau),
                                                      config->exclude_degenerate != 0, t.series, inner);
        const auto row = ccm_row(tables, *ts, optE);
        if (!row_file) {
            const auto path = std::filesystem::path(config->row_dir) /
                              (config->run_name + ".part-" + id + ".edm");
            row_file = std::make_unique<io::CausalMapFile>(path, ts->count());
        }
        row_file->write_row(t.series, row.rho);
        r.row.row_file = row_file->path().string();
        for (const auto &s : row.sentinels) {
            r.row.sentinels.emplace_back(static_cast<std::uint32_t>(s.target), s.reason);
        }
        if (options.crash_after_rows > 0 && ++rows_written >= options.crash_after_rows) {
            log("fault injection: killing self");
            std::raise(SIGKILL);
        }
        return r;
    };

    // One connection's lifetime. Returns true when the master ended the run.
    const auto session = [&](net::Socket &sock) -> bool {
        proto::FrameBuffer buffer;
        net::send_message(sock.fd(), proto::Hello{proto::protocol_version, id,
                                                  static_cast<std::uint32_t>(options.threads),
                                                  options.fetch_dataset ? proto::cap_needs_dataset : 0u});
        std::vector<proto::TaskMsg> batch;
        for (;;) {
            const auto msg = net::receive_message(sock.fd(), buffer);
            if (const auto *c = std::get_if<proto::Config>(&msg)) {
                config = *c;
                if (!options.fetch_dataset) {
                    if (!ts) {
                        ts = io::read_dataset(c->dataset_path,
                                              c->format == 0 ? io::Format::csv : io::Format::edm1);
                    }
                    net::send_message(sock.fd(), proto::TaskReq{});
                }
            } else if (const auto *p = std::get_if<proto::PushDataset>(&msg)) {
                if (!ts) ts = io::decode_dataset(p->edm1);
                net::send_message(sock.fd(), proto::TaskReq{});
            } else if (const auto *b = std::get_if<proto::OptEBroadcast>(&msg)) {
                optE.assign(b->optE.begin(), b->optE.end());
                log("received optE");
            } else if (const auto *t = std::get_if<proto::TaskMsg>(&msg)) {
                batch.push_back(*t);
                if (t->more) continue;
                for (const auto &task : batch) net::send_message(sock.fd(), compute(task));
                batch.clear();
                net::send_message(sock.fd(), proto::TaskReq{});
            } else if (std::holds_alternative<proto::Done>(msg) ||
                       std::holds_alternative<proto::Shutdown>(msg)) {
                return true;
            } else {
                throw proto::ProtocolError("unexpected message from master");
            }
        }
    };

    int failures = 0;
    for (;;) {
        try {
            net::Socket sock = net::connect_tcp(options.master);
            failures = 0;
            if (session(sock)) {
                log("finished");
                return 0;
            }
        } catch (const net::NetError &e) {
            log(e.what());
        }
        if (++failures > options.reconnect_attempts) {
            std::cerr << "worker " << id << ": lost connection to master\n";
            return 1;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(options.backoff_ms << (failures - 1)));
    }
}

} // namespace edm

#endif // EDM_DISTRIBUTED_HPP
