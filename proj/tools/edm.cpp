// Command-line front end: dataset generation, local and distributed causal
// inference, standalone simplex diagnostics and scaling benchmarks.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>

#include "edm/edm.hpp"

namespace fs = std::filesystem;

namespace
{

constexpr int exit_ok = 0;
constexpr int exit_compute = 1;
constexpr int exit_usage = 2;

/// Bad flags, missing files and malformed input.
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

edm::io::Format resolve_format(const std::string &flag, const fs::path &path)
{
    if (flag.empty() || flag == "auto") return edm::io::format_for_path(path);
    try {
        return edm::io::parse_format(flag);
    } catch (const std::invalid_argument &e) {
        throw InputError(e.what());
    }
}

edm::TimeSeriesSet load(const fs::path &path, edm::io::Format format)
{
    if (!fs::exists(path)) throw InputError("no such file: " + path.string());
    try {
        return edm::io::read_dataset(path, format);
    } catch (const edm::io::FormatError &e) {
        throw InputError(path.string() + ": " + e.what());
    } catch (const std::invalid_argument &e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void check_params(int E_max, int tau)
{
    if (E_max < 1) throw InputError("--emax must be at least 1");
    if (tau < 1) throw InputError("--tau must be at least 1");
}

fs::path default_manifest(const fs::path &output)
{
    return output.parent_path() / (output.stem().string() + ".manifest.json");
}

struct PipelineArgs {
    std::string input;
    std::string format = "auto";
    int E_max = 20;
    int tau = 1;
    std::string output = "causal_map.edm";
    std::string manifest;
    std::size_t threads = 1;
    bool naive = false;
    bool no_self_exclusion = false;
};

int cmd_pipeline(const PipelineArgs &a)
{
    check_params(a.E_max, a.tau);
    const fs::path input = a.input;
    const auto format = resolve_format(a.format, input);
    const auto ts = load(input, format);
    const edm::CcmParams params{a.E_max, a.tau, !a.no_self_exclusion};

    const auto start = std::chrono::steady_clock::now();
    edm::Profile profile;
    const auto result = a.naive ? edm::naive_causal_inference(ts, params, &profile)
                                : edm::run_local(ts, params, {.threads = a.threads, .profile = &profile});
    const double compute_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    const fs::path output = a.output;
    {
        EDM_PROFILE_SCOPE(&profile, io_ns);
        edm::io::write_causal_map(output, result.map);
    }

    edm::io::RunManifest m;
    m.dataset_path = input.string();
    m.dataset_hash = edm::io::hex64(edm::io::fnv1a(edm::io::read_file(input)));
    m.series = ts.count();
    m.length = ts.length();
    m.E_max = a.E_max;
    m.tau = a.tau;
    m.exclude_degenerate = params.exclude_degenerate;
    m.mode = a.naive ? "naive" : "local";
    m.causal_map_path = output.string();
    m.embeddings = result.embeddings;
    for (std::size_t i = 0; i < ts.count(); i++) m.rows.push_back({i, output, "local"});
    m.sentinels = result.map.sentinels;
    m.timings = {{"compute", compute_s},
                 {"knn", edm::Profile::seconds(profile.knn_ns)},
                 {"lookup", edm::Profile::seconds(profile.lookup_ns)},
                 {"corrcoef", edm::Profile::seconds(profile.corrcoef_ns)},
                 {"io", edm::Profile::seconds(profile.io_ns)}};
    const fs::path manifest = a.manifest.empty() ? default_manifest(output) : fs::path(a.manifest);
    m.optE_path = (manifest.parent_path() / (output.stem().string() + ".optE.csv")).string();
    edm::io::write_optE_csv(m.optE_path, ts, result.embeddings);
    edm::io::write_manifest(manifest, m);

    std::cerr << "wrote " << ts.count() << "x" << ts.count() << " causal map to " << output
              << " (" << result.map.sentinels.size() << " undefined entries)\n";
    return exit_ok;
}

struct SimplexArgs {
    std::string input;
    std::string format = "auto";
    int E_max = 20;
    int tau = 1;
    std::string report;
    std::size_t threads = 1;
};

int cmd_simplex(const SimplexArgs &a)
{
    check_params(a.E_max, a.tau);
    const fs::path input = a.input;
    const auto ts = load(input, resolve_format(a.format, input));
    edm::ThreadPool pool(a.threads);
    const auto embeddings = edm::optimal_embeddings(ts, {a.E_max, a.tau, true}, {.pool = &pool});

    std::ofstream file;
    if (!a.report.empty()) {
        file.open(a.report);
        if (!file) throw InputError("cannot open report file " + a.report);
    }
    std::ostream &out = a.report.empty() ? std::cout : file;
    out << "series,name,E,rho,best\n";
    char buf[32];
    for (const auto &e : embeddings) {
        for (std::size_t k = 0; k < e.rho_by_E.size(); k++) {
            const int E = static_cast<int>(k) + 1;
            std::snprintf(buf, sizeof buf, "%.17g", e.rho_by_E[k]);
            out << e.series_id << ',' << ts.name(e.series_id) << ',' << E << ','
                << (edm::is_undefined(e.rho_by_E[k]) ? "nan" : buf) << ','
                << (E == e.bestE && !e.undefined ? 1 : 0) << '\n';
        }
    }
    return exit_ok;
}

struct GenArgs {
    std::string kind = "coupled";
    std::size_t count = 1;
    std::size_t length = 1000;
    double beta_xy = 0.0;
    double beta_yx = 0.32;
    double r_x = 3.8;
    double r_y = 3.8;
    std::uint64_t seed = 0;
    std::string output;
    std::string format = "auto";
};

int cmd_gen(const GenArgs &a)
{
    edm::TimeSeriesSet ts;
    try {
        if (a.kind == "coupled") {
            ts = edm::synth::coupled_logistic(a.count, a.length, {a.beta_xy, a.beta_yx, a.r_x, a.r_y},
                                              a.seed);
        } else if (a.kind == "noise") {
            ts = edm::synth::noise_dataset(a.count, a.length, a.seed);
        } else {
            ts = edm::synth::scaled_dummy(a.count, a.length, a.seed);
        }
    } catch (const std::invalid_argument &e) {
        throw InputError(e.what());
    }
    const fs::path output = a.output;
    edm::io::write_dataset(output, ts, resolve_format(a.format, output));
    return exit_ok;
}

struct MasterArgs {
    std::string bind = "0.0.0.0:7070";
    std::string input;
    std::string format = "auto";
    int E_max = 20;
    int tau = 1;
    bool no_self_exclusion = false;
    std::string output = "causal_map.edm";
    std::string manifest;
    std::string port_file;
    std::string row_dir;
    std::size_t tasks_per_request = 1;
    double timeout = 0.0;
    bool verbose = false;
};

int cmd_master(const MasterArgs &a)
{
    check_params(a.E_max, a.tau);
    edm::MasterOptions o;
    try {
        o.bind = edm::net::parse_address(a.bind);
    } catch (const std::invalid_argument &e) {
        throw InputError(e.what());
    }
    o.dataset = a.input;
    if (!fs::exists(o.dataset)) throw InputError("no such file: " + a.input);
    o.format = resolve_format(a.format, o.dataset);
    o.params = {a.E_max, a.tau, !a.no_self_exclusion};
    o.output = a.output;
    o.manifest = a.manifest.empty() ? default_manifest(o.output) : fs::path(a.manifest);
    o.port_file = a.port_file;
    o.row_dir = a.row_dir;
    o.tasks_per_request = a.tasks_per_request;
    o.timeout_seconds = a.timeout;
    o.verbose = a.verbose;
    try {
        edm::run_master(o);
    } catch (const edm::io::FormatError &e) {
        throw InputError(e.what());
    }
    return exit_ok;
}

struct WorkerArgs {
    std::string master;
    std::size_t threads = 1;
    std::string id;
    bool fetch_dataset = false;
    int reconnect_attempts = 5;
    int crash_after = 0;
    int task_delay_ms = 0;
    bool verbose = false;
};

int cmd_worker(const WorkerArgs &a)
{
    std::string address = a.master;
    if (address.empty()) {
        if (const char *env = std::getenv("EDM_MASTER_ADDR")) address = env;
    }
    if (address.empty()) throw InputError("no master address: pass --master or set EDM_MASTER_ADDR");
    edm::WorkerOptions o;
    try {
        o.master = edm::net::parse_address(address);
    } catch (const std::invalid_argument &e) {
        throw InputError(e.what());
    }
    o.threads = a.threads;
    o.worker_id = a.id;
    o.fetch_dataset = a.fetch_dataset;
    o.reconnect_attempts = a.reconnect_attempts;
    o.crash_after_rows = a.crash_after;
    o.task_delay_ms = a.task_delay_ms;
    o.verbose = a.verbose;
    return edm::run_worker(o) == 0 ? exit_ok : exit_compute;
}

struct BenchArgs {
    std::string mode = "scale-l";
    int runs = 0;
    std::string report;
    int E_max = edm::bench::default_E_max;
    std::uint64_t seed = 42;
    std::vector<std::size_t> series;
    std::vector<std::size_t> lengths;
    std::vector<std::size_t> threads;
};

int cmd_bench(const BenchArgs &a)
{
    edm::bench::Config c;
    try {
        c = edm::bench::default_config(a.mode);
    } catch (const std::invalid_argument &e) {
        throw InputError(e.what());
    }
    if (a.runs > 0) c.runs = a.runs;
    if (!a.series.empty()) c.series = a.series;
    if (!a.lengths.empty()) c.lengths = a.lengths;
    if (!a.threads.empty()) c.threads = a.threads;
    c.E_max = a.E_max;
    c.seed = a.seed;
    const auto samples = edm::bench::run(c, &std::cerr);
    if (a.report.empty()) {
        edm::bench::write_csv(std::cout, samples);
    } else {
        std::ofstream out(a.report);
        if (!out) throw InputError("cannot open report file " + a.report);
        edm::bench::write_csv(out, samples);
    }
    return exit_ok;
}

} // namespace

int main(int argc, char **argv)
{
    CLI::App app{"Parallel convergent cross mapping"};
    app.require_subcommand(1);
    app.allow_extras(false);

    PipelineArgs pipeline;
    auto *p = app.add_subcommand("pipeline", "Optimal E search and all-pairs CCM on one node");
    p->add_option("-i,--input", pipeline.input, "Dataset (CSV or EDM1)")->required();
    p->add_option("--format", pipeline.format, "csv, edm1 or auto (by extension)");
    p->add_option("--emax", pipeline.E_max, "Largest embedding dimension")->capture_default_str();
    p->add_option("--tau", pipeline.tau, "Delay in steps")->capture_default_str();
    p->add_option("-o,--output", pipeline.output, "Causal map output (EDM1 float32)")->capture_default_str();
    p->add_option("--manifest", pipeline.manifest, "Manifest path (default <output stem>.manifest.json)");
    p->add_option("-t,--threads", pipeline.threads, "Worker threads")->capture_default_str();
    p->add_flag("--naive", pipeline.naive, "Rebuild the neighbor table for every pair (reference path)");
    p->add_flag("--no-self-exclusion", pipeline.no_self_exclusion,
                "Allow a query point to be its own neighbor");

    SimplexArgs simplex;
    auto *s = app.add_subcommand("simplex", "Per-series simplex skill for E = 1..emax");
    s->add_option("-i,--input", simplex.input, "Dataset (CSV or EDM1)")->required();
    s->add_option("--format", simplex.format, "csv, edm1 or auto");
    s->add_option("--emax", simplex.E_max, "Largest embedding dimension")->capture_default_str();
    s->add_option("--tau", simplex.tau, "Delay in steps")->capture_default_str();
    s->add_option("--report", simplex.report, "CSV output (default stdout)");
    s->add_option("-t,--threads", simplex.threads, "Worker threads")->capture_default_str();

    GenArgs gen;
    auto *g = app.add_subcommand("gen", "Generate a synthetic dataset");
    g->add_option("--kind", gen.kind, "coupled, noise or dummy")
        ->check(CLI::IsMember({"coupled", "noise", "dummy"}))->capture_default_str();
    g->add_option("-n,--count", gen.count, "Pairs (coupled) or series (noise, dummy)")->capture_default_str();
    g->add_option("-l,--length", gen.length, "Time steps")->capture_default_str();
    g->add_option("--beta-xy", gen.beta_xy, "Effect of y on x")->capture_default_str();
    g->add_option("--beta-yx", gen.beta_yx, "Effect of x on y")->capture_default_str();
    g->add_option("--rx", gen.r_x, "Growth rate of x")->capture_default_str();
    g->add_option("--ry", gen.r_y, "Growth rate of y")->capture_default_str();
    g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
    g->add_option("-o,--output", gen.output, "Output file")->required();
    g->add_option("--format", gen.format, "csv, edm1 or auto");

    MasterArgs master;
    auto *m = app.add_subcommand("master", "Serve tasks to workers over TCP");
    m->add_option("--bind", master.bind, "host:port to listen on (port 0 picks one)")->capture_default_str();
    m->add_option("-i,--input", master.input, "Dataset path readable by the workers")->required();
    m->add_option("--format", master.format, "csv, edm1 or auto");
    m->add_option("--emax", master.E_max, "Largest embedding dimension")->capture_default_str();
    m->add_option("--tau", master.tau, "Delay in steps")->capture_default_str();
    m->add_flag("--no-self-exclusion", master.no_self_exclusion, "Allow self neighbors");
    m->add_option("-o,--output", master.output, "Merged causal map")->capture_default_str();
    m->add_option("--manifest", master.manifest, "Manifest path");
    m->add_option("--port-file", master.port_file, "Write the bound port here");
    m->add_option("--row-dir", master.row_dir, "Directory for worker row files");
    m->add_option("--tasks-per-request", master.tasks_per_request, "Tasks handed out per request")
        ->capture_default_str();
    m->add_option("--timeout", master.timeout, "Abort after this many seconds (0 = never)");
    m->add_flag("-v,--verbose", master.verbose, "Log scheduling events");

    WorkerArgs worker;
    auto *w = app.add_subcommand("worker", "Pull and run tasks from a master");
    w->add_option("--master", worker.master, "host:port (default $EDM_MASTER_ADDR)");
    w->add_option("-t,--threads", worker.threads, "Threads per task")->capture_default_str();
    w->add_option("--id", worker.id, "Worker name (default host-pid)");
    w->add_flag("--fetch-dataset", worker.fetch_dataset, "Receive the dataset over the connection");
    w->add_option("--reconnect-attempts", worker.reconnect_attempts, "Reconnects before giving up")
        ->capture_default_str();
    w->add_option("--crash-after", worker.crash_after, "Testing: kill self after N rows");
    w->add_option("--task-delay-ms", worker.task_delay_ms, "Testing: sleep per task");
    w->add_flag("-v,--verbose", worker.verbose, "Log progress");

    BenchArgs bench;
    auto *b = app.add_subcommand("bench", "Scaling benchmarks on dummy data");
    b->add_option("--mode", bench.mode, "scale-n, scale-l or workers")
        ->check(CLI::IsMember({"scale-n", "scale-l", "workers"}))->capture_default_str();
    b->add_option("--seeds,--runs", bench.runs, "Repetitions per configuration");
    b->add_option("--report", bench.report, "CSV output (default stdout)");
    b->add_option("--emax", bench.E_max, "Largest embedding dimension")->capture_default_str();
    b->add_option("--seed", bench.seed, "Dataset seed")->capture_default_str();
    b->add_option("--series", bench.series, "Override series counts");
    b->add_option("--lengths", bench.lengths, "Override series lengths");
    b->add_option("--threads", bench.threads, "Override thread counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? exit_ok : exit_usage;
    }

    try {
        if (*p) return cmd_pipeline(pipeline);
        if (*s) return cmd_simplex(simplex);
        if (*g) return cmd_gen(gen);
        if (*m) return cmd_master(master);
        if (*w) return cmd_worker(worker);
        if (*b) return cmd_bench(bench);
    } catch (const InputError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_usage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_compute;
    }
    return exit_usage;
}
