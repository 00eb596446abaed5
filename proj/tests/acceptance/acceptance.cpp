// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails. `--only N` runs a single one.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "../oracles.hpp"
#include "edm/bench.hpp"
#include "edm/edm.hpp"

extern char **environ;

using namespace edm;
namespace fs = std::filesystem;
using clock_type = std::chrono::steady_clock;

namespace
{

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int precision = 3)
{
    std::ostringstream o;
    o.precision(precision);
    o << v;
    return o.str();
}

double seconds_since(clock_type::time_point start)
{
    return std::chrono::duration<double>(clock_type::now() - start).count();
}

fs::path workdir(const std::string &name)
{
    const auto dir = fs::temp_directory_path() / ("edm-acceptance-" + std::to_string(::getpid())) / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::vector<std::vector<double>> columns(const TimeSeriesSet &ts)
{
    std::vector<std::vector<double>> out;
    for (std::size_t j = 0; j < ts.count(); j++) out.emplace_back(ts.series(j).begin(), ts.series(j).end());
    return out;
}

/// Largest |a - b| over two maps; a sentinel must match a sentinel.
double max_map_diff(std::span<const double> a, std::span<const double> b)
{
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); i++) {
        if (std::isnan(a[i]) || std::isnan(b[i])) {
            if (std::isnan(a[i]) != std::isnan(b[i])) return std::numeric_limits<double>::infinity();
            continue;
        }
        worst = std::max(worst, std::abs(a[i] - b[i]));
    }
    return worst;
}

// ---------------------------------------------------------------------------

Outcome oracle_equivalence()
{
    const auto start = clock_type::now();
    const double tol = 1e-9;
    double worst_naive = 0.0, worst_oracle = 0.0;
    std::size_t optE_mismatch = 0;

    auto check = [&](const TimeSeriesSet &ts, const CcmParams &params) {
        const auto fast = full_causal_inference(ts, params);
        const auto naive = naive_causal_inference(ts, params);
        worst_naive = std::max(worst_naive, max_map_diff(fast.map.values(), naive.map.values()));
        const auto ref = oracle::causal_map(columns(ts), params.E_max, params.tau, params.exclude_degenerate);
        worst_oracle = std::max(worst_oracle, max_map_diff(fast.map.values(), ref));
        for (std::size_t j = 0; j < ts.count(); j++) {
            optE_mismatch += fast.embeddings[j].bestE != oracle::best_E(columns(ts)[j], params.E_max, params.tau);
        }
    };
    for (std::uint64_t seed = 0; seed < 10; seed++) {
        std::vector<std::vector<double>> cols;
        for (std::size_t j = 0; j < 20; j++) cols.push_back(oracle::uniform(100, seed * 1000 + j));
        check(TimeSeriesSet(std::move(cols)), {5, 1, true});
    }
    check(synth::coupled_logistic(5, 500, {0.02, 0.1}, 7), {20, 1, true});

    const double elapsed = seconds_since(start);
    Outcome o;
    o.pass = worst_naive <= tol && worst_oracle <= tol && optE_mismatch == 0 && elapsed < 60.0;
    o.detail = "11 datasets, max |reuse - naive| = " + fmt(worst_naive) + ", max |reuse - oracle| = " +
               fmt(worst_oracle) + " (tol 1e-9), optE mismatches " + std::to_string(optE_mismatch) +
               ", " + fmt(elapsed) + " s (limit 60 s)";
    return o;
}

Outcome knn_correctness()
{
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> pick_L(10, 200), pick_E(1, 5), pick_tau(1, 2);
    std::size_t instances = 0, index_mismatch = 0;
    double worst = 0.0;
    for (int n = 0; n < 100; n++) {
        const std::size_t L = static_cast<std::size_t>(pick_L(rng));
        const int E = pick_E(rng), tau = pick_tau(rng);
        if (static_cast<std::size_t>((E - 1) * tau + E + 2) >= L) {
            n--;
            continue;
        }
        const auto x = oracle::uniform(L, rng());
        for (bool exclude : {true, false}) {
            instances++;
            const auto table = compute_knn_table(x, x, {E, tau, 0}, {.exclude_degenerate = exclude});
            for (std::size_t r = 0; r < table.rows; r++) {
                const auto ref = oracle::knn(x, x, E, tau, 0, table.first_time + r, exclude);
                const auto idx = table.index_row(r);
                const auto dist = table.distance_row(r);
                for (std::size_t j = 0; j < table.k; j++) {
                    index_mismatch += idx[j] != ref.index[j];
                    worst = std::max(worst, std::abs(dist[j] - ref.distance[j]));
                }
            }
        }
    }
    Outcome o;
    o.pass = index_mismatch == 0 && worst <= 1e-12;
    o.detail = std::to_string(instances) + " instances (100 x both exclusion modes), index mismatches " +
               std::to_string(index_mismatch) + ", max distance error " + fmt(worst) + " (tol 1e-12)";
    return o;
}

double median_of(const std::vector<bench::Sample> &samples, std::size_t n, std::size_t L,
                 double bench::Sample::*field)
{
    std::vector<double> v;
    for (const auto &s : samples) {
        if (s.series == n && s.length == L) v.push_back(s.*field);
    }
    return bench::median(v);
}

Outcome complexity_scaling()
{
    auto scale_l = bench::default_config("scale-l");
    auto scale_n = bench::default_config("scale-n");
    scale_l.runs = scale_n.runs = 5;
    const auto l = bench::run(scale_l, &std::cerr);
    const auto n = bench::run(scale_n, &std::cerr);

    const double knn_ratio = median_of(l, 200, 4000, &bench::Sample::knn) / median_of(l, 200, 2000, &bench::Sample::knn);
    const double lookup_ratio =
        median_of(n, 1000, 1000, &bench::Sample::lookup) / median_of(n, 500, 1000, &bench::Sample::lookup);
    auto within = [](double r) { return r >= 3.5 && r <= 4.5; };
    Outcome o;
    o.pass = within(knn_ratio) && within(lookup_ratio);
    o.detail = "kNN time L 2000->4000 (N=200) ratio " + fmt(knn_ratio) + ", lookup time N 500->1000 (L=1000) ratio " +
               fmt(lookup_ratio) + ", medians of 5, E_max " + std::to_string(scale_l.E_max) + ", band [3.5, 4.5]";
    return o;
}

Outcome parallel_speedup()
{
    const auto config = bench::default_config("workers");
    const auto samples = bench::run(config, &std::cerr);
    auto median_total = [&](std::size_t p) {
        std::vector<double> v;
        for (const auto &s : samples) {
            if (s.threads == p) v.push_back(s.total);
        }
        return bench::median(v);
    };
    const double t1 = median_total(1);
    bool pass = true;
    std::string detail = "N=500 L=1000, hardware threads " + std::to_string(std::thread::hardware_concurrency()) +
                         ", T1 " + fmt(t1) + " s;";
    for (std::size_t p : {2u, 4u, 8u}) {
        const double s = t1 / median_total(p);
        pass = pass && s >= 0.6 * static_cast<double>(p);
        detail += " S(" + std::to_string(p) + ")=" + fmt(s) + " (need " + fmt(0.6 * static_cast<double>(p)) + ")";
    }
    return {pass, detail};
}

// --- processes -------------------------------------------------------------

pid_t spawn(const std::vector<std::string> &args, const fs::path &log)
{
    std::vector<char *> argv;
    for (const auto &a : args) argv.push_back(const_cast<char *>(a.c_str()));
    argv.push_back(nullptr);
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, 1, log.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_adddup2(&actions, 1, 2);
    pid_t pid = -1;
    const int rc = posix_spawn(&pid, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) throw std::runtime_error("spawn " + args[0] + ": " + std::strerror(rc));
    return pid;
}

int wait_status(pid_t pid)
{
    int status = 0;
    ::waitpid(pid, &status, 0);
    return status;
}

struct ClusterRun {
    bool ok = false;
    bool crashed = false;
    std::string map;
    std::string error;
};

/// Master plus `workers` worker processes; worker 0 crashes after
/// `crash_after` rows when that is positive.
ClusterRun run_cluster(const fs::path &dataset, const fs::path &dir, int workers, int crash_after)
{
    const std::string cli = EDM_CLI_PATH;
    ClusterRun out;
    const auto port_file = dir / "port";
    const pid_t master = spawn({cli, "master", "--bind", "127.0.0.1:0", "-i", dataset.string(), "--emax", "8", "-o",
                                (dir / "map.edm").string(), "--port-file", port_file.string(), "--row-dir",
                                (dir / "rows").string(), "--timeout", "300"},
                               dir / "master.log");
    for (int i = 0; i < 6000 && !fs::exists(port_file); i++) std::this_thread::sleep_for(std::chrono::milliseconds(5));
    std::string port;
    std::ifstream(port_file) >> port;
    if (port.empty()) {
        ::kill(master, SIGKILL);
        wait_status(master);
        out.error = "master never published its port";
        return out;
    }

    std::vector<pid_t> pids;
    for (int w = 0; w < workers; w++) {
        std::vector<std::string> args{cli, "worker", "--master", "127.0.0.1:" + port, "--id", "w" + std::to_string(w),
                                      "--task-delay-ms", "5"};
        if (w == 0 && crash_after > 0) {
            args.insert(args.end(), {"--crash-after", std::to_string(crash_after)});
        }
        pids.push_back(spawn(args, dir / ("worker" + std::to_string(w) + ".log")));
    }
    const int ms = wait_status(master);
    for (std::size_t w = 0; w < pids.size(); w++) {
        const int st = wait_status(pids[w]);
        if (w == 0 && crash_after > 0) out.crashed = WIFSIGNALED(st);
    }
    if (!WIFEXITED(ms) || WEXITSTATUS(ms) != 0) {
        out.error = "master exit status " + std::to_string(ms);
        return out;
    }
    out.map = io::read_file(dir / "map.edm");
    out.ok = true;
    return out;
}

Outcome distributed_equivalence()
{
    const auto dir = workdir("distributed");
    const auto dataset = dir / "data.csv";
    const auto ts = synth::coupled_logistic(10, 300, {0.05, 0.2}, 11);
    io::write_dataset(dataset, ts, io::Format::csv);
    const auto local = dir / "local.edm";
    io::write_causal_map(local, run_local(ts, {8, 1, true}).map);
    const auto reference = io::read_file(local);

    std::string detail;
    bool pass = true;
    struct Case {
        int workers, crash_after;
        std::string name;
    };
    for (const Case &c : {Case{1, 0, "P=1"}, Case{2, 0, "P=2"}, Case{4, 0, "P=4"}, Case{3, 2, "P=3 with a killed worker"}}) {
        const auto sub = dir / ("run-" + std::to_string(c.workers) + "-" + std::to_string(c.crash_after));
        fs::create_directories(sub);
        const auto r = run_cluster(dataset, sub, c.workers, c.crash_after);
        const bool same = r.ok && r.map == reference;
        const bool crash_ok = c.crash_after == 0 || r.crashed;
        pass = pass && same && crash_ok;
        detail += c.name + (same ? " identical" : " DIFFERS " + r.error);
        if (c.crash_after > 0) detail += r.crashed ? " (worker killed mid-run)" : " (worker was not killed)";
        detail += "; ";
    }
    detail += "20 series, L=300, maps compared byte for byte against a local run";
    return {pass, detail};
}

Outcome ccm_semantics()
{
    const CcmParams params{20, 1, true};
    double detect = 0.0, reverse = 0.0, null_xy = 0.0, null_yx = 0.0;
    const int seeds = 10;
    for (int seed = 0; seed < seeds; seed++) {
        // x drives y: y's manifold carries x, so ccm of x from y (row y, column x) is high
        const auto coupled = full_causal_inference(synth::coupled_logistic(1, 1000, {0.0, 0.32, 3.7, 3.8}, seed), params);
        detect += coupled.map(1, 0);
        reverse += coupled.map(0, 1);
        const auto independent = full_causal_inference(synth::coupled_logistic(1, 1000, {0.0, 0.0, 3.7, 3.8}, seed), params);
        null_xy += std::abs(independent.map(0, 1));
        null_yx += std::abs(independent.map(1, 0));
    }
    detect /= seeds;
    reverse /= seeds;
    null_xy /= seeds;
    null_yx /= seeds;
    Outcome o;
    o.pass = detect - reverse >= 0.2 && null_xy < 0.15 && null_yx < 0.15;
    o.detail = "beta_yx=0.32 r=(3.7,3.8) L=1000 10 seeds: detecting mean rho " + fmt(detect) + ", reverse " +
               fmt(reverse) + ", margin " + fmt(detect - reverse) + " (need 0.2); uncoupled mean |rho| " +
               fmt(null_xy) + " / " + fmt(null_yx) + " (need < 0.15)";
    return o;
}

Outcome numerical_invariants()
{
    std::vector<std::string> failures;

    double worst_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 20; seed++) {
        const auto x = oracle::uniform(150, seed);
        for (int E = 1; E <= 5; E++) {
            const auto table = compute_knn_table(x, x, {E, 1, 0}, {});
            for (std::size_t r = 0; r < table.rows; r++) {
                double s = 0.0;
                for (double w : table.weight_row(r)) s += w;
                worst_sum = std::max(worst_sum, std::abs(s - 1.0));
            }
        }
    }
    if (worst_sum > 1e-9) failures.push_back("weight sum off by " + fmt(worst_sum));

    double worst_affine = 0.0;
    for (std::uint64_t seed = 0; seed < 50; seed++) {
        const auto a = oracle::uniform(200, seed, -5, 5), b = oracle::uniform(200, seed + 777, -5, 5);
        std::vector<double> a2 = a, b2 = b;
        const double scale_a = 0.5 + static_cast<double>(seed), scale_b = -(1.0 + 0.25 * static_cast<double>(seed));
        for (auto &v : a2) v = scale_a * v + 3.0;
        for (auto &v : b2) v = scale_b * v - 11.0;
        worst_affine = std::max(worst_affine, std::abs(pearson_rho(a, b) + pearson_rho(a2, b2)));
    }
    if (worst_affine > 1e-9) failures.push_back("affine invariance off by " + fmt(worst_affine));

    std::size_t bit_errors = 0;
    const auto ts = synth::noise_dataset(7, 333, 5);
    const auto back = io::decode_dataset(io::encode_dataset(ts));
    const auto a = ts.row_major(), b = back.row_major();
    for (std::size_t i = 0; i < a.size(); i++) {
        bit_errors += std::bit_cast<std::uint64_t>(a[i]) != std::bit_cast<std::uint64_t>(b[i]);
    }
    if (bit_errors != 0 || a.size() != b.size()) failures.push_back("EDM1 round trip changed " + std::to_string(bit_errors) + " values");

    // constant column through the CLI pipeline
    const auto dir = workdir("sentinel");
    auto cols = columns(synth::coupled_logistic(2, 200, {0.0, 0.2}, 3));
    cols.emplace_back(200, 0.5);
    io::write_dataset(dir / "data.csv", TimeSeriesSet(std::move(cols)), io::Format::csv);
    const std::string cmd = std::string(EDM_CLI_PATH) + " pipeline -i " + (dir / "data.csv").string() +
                            " --emax 6 -o " + (dir / "map.edm").string() + " > " + (dir / "log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        failures.push_back("pipeline aborted on a constant series (status " + std::to_string(status) + ")");
    } else {
        const auto m = io::read_matrix(dir / "map.edm");
        // a constant target has zero variance, so its whole column is undefined
        std::size_t sentinel = 0, other_nan = 0;
        for (std::size_t i = 0; i < 5; i++) {
            for (std::size_t j = 0; j < 5; j++) {
                const bool nan = std::isnan(m.values[i * 5 + j]);
                if (j == 4) {
                    sentinel += nan;
                } else {
                    other_nan += nan;
                }
            }
        }
        std::ifstream in(dir / "map.manifest.json");
        const auto manifest = nlohmann::json::parse(in);
        const auto &embeddings = manifest["optE"]["embeddings"];
        const bool flagged = embeddings.size() == 5 && embeddings[4]["undefined"] == true;
        if (sentinel != 5 || other_nan != 0 || manifest["sentinels"].size() != 5 || !flagged) {
            failures.push_back("constant series: " + std::to_string(sentinel) + "/5 sentinels, " +
                               std::to_string(other_nan) + " stray NaN, manifest lists " +
                               std::to_string(manifest["sentinels"].size()) +
                               (flagged ? "" : ", embedding not flagged undefined"));
        }
    }

    Outcome o;
    o.pass = failures.empty();
    o.detail = "weight sums max |s-1| " + fmt(worst_sum) + ", affine max error " + fmt(worst_affine) +
               ", EDM1 bit errors " + std::to_string(bit_errors) + ", constant series propagated as sentinel";
    for (const auto &f : failures) o.detail += "; " + f;
    return o;
}

} // namespace

int main(int argc, char **argv)
{
    int only = 0;
    for (int i = 1; i < argc; i++) {
        if (std::string(argv[i]) == "--only" && i + 1 < argc) {
            only = std::atoi(argv[++i]);
        } else {
            std::cerr << "usage: acceptance [--only N]\n";
            return 2;
        }
    }

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"oracle equivalence", oracle_equivalence},
        {"kNN correctness", knn_correctness},
        {"complexity scaling", complexity_scaling},
        {"parallel speedup", parallel_speedup},
        {"distributed equivalence", distributed_equivalence},
        {"CCM semantics", ccm_semantics},
        {"numerical invariants", numerical_invariants},
    };

    bool all = true;
    for (std::size_t c = 0; c < criteria.size(); c++) {
        if (only != 0 && static_cast<std::size_t>(only) != c + 1) continue;
        Outcome o;
        try {
            o = criteria[c].second();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        all = all && o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " [" << c + 1 << "] " << criteria[c].first << ": " << o.detail
                  << std::endl;
    }
    fs::remove_all(fs::temp_directory_path() / ("edm-acceptance-" + std::to_string(::getpid())));
    return all ? 0 : 1;
}
