// embb: command-line front end for the congestion-window DQN workbench.
//
//   embb simulate  fixed-window run of the dumbbell simulator
//   embb train     one online DQN episode
//   embb grid      factorial grid of training runs
//   embb analyze   coded OLS on a runs.csv
//   embb baseline  the episode loop with uniform-random actions
//
// Exit codes: 0 success, 2 invalid input, 3 training diverged, 4 grid had diverged runs.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "embb/dqn.hpp"
#include "embb/env.hpp"
#include "embb/experiments.hpp"
#include "embb/format.hpp"
#include "embb/io.hpp"
#include "embb/netsim.hpp"
#include "embb/stats.hpp"

namespace fs = std::filesystem;
using namespace embb;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalid = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitPartial = 4;

struct Common {
    std::string config_path;
    std::vector<std::string> overrides;
    std::string out_dir = "out";
    std::uint64_t base_seed = 42;
};

io::Settings load_settings(const Common &c) {
    io::Settings s;
    if (!c.config_path.empty())
        io::apply_config_file(s, c.config_path);
    for (const auto &kv : c.overrides)
        io::apply_assignment(s, kv);
    s.validate();
    return s;
}

void print_record(const experiments::RunRecord &r) {
    std::cout << "run_id            " << r.spec.run_id << '\n'
              << "avg_throughput    " << format_fixed(r.avg_throughput_Bps, 1) << " B/s\n"
              << "max_throughput    " << format_fixed(r.max_throughput_Bps, 1) << " B/s\n"
              << "cumulative_reward " << format_fixed(r.cumulative_reward, 4) << '\n'
              << "final_cwnd        " << r.final_cwnd << '\n'
              << "convergence_step  " << (r.convergence_step ? std::to_string(*r.convergence_step) : "none") << '\n'
              << "diverged          " << (r.diverged ? "yes" : "no") << '\n';
}

int run_simulate(const Common &c, std::uint32_t cwnd, double duration_ms, double interval_ms,
                 std::optional<double> error_rate) {
    auto s = load_settings(c);
    auto sim_cfg = s.env.sim;
    if (error_rate)
        sim_cfg.bottleneck_link.loss_prob = *error_rate;
    sim_cfg.seed = mix_seed(c.base_seed, 0x73696d);
    if (!(duration_ms > 0.0) || !(interval_ms > 0.0))
        throw InvalidInput("duration and interval must be > 0");

    auto sim = netsim::build_dumbbell(sim_cfg);
    sim.set_cwnd(cwnd);

    std::string trace = "time_ms,cwnd,acked_bytes,throughput_Bps,avg_rtt_ms,loss_events\n";
    std::uint64_t acked = 0, losses = 0;
    double elapsed = 0.0;
    while (elapsed < duration_ms) {
        const double dt = std::min(interval_ms, duration_ms - elapsed);
        const auto st = sim.advance(dt);
        elapsed += dt;
        acked += st.acked_bytes;
        losses += st.loss_events;
        trace += format_double(sim.now_ms()) + ',' + std::to_string(sim.cwnd()) + ',' + std::to_string(st.acked_bytes) +
                 ',' + format_double(st.throughput_Bps) + ',' + format_double(st.avg_rtt_ms) + ',' +
                 std::to_string(st.loss_events) + '\n';
    }
    io::atomic_write(fs::path(c.out_dir) / "simulate.csv", trace);

    const auto &k = sim.counters();
    const double thr = static_cast<double>(acked) * 1000.0 / duration_ms;
    std::cout << "throughput_Bps    " << format_fixed(thr, 1) << '\n'
              << "avg_rtt_ms        " << format_fixed(k.rtt_ewma_ms, 3) << '\n'
              << "bytes_sent        " << k.bytes_sent_total << '\n'
              << "segments_acked    " << k.segments_acked_total << '\n'
              << "retransmissions   " << k.retransmissions << '\n'
              << "drops_error       " << k.drops_error << '\n'
              << "drops_queue       " << k.drops_queue << '\n'
              << "loss_events       " << losses << '\n';
    return kExitOk;
}

int run_single(const Common &c, experiments::Policy policy, std::uint32_t layers, double lr, double error_rate,
               std::optional<std::uint64_t> seed, std::uint32_t rep, const std::string &checkpoint_path) {
    auto s = load_settings(c);
    auto spec = experiments::make_run_spec(seed.value_or(c.base_seed), layers, lr, error_rate, rep);
    if (policy == experiments::Policy::UniformRandom)
        spec.run_id = "random-" + spec.run_id;
    auto outcome = experiments::execute_run(spec, s.env, s.dqn, s.conv, policy);

    io::atomic_write(fs::path(c.out_dir) / "steps.csv", io::steps_csv(outcome.trace));
    io::atomic_write(fs::path(c.out_dir) / "runs.csv", io::runs_csv(std::span(&outcome.record, 1)));
    if (!checkpoint_path.empty() && outcome.network) {
        std::ostringstream os;
        dqn::checkpoint::write(os, *outcome.network);
        io::atomic_write(checkpoint_path, os.str());
    }
    print_record(outcome.record);
    if (outcome.record.diverged) {
        std::cerr << "embb: training diverged after " << outcome.trace.size() << " steps\n";
        return kExitDiverged;
    }
    return kExitOk;
}

int run_grid(const Common &c, const std::string &design_name, std::uint32_t reps, unsigned jobs) {
    auto s = load_settings(c);
    experiments::Design design;
    if (design_name == "full")
        design = experiments::Design::Full;
    else if (design_name == "pairwise")
        design = experiments::Design::Pairwise;
    else
        throw InvalidInput("unknown design '" + design_name + "' (full|pairwise)");

    const auto specs = experiments::enumerate_runs(s.factors, design, reps, c.base_seed);
    if (jobs == 0)
        jobs = std::max(1u, std::thread::hardware_concurrency());
    const auto outcomes = experiments::execute_runs(specs, s.env, s.dqn, s.conv, jobs);

    std::vector<experiments::RunRecord> records;
    std::vector<experiments::StepRow> steps;
    std::size_t diverged = 0;
    for (const auto &o : outcomes) {
        records.push_back(o.record);
        steps.insert(steps.end(), o.trace.begin(), o.trace.end());
        diverged += o.record.diverged ? 1 : 0;
    }
    io::atomic_write(fs::path(c.out_dir) / "runs.csv", io::runs_csv(records));
    io::atomic_write(fs::path(c.out_dir) / "steps.csv", io::steps_csv(steps));

    std::cout << "runs " << records.size() << ", diverged " << diverged << '\n';
    for (const auto &cell : experiments::aggregate(records)) {
        std::cout << "layers " << cell.layers << "  lr " << format_double(cell.learning_rate) << "  error "
                  << format_double(cell.error_rate) << "  n " << cell.n << "  avg_thr "
                  << format_fixed(cell.avg_throughput.mean, 1) << " (sd " << format_fixed(cell.avg_throughput.stddev, 1)
                  << ")  max_thr " << format_fixed(cell.max_throughput.mean, 1) << "  conv "
                  << (cell.convergence_step.n ? format_fixed(cell.convergence_step.mean, 1) : std::string("-"))
                  << " [" << cell.convergence_step.n << "]\n";
    }
    return diverged ? kExitPartial : kExitOk;
}

int run_analyze(const Common &c, const std::string &runs_path, const std::string &factors,
                const std::string &response) {
    const auto comma = factors.find(',');
    if (comma == std::string::npos)
        throw InvalidInput("--factors expects two names separated by a comma");
    const std::string fa(trim(std::string_view(factors).substr(0, comma)));
    const std::string fb(trim(std::string_view(factors).substr(comma + 1)));

    const auto table = io::parse_csv(io::read_file(runs_path));
    const auto analysis = io::analyze_runs(table, fa, fb, response);
    const auto rendered = stats::render_table(analysis.rows);

    io::atomic_write(fs::path(c.out_dir) / "regression.csv", io::regression_csv(analysis.rows));
    io::atomic_write(fs::path(c.out_dir) / "regression.txt", rendered);
    std::cout << "response " << response << ", n = " << analysis.observations << ", residual df = " << analysis.df
              << '\n'
              << rendered;
    return kExitOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Congestion-window DQN workbench"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App *sub) {
        sub->add_option("-c,--config", common.config_path, "key=value configuration file")->check(CLI::ExistingFile);
        sub->add_option("-s,--set", common.overrides, "override, key=value (repeatable)");
        sub->add_option("-o,--out", common.out_dir, "output directory")->capture_default_str();
        sub->add_option("--base-seed", common.base_seed, "seed all randomness derives from")->capture_default_str();
    };

    std::uint32_t cwnd = 64;
    double duration_ms = 5000.0, interval_ms = 100.0;
    std::optional<double> sim_error;
    auto *simulate = app.add_subcommand("simulate", "constant-window simulation, no agent");
    add_common(simulate);
    simulate->add_option("--cwnd", cwnd, "congestion window in segments")->capture_default_str();
    simulate->add_option("--duration-ms", duration_ms, "simulated time")->capture_default_str();
    simulate->add_option("--interval-ms", interval_ms, "trace sampling interval")->capture_default_str();
    simulate->add_option("--error-rate", sim_error, "bottleneck loss probability");

    std::uint32_t layers = 2, rep = 0;
    double lr = 0.01, error_rate = 0.0;
    std::optional<std::uint64_t> seed;
    std::string checkpoint;
    auto *train = app.add_subcommand("train", "one online 200-step DQN episode");
    add_common(train);
    train->add_option("--layers", layers, "hidden layers")->capture_default_str();
    train->add_option("--lr", lr, "learning rate")->capture_default_str();
    train->add_option("--error-rate", error_rate, "bottleneck loss probability")->capture_default_str();
    train->add_option("--seed", seed, "run seed base (default: --base-seed)");
    train->add_option("--rep", rep, "replicate index mixed into the seed")->capture_default_str();
    train->add_option("--checkpoint", checkpoint, "write the trained network here");

    auto *baseline = app.add_subcommand("baseline", "episode loop with uniform-random actions");
    add_common(baseline);
    baseline->add_option("--error-rate", error_rate, "bottleneck loss probability")->capture_default_str();
    baseline->add_option("--seed", seed, "run seed base (default: --base-seed)");
    baseline->add_option("--rep", rep, "replicate index mixed into the seed")->capture_default_str();

    std::string design = "full";
    std::uint32_t reps = 10;
    unsigned jobs = 0;
    auto *grid = app.add_subcommand("grid", "factorial grid of training runs");
    add_common(grid);
    grid->add_option("--design", design, "full | pairwise")->capture_default_str();
    grid->add_option("--reps", reps, "replicates per cell")->capture_default_str();
    grid->add_option("-j,--jobs", jobs, "worker threads (0 = available parallelism)")->capture_default_str();

    std::string runs_path = "out/runs.csv", factors = "error_rate,layers", response = "avg_throughput_Bps";
    auto *analyze = app.add_subcommand("analyze", "coded two-factor OLS on runs.csv");
    add_common(analyze);
    analyze->add_option("--runs", runs_path, "runs.csv to analyze")->capture_default_str();
    analyze->add_option("--factors", factors, "two of error_rate, learning_rate, layers")->capture_default_str();
    analyze->add_option("--response", response, "response column")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitInvalid;
    }

    try {
        if (*simulate)
            return run_simulate(common, cwnd, duration_ms, interval_ms, sim_error);
        if (*train)
            return run_single(common, experiments::Policy::Dqn, layers, lr, error_rate, seed, rep, checkpoint);
        if (*baseline)
            return run_single(common, experiments::Policy::UniformRandom, 2, 0.01, error_rate, seed, rep, "");
        if (*grid)
            return run_grid(common, design, reps, jobs);
        if (*analyze)
            return run_analyze(common, runs_path, factors, response);
    } catch (const InvalidConfig &e) {
        std::cerr << "embb: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const InvalidInput &e) {
        std::cerr << "embb: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const ContractViolation &e) {
        std::cerr << "embb: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception &e) {
        std::cerr << "embb: " << e.what() << '\n';
        return 1;
    }
    return kExitOk;
}
