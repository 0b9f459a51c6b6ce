#pragma once

// Factorial experiment runner: enumerates design cells, executes one online
// 200-step DQN episode per run, and summarizes the results per cell.

#include <algorithm>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "dqn.hpp"
#include "env.hpp"
#include "errors.hpp"
#include "format.hpp"
#include "rng.hpp"

namespace embb::experiments {

struct FactorLevels {
    std::vector<std::uint32_t> layers{2, 4, 8};
    std::vector<double> learning_rate{0.01, 0.001};
    std::vector<double> error_rate{0.0, 0.2};

    // Held fixed for the factor left out of each pair in the pairwise design.
    std::uint32_t baseline_layers = 2;
    double baseline_learning_rate = 0.01;
    double baseline_error_rate = 0.0;
};

enum class Design { Full, Pairwise };

struct RunSpec {
    std::string run_id;
    std::uint32_t layers = 2;
    double learning_rate = 0.01;
    double error_rate = 0.0;
    std::uint32_t rep = 0;
    std::uint64_t seed = 0;

    bool operator==(const RunSpec &) const = default;
};

struct RunRecord {
    RunSpec spec;
    double avg_throughput_Bps = 0.0;
    double max_throughput_Bps = 0.0;
    std::optional<std::uint32_t> convergence_step;
    double cumulative_reward = 0.0;
    std::uint32_t final_cwnd = 0;
    bool diverged = false;
    std::int64_t wall_time_ms = 0; // informational, not part of equality

    bool same_results(const RunRecord &o) const {
        return spec == o.spec && avg_throughput_Bps == o.avg_throughput_Bps &&
               max_throughput_Bps == o.max_throughput_Bps && convergence_step == o.convergence_step &&
               cumulative_reward == o.cumulative_reward && final_cwnd == o.final_cwnd && diverged == o.diverged;
    }
};

struct StepRow {
    std::string run_id;
    std::uint32_t step = 0; // 1-based
    std::uint32_t cwnd = 0;
    double throughput_Bps = 0.0;
    double avg_rtt_ms = 0.0;
    double reward = 0.0;
    double epsilon = 0.0;
    std::optional<double> loss;

    bool operator==(const StepRow &) const = default;
};

struct ConvergenceParams {
    std::uint32_t window = 20;
    double tolerance_frac = 0.10;

    void validate(std::uint32_t episode_length) const {
        if (window < 1)
            throw InvalidConfig("conv.window", "must be >= 1");
        if (window > episode_length / 2)
            throw InvalidConfig("conv.window", "must be <= episode_length / 2");
        if (!(tolerance_frac > 0.0 && tolerance_frac < 1.0))
            throw InvalidConfig("conv.tolerance_frac", "must lie in (0, 1)");
    }
};

inline std::uint64_t derive_seed(std::uint64_t base_seed, std::uint32_t layers, double learning_rate,
                                 double error_rate, std::uint32_t rep) {
    std::uint64_t h = splitmix64(base_seed);
    h = mix_seed(h, layers);
    h = mix_seed(h, std::bit_cast<std::uint64_t>(learning_rate));
    h = mix_seed(h, std::bit_cast<std::uint64_t>(error_rate));
    h = mix_seed(h, rep);
    return h;
}

inline std::string make_run_id(std::uint32_t layers, double learning_rate, double error_rate, std::uint32_t rep) {
    return "L" + std::to_string(layers) + "-lr" + format_double(learning_rate) + "-e" + format_double(error_rate) +
           "-r" + std::to_string(rep);
}

inline RunSpec make_run_spec(std::uint64_t base_seed, std::uint32_t layers, double learning_rate, double error_rate,
                             std::uint32_t rep) {
    return RunSpec{make_run_id(layers, learning_rate, error_rate, rep), layers, learning_rate, error_rate, rep,
                   derive_seed(base_seed, layers, learning_rate, error_rate, rep)};
}

inline std::vector<RunSpec> enumerate_runs(const FactorLevels &factors, Design design, std::uint32_t reps,
                                           std::uint64_t base_seed) {
    if (reps < 1)
        throw InvalidInput("invalid design: reps must be >= 1");
    if (factors.layers.empty() || factors.learning_rate.empty() || factors.error_rate.empty())
        throw InvalidInput("invalid design: every factor needs at least one level");

    using Cell = std::tuple<std::uint32_t, double, double>;
    std::set<Cell> cells; // lexicographic order

    if (design == Design::Full) {
        for (auto l : factors.layers)
            for (auto lr : factors.learning_rate)
                for (auto e : factors.error_rate)
                    cells.emplace(l, lr, e);
    } else {
        auto has = [](const auto &levels, auto v) { return std::find(levels.begin(), levels.end(), v) != levels.end(); };
        if (!has(factors.layers, factors.baseline_layers) || !has(factors.learning_rate, factors.baseline_learning_rate) ||
            !has(factors.error_rate, factors.baseline_error_rate))
            throw InvalidInput("invalid design: baseline levels must be among the factor levels");
        for (auto l : factors.layers)
            for (auto lr : factors.learning_rate)
                cells.emplace(l, lr, factors.baseline_error_rate);
        for (auto l : factors.layers)
            for (auto e : factors.error_rate)
                cells.emplace(l, factors.baseline_learning_rate, e);
        for (auto lr : factors.learning_rate)
            for (auto e : factors.error_rate)
                cells.emplace(factors.baseline_layers, lr, e);
    }

    std::vector<RunSpec> runs;
    runs.reserve(cells.size() * reps);
    for (const auto &[l, lr, e] : cells)
        for (std::uint32_t r = 0; r < reps; ++r)
            runs.push_back(make_run_spec(base_seed, l, lr, e, r));
    return runs;
}

// First step t from which every window mean (windows starting at t' >= t)
// stays within tolerance_frac of the plateau, the mean of the final window.
// The band must hold for at least `window` starts before the final window,
// otherwise there is no plateau and the result is empty.
inline std::optional<std::uint32_t> convergence_step(std::span<const std::uint32_t> series,
                                                     const ConvergenceParams &params) {
    const std::size_t n = series.size();
    const std::size_t w = params.window;
    if (w == 0 || n < 2 * w)
        throw InvalidInput("convergence_step: series of " + std::to_string(n) + " values is shorter than 2 x window");

    // Window sums are exact in int64; comparing sums is the mean condition scaled by w.
    std::vector<std::int64_t> prefix(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i)
        prefix[i + 1] = prefix[i] + series[i];
    auto window_sum = [&](std::size_t start) { return prefix[start + w] - prefix[start]; };

    const std::size_t last = n - w;
    const std::int64_t plateau = window_sum(last);
    const double band = params.tolerance_frac * static_cast<double>(plateau);

    std::size_t t = last;
    while (t > 0 && std::abs(static_cast<double>(window_sum(t - 1) - plateau)) <= band)
        --t;
    if (t > n - 2 * w)
        return std::nullopt;
    return static_cast<std::uint32_t>(t);
}

enum class Policy { Dqn, UniformRandom };

struct RunOutcome {
    RunRecord record;
    std::vector<StepRow> trace;
    std::optional<dqn::QNetwork> network; // final online network (Dqn policy only)
};

// One online episode. spec.error_rate overrides the bottleneck loss
// probability; spec.layers and spec.learning_rate override the agent config.
inline RunOutcome execute_run(const RunSpec &spec, const env::EnvConfig &env_cfg, const dqn::DqnConfig &dqn_cfg,
                              const ConvergenceParams &conv = {}, Policy policy = Policy::Dqn) {
    const auto t0 = std::chrono::steady_clock::now();

    env::EnvConfig ec = env_cfg;
    ec.sim.bottleneck_link.loss_prob = spec.error_rate;
    dqn::DqnConfig dc = dqn_cfg;
    dc.hidden_count = spec.layers;
    dc.learning_rate = spec.learning_rate;
    dc.seed = mix_seed(spec.seed, 2);
    conv.validate(ec.episode_length);

    env::Env environment(ec);
    std::optional<dqn::DqnAgent> agent;
    if (policy == Policy::Dqn)
        agent.emplace(dc, env::kObservationDim, env::kActionCount);
    Rng random_policy(mix_seed(spec.seed, 3));

    RunOutcome out;
    out.record.spec = spec;
    out.trace.reserve(ec.episode_length);

    auto obs = environment.reset(mix_seed(spec.seed, 1));
    auto state = env::normalize(obs, ec.normalization_scales);
    std::vector<std::uint32_t> cwnd_series;
    cwnd_series.reserve(ec.episode_length);

    double thr_sum = 0.0;
    for (std::uint32_t k = 0; k < ec.episode_length; ++k) {
        std::size_t a = 0;
        double eps = 1.0;
        if (agent) {
            eps = agent->epsilon();
            a = agent->select_action(state);
        } else {
            a = static_cast<std::size_t>(uniform_index(random_policy, env::kActionCount));
        }
        const auto res = environment.step(env::action_from_index(a));
        const auto next = env::normalize(res.observation, ec.normalization_scales);

        std::optional<double> loss;
        if (agent) {
            try {
                loss = agent->observe(dqn::Transition{std::vector<double>(state.begin(), state.end()), a, res.reward,
                                                      std::vector<double>(next.begin(), next.end()), res.done});
            } catch (const TrainingDiverged &) {
                out.record.diverged = true;
                break;
            }
        }

        out.trace.push_back(StepRow{spec.run_id, res.step_index, res.observation.cwnd_segments,
                                    res.observation.throughput_Bps, res.observation.avg_rtt_ms, res.reward, eps, loss});
        thr_sum += res.observation.throughput_Bps;
        out.record.max_throughput_Bps = std::max(out.record.max_throughput_Bps, res.observation.throughput_Bps);
        out.record.cumulative_reward += res.reward;
        out.record.final_cwnd = res.observation.cwnd_segments;
        cwnd_series.push_back(res.observation.cwnd_segments);
        state = next;
    }

    if (!out.trace.empty())
        out.record.avg_throughput_Bps = thr_sum / static_cast<double>(out.trace.size());
    if (!out.record.diverged)
        out.record.convergence_step = convergence_step(cwnd_series, conv);
    if (agent)
        out.network = agent->online();
    out.record.wall_time_ms =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// Execute every spec on `jobs` worker threads; outcomes come back in spec order.
inline std::vector<RunOutcome> execute_runs(std::span<const RunSpec> specs, const env::EnvConfig &env_cfg,
                                            const dqn::DqnConfig &dqn_cfg, const ConvergenceParams &conv,
                                            unsigned jobs, Policy policy = Policy::Dqn) {
    std::vector<RunOutcome> results(specs.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;

    auto worker = [&] {
        for (std::size_t i = next++; i < specs.size(); i = next++) {
            try {
                results[i] = execute_run(specs[i], env_cfg, dqn_cfg, conv, policy);
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure)
                    failure = std::current_exception();
            }
        }
    };

    jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(std::max<std::size_t>(specs.size(), 1))));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        pool.reserve(jobs);
        for (unsigned j = 0; j < jobs; ++j)
            pool.emplace_back(worker);
    }
    if (failure)
        std::rethrow_exception(failure);
    return results;
}

struct MetricSummary {
    std::size_t n = 0;
    double mean = 0.0;
    double stddev = 0.0; // sample stddev; 0 when n < 2
};

struct CellSummary {
    std::uint32_t layers = 0;
    double learning_rate = 0.0;
    double error_rate = 0.0;
    std::size_t n = 0; // non-diverged runs
    std::size_t diverged = 0;
    bool single_sample = false;
    MetricSummary avg_throughput;
    MetricSummary max_throughput;
    MetricSummary convergence_step; // over runs with a detected step

    bool operator==(const CellSummary &o) const {
        auto eq = [](const MetricSummary &a, const MetricSummary &b) {
            return a.n == b.n && a.mean == b.mean && a.stddev == b.stddev;
        };
        return layers == o.layers && learning_rate == o.learning_rate && error_rate == o.error_rate && n == o.n &&
               diverged == o.diverged && single_sample == o.single_sample && eq(avg_throughput, o.avg_throughput) &&
               eq(max_throughput, o.max_throughput) && eq(convergence_step, o.convergence_step);
    }
};

// Mean and sample standard deviation, summed in sorted order.
inline MetricSummary summarize(std::vector<double> values) {
    MetricSummary s;
    s.n = values.size();
    if (values.empty())
        return s;
    std::sort(values.begin(), values.end());
    double sum = 0.0;
    for (double v : values)
        sum += v;
    s.mean = sum / static_cast<double>(s.n);
    if (s.n >= 2) {
        double ss = 0.0;
        for (double v : values)
            ss += (v - s.mean) * (v - s.mean);
        s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
    }
    return s;
}

inline std::vector<CellSummary> aggregate(std::span<const RunRecord> records) {
    using Key = std::tuple<std::uint32_t, double, double>;
    struct Acc {
        std::vector<double> avg, max, conv;
        std::size_t diverged = 0;
    };
    std::map<Key, Acc> groups;
    for (const auto &r : records) {
        auto &g = groups[{r.spec.layers, r.spec.learning_rate, r.spec.error_rate}];
        if (r.diverged) {
            ++g.diverged;
            continue;
        }
        g.avg.push_back(r.avg_throughput_Bps);
        g.max.push_back(r.max_throughput_Bps);
        if (r.convergence_step)
            g.conv.push_back(static_cast<double>(*r.convergence_step));
    }
    std::vector<CellSummary> out;
    for (auto &[key, g] : groups) {
        CellSummary c;
        std::tie(c.layers, c.learning_rate, c.error_rate) = key;
        c.n = g.avg.size();
        c.diverged = g.diverged;
        c.single_sample = c.n == 1;
        c.avg_throughput = summarize(std::move(g.avg));
        c.max_throughput = summarize(std::move(g.max));
        c.convergence_step = summarize(std::move(g.conv));
        out.push_back(c);
    }
    return out;
}

} // namespace embb::experiments
