#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "embb/experiments.hpp"
#include "harness.hpp"
#include "oracles.hpp"

using namespace embb;
using namespace embb::experiments;

TEST(Enumerate, FullDesignCrossesEveryLevel) {
    const auto runs = enumerate_runs(FactorLevels{}, Design::Full, 10, 42);
    ASSERT_EQ(runs.size(), 120u);
    std::set<std::tuple<std::uint32_t, double, double, std::uint32_t>> seen;
    std::set<std::uint64_t> seeds;
    std::set<std::string> ids;
    for (const auto &r : runs) {
        EXPECT_TRUE(seen.emplace(r.layers, r.learning_rate, r.error_rate, r.rep).second);
        seeds.insert(r.seed);
        ids.insert(r.run_id);
        EXPECT_EQ(r.seed, derive_seed(42, r.layers, r.learning_rate, r.error_rate, r.rep));
    }
    EXPECT_EQ(seeds.size(), 120u);
    EXPECT_EQ(ids.size(), 120u);
}

// Layers x lr at 0% error (6), layers x error at lr 0.01 (6), lr x error at
// NN-2 (4): 16 cells, of which 3 + 2 + 2 overlap pairwise and 1 triply.
TEST(Enumerate, PairwiseDesignDeduplicatesBaselineOverlaps) {
    const auto runs = enumerate_runs(FactorLevels{}, Design::Pairwise, 1, 42);
    EXPECT_EQ(runs.size(), 16u - 3u - 2u - 2u + 1u);
    std::set<std::tuple<std::uint32_t, double, double>> cells;
    for (const auto &r : runs) {
        cells.emplace(r.layers, r.learning_rate, r.error_rate);
        const int off_baseline = (r.layers != 2) + (r.learning_rate != 0.01) + (r.error_rate != 0.0);
        EXPECT_LE(off_baseline, 2);
    }
    EXPECT_EQ(cells.size(), runs.size());
    EXPECT_EQ(enumerate_runs(FactorLevels{}, Design::Pairwise, 10, 42).size(), 100u);
}

TEST(Enumerate, PureAndRejectsEmptyLevels) {
    EXPECT_EQ(enumerate_runs(FactorLevels{}, Design::Full, 3, 7), enumerate_runs(FactorLevels{}, Design::Full, 3, 7));
    EXPECT_NE(enumerate_runs(FactorLevels{}, Design::Full, 3, 7)[0].seed,
              enumerate_runs(FactorLevels{}, Design::Full, 3, 8)[0].seed);
    FactorLevels f;
    f.error_rate.clear();
    EXPECT_THROW(enumerate_runs(f, Design::Full, 1, 1), InvalidInput);
    EXPECT_THROW(enumerate_runs(FactorLevels{}, Design::Full, 0, 1), InvalidInput);
}

TEST(Enumerate, RunIdFormat) {
    EXPECT_EQ(make_run_id(2, 0.01, 0.0, 3), "L2-lr0.01-e0-r3");
    EXPECT_EQ(make_run_id(8, 0.001, 0.2, 0), "L8-lr0.001-e0.2-r0");
}

TEST(Convergence, ConstantSeriesConvergesImmediately) {
    const std::vector<std::uint32_t> s(200, 37);
    EXPECT_EQ(convergence_step(s, {}), 0u);
}

// The window starting at t holds k = t - 80 fifties. Its sum 49k + 20 gets
// within 10% of the plateau sum 1000 once k >= 18, so t = 98.
TEST(Convergence, StepSeries) {
    std::vector<std::uint32_t> s(100, 1);
    s.resize(200, 50);
    EXPECT_EQ(convergence_step(s, {20, 0.10}), 98u);
    EXPECT_EQ(oracle::convergence_brute_force(s, 20, 0.10), std::optional<std::uint32_t>(98));
}

TEST(Convergence, AlternatingSeriesAgreesWithBruteForce) {
    std::vector<std::uint32_t> s(200);
    for (std::size_t i = 0; i < s.size(); ++i)
        s[i] = i % 2 ? 60 : 1;
    EXPECT_EQ(convergence_step(s, {20, 0.10}), oracle::convergence_brute_force(s, 20, 0.10));
    EXPECT_EQ(convergence_step(s, {20, 0.10}), 0u);
    std::vector<std::uint32_t> odd(199);
    for (std::size_t i = 0; i < odd.size(); ++i)
        odd[i] = i % 2 ? 60 : 1;
    EXPECT_EQ(convergence_step(odd, {19, 0.01}), oracle::convergence_brute_force(odd, 19, 0.01));
}

TEST(Convergence, LateChangeHasNoPlateau) {
    std::vector<std::uint32_t> s(190, 5);
    s.resize(200, 100);
    EXPECT_EQ(convergence_step(s, {20, 0.10}), std::nullopt);
}

TEST(Convergence, InvalidParams) {
    const std::vector<std::uint32_t> s(30, 1);
    EXPECT_THROW(convergence_step(s, {20, 0.10}), InvalidInput);
    EXPECT_THROW(convergence_step(std::vector<std::uint32_t>(200, 1), {0, 0.10}), InvalidInput);
    EXPECT_THROW(ConvergenceParams({101, 0.10}).validate(200), InvalidConfig);
}

TEST(Convergence, MatchesBruteForceOnRandomSeries) {
    std::mt19937_64 gen(2718);
    int with_step = 0;
    for (int i = 0; i < 1000; ++i) {
        const auto s = harness::random_cwnd_series(gen, i);
        const std::size_t window = 5 + gen() % 30;
        const double tol = 0.02 + 0.2 * (static_cast<double>(gen() % 1000) / 1000.0);
        const auto got = convergence_step(s, {static_cast<std::uint32_t>(window), tol});
        EXPECT_EQ(got, oracle::convergence_brute_force(s, window, tol)) << "series " << i;
        with_step += got.has_value();
    }
    EXPECT_GT(with_step, 100);
    EXPECT_LT(with_step, 900);
}

namespace {

RunRecord record(std::uint32_t layers, double lr, double err, double avg, bool diverged = false,
                 std::optional<std::uint32_t> conv = 10) {
    RunRecord r;
    r.spec = make_run_spec(1, layers, lr, err, 0);
    r.avg_throughput_Bps = avg;
    r.max_throughput_Bps = avg * 1.5;
    r.convergence_step = conv;
    r.diverged = diverged;
    return r;
}

} // namespace

TEST(Aggregate, SingleRecordCell) {
    const std::vector<RunRecord> rs{record(2, 0.01, 0.0, 123.0)};
    const auto cells = aggregate(rs);
    ASSERT_EQ(cells.size(), 1u);
    EXPECT_EQ(cells[0].n, 1u);
    EXPECT_TRUE(cells[0].single_sample);
    EXPECT_EQ(cells[0].avg_throughput.mean, 123.0);
    EXPECT_EQ(cells[0].avg_throughput.stddev, 0.0);
}

TEST(Aggregate, MeanAndSampleStddev) {
    const std::vector<RunRecord> rs{record(2, 0.01, 0.0, 100.0), record(2, 0.01, 0.0, 200.0)};
    const auto cells = aggregate(rs);
    ASSERT_EQ(cells.size(), 1u);
    EXPECT_DOUBLE_EQ(cells[0].avg_throughput.mean, 150.0);
    EXPECT_NEAR(cells[0].avg_throughput.stddev, 70.71, 0.005);
    EXPECT_FALSE(cells[0].single_sample);
}

TEST(Aggregate, AllDivergedCellIsKept) {
    std::vector<RunRecord> rs;
    for (int i = 0; i < 10; ++i)
        rs.push_back(record(8, 0.01, 0.2, 1.0, true));
    rs.push_back(record(2, 0.01, 0.2, 5.0));
    const auto cells = aggregate(rs);
    ASSERT_EQ(cells.size(), 2u);
    const auto it = std::find_if(cells.begin(), cells.end(), [](const auto &c) { return c.layers == 8; });
    ASSERT_NE(it, cells.end());
    EXPECT_EQ(it->n, 0u);
    EXPECT_EQ(it->diverged, 10u);
}

TEST(Aggregate, ConvergenceSummaryIgnoresMissingSteps) {
    const std::vector<RunRecord> rs{record(4, 0.001, 0.0, 1.0, false, 20), record(4, 0.001, 0.0, 2.0, false, std::nullopt),
                                    record(4, 0.001, 0.0, 3.0, false, 40)};
    const auto c = aggregate(rs).at(0);
    EXPECT_EQ(c.n, 3u);
    EXPECT_EQ(c.convergence_step.n, 2u);
    EXPECT_DOUBLE_EQ(c.convergence_step.mean, 30.0);
}

TEST(Aggregate, PermutationInvariant) {
    std::mt19937_64 gen(99);
    std::vector<RunRecord> rs;
    for (const auto &spec : enumerate_runs(FactorLevels{}, Design::Full, 5, 3)) {
        RunRecord r;
        r.spec = spec;
        r.avg_throughput_Bps = std::uniform_real_distribution<double>(1e4, 2.5e5)(gen);
        r.max_throughput_Bps = r.avg_throughput_Bps * 1.1;
        if (gen() % 3)
            r.convergence_step = static_cast<std::uint32_t>(gen() % 150);
        r.diverged = gen() % 17 == 0;
        rs.push_back(r);
    }
    const auto reference = aggregate(rs);
    for (int i = 0; i < 20; ++i) {
        std::shuffle(rs.begin(), rs.end(), gen);
        EXPECT_EQ(aggregate(rs), reference);
    }
}

TEST(ExecuteRun, DeterministicAndWithinCapacity) {
    const auto spec = make_run_spec(42, 2, 0.01, 0.0, 0);
    const auto a = execute_run(spec, env::EnvConfig{}, dqn::DqnConfig{});
    const auto b = execute_run(spec, env::EnvConfig{}, dqn::DqnConfig{});
    EXPECT_TRUE(a.record.same_results(b.record));
    EXPECT_EQ(a.trace, b.trace);
    ASSERT_TRUE(a.network && b.network);
    EXPECT_EQ(*a.network, *b.network);
    EXPECT_LE(a.record.avg_throughput_Bps, 250'000.0);
    EXPECT_LE(a.record.max_throughput_Bps, 250'000.0 + 10'000.0);
    EXPECT_EQ(a.trace.size(), 200u);
    EXPECT_FALSE(a.record.diverged);
    for (std::size_t i = 0; i < a.trace.size(); ++i)
        EXPECT_EQ(a.trace[i].step, i + 1);
    EXPECT_EQ(a.record.final_cwnd, a.trace.back().cwnd);
}

TEST(ExecuteRun, DivergenceStopsTheRun) {
    auto spec = make_run_spec(42, 8, 0.01, 0.0, 0);
    spec.learning_rate = 1e9;
    const auto out = execute_run(spec, env::EnvConfig{}, dqn::DqnConfig{});
    EXPECT_TRUE(out.record.diverged);
    EXPECT_LT(out.trace.size(), 200u);
    EXPECT_FALSE(out.record.convergence_step.has_value());
}

TEST(ExecuteRun, ParallelMatchesSerial) {
    FactorLevels f;
    f.layers = {2};
    const auto specs = enumerate_runs(f, Design::Full, 2, 5);
    const auto serial = execute_runs(specs, env::EnvConfig{}, dqn::DqnConfig{}, ConvergenceParams{}, 1);
    const auto parallel = execute_runs(specs, env::EnvConfig{}, dqn::DqnConfig{}, ConvergenceParams{}, 4);
    ASSERT_EQ(serial.size(), parallel.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        EXPECT_TRUE(serial[i].record.same_results(parallel[i].record));
        EXPECT_EQ(serial[i].trace, parallel[i].trace);
    }
}

TEST(ExecuteRun, ErrorRateLowersMeanThroughputOverMatchedSeeds) {
    std::vector<RunSpec> specs;
    for (std::uint32_t rep = 0; rep < 10; ++rep) {
        auto clean = make_run_spec(42, 2, 0.01, 0.0, rep);
        auto noisy = clean;
        noisy.error_rate = 0.2;
        specs.push_back(clean);
        specs.push_back(noisy);
    }
    const auto out = execute_runs(specs, env::EnvConfig{}, dqn::DqnConfig{}, ConvergenceParams{}, 0);
    double clean = 0.0, noisy = 0.0;
    for (std::size_t i = 0; i < out.size(); i += 2) {
        clean += out[i].record.avg_throughput_Bps;
        noisy += out[i + 1].record.avg_throughput_Bps;
    }
    EXPECT_GT(clean, noisy);
}

TEST(ExecuteRun, RandomBaselineRarelyConverges) {
    int converged = 0;
    for (std::uint32_t rep = 0; rep < 10; ++rep) {
        const auto out = execute_run(make_run_spec(42, 2, 0.01, 0.0, rep), env::EnvConfig{}, dqn::DqnConfig{},
                                     ConvergenceParams{}, Policy::UniformRandom);
        EXPECT_FALSE(out.network.has_value());
        EXPECT_EQ(out.trace.size(), 200u);
        converged += out.record.convergence_step.has_value();
    }
    EXPECT_LT(converged, 5);
}
