#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "embb/io.hpp"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path &p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("embb_cli_" + std::to_string(::getpid()) + "_" +
                ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    Result run(const std::string &args) const {
        const auto out = dir_ / "stdout.txt", err = dir_ / "stderr.txt";
        const std::string cmd = std::string(EMBB_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    std::string out(const std::string &sub) const { return (dir_ / sub).string(); }

    fs::path dir_;
};

double reported_throughput(const std::string &stdout_text) {
    std::istringstream is(stdout_text);
    std::string key;
    double value = -1;
    while (is >> key)
        if (key == "throughput_Bps") {
            is >> value;
            break;
        }
    return value;
}

std::size_t line_count(const std::string &s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

} // namespace

TEST_F(Cli, SimulateSaturatesBottleneck) {
    const auto r = run("simulate --cwnd 64 --duration-ms 5000 -o " + out("a"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(reported_throughput(r.out), 250'000.0, 5000.0);
    const auto csv = slurp(fs::path(out("a")) / "simulate.csv");
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "time_ms,cwnd,acked_bytes,throughput_Bps,avg_rtt_ms,loss_events");
    EXPECT_EQ(line_count(csv), 51u);
}

TEST_F(Cli, SimulateSingleSegmentAndCertainLoss) {
    auto r = run("simulate --cwnd 1 --duration-ms 5000 -o " + out("a"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(reported_throughput(r.out), 50'400.0, 504.0);
    r = run("simulate --cwnd 64 --error-rate 1.0 -o " + out("b"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(reported_throughput(r.out), 0.0);
}

TEST_F(Cli, InvalidConfigExitsTwoAndNamesField) {
    const auto r = run("simulate -s sim.queue_capacity_segments=0 -o " + out("a"));
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("queue_capacity_segments"), std::string::npos) << r.err;
    EXPECT_EQ(run("simulate -s sim.bogus=1 -o " + out("a")).code, 2);
    EXPECT_EQ(run("simulate --cwnd 500 -o " + out("a")).code, 2);
    EXPECT_EQ(run("train --layers -3 -o " + out("a")).code, 2);
    EXPECT_EQ(run("no-such-command").code, 2);
}

TEST_F(Cli, ConfigFileIsReadAndOverridesWin) {
    const auto cfg = dir_ / "net.cfg";
    std::ofstream(cfg) << "# narrower pipe\nsim.bottleneck_link.rate_bps=1000000\n";
    // A window of 20 keeps the 1 Mbps queueing delay (8 ms per segment) well under the RTO.
    auto r = run("simulate --cwnd 20 -c " + cfg.string() + " -o " + out("a"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(reported_throughput(r.out), 125'000.0, 2500.0);
    r = run("simulate --cwnd 20 -c " + cfg.string() + " -s sim.bottleneck_link.rate_bps=2000000 -o " + out("b"));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_NEAR(reported_throughput(r.out), 250'000.0, 5000.0);
}

TEST_F(Cli, TrainIsByteIdenticalAndHasTwoHundredSteps) {
    auto a = run("train --layers 2 --lr 0.01 --error-rate 0 --seed 1 -o " + out("a") + " --checkpoint " +
                 out("a/net.bin"));
    auto b = run("train --layers 2 --lr 0.01 --error-rate 0 --seed 1 -o " + out("b"));
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    const auto sa = slurp(fs::path(out("a")) / "steps.csv"), sb = slurp(fs::path(out("b")) / "steps.csv");
    EXPECT_EQ(sa, sb);
    EXPECT_EQ(line_count(sa), 201u);
    EXPECT_EQ(sa.substr(0, sa.find('\n')), std::string(embb::io::kStepsHeader));
    EXPECT_EQ(slurp(fs::path(out("a")) / "runs.csv"), slurp(fs::path(out("b")) / "runs.csv"));
    const auto net = embb::dqn::checkpoint::load(out("a/net.bin"));
    EXPECT_EQ(net.layers().size(), 3u);

    const auto c = run("train --layers 2 --lr 0.01 --error-rate 0 --seed 2 -o " + out("c"));
    ASSERT_EQ(c.code, 0) << c.err;
    EXPECT_NE(slurp(fs::path(out("c")) / "steps.csv"), sa);
}

TEST_F(Cli, TrainDivergenceExitsThree) {
    const auto r = run("train --layers 8 --lr 1e9 -o " + out("a"));
    EXPECT_EQ(r.code, 3) << r.out << r.err;
    const auto runs = embb::io::parse_runs_csv(slurp(fs::path(out("a")) / "runs.csv"));
    ASSERT_EQ(runs.size(), 1u);
    EXPECT_TRUE(runs[0].diverged);
    EXPECT_LT(line_count(slurp(fs::path(out("a")) / "steps.csv")), 201u);
}

TEST_F(Cli, BaselineIsDeterministic) {
    const auto a = run("baseline --seed 3 -o " + out("a"));
    const auto b = run("baseline --seed 3 -o " + out("b"));
    ASSERT_EQ(a.code, 0) << a.err;
    EXPECT_EQ(a.out, b.out);
    const auto runs = slurp(fs::path(out("a")) / "runs.csv");
    EXPECT_EQ(runs, slurp(fs::path(out("b")) / "runs.csv"));
    EXPECT_NE(runs.find("random-L2-lr0.01-e0-r0"), std::string::npos);
}

TEST_F(Cli, PairwiseGridThenAnalyze) {
    const auto g = run("grid --design pairwise --reps 1 -j 4 -o " + out("g"));
    ASSERT_EQ(g.code, 0) << g.err;
    const auto runs_path = fs::path(out("g")) / "runs.csv";
    const auto runs = embb::io::parse_runs_csv(slurp(runs_path));
    EXPECT_EQ(runs.size(), 10u);
    EXPECT_EQ(line_count(slurp(fs::path(out("g")) / "steps.csv")), 1u + 10u * 200u);

    const auto g2 = run("grid --design pairwise --reps 1 -j 2 -o " + out("g2"));
    ASSERT_EQ(g2.code, 0) << g2.err;
    EXPECT_EQ(slurp(runs_path), slurp(fs::path(out("g2")) / "runs.csv"));

    const auto a = run("analyze --runs " + runs_path.string() + " --factors error_rate,layers -o " + out("an"));
    ASSERT_EQ(a.code, 0) << a.err;
    const auto table = embb::io::parse_csv(slurp(fs::path(out("an")) / "regression.csv"));
    ASSERT_EQ(table.rows.size(), 4u);
    EXPECT_EQ(table.rows[0][0], "Constant");
    EXPECT_EQ(table.rows[3][0], "Network Error Rate \xC3\x97 DQN Algorithm");
    EXPECT_NE(a.out.find("P-Value"), std::string::npos);

    const auto missing = run("analyze --runs " + runs_path.string() + " --response goodput -o " + out("an"));
    EXPECT_EQ(missing.code, 2);
    EXPECT_NE(missing.err.find("goodput"), std::string::npos);
}

TEST_F(Cli, GridWithDivergedRunsExitsFour) {
    const auto r = run("grid --reps 1 -s factors.layers=8 -s factors.learning_rate=1e9 -s factors.error_rate=0 -o " +
                       out("g"));
    EXPECT_EQ(r.code, 4) << r.out << r.err;
    const auto runs = embb::io::parse_runs_csv(slurp(fs::path(out("g")) / "runs.csv"));
    ASSERT_EQ(runs.size(), 1u);
    EXPECT_TRUE(runs[0].diverged);
}

TEST_F(Cli, UnknownDesignIsInvalid) { EXPECT_EQ(run("grid --design latin -o " + out("g")).code, 2); }
