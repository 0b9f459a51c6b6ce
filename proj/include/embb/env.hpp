#pragma once

// Gym-style episodic wrapper around one Simulator. Each step applies a
// +-1/0 segment change to the congestion window, lets the network run for one
// decision interval and reports six flow observables plus a throughput reward.

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>

#include "errors.hpp"
#include "netsim.hpp"

namespace embb::env {

inline constexpr std::size_t kObservationDim = 6;
inline constexpr std::size_t kActionCount = 3;

using Features = std::array<double, kObservationDim>;

enum class Action : std::uint8_t { Decrease = 0, Hold = 1, Increase = 2 };

constexpr int action_delta(Action a) {
    switch (a) {
    case Action::Decrease:
        return -1;
    case Action::Hold:
        return 0;
    case Action::Increase:
        return +1;
    }
    return 0;
}

constexpr std::size_t action_index(Action a) { return static_cast<std::size_t>(a); }

inline Action action_from_index(std::size_t i) {
    if (i >= kActionCount)
        throw ContractViolation("action index " + std::to_string(i) + " outside {0,1,2}");
    return static_cast<Action>(i);
}

struct Observation {
    std::uint32_t cwnd_segments = 1;
    std::uint32_t segment_bytes = 0;
    std::uint64_t bytes_sent_total = 0;
    double avg_rtt_ms = 0.0;
    std::uint64_t segments_acked_total = 0;
    double throughput_Bps = 0.0;

    Features to_features() const {
        return {static_cast<double>(cwnd_segments), static_cast<double>(segment_bytes),
                static_cast<double>(bytes_sent_total),  avg_rtt_ms,
                static_cast<double>(segments_acked_total), throughput_Bps};
    }

    bool operator==(const Observation &) const = default;
};

struct StepResult {
    Observation observation;
    double reward = 0.0;
    bool done = false;
    std::uint32_t step_index = 0;
};

// cwnd, segment bytes, bytes sent, rtt, segments acked, throughput.
inline constexpr Features kDefaultScales{200.0, 1500.0, 1e7, 1000.0, 1e4, 250000.0};

struct EnvConfig {
    netsim::SimConfig sim;
    double decision_interval_ms = 100.0;
    std::uint32_t episode_length = 200;
    std::uint32_t cwnd_min = 1;
    std::uint32_t cwnd_max = 200;
    Features normalization_scales = kDefaultScales;

    void validate() const {
        sim.validate();
        if (!(decision_interval_ms > 0.0))
            throw InvalidConfig("decision_interval_ms", "must be > 0");
        if (episode_length < 1)
            throw InvalidConfig("episode_length", "must be >= 1");
        if (cwnd_min < 1)
            throw InvalidConfig("cwnd_min", "must be >= 1");
        if (cwnd_max < cwnd_min)
            throw InvalidConfig("cwnd_max", "must be >= cwnd_min");
        if (cwnd_max > sim.cwnd_max)
            throw InvalidConfig("cwnd_max", "must not exceed sim.cwnd_max");
        for (double s : normalization_scales)
            if (!(s > 0.0))
                throw InvalidConfig("normalization_scales", "must all be > 0");
    }
};

// Interval throughput as a fraction of bottleneck capacity, clamped to [0, 1].
inline double compute_reward(const netsim::IntervalStats &stats, std::uint64_t bottleneck_rate_bps) {
    const double capacity_Bps = static_cast<double>(bottleneck_rate_bps) / 8.0;
    return std::clamp(stats.throughput_Bps / capacity_Bps, 0.0, 1.0);
}

inline Features normalize(const Observation &obs, const Features &scales = kDefaultScales) {
    Features f = obs.to_features();
    for (std::size_t i = 0; i < kObservationDim; ++i)
        f[i] /= scales[i];
    return f;
}

inline Features denormalize(const Features &x, const Features &scales = kDefaultScales) {
    Features f = x;
    for (std::size_t i = 0; i < kObservationDim; ++i)
        f[i] *= scales[i];
    return f;
}

class Env {
public:
    explicit Env(EnvConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

    const EnvConfig &config() const { return cfg_; }
    std::uint32_t step_count() const { return steps_; }
    bool done() const { return sim_ && steps_ >= cfg_.episode_length; }
    const netsim::Simulator &simulator() const { return *sim_; }
    const netsim::IntervalStats &last_interval() const { return last_; }

    Observation reset(std::uint64_t seed) {
        netsim::SimConfig sc = cfg_.sim;
        sc.seed = seed;
        sim_.emplace(sc);
        sim_->set_cwnd(cfg_.cwnd_min);
        steps_ = 0;
        last_ = {};
        return observe();
    }

    StepResult step(Action action) {
        if (!sim_)
            throw ContractViolation("step before reset");
        if (done())
            throw ContractViolation("step after episode end");
        const std::int64_t wanted = static_cast<std::int64_t>(sim_->cwnd()) + action_delta(action);
        const auto cwnd = static_cast<std::uint32_t>(
            std::clamp<std::int64_t>(wanted, cfg_.cwnd_min, cfg_.cwnd_max));
        sim_->set_cwnd(cwnd);
        last_ = sim_->advance(cfg_.decision_interval_ms);
        ++steps_;

        StepResult r;
        r.observation = observe();
        r.reward = compute_reward(last_, cfg_.sim.bottleneck_link.rate_bps);
        r.step_index = steps_;
        r.done = steps_ == cfg_.episode_length;
        return r;
    }

private:
    Observation observe() const {
        const auto &c = sim_->counters();
        Observation o;
        o.cwnd_segments = c.cwnd_segments;
        o.segment_bytes = cfg_.sim.segment_bytes;
        o.bytes_sent_total = c.bytes_sent_total;
        o.avg_rtt_ms = c.rtt_ewma_ms;
        o.segments_acked_total = c.segments_acked_total;
        o.throughput_Bps = last_.throughput_Bps;
        return o;
    }

    EnvConfig cfg_;
    std::optional<netsim::Simulator> sim_;
    netsim::IntervalStats last_{};
    std::uint32_t steps_ = 0;
};

} // namespace embb::env
