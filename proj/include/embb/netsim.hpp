#pragma once

// Discrete-event simulator of one bulk-transfer flow over a dumbbell:
//
//   sender --access-- R1 ==bottleneck== R2 --access-- receiver
//
// The sender always has data (FTP-style backlog). Its congestion window is set
// from outside; there is no slow start, AIMD or fast retransmit. Lost segments
// are recovered only by a fixed per-segment retransmission timer.

#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace embb::netsim {

struct LinkSpec {
    std::uint64_t rate_bps = 0;
    double prop_delay_ms = 0.0;
    double loss_prob = 0.0; // forward direction only

    double serialization_ms(std::uint64_t bytes) const {
        return static_cast<double>(bytes) * 8.0 * 1000.0 / static_cast<double>(rate_bps);
    }
};

struct SimConfig {
    LinkSpec access_link{10'000'000, 1.0, 0.0};
    LinkSpec bottleneck_link{2'000'000, 5.0, 0.0};
    std::uint32_t segment_bytes = 1000;
    std::uint32_t ack_bytes = 40;
    std::uint32_t queue_capacity_segments = 50;
    double rto_ms = 300.0;
    double rtt_ewma_alpha = 0.125;
    std::uint64_t seed = 1;
    std::uint32_t cwnd_max = 200;

    double one_way_propagation_ms() const {
        return 2.0 * access_link.prop_delay_ms + bottleneck_link.prop_delay_ms;
    }

    // Throws InvalidConfig naming the first violated field.
    void validate() const {
        auto check_link = [](const LinkSpec &l, const std::string &name) {
            if (l.rate_bps == 0)
                throw InvalidConfig(name + ".rate_bps", "must be > 0");
            if (!(l.prop_delay_ms >= 0.0) || !std::isfinite(l.prop_delay_ms))
                throw InvalidConfig(name + ".prop_delay_ms", "must be finite and >= 0");
            if (!(l.loss_prob >= 0.0 && l.loss_prob <= 1.0))
                throw InvalidConfig(name + ".loss_prob", "must lie in [0, 1]");
        };
        check_link(access_link, "access_link");
        check_link(bottleneck_link, "bottleneck_link");
        if (ack_bytes < 1)
            throw InvalidConfig("ack_bytes", "must be >= 1");
        if (segment_bytes < ack_bytes)
            throw InvalidConfig("segment_bytes", "must be >= ack_bytes");
        if (queue_capacity_segments < 1)
            throw InvalidConfig("queue_capacity_segments", "must be >= 1");
        if (!(rto_ms > 4.0 * one_way_propagation_ms()) || !std::isfinite(rto_ms))
            throw InvalidConfig("rto_ms", "must exceed 4x the one-way propagation delay");
        if (!(rtt_ewma_alpha > 0.0 && rtt_ewma_alpha <= 1.0))
            throw InvalidConfig("rtt_ewma_alpha", "must lie in (0, 1]");
        if (cwnd_max < 1)
            throw InvalidConfig("cwnd_max", "must be >= 1");
    }
};

struct FlowCounters {
    std::uint64_t bytes_sent_total = 0;
    std::uint64_t segments_acked_total = 0;
    double rtt_ewma_ms = 0.0; // 0 until the first sample
    std::uint64_t retransmissions = 0;
    std::uint64_t drops_error = 0;
    std::uint64_t drops_queue = 0;
    std::uint32_t cwnd_segments = 1;
};

struct IntervalStats {
    std::uint64_t acked_bytes = 0;
    double throughput_Bps = 0.0;
    double avg_rtt_ms = 0.0;
    std::uint64_t loss_events = 0;
    double interval_ms = 0.0;

    bool operator==(const IntervalStats &) const = default;
};

// ewma <- (1 - alpha) * ewma + alpha * sample; an empty ewma takes the sample.
inline double update_rtt_ewma(std::optional<double> ewma_ms, double sample_ms, double alpha) {
    if (!ewma_ms)
        return sample_ms;
    return (1.0 - alpha) * *ewma_ms + alpha * sample_ms;
}

// Min-heap of timestamped events; equal timestamps pop in insertion order.
template <typename Payload>
class EventQueue {
public:
    struct Entry {
        double time_ms;
        std::uint64_t seq;
        Payload payload;
    };

    void push(double time_ms, Payload payload) { heap_.push(Entry{time_ms, next_seq_++, std::move(payload)}); }

    bool empty() const { return heap_.empty(); }
    std::size_t size() const { return heap_.size(); }
    const Entry &top() const { return heap_.top(); }

    Entry pop() {
        Entry e = heap_.top();
        heap_.pop();
        return e;
    }

private:
    struct Later {
        bool operator()(const Entry &a, const Entry &b) const {
            if (a.time_ms != b.time_ms)
                return a.time_ms > b.time_ms;
            return a.seq > b.seq;
        }
    };

    std::priority_queue<Entry, std::vector<Entry>, Later> heap_;
    std::uint64_t next_seq_ = 0;
};

class Simulator {
public:
    explicit Simulator(const SimConfig &cfg) : cfg_(cfg), rng_(cfg.seed) {
        cfg_.validate();
        hops_[0].spec = cfg_.access_link;
        hops_[1].spec = cfg_.bottleneck_link;
        hops_[1].capacity = cfg_.queue_capacity_segments;
        hops_[2].spec = cfg_.access_link;
        // Reverse path: serialization on every hop plus propagation, never queued.
        ack_delay_ms_ = 2.0 * cfg_.access_link.serialization_ms(cfg_.ack_bytes) +
                        cfg_.bottleneck_link.serialization_ms(cfg_.ack_bytes) + cfg_.one_way_propagation_ms();
    }

    const SimConfig &config() const { return cfg_; }
    double now_ms() const { return now_ms_; }
    const FlowCounters &counters() const { return counters_; }
    std::uint32_t cwnd() const { return counters_.cwnd_segments; }
    std::uint64_t in_flight() const { return in_flight_; }
    std::uint64_t segments_sent_new() const { return segs_.size(); }
    std::size_t bottleneck_queue_length() const { return hops_[1].waiting.size(); }
    double bottleneck_service_ms() const { return cfg_.bottleneck_link.serialization_ms(cfg_.segment_bytes); }
    double ack_delay_ms() const { return ack_delay_ms_; }

    // Called after every processed event; used by tests to check per-instant invariants.
    void set_event_observer(std::function<void(const Simulator &)> fn) { observer_ = std::move(fn); }

    void set_cwnd(std::uint32_t segments) {
        if (segments < 1 || segments > cfg_.cwnd_max)
            throw ContractViolation("set_cwnd: " + std::to_string(segments) + " outside [1, " +
                                    std::to_string(cfg_.cwnd_max) + "]");
        counters_.cwnd_segments = segments; // new sends wait for the next advance()
    }

    // Process every event with timestamp <= now + interval_ms.
    IntervalStats advance(double interval_ms) {
        if (!(interval_ms > 0.0))
            throw ContractViolation("advance: interval must be > 0");
        const std::uint64_t acked_before = acked_bytes_total_;
        const std::uint64_t drops_before = counters_.drops_error + counters_.drops_queue;
        const double end = now_ms_ + interval_ms;

        try_send();
        while (!events_.empty() && events_.top().time_ms <= end) {
            auto e = events_.pop();
            now_ms_ = e.time_ms;
            handle(e.payload);
            if (observer_)
                observer_(*this);
        }
        now_ms_ = end;

        IntervalStats s;
        s.interval_ms = interval_ms;
        s.acked_bytes = acked_bytes_total_ - acked_before;
        s.throughput_Bps = static_cast<double>(s.acked_bytes) * 1000.0 / interval_ms;
        s.avg_rtt_ms = counters_.rtt_ewma_ms;
        s.loss_events = counters_.drops_error + counters_.drops_queue - drops_before;
        return s;
    }

private:
    enum class Kind : std::uint8_t { HopArrival, HopDeparture, ReceiverArrival, AckArrival, Timeout };

    struct Event {
        Kind kind;
        std::uint8_t hop = 0;
        std::uint64_t seq = 0;
        std::uint64_t aux = 0; // cumulative ack point or timer generation
    };

    struct Hop {
        LinkSpec spec;
        std::optional<std::uint32_t> capacity; // waiting room, excluding the segment in service
        std::deque<std::uint64_t> waiting;
        bool busy = false;
        std::uint64_t in_service = 0;
    };

    struct Segment {
        double sent_at_ms = 0.0;
        std::uint64_t generation = 0;
        bool retransmitted = false;
        bool acked = false;
    };

    void handle(const Event &e) {
        switch (e.kind) {
        case Kind::HopArrival:
            hop_arrival(e.hop, e.seq);
            break;
        case Kind::HopDeparture:
            hop_departure(e.hop);
            break;
        case Kind::ReceiverArrival:
            receiver_arrival(e.seq);
            break;
        case Kind::AckArrival:
            ack_arrival(e.seq, e.aux);
            break;
        case Kind::Timeout:
            timeout(e.seq, e.aux);
            break;
        }
    }

    void start_service(std::uint8_t h, std::uint64_t seq) {
        Hop &hop = hops_[h];
        hop.busy = true;
        hop.in_service = seq;
        events_.push(now_ms_ + hop.spec.serialization_ms(cfg_.segment_bytes), Event{Kind::HopDeparture, h, seq, 0});
    }

    void hop_arrival(std::uint8_t h, std::uint64_t seq) {
        Hop &hop = hops_[h];
        if (!hop.busy) {
            start_service(h, seq);
        } else if (hop.capacity && hop.waiting.size() >= *hop.capacity) {
            ++counters_.drops_queue;
        } else {
            hop.waiting.push_back(seq);
        }
    }

    void hop_departure(std::uint8_t h) {
        Hop &hop = hops_[h];
        const std::uint64_t seq = hop.in_service;
        const bool lost = hop.spec.loss_prob > 0.0 && uniform01(rng_) < hop.spec.loss_prob;
        if (lost) {
            ++counters_.drops_error;
        } else {
            const double at = now_ms_ + hop.spec.prop_delay_ms;
            if (h + 1u < hops_.size())
                events_.push(at, Event{Kind::HopArrival, static_cast<std::uint8_t>(h + 1), seq, 0});
            else
                events_.push(at, Event{Kind::ReceiverArrival, 0, seq, 0});
        }
        if (hop.waiting.empty()) {
            hop.busy = false;
        } else {
            const std::uint64_t next = hop.waiting.front();
            hop.waiting.pop_front();
            start_service(h, next);
        }
    }

    void receiver_arrival(std::uint64_t seq) {
        if (seq >= received_.size())
            received_.resize(seq + 1, false);
        received_[seq] = true;
        while (cumulative_ < received_.size() && received_[cumulative_])
            ++cumulative_;
        events_.push(now_ms_ + ack_delay_ms_, Event{Kind::AckArrival, 0, seq, cumulative_});
    }

    void mark_acked(std::uint64_t seq) {
        Segment &s = segs_[seq];
        s.acked = true;
        --in_flight_;
        ++counters_.segments_acked_total;
        acked_bytes_total_ += cfg_.segment_bytes;
    }

    void ack_arrival(std::uint64_t seq, std::uint64_t cumulative) {
        Segment &s = segs_[seq];
        if (!s.acked) {
            mark_acked(seq);
            if (!s.retransmitted) {
                const std::optional<double> prev =
                    rtt_initialized_ ? std::optional<double>(counters_.rtt_ewma_ms) : std::nullopt;
                counters_.rtt_ewma_ms = update_rtt_ewma(prev, now_ms_ - s.sent_at_ms, cfg_.rtt_ewma_alpha);
                rtt_initialized_ = true;
            }
        }
        for (; cum_processed_ < cumulative; ++cum_processed_)
            if (!segs_[cum_processed_].acked)
                mark_acked(cum_processed_);
        try_send();
    }

    void timeout(std::uint64_t seq, std::uint64_t generation) {
        Segment &s = segs_[seq];
        if (s.acked || s.generation != generation)
            return;
        s.retransmitted = true;
        ++counters_.retransmissions;
        transmit(seq);
    }

    void transmit(std::uint64_t seq) {
        Segment &s = segs_[seq];
        s.sent_at_ms = now_ms_;
        ++s.generation;
        counters_.bytes_sent_total += cfg_.segment_bytes;
        hop_arrival(0, seq);
        events_.push(now_ms_ + cfg_.rto_ms, Event{Kind::Timeout, 0, seq, s.generation});
    }

    void try_send() {
        while (in_flight_ < counters_.cwnd_segments) {
            const std::uint64_t seq = segs_.size();
            segs_.emplace_back();
            ++in_flight_;
            transmit(seq);
        }
    }

    SimConfig cfg_;
    Rng rng_;
    double now_ms_ = 0.0;
    double ack_delay_ms_ = 0.0;
    EventQueue<Event> events_;
    std::array<Hop, 3> hops_{};
    std::vector<Segment> segs_;
    std::vector<bool> received_;
    std::uint64_t cumulative_ = 0;
    std::uint64_t cum_processed_ = 0;
    std::uint64_t in_flight_ = 0;
    std::uint64_t acked_bytes_total_ = 0;
    bool rtt_initialized_ = false;
    FlowCounters counters_;
    std::function<void(const Simulator &)> observer_;
};

inline Simulator build_dumbbell(const SimConfig &cfg) { return Simulator(cfg); }

} // namespace embb::netsim
