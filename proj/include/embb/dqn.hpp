#pragma once

// Deep Q-learning from scratch: a dense ReLU Q-network, uniform replay,
// epsilon-greedy exploration, a periodically synced target network and
// squared-TD-error updates with plain gradient descent.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace embb::dqn {

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight; // row-major [out x in]
    std::vector<double> bias;   // [out]

    DenseLayer() = default;
    DenseLayer(std::size_t in_dim, std::size_t out_dim)
        : in(in_dim), out(out_dim), weight(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

    double &w(std::size_t row, std::size_t col) { return weight[row * in + col]; }
    double w(std::size_t row, std::size_t col) const { return weight[row * in + col]; }

    bool operator==(const DenseLayer &) const = default;
};

class QNetwork {
public:
    QNetwork() = default;

    explicit QNetwork(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
        if (layers_.empty())
            throw ContractViolation("QNetwork needs at least one layer");
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            const auto &l = layers_[i];
            if (l.weight.size() != l.in * l.out || l.bias.size() != l.out)
                throw ContractViolation("QNetwork: layer " + std::to_string(i) + " storage does not match its shape");
            if (i > 0 && layers_[i - 1].out != l.in)
                throw ContractViolation("QNetwork: layer " + std::to_string(i) + " input does not chain");
        }
    }

    // input -> width x hidden_count (ReLU) -> output (linear), all zeros.
    static QNetwork zeros(std::size_t input_dim, std::size_t hidden_count, std::size_t hidden_width,
                          std::size_t output_dim) {
        std::vector<DenseLayer> layers;
        std::size_t prev = input_dim;
        for (std::size_t h = 0; h < hidden_count; ++h) {
            layers.emplace_back(prev, hidden_width);
            prev = hidden_width;
        }
        layers.emplace_back(prev, output_dim);
        return QNetwork(std::move(layers));
    }

    // Glorot-uniform weights, zero biases.
    static QNetwork glorot(std::size_t input_dim, std::size_t hidden_count, std::size_t hidden_width,
                           std::size_t output_dim, Rng &rng) {
        QNetwork net = zeros(input_dim, hidden_count, hidden_width, output_dim);
        for (auto &l : net.layers_) {
            const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
            for (double &w : l.weight)
                w = uniform_real(rng, -limit, limit);
        }
        return net;
    }

    QNetwork zeros_like() const {
        QNetwork z = *this;
        for (auto &l : z.layers_) {
            std::fill(l.weight.begin(), l.weight.end(), 0.0);
            std::fill(l.bias.begin(), l.bias.end(), 0.0);
        }
        return z;
    }

    std::size_t input_dim() const { return layers_.front().in; }
    std::size_t output_dim() const { return layers_.back().out; }
    std::size_t hidden_count() const { return layers_.size() - 1; }
    std::vector<DenseLayer> &layers() { return layers_; }
    const std::vector<DenseLayer> &layers() const { return layers_; }

    bool same_shape(const QNetwork &other) const {
        if (layers_.size() != other.layers_.size())
            return false;
        for (std::size_t i = 0; i < layers_.size(); ++i)
            if (layers_[i].in != other.layers_[i].in || layers_[i].out != other.layers_[i].out)
                return false;
        return true;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto &l : layers_)
            n += l.weight.size() + l.bias.size();
        return n;
    }

    // Layer by layer: weights (row-major) then biases.
    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(parameter_count());
        for (const auto &l : layers_) {
            out.insert(out.end(), l.weight.begin(), l.weight.end());
            out.insert(out.end(), l.bias.begin(), l.bias.end());
        }
        return out;
    }

    void assign(std::span<const double> flat) {
        if (flat.size() != parameter_count())
            throw ContractViolation("QNetwork::assign: parameter count mismatch");
        std::size_t k = 0;
        for (auto &l : layers_) {
            for (double &w : l.weight)
                w = flat[k++];
            for (double &b : l.bias)
                b = flat[k++];
        }
    }

    bool all_finite() const {
        for (const auto &l : layers_) {
            for (double w : l.weight)
                if (!std::isfinite(w))
                    return false;
            for (double b : l.bias)
                if (!std::isfinite(b))
                    return false;
        }
        return true;
    }

    bool operator==(const QNetwork &) const = default;

private:
    std::vector<DenseLayer> layers_;
};

namespace detail {

inline void affine(const DenseLayer &l, std::span<const double> x, std::vector<double> &z) {
    z.assign(l.bias.begin(), l.bias.end());
    for (std::size_t r = 0; r < l.out; ++r) {
        const double *row = &l.weight[r * l.in];
        double acc = z[r];
        for (std::size_t c = 0; c < l.in; ++c)
            acc += row[c] * x[c];
        z[r] = acc;
    }
}

} // namespace detail

inline std::vector<double> forward(const QNetwork &net, std::span<const double> x) {
    if (x.size() != net.input_dim())
        throw ContractViolation("forward: input has " + std::to_string(x.size()) + " features, network expects " +
                                std::to_string(net.input_dim()));
    std::vector<double> a(x.begin(), x.end());
    std::vector<double> z;
    const auto &layers = net.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        detail::affine(layers[i], a, z);
        if (i + 1 < layers.size())
            for (double &v : z)
                v = std::max(0.0, v);
        a.swap(z);
    }
    return a;
}

// Argmax with ties to the lowest index.
inline std::size_t argmax(std::span<const double> q) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < q.size(); ++i)
        if (q[i] > q[best])
            best = i;
    return best;
}

inline std::size_t act_epsilon_greedy(std::span<const double> q, double epsilon, Rng &rng) {
    if (uniform01(rng) < epsilon)
        return static_cast<std::size_t>(uniform_index(rng, q.size()));
    return argmax(q);
}

struct Transition {
    std::vector<double> state;
    std::size_t action_index = 0;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;

    bool operator==(const Transition &) const = default;
};

// y = r for terminal transitions, else r + gamma * max_a Q_target(s', a).
inline std::vector<double> td_targets(std::span<const Transition> batch, const QNetwork &target_net, double gamma) {
    if (batch.empty())
        throw ContractViolation("td_targets: empty batch");
    std::vector<double> y;
    y.reserve(batch.size());
    for (const auto &t : batch) {
        if (t.done) {
            y.push_back(t.reward);
            continue;
        }
        const auto q = forward(target_net, t.next_state);
        y.push_back(t.reward + gamma * *std::max_element(q.begin(), q.end()));
    }
    return y;
}

struct LossAndGradient {
    double loss = 0.0;
    QNetwork gradient; // same shape as the network
};

// Mean squared error between Q(s)[a] and the targets, with its gradient by
// reverse-mode differentiation. Only the taken action's output contributes.
inline LossAndGradient loss_and_gradient(const QNetwork &net, std::span<const Transition> batch,
                                         std::span<const double> targets) {
    if (batch.empty())
        throw ContractViolation("loss_and_gradient: empty batch");
    if (targets.size() != batch.size())
        throw ContractViolation("loss_and_gradient: one target per transition required");

    const auto &layers = net.layers();
    const std::size_t depth = layers.size();
    const double inv_n = 1.0 / static_cast<double>(batch.size());

    LossAndGradient out{0.0, net.zeros_like()};
    auto &grad = out.gradient.layers();

    std::vector<std::vector<double>> acts(depth + 1); // acts[0] = input, acts[i] = post-activation of layer i-1
    std::vector<double> delta, prev_delta;

    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Transition &t = batch[b];
        if (t.state.size() != net.input_dim())
            throw ContractViolation("loss_and_gradient: state width mismatch");
        if (t.action_index >= net.output_dim())
            throw ContractViolation("loss_and_gradient: action index out of range");

        acts[0] = t.state;
        for (std::size_t i = 0; i < depth; ++i) {
            detail::affine(layers[i], acts[i], acts[i + 1]);
            if (i + 1 < depth)
                for (double &v : acts[i + 1])
                    v = std::max(0.0, v);
        }

        const double err = acts[depth][t.action_index] - targets[b];
        out.loss += err * err * inv_n;

        delta.assign(layers.back().out, 0.0);
        delta[t.action_index] = 2.0 * err * inv_n;

        for (std::size_t i = depth; i-- > 0;) {
            const DenseLayer &l = layers[i];
            DenseLayer &g = grad[i];
            const auto &x = acts[i];
            for (std::size_t r = 0; r < l.out; ++r) {
                const double d = delta[r];
                if (d == 0.0)
                    continue;
                g.bias[r] += d;
                double *grow = &g.weight[r * l.in];
                for (std::size_t c = 0; c < l.in; ++c)
                    grow[c] += d * x[c];
            }
            if (i == 0)
                break;
            // Through W^T, then the ReLU of layer i-1 (x > 0 iff it was active).
            prev_delta.assign(l.in, 0.0);
            for (std::size_t r = 0; r < l.out; ++r) {
                const double d = delta[r];
                if (d == 0.0)
                    continue;
                const double *row = &l.weight[r * l.in];
                for (std::size_t c = 0; c < l.in; ++c)
                    prev_delta[c] += row[c] * d;
            }
            for (std::size_t c = 0; c < l.in; ++c)
                if (!(x[c] > 0.0))
                    prev_delta[c] = 0.0;
            delta.swap(prev_delta);
        }
    }
    return out;
}

// One gradient-descent step on the squared TD error. Throws TrainingDiverged
// (leaving the parameters untouched) when the loss or gradient is not finite.
inline double train_step(QNetwork &net, const QNetwork &target_net, std::span<const Transition> batch, double lr,
                         double gamma) {
    const auto targets = td_targets(batch, target_net, gamma);
    auto lg = loss_and_gradient(net, batch, targets);
    if (!std::isfinite(lg.loss) || !lg.gradient.all_finite())
        throw TrainingDiverged("non-finite training loss");
    auto &layers = net.layers();
    const auto &grad = lg.gradient.layers();
    for (std::size_t i = 0; i < layers.size(); ++i) {
        for (std::size_t k = 0; k < layers[i].weight.size(); ++k)
            layers[i].weight[k] -= lr * grad[i].weight[k];
        for (std::size_t k = 0; k < layers[i].bias.size(); ++k)
            layers[i].bias[k] -= lr * grad[i].bias[k];
    }
    return lg.loss;
}

inline void sync_target(const QNetwork &net, QNetwork &target_net) {
    if (!net.same_shape(target_net))
        throw ContractViolation("sync_target: shape mismatch");
    target_net = net;
}

// Fixed-capacity FIFO ring; pushing into a full buffer evicts the oldest item.
template <typename T>
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
        if (capacity_ == 0)
            throw InvalidConfig("buffer_capacity", "must be >= 1");
        items_.reserve(std::min<std::size_t>(capacity_, 1 << 16));
    }

    std::size_t capacity() const { return capacity_; }
    std::size_t size() const { return items_.size(); }
    bool empty() const { return items_.empty(); }

    void push(T item) {
        if (items_.size() < capacity_) {
            items_.push_back(std::move(item));
        } else {
            items_[head_] = std::move(item);
            head_ = (head_ + 1) % capacity_;
        }
    }

    // i = 0 is the oldest stored item.
    const T &operator[](std::size_t i) const { return items_[(head_ + i) % items_.size()]; }

    // n distinct stored items, uniformly without replacement.
    std::vector<T> sample(std::size_t n, Rng &rng) const {
        const auto idx = sample_indices(n, rng);
        std::vector<T> out;
        out.reserve(n);
        for (std::size_t i : idx)
            out.push_back((*this)[i]);
        return out;
    }

    std::vector<std::size_t> sample_indices(std::size_t n, Rng &rng) const {
        if (n > items_.size())
            throw InsufficientData("replay buffer holds " + std::to_string(items_.size()) + " items, " +
                                   std::to_string(n) + " requested");
        std::vector<std::size_t> pool(items_.size());
        for (std::size_t i = 0; i < pool.size(); ++i)
            pool[i] = i;
        // Partial Fisher-Yates.
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = i + static_cast<std::size_t>(uniform_index(rng, pool.size() - i));
            std::swap(pool[i], pool[j]);
        }
        pool.resize(n);
        return pool;
    }

private:
    std::size_t capacity_;
    std::size_t head_ = 0;
    std::vector<T> items_;
};

struct DqnConfig {
    std::uint32_t hidden_count = 2;
    std::uint32_t hidden_width = 64;
    double learning_rate = 0.01;
    double gamma = 0.95;
    double epsilon_start = 1.0;
    double epsilon_min = 0.05;
    double epsilon_decay = 0.99;
    std::uint32_t batch_size = 32;
    std::uint32_t buffer_capacity = 5000;
    std::uint32_t target_sync_every = 50;
    std::uint64_t seed = 1;

    void validate() const {
        if (hidden_count < 1)
            throw InvalidConfig("hidden_count", "must be >= 1");
        if (hidden_width < 1)
            throw InvalidConfig("hidden_width", "must be >= 1");
        if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
            throw InvalidConfig("learning_rate", "must be > 0");
        if (!(gamma >= 0.0 && gamma < 1.0))
            throw InvalidConfig("gamma", "must lie in [0, 1)");
        if (!(epsilon_start >= 0.0 && epsilon_start <= 1.0))
            throw InvalidConfig("epsilon_start", "must lie in [0, 1]");
        if (!(epsilon_min >= 0.0 && epsilon_min <= epsilon_start))
            throw InvalidConfig("epsilon_min", "must lie in [0, epsilon_start]");
        if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0))
            throw InvalidConfig("epsilon_decay", "must lie in (0, 1]");
        if (batch_size < 1)
            throw InvalidConfig("batch_size", "must be >= 1");
        if (buffer_capacity < batch_size)
            throw InvalidConfig("buffer_capacity", "must be >= batch_size");
        if (target_sync_every < 1)
            throw InvalidConfig("target_sync_every", "must be >= 1");
    }

    double epsilon_at(std::uint64_t step) const {
        return std::max(epsilon_min, epsilon_start * std::pow(epsilon_decay, static_cast<double>(step)));
    }
};

class DqnAgent {
public:
    DqnAgent(const DqnConfig &cfg, std::size_t input_dim, std::size_t action_count)
        : cfg_(cfg), rng_(mix_seed(cfg.seed, 0x61676e74)), buffer_(cfg.buffer_capacity) {
        cfg_.validate();
        Rng init(mix_seed(cfg_.seed, 0x696e6974));
        online_ = QNetwork::glorot(input_dim, cfg_.hidden_count, cfg_.hidden_width, action_count, init);
        target_ = online_;
    }

    const DqnConfig &config() const { return cfg_; }
    const QNetwork &online() const { return online_; }
    const QNetwork &target() const { return target_; }
    const ReplayBuffer<Transition> &buffer() const { return buffer_; }
    std::uint64_t steps() const { return steps_; }
    double epsilon() const { return cfg_.epsilon_at(steps_); }

    std::size_t select_action(std::span<const double> state) {
        const auto q = forward(online_, state);
        return act_epsilon_greedy(q, epsilon(), rng_);
    }

    std::size_t greedy_action(std::span<const double> state) const { return argmax(forward(online_, state)); }

    // Store the transition, then one online update once the buffer holds a
    // batch. Returns the training loss when an update ran.
    std::optional<double> observe(Transition t) {
        buffer_.push(std::move(t));
        ++steps_;
        std::optional<double> loss;
        if (buffer_.size() >= cfg_.batch_size) {
            const auto batch = buffer_.sample(cfg_.batch_size, rng_);
            loss = train_step(online_, target_, batch, cfg_.learning_rate, cfg_.gamma);
        }
        if (steps_ % cfg_.target_sync_every == 0)
            sync_target(online_, target_);
        return loss;
    }

private:
    DqnConfig cfg_;
    Rng rng_;
    QNetwork online_;
    QNetwork target_;
    ReplayBuffer<Transition> buffer_;
    std::uint64_t steps_ = 0;
};

// Binary checkpoint: "EMBBQNET", u32 version, u32 layer count, then per layer
// u32 out, u32 in, out*in weights (row-major) and out biases as little-endian
// IEEE-754 doubles.
namespace checkpoint {

inline constexpr char kMagic[8] = {'E', 'M', 'B', 'B', 'Q', 'N', 'E', 'T'};
inline constexpr std::uint32_t kVersion = 1;

namespace detail {

inline void put_u64(std::ostream &os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char *>(b), 8);
}

inline void put_u32(std::ostream &os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i)
        b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char *>(b), 4);
}

inline std::uint64_t get_u64(std::istream &is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char *>(b), 8))
        throw InvalidInput("checkpoint: truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
        v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint32_t get_u32(std::istream &is) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char *>(b), 4))
        throw InvalidInput("checkpoint: truncated");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

} // namespace detail

inline void write(std::ostream &os, const QNetwork &net) {
    os.write(kMagic, sizeof kMagic);
    detail::put_u32(os, kVersion);
    detail::put_u32(os, static_cast<std::uint32_t>(net.layers().size()));
    for (const auto &l : net.layers()) {
        detail::put_u32(os, static_cast<std::uint32_t>(l.out));
        detail::put_u32(os, static_cast<std::uint32_t>(l.in));
        for (double w : l.weight)
            detail::put_u64(os, std::bit_cast<std::uint64_t>(w));
        for (double b : l.bias)
            detail::put_u64(os, std::bit_cast<std::uint64_t>(b));
    }
}

inline QNetwork read(std::istream &is) {
    char magic[sizeof kMagic];
    if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw InvalidInput("checkpoint: bad magic");
    const auto version = detail::get_u32(is);
    if (version != kVersion)
        throw InvalidInput("checkpoint: unsupported version " + std::to_string(version));
    const auto count = detail::get_u32(is);
    if (count == 0 || count > 1024)
        throw InvalidInput("checkpoint: implausible layer count");
    std::vector<DenseLayer> layers;
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto out = detail::get_u32(is);
        const auto in = detail::get_u32(is);
        DenseLayer l(in, out);
        for (double &w : l.weight)
            w = std::bit_cast<double>(detail::get_u64(is));
        for (double &b : l.bias)
            b = std::bit_cast<double>(detail::get_u64(is));
        layers.push_back(std::move(l));
    }
    return QNetwork(std::move(layers));
}

inline void save(const std::string &path, const QNetwork &net) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw InvalidInput("checkpoint: cannot open " + path);
    write(os, net);
}

inline QNetwork load(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw InvalidInput("checkpoint: cannot open " + path);
    return read(is);
}

} // namespace checkpoint

} // namespace embb::dqn
