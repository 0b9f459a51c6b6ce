#pragma once

// File formats owned by the command-line tool: key=value configuration,
// steps.csv / runs.csv / regression.csv, and atomic file replacement.

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unistd.h>
#include <vector>

#include "dqn.hpp"
#include "env.hpp"
#include "errors.hpp"
#include "experiments.hpp"
#include "format.hpp"
#include "stats.hpp"

namespace embb::io {

inline constexpr std::string_view kStepsHeader = "run_id,step,cwnd,throughput_Bps,avg_rtt_ms,reward,epsilon,loss";
inline constexpr std::string_view kRunsHeader =
    "run_id,layers,learning_rate,error_rate,rep,seed,avg_throughput_Bps,max_throughput_Bps,convergence_step,"
    "cumulative_reward,final_cwnd,diverged";
inline constexpr std::string_view kRegressionHeader = "term,influence,coefficient,std_error,t_value,p_value";

// Everything a subcommand can be configured with.
struct Settings {
    env::EnvConfig env;
    dqn::DqnConfig dqn;
    experiments::ConvergenceParams conv;
    experiments::FactorLevels factors;

    void validate() const {
        env.validate();
        dqn.validate();
        conv.validate(env.episode_length);
    }
};

namespace detail {

template <typename Int>
Int parse_positive_int(std::string_view v, const std::string &key) {
    try {
        return parse_int<Int>(v, key);
    } catch (const InvalidInput &) {
        throw InvalidConfig(key, "not an integer: '" + std::string(v) + "'");
    }
}

inline double parse_real(std::string_view v, const std::string &key) {
    try {
        return parse_double(v, key);
    } catch (const InvalidInput &) {
        throw InvalidConfig(key, "not a number: '" + std::string(v) + "'");
    }
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos)
            break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
std::vector<T> parse_list(std::string_view v, const std::string &key) {
    std::vector<T> out;
    for (auto item : split(v, ',')) {
        item = trim(item);
        if (item.empty())
            throw InvalidConfig(key, "empty list element");
        if constexpr (std::is_integral_v<T>)
            out.push_back(parse_positive_int<T>(item, key));
        else
            out.push_back(parse_real(item, key));
    }
    return out;
}

using Setter = std::function<void(Settings &, std::string_view, const std::string &)>;

template <typename Member>
Setter set_field(Member Settings::*group, auto field) {
    return [group, field](Settings &s, std::string_view v, const std::string &key) {
        auto &target = (s.*group).*field;
        using T = std::remove_reference_t<decltype(target)>;
        if constexpr (std::is_integral_v<T>)
            target = parse_positive_int<T>(v, key);
        else
            target = parse_real(v, key);
    };
}

inline Setter set_link(netsim::LinkSpec netsim::SimConfig::*link, auto field) {
    return [link, field](Settings &s, std::string_view v, const std::string &key) {
        auto &target = (s.env.sim.*link).*field;
        using T = std::remove_reference_t<decltype(target)>;
        if constexpr (std::is_integral_v<T>)
            target = parse_positive_int<T>(v, key);
        else
            target = parse_real(v, key);
    };
}

inline Setter set_sim(auto field) {
    return [field](Settings &s, std::string_view v, const std::string &key) {
        auto &target = s.env.sim.*field;
        using T = std::remove_reference_t<decltype(target)>;
        if constexpr (std::is_integral_v<T>)
            target = parse_positive_int<T>(v, key);
        else
            target = parse_real(v, key);
    };
}

inline const std::map<std::string, Setter, std::less<>> &setters() {
    using netsim::LinkSpec;
    using netsim::SimConfig;
    static const std::map<std::string, Setter, std::less<>> table = {
        {"sim.access_link.rate_bps", set_link(&SimConfig::access_link, &LinkSpec::rate_bps)},
        {"sim.access_link.prop_delay_ms", set_link(&SimConfig::access_link, &LinkSpec::prop_delay_ms)},
        {"sim.access_link.loss_prob", set_link(&SimConfig::access_link, &LinkSpec::loss_prob)},
        {"sim.bottleneck_link.rate_bps", set_link(&SimConfig::bottleneck_link, &LinkSpec::rate_bps)},
        {"sim.bottleneck_link.prop_delay_ms", set_link(&SimConfig::bottleneck_link, &LinkSpec::prop_delay_ms)},
        {"sim.bottleneck_link.loss_prob", set_link(&SimConfig::bottleneck_link, &LinkSpec::loss_prob)},
        {"sim.segment_bytes", set_sim(&SimConfig::segment_bytes)},
        {"sim.ack_bytes", set_sim(&SimConfig::ack_bytes)},
        {"sim.queue_capacity_segments", set_sim(&SimConfig::queue_capacity_segments)},
        {"sim.rto_ms", set_sim(&SimConfig::rto_ms)},
        {"sim.rtt_ewma_alpha", set_sim(&SimConfig::rtt_ewma_alpha)},
        {"sim.seed", set_sim(&SimConfig::seed)},
        {"sim.cwnd_max", set_sim(&SimConfig::cwnd_max)},
        {"env.decision_interval_ms", set_field(&Settings::env, &env::EnvConfig::decision_interval_ms)},
        {"env.episode_length", set_field(&Settings::env, &env::EnvConfig::episode_length)},
        {"env.cwnd_min", set_field(&Settings::env, &env::EnvConfig::cwnd_min)},
        {"env.cwnd_max", set_field(&Settings::env, &env::EnvConfig::cwnd_max)},
        {"env.normalization_scales",
         [](Settings &s, std::string_view v, const std::string &key) {
             const auto xs = parse_list<double>(v, key);
             if (xs.size() != env::kObservationDim)
                 throw InvalidConfig(key, "expects 6 comma-separated values");
             std::copy(xs.begin(), xs.end(), s.env.normalization_scales.begin());
         }},
        {"dqn.hidden_count", set_field(&Settings::dqn, &dqn::DqnConfig::hidden_count)},
        {"dqn.hidden_width", set_field(&Settings::dqn, &dqn::DqnConfig::hidden_width)},
        {"dqn.learning_rate", set_field(&Settings::dqn, &dqn::DqnConfig::learning_rate)},
        {"dqn.gamma", set_field(&Settings::dqn, &dqn::DqnConfig::gamma)},
        {"dqn.epsilon_start", set_field(&Settings::dqn, &dqn::DqnConfig::epsilon_start)},
        {"dqn.epsilon_min", set_field(&Settings::dqn, &dqn::DqnConfig::epsilon_min)},
        {"dqn.epsilon_decay", set_field(&Settings::dqn, &dqn::DqnConfig::epsilon_decay)},
        {"dqn.batch_size", set_field(&Settings::dqn, &dqn::DqnConfig::batch_size)},
        {"dqn.buffer_capacity", set_field(&Settings::dqn, &dqn::DqnConfig::buffer_capacity)},
        {"dqn.target_sync_every", set_field(&Settings::dqn, &dqn::DqnConfig::target_sync_every)},
        {"dqn.seed", set_field(&Settings::dqn, &dqn::DqnConfig::seed)},
        {"conv.window", set_field(&Settings::conv, &experiments::ConvergenceParams::window)},
        {"conv.tolerance_frac", set_field(&Settings::conv, &experiments::ConvergenceParams::tolerance_frac)},
        {"factors.layers",
         [](Settings &s, std::string_view v, const std::string &key) {
             s.factors.layers = parse_list<std::uint32_t>(v, key);
         }},
        {"factors.learning_rate",
         [](Settings &s, std::string_view v, const std::string &key) {
             s.factors.learning_rate = parse_list<double>(v, key);
         }},
        {"factors.error_rate",
         [](Settings &s, std::string_view v, const std::string &key) {
             s.factors.error_rate = parse_list<double>(v, key);
         }},
        {"factors.baseline_layers", set_field(&Settings::factors, &experiments::FactorLevels::baseline_layers)},
        {"factors.baseline_learning_rate",
         set_field(&Settings::factors, &experiments::FactorLevels::baseline_learning_rate)},
        {"factors.baseline_error_rate", set_field(&Settings::factors, &experiments::FactorLevels::baseline_error_rate)},
    };
    return table;
}

} // namespace detail

// Unknown keys are rejected.
inline void apply_setting(Settings &s, std::string_view key, std::string_view value) {
    const auto &table = detail::setters();
    const auto it = table.find(key);
    if (it == table.end())
        throw InvalidConfig(std::string(key), "unknown key");
    it->second(s, trim(value), std::string(key));
}

// "key=value" (the form used by command-line overrides).
inline void apply_assignment(Settings &s, std::string_view assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string_view::npos)
        throw InvalidInput("override '" + std::string(assignment) + "' is not key=value");
    apply_setting(s, trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

// Flat key=value lines; '#' starts a comment; blank lines ignored.
inline void apply_config_text(Settings &s, std::string_view text) {
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos)
            line = line.substr(0, hash);
        line = trim(line);
        if (line.empty())
            continue;
        if (line.find('=') == std::string_view::npos)
            throw InvalidInput("config line " + std::to_string(line_no) + ": expected key=value");
        apply_assignment(s, line);
    }
}

inline std::string read_file(const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw InvalidInput("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void apply_config_file(Settings &s, const std::string &path) { apply_config_text(s, read_file(path)); }

// Write to a sibling temporary, then rename over the destination.
inline void atomic_write(const std::filesystem::path &path, std::string_view content) {
    if (path.has_parent_path())
        std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os)
            throw InvalidInput("cannot write '" + tmp.string() + "'");
        os.write(content.data(), static_cast<std::streamsize>(content.size()));
        os.flush();
        if (!os)
            throw InvalidInput("write failed for '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string steps_csv(std::span<const experiments::StepRow> rows) {
    std::string out(kStepsHeader);
    out += '\n';
    for (const auto &r : rows) {
        out += r.run_id;
        out += ',' + std::to_string(r.step);
        out += ',' + std::to_string(r.cwnd);
        out += ',' + format_double(r.throughput_Bps);
        out += ',' + format_double(r.avg_rtt_ms);
        out += ',' + format_double(r.reward);
        out += ',' + format_double(r.epsilon);
        out += ',';
        if (r.loss)
            out += format_double(*r.loss);
        out += '\n';
    }
    return out;
}

inline std::string runs_csv(std::span<const experiments::RunRecord> records) {
    std::string out(kRunsHeader);
    out += '\n';
    for (const auto &r : records) {
        const auto &s = r.spec;
        out += s.run_id;
        out += ',' + std::to_string(s.layers);
        out += ',' + format_double(s.learning_rate);
        out += ',' + format_double(s.error_rate);
        out += ',' + std::to_string(s.rep);
        out += ',' + std::to_string(s.seed);
        out += ',' + format_double(r.avg_throughput_Bps);
        out += ',' + format_double(r.max_throughput_Bps);
        out += ',';
        if (r.convergence_step)
            out += std::to_string(*r.convergence_step);
        out += ',' + format_double(r.cumulative_reward);
        out += ',' + std::to_string(r.final_cwnd);
        out += r.diverged ? ",1" : ",0";
        out += '\n';
    }
    return out;
}

inline std::string regression_csv(std::span<const stats::RegressionRow> rows) {
    std::string out(kRegressionHeader);
    out += '\n';
    auto opt = [](const std::optional<double> &v) { return v ? format_double(*v) : std::string(); };
    for (const auto &r : rows) {
        out += r.term;
        out += ',' + opt(r.influence);
        out += ',' + format_double(r.coefficient);
        out += ',' + format_double(r.std_error);
        out += ',' + opt(r.t_value);
        out += ',' + opt(r.p_value);
        out += '\n';
    }
    return out;
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(std::string_view name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name)
                return i;
        throw InvalidInput("missing column '" + std::string(name) + "'");
    }
};

// Plain comma-separated text without quoting (all files here are unquoted).
inline CsvTable parse_csv(std::string_view text) {
    CsvTable t;
    bool first = true;
    std::size_t line_no = 0;
    for (auto line : detail::split(text, '\n')) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.remove_suffix(1);
        if (line.empty())
            continue;
        std::vector<std::string> fields;
        for (auto f : detail::split(line, ','))
            fields.emplace_back(f);
        if (first) {
            t.header = std::move(fields);
            first = false;
            continue;
        }
        if (fields.size() != t.header.size())
            throw InvalidInput("csv line " + std::to_string(line_no) + ": expected " +
                               std::to_string(t.header.size()) + " fields, found " + std::to_string(fields.size()));
        t.rows.push_back(std::move(fields));
    }
    if (first)
        throw InvalidInput("csv: empty input");
    return t;
}

inline std::vector<experiments::RunRecord> parse_runs_csv(std::string_view text) {
    const CsvTable t = parse_csv(text);
    std::string joined;
    for (std::size_t i = 0; i < t.header.size(); ++i)
        joined += (i ? "," : "") + t.header[i];
    if (joined != kRunsHeader)
        throw InvalidInput("runs.csv: unexpected header");
    std::vector<experiments::RunRecord> out;
    for (const auto &f : t.rows) {
        experiments::RunRecord r;
        r.spec.run_id = f[0];
        r.spec.layers = parse_int<std::uint32_t>(f[1], "layers");
        r.spec.learning_rate = parse_double(f[2], "learning_rate");
        r.spec.error_rate = parse_double(f[3], "error_rate");
        r.spec.rep = parse_int<std::uint32_t>(f[4], "rep");
        r.spec.seed = parse_int<std::uint64_t>(f[5], "seed");
        r.avg_throughput_Bps = parse_double(f[6], "avg_throughput_Bps");
        r.max_throughput_Bps = parse_double(f[7], "max_throughput_Bps");
        if (!f[8].empty())
            r.convergence_step = parse_int<std::uint32_t>(f[8], "convergence_step");
        r.cumulative_reward = parse_double(f[9], "cumulative_reward");
        r.final_cwnd = parse_int<std::uint32_t>(f[10], "final_cwnd");
        r.diverged = f[11] == "1";
        out.push_back(std::move(r));
    }
    return out;
}

struct Analysis {
    std::vector<stats::RegressionRow> rows;
    std::size_t observations = 0;
    std::size_t df = 0;
};

// Coded two-factor OLS on one numeric column of a runs table. Diverged runs
// and rows with an empty response are skipped.
inline Analysis analyze_runs(const CsvTable &runs, const std::string &factor_a, const std::string &factor_b,
                             const std::string &response) {
    if (factor_a == factor_b)
        throw InvalidInput("analyze: the two factors must differ");
    const auto ia = runs.column(factor_a);
    const auto ib = runs.column(factor_b);
    const auto iy = runs.column(response);
    std::optional<std::size_t> idiv;
    for (std::size_t i = 0; i < runs.header.size(); ++i)
        if (runs.header[i] == "diverged")
            idiv = i;

    std::vector<double> a, b, y;
    std::set<double> levels_a, levels_b;
    for (const auto &row : runs.rows) {
        if (idiv && row[*idiv] == "1")
            continue;
        if (row[iy].empty())
            continue;
        const double ca = stats::code_level(factor_a, parse_double(row[ia], factor_a));
        const double cb = stats::code_level(factor_b, parse_double(row[ib], factor_b));
        a.push_back(ca);
        b.push_back(cb);
        y.push_back(parse_double(row[iy], response));
        levels_a.insert(ca);
        levels_b.insert(cb);
    }
    if (levels_a.size() < 2)
        throw InvalidInput("analyze: factor '" + factor_a + "' needs at least 2 levels in the data");
    if (levels_b.size() < 2)
        throw InvalidInput("analyze: factor '" + factor_b + "' needs at least 2 levels in the data");

    const auto x = stats::two_factor_design(a, b, stats::factor_display_name(factor_a),
                                            stats::factor_display_name(factor_b));
    const auto fit = stats::ols(x, y);
    return Analysis{fit.rows, y.size(), fit.df};
}

} // namespace embb::io
