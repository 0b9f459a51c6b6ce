#pragma once

// Ordinary least squares on coded two-factor designs, reported in the
// term / influence / coefficient / SE / t / p layout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "format.hpp"

namespace embb::stats {

class InvalidLevel : public InvalidInput {
public:
    using InvalidInput::InvalidInput;
};

class SingularDesign : public InvalidInput {
public:
    SingularDesign(std::string column)
        : InvalidInput("singular design: column '" + column + "' is linearly dependent on earlier columns"),
          column_(std::move(column)) {}

    const std::string &column() const noexcept { return column_; }

private:
    std::string column_;
};

namespace detail {

inline bool same_level(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); }

} // namespace detail

// error_rate: 0 -> -1, 0.2 -> +1; learning_rate: 0.001 -> -1, 0.01 -> +1;
// layers: log2 centered on 4, so 2 -> -1, 4 -> 0, 8 -> +1.
inline double code_level(std::string_view factor, double raw) {
    if (factor == "error_rate") {
        if (detail::same_level(raw, 0.0))
            return -1.0;
        if (detail::same_level(raw, 0.2))
            return +1.0;
    } else if (factor == "learning_rate") {
        if (detail::same_level(raw, 0.001))
            return -1.0;
        if (detail::same_level(raw, 0.01))
            return +1.0;
    } else if (factor == "layers") {
        if (detail::same_level(raw, 2.0))
            return -1.0;
        if (detail::same_level(raw, 4.0))
            return 0.0;
        if (detail::same_level(raw, 8.0))
            return +1.0;
    } else {
        throw InvalidLevel("unknown factor '" + std::string(factor) + "'");
    }
    throw InvalidLevel("invalid level " + format_double(raw) + " for factor '" + std::string(factor) + "'");
}

inline std::string factor_display_name(std::string_view factor) {
    if (factor == "error_rate")
        return "Network Error Rate";
    if (factor == "learning_rate")
        return "Learning Rate";
    if (factor == "layers")
        return "DQN Algorithm";
    return std::string(factor);
}

struct DesignMatrix {
    std::vector<std::string> columns;
    std::size_t rows = 0;
    std::vector<double> values; // row-major [rows x columns]

    std::size_t cols() const { return columns.size(); }
    double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }
    double &at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
};

// Intercept, two coded mains, and their product.
inline DesignMatrix two_factor_design(std::span<const double> a, std::span<const double> b, const std::string &name_a,
                                      const std::string &name_b) {
    if (a.size() != b.size())
        throw InvalidInput("two_factor_design: factor columns differ in length");
    DesignMatrix x;
    x.columns = {"Constant", name_a, name_b, name_a + " \xC3\x97 " + name_b};
    x.rows = a.size();
    x.values.reserve(x.rows * 4);
    for (std::size_t i = 0; i < a.size(); ++i) {
        x.values.push_back(1.0);
        x.values.push_back(a[i]);
        x.values.push_back(b[i]);
        x.values.push_back(a[i] * b[i]);
    }
    return x;
}

// Regularized incomplete beta I_x(a, b), continued fraction with modified Lentz.
inline double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0)
        return 0.0;
    if (x >= 1.0)
        return 1.0;

    auto continued_fraction = [](double a, double b, double x) {
        constexpr double tiny = 1e-300;
        constexpr double eps = 1e-16;
        const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
        double c = 1.0;
        double d = 1.0 - qab * x / qap;
        if (std::abs(d) < tiny)
            d = tiny;
        d = 1.0 / d;
        double h = d;
        for (int m = 1; m <= 10000; ++m) {
            const double m2 = 2.0 * m;
            double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < tiny)
                d = tiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < tiny)
                c = tiny;
            d = 1.0 / d;
            h *= d * c;
            aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
            d = 1.0 + aa * d;
            if (std::abs(d) < tiny)
                d = tiny;
            c = 1.0 + aa / c;
            if (std::abs(c) < tiny)
                c = tiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::abs(del - 1.0) < eps)
                break;
        }
        return h;
    };

    const double log_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0))
        return front * continued_fraction(a, b, x) / a;
    return 1.0 - front * continued_fraction(b, a, 1.0 - x) / b;
}

// P(|T| >= |t|) for Student's t with df degrees of freedom.
inline double student_t_two_sided_p(double t, double df) {
    if (!(df > 0.0))
        throw InvalidInput("student_t_two_sided_p: df must be > 0");
    if (std::isnan(t))
        return std::numeric_limits<double>::quiet_NaN();
    if (std::isinf(t))
        return 0.0;
    const double x = df / (df + t * t);
    return std::clamp(incomplete_beta(0.5 * df, 0.5, x), 0.0, 1.0);
}

struct RegressionRow {
    std::string term;
    std::optional<double> influence; // empty for the intercept
    double coefficient = 0.0;
    double std_error = 0.0;
    std::optional<double> t_value; // empty on a perfect fit
    std::optional<double> p_value;
};

struct OlsResult {
    std::vector<RegressionRow> rows;
    std::vector<double> coefficients;
    std::vector<double> residuals;
    double rss = 0.0;
    std::size_t df = 0;
    bool perfect_fit = false;
};

// beta by Householder QR; SE from s^2 * diag((X'X)^-1) = s^2 * rownorm^2(R^-1).
inline OlsResult ols(const DesignMatrix &x, std::span<const double> y) {
    const std::size_t n = x.rows, p = x.cols();
    if (y.size() != n)
        throw InvalidInput("ols: response has " + std::to_string(y.size()) + " values for " + std::to_string(n) +
                           " design rows");
    if (p == 0 || n <= p)
        throw InvalidInput("ols: need more rows than columns (rows " + std::to_string(n) + ", columns " +
                           std::to_string(p) + ")");

    // Column-major working copy.
    std::vector<std::vector<double>> a(p, std::vector<double>(n));
    std::vector<double> col_norm(p, 0.0);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t i = 0; i < n; ++i) {
            a[j][i] = x.at(i, j);
            col_norm[j] += a[j][i] * a[j][i];
        }
        col_norm[j] = std::sqrt(col_norm[j]);
    }
    std::vector<double> qty(y.begin(), y.end());

    for (std::size_t k = 0; k < p; ++k) {
        double norm = 0.0;
        for (std::size_t i = k; i < n; ++i)
            norm += a[k][i] * a[k][i];
        norm = std::sqrt(norm);
        if (norm <= 1e-10 * std::max(1.0, col_norm[k]))
            throw SingularDesign(x.columns[k]);
        const double alpha = a[k][k] > 0.0 ? -norm : norm;
        std::vector<double> v(n - k);
        for (std::size_t i = k; i < n; ++i)
            v[i - k] = a[k][i];
        v[0] -= alpha;
        double vnorm2 = 0.0;
        for (double e : v)
            vnorm2 += e * e;
        auto reflect = [&](std::vector<double> &col) {
            double dot = 0.0;
            for (std::size_t i = k; i < n; ++i)
                dot += v[i - k] * col[i];
            const double f = 2.0 * dot / vnorm2;
            for (std::size_t i = k; i < n; ++i)
                col[i] -= f * v[i - k];
        };
        if (vnorm2 > 0.0) {
            for (std::size_t j = k; j < p; ++j)
                reflect(a[j]);
            reflect(qty);
        }
    }

    // R is a[j][i] for i <= j. Back-substitute R beta = (Q'y)[0:p].
    std::vector<double> beta(p, 0.0);
    for (std::size_t ii = p; ii-- > 0;) {
        double s = qty[ii];
        for (std::size_t j = ii + 1; j < p; ++j)
            s -= a[j][ii] * beta[j];
        beta[ii] = s / a[ii][ii];
    }

    // R^-1, upper triangular.
    std::vector<std::vector<double>> rinv(p, std::vector<double>(p, 0.0)); // rinv[row][col]
    for (std::size_t j = 0; j < p; ++j) {
        rinv[j][j] = 1.0 / a[j][j];
        for (std::size_t ii = j; ii-- > 0;) {
            double s = 0.0;
            for (std::size_t k = ii + 1; k <= j; ++k)
                s += a[k][ii] * rinv[k][j];
            rinv[ii][j] = -s / a[ii][ii];
        }
    }

    OlsResult res;
    res.coefficients = beta;
    res.df = n - p;
    res.residuals.resize(n);
    double ynorm2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double fit = 0.0;
        for (std::size_t j = 0; j < p; ++j)
            fit += x.at(i, j) * beta[j];
        res.residuals[i] = y[i] - fit;
        res.rss += res.residuals[i] * res.residuals[i];
        ynorm2 += y[i] * y[i];
    }
    res.perfect_fit = res.rss <= 1e-24 * std::max(1.0, ynorm2);
    const double s2 = res.perfect_fit ? 0.0 : res.rss / static_cast<double>(res.df);

    for (std::size_t j = 0; j < p; ++j) {
        double diag = 0.0;
        for (std::size_t k = j; k < p; ++k)
            diag += rinv[j][k] * rinv[j][k];
        RegressionRow row;
        row.term = x.columns[j];
        row.coefficient = beta[j];
        row.std_error = std::sqrt(s2 * diag);
        if (j > 0 || x.columns[j] != "Constant")
            row.influence = 2.0 * beta[j];
        if (!res.perfect_fit) {
            row.t_value = beta[j] / row.std_error;
            row.p_value = student_t_two_sided_p(*row.t_value, static_cast<double>(res.df));
        }
        res.rows.push_back(std::move(row));
    }
    return res;
}

inline std::vector<RegressionRow> ols_fit(const DesignMatrix &x, std::span<const double> y) { return ols(x, y).rows; }

// Aligned text table: Term | Influence | Coefficient | Standard Error | T-Value | P-Value.
inline std::string render_table(std::span<const RegressionRow> rows) {
    auto num = [](double v, int decimals) { return format_fixed(v, decimals); };
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Term", "Influence", "Coefficient", "Standard Error", "T-Value", "P-Value"});
    for (const auto &r : rows) {
        cells.push_back({r.term, r.influence ? num(*r.influence, 2) : "", num(r.coefficient, 2), num(r.std_error, 2),
                         r.t_value ? num(*r.t_value, 2) : "", r.p_value ? num(*r.p_value, 3) : ""});
    }
    // Display width in code points (the interaction term contains a multibyte sign).
    auto width = [](const std::string &s) {
        std::size_t w = 0;
        for (unsigned char c : s)
            if ((c & 0xC0) != 0x80)
                ++w;
        return w;
    };
    std::vector<std::size_t> widths(cells.front().size(), 0);
    for (const auto &row : cells)
        for (std::size_t c = 0; c < row.size(); ++c)
            widths[c] = std::max(widths[c], width(row[c]));

    std::ostringstream os;
    auto rule = [&] {
        os << '+';
        for (auto w : widths)
            os << std::string(w + 2, '-') << '+';
        os << '\n';
    };
    rule();
    for (std::size_t r = 0; r < cells.size(); ++r) {
        os << '|';
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            const auto &s = cells[r][c];
            const std::string pad(widths[c] - width(s), ' ');
            if (c == 0)
                os << ' ' << s << pad << " |";
            else
                os << ' ' << pad << s << " |";
        }
        os << '\n';
        if (r == 0)
            rule();
    }
    rule();
    return os.str();
}

} // namespace embb::stats
