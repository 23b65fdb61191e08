#include "cprobe/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <fmt/format.h>

#include "cprobe/error.hpp"

namespace cprobe::stats {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y, const char* what) {
    if (x.size() != y.size()) {
        throw InvalidArgument(fmt::format("{}: series lengths differ ({} vs {})", what, x.size(), y.size()));
    }
    if (x.size() < 3) {
        throw InvalidArgument(fmt::format("{}: need at least 3 points, got {}", what, x.size()));
    }
}

struct Moments {
    double mean_x, mean_y, sxx, syy, sxy;
};

// Two-pass centered moments.
Moments centered_moments(std::span<const double> x, std::span<const double> y) {
    const double mx = mean(x);
    const double my = mean(y);
    KahanSum sxx, syy, sxy;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    return {mx, my, sxx.value(), syy.value(), sxy.value()};
}

}  // namespace

double sum(std::span<const double> xs) noexcept {
    KahanSum acc;
    for (double x : xs) acc += x;
    return acc.value();
}

double mean(std::span<const double> xs) {
    if (xs.empty()) throw InvalidArgument("mean of an empty series");
    return sum(xs) / static_cast<double>(xs.size());
}

PValue student_t_two_sided(double t, double df) {
    if (!(df >= 1.0)) throw InvalidArgument(fmt::format("student t: df must be >= 1, got {}", df));
    if (std::isnan(t)) throw InvalidArgument("student t: t is NaN");
    if (std::isinf(t)) return {0.0, false};
    if (t == 0.0) return {1.0, false};
    // P(|T| >= |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    const double x = df / (df + t * t);
    double p = boost::math::ibeta(df / 2.0, 0.5, x);
    p = std::clamp(p, 0.0, 1.0);
    if (p < kPValueFloor) return {0.0, true};
    return {p, false};
}

double student_t_sf(double t, double df) { return student_t_two_sided(t, df).value; }

PValue correlation_p_value(double r, std::size_t n) {
    if (n < 3) throw InvalidArgument("correlation p-value needs n >= 3");
    const double df = static_cast<double>(n - 2);
    const double one_minus = 1.0 - r * r;
    if (one_minus <= 0.0) return {0.0, false};
    const double t = r * std::sqrt(df / one_minus);
    return student_t_two_sided(t, df);
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, "pearson");
    const Moments m = centered_moments(x, y);
    if (m.sxx <= 0.0 || m.syy <= 0.0) {
        throw ZeroVarianceError("pearson: zero variance in one of the series");
    }
    const double r = std::clamp(m.sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0);
    const PValue p = correlation_p_value(r, x.size());
    return {r, p.value, x.size(), p.underflow};
}

OlsResult ols(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, "ols");
    const Moments m = centered_moments(x, y);
    if (m.sxx <= 0.0) throw ZeroVarianceError("ols: regressor is constant");

    OlsResult out;
    out.n = x.size();
    out.slope = m.sxy / m.sxx;
    out.intercept = m.mean_y - out.slope * m.mean_x;
    if (m.syy <= 0.0) {
        out.slope = 0.0;
        out.intercept = m.mean_y;
        out.r_squared = 0.0;
        return out;
    }
    const double r = std::clamp(m.sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0);
    out.r_squared = r * r;
    const PValue p = correlation_p_value(r, x.size());
    out.p_slope = p.value;
    out.p_underflow = p.underflow;
    return out;
}

void mid_ranks(std::span<const double> xs, std::span<double> out) {
    const std::size_t n = xs.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && xs[order[j]] == xs[order[i]]) ++j;
        // positions i..j-1 (0-based) -> ranks i+1..j
        const double rank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) out[order[k]] = rank;
        i = j;
    }
}

double spearman(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, "spearman");
    std::vector<double> rx(x.size()), ry(y.size());
    mid_ranks(x, rx);
    mid_ranks(y, ry);
    return pearson(rx, ry).r;
}

}  // namespace cprobe::stats
