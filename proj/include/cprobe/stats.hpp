#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

namespace cprobe::stats {

// Neumaier-compensated accumulator. All reductions in the engine go through it.
class KahanSum {
public:
    KahanSum& add(double x) noexcept {
        const double t = sum_ + x;
        if (std::abs(sum_) >= std::abs(x)) {
            carry_ += (sum_ - t) + x;
        } else {
            carry_ += (x - t) + sum_;
        }
        sum_ = t;
        return *this;
    }
    KahanSum& operator+=(double x) noexcept { return add(x); }
    double value() const noexcept { return sum_ + carry_; }

private:
    double sum_ = 0.0;
    double carry_ = 0.0;
};

double sum(std::span<const double> xs) noexcept;
double mean(std::span<const double> xs);

// p-values smaller than this are reported as 0 with `p_underflow` set.
inline constexpr double kPValueFloor = 1e-300;

struct PValue {
    double value = 1.0;
    bool underflow = false;
};

struct CorrelationResult {
    double r = 0.0;
    double p = 1.0;
    std::size_t n = 0;
    bool p_underflow = false;
};

struct OlsResult {
    double slope = 0.0;
    double intercept = 0.0;
    double r_squared = 0.0;
    // Undefined when y is constant (no variation to explain).
    std::optional<double> p_slope;
    std::size_t n = 0;
    bool p_underflow = false;
};

// Two-sided P(|T| >= |t|) for Student's t with `df` degrees of freedom.
// df may be fractional but must be >= 1.
PValue student_t_two_sided(double t, double df);
double student_t_sf(double t, double df);

// p-value for a sample correlation r over n points, t = r sqrt((n-2)/(1-r^2)).
PValue correlation_p_value(double r, std::size_t n);

// Sample Pearson correlation. Throws ZeroVarianceError for a constant series
// and InvalidArgument for mismatched lengths or n < 3.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y);

// Simple least squares y = slope * x + intercept.
OlsResult ols(std::span<const double> x, std::span<const double> y);

// Pearson correlation of mid-ranks.
double spearman(std::span<const double> x, std::span<const double> y);

// 1-based mid-ranks (ties share the mean of the positions they occupy).
void mid_ranks(std::span<const double> xs, std::span<double> out);

}  // namespace cprobe::stats
