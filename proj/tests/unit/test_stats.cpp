#include <cmath>
#include <vector>

#include "doctest.h"

#include "cprobe/error.hpp"
#include "cprobe/random.hpp"
#include "cprobe/stats.hpp"
#include "oracles.hpp"

using namespace cprobe;

namespace {

std::vector<double> noisy_line(Rng& rng, std::size_t n, double slope, double noise, std::vector<double>& x) {
    x.resize(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.uniform(-3, 3);
        y[i] = slope * x[i] + 0.7 + noise * rng.normal();
    }
    return y;
}

}  // namespace

TEST_CASE("KahanSum recovers small terms lost by naive summation") {
    stats::KahanSum s;
    s.add(1e16).add(1.0).add(-1e16);
    CHECK(s.value() == 1.0);
    const std::vector<double> xs{0.1, 0.2, 0.3};
    CHECK(stats::mean(xs) == doctest::Approx(0.2).epsilon(1e-15));
    CHECK_THROWS_AS(stats::mean(std::vector<double>{}), InvalidArgument);
}

TEST_CASE("pearson on exact lines") {
    const std::vector<double> x{1, 2, 3, 4, 5};
    std::vector<double> y;
    for (double v : x) y.push_back(2 * v + 1);
    CHECK(stats::pearson(x, y).r == doctest::Approx(1.0).epsilon(1e-14));

    const std::vector<double> a{1, 2, 3}, b{6, 4, 2};
    const auto res = stats::pearson(a, b);
    CHECK(res.r == doctest::Approx(-1.0).epsilon(1e-14));
    CHECK(res.p == doctest::Approx(0.0));
}

TEST_CASE("pearson matches the textbook formula on random fixtures") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x;
        const auto y = noisy_line(rng, 25, rng.uniform(-2, 2), 1.0, x);
        const auto res = stats::pearson(x, y);
        CHECK(std::abs(res.r - oracle::pearson_r(x, y)) < 1e-12);
        CHECK(res.n == 25);
        const double t = res.r * std::sqrt(23.0 / (1 - res.r * res.r));
        CHECK(std::abs(res.p - oracle::t_two_sided(t, 23)) < 1e-10);
    }
}

TEST_CASE("pearson rejects degenerate input") {
    const std::vector<double> x{1, 2, 3}, c{4, 4, 4};
    CHECK_THROWS_AS(stats::pearson(x, c), ZeroVarianceError);
    CHECK_THROWS_AS(stats::pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2}), InvalidArgument);
    CHECK_THROWS_AS(stats::pearson(x, std::vector<double>{1, 2}), InvalidArgument);
}

TEST_CASE("ols on an exact line and on a constant response") {
    const std::vector<double> x{1, 2, 3, 4, 5, 6};
    std::vector<double> y;
    for (double v : x) y.push_back(-1.048 * v + 3.0);
    const auto fit = stats::ols(x, y);
    CHECK(fit.slope == doctest::Approx(-1.048).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(fit.r_squared == doctest::Approx(1.0).epsilon(1e-12));

    const std::vector<double> flat(6, 2.5);
    const auto f2 = stats::ols(x, flat);
    CHECK(f2.slope == 0.0);
    CHECK(f2.r_squared == 0.0);
    CHECK_FALSE(f2.p_slope.has_value());

    CHECK_THROWS_AS(stats::ols(std::vector<double>{2, 2, 2}, std::vector<double>{1, 2, 3}), ZeroVarianceError);
}

TEST_CASE("ols matches the normal-equations oracle") {
    Rng rng(12);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> x;
        const auto y = noisy_line(rng, 12, rng.uniform(-2, 2), 0.8, x);
        const auto fit = stats::ols(x, y);
        const auto ref = oracle::ols(x, y);
        CHECK(std::abs(fit.slope - ref.slope) < 1e-10);
        CHECK(std::abs(fit.intercept - ref.intercept) < 1e-10);
        CHECK(std::abs(fit.r_squared - ref.r_squared) < 1e-10);
        REQUIRE(fit.p_slope.has_value());
        CHECK(std::abs(*fit.p_slope - *ref.p) < 1e-10);
    }
}

TEST_CASE("student t tail") {
    CHECK(stats::student_t_two_sided(0.0, 7).value == doctest::Approx(1.0));
    CHECK(stats::student_t_two_sided(1e300, 7).value < 1e-300);
    CHECK(std::abs(stats::student_t_two_sided(2.086, 20).value - 0.05) < 5e-4);
    CHECK(std::abs(stats::student_t_two_sided(2.086, 20).value - oracle::t_two_sided_quadrature(2.086, 20)) < 1e-9);
    CHECK(stats::student_t_sf(0.0, 3) == 1.0);
    CHECK_THROWS_AS(stats::student_t_two_sided(1.0, 0.5), InvalidArgument);

    for (int df = 1; df <= 40; ++df) {
        for (double t : {0.1, 0.7, 1.5, 2.5, 4.0, 9.0}) {
            CHECK(std::abs(stats::student_t_two_sided(t, df).value - oracle::t_two_sided(t, df)) < 1e-12);
            CHECK(stats::student_t_two_sided(-t, df).value == stats::student_t_two_sided(t, df).value);
        }
    }
    CHECK(std::abs(stats::student_t_two_sided(1.3, 6.5).value - oracle::t_two_sided_quadrature(1.3, 6.5)) < 1e-9);
}

TEST_CASE("spearman and mid-ranks") {
    const std::vector<double> x{1, 2, 3, 4, 5}, up{2, 4, 8, 16, 32}, down{5, 3, 1, 0, -9};
    CHECK(stats::spearman(x, up) == doctest::Approx(1.0));
    CHECK(stats::spearman(x, down) == doctest::Approx(-1.0));

    const std::vector<double> tied{3, 1, 3, 2, 3, 1};
    std::vector<double> r(tied.size());
    stats::mid_ranks(tied, r);
    CHECK(r == oracle::ranks(tied));

    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> a(15), b(15);
        for (std::size_t i = 0; i < a.size(); ++i) {
            a[i] = static_cast<double>(rng.below(5));
            b[i] = static_cast<double>(rng.below(4)) + 0.5 * a[i];
        }
        CHECK(std::abs(stats::spearman(a, b) - oracle::spearman(a, b)) < 1e-12);
    }
}
