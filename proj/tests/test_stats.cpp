#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "imdm/rng.hpp"
#include "imdm/stats.hpp"

using namespace imdm;
using namespace imdm::stats;

TEST_CASE("Kolmogorov survival function at tabulated points")
{
    // Q(lambda) = 2 sum (-1)^{k-1} exp(-2 k^2 lambda^2), summed directly.
    auto series = [](double l) {
        double s = 0.0;
        for (int k = 1; k <= 100; ++k) {
            s += (k % 2 == 1 ? 2.0 : -2.0) * std::exp(-2.0 * k * k * l * l);
        }
        return s;
    };
    for (double l : {0.5, 0.8, 1.0, 1.36, 1.63, 2.0}) {
        CHECK(kolmogorov_q(l) == doctest::Approx(series(l)).epsilon(1e-12));
    }
    CHECK(kolmogorov_q(1.36) == doctest::Approx(0.0494).epsilon(2e-3));
    CHECK(kolmogorov_q(0.0) == 1.0);
}

TEST_CASE("two-sample KS")
{
    Rng rng(5);
    std::vector<double> a(4000), b(4000), c(4000);
    for (std::size_t i = 0; i < a.size(); ++i) {
        a[i] = rng.normal();
        b[i] = rng.normal();
        c[i] = rng.normal() + 0.3;
    }
    const auto same = ks_two_sample(a, a);
    CHECK(same.statistic == 0.0);
    CHECK(same.p_value == 1.0);
    CHECK(ks_two_sample(a, b).p_value > 0.001);
    CHECK(ks_two_sample(a, c).p_value < 1e-6);

    // Ties: identical discrete samples give D = 0.
    const std::vector<double> d1 = {0, 0, 1, 1, 2}, d2 = {2, 1, 1, 0, 0};
    CHECK(ks_two_sample(d1, d2).statistic == 0.0);
    const std::vector<double> e1 = {0, 0, 0, 0}, e2 = {1, 1, 1, 1};
    CHECK(ks_two_sample(e1, e2).statistic == 1.0);
    CHECK_THROWS_AS(ks_two_sample({}, d1), std::invalid_argument);
}

TEST_CASE("chi-square goodness of fit")
{
    const std::size_t exact[] = {25, 25, 50};
    const double p[] = {0.25, 0.25, 0.5};
    const auto r = chi_square_gof(exact, p);
    CHECK(r.statistic == 0.0);
    CHECK(r.p_value == doctest::Approx(1.0));

    // (10-15)^2/15 + (20-15)^2/15 = 10/3; chi2(1) survival = erfc(sqrt(x/2)).
    const std::size_t counts[] = {10, 20};
    const double half[] = {0.5, 0.5};
    const auto r2 = chi_square_gof(counts, half);
    CHECK(r2.statistic == doctest::Approx(10.0 / 3.0).epsilon(1e-14));
    CHECK(r2.p_value == doctest::Approx(std::erfc(std::sqrt(10.0 / 6.0))).epsilon(1e-10));

    const double zero[] = {1.0, 0.0};
    CHECK_THROWS_AS(chi_square_gof(counts, zero), std::invalid_argument);
}

TEST_CASE("Clopper-Pearson closed forms at the boundary")
{
    // k = 0: upper = 1 - (a/2)^(1/n); k = n: lower = (a/2)^(1/n).
    const double a = 0.05;
    const auto zero = binomial_ci(0, 10, 0.95);
    CHECK(zero.lo == 0.0);
    CHECK(zero.hi == doctest::Approx(1.0 - std::pow(a / 2, 0.1)).epsilon(1e-10));
    const auto all = binomial_ci(10, 10, 0.95);
    CHECK(all.lo == doctest::Approx(std::pow(a / 2, 0.1)).epsilon(1e-10));
    CHECK(all.hi == 1.0);
    const auto mid = binomial_ci(500, 1000, 0.99);
    CHECK(mid.contains(0.5));
    CHECK(mid.lo > 0.45);
    CHECK(mid.hi < 0.55);
    CHECK_THROWS_AS(binomial_ci(3, 2, 0.95), std::invalid_argument);
}

TEST_CASE("Clopper-Pearson coverage is at least nominal")
{
    Rng rng(9);
    const double p = 0.3;
    int covered = 0;
    const int trials = 2000;
    for (int t = 0; t < trials; ++t) {
        std::size_t k = 0;
        for (int i = 0; i < 50; ++i) {
            k += rng.bernoulli(p) ? 1 : 0;
        }
        covered += binomial_ci(k, 50, 0.9).contains(p) ? 1 : 0;
    }
    // Conservative interval: coverage >= 0.9 up to sampling error (sd ~ 0.0067).
    CHECK(static_cast<double>(covered) / trials > 0.88);
}
