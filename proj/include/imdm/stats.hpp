#pragma once

#include <cstddef>
#include <span>

// Small hypothesis-testing helpers for the statistical property checks.
namespace imdm::stats {

struct TestResult {
    double statistic = 0.0;
    double p_value = 1.0;
};

// Two-sample Kolmogorov-Smirnov test with the asymptotic Kolmogorov p-value.
TestResult ks_two_sample(std::span<const double> a, std::span<const double> b);

// Kolmogorov survival function Q(lambda) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 lambda^2).
double kolmogorov_q(double lambda);

// Pearson goodness of fit of counts against expected probabilities.
TestResult chi_square_gof(std::span<const std::size_t> counts, std::span<const double> probs);

struct Interval {
    double lo = 0.0;
    double hi = 1.0;
    bool contains(double x) const { return x >= lo && x <= hi; }
};

// Two-sided Clopper-Pearson interval for a binomial proportion.
Interval binomial_ci(std::size_t successes, std::size_t trials, double confidence);

}  // namespace imdm::stats
