#include "imdm/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>

namespace imdm::stats {

double kolmogorov_q(double lambda)
{
    if (lambda < 1e-3) {
        return 1.0;
    }
    double sum = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
        sum += term;
        if (std::abs(term) < 1e-16 * std::abs(sum)) {
            break;
        }
        sign = -sign;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

TestResult ks_two_sample(std::span<const double> a, std::span<const double> b)
{
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("ks_two_sample: empty sample");
    }
    std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const double nx = static_cast<double>(x.size()), ny = static_cast<double>(y.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    // Step both empirical CDFs past each distinct value (ties advance together).
    while (i < x.size() && j < y.size()) {
        const double v = std::min(x[i], y[j]);
        while (i < x.size() && x[i] == v) {
            ++i;
        }
        while (j < y.size() && y[j] == v) {
            ++j;
        }
        d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
    }
    const double ne = nx * ny / (nx + ny);
    const double sq = std::sqrt(ne);
    return {d, kolmogorov_q((sq + 0.12 + 0.11 / sq) * d)};
}

TestResult chi_square_gof(std::span<const std::size_t> counts, std::span<const double> probs)
{
    if (counts.size() != probs.size() || counts.size() < 2) {
        throw std::invalid_argument("chi_square_gof: need matching counts and probabilities");
    }
    double n = 0.0;
    for (auto c : counts) {
        n += static_cast<double>(c);
    }
    double stat = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) {
        const double expected = n * probs[k];
        if (!(expected > 0.0)) {
            throw std::invalid_argument("chi_square_gof: zero expected count");
        }
        const double diff = static_cast<double>(counts[k]) - expected;
        stat += diff * diff / expected;
    }
    boost::math::chi_squared dist(static_cast<double>(counts.size() - 1));
    return {stat, boost::math::cdf(boost::math::complement(dist, stat))};
}

Interval binomial_ci(std::size_t successes, std::size_t trials, double confidence)
{
    if (trials == 0 || successes > trials || !(confidence > 0.0 && confidence < 1.0)) {
        throw std::invalid_argument("binomial_ci: invalid arguments");
    }
    using boost::math::binomial_distribution;
    const double alpha = (1.0 - confidence) / 2.0;
    const auto n = static_cast<double>(trials), k = static_cast<double>(successes);
    return {binomial_distribution<>::find_lower_bound_on_p(n, k, alpha),
            binomial_distribution<>::find_upper_bound_on_p(n, k, alpha)};
}

}  // namespace imdm::stats
