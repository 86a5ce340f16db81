#include "doctest.h"

#include <cmath>
#include <limits>
#include <numbers>

#include "imdm/core.hpp"
#include "imdm/info.hpp"

using namespace imdm;

namespace {

JointDist random_joint(std::vector<int> dims, Rng& rng, double zero_rate = 0.0)
{
    std::size_t n = 1;
    for (int d : dims) {
        n *= static_cast<std::size_t>(d);
    }
    std::vector<double> w(n);
    for (auto& v : w) {
        v = rng.bernoulli(zero_rate) ? 0.0 : rng.uniform();
    }
    w[0] += 1e-3;
    return JointDist::from_weights(std::move(dims), std::move(w));
}

// Direct double loop over (a, b) cells of a rank-2 table.
double mi_oracle(const JointDist& j)
{
    const int na = j.dims()[0], nb = j.dims()[1];
    std::vector<double> pa(static_cast<std::size_t>(na), 0.0), pb(static_cast<std::size_t>(nb), 0.0);
    for (int a = 0; a < na; ++a) {
        for (int b = 0; b < nb; ++b) {
            const int idx[] = {a, b};
            pa[static_cast<std::size_t>(a)] += j.prob(idx);
            pb[static_cast<std::size_t>(b)] += j.prob(idx);
        }
    }
    double mi = 0.0;
    for (int a = 0; a < na; ++a) {
        for (int b = 0; b < nb; ++b) {
            const int idx[] = {a, b};
            const double p = j.prob(idx);
            if (p > 0.0) {
                mi += p * std::log(p / (pa[static_cast<std::size_t>(a)] * pb[static_cast<std::size_t>(b)]));
            }
        }
    }
    return mi;
}

}  // namespace

TEST_CASE("joint table validation and indexing")
{
    CHECK_THROWS_AS(JointDist({2}, {0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(JointDist({2}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(JointDist({2}, {-0.5, 1.5}), std::invalid_argument);
    CHECK_THROWS_AS(JointDist({}, {}), std::invalid_argument);
    const int big[] = {1000, 1001};
    CHECK_THROWS_AS(JointDist::checked_size(big), CapacityError);
    const int ok[] = {1000, 1000};
    CHECK(JointDist::checked_size(ok) == 1'000'000u);

    Rng rng(3);
    const JointDist j = random_joint({2, 3, 4}, rng);
    for (std::size_t f = 0; f < j.size(); ++f) {
        CHECK(j.flat_index(j.unravel(f)) == f);
    }
    const int idx[] = {1, 2, 3};
    CHECK(j.flat_index(idx) == 23u);  // lexicographic: 1*12 + 2*4 + 3

    const int axes[] = {2, 0};
    const JointDist m = j.marginal(axes);
    CHECK(m.dims()[0] == 4);
    CHECK(m.dims()[1] == 2);
    for (int c = 0; c < 4; ++c) {
        for (int a = 0; a < 2; ++a) {
            double sum = 0.0;
            for (int b = 0; b < 3; ++b) {
                const int full[] = {a, b, c};
                sum += j.prob(full);
            }
            const int mi[] = {c, a};
            CHECK(m.prob(mi) == doctest::Approx(sum).epsilon(1e-14));
        }
    }
}

TEST_CASE("entropy and divergence closed forms")
{
    const double u4[] = {0.25, 0.25, 0.25, 0.25};
    CHECK(entropy(u4) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    const double delta[] = {0.0, 1.0, 0.0};
    CHECK(entropy(delta) == 0.0);
    const double p[] = {0.5, 0.5}, q[] = {1.0, 0.0};
    CHECK(kl_divergence(p, p) == 0.0);
    CHECK(std::isinf(kl_divergence(p, q)));
    CHECK(kl_divergence(q, p) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("mutual information of a copied bit is ln 2")
{
    const JointDist copy({2, 2}, {0.5, 0.0, 0.0, 0.5});
    const int a[] = {0}, b[] = {1};
    CHECK(std::abs(mutual_information(copy, a, b) - std::numbers::ln2) < 1e-15);
    CHECK(std::abs(total_correlation(copy) - std::numbers::ln2) < 1e-15);
    const JointDist indep({2, 2}, {0.25, 0.25, 0.25, 0.25});
    CHECK(std::abs(mutual_information(indep, a, b)) < 1e-15);
}

TEST_CASE("information measures agree with direct summation")
{
    Rng rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int na = 2 + static_cast<int>(rng.below(3)), nb = 2 + static_cast<int>(rng.below(3));
        const JointDist j = random_joint({na, nb}, rng, 0.2);
        const int a[] = {0}, b[] = {1};
        CHECK(std::abs(mutual_information(j, a, b) - mi_oracle(j)) < 1e-12);

        // I(A;B|C) = sum_c p(c) I(A;B | C=c), from explicit slices.
        const int nc = 2 + static_cast<int>(rng.below(2));
        const JointDist abc = random_joint({na, nb, nc}, rng, 0.2);
        double cmi = 0.0;
        for (int c = 0; c < nc; ++c) {
            std::vector<double> slice;
            double pc = 0.0;
            for (int x = 0; x < na; ++x) {
                for (int y = 0; y < nb; ++y) {
                    const int idx[] = {x, y, c};
                    slice.push_back(abc.prob(idx));
                    pc += abc.prob(idx);
                }
            }
            if (pc > 0.0) {
                cmi += pc * mi_oracle(JointDist::from_weights({na, nb}, slice));
            }
        }
        const int cc[] = {2};
        CHECK(std::abs(conditional_mutual_information(abc, a, b, cc) - cmi) < 1e-12);

        // Total correlation = sum of marginal entropies - joint entropy.
        double h = 0.0;
        for (int axis = 0; axis < 3; ++axis) {
            const int ax[] = {axis};
            h += entropy(abc.marginal(ax));
        }
        CHECK(std::abs(total_correlation(abc) - (h - entropy(abc))) < 1e-12);
        CHECK(total_correlation(abc) >= -1e-12);
    }
}
