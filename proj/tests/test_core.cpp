#include "doctest.h"

#include <cmath>
#include <set>

#include "imdm/core.hpp"

using namespace imdm;

TEST_CASE("alpha_at: clipped linear schedule")
{
    Schedule sched(1e-4);
    CHECK(sched.alpha_at(0.0).alpha == doctest::Approx(0.9999).epsilon(1e-15));
    CHECK(sched.alpha_at(1.0).alpha == doctest::Approx(0.0001).epsilon(1e-15));
    auto mid = sched.alpha_at(0.3);
    CHECK(mid.alpha == doctest::Approx(0.7).epsilon(1e-15));
    CHECK(mid.alpha_prime == -1.0);
    CHECK_THROWS_AS(sched.alpha_at(-0.01), std::domain_error);
    CHECK_THROWS_AS(sched.alpha_at(1.01), std::domain_error);
    CHECK_THROWS_AS(sched.alpha_at(std::nan("")), std::domain_error);
}

TEST_CASE("alpha_at: monotone and derivative matches central differences")
{
    Schedule sched(1e-4);
    Rng rng(7);
    for (int i = 0; i < 1000; ++i) {
        double a = rng.uniform(), b = rng.uniform();
        double s = std::min(a, b), t = std::max(a, b);
        CHECK(sched.alpha(s) >= sched.alpha(t));
        CHECK(sched.alpha_at(t).alpha_prime <= 0.0);
        CHECK(sched.alpha(t) >= 1e-4);
        CHECK(sched.alpha(t) <= 1.0 - 1e-4);
    }
    const double h = 1e-6;
    for (double t : {0.05, 0.2, 0.5, 0.77, 0.95}) {
        double fd = (sched.alpha(t + h) - sched.alpha(t - h)) / (2 * h);
        CHECK(std::abs(fd - sched.alpha_at(t).alpha_prime) <= 1e-6);
    }
}

TEST_CASE("reverse_alpha uses unclipped endpoints")
{
    Schedule sched(1e-4);
    CHECK(sched.reverse_alpha(1.0) == 0.0);
    CHECK(sched.reverse_alpha(0.0) == 1.0);
    CHECK(sched.reverse_alpha(0.25) == doctest::Approx(0.75));
}

TEST_CASE("make_grid")
{
    auto g1 = make_grid(1);
    REQUIRE(g1.knots().size() == 2);
    CHECK(g1[0] == 1.0);
    CHECK(g1[1] == 0.0);
    auto g2 = make_grid(2);
    CHECK(g2[1] == 0.5);
    auto g4 = make_grid(4);
    std::vector<double> want{1.0, 0.75, 0.5, 0.25, 0.0};
    for (std::size_t k = 0; k < want.size(); ++k) {
        CHECK(g4[k] == want[k]);
    }
    auto g7 = make_grid(7);
    for (std::size_t k = 1; k < g7.knots().size(); ++k) {
        CHECK(g7[k] < g7[k - 1]);
    }
    CHECK_THROWS_AS(make_grid(0), std::invalid_argument);
}

TEST_CASE("philox known-answer vectors")
{
    auto a = philox4x32_10({0, 0, 0, 0}, {0, 0});
    CHECK(a == std::array<std::uint32_t, 4>{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    auto b = philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu},
                           {0xffffffffu, 0xffffffffu});
    CHECK(b == std::array<std::uint32_t, 4>{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    auto c = philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u},
                           {0xa4093822u, 0x299f31d0u});
    CHECK(c == std::array<std::uint32_t, 4>{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("Rng: reproducible streams and split children")
{
    Rng a(42, 3), b(42, 3);
    for (int i = 0; i < 10000; ++i) {
        REQUIRE(a() == b());
    }
    Rng parent(42, 3);
    Rng c0 = parent.split(0), c1 = parent.split(1);
    std::set<std::uint64_t> firsts;
    Rng p2(42, 3);
    firsts.insert(p2());
    firsts.insert(c0());
    firsts.insert(c1());
    CHECK(firsts.size() == 3);
    CHECK(parent.split(5).stream() == Rng(42, 3).split(5).stream());
    CHECK(c0.stream() != parent.stream());
    CHECK(c0.stream() != c1.stream());
}

TEST_CASE("Rng: draw ranges and rough moments")
{
    Rng rng(1);
    double sum = 0.0, sq = 0.0;
    const int n = 200000;
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
    sum = 0.0;
    for (int i = 0; i < n; ++i) {
        double z = rng.normal();
        sum += z;
        sq += z * z;
    }
    CHECK(std::abs(sum / n) < 0.01);
    CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
    std::vector<int> counts(3, 0);
    std::vector<double> probs{0.2, 0.5, 0.3};
    for (int i = 0; i < n; ++i) {
        counts[rng.categorical(probs)]++;
    }
    for (int k = 0; k < 3; ++k) {
        CHECK(counts[k] / double(n) == doctest::Approx(probs[k]).epsilon(0.02));
    }
    for (int i = 0; i < 1000; ++i) {
        REQUIRE(rng.below(7) < 7);
    }
}

TEST_CASE("Categorical validation")
{
    CHECK_NOTHROW(Categorical({0.25, 0.75}));
    CHECK_THROWS_AS(Categorical({0.5, 0.6}), std::invalid_argument);
    CHECK_THROWS_AS(Categorical({-0.1, 1.1}), std::invalid_argument);
    CHECK_THROWS_AS(Categorical(std::vector<double>{}), std::invalid_argument);
    auto c = Categorical::from_weights({1.0, 3.0});
    CHECK(c[1] == doctest::Approx(0.75));
    CHECK_THROWS_AS(Categorical::from_weights({0.0, 0.0}), std::invalid_argument);
}

TEST_CASE("Vocabulary and sequences")
{
    CHECK_THROWS_AS(Vocabulary(1, true), std::invalid_argument);
    Vocabulary v(3, true);
    CHECK(v.size() == 4);
    CHECK(v.mask_index() == 3);
    CHECK_FALSE(v.is_data(v.mask_index()));
    CHECK_THROWS(Vocabulary(3, false).mask_index());
    CHECK_NOTHROW(validate_sequence({{0, 2, 1}}, v));
    CHECK_THROWS_AS(validate_sequence({{0, 3}}, v), std::invalid_argument);
    auto z = LatentSequence::fully_masked(3);
    CHECK(z.masked_count() == 3);
}
