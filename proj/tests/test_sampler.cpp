#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "imdm/sampler.hpp"
#include "imdm/stats.hpp"

using namespace imdm;

namespace {

DenoiserConfig small_config(ModelKind kind, int n = 3, int l = 3)
{
    DenoiserConfig c;
    c.kind = kind;
    c.n_data = n;
    c.length = l;
    c.d_embed = 6;
    c.width = 12;
    c.noise.dim = 4;
    return c;
}

// Random weights everywhere; the noise output layer stays as initialized.
DenoiserParams random_model(const DenoiserConfig& c, std::uint64_t seed, double scale = 1.0)
{
    Rng rng(seed);
    auto p = init_params(c, rng);
    const auto layout = p.layout();
    for (const auto& e : layout.entries()) {
        if (e.name == "noise.w2" || e.name == "noise.b2") {
            continue;
        }
        for (std::size_t i = 0; i < e.size; ++i) {
            p.values[e.offset + i] = scale * rng.normal();
        }
    }
    return p;
}

DecodeConfig config_for(const DenoiserParams& p, int steps)
{
    DecodeConfig dc;
    dc.steps = steps;
    dc.mode = p.config.kind;
    dc.length = p.config.length;
    return dc;
}

double encode(const Sequence& s, int n)
{
    double v = 0.0;
    for (int tok : s.tokens) {
        v = v * n + tok;
    }
    return v;
}

}  // namespace

TEST_CASE("one step unmasks every position at once")
{
    const auto p = random_model(small_config(ModelKind::imdm), 1);
    auto dc = config_for(p, 1);
    dc.record_trajectory = true;
    for (std::uint64_t k = 0; k < 50; ++k) {
        const auto r = decode(p, dc, Rng(k));
        REQUIRE(r.trajectory.size() == 1u);
        CHECK(r.trajectory[0].t == 1.0);
        CHECK(r.trajectory[0].s == 0.0);
        CHECK(r.trajectory[0].unmasked.size() == 3u);
        CHECK(r.sequence.length() == 3u);
        for (const auto& e : r.unmask_noise.eps) {
            CHECK(e.size() == 4u);
        }
    }
}

TEST_CASE("conditioned positions are never altered and carry no noise")
{
    const auto p = random_model(small_config(ModelKind::imdm), 2);
    auto dc = config_for(p, 5);
    dc.conditioning = {{1, 2}};
    dc.record_trajectory = true;
    for (std::uint64_t k = 0; k < 100; ++k) {
        const auto r = decode(p, dc, Rng(k));
        CHECK(r.sequence.tokens[1] == 2);
        CHECK(r.initial_noise.eps[1].empty());
        CHECK(r.unmask_noise.eps[1].empty());
        for (const auto& step : r.trajectory) {
            for (int pos : step.masked_before) {
                CHECK(pos != 1);
            }
        }
    }
}

TEST_CASE("invalid decode configurations are rejected")
{
    const auto p = random_model(small_config(ModelKind::mdm), 3);
    auto dc = config_for(p, 0);
    CHECK_THROWS_AS(decode(p, dc, Rng(1)), std::invalid_argument);
    dc = config_for(p, 2);
    dc.mode = ModelKind::imdm;
    CHECK_THROWS_AS(decode(p, dc, Rng(1)), std::invalid_argument);
    dc = config_for(p, 2);
    dc.length = 4;
    CHECK_THROWS_AS(decode(p, dc, Rng(1)), std::invalid_argument);
    dc = config_for(p, 2);
    dc.conditioning = {{0, 3}};
    CHECK_THROWS_AS(decode(p, dc, Rng(1)), std::invalid_argument);
    dc = config_for(p, 2);
    CHECK_THROWS_AS(decode_batch(p, dc, 0, Rng(1)), std::invalid_argument);
}

TEST_CASE("batched decoding matches single trajectories and ignores worker count")
{
    const auto p = random_model(small_config(ModelKind::imdm), 4);
    const auto dc = config_for(p, 4);
    const Rng rng(77);
    const auto one = decode_batch(p, dc, 1, rng);
    CHECK(one[0].sequence == decode(p, dc, rng.split(0)).sequence);

    const auto serial = decode_batch(p, dc, 700, rng, 1);
    const auto threaded = decode_batch(p, dc, 700, rng, 3);
    for (std::size_t k = 0; k < serial.size(); ++k) {
        CHECK(serial[k].sequence == threaded[k].sequence);
        CHECK(serial[k].unmask_noise.eps == threaded[k].unmask_noise.eps);
    }
    CHECK(serial[300].sequence == decode(p, dc, rng.split(300)).sequence);
}

TEST_CASE("zero-init IMDM decodes exactly like its MDM base")
{
    const auto mdm = random_model(small_config(ModelKind::mdm), 5);
    Rng rng(6);
    const auto imdm = imdm_from_mdm(mdm, small_config(ModelKind::imdm).noise, rng);
    const auto dm = config_for(mdm, 3);
    const auto di = config_for(imdm, 3);
    const auto a = decode_batch(mdm, dm, 2000, Rng(9));
    const auto b = decode_batch(imdm, di, 2000, Rng(9));
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].sequence == b[k].sequence);
    }
    // Independent streams: equal in distribution.
    const auto c = decode_batch(imdm, di, 10000, Rng(10));
    const auto d = decode_batch(mdm, dm, 10000, Rng(11));
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < c.size(); ++k) {
        xs.push_back(encode(c[k].sequence, 3));
        ys.push_back(encode(d[k].sequence, 3));
    }
    CHECK(stats::ks_two_sample(xs, ys).p_value > 0.01);
}

TEST_CASE("joint unmasking of a pair scales with the squared unmask probability")
{
    const auto p = random_model(small_config(ModelKind::mdm), 7);
    auto dc = config_for(p, 4);
    dc.record_trajectory = true;
    const Schedule schedule;
    const auto runs = decode_batch(p, dc, 10000, Rng(12));
    for (std::size_t k = 0; k < 3; ++k) {
        std::size_t both_masked = 0, both_unmasked = 0;
        for (const auto& r : runs) {
            const auto& st = r.trajectory[k];
            auto has = [](const std::vector<int>& v, int x) {
                return std::find(v.begin(), v.end(), x) != v.end();
            };
            if (has(st.masked_before, 0) && has(st.masked_before, 2)) {
                ++both_masked;
                both_unmasked += has(st.unmasked, 0) && has(st.unmasked, 2) ? 1 : 0;
            }
        }
        const double t = runs[0].trajectory[k].t, s = runs[0].trajectory[k].s;
        const double a_t = schedule.reverse_alpha(t), a_s = schedule.reverse_alpha(s);
        const double r = (a_s - a_t) / (1.0 - a_t);
        CHECK(stats::binomial_ci(both_unmasked, both_masked, 0.99).contains(r * r));
    }
}

TEST_CASE("unmask times are uniform over the grid and IMDM keeps noise at rate alpha_t / alpha_s")
{
    const auto p = random_model(small_config(ModelKind::imdm, 2, 2), 8);
    auto dc = config_for(p, 5);
    dc.record_trajectory = true;
    const auto runs = decode_batch(p, dc, 8000, Rng(13));
    std::vector<std::size_t> when(5, 0);
    std::vector<std::size_t> kept(5, 0), stayed(5, 0);
    for (const auto& r : runs) {
        for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
            const auto& st = r.trajectory[k];
            for (int pos : st.unmasked) {
                if (pos == 0) {
                    when[k] += 1;
                }
            }
            kept[k] += st.kept.size();
            stayed[k] += st.kept.size() + st.refreshed.size();
            CHECK(st.kept.size() + st.refreshed.size() + st.unmasked.size() == st.masked_before.size());
        }
    }
    // Linear schedule: P(unmask in step k) = alpha_s - alpha_t = 1/5 for every k.
    const std::vector<double> uniform(5, 0.2);
    CHECK(stats::chi_square_gof(when, uniform).p_value > 0.001);
    // Step 0 starts at alpha = 0: every surviving mask is refreshed.
    CHECK(kept[0] == 0u);
    const Schedule schedule;
    for (std::size_t k = 1; k < 4; ++k) {
        const double t = runs[0].trajectory[k].t, s = runs[0].trajectory[k].s;
        const double keep = schedule.reverse_alpha(t) / schedule.reverse_alpha(s);
        CHECK(stats::binomial_ci(kept[k], stayed[k], 0.999).contains(keep));
    }
    CHECK(stayed[4] == 0u);
}
