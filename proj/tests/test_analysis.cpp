#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <boost/multiprecision/cpp_int.hpp>

#include "imdm/analysis.hpp"
#include "imdm/kernels.hpp"
#include "imdm/sampler.hpp"
#include "imdm/training.hpp"

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
    w[n - 1] += 1e-3;
    return JointDist::from_weights(std::move(dims), std::move(w));
}

Categorical random_categorical(std::size_t n, Rng& rng)
{
    std::vector<double> w(n);
    for (auto& v : w) {
        v = rng.uniform() + 1e-3;
    }
    return Categorical::from_weights(std::move(w));
}

DenoiserConfig small_config(ModelKind kind, int n = 2, int l = 2)
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

DenoiserParams random_model(const DenoiserConfig& c, std::uint64_t seed, bool noise_output = false)
{
    Rng rng(seed);
    auto p = init_params(c, rng);
    const auto layout = p.layout();
    for (const auto& e : layout.entries()) {
        if (!noise_output && (e.name == "noise.w2" || e.name == "noise.b2")) {
            continue;
        }
        for (std::size_t i = 0; i < e.size; ++i) {
            p.values[e.offset + i] = rng.normal();
        }
    }
    return p;
}

// p(z_s, z_t) from per-position forward marginals and general posteriors.
std::map<std::pair<std::vector<int>, std::vector<int>>, double>
kernel_oracle(const JointDist& data, double a_s, double a_t)
{
    const int N = data.dims()[0];
    const auto L = static_cast<std::size_t>(data.rank());
    const auto prior = kernels::PriorSpec::mask_absorbing(N);
    std::map<std::pair<std::vector<int>, std::vector<int>>, double> out;
    const std::vector<int> dims(L, N + 1);
    const std::size_t n_ext = JointDist::checked_size(dims);
    const JointDist shape(dims, std::vector<double>(n_ext, 1.0 / static_cast<double>(n_ext)));
    for (std::size_t xf = 0; xf < data.size(); ++xf) {
        const auto x = data.unravel(xf);
        for (std::size_t zt = 0; zt < shape.size(); ++zt) {
            const auto z_t = shape.unravel(zt);
            double pt = data[xf];
            for (std::size_t l = 0; l < L; ++l) {
                pt *= kernels::forward_marginal(x[l], a_t, prior)[static_cast<std::size_t>(z_t[l])];
            }
            if (pt == 0.0) {
                continue;
            }
            for (std::size_t zs = 0; zs < shape.size(); ++zs) {
                const auto z_s = shape.unravel(zs);
                double p = pt;
                for (std::size_t l = 0; l < L; ++l) {
                    p *= kernels::posterior_general(z_t[l], x[l], a_s, a_t, prior)[static_cast<std::size_t>(z_s[l])];
                }
                if (p > 0.0) {
                    out[{z_t, z_s}] += p;
                }
            }
        }
    }
    return out;
}

const JointDist kPair({2, 2}, {0.5, 0.0, 0.0, 0.5});

}  // namespace

TEST_CASE("validity and token entropy examples")
{
    const std::vector<Sequence> valid = {Sequence{{0, 0}}, Sequence{{1, 1}}};
    CHECK(validity(valid) == 1.0);
    const std::vector<Sequence> half = {Sequence{{0, 0}}, Sequence{{0, 1}}};
    CHECK(validity(half) == 0.5);
    CHECK(validity(half, [](const Sequence& s) { return s.tokens[0] == 0; }) == 1.0);
    CHECK_THROWS_AS(validity({}), std::invalid_argument);

    const std::vector<Sequence> same = {Sequence{{1, 1}}, Sequence{{1, 1}}};
    CHECK(token_entropy(same, 2) == 0.0);
    CHECK(std::abs(token_entropy(valid, 2) - std::numbers::ln2) < 1e-15);
    const std::vector<Sequence> four = {Sequence{{0, 1}}, Sequence{{2, 3}}};
    CHECK(std::abs(token_entropy(four, 4) - std::log(4.0)) < 1e-15);

    // i.i.d. uniform pairs: validity near 1/2.
    Rng rng(3);
    std::vector<Sequence> iid;
    for (int k = 0; k < 20000; ++k) {
        iid.push_back(Sequence{{static_cast<int>(rng.below(2)), static_cast<int>(rng.below(2))}});
    }
    CHECK(std::abs(validity(iid) - 0.5) < 0.015);
}

TEST_CASE("one-step model joint and factorization error examples")
{
    // All-zero weights: uniform logits at every position.
    Rng init(1);
    auto mdm = init_params(small_config(ModelKind::mdm), init);
    std::fill(mdm.values.begin(), mdm.values.end(), 0.0);
    const JointDist j = onestep_model_joint(mdm, 1, Rng(2));
    for (std::size_t f = 0; f < 4; ++f) {
        CHECK(j[f] == 0.25);
    }
    CHECK(std::abs(factorization_error(mdm, kPair, 1, Rng(2)) - std::numbers::ln2) < 1e-15);
    const JointDist uniform({2, 2}, {0.25, 0.25, 0.25, 0.25});
    CHECK(factorization_error(mdm, uniform, 1, Rng(2)) == 0.0);

    // Zero-init IMDM reproduces its base joint exactly.
    const auto base = random_model(small_config(ModelKind::mdm, 3, 2), 4);
    Rng rng(5);
    const auto imdm = imdm_from_mdm(base, small_config(ModelKind::imdm).noise, rng);
    const JointDist jb = onestep_model_joint(base, 1, Rng(6));
    const JointDist ji = onestep_model_joint(imdm, 300, Rng(6));
    for (std::size_t f = 0; f < jb.size(); ++f) {
        CHECK(std::abs(jb[f] - ji[f]) <= 1e-15);
    }
}

TEST_CASE("noise-averaged joint matches the one-step sampling histogram")
{
    const auto model = random_model(small_config(ModelKind::imdm, 2, 2), 7, true);
    const JointDist joint = onestep_model_joint(model, 20000, Rng(8));
    DecodeConfig dc;
    dc.mode = ModelKind::imdm;
    const auto runs = decode_batch(model, dc, 20000, Rng(9));
    std::vector<double> hist(4, 0.0);
    for (const auto& r : runs) {
        hist[static_cast<std::size_t>(r.sequence.tokens[0] * 2 + r.sequence.tokens[1])] += 1.0 / 20000;
    }
    double tv = 0.0;
    for (std::size_t f = 0; f < 4; ++f) {
        tv += 0.5 * std::abs(hist[f] - joint[f]);
    }
    CHECK(tv <= 0.02);
    // The noise actually matters for this model.
    const JointDist one = onestep_model_joint(model, 1, Rng(8));
    double gap = 0.0;
    for (std::size_t f = 0; f < 4; ++f) {
        gap += std::abs(one[f] - joint[f]);
    }
    CHECK(gap > 0.01);
}

TEST_CASE("reverse contexts agree with the per-position kernel oracle")
{
    Rng rng(10);
    const Schedule schedule;
    for (int trial = 0; trial < 20; ++trial) {
        const int N = 2 + static_cast<int>(rng.below(2));
        const int L = 2 + static_cast<int>(rng.below(2));
        const JointDist data = random_joint(std::vector<int>(static_cast<std::size_t>(L), N), rng, 0.3);
        const double t = rng.uniform(0.3, 1.0), s = rng.uniform(0.0, t);
        const auto ctx = reverse_contexts(data, s, t, schedule);
        const auto oracle = kernel_oracle(data, schedule.reverse_alpha(s), schedule.reverse_alpha(t));
        double total = 0.0;
        for (const auto& c : ctx) {
            total += c.weight;
            std::vector<int> zt = c.z_t;
            for (auto& v : zt) {
                v = v == kMasked ? N : v;
            }
            for (std::size_t f = 0; f < c.conditional.size(); ++f) {
                const auto zs = c.conditional.unravel(f);
                const auto it = oracle.find({zt, zs});
                const double expect = it == oracle.end() ? 0.0 : it->second;
                CHECK(std::abs(c.weight * c.conditional[f] - expect) < 1e-14);
            }
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("exact conditional total correlation")
{
    Rng rng(11);
    const Schedule schedule;
    // Independent data with true marginals: zero.
    const JointDist indep({2, 2}, {0.06, 0.14, 0.24, 0.56});
    const auto ci = reverse_contexts(indep, 0.2, 0.7, schedule);
    CHECK(std::abs(tc_exact(ci, true_marginals(ci))) < 1e-14);

    for (int trial = 0; trial < 50; ++trial) {
        const JointDist data = random_joint({2, 2}, rng);
        const double t = rng.uniform(0.2, 1.0), s = rng.uniform(0.0, t);
        const auto ctx = reverse_contexts(data, s, t, schedule);
        const auto truth = true_marginals(ctx);
        std::vector<std::vector<Categorical>> model;
        for (const auto& c : ctx) {
            model.push_back({random_categorical(3, rng), random_categorical(3, rng)});
        }
        // Direct summation oracle.
        double direct = 0.0, data_tc = 0.0, marg_kl = 0.0;
        for (std::size_t c = 0; c < ctx.size(); ++c) {
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) {
                    const int idx[] = {a, b};
                    const double p = ctx[c].conditional.prob(idx);
                    if (p > 0.0) {
                        direct += ctx[c].weight * p *
                                  std::log(p / (model[c][0][static_cast<std::size_t>(a)] *
                                                model[c][1][static_cast<std::size_t>(b)]));
                    }
                }
            }
            data_tc += ctx[c].weight * total_correlation(ctx[c].conditional);
            for (std::size_t pos = 0; pos < 2; ++pos) {
                marg_kl += ctx[c].weight * kl_divergence(truth[c][pos].probs(), model[c][pos].probs());
            }
        }
        const double tc = tc_exact(ctx, model);
        CHECK(std::abs(tc - direct) < 1e-12);
        // Decomposition: model TC = data TC + marginal KLs.
        CHECK(std::abs(tc - (data_tc + marg_kl)) < 1e-12);
        CHECK(std::abs(tc_exact(ctx, truth) - data_tc) < 1e-12);
        CHECK(tc >= data_tc - 1e-12);
    }
}

TEST_CASE("lower bound examples")
{
    const Schedule schedule;
    const JointDist indep({2, 2}, {0.06, 0.14, 0.24, 0.56});
    CHECK(std::abs(thm1_lower_bound(indep, 0.0, 1.0, schedule).value) < 1e-15);

    const auto full = thm1_lower_bound(kPair, 0.0, 1.0, schedule);
    CHECK(std::abs(full.value - std::numbers::ln2) <= 1e-12);
    CHECK(full.event_probability == 1.0);
    CHECK(full.i == 0);
    CHECK(full.j == 1);
    const auto half = thm1_lower_bound(kPair, 0.5, 1.0, schedule);
    CHECK(half.value < full.value);
    CHECK(std::abs(half.value - 0.25 * std::numbers::ln2) < 1e-12);

    // Event probability equals the squared unmask rate times P(both masked at t).
    for (double t : {1.0, 0.8, 0.5}) {
        for (double s : {0.0, 0.2, 0.4}) {
            const double a_t = schedule.reverse_alpha(t), a_s = schedule.reverse_alpha(s);
            const double r = (a_s - a_t) / (1.0 - a_t);
            CHECK(std::abs(joint_unmask_probability(s, t, schedule) - r * r * (1 - a_t) * (1 - a_t)) < 1e-15);
        }
    }
    const JointDist single({3}, {0.2, 0.3, 0.5});
    CHECK(thm1_lower_bound(single, 0.0, 1.0, schedule).value == 0.0);
}

TEST_CASE("the bound never exceeds the exact factorization error")
{
    Rng rng(12);
    const Schedule schedule;
    for (int trial = 0; trial < 60; ++trial) {
        const int N = 2 + static_cast<int>(rng.below(2));
        const int L = 2 + static_cast<int>(rng.below(2));
        const JointDist data = random_joint(std::vector<int>(static_cast<std::size_t>(L), N), rng, 0.3);
        const double t = trial % 3 == 0 ? 1.0 : rng.uniform(0.2, 1.0);
        const double s = trial % 3 == 0 ? 0.0 : rng.uniform(0.0, t);
        const auto bound = thm1_lower_bound(data, s, t, schedule);
        const auto ctx = reverse_contexts(data, s, t, schedule);
        const double data_tc = tc_exact(ctx, true_marginals(ctx));
        CHECK(data_tc >= bound.value - 1e-9);
        std::vector<std::vector<Categorical>> model;
        for (std::size_t c = 0; c < ctx.size(); ++c) {
            std::vector<Categorical> row;
            for (int pos = 0; pos < L; ++pos) {
                row.push_back(random_categorical(static_cast<std::size_t>(N) + 1, rng));
            }
            model.push_back(std::move(row));
        }
        CHECK(tc_exact(ctx, model) >= bound.value - 1e-9);
    }
}

TEST_CASE("an MDM's exact reverse-step error respects the bound")
{
    const Schedule schedule;
    const auto model = random_model(small_config(ModelKind::mdm, 2, 3), 13);
    Rng rng(14);
    const JointDist data = random_joint({2, 2, 2}, rng);
    for (auto [s, t] : {std::pair{0.0, 1.0}, std::pair{0.3, 0.9}, std::pair{0.5, 0.6}}) {
        const auto ctx = reverse_contexts(data, s, t, schedule);
        const auto marg = model_marginals(model, ctx, s, t);
        CHECK(tc_exact(ctx, marg) >= thm1_lower_bound(data, s, t, schedule).value - 1e-9);
    }
    // At full mask the exact error is the one-step factorization error.
    const auto ctx = reverse_contexts(data, 0.0, 1.0, schedule);
    double weight_full = 0.0;
    for (const auto& c : ctx) {
        if (std::all_of(c.z_t.begin(), c.z_t.end(), [](int v) { return v == kMasked; })) {
            weight_full = c.weight;
        }
    }
    CHECK(weight_full == 1.0);
    const auto marg = model_marginals(model, ctx, 0.0, 1.0);
    const double tc = tc_exact(ctx, marg);
    const JointDist j = onestep_model_joint(model, 1, Rng(1));
    CHECK(std::abs(tc - kl_divergence(data.probs(), j.probs())) < 1e-12);
}

TEST_CASE("conditional mutual information lemma")
{
    // A = B = C fair bit.
    const JointDist abc({2, 2, 2}, {0.5, 0, 0, 0, 0, 0, 0, 0.5});
    CHECK(std::abs(lemma_cmi_check(abc)) < 1e-15);
    // Independent: slack = H(C).
    Rng rng(15);
    const Categorical a = random_categorical(2, rng), b = random_categorical(3, rng), c = random_categorical(2, rng);
    const std::vector<Categorical> parts = {a, b, c};
    const JointDist indep = product_joint(parts);
    CHECK(std::abs(lemma_cmi_check(indep) - entropy(c.probs())) < 1e-12);
    for (int trial = 0; trial < 500; ++trial) {
        const JointDist j = random_joint({2 + static_cast<int>(rng.below(3)), 2 + static_cast<int>(rng.below(3)),
                                          2 + static_cast<int>(rng.below(3))},
                                         rng, 0.3);
        CHECK(lemma_cmi_check(j) >= -1e-12);
    }
    CHECK_THROWS_AS(lemma_cmi_check(kPair), std::invalid_argument);
}

TEST_CASE("partition map construction")
{
    const auto pm = build_partition_map(kPair);
    REQUIRE(pm.cuts().size() == 3u);
    CHECK(pm.cuts()[0] == 0.0);
    CHECK(pm.cuts()[1] == 0.5);
    CHECK(pm.cuts()[2] == 1.0);
    CHECK(pm.map(0.0) == std::vector<int>{0, 0});
    CHECK(pm.map(0.4999) == std::vector<int>{0, 0});
    CHECK(pm.map(0.5) == std::vector<int>{1, 1});
    CHECK(pm.map(std::nextafter(1.0, 0.0)) == std::vector<int>{1, 1});
    CHECK_THROWS_AS(pm.locate(1.0), std::invalid_argument);

    NoiseSpec uniform;
    const double lo[] = {-0.9, 0.3}, hi[] = {0.2, -0.7};
    CHECK(pm.map_noise(lo, uniform) == std::vector<int>{0, 0});
    CHECK(pm.map_noise(hi, uniform) == std::vector<int>{1, 1});
    NoiseSpec gauss;
    gauss.distribution = NoiseDistribution::gaussian;
    const double neg[] = {-0.01}, pos[] = {0.01};
    CHECK(pm.map_noise(neg, gauss) == std::vector<int>{0, 0});
    CHECK(pm.map_noise(pos, gauss) == std::vector<int>{1, 1});

    using boost::multiprecision::cpp_rational;
    Rng rng(16);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(3));
        const JointDist target = random_joint({n, n}, rng, 0.25);
        const auto m = build_partition_map(target);
        CHECK(m.max_measure_error() <= 1e-15);
        for (std::size_t k = 0; k + 1 < m.cuts().size(); ++k) {
            CHECK(m.cuts()[k] < m.cuts()[k + 1]);
            if (k > 0) {
                CHECK(m.outcomes()[k - 1] < m.outcomes()[k]);
            }
        }
        // Each interior cut is within half an ulp of the exact cumulative sum.
        cpp_rational cum = 0, total = 0;
        for (double p : m.probs()) {
            total += cpp_rational(p);
        }
        for (std::size_t k = 0; k + 2 < m.cuts().size(); ++k) {
            cum += cpp_rational(m.probs()[k]);
            const double c = m.cuts()[k + 1];
            const cpp_rational err = abs(cpp_rational(c) - cum / total);
            const double half_ulp = 0.5 * (std::nextafter(c, 2.0) - c);
            CHECK(err <= cpp_rational(half_ulp));
        }
    }
}

TEST_CASE("per-token probe")
{
    const auto base = random_model(small_config(ModelKind::mdm), 17);
    Rng rng(18);
    const auto imdm = imdm_from_mdm(base, small_config(ModelKind::imdm).noise, rng);
    std::vector<NoiseAssignment> noises;
    for (int k = 0; k < 8; ++k) {
        noises.push_back(NoiseAssignment::draw(LatentSequence::fully_masked(2), imdm.config.noise, rng));
    }
    const int positions[] = {0, 1};
    const auto table = per_token_probe(imdm, noises, positions);
    REQUIRE(table.p_first.size() == 8u);
    for (const auto& row : table.p_first) {
        CHECK(row == table.p_first.front());
    }
    const auto direct = predict({LatentSequence::fully_masked(2), NoiseAssignment::none(2), 1.0}, base);
    // Batched and single evaluation differ only by rounding.
    CHECK(table.p_first[0][0] == doctest::Approx(direct[0][0]).epsilon(1e-12));
    CHECK(table.p_first[0][1] == doctest::Approx(direct[1][0]).epsilon(1e-12));
    const int bad[] = {2};
    CHECK_THROWS_AS(per_token_probe(imdm, noises, bad), std::invalid_argument);
}
