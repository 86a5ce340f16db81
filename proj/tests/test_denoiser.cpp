#include "doctest.h"

#include <cmath>

#include "imdm/denoiser.hpp"

using namespace imdm;

namespace {

DenoiserConfig small_config(ModelKind kind, int n = 2, int l = 2)
{
    DenoiserConfig c;
    c.kind = kind;
    c.n_data = n;
    c.length = l;
    c.d_embed = 6;
    c.width = 10;
    c.noise.dim = 4;
    return c;
}

// Replaces every parameter, including the zero-initialized noise output layer.
void randomize(DenoiserParams& p, Rng& rng, double scale = 0.5)
{
    for (auto& v : p.values) {
        v = scale * rng.normal();
    }
}

ModelInput random_input(const DenoiserConfig& c, Rng& rng, double mask_rate = 0.5)
{
    ModelInput in;
    in.z.tokens.resize(static_cast<std::size_t>(c.length));
    for (auto& tok : in.z.tokens) {
        tok = rng.bernoulli(mask_rate) ? kMasked : static_cast<int>(rng.below(c.n_data));
    }
    in.noise = c.uses_noise() ? NoiseAssignment::draw(in.z, c.noise, rng)
                              : NoiseAssignment::none(in.z.length());
    in.t = rng.uniform(0.02, 0.98);
    return in;
}

std::vector<TrainExample> random_batch(const DenoiserConfig& c, Rng& rng, std::size_t n)
{
    std::vector<TrainExample> batch;
    for (std::size_t i = 0; i < n; ++i) {
        TrainExample ex{random_input(c, rng), {}};
        for (int l = 0; l < c.length; ++l) {
            ex.x.tokens.push_back(static_cast<int>(rng.below(c.n_data)));
        }
        batch.push_back(std::move(ex));
    }
    return batch;
}

// Plain-loop evaluation of the network straight from the parameter manifest.
std::vector<std::vector<double>> naive_predict(const ModelInput& in, const DenoiserParams& p)
{
    const auto& c = p.config;
    const ParamLayout layout(c);
    auto w = [&](const char* name, std::size_t r, std::size_t col) {
        const auto& e = layout.at(name);
        return p.values[e.offset + r * e.dims[1] + col];
    };
    auto v = [&](const char* name, std::size_t i) { return p.values[layout.at(name).offset + i]; };
    const std::size_t d = c.d_embed, L = c.length, N = c.n_data, W = c.width;

    std::vector<double> h0(L * d);
    for (std::size_t l = 0; l < L; ++l) {
        const int tok = in.z.tokens[l];
        for (std::size_t k = 0; k < d; ++k) {
            h0[l * d + k] = tok == kMasked ? v("embed.mask", k) : w("embed.tokens", tok, k);
        }
        if (tok == kMasked && c.uses_noise()) {
            std::vector<double> g(4 * d);
            for (std::size_t r = 0; r < 4 * d; ++r) {
                double a = v("noise.b1", r);
                for (int k = 0; k < c.noise.dim; ++k) {
                    a += w("noise.w1", r, k) * in.noise.eps[l][k] * c.noise.scale;
                }
                g[r] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
            }
            for (std::size_t k = 0; k < d; ++k) {
                double o = v("noise.b2", k);
                for (std::size_t r = 0; r < 4 * d; ++r) {
                    o += w("noise.w2", k, r) * g[r];
                }
                h0[l * d + k] += o;
            }
        }
    }
    auto layer = [&](const char* wn, const char* bn, const std::vector<double>& x, bool time) {
        std::vector<double> out(W);
        for (std::size_t r = 0; r < W; ++r) {
            double a = v(bn, r) + (time ? v("time.w", r) * in.t : 0.0);
            for (std::size_t k = 0; k < x.size(); ++k) {
                a += w(wn, r, k) * x[k];
            }
            out[r] = 0.5 * a * (1.0 + std::erf(a / std::sqrt(2.0)));
        }
        return out;
    };
    auto h1 = layer("trunk.w1", "trunk.b1", h0, true);
    auto h2 = layer("trunk.w2", "trunk.b2", h1, false);
    std::vector<std::vector<double>> probs(L, std::vector<double>(N));
    for (std::size_t l = 0; l < L; ++l) {
        double z = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
            double a = v("head.b", l * N + n);
            for (std::size_t k = 0; k < W; ++k) {
                a += w("head.w", l * N + n, k) * h2[k];
            }
            probs[l][n] = std::exp(a);
            z += probs[l][n];
        }
        for (auto& q : probs[l]) {
            q /= z;
        }
    }
    return probs;
}

}  // namespace

TEST_CASE("parameter layout and initialization")
{
    Rng rng(1);
    auto c = small_config(ModelKind::imdm);
    auto p = init_params(c, rng);
    const auto layout = p.layout();
    CHECK(layout.total() == p.values.size());
    const auto& w2 = layout.at("noise.w2");
    const auto& b2 = layout.at("noise.b2");
    for (std::size_t i = 0; i < w2.size; ++i) {
        REQUIRE(p.values[w2.offset + i] == 0.0);
    }
    for (std::size_t i = 0; i < b2.size; ++i) {
        REQUIRE(p.values[b2.offset + i] == 0.0);
    }
    CHECK(p.all_finite());
    CHECK_FALSE(ParamLayout(small_config(ModelKind::mdm)).contains("noise.w1"));
    CHECK_THROWS_AS(layout.at("nope"), std::out_of_range);
    auto bad = c;
    bad.noise.scale = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("embed examples")
{
    Rng rng(2);
    auto c = small_config(ModelKind::imdm);
    auto p = init_params(c, rng);
    const auto layout = p.layout();
    const auto& mask = layout.at("embed.mask");
    for (int k = 0; k < 20; ++k) {
        auto e = embed(kMasked, c.noise.draw(rng), p);
        for (int i = 0; i < c.d_embed; ++i) {
            REQUIRE(e(i) == p.values[mask.offset + i]);
        }
    }
    auto e1 = embed(1, {}, p);
    const auto& tok = layout.at("embed.tokens");
    for (int i = 0; i < c.d_embed; ++i) {
        CHECK(e1(i) == p.values[tok.offset + c.d_embed + i]);
    }
    CHECK_THROWS_AS(embed(kMasked, {}, p), std::invalid_argument);
    CHECK_THROWS_AS(embed(0, c.noise.draw(rng), p), std::invalid_argument);

    // Trained-like params: the difference of two masked embeddings equals the
    // difference of the noise-MLP outputs, recomputed with plain loops.
    randomize(p, rng);
    auto eps_a = c.noise.draw(rng), eps_b = c.noise.draw(rng);
    Eigen::VectorXd diff = embed(kMasked, eps_a, p) - embed(kMasked, eps_b, p);
    auto mlp = [&](const std::vector<double>& eps) {
        std::vector<double> g(4 * c.d_embed), out(c.d_embed);
        const auto& w1 = layout.at("noise.w1");
        const auto& b1 = layout.at("noise.b1");
        const auto& w2 = layout.at("noise.w2");
        const auto& b2 = layout.at("noise.b2");
        for (int r = 0; r < 4 * c.d_embed; ++r) {
            double a = p.values[b1.offset + r];
            for (int k = 0; k < c.noise.dim; ++k) {
                a += p.values[w1.offset + r * c.noise.dim + k] * eps[k];
            }
            g[r] = gelu(a);
        }
        for (int r = 0; r < c.d_embed; ++r) {
            out[r] = p.values[b2.offset + r];
            for (int k = 0; k < 4 * c.d_embed; ++k) {
                out[r] += p.values[w2.offset + r * 4 * c.d_embed + k] * g[k];
            }
        }
        return out;
    };
    auto ma = mlp(eps_a), mb = mlp(eps_b);
    double max_diff = 0.0;
    for (int i = 0; i < c.d_embed; ++i) {
        CHECK(std::abs(diff(i) - (ma[i] - mb[i])) <= 1e-12);
        max_diff = std::max(max_diff, std::abs(diff(i)));
    }
    CHECK(max_diff > 1e-3);
}

TEST_CASE("predict matches a plain-loop evaluation")
{
    Rng rng(3);
    for (auto kind : {ModelKind::mdm, ModelKind::imdm}) {
        auto c = small_config(kind, 3, 3);
        auto p = init_params(c, rng);
        randomize(p, rng);
        for (int trial = 0; trial < 50; ++trial) {
            auto in = random_input(c, rng);
            auto got = predict(in, p);
            auto want = naive_predict(in, p);
            for (int l = 0; l < c.length; ++l) {
                CHECK(std::abs(got[l].sum() - 1.0) <= 1e-9);
                for (int v = 0; v < c.n_data; ++v) {
                    REQUIRE(std::abs(got[l][v] - want[l][v]) <= 1e-12);
                    REQUIRE(got[l][v] > 0.0);
                }
            }
        }
    }
}

TEST_CASE("predict is deterministic and batch evaluation agrees with single calls")
{
    Rng rng(4);
    auto c = small_config(ModelKind::imdm);
    auto p = init_params(c, rng);
    randomize(p, rng);
    std::vector<ModelInput> batch;
    for (int i = 0; i < 17; ++i) {
        batch.push_back(random_input(c, rng));
    }
    auto all = predict_batch(batch, p);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        auto a = predict(batch[i], p);
        auto b = predict(batch[i], p);
        for (int l = 0; l < c.length; ++l) {
            for (int v = 0; v < c.n_data; ++v) {
                REQUIRE(a[l][v] == b[l][v]);
                REQUIRE(std::abs(a[l][v] - all[i][l][v]) <= 1e-14);
            }
        }
    }
}

TEST_CASE("predict rejects inconsistent inputs")
{
    Rng rng(5);
    auto c = small_config(ModelKind::imdm);
    auto p = init_params(c, rng);
    ModelInput in{LatentSequence::fully_masked(2), NoiseAssignment::none(2), 1.0};
    CHECK_THROWS_AS(predict(in, p), std::invalid_argument);
    in.noise = NoiseAssignment::draw(in.z, c.noise, rng);
    in.z.tokens[0] = 0;
    CHECK_THROWS_AS(predict(in, p), std::invalid_argument);
    ModelInput short_in{LatentSequence::fully_masked(1), NoiseAssignment::none(1), 1.0};
    CHECK_THROWS_AS(predict(short_in, p), std::invalid_argument);
}

TEST_CASE("zero-initialized IMDM reproduces its MDM base exactly")
{
    Rng rng(6);
    auto c = small_config(ModelKind::mdm);
    auto mdm = init_params(c, rng);
    randomize(mdm, rng);
    auto imdm = imdm_from_mdm(mdm, c.noise, rng);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        auto in = random_input(c, rng);
        auto base = predict(in, mdm);
        for (int e = 0; e < 100; ++e) {
            ModelInput noisy = in;
            noisy.noise = NoiseAssignment::draw(in.z, imdm.config.noise, rng);
            auto out = predict(noisy, imdm);
            for (int l = 0; l < c.length; ++l) {
                for (int v = 0; v < c.n_data; ++v) {
                    worst = std::max(worst, std::abs(out[l][v] - base[l][v]));
                }
            }
        }
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("loss_and_grads examples")
{
    Schedule sched(1e-4);
    Rng rng(7);
    auto c = small_config(ModelKind::mdm);
    auto p = init_params(c, rng);
    const auto layout = p.layout();
    // Uniform prediction: zero head.
    for (const char* name : {"head.w", "head.b"}) {
        const auto& e = layout.at(name);
        std::fill_n(p.values.begin() + e.offset, e.size, 0.0);
    }
    TrainExample ex{{{{kMasked, 1}}, NoiseAssignment::none(2), 0.5}, {{0, 1}}};
    auto res = loss_and_grads(std::span(&ex, 1), p, sched);
    CHECK(res.loss == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-14));
    CHECK(res.masked_positions == 1);

    // Perfect prediction: a huge bias on the true token makes log p exactly 0.
    const auto& hb = layout.at("head.b");
    p.values[hb.offset + 0] = 1000.0;
    res = loss_and_grads(std::span(&ex, 1), p, sched);
    CHECK(res.loss == 0.0);
    for (double g : res.grads) {
        REQUIRE(g == 0.0);
    }

    // Clipped: the truth has log p < -30, so the term is constant.
    TrainExample wrong{{{{kMasked, 1}}, NoiseAssignment::none(2), 0.5}, {{1, 1}}};
    res = loss_and_grads(std::span(&wrong, 1), p, sched);
    CHECK(res.floored_positions == 1);
    CHECK(res.loss == doctest::Approx(2.0 * 30.0));
    for (double g : res.grads) {
        REQUIRE(g == 0.0);
    }

    // Nothing masked: zero loss and gradient.
    TrainExample clean{{{{0, 1}}, NoiseAssignment::none(2), 0.5}, {{0, 1}}};
    res = loss_and_grads(std::span(&clean, 1), p, sched);
    CHECK(res.loss == 0.0);
    CHECK_THROWS_AS(loss_and_grads(std::span<const TrainExample>{}, p, sched), std::invalid_argument);
}

TEST_CASE("gradient check across random configurations")
{
    Schedule sched(1e-4);
    Rng rng(8);
    double worst = 0.0;
    for (int config = 0; config < 10; ++config) {
        auto c = small_config(config % 2 == 0 ? ModelKind::imdm : ModelKind::mdm,
                              2 + config % 3, 2 + config % 2);
        if (config % 4 == 1) {
            c.noise.distribution = NoiseDistribution::gaussian;
            c.kind = ModelKind::imdm;
            c.noise.scale = 0.7;
        }
        auto p = init_params(c, rng);
        if (config >= 2) {
            randomize(p, rng, 0.4);
        }
        auto batch = random_batch(c, rng, 8);
        auto res = grad_check(p, batch, sched, 1e-5, 200, rng);
        CHECK(res.coordinates == 200);
        INFO("config " << config << " worst " << res.max_rel_error << " analytic "
                       << res.worst_analytic << " numeric " << res.worst_numeric);
        CHECK(res.max_rel_error <= 1e-4);
        worst = std::max(worst, res.max_rel_error);
    }
    MESSAGE("worst relative error " << worst);
}

TEST_CASE("zero-initialized noise output layer still receives the right gradient")
{
    Schedule sched(1e-4);
    Rng rng(9);
    auto c = small_config(ModelKind::imdm);
    auto p = init_params(c, rng);
    auto batch = random_batch(c, rng, 16);
    auto grads = loss_and_grads(batch, p, sched).grads;
    const auto layout = p.layout();
    const auto& w2 = layout.at("noise.w2");
    double max_abs = 0.0, max_err = 0.0;
    const double h = 1e-5;
    for (std::size_t i = 0; i < w2.size; i += 7) {
        const std::size_t idx = w2.offset + i;
        auto probe = p;
        probe.values[idx] += h;
        double up = loss_and_grads(batch, probe, sched).loss;
        probe.values[idx] -= 2 * h;
        double down = loss_and_grads(batch, probe, sched).loss;
        double numeric = (up - down) / (2 * h);
        max_abs = std::max(max_abs, std::abs(grads[idx]));
        max_err = std::max(max_err, std::abs(numeric - grads[idx]) /
                                        std::max({std::abs(numeric), std::abs(grads[idx]), 1e-6}));
    }
    CHECK(max_abs > 1e-4);
    CHECK(max_err <= 1e-4);
}
