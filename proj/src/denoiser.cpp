#include "imdm/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace imdm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMat = Eigen::Map<const RowMat>;
using MutMat = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using MutVec = Eigen::Map<Eigen::VectorXd>;

ConstMat cmat(const DenoiserParams& p, const ParamLayout& layout, const char* name)
{
    const auto& e = layout.at(name);
    return ConstMat(p.values.data() + e.offset, static_cast<Eigen::Index>(e.dims[0]),
                    static_cast<Eigen::Index>(e.dims[1]));
}

ConstVec cvec(const DenoiserParams& p, const ParamLayout& layout, const char* name)
{
    const auto& e = layout.at(name);
    return ConstVec(p.values.data() + e.offset, static_cast<Eigen::Index>(e.size));
}

MutMat gmat(std::vector<double>& g, const ParamLayout& layout, const char* name)
{
    const auto& e = layout.at(name);
    return MutMat(g.data() + e.offset, static_cast<Eigen::Index>(e.dims[0]),
                  static_cast<Eigen::Index>(e.dims[1]));
}

MutVec gvec(std::vector<double>& g, const ParamLayout& layout, const char* name)
{
    const auto& e = layout.at(name);
    return MutVec(g.data() + e.offset, static_cast<Eigen::Index>(e.size));
}

Eigen::MatrixXd gelu_of(const Eigen::MatrixXd& a)
{
    return a.unaryExpr([](double x) { return gelu(x); });
}

Eigen::MatrixXd gelu_grad_of(const Eigen::MatrixXd& a)
{
    return a.unaryExpr([](double x) { return gelu_grad(x); });
}

void fill_uniform(std::vector<double>& values, const ParamEntry& e, double bound, Rng& rng)
{
    for (std::size_t i = 0; i < e.size; ++i) {
        values[e.offset + i] = rng.uniform(-bound, bound);
    }
}

void init_linear(std::vector<double>& values, const ParamLayout& layout, const std::string& w,
                 const std::string& b, std::size_t fan_in, Rng& rng)
{
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    fill_uniform(values, layout.at(w), bound, rng);
    fill_uniform(values, layout.at(b), bound, rng);
}

}  // namespace

const char* to_string(ModelKind kind)
{
    return kind == ModelKind::mdm ? "mdm" : "imdm";
}

const char* to_string(NoiseDistribution dist)
{
    return dist == NoiseDistribution::uniform ? "uniform" : "gaussian";
}

double gelu(double x)
{
    return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2));
}

double gelu_grad(double x)
{
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void NoiseSpec::validate() const
{
    if (dim < 1) {
        throw std::invalid_argument("noise dim must be >= 1");
    }
    if (!(scale > 0.0) || !std::isfinite(scale)) {
        throw std::invalid_argument("noise scale must be positive");
    }
}

std::vector<double> NoiseSpec::draw(Rng& rng) const
{
    std::vector<double> eps(static_cast<std::size_t>(dim));
    for (auto& v : eps) {
        v = distribution == NoiseDistribution::uniform ? rng.uniform(-1.0, 1.0) : rng.normal();
    }
    return eps;
}

double NoiseSpec::unit_coordinate(std::span<const double> eps) const
{
    if (eps.empty()) {
        throw std::invalid_argument("unit_coordinate: empty noise vector");
    }
    double u = distribution == NoiseDistribution::uniform
                   ? 0.5 * (eps[0] + 1.0)
                   : 0.5 * std::erfc(-eps[0] / std::numbers::sqrt2);
    return std::clamp(u, 0.0, std::nextafter(1.0, 0.0));
}

void DenoiserConfig::validate() const
{
    if (n_data < 2 || length < 1 || d_embed < 1 || width < 1) {
        throw std::invalid_argument("denoiser dims must be positive (n_data >= 2)");
    }
    if (uses_noise()) {
        noise.validate();
    }
}

ParamLayout::ParamLayout(const DenoiserConfig& c)
{
    c.validate();
    const auto n = static_cast<std::size_t>(c.n_data);
    const auto l = static_cast<std::size_t>(c.length);
    const auto d = static_cast<std::size_t>(c.d_embed);
    const auto w = static_cast<std::size_t>(c.width);
    add("embed.tokens", {n, d});
    add("embed.mask", {d});
    if (c.uses_noise()) {
        const auto dn = static_cast<std::size_t>(c.noise.dim);
        add("noise.w1", {4 * d, dn});
        add("noise.b1", {4 * d});
        add("noise.w2", {d, 4 * d});
        add("noise.b2", {d});
    }
    add("trunk.w1", {w, l * d});
    add("time.w", {w});
    add("trunk.b1", {w});
    add("trunk.w2", {w, w});
    add("trunk.b2", {w});
    add("head.w", {l * n, w});
    add("head.b", {l * n});
}

void ParamLayout::add(std::string name, std::vector<std::size_t> dims)
{
    std::size_t size = 1;
    for (auto v : dims) {
        size *= v;
    }
    entries_.push_back({std::move(name), std::move(dims), total_, size});
    total_ += size;
}

const ParamEntry& ParamLayout::at(const std::string& name) const
{
    for (const auto& e : entries_) {
        if (e.name == name) {
            return e;
        }
    }
    throw std::out_of_range("no parameter block named " + name);
}

bool ParamLayout::contains(const std::string& name) const
{
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const ParamEntry& e) { return e.name == name; });
}

bool DenoiserParams::all_finite() const
{
    return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

DenoiserParams init_params(const DenoiserConfig& config, Rng& rng)
{
    ParamLayout layout(config);
    DenoiserParams p{config, std::vector<double>(layout.total(), 0.0)};
    const auto d = static_cast<std::size_t>(config.d_embed);
    for (const char* name : {"embed.tokens", "embed.mask"}) {
        const auto& e = layout.at(name);
        for (std::size_t i = 0; i < e.size; ++i) {
            p.values[e.offset + i] = 0.5 * rng.normal();
        }
    }
    if (config.uses_noise()) {
        init_linear(p.values, layout, "noise.w1", "noise.b1",
                    static_cast<std::size_t>(config.noise.dim), rng);
        // noise.w2 / noise.b2 stay exactly zero.
    }
    const std::size_t trunk_in = static_cast<std::size_t>(config.length) * d + 1;
    init_linear(p.values, layout, "trunk.w1", "trunk.b1", trunk_in, rng);
    fill_uniform(p.values, layout.at("time.w"), 1.0 / std::sqrt(static_cast<double>(trunk_in)), rng);
    init_linear(p.values, layout, "trunk.w2", "trunk.b2", static_cast<std::size_t>(config.width), rng);
    init_linear(p.values, layout, "head.w", "head.b", static_cast<std::size_t>(config.width), rng);
    return p;
}

DenoiserParams imdm_from_mdm(const DenoiserParams& mdm, const NoiseSpec& noise, Rng& rng)
{
    if (mdm.config.kind != ModelKind::mdm) {
        throw std::invalid_argument("imdm_from_mdm: base model must be an MDM");
    }
    DenoiserConfig cfg = mdm.config;
    cfg.kind = ModelKind::imdm;
    cfg.noise = noise;
    DenoiserParams out = init_params(cfg, rng);
    const ParamLayout src(mdm.config), dst(cfg);
    for (const auto& e : src.entries()) {
        const auto& target = dst.at(e.name);
        std::copy_n(mdm.values.begin() + static_cast<std::ptrdiff_t>(e.offset), e.size,
                    out.values.begin() + static_cast<std::ptrdiff_t>(target.offset));
    }
    return out;
}

NoiseAssignment NoiseAssignment::draw(const LatentSequence& z, const NoiseSpec& spec, Rng& rng)
{
    NoiseAssignment out = none(z.length());
    for (std::size_t i = 0; i < z.length(); ++i) {
        if (z.is_masked(i)) {
            out.eps[i] = spec.draw(rng);
        }
    }
    return out;
}

Eigen::VectorXd embed(int token, std::span<const double> eps, const DenoiserParams& params)
{
    const ParamLayout layout = params.layout();
    const auto& c = params.config;
    if (token != kMasked) {
        if (token < 0 || token >= c.n_data) {
            throw std::invalid_argument("embed: token outside vocabulary");
        }
        if (!eps.empty()) {
            throw std::invalid_argument("embed: unmasked position must not carry noise");
        }
        return cmat(params, layout, "embed.tokens").row(token).transpose();
    }
    Eigen::VectorXd e = cvec(params, layout, "embed.mask");
    if (!c.uses_noise()) {
        return e;
    }
    if (eps.size() != static_cast<std::size_t>(c.noise.dim)) {
        throw std::invalid_argument("embed: masked position needs a noise vector of length d_noise");
    }
    Eigen::VectorXd x = ConstVec(eps.data(), static_cast<Eigen::Index>(eps.size())) * c.noise.scale;
    Eigen::VectorXd a = cmat(params, layout, "noise.w1") * x + cvec(params, layout, "noise.b1");
    Eigen::VectorXd g = a.unaryExpr([](double v) { return gelu(v); });
    return e + cmat(params, layout, "noise.w2") * g + cvec(params, layout, "noise.b2");
}

ForwardCache forward(std::span<const ModelInput> batch, const DenoiserParams& params)
{
    if (batch.empty()) {
        throw std::invalid_argument("forward: empty batch");
    }
    const auto& c = params.config;
    const ParamLayout layout(c);
    const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
    const Eigen::Index L = c.length, N = c.n_data, d = c.d_embed;

    ForwardCache cache;
    cache.h0.resize(L * d, B);
    cache.tokens.resize(batch.size());
    cache.t.resize(B);
    auto& t = cache.t;

    const auto tok = cmat(params, layout, "embed.tokens");
    const auto mask = cvec(params, layout, "embed.mask");
    const bool noisy = c.uses_noise();
    const Eigen::Index dn = noisy ? c.noise.dim : 0;

    std::size_t n_masked = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& in = batch[static_cast<std::size_t>(b)];
        if (in.z.length() != static_cast<std::size_t>(L)) {
            throw std::invalid_argument("forward: sequence length does not match the model");
        }
        if (!(in.t >= 0.0 && in.t <= 1.0)) {
            throw std::invalid_argument("forward: t outside [0, 1]");
        }
        if (noisy && in.noise.eps.size() != static_cast<std::size_t>(L)) {
            throw std::invalid_argument("forward: noise assignment has the wrong length");
        }
        n_masked += in.z.masked_count();
    }
    if (noisy) {
        cache.eps_in.resize(dn, static_cast<Eigen::Index>(n_masked));
        cache.noise_slots.reserve(n_masked);
    }

    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& in = batch[static_cast<std::size_t>(b)];
        cache.tokens[static_cast<std::size_t>(b)] = in.z.tokens;
        t(b) = in.t;
        for (Eigen::Index l = 0; l < L; ++l) {
            const int token = in.z.tokens[static_cast<std::size_t>(l)];
            const auto& eps = noisy ? in.noise.eps[static_cast<std::size_t>(l)] : std::vector<double>{};
            if (token != kMasked) {
                if (token < 0 || token >= N) {
                    throw std::invalid_argument("forward: token outside vocabulary");
                }
                if (!eps.empty()) {
                    throw std::invalid_argument("forward: unmasked position carries noise");
                }
                cache.h0.block(l * d, b, d, 1) = tok.row(token).transpose();
                continue;
            }
            cache.h0.block(l * d, b, d, 1) = mask;
            if (noisy) {
                if (eps.size() != static_cast<std::size_t>(dn)) {
                    throw std::invalid_argument("forward: masked position needs noise of length d_noise");
                }
                const auto col = static_cast<Eigen::Index>(cache.noise_slots.size());
                cache.eps_in.col(col) = ConstVec(eps.data(), dn) * c.noise.scale;
                cache.noise_slots.emplace_back(static_cast<std::size_t>(b), static_cast<std::size_t>(l));
            }
        }
    }

    if (noisy && n_masked > 0) {
        cache.noise_a = cmat(params, layout, "noise.w1") * cache.eps_in;
        cache.noise_a.colwise() += cvec(params, layout, "noise.b1");
        cache.noise_g = gelu_of(cache.noise_a);
        Eigen::MatrixXd out = cmat(params, layout, "noise.w2") * cache.noise_g;
        out.colwise() += cvec(params, layout, "noise.b2");
        for (std::size_t k = 0; k < cache.noise_slots.size(); ++k) {
            const auto [b, l] = cache.noise_slots[k];
            cache.h0.block(static_cast<Eigen::Index>(l) * d, static_cast<Eigen::Index>(b), d, 1) +=
                out.col(static_cast<Eigen::Index>(k));
        }
    }

    cache.a1 = cmat(params, layout, "trunk.w1") * cache.h0 + cvec(params, layout, "time.w") * t;
    cache.a1.colwise() += cvec(params, layout, "trunk.b1");
    cache.h1 = gelu_of(cache.a1);
    cache.a2 = cmat(params, layout, "trunk.w2") * cache.h1;
    cache.a2.colwise() += cvec(params, layout, "trunk.b2");
    cache.h2 = gelu_of(cache.a2);
    Eigen::MatrixXd logits = cmat(params, layout, "head.w") * cache.h2;
    logits.colwise() += cvec(params, layout, "head.b");

    cache.log_probs.resize(L * N, B);
    for (Eigen::Index b = 0; b < B; ++b) {
        for (Eigen::Index l = 0; l < L; ++l) {
            auto block = logits.block(l * N, b, N, 1);
            const double mx = block.maxCoeff();
            const double lse = mx + std::log((block.array() - mx).exp().sum());
            cache.log_probs.block(l * N, b, N, 1) = block.array() - lse;
        }
    }
    return cache;
}

std::vector<double> backward(const ForwardCache& cache, const Eigen::MatrixXd& dlogits,
                             const DenoiserParams& params)
{
    const auto& c = params.config;
    const ParamLayout layout(c);
    const Eigen::Index B = cache.h0.cols();
    const Eigen::Index L = c.length, d = c.d_embed;
    if (dlogits.rows() != cache.log_probs.rows() || dlogits.cols() != B) {
        throw std::invalid_argument("backward: dlogits shape mismatch");
    }
    std::vector<double> g(layout.total(), 0.0);

    gmat(g, layout, "head.w") = dlogits * cache.h2.transpose();
    gvec(g, layout, "head.b") = dlogits.rowwise().sum();
    Eigen::MatrixXd da2 = (cmat(params, layout, "head.w").transpose() * dlogits).cwiseProduct(
        gelu_grad_of(cache.a2));
    gmat(g, layout, "trunk.w2") = da2 * cache.h1.transpose();
    gvec(g, layout, "trunk.b2") = da2.rowwise().sum();
    Eigen::MatrixXd da1 = (cmat(params, layout, "trunk.w2").transpose() * da2).cwiseProduct(
        gelu_grad_of(cache.a1));
    gmat(g, layout, "trunk.w1") = da1 * cache.h0.transpose();
    gvec(g, layout, "trunk.b1") = da1.rowwise().sum();
    gvec(g, layout, "time.w") = da1 * cache.t.transpose();
    Eigen::MatrixXd dh0 = cmat(params, layout, "trunk.w1").transpose() * da1;

    auto g_tok = gmat(g, layout, "embed.tokens");
    auto g_mask = gvec(g, layout, "embed.mask");
    for (Eigen::Index b = 0; b < B; ++b) {
        const auto& tokens = cache.tokens[static_cast<std::size_t>(b)];
        for (Eigen::Index l = 0; l < L; ++l) {
            const int token = tokens[static_cast<std::size_t>(l)];
            if (token == kMasked) {
                g_mask += dh0.block(l * d, b, d, 1);
            } else {
                g_tok.row(token) += dh0.block(l * d, b, d, 1).transpose();
            }
        }
    }

    if (c.uses_noise() && !cache.noise_slots.empty()) {
        const auto M = static_cast<Eigen::Index>(cache.noise_slots.size());
        Eigen::MatrixXd dout(d, M);
        for (Eigen::Index k = 0; k < M; ++k) {
            const auto [b, l] = cache.noise_slots[static_cast<std::size_t>(k)];
            dout.col(k) = dh0.block(static_cast<Eigen::Index>(l) * d, static_cast<Eigen::Index>(b), d, 1);
        }
        gmat(g, layout, "noise.w2") = dout * cache.noise_g.transpose();
        gvec(g, layout, "noise.b2") = dout.rowwise().sum();
        Eigen::MatrixXd da = (cmat(params, layout, "noise.w2").transpose() * dout).cwiseProduct(
            gelu_grad_of(cache.noise_a));
        gmat(g, layout, "noise.w1") = da * cache.eps_in.transpose();
        gvec(g, layout, "noise.b1") = da.rowwise().sum();
    }
    return g;
}

std::vector<std::vector<Categorical>> predict_batch(std::span<const ModelInput> batch,
                                                    const DenoiserParams& params)
{
    const auto cache = forward(batch, params);
    const auto L = static_cast<std::size_t>(params.config.length);
    const auto N = static_cast<std::size_t>(params.config.n_data);
    std::vector<std::vector<Categorical>> out(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out[b].reserve(L);
        for (std::size_t l = 0; l < L; ++l) {
            std::vector<double> p(N);
            for (std::size_t v = 0; v < N; ++v) {
                p[v] = std::exp(cache.log_probs(static_cast<Eigen::Index>(l * N + v),
                                                static_cast<Eigen::Index>(b)));
            }
            out[b].push_back(Categorical::from_weights(std::move(p)));
        }
    }
    return out;
}

std::vector<Categorical> predict(const ModelInput& input, const DenoiserParams& params)
{
    return predict_batch(std::span(&input, 1), params).front();
}

LossAndGrads loss_and_grads(std::span<const TrainExample> batch, const DenoiserParams& params,
                            const Schedule& schedule, double log_prob_floor)
{
    if (batch.empty()) {
        throw std::invalid_argument("loss_and_grads: empty batch");
    }
    std::vector<ModelInput> inputs;
    inputs.reserve(batch.size());
    for (const auto& ex : batch) {
        inputs.push_back(ex.input);
    }
    const auto cache = forward(inputs, params);
    const auto N = static_cast<Eigen::Index>(params.config.n_data);
    const auto L = static_cast<std::size_t>(params.config.length);

    LossAndGrads out;
    for (const auto& ex : batch) {
        out.masked_positions += ex.input.z.masked_count();
    }
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(cache.log_probs.rows(), cache.log_probs.cols());
    if (out.masked_positions == 0) {
        out.grads.assign(params.layout().total(), 0.0);
        return out;
    }
    const double inv_count = 1.0 / static_cast<double>(out.masked_positions);
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        if (ex.x.length() != L) {
            throw std::invalid_argument("loss_and_grads: target length does not match the model");
        }
        const auto [alpha, alpha_prime] = schedule.alpha_at(ex.input.t);
        const double weight = -alpha_prime / (1.0 - alpha);
        for (std::size_t l = 0; l < L; ++l) {
            if (!ex.input.z.is_masked(l)) {
                continue;
            }
            const int x = ex.x.tokens[l];
            if (x < 0 || x >= N) {
                throw std::invalid_argument("loss_and_grads: target token outside vocabulary");
            }
            const auto row0 = static_cast<Eigen::Index>(l) * N;
            const auto col = static_cast<Eigen::Index>(b);
            const double lp = cache.log_probs(row0 + x, col);
            if (lp < log_prob_floor) {
                total += weight * -log_prob_floor;
                ++out.floored_positions;
                continue;
            }
            total += weight * -lp;
            const double coef = weight * inv_count;
            for (Eigen::Index v = 0; v < N; ++v) {
                dlogits(row0 + v, col) = coef * std::exp(cache.log_probs(row0 + v, col));
            }
            dlogits(row0 + x, col) -= coef;
        }
    }
    out.loss = total * inv_count;
    out.grads = backward(cache, dlogits, params);
    return out;
}

GradCheckResult grad_check(const DenoiserParams& params, std::span<const TrainExample> batch,
                           const Schedule& schedule, double h, std::size_t n_coords, Rng& rng,
                           double log_prob_floor)
{
    if (!(h >= 1e-6 && h <= 1e-3)) {
        throw std::invalid_argument("grad_check: h must lie in [1e-6, 1e-3]");
    }
    const auto analytic = loss_and_grads(batch, params, schedule, log_prob_floor).grads;
    DenoiserParams probe = params;
    GradCheckResult res;
    // Gradients below this magnitude are compared in absolute terms; central
    // differences cannot resolve them relative to the loss's rounding noise.
    constexpr double kScaleFloor = 1e-6;
    for (std::size_t k = 0; k < n_coords; ++k) {
        const auto idx = static_cast<std::size_t>(rng.below(params.values.size()));
        const double orig = probe.values[idx];
        probe.values[idx] = orig + h;
        const double up = loss_and_grads(batch, probe, schedule, log_prob_floor).loss;
        probe.values[idx] = orig - h;
        const double down = loss_and_grads(batch, probe, schedule, log_prob_floor).loss;
        probe.values[idx] = orig;
        const double numeric = (up - down) / (2.0 * h);
        const double err = std::abs(numeric - analytic[idx]) /
                           std::max({std::abs(numeric), std::abs(analytic[idx]), kScaleFloor});
        if (err > res.max_rel_error || res.coordinates == 0) {
            res.max_rel_error = std::max(res.max_rel_error, err);
            res.worst_index = idx;
            res.worst_analytic = analytic[idx];
            res.worst_numeric = numeric;
        }
        ++res.coordinates;
    }
    return res;
}

}  // namespace imdm
