#include "imdm/oracle_suite.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "imdm/analysis.hpp"
#include "imdm/sampler.hpp"
#include "imdm/stats.hpp"
#include "imdm/training.hpp"

namespace imdm {

namespace {

using kernels::PriorSpec;

OracleCheck at_most(std::string name, double value, double limit)
{
    return {std::move(name), value, limit, true};
}

OracleCheck at_least(std::string name, double value, double limit)
{
    return {std::move(name), value, limit, false};
}

JointDist random_joint(std::vector<int> dims, Rng& rng, double zero_rate)
{
    std::size_t n = 1;
    for (int d : dims) {
        n *= static_cast<std::size_t>(d);
    }
    std::vector<double> w(n);
    for (auto& v : w) {
        v = rng.bernoulli(zero_rate) ? 0.0 : -std::log(1.0 - rng.uniform());
    }
    w[rng.below(n)] += 1e-3;
    return JointDist::from_weights(std::move(dims), std::move(w));
}

Categorical random_categorical(Rng& rng, std::size_t n, double floor = 0.0)
{
    std::vector<double> w(n);
    for (auto& v : w) {
        v = -std::log(1.0 - rng.uniform()) + floor;
    }
    return Categorical::from_weights(std::move(w));
}

// alpha_s > alpha_t, both inside (0.01, 0.99).
std::pair<double, double> random_alphas(Rng& rng)
{
    const double a = rng.uniform(0.01, 0.99), b = rng.uniform(0.01, 0.99);
    return {std::max(a, b), std::min(a, b)};
}

double step_kernel(long long z_t, long long z_s, double a_ts, const PriorSpec& prior)
{
    return a_ts * (z_t == z_s ? 1.0 : 0.0) + (1.0 - a_ts) * prior.prior_mass(z_t);
}

double forward_mass(long long z, int x, double alpha, const PriorSpec& prior)
{
    return alpha * (z == x ? 1.0 : 0.0) + (1.0 - alpha) * prior.prior_mass(z);
}

PriorSpec random_finite_prior(Rng& rng, int n)
{
    return rng.bernoulli(0.5) ? PriorSpec::uniform(n, n + static_cast<long long>(rng.below(5)))
                              : PriorSpec::mask_absorbing(n);
}

DenoiserConfig oracle_model(ModelKind kind, int n, int l)
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

void randomize(DenoiserParams& p, Rng& rng, double scale)
{
    for (auto& v : p.values) {
        v = scale * rng.normal();
    }
}

ModelInput random_input(const DenoiserConfig& c, Rng& rng)
{
    ModelInput in;
    in.z.tokens.resize(static_cast<std::size_t>(c.length));
    for (auto& tok : in.z.tokens) {
        tok = rng.bernoulli(0.5) ? kMasked : static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_data)));
    }
    in.noise = c.uses_noise() ? NoiseAssignment::draw(in.z, c.noise, rng) : NoiseAssignment::none(in.z.length());
    in.t = rng.uniform(0.02, 0.98);
    return in;
}

// ---------------------------------------------------------------------------

SuiteResult factorization_bound(const OracleOptions& options, Rng rng)
{
    SuiteResult r;
    const Schedule schedule;
    double worst_gap = std::numeric_limits<double>::infinity();
    double worst_step = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 200; ++trial) {
        const int L = 2 + static_cast<int>(rng.below(2));
        const int N = 2 + static_cast<int>(rng.below(2));
        const JointDist data = random_joint(std::vector<int>(static_cast<std::size_t>(L), N), rng, 0.3);
        // The best factorized one-step model uses the true per-position marginals.
        const auto ctx = reverse_contexts(data, 0.0, 1.0, schedule);
        const double err = tc_exact(ctx, true_marginals(ctx));
        worst_gap = std::min(worst_gap, err - thm1_lower_bound(data, 0.0, 1.0, schedule).value);

        const double t = rng.uniform(0.2, 1.0), s = rng.uniform(0.0, t);
        const auto mid = reverse_contexts(data, s, t, schedule);
        worst_step = std::min(worst_step, tc_exact(mid, true_marginals(mid)) -
                                              thm1_lower_bound(data, s, t, schedule).value);
    }
    (void)options;
    r.checks.push_back(at_least("one_step_error_minus_bound", worst_gap, -1e-9));
    r.checks.push_back(at_least("interior_step_error_minus_bound", worst_step, -1e-9));
    const JointDist pair({2, 2}, {0.5, 0.0, 0.0, 0.5});
    const double bound = thm1_lower_bound(pair, 0.0, 1.0, schedule).value;
    r.checks.push_back(at_most("synthetic_bound_minus_ln2", std::abs(bound - std::numbers::ln2), 1e-12));
    return r;
}

SuiteResult information_lemma(const OracleOptions&, Rng rng)
{
    SuiteResult r;
    double worst = std::numeric_limits<double>::infinity();
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<int> dims(3);
        for (auto& d : dims) {
            d = 2 + static_cast<int>(rng.below(3));
        }
        worst = std::min(worst, lemma_cmi_check(random_joint(dims, rng, 0.25)));
    }
    r.checks.push_back(at_least("cmi_minus_mi_plus_entropy", worst, -1e-12));
    return r;
}

SuiteResult partition_witness(const OracleOptions&, Rng rng)
{
    SuiteResult r;
    NoiseSpec spec;
    spec.dim = 2;
    const std::size_t draws = 1'000'000;
    double worst_measure = 0.0, worst_tv = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(3));
        const JointDist target = random_joint({n, n}, rng, 0.3);
        const PartitionMap map = build_partition_map(target);
        worst_measure = std::max(worst_measure, map.max_measure_error());

        // Stratified uniform draws of the mapped noise coordinate.
        std::vector<double> counts(target.size(), 0.0);
        std::vector<double> eps(2);
        for (std::size_t k = 0; k < draws; ++k) {
            const double u = (static_cast<double>(k) + rng.uniform()) / static_cast<double>(draws);
            eps[0] = 2.0 * u - 1.0;
            eps[1] = rng.uniform(-1.0, 1.0);
            counts[target.flat_index(map.map_noise(eps, spec))] += 1.0;
        }
        double tv = 0.0;
        for (std::size_t f = 0; f < target.size(); ++f) {
            tv += 0.5 * std::abs(counts[f] / static_cast<double>(draws) - target[f]);
        }
        worst_tv = std::max(worst_tv, tv);
    }
    r.checks.push_back(at_most("pushforward_measure_error", worst_measure, 1e-15));
    r.checks.push_back(at_most("monte_carlo_tv", worst_tv, 0.002));
    return r;
}

SuiteResult kernel_identities(const OracleOptions& options, Rng rng)
{
    SuiteResult r;
    double norm = 0.0, agree = 0.0, imdm = 0.0, ck = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(4));
        const auto [a_s, a_t] = random_alphas(rng);

        // Normalization of the general posterior at a feasible z_t.
        const PriorSpec prior = random_finite_prior(rng, n);
        const int x = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        long long zt = 0;
        do {
            zt = static_cast<long long>(rng.below(static_cast<std::uint64_t>(prior.support_size())));
        } while (forward_mass(zt, x, a_t, prior) <= 0.0);
        norm = std::max(norm, std::abs(kernels::posterior_general(zt, x, a_s, a_t, prior).sum() - 1.0));

        // Absorbing specialization: average the general posterior under x_pred.
        const auto absorbing = PriorSpec::mask_absorbing(n);
        const auto x_pred = random_categorical(rng, static_cast<std::size_t>(n));
        const bool masked = rng.bernoulli(0.7);
        const int z = masked ? kMasked : static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
        const auto mdm = kernels::posterior_mdm(z, x_pred, a_s, a_t);
        norm = std::max(norm, std::abs(mdm.sum() - 1.0));
        std::vector<double> general(static_cast<std::size_t>(n) + 1, 0.0);
        for (int v = 0; v < n; ++v) {
            if (!masked && v != z) {
                continue;
            }
            const auto p = kernels::posterior_general(masked ? n : z, v, a_s, a_t, absorbing);
            const double w = masked ? x_pred[static_cast<std::size_t>(v)] : 1.0;
            for (std::size_t j = 0; j < general.size(); ++j) {
                general[j] += w * p[j];
            }
        }
        for (std::size_t j = 0; j < general.size(); ++j) {
            agree = std::max(agree, std::abs(mdm[j] - general[j]));
        }

        // Infinite-mask weights: unmask to v w.p. x_v (a_s - a_t)/(1 - a_t); otherwise
        // keep the noise w.p. a_{t|s} and redraw it w.p. 1 - a_{t|s}.
        const auto post = options.imdm_posterior(kMasked, x_pred, a_s, a_t);
        const double stay = (1.0 - a_s) / (1.0 - a_t), a_ts = a_t / a_s;
        norm = std::max(norm, std::abs(post.total() - 1.0));
        imdm = std::max(imdm, std::abs(post.keep_mask_prob - stay * a_ts));
        imdm = std::max(imdm, std::abs(post.fresh_mask_prob - stay * (1.0 - a_ts)));
        for (int v = 0; v < n; ++v) {
            const double expect = x_pred[static_cast<std::size_t>(v)] * (a_s - a_t) / (1.0 - a_t);
            imdm = std::max(imdm, std::abs(post.unmask[static_cast<std::size_t>(v)] - expect));
        }

        // Chapman-Kolmogorov: q(z_t | x) = sum_{z_s} q(z_t | z_s) q(z_s | x).
        const auto q_s = kernels::forward_marginal(x, a_s, prior);
        const auto q_t = kernels::forward_marginal(x, a_t, prior);
        for (long long zt2 = 0; zt2 < prior.support_size(); ++zt2) {
            double composed = 0.0;
            for (long long zs = 0; zs < prior.support_size(); ++zs) {
                composed += step_kernel(zt2, zs, a_ts, prior) * q_s[static_cast<std::size_t>(zs)];
            }
            ck = std::max(ck, std::abs(composed - q_t[static_cast<std::size_t>(zt2)]));
        }
    }
    r.checks.push_back(at_most("posterior_normalization", norm, 1e-12));
    r.checks.push_back(at_most("absorbing_general_vs_mdm", agree, 1e-12));
    r.checks.push_back(at_most("infinite_mask_weights", imdm, 1e-12));
    r.checks.push_back(at_most("chapman_kolmogorov", ck, 1e-12));
    return r;
}

SuiteResult nelbo_limit(const OracleOptions&, Rng rng)
{
    SuiteResult r;
    const Schedule schedule;
    const long long k = 1'000'000;
    double worst = 0.0, carry = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const double q = rng.uniform(0.05, 0.95);
        const Categorical x_pred({q, 1.0 - q});
        const int x = static_cast<int>(rng.below(2));
        const double t = rng.uniform(0.01, 0.6);
        const long long zt = 2 + static_cast<long long>(rng.below(static_cast<std::uint64_t>(k - 2)));
        worst = std::max(worst, std::abs(kernels::uniform_nelbo_term(k, x_pred, x, zt, t, schedule) -
                                         kernels::imdm_nelbo_term(x_pred, x, t, schedule)));
        carry = std::max(carry, std::abs(kernels::uniform_nelbo_term(k, x_pred, x, x, t, schedule)));
    }
    r.checks.push_back(at_most("finite_k_gap", worst, 1e-4));
    r.checks.push_back(at_most("carry_over_term", carry, 0.0));
    return r;
}

SuiteResult gradient_check(const OracleOptions&, Rng rng)
{
    SuiteResult r;
    const Schedule schedule;
    double worst = 0.0;
    std::size_t coords = std::numeric_limits<std::size_t>::max();
    for (int config = 0; config < 10; ++config) {
        auto c = oracle_model(config % 2 == 0 ? ModelKind::imdm : ModelKind::mdm, 2 + config % 3, 2 + config % 2);
        if (config % 4 == 1) {
            c.kind = ModelKind::imdm;
            c.noise.distribution = NoiseDistribution::gaussian;
            c.noise.scale = 0.7;
        }
        auto p = init_params(c, rng);
        if (config >= 2) {
            randomize(p, rng, 0.4);
        }
        std::vector<TrainExample> batch;
        for (int i = 0; i < 8; ++i) {
            TrainExample ex{random_input(c, rng), {}};
            for (int l = 0; l < c.length; ++l) {
                ex.x.tokens.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_data))));
            }
            batch.push_back(std::move(ex));
        }
        const auto res = grad_check(p, batch, schedule, 1e-5, 200, rng);
        worst = std::max(worst, res.max_rel_error);
        coords = std::min(coords, res.coordinates);
    }
    r.checks.push_back(at_most("max_relative_error", worst, 1e-4));
    r.checks.push_back(at_least("coordinates_per_config", static_cast<double>(coords), 200.0));
    return r;
}

double encode(const Sequence& s, int n)
{
    double v = 0.0;
    for (int tok : s.tokens) {
        v = v * n + tok;
    }
    return v;
}

SuiteResult zero_init_equivalence(const OracleOptions& options, Rng rng)
{
    SuiteResult r;
    const auto c = oracle_model(ModelKind::mdm, 3, 3);
    auto mdm = init_params(c, rng);
    randomize(mdm, rng, 1.0);
    const auto imdm = imdm_from_mdm(mdm, c.noise, rng);
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const auto in = random_input(c, rng);
        const auto base = predict(in, mdm);
        for (int e = 0; e < 100; ++e) {
            ModelInput noisy = in;
            noisy.noise = NoiseAssignment::draw(in.z, imdm.config.noise, rng);
            const auto out = predict(noisy, imdm);
            for (std::size_t l = 0; l < out.size(); ++l) {
                for (std::size_t v = 0; v < out[l].size(); ++v) {
                    worst = std::max(worst, std::abs(out[l][v] - base[l][v]));
                }
            }
        }
    }
    r.checks.push_back(at_most("max_abs_prob_difference", worst, 1e-12));

    DecodeConfig dm;
    dm.steps = 3;
    dm.mode = ModelKind::mdm;
    dm.length = 3;
    DecodeConfig di = dm;
    di.mode = ModelKind::imdm;
    const auto a = decode_batch(mdm, dm, 10000, rng.split(1), options.workers);
    const auto b = decode_batch(imdm, di, 10000, rng.split(2), options.workers);
    std::vector<double> xs, ys;
    for (std::size_t k = 0; k < a.size(); ++k) {
        xs.push_back(encode(a[k].sequence, 3));
        ys.push_back(encode(b[k].sequence, 3));
    }
    r.checks.push_back(at_least("decoded_ks_p_value", stats::ks_two_sample(xs, ys).p_value, 0.01));
    return r;
}

SuiteResult event_scaling(const OracleOptions& options, Rng rng)
{
    SuiteResult r;
    const Schedule schedule;
    const auto c = oracle_model(ModelKind::mdm, 3, 3);
    auto p = init_params(c, rng);
    randomize(p, rng, 1.0);
    DecodeConfig dc;
    dc.steps = 4;
    dc.mode = ModelKind::mdm;
    dc.length = 3;
    dc.record_trajectory = true;
    const auto runs = decode_batch(p, dc, 10000, rng.split(1), options.workers);
    auto has = [](const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); };
    for (std::size_t k = 0; k < 3; ++k) {
        std::size_t both_masked = 0, both_unmasked = 0;
        for (const auto& run : runs) {
            const auto& st = run.trajectory[k];
            if (has(st.masked_before, 0) && has(st.masked_before, 2)) {
                ++both_masked;
                both_unmasked += has(st.unmasked, 0) && has(st.unmasked, 2) ? 1 : 0;
            }
        }
        const double t = runs[0].trajectory[k].t, s = runs[0].trajectory[k].s;
        const double a_t = schedule.reverse_alpha(t), a_s = schedule.reverse_alpha(s);
        const double rate = (a_s - a_t) / (1.0 - a_t);
        const auto ci = stats::binomial_ci(both_unmasked, both_masked, 0.99);
        const double excess = std::max(ci.lo - rate * rate, rate * rate - ci.hi);
        r.checks.push_back(at_most("ci_excess_step_" + std::to_string(k), excess, 0.0));
    }
    return r;
}

using SuiteFn = SuiteResult (*)(const OracleOptions&, Rng);

struct SuiteEntry {
    std::string name;
    SuiteFn fn;
};

const std::vector<SuiteEntry>& registry()
{
    static const std::vector<SuiteEntry> suites = {
        {"factorization_bound", factorization_bound},
        {"information_lemma", information_lemma},
        {"partition_witness", partition_witness},
        {"kernel_identities", kernel_identities},
        {"nelbo_limit", nelbo_limit},
        {"gradient_check", gradient_check},
        {"zero_init_equivalence", zero_init_equivalence},
        {"event_scaling", event_scaling},
    };
    return suites;
}

}  // namespace

bool SuiteResult::passed() const
{
    return !checks.empty() &&
           std::all_of(checks.begin(), checks.end(), [](const OracleCheck& c) { return c.passed(); });
}

const OracleCheck& SuiteResult::worst() const
{
    if (checks.empty()) {
        throw std::logic_error("SuiteResult: no checks");
    }
    return *std::min_element(checks.begin(), checks.end(),
                             [](const OracleCheck& a, const OracleCheck& b) { return a.slack() < b.slack(); });
}

const std::vector<std::string>& oracle_suite_names()
{
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& e : registry()) {
            out.push_back(e.name);
        }
        return out;
    }();
    return names;
}

SuiteResult run_oracle_suite(const std::string& name, const OracleOptions& options)
{
    const auto& suites = registry();
    for (std::size_t i = 0; i < suites.size(); ++i) {
        if (suites[i].name == name) {
            const auto start = std::chrono::steady_clock::now();
            SuiteResult r = suites[i].fn(options, Rng(options.seed).split(i));
            r.name = name;
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            return r;
        }
    }
    throw std::invalid_argument("unknown oracle suite: " + name);
}

}  // namespace imdm
