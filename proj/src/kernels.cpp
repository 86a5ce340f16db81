#include "imdm/kernels.hpp"

#include <cmath>
#include <limits>
#include <numeric>

namespace imdm::kernels {

namespace {

void check_alpha_pair(double alpha_s, double alpha_t)
{
    if (!(alpha_t >= 0.0 && alpha_t < 1.0 && alpha_s > 0.0 && alpha_s <= 1.0)) {
        throw std::domain_error("posterior: alphas must satisfy 0 <= alpha_t < 1, 0 < alpha_s <= 1");
    }
    if (alpha_t > alpha_s) {
        throw std::domain_error("posterior: requires s < t, i.e. alpha_t <= alpha_s");
    }
}

void check_prediction(const Categorical& x_pred)
{
    if (x_pred.size() < 2) {
        throw std::invalid_argument("x_pred must cover at least two data tokens");
    }
    if (std::abs(x_pred.sum() - 1.0) > Categorical::kNormTolerance) {
        throw std::invalid_argument("x_pred is not normalized");
    }
}

}  // namespace

PriorSpec PriorSpec::mask_absorbing(int n_data)
{
    return {Kind::mask_absorbing, n_data, n_data + 1};
}

PriorSpec PriorSpec::uniform(int n_data, long long k)
{
    if (k < n_data || k < 2) {
        throw std::invalid_argument("PriorSpec::uniform: K must be >= max(N, 2)");
    }
    return {Kind::uniform_k, n_data, k};
}

PriorSpec PriorSpec::latent_mask_limit(int n_data)
{
    return {Kind::latent_mask_limit, n_data, 0};
}

long long PriorSpec::support_size() const
{
    switch (kind) {
    case Kind::mask_absorbing:
    case Kind::latent_mask_limit:
        return n_data + 1;
    case Kind::uniform_k:
        return k;
    }
    return 0;
}

double PriorSpec::prior_mass(long long index) const
{
    if (index < 0 || index >= support_size()) {
        throw std::out_of_range("PriorSpec::prior_mass: index outside support");
    }
    switch (kind) {
    case Kind::mask_absorbing:
        return index == n_data ? 1.0 : 0.0;
    case Kind::uniform_k:
        return 1.0 / static_cast<double>(k);
    case Kind::latent_mask_limit:
        // Aggregated mask symbol carries all prior mass; data carries none.
        return index == n_data ? 1.0 : 0.0;
    }
    return 0.0;
}

Categorical forward_marginal(int x, double alpha_t, const PriorSpec& prior)
{
    if (!(alpha_t > 0.0 && alpha_t < 1.0)) {
        throw std::domain_error("forward_marginal: alpha_t must lie in (0, 1)");
    }
    if (x < 0 || x >= prior.n_data) {
        throw std::invalid_argument("forward_marginal: x outside data vocabulary");
    }
    const auto n = static_cast<std::size_t>(prior.support_size());
    std::vector<double> p(n);
    for (std::size_t j = 0; j < n; ++j) {
        p[j] = (1.0 - alpha_t) * prior.prior_mass(static_cast<long long>(j));
    }
    p[static_cast<std::size_t>(x)] += alpha_t;
    return Categorical(std::move(p));
}

Categorical posterior_general(long long z_t, int x, double alpha_s, double alpha_t,
                              const PriorSpec& prior)
{
    if (!prior.finite()) {
        throw std::invalid_argument("posterior_general: prior must be finite");
    }
    check_alpha_pair(alpha_s, alpha_t);
    const long long n = prior.support_size();
    if (z_t < 0 || z_t >= n || x < 0 || x >= prior.n_data) {
        throw std::invalid_argument("posterior_general: index outside support");
    }
    const double a_ts = alpha_t / alpha_s;
    const double pi_zt = prior.prior_mass(z_t);
    const double x_zt = (z_t == x) ? 1.0 : 0.0;
    const double denom = alpha_t * x_zt + (1.0 - alpha_t) * pi_zt;
    if (!(denom > 0.0)) {
        throw InfeasibleStateError("posterior_general: z_t has zero probability given x");
    }
    std::vector<double> p(static_cast<std::size_t>(n));
    for (long long j = 0; j < n; ++j) {
        const double left = a_ts * (j == z_t ? 1.0 : 0.0) + (1.0 - a_ts) * pi_zt;
        const double right = alpha_s * (j == x ? 1.0 : 0.0) + (1.0 - alpha_s) * prior.prior_mass(j);
        p[static_cast<std::size_t>(j)] = left * right / denom;
    }
    return Categorical(std::move(p));
}

Categorical posterior_mdm(int z_t, const Categorical& x_pred, double alpha_s, double alpha_t)
{
    check_alpha_pair(alpha_s, alpha_t);
    check_prediction(x_pred);
    const auto n = x_pred.size();
    if (z_t != kMasked) {
        if (z_t < 0 || static_cast<std::size_t>(z_t) >= n) {
            throw std::invalid_argument("posterior_mdm: z_t outside data vocabulary");
        }
        return Categorical::delta(n + 1, static_cast<std::size_t>(z_t));
    }
    std::vector<double> p(n + 1);
    const double unmask = (alpha_s - alpha_t) / (1.0 - alpha_t);
    for (std::size_t v = 0; v < n; ++v) {
        p[v] = unmask * x_pred[v];
    }
    p[n] = (1.0 - alpha_s) / (1.0 - alpha_t);
    return Categorical(std::move(p));
}

double ImdmPosterior::unmask_total() const
{
    return std::accumulate(unmask.begin(), unmask.end(), 0.0);
}

ImdmPosterior posterior_imdm(int z_t, const Categorical& x_pred, double alpha_s, double alpha_t)
{
    check_alpha_pair(alpha_s, alpha_t);
    check_prediction(x_pred);
    const auto n = x_pred.size();
    ImdmPosterior out;
    out.unmask.assign(n, 0.0);
    if (z_t != kMasked) {
        if (z_t < 0 || static_cast<std::size_t>(z_t) >= n) {
            throw std::invalid_argument("posterior_imdm: z_t outside data vocabulary");
        }
        out.unmask[static_cast<std::size_t>(z_t)] = 1.0;
        return out;
    }
    const double a_ts = alpha_t / alpha_s;
    const double stay = (1.0 - alpha_s) / (1.0 - alpha_t);
    const double unmask = (alpha_s - alpha_t) / (1.0 - alpha_t);
    for (std::size_t v = 0; v < n; ++v) {
        out.unmask[v] = unmask * x_pred[v];
    }
    out.keep_mask_prob = stay * a_ts;
    out.fresh_mask_prob = stay * (1.0 - a_ts);
    return out;
}

double mdm_nelbo_term(const Categorical& x_pred, int x_true, double t, const Schedule& schedule)
{
    if (x_true < 0 || static_cast<std::size_t>(x_true) >= x_pred.size()) {
        throw std::invalid_argument("nelbo: x_true outside prediction support");
    }
    const auto [alpha, alpha_prime] = schedule.alpha_at(t);
    const double p = x_pred[static_cast<std::size_t>(x_true)];
    if (!(p > 0.0)) {
        return std::numeric_limits<double>::infinity();
    }
    return alpha_prime / (1.0 - alpha) * std::log(p);
}

double imdm_nelbo_term(const Categorical& x_pred, int x_true, double t, const Schedule& schedule)
{
    return mdm_nelbo_term(x_pred, x_true, t, schedule);
}

double uniform_nelbo_term(long long k, const Categorical& x_pred, int x_true, long long z_t,
                          double t, const Schedule& schedule)
{
    const auto n = static_cast<long long>(x_pred.size());
    if (k < 2 || k < n) {
        throw std::invalid_argument("uniform_nelbo_term: K must be >= max(2, N)");
    }
    if (x_true < 0 || x_true >= n || z_t < 0 || z_t >= k) {
        throw std::invalid_argument("uniform_nelbo_term: index outside support");
    }
    if (z_t == x_true) {
        return 0.0;
    }
    const auto [alpha, alpha_prime] = schedule.alpha_at(t);
    const double kd = static_cast<double>(k);
    const double floor = 1.0 - alpha;
    // xbar = K alpha x + (1 - alpha) 1, and likewise for the prediction.
    auto xbar = [&](long long j) { return j == x_true ? kd * alpha + floor : floor; };
    auto xbar_theta = [&](long long j) {
        return j < n ? kd * alpha * x_pred[static_cast<std::size_t>(j)] + floor : floor;
    };
    const double xi = xbar(z_t);
    const double xti = xbar_theta(z_t);

    double sum = 0.0;
    for (long long j = 0; j < n; ++j) {
        const double xj = xbar(j);
        sum += xj / xi * std::log(xj * xti / (xbar_theta(j) * xi));
    }
    // The K - N latent states share xbar_j = xbar_theta_j = 1 - alpha.
    sum += static_cast<double>(k - n) * floor / xi * std::log(xti / xi);

    return -alpha_prime / (kd * alpha) * (kd / xti - kd / xi + sum);
}

}  // namespace imdm::kernels
