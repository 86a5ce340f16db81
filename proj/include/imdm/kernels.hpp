#pragma once

#include <vector>

#include "imdm/core.hpp"

// Closed-form forward marginals, reverse posteriors and Rao-Blackwellized
// NELBO terms for absorbing-mask, uniform-K and infinite-mask diffusion.
namespace imdm::kernels {

// Prior of the forward interpolation. State indices of finite priors:
//   mask_absorbing: data 0..N-1, mask N                       (support N + 1)
//   uniform_k:      data 0..N-1, extra latent states N..K-1   (support K)
//   latent_mask_limit: data 0..N-1 plus one aggregated "masked" symbol N; the
//                   individual mask states are never enumerated.
struct PriorSpec {
    enum class Kind { mask_absorbing, uniform_k, latent_mask_limit };

    Kind kind = Kind::mask_absorbing;
    int n_data = 2;
    long long k = 0;  // total states, uniform_k only

    static PriorSpec mask_absorbing(int n_data);
    static PriorSpec uniform(int n_data, long long k);
    static PriorSpec latent_mask_limit(int n_data);

    bool finite() const { return kind != Kind::latent_mask_limit; }
    long long support_size() const;
    // Prior mass of one state index (finite priors only).
    double prior_mass(long long index) const;
    // Number of non-data states (M); the aggregated symbol counts as one.
    long long mask_states() const { return support_size() - n_data; }
};

// alpha_t * delta_x + (1 - alpha_t) * pi over the support of `prior`.
Categorical forward_marginal(int x, double alpha_t, const PriorSpec& prior);

// General closed-form posterior q(z_s | z_t, x) for a finite prior.
// Throws InfeasibleStateError when z_t has zero probability given x.
Categorical posterior_general(long long z_t, int x, double alpha_s, double alpha_t,
                              const PriorSpec& prior);

// Absorbing-mask posterior with x replaced by a model prediction over the data
// vocabulary. z_t is a data id or kMasked; the result has support N + 1 with
// the mask at index N.
Categorical posterior_mdm(int z_t, const Categorical& x_pred, double alpha_s, double alpha_t);

struct ImdmPosterior {
    // Unnormalized-by-design split of the unit mass: unmask[v] is the
    // probability of landing on data token v.
    std::vector<double> unmask;
    double keep_mask_prob = 0.0;   // stay masked with the same noise
    double fresh_mask_prob = 0.0;  // stay masked with a freshly drawn noise

    double unmask_total() const;
    double total() const { return unmask_total() + keep_mask_prob + fresh_mask_prob; }
};

// Infinite-mask posterior; the latent mask set is represented by keep/fresh
// transitions of the noise attached to a masked position.
ImdmPosterior posterior_imdm(int z_t, const Categorical& x_pred, double alpha_s, double alpha_t);

// Rao-Blackwellized NELBO term (alpha'/(1-alpha)) * log <x_pred, x_true> for a
// position masked at time t. Returns +infinity when the truth has zero mass.
double mdm_nelbo_term(const Categorical& x_pred, int x_true, double t, const Schedule& schedule);

// The infinite-mask NELBO coincides with the absorbing-mask one.
double imdm_nelbo_term(const Categorical& x_pred, int x_true, double t, const Schedule& schedule);

// Finite-K Rao-Blackwellized NELBO integrand of uniform diffusion over K
// states, with x_pred supported on the first N states. z_t is a state index in
// [0, K). Returns 0 when z_t equals the clean token.
double uniform_nelbo_term(long long k, const Categorical& x_pred, int x_true, long long z_t,
                          double t, const Schedule& schedule);

}  // namespace imdm::kernels
