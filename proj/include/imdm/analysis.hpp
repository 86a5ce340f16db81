#pragma once

#include <functional>
#include <span>
#include <vector>

#include "imdm/denoiser.hpp"
#include "imdm/info.hpp"
#include "imdm/kernels.hpp"

// Sample metrics and exact-enumeration oracles for factorization error.
namespace imdm {

// ----------------------------------------------------------------------------
// Sample metrics
// ----------------------------------------------------------------------------
using SequencePredicate = std::function<bool(const Sequence&)>;

bool all_tokens_equal(const Sequence& seq);

// Fraction of samples satisfying `predicate` (all tokens equal by default).
double validity(std::span<const Sequence> samples,
                const SequencePredicate& predicate = all_tokens_equal);

// Entropy of the single-token marginal pooled over positions and samples.
double token_entropy(std::span<const Sequence> samples, int n_data);

// ----------------------------------------------------------------------------
// One-step joint of the model from full mask
// ----------------------------------------------------------------------------

// Average over ε draws of the product of per-position predictions at t = 1.
// MDM models ignore n_eps and use a single evaluation.
JointDist onestep_model_joint(const DenoiserParams& model, int n_eps, const Rng& rng,
                              std::size_t capacity = JointDist::kDefaultCapacity);

// Same, over caller-supplied noise (e.g. the ε stored in a coupling).
JointDist onestep_model_joint(const DenoiserParams& model, std::span<const NoiseAssignment> noises,
                              std::size_t capacity = JointDist::kDefaultCapacity);

// KL(data || model one-step joint); +infinity when the model misses data mass.
double factorization_error(const DenoiserParams& model, const JointDist& data, int n_eps,
                           const Rng& rng);

// Product distribution over the data supports of the given marginals.
JointDist product_joint(std::span<const Categorical> marginals,
                        std::size_t capacity = JointDist::kDefaultCapacity);

// ----------------------------------------------------------------------------
// Exact MDM reverse process
// ----------------------------------------------------------------------------

// One reachable z_t with its probability and the true law of z_s given it.
// Tokens use kMasked; z_s tables index the mask as N.
struct ReverseContext {
    std::vector<int> z_t;
    double weight = 0.0;
    JointDist conditional;
};

// Enumerates every z_t of positive probability for data ~ `data` under the
// absorbing forward process, with the reverse grid values of alpha at s < t.
std::vector<ReverseContext> reverse_contexts(const JointDist& data, double s, double t,
                                             const Schedule& schedule,
                                             std::size_t capacity = JointDist::kDefaultCapacity);

// Per-position marginals of each context's true conditional.
std::vector<std::vector<Categorical>> true_marginals(std::span<const ReverseContext> contexts);

// Per-position posteriors of an MDM-mode model at each context.
std::vector<std::vector<Categorical>> model_marginals(const DenoiserParams& model,
                                                      std::span<const ReverseContext> contexts,
                                                      double s, double t,
                                                      const Schedule& schedule = Schedule());

// sum over contexts of weight * KL(true conditional || product of marginals).
double tc_exact(std::span<const ReverseContext> contexts,
                std::span<const std::vector<Categorical>> marginals);

// ----------------------------------------------------------------------------
// Lower bound on the factorization error of any factorized reverse step
// ----------------------------------------------------------------------------

// Probability that positions i and j are both masked at t and both unmasked
// by s, i.e. (alpha_s - alpha_t)^2 on the reverse grid.
double joint_unmask_probability(double s, double t, const Schedule& schedule);

struct LowerBound {
    double value = 0.0;
    int i = -1;
    int j = -1;
    double event_probability = 0.0;
    double mutual_information = 0.0;
};

// max over pairs of P(both unmask in (s, t]) * I(x_i; x_j | z_t of the others).
LowerBound thm1_lower_bound(const JointDist& data, double s, double t, const Schedule& schedule,
                            std::size_t capacity = JointDist::kDefaultCapacity);

// I(A;B|C) - (I(A;B) - H(C)) for a rank-3 joint over (A, B, C).
double lemma_cmi_check(const JointDist& abc);

// ----------------------------------------------------------------------------
// Partition-and-map witness
// ----------------------------------------------------------------------------
class PartitionMap {
public:
    // Positive-probability outcomes in lexicographic order.
    std::span<const std::vector<int>> outcomes() const { return outcomes_; }
    std::span<const double> probs() const { return probs_; }
    // cuts()[k] .. cuts()[k+1] is outcome k's interval; cuts().front() = 0, back() = 1.
    std::span<const double> cuts() const { return cuts_; }

    std::size_t locate(double u) const;
    const std::vector<int>& map(double u) const { return outcomes_[locate(u)]; }
    const std::vector<int>& map_noise(std::span<const double> eps, const NoiseSpec& spec) const;

    // max_k |cut_{k+1} - cut_k - p_k|.
    double max_measure_error() const;

private:
    friend PartitionMap build_partition_map(const JointDist& target);

    std::vector<std::vector<int>> outcomes_;
    std::vector<double> probs_;
    std::vector<double> cuts_;
};

// Cuts are the exact rational cumulative sums rounded once to double.
PartitionMap build_partition_map(const JointDist& target);

// ----------------------------------------------------------------------------
// Per-token probe
// ----------------------------------------------------------------------------
struct ProbeTable {
    std::vector<int> positions;
    std::vector<std::vector<double>> p_first;  // [row][k]: P(token 0) at positions[k]
};

// Full-mask prediction at t = 1 for each noise assignment.
ProbeTable per_token_probe(const DenoiserParams& model, std::span<const NoiseAssignment> noises,
                           std::span<const int> positions);

}  // namespace imdm
