#include "imdm/analysis.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include <boost/multiprecision/cpp_int.hpp>

namespace imdm {

namespace {

constexpr std::size_t kPredictChunk = 4096;

// Streaming pairwise summation of equal-length vectors: partial sums of 2^k
// inputs are merged like a binary counter, so the result depends only on the
// input order and the rounding error grows logarithmically.
class PairwiseSum {
public:
    explicit PairwiseSum(std::size_t n) : n_(n) {}

    void add(std::vector<double> v)
    {
        std::size_t level = 0;
        while (level < levels_.size() && !levels_[level].empty()) {
            for (std::size_t i = 0; i < n_; ++i) {
                v[i] += levels_[level][i];
            }
            levels_[level].clear();
            ++level;
        }
        if (level == levels_.size()) {
            levels_.emplace_back();
        }
        levels_[level] = std::move(v);
    }

    std::vector<double> total() const
    {
        std::vector<double> out(n_, 0.0);
        for (const auto& part : levels_) {
            if (!part.empty()) {
                for (std::size_t i = 0; i < n_; ++i) {
                    out[i] += part[i];
                }
            }
        }
        return out;
    }

private:
    std::size_t n_;
    std::vector<std::vector<double>> levels_;
};

std::vector<double> product_table(std::span<const Categorical> marginals, std::size_t size)
{
    std::vector<double> table(size);
    const std::size_t L = marginals.size();
    std::vector<std::size_t> idx(L, 0);
    for (std::size_t flat = 0; flat < size; ++flat) {
        double p = 1.0;
        for (std::size_t pos = 0; pos < L; ++pos) {
            p *= marginals[pos][idx[pos]];
        }
        table[flat] = p;
        // Last axis varies fastest.
        for (std::size_t pos = L; pos-- > 0;) {
            if (++idx[pos] < marginals[pos].size()) {
                break;
            }
            idx[pos] = 0;
        }
    }
    return table;
}

std::vector<int> data_dims(const DenoiserConfig& config)
{
    return std::vector<int>(static_cast<std::size_t>(config.length), config.n_data);
}

void check_pair(double s, double t)
{
    if (!(s >= 0.0 && s < t && t <= 1.0)) {
        throw std::invalid_argument("need 0 <= s < t <= 1");
    }
}

}  // namespace

bool all_tokens_equal(const Sequence& seq)
{
    return std::adjacent_find(seq.tokens.begin(), seq.tokens.end(), std::not_equal_to<>()) ==
           seq.tokens.end();
}

double validity(std::span<const Sequence> samples, const SequencePredicate& predicate)
{
    if (samples.empty()) {
        throw std::invalid_argument("validity: no samples");
    }
    const auto ok = std::count_if(samples.begin(), samples.end(), predicate);
    return static_cast<double>(ok) / static_cast<double>(samples.size());
}

double token_entropy(std::span<const Sequence> samples, int n_data)
{
    if (samples.empty()) {
        throw std::invalid_argument("token_entropy: no samples");
    }
    const Vocabulary vocab(n_data, false);
    std::vector<double> counts(static_cast<std::size_t>(n_data), 0.0);
    double total = 0.0;
    for (const auto& s : samples) {
        validate_sequence(s, vocab);
        for (int tok : s.tokens) {
            counts[static_cast<std::size_t>(tok)] += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) {
        throw std::invalid_argument("token_entropy: samples hold no tokens");
    }
    for (double& c : counts) {
        c /= total;
    }
    return entropy(counts);
}

JointDist product_joint(std::span<const Categorical> marginals, std::size_t capacity)
{
    std::vector<int> dims;
    for (const auto& m : marginals) {
        dims.push_back(static_cast<int>(m.size()));
    }
    const std::size_t size = JointDist::checked_size(dims, capacity);
    return JointDist::from_weights(std::move(dims), product_table(marginals, size));
}

JointDist onestep_model_joint(const DenoiserParams& model, std::span<const NoiseAssignment> noises,
                              std::size_t capacity)
{
    if (noises.empty()) {
        throw std::invalid_argument("onestep_model_joint: need at least one noise draw");
    }
    const auto L = static_cast<std::size_t>(model.config.length);
    auto dims = data_dims(model.config);
    const std::size_t size = JointDist::checked_size(dims, capacity);
    PairwiseSum sum(size);
    for (std::size_t lo = 0; lo < noises.size(); lo += kPredictChunk) {
        const std::size_t hi = std::min(noises.size(), lo + kPredictChunk);
        std::vector<ModelInput> inputs;
        inputs.reserve(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) {
            if (noises[k].eps.size() != L) {
                throw std::invalid_argument("onestep_model_joint: noise does not match the length");
            }
            inputs.push_back({LatentSequence::fully_masked(L), noises[k], 1.0});
        }
        const auto preds = predict_batch(inputs, model);
        for (const auto& row : preds) {
            sum.add(product_table(row, size));
        }
    }
    auto table = sum.total();
    const double n = static_cast<double>(noises.size());
    for (double& p : table) {
        p /= n;
    }
    return JointDist::from_weights(std::move(dims), std::move(table));
}

JointDist onestep_model_joint(const DenoiserParams& model, int n_eps, const Rng& rng,
                              std::size_t capacity)
{
    if (n_eps < 1) {
        throw std::invalid_argument("onestep_model_joint: n_eps must be >= 1");
    }
    const auto L = static_cast<std::size_t>(model.config.length);
    const LatentSequence full = LatentSequence::fully_masked(L);
    std::vector<NoiseAssignment> noises;
    if (!model.config.uses_noise()) {
        noises.push_back(NoiseAssignment::none(L));
    } else {
        noises.reserve(static_cast<std::size_t>(n_eps));
        for (int k = 0; k < n_eps; ++k) {
            Rng draw = rng.split(static_cast<std::uint64_t>(k));
            noises.push_back(NoiseAssignment::draw(full, model.config.noise, draw));
        }
    }
    return onestep_model_joint(model, noises, capacity);
}

double factorization_error(const DenoiserParams& model, const JointDist& data, int n_eps,
                           const Rng& rng)
{
    const JointDist joint = onestep_model_joint(model, n_eps, rng);
    if (!std::equal(data.dims().begin(), data.dims().end(), joint.dims().begin(), joint.dims().end())) {
        throw std::invalid_argument("factorization_error: data support does not match the model");
    }
    return kl_divergence(data.probs(), joint.probs());
}

std::vector<ReverseContext> reverse_contexts(const JointDist& data, double s, double t,
                                             const Schedule& schedule, std::size_t capacity)
{
    check_pair(s, t);
    const auto L = static_cast<std::size_t>(data.rank());
    const int N = data.dims().front();
    if (!std::all_of(data.dims().begin(), data.dims().end(), [N](int d) { return d == N; })) {
        throw std::invalid_argument("reverse_contexts: all positions must share one vocabulary");
    }
    const std::vector<int> ext_dims(L, N + 1);
    const std::size_t ext_size = JointDist::checked_size(ext_dims, capacity);
    const double a_t = schedule.reverse_alpha(t);
    const double a_s = schedule.reverse_alpha(s);
    const double unmask = (a_s - a_t) / (1.0 - a_t);

    // Unnormalized joint p(x, z_t) and, per z_t, p(x, z_s, z_t) folded into z_s.
    std::vector<double> zt_weight(ext_size, 0.0);
    std::vector<std::vector<double>> zs_given(ext_size);
    for (std::size_t xf = 0; xf < data.size(); ++xf) {
        const double px = data[xf];
        if (px == 0.0) {
            continue;
        }
        const auto x = data.unravel(xf);
        // Each position: kept (z_t = x) w.p. a_t, masked w.p. 1 - a_t.
        for (std::size_t pattern = 0; pattern < (std::size_t{1} << L); ++pattern) {
            double pz = px;
            std::size_t zt_flat = 0;
            for (std::size_t pos = 0; pos < L; ++pos) {
                const bool masked = (pattern >> (L - 1 - pos)) & 1u;
                pz *= masked ? 1.0 - a_t : a_t;
                zt_flat = zt_flat * static_cast<std::size_t>(N + 1) +
                          static_cast<std::size_t>(masked ? N : x[pos]);
            }
            if (pz == 0.0) {
                continue;
            }
            zt_weight[zt_flat] += pz;
            auto& table = zs_given[zt_flat];
            if (table.empty()) {
                table.assign(ext_size, 0.0);
            }
            // Masked positions unmask to x w.p. `unmask` independently.
            const std::size_t n_masked = static_cast<std::size_t>(std::popcount(pattern));
            for (std::size_t sub = 0; sub < (std::size_t{1} << n_masked); ++sub) {
                double pzs = pz;
                std::size_t zs_flat = 0, m = 0;
                for (std::size_t pos = 0; pos < L; ++pos) {
                    const bool masked = (pattern >> (L - 1 - pos)) & 1u;
                    int code = x[pos];
                    if (masked) {
                        const bool reveal = (sub >> m++) & 1u;
                        pzs *= reveal ? unmask : 1.0 - unmask;
                        code = reveal ? x[pos] : N;
                    }
                    zs_flat = zs_flat * static_cast<std::size_t>(N + 1) + static_cast<std::size_t>(code);
                }
                table[zs_flat] += pzs;
            }
        }
    }

    std::vector<ReverseContext> out;
    const JointDist shape(ext_dims, std::vector<double>(ext_size, 1.0 / static_cast<double>(ext_size)));
    for (std::size_t zf = 0; zf < ext_size; ++zf) {
        if (zt_weight[zf] == 0.0) {
            continue;
        }
        ReverseContext ctx;
        ctx.z_t = shape.unravel(zf);
        for (int& c : ctx.z_t) {
            if (c == N) {
                c = kMasked;
            }
        }
        ctx.weight = zt_weight[zf];
        ctx.conditional = JointDist::from_weights(ext_dims, std::move(zs_given[zf]));
        out.push_back(std::move(ctx));
    }
    return out;
}

std::vector<std::vector<Categorical>> true_marginals(std::span<const ReverseContext> contexts)
{
    std::vector<std::vector<Categorical>> out;
    out.reserve(contexts.size());
    for (const auto& ctx : contexts) {
        std::vector<Categorical> row;
        for (int pos = 0; pos < ctx.conditional.rank(); ++pos) {
            const int axis[] = {pos};
            const JointDist m = ctx.conditional.marginal(axis);
            row.emplace_back(std::vector<double>(m.probs().begin(), m.probs().end()));
        }
        out.push_back(std::move(row));
    }
    return out;
}

std::vector<std::vector<Categorical>> model_marginals(const DenoiserParams& model,
                                                      std::span<const ReverseContext> contexts,
                                                      double s, double t, const Schedule& schedule)
{
    check_pair(s, t);
    if (model.config.uses_noise()) {
        throw std::invalid_argument("model_marginals: expects an MDM-mode model");
    }
    const double a_t = schedule.reverse_alpha(t);
    const double a_s = schedule.reverse_alpha(s);
    const auto L = static_cast<std::size_t>(model.config.length);
    std::vector<ModelInput> inputs;
    inputs.reserve(contexts.size());
    for (const auto& ctx : contexts) {
        if (ctx.z_t.size() != L) {
            throw std::invalid_argument("model_marginals: context length does not match the model");
        }
        inputs.push_back({LatentSequence{ctx.z_t}, NoiseAssignment::none(L), t});
    }
    const auto preds = predict_batch(inputs, model);
    std::vector<std::vector<Categorical>> out(contexts.size());
    for (std::size_t c = 0; c < contexts.size(); ++c) {
        for (std::size_t pos = 0; pos < L; ++pos) {
            out[c].push_back(kernels::posterior_mdm(contexts[c].z_t[pos], preds[c][pos], a_s, a_t));
        }
    }
    return out;
}

double tc_exact(std::span<const ReverseContext> contexts,
                std::span<const std::vector<Categorical>> marginals)
{
    if (contexts.size() != marginals.size()) {
        throw std::invalid_argument("tc_exact: one marginal set per context required");
    }
    double total = 0.0;
    for (std::size_t c = 0; c < contexts.size(); ++c) {
        const auto& cond = contexts[c].conditional;
        if (marginals[c].size() != static_cast<std::size_t>(cond.rank())) {
            throw std::invalid_argument("tc_exact: marginal count does not match the context");
        }
        for (std::size_t pos = 0; pos < marginals[c].size(); ++pos) {
            if (marginals[c][pos].size() != static_cast<std::size_t>(cond.dims()[pos])) {
                throw std::invalid_argument("tc_exact: marginal support does not match");
            }
        }
        const auto prod = product_table(marginals[c], cond.size());
        total += contexts[c].weight * kl_divergence(cond.probs(), prod);
    }
    return total;
}

double joint_unmask_probability(double s, double t, const Schedule& schedule)
{
    check_pair(s, t);
    const double d = schedule.reverse_alpha(s) - schedule.reverse_alpha(t);
    return d * d;
}

LowerBound thm1_lower_bound(const JointDist& data, double s, double t, const Schedule& schedule,
                            std::size_t capacity)
{
    check_pair(s, t);
    const int L = data.rank();
    const int N = data.dims().front();
    const double a_t = schedule.reverse_alpha(t);
    LowerBound best;
    best.event_probability = joint_unmask_probability(s, t, schedule);
    best.value = 0.0;
    for (int i = 0; i < L; ++i) {
        for (int j = i + 1; j < L; ++j) {
            std::vector<int> others;
            for (int k = 0; k < L; ++k) {
                if (k != i && k != j) {
                    others.push_back(k);
                }
            }
            // Joint of (x_i, x_j, z_t of the others); the context is one axis.
            const std::vector<int> ctx_dims(others.size(), N + 1);
            const int n_ctx = static_cast<int>(JointDist::checked_size(ctx_dims, capacity));
            const std::vector<int> dims = {N, N, n_ctx};
            std::vector<double> table(JointDist::checked_size(dims, capacity), 0.0);
            const std::size_t n_o = others.size();
            for (std::size_t xf = 0; xf < data.size(); ++xf) {
                if (data[xf] == 0.0) {
                    continue;
                }
                const auto x = data.unravel(xf);
                for (std::size_t pattern = 0; pattern < (std::size_t{1} << n_o); ++pattern) {
                    double p = data[xf];
                    std::size_t c = 0;
                    for (std::size_t k = 0; k < n_o; ++k) {
                        const bool masked = (pattern >> (n_o - 1 - k)) & 1u;
                        p *= masked ? 1.0 - a_t : a_t;
                        c = c * static_cast<std::size_t>(N + 1) +
                            static_cast<std::size_t>(masked ? N : x[static_cast<std::size_t>(others[k])]);
                    }
                    const int idx[] = {x[static_cast<std::size_t>(i)], x[static_cast<std::size_t>(j)],
                                       static_cast<int>(c)};
                    table[(static_cast<std::size_t>(idx[0]) * static_cast<std::size_t>(N) +
                           static_cast<std::size_t>(idx[1])) *
                              static_cast<std::size_t>(n_ctx) +
                          static_cast<std::size_t>(idx[2])] += p;
                }
            }
            const JointDist joint = JointDist::from_weights(dims, std::move(table));
            const int a[] = {0}, b[] = {1}, cc[] = {2};
            const double cmi = conditional_mutual_information(joint, a, b, cc);
            const double value = best.event_probability * cmi;
            if (best.i < 0 || value > best.value) {
                best.value = value;
                best.i = i;
                best.j = j;
                best.mutual_information = cmi;
            }
        }
    }
    return best;
}

double lemma_cmi_check(const JointDist& abc)
{
    if (abc.rank() != 3) {
        throw std::invalid_argument("lemma_cmi_check: expects a joint over (A, B, C)");
    }
    const int a[] = {0}, b[] = {1}, c[] = {2};
    const double cmi = conditional_mutual_information(abc, a, b, c);
    const double mi = mutual_information(abc, a, b);
    const double h_c = entropy(abc.marginal(c));
    return cmi - (mi - h_c);
}

std::size_t PartitionMap::locate(double u) const
{
    if (!(u >= 0.0 && u < 1.0)) {
        throw std::invalid_argument("PartitionMap: u must lie in [0, 1)");
    }
    const auto it = std::upper_bound(cuts_.begin(), cuts_.end(), u);
    return static_cast<std::size_t>(it - cuts_.begin()) - 1;
}

const std::vector<int>& PartitionMap::map_noise(std::span<const double> eps, const NoiseSpec& spec) const
{
    return map(spec.unit_coordinate(eps));
}

double PartitionMap::max_measure_error() const
{
    double worst = 0.0;
    for (std::size_t k = 0; k < probs_.size(); ++k) {
        worst = std::max(worst, std::abs((cuts_[k + 1] - cuts_[k]) - probs_[k]));
    }
    return worst;
}

PartitionMap build_partition_map(const JointDist& target)
{
    using boost::multiprecision::cpp_rational;
    PartitionMap pm;
    cpp_rational total = 0;
    for (std::size_t f = 0; f < target.size(); ++f) {
        if (target[f] > 0.0) {
            pm.outcomes_.push_back(target.unravel(f));
            pm.probs_.push_back(target[f]);
            total += cpp_rational(target[f]);
        }
    }
    // Flat order is lexicographic, so outcomes are already sorted. Cuts are the
    // exact cumulative sums over the exact total, rounded once.
    pm.cuts_.push_back(0.0);
    cpp_rational cum = 0;
    for (std::size_t k = 0; k < pm.probs_.size(); ++k) {
        cum += cpp_rational(pm.probs_[k]);
        pm.cuts_.push_back(k + 1 == pm.probs_.size() ? 1.0 : static_cast<double>(cum / total));
    }
    return pm;
}

ProbeTable per_token_probe(const DenoiserParams& model, std::span<const NoiseAssignment> noises,
                           std::span<const int> positions)
{
    const auto L = static_cast<std::size_t>(model.config.length);
    for (int p : positions) {
        if (p < 0 || static_cast<std::size_t>(p) >= L) {
            throw std::invalid_argument("per_token_probe: position out of range");
        }
    }
    std::vector<ModelInput> inputs;
    inputs.reserve(noises.size());
    for (const auto& n : noises) {
        if (n.eps.size() != L) {
            throw std::invalid_argument("per_token_probe: noise does not match the length");
        }
        inputs.push_back({LatentSequence::fully_masked(L), n, 1.0});
    }
    ProbeTable table;
    table.positions.assign(positions.begin(), positions.end());
    if (inputs.empty()) {
        return table;
    }
    const auto preds = predict_batch(inputs, model);
    for (const auto& row : preds) {
        std::vector<double> r;
        for (int p : positions) {
            r.push_back(row[static_cast<std::size_t>(p)][0]);
        }
        table.p_first.push_back(std::move(r));
    }
    return table;
}

}  // namespace imdm
