#include "imdm/info.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>

#include "imdm/core.hpp"

namespace imdm {

JointDist::JointDist(std::vector<int> dims, std::vector<double> probs)
    : dims_(std::move(dims)), probs_(std::move(probs))
{
    if (dims_.empty()) {
        throw std::invalid_argument("JointDist: needs at least one axis");
    }
    if (checked_size(dims_) != probs_.size()) {
        throw std::invalid_argument("JointDist: table size does not match dims");
    }
    double total = 0.0;
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw std::invalid_argument("JointDist: negative or non-finite probability");
        }
        total += p;
    }
    if (std::abs(total - 1.0) > kNormTolerance) {
        throw std::invalid_argument("JointDist: probabilities sum to " + std::to_string(total));
    }
}

JointDist JointDist::from_weights(std::vector<int> dims, std::vector<double> weights)
{
    double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    if (!(total > 0.0)) {
        throw std::invalid_argument("JointDist::from_weights: weights sum to zero");
    }
    for (double& w : weights) {
        w /= total;
    }
    return JointDist(std::move(dims), std::move(weights));
}

std::size_t JointDist::checked_size(std::span<const int> dims, std::size_t capacity)
{
    std::size_t n = 1;
    for (int d : dims) {
        if (d < 1) {
            throw std::invalid_argument("JointDist: axis sizes must be positive");
        }
        if (n > capacity / static_cast<std::size_t>(d)) {
            throw CapacityError("enumeration exceeds capacity of " + std::to_string(capacity) +
                                " states");
        }
        n *= static_cast<std::size_t>(d);
    }
    if (n > capacity) {
        throw CapacityError("enumeration exceeds capacity of " + std::to_string(capacity) +
                            " states");
    }
    return n;
}

std::size_t JointDist::flat_index(std::span<const int> index) const
{
    if (index.size() != dims_.size()) {
        throw std::invalid_argument("JointDist: index rank mismatch");
    }
    std::size_t flat = 0;
    for (std::size_t a = 0; a < dims_.size(); ++a) {
        if (index[a] < 0 || index[a] >= dims_[a]) {
            throw std::out_of_range("JointDist: index out of range");
        }
        flat = flat * static_cast<std::size_t>(dims_[a]) + static_cast<std::size_t>(index[a]);
    }
    return flat;
}

std::vector<int> JointDist::unravel(std::size_t flat) const
{
    std::vector<int> index(dims_.size());
    for (std::size_t a = dims_.size(); a-- > 0;) {
        index[a] = static_cast<int>(flat % static_cast<std::size_t>(dims_[a]));
        flat /= static_cast<std::size_t>(dims_[a]);
    }
    return index;
}

JointDist JointDist::marginal(std::span<const int> axes) const
{
    std::vector<int> out_dims;
    for (int a : axes) {
        if (a < 0 || a >= rank()) {
            throw std::out_of_range("JointDist::marginal: axis out of range");
        }
        out_dims.push_back(dims_[a]);
    }
    std::vector<double> out(checked_size(out_dims), 0.0);
    std::vector<int> index(dims_.size(), 0);
    for (std::size_t flat = 0; flat < probs_.size(); ++flat) {
        std::size_t o = 0;
        for (int a : axes) {
            o = o * static_cast<std::size_t>(dims_[a]) + static_cast<std::size_t>(index[a]);
        }
        out[o] += probs_[flat];
        // Odometer increment, last axis fastest.
        for (std::size_t a = dims_.size(); a-- > 0;) {
            if (++index[a] < dims_[a]) {
                break;
            }
            index[a] = 0;
        }
    }
    // Summation can drift by a few ulps; renormalize so the invariant holds.
    double total = std::accumulate(out.begin(), out.end(), 0.0);
    for (double& p : out) {
        p /= total;
    }
    return JointDist(std::move(out_dims), std::move(out));
}

double entropy(std::span<const double> p)
{
    double h = 0.0;
    for (double v : p) {
        if (v > 0.0) {
            h -= v * std::log(v);
        }
    }
    return h;
}

double entropy(const JointDist& joint)
{
    return entropy(joint.probs());
}

double kl_divergence(std::span<const double> p, std::span<const double> q)
{
    if (p.size() != q.size()) {
        throw std::invalid_argument("kl_divergence: size mismatch");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            if (!(q[i] > 0.0)) {
                return std::numeric_limits<double>::infinity();
            }
            kl += p[i] * std::log(p[i] / q[i]);
        }
    }
    return kl;
}

namespace {

std::vector<int> concat(std::span<const int> a, std::span<const int> b)
{
    std::vector<int> out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

double marginal_entropy(const JointDist& joint, std::span<const int> axes)
{
    if (axes.empty()) {
        return 0.0;
    }
    return entropy(joint.marginal(axes));
}

}  // namespace

double mutual_information(const JointDist& joint, std::span<const int> a, std::span<const int> b)
{
    return marginal_entropy(joint, a) + marginal_entropy(joint, b) -
           marginal_entropy(joint, concat(a, b));
}

double conditional_mutual_information(const JointDist& joint, std::span<const int> a,
                                      std::span<const int> b, std::span<const int> c)
{
    const auto ac = concat(a, c);
    const auto bc = concat(b, c);
    const auto abc = concat(ac, b);
    return marginal_entropy(joint, ac) + marginal_entropy(joint, bc) -
           marginal_entropy(joint, abc) - marginal_entropy(joint, c);
}

double total_correlation(const JointDist& joint)
{
    double sum = 0.0;
    for (int a = 0; a < joint.rank(); ++a) {
        const int axis[] = {a};
        sum += marginal_entropy(joint, axis);
    }
    return sum - entropy(joint);
}

}  // namespace imdm
