#pragma once

#include <cstddef>
#include <span>
#include <vector>

// Explicit joint tables and the information measures used by the oracles.
// Natural log throughout; 0 log 0 = 0.
namespace imdm {

// Probability table over a product of finite supports, row-major with the
// first axis most significant (flat order is lexicographic).
class JointDist {
public:
    static constexpr std::size_t kDefaultCapacity = 1'000'000;
    static constexpr double kNormTolerance = 1e-12;

    JointDist() = default;
    JointDist(std::vector<int> dims, std::vector<double> probs);

    static JointDist from_weights(std::vector<int> dims, std::vector<double> weights);
    // Number of cells of a product support; throws CapacityError above `capacity`.
    static std::size_t checked_size(std::span<const int> dims,
                                    std::size_t capacity = kDefaultCapacity);

    std::span<const int> dims() const { return dims_; }
    int rank() const { return static_cast<int>(dims_.size()); }
    std::size_t size() const { return probs_.size(); }
    std::span<const double> probs() const { return probs_; }
    double operator[](std::size_t flat) const { return probs_[flat]; }
    double prob(std::span<const int> index) const { return probs_[flat_index(index)]; }

    std::size_t flat_index(std::span<const int> index) const;
    std::vector<int> unravel(std::size_t flat) const;

    // Marginal over the listed axes, in the listed order.
    JointDist marginal(std::span<const int> axes) const;

private:
    std::vector<int> dims_;
    std::vector<double> probs_;
};

double entropy(std::span<const double> p);
double entropy(const JointDist& joint);

// KL(p || q); +infinity when q vanishes where p has mass.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// I(A; B) with A, B given as disjoint axis lists of the joint.
double mutual_information(const JointDist& joint, std::span<const int> a, std::span<const int> b);

// I(A; B | C).
double conditional_mutual_information(const JointDist& joint, std::span<const int> a,
                                      std::span<const int> b, std::span<const int> c);

// Sum of single-axis entropies minus the joint entropy.
double total_correlation(const JointDist& joint);

}  // namespace imdm
