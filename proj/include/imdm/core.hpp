#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "imdm/rng.hpp"

namespace imdm {

// ----------------------------------------------------------------------------
// Error types. The CLI maps each to a distinct exit code.
// ----------------------------------------------------------------------------
struct CapacityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleStateError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainingAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ----------------------------------------------------------------------------
// Vocabulary: N data tokens, optionally followed by the absorbing mask index N.
// ----------------------------------------------------------------------------
class Vocabulary {
public:
    Vocabulary(int n_data, bool has_mask_token);

    int n_data() const { return n_data_; }
    bool has_mask_token() const { return has_mask_; }
    // Size of the extended support (N or N + 1).
    int size() const { return n_data_ + (has_mask_ ? 1 : 0); }
    int mask_index() const;
    bool is_data(int index) const { return index >= 0 && index < n_data_; }

private:
    int n_data_;
    bool has_mask_;
};

// ----------------------------------------------------------------------------
// Noise schedule alpha(t) = 1 - t, clipped to [clip_eps, 1 - clip_eps].
// ----------------------------------------------------------------------------
struct AlphaValue {
    double alpha;
    double alpha_prime;
};

class Schedule {
public:
    enum class Kind { linear };

    explicit Schedule(double clip_eps = 1e-4, Kind kind = Kind::linear);

    AlphaValue alpha_at(double t) const;
    double alpha(double t) const { return alpha_at(t).alpha; }
    double clip_eps() const { return clip_eps_; }
    Kind kind() const { return kind_; }

    // Survival probability used by the reverse process on a time grid. The
    // reverse chain starts fully masked at t = 1 and ends fully unmasked at
    // t = 0, so the grid endpoints use the unclipped values 0 and 1.
    double reverse_alpha(double t) const;

private:
    Kind kind_;
    double clip_eps_;
};

AlphaValue alpha_at(const Schedule& schedule, double t);

// ----------------------------------------------------------------------------
// Uniform time grid t_k = 1 - k / T.
// ----------------------------------------------------------------------------
class TimeGrid {
public:
    explicit TimeGrid(int steps);

    int steps() const { return static_cast<int>(knots_.size()) - 1; }
    std::span<const double> knots() const { return knots_; }
    double operator[](std::size_t k) const { return knots_[k]; }

private:
    std::vector<double> knots_;
};

TimeGrid make_grid(int steps);

// ----------------------------------------------------------------------------
// Categorical distribution over a finite support.
// ----------------------------------------------------------------------------
class Categorical {
public:
    static constexpr double kNormTolerance = 1e-9;

    Categorical() = default;
    // Validates non-negativity and normalization (within kNormTolerance).
    explicit Categorical(std::vector<double> probs);

    static Categorical uniform(std::size_t n);
    static Categorical delta(std::size_t n, std::size_t index);
    // Normalizes non-negative weights; throws if they sum to zero.
    static Categorical from_weights(std::vector<double> weights);

    std::size_t size() const { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    std::span<const double> probs() const { return probs_; }
    double sum() const;

    std::size_t sample(Rng& rng) const { return rng.categorical(probs_); }

private:
    std::vector<double> probs_;
};

// ----------------------------------------------------------------------------
// A clean data sequence.
// ----------------------------------------------------------------------------
struct Sequence {
    std::vector<int> tokens;

    std::size_t length() const { return tokens.size(); }
    bool operator==(const Sequence&) const = default;
};

void validate_sequence(const Sequence& seq, const Vocabulary& vocab);

// ----------------------------------------------------------------------------
// Per-position latent state: a data token id, or kMasked. Under IMDM a masked
// position additionally carries a noise vector (see denoiser.hpp).
// ----------------------------------------------------------------------------
inline constexpr int kMasked = -1;

struct LatentSequence {
    std::vector<int> tokens;

    static LatentSequence fully_masked(std::size_t length)
    {
        return {std::vector<int>(length, kMasked)};
    }
    static LatentSequence from(const Sequence& seq) { return {seq.tokens}; }

    std::size_t length() const { return tokens.size(); }
    bool is_masked(std::size_t i) const { return tokens[i] == kMasked; }
    std::size_t masked_count() const;
    bool operator==(const LatentSequence&) const = default;
};

}  // namespace imdm
