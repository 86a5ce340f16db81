#pragma once

#include <array>
#include <cstdint>
#include <span>

namespace imdm {

// Counter-based generator (Philox4x32-10) addressed by (seed, stream, counter).
//
// Draw k of a given (seed, stream) is a pure function of those three values, so
// results do not depend on how work is split across workers. split(i) derives
// a child stream; children of distinct indices never share a stream id with
// each other or with the parent in practice (64-bit mixed ids).
class Rng {
public:
    using result_type = std::uint64_t;

    explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return ~result_type{0}; }

    result_type operator()();

    // Uniform on [0, 1) with 53 random bits.
    double uniform();
    double uniform(double lo, double hi);
    double normal();
    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n);
    // Inverse-CDF draw from an (unnormalized allowed) weight vector.
    std::size_t categorical(std::span<const double> probs);
    bool bernoulli(double p);

    Rng split(std::uint64_t index) const;

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

private:
    void refill();

    std::uint64_t seed_;
    std::uint64_t stream_;
    std::uint64_t counter_ = 0;
    std::array<std::uint64_t, 2> buffer_{};
    int buffered_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

// One Philox4x32 block with 10 rounds (Salmon et al. parameters).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key);

}  // namespace imdm
