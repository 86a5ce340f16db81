#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "imdm/denoiser.hpp"

namespace imdm {

struct DecodeConfig {
    int steps = 1;
    ModelKind mode = ModelKind::imdm;
    int length = 2;
    std::map<int, int> conditioning;  // position -> fixed token
    std::uint64_t seed = 0;
    bool record_trajectory = false;
    Schedule schedule;

    void validate(const DenoiserConfig& model) const;
};

struct StepLog {
    double t = 1.0;
    double s = 0.0;
    std::vector<int> masked_before;
    std::vector<int> unmasked;
    std::vector<int> kept;       // IMDM: still masked, same noise
    std::vector<int> refreshed;  // IMDM: still masked, noise redrawn
};

struct DecodeResult {
    Sequence sequence;
    // IMDM: noise each position carried at t = 1, and the noise it held at the
    // moment it was unmasked. Conditioned positions carry none.
    NoiseAssignment initial_noise;
    NoiseAssignment unmask_noise;
    std::vector<StepLog> trajectory;
};

// One trajectory driven entirely by `rng`: rng.split(0) feeds the noise
// lifecycle (draws and keep/refresh coins), rng.split(1) the unmask coins and
// token draws. MDM and a zero-initialized IMDM therefore decode identically
// from the same rng.
DecodeResult decode(const DenoiserParams& params, const DecodeConfig& config, const Rng& rng);

// n trajectories; trajectory k is decode(params, config, rng.split(k)) evaluated
// in fixed chunks, so the output does not depend on `workers`.
std::vector<DecodeResult> decode_batch(const DenoiserParams& params, const DecodeConfig& config,
                                       std::size_t n, const Rng& rng, int workers = 1);

inline constexpr std::size_t kDecodeChunk = 256;

}  // namespace imdm
