#include "imdm/sampler.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>

namespace imdm {

namespace {

struct Trajectory {
    Rng noise_rng;
    Rng decision_rng;
    ModelInput state;
    DecodeResult result;
};

std::vector<DecodeResult> decode_chunk(const DenoiserParams& params, const DecodeConfig& config,
                                       std::span<const Rng> rngs)
{
    const Schedule& schedule = config.schedule;
    const TimeGrid grid(config.steps);
    const bool imdm = config.mode == ModelKind::imdm;
    const auto L = static_cast<std::size_t>(config.length);
    const NoiseSpec& noise = params.config.noise;

    std::vector<Trajectory> traj;
    traj.reserve(rngs.size());
    for (const Rng& rng : rngs) {
        Trajectory tr{rng.split(0), rng.split(1), {}, {}};
        tr.state.z = LatentSequence::fully_masked(L);
        tr.state.noise = NoiseAssignment::none(L);
        for (const auto& [pos, tok] : config.conditioning) {
            tr.state.z.tokens[static_cast<std::size_t>(pos)] = tok;
        }
        if (imdm) {
            tr.state.noise = NoiseAssignment::draw(tr.state.z, noise, tr.noise_rng);
        }
        tr.result.initial_noise = tr.state.noise;
        tr.result.unmask_noise = NoiseAssignment::none(L);
        traj.push_back(std::move(tr));
    }

    std::vector<ModelInput> inputs(traj.size());
    for (int k = 0; k < grid.steps(); ++k) {
        const double t = grid[static_cast<std::size_t>(k)];
        const double s = grid[static_cast<std::size_t>(k) + 1];
        const double a_t = schedule.reverse_alpha(t);
        const double a_s = schedule.reverse_alpha(s);
        const double unmask = (a_s - a_t) / (1.0 - a_t);
        const double keep = a_t / a_s;

        for (std::size_t i = 0; i < traj.size(); ++i) {
            traj[i].state.t = t;
            inputs[i] = traj[i].state;
        }
        const auto preds = predict_batch(inputs, params);

        for (std::size_t i = 0; i < traj.size(); ++i) {
            auto& tr = traj[i];
            StepLog log{t, s, {}, {}, {}, {}};
            for (std::size_t pos = 0; pos < L; ++pos) {
                if (!tr.state.z.is_masked(pos)) {
                    continue;
                }
                log.masked_before.push_back(static_cast<int>(pos));
                if (tr.decision_rng.bernoulli(unmask)) {
                    const auto token = preds[i][pos].sample(tr.decision_rng);
                    tr.state.z.tokens[pos] = static_cast<int>(token);
                    if (imdm) {
                        tr.result.unmask_noise.eps[pos] = std::move(tr.state.noise.eps[pos]);
                        tr.state.noise.eps[pos].clear();
                    }
                    log.unmasked.push_back(static_cast<int>(pos));
                } else if (imdm) {
                    if (tr.noise_rng.bernoulli(keep)) {
                        log.kept.push_back(static_cast<int>(pos));
                    } else {
                        tr.state.noise.eps[pos] = noise.draw(tr.noise_rng);
                        log.refreshed.push_back(static_cast<int>(pos));
                    }
                }
            }
            if (config.record_trajectory) {
                tr.result.trajectory.push_back(std::move(log));
            }
        }
    }

    std::vector<DecodeResult> out;
    out.reserve(traj.size());
    for (auto& tr : traj) {
        if (tr.state.z.masked_count() != 0) {
            throw std::logic_error("decode: sequence still masked after the final step");
        }
        tr.result.sequence.tokens = tr.state.z.tokens;
        out.push_back(std::move(tr.result));
    }
    return out;
}

}  // namespace

void DecodeConfig::validate(const DenoiserConfig& model) const
{
    if (steps < 1) {
        throw std::invalid_argument("decode: steps must be >= 1");
    }
    if (length != model.length) {
        throw std::invalid_argument("decode: length does not match the model");
    }
    if (mode != model.kind) {
        throw std::invalid_argument(std::string("decode: mode ") + to_string(mode) +
                                    " does not match a " + to_string(model.kind) + " model");
    }
    for (const auto& [pos, tok] : conditioning) {
        if (pos < 0 || pos >= length || tok < 0 || tok >= model.n_data) {
            throw std::invalid_argument("decode: invalid conditioning entry");
        }
    }
}

DecodeResult decode(const DenoiserParams& params, const DecodeConfig& config, const Rng& rng)
{
    config.validate(params.config);
    return decode_chunk(params, config, std::span(&rng, 1)).front();
}

std::vector<DecodeResult> decode_batch(const DenoiserParams& params, const DecodeConfig& config,
                                       std::size_t n, const Rng& rng, int workers)
{
    config.validate(params.config);
    if (n == 0) {
        throw std::invalid_argument("decode_batch: n must be >= 1");
    }
    std::vector<Rng> rngs;
    rngs.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        rngs.push_back(rng.split(k));
    }
    std::vector<DecodeResult> out(n);
    const std::size_t chunks = (n + kDecodeChunk - 1) / kDecodeChunk;
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t c = next++; c < chunks; c = next++) {
            const std::size_t lo = c * kDecodeChunk;
            const std::size_t len = std::min(kDecodeChunk, n - lo);
            auto part = decode_chunk(params, config, std::span(rngs).subspan(lo, len));
            std::move(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(chunks)));
    if (n_threads == 1) {
        work();
        return out;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    {
        std::vector<std::jthread> pool;
        for (int i = 0; i < n_threads; ++i) {
            pool.emplace_back([&] {
                try {
                    work();
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                    next = chunks;
                }
            });
        }
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
    return out;
}

}  // namespace imdm
