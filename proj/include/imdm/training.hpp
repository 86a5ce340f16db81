#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "imdm/denoiser.hpp"
#include "imdm/info.hpp"

namespace imdm {

struct TrainConfig {
    int iterations = 20000;
    int batch_size = 256;
    double learning_rate = 1e-3;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    int eval_every = 100;
    double log_prob_floor = kDefaultLogProbFloor;

    // iterations may be 0 (a no-op run); everything else must be positive.
    void validate() const;
};

struct DatasetSpec {
    enum class Kind { synthetic_pair, explicit_list };

    Kind kind = Kind::synthetic_pair;
    int n_data = 2;
    int length = 2;
    std::vector<Sequence> sequences;
    std::vector<double> weights;

    // {00, 11} with probability 1/2 each.
    static DatasetSpec synthetic_pair();
    static DatasetSpec explicit_list(int n_data, std::vector<Sequence> sequences,
                                     std::vector<double> weights);

    void validate() const;
    const Sequence& sample(Rng& rng) const;
    // Data distribution as an explicit table over V^L.
    JointDist joint() const;
};

// Forward-noises x at time t: each position is masked independently with
// probability 1 - alpha(t). For IMDM, masked positions take the stored noise
// when given (coupled training) and a fresh draw otherwise.
ModelInput noise_sequence(const Sequence& x, double t, const Schedule& schedule,
                          const DenoiserConfig& model, Rng& rng,
                          const NoiseAssignment* stored = nullptr);

// batch_size items: x ~ dataset, t ~ U(0,1), forward noising. Item k draws from
// rng.split(k), so the batch does not depend on evaluation order.
std::vector<TrainExample> make_batch(const DatasetSpec& dataset, const Schedule& schedule,
                                     const DenoiserConfig& model, int batch_size, Rng& rng);

struct LossPoint {
    int iteration = 0;
    double loss = 0.0;  // mean batch loss over the preceding window
};

struct TrainResult {
    DenoiserParams params;
    std::vector<LossPoint> trace;
};

class Adam {
public:
    Adam(std::size_t n, const TrainConfig& config);
    void step(std::vector<double>& params, const std::vector<double>& grads);

private:
    TrainConfig config_;
    std::vector<double> m_, v_;
    long long t_ = 0;
};

// Batch loss and gradient for one iteration; the Rng is private to that
// iteration.
using Objective = std::function<LossAndGrads(const DenoiserParams&, Rng&)>;
// Called after every update with (iteration, batch loss); may throw to stop.
using StepMonitor = std::function<void(int, double)>;

// Adam loop shared by pretraining and distillation. Throws TrainingAbort on a
// non-finite loss, gradient or parameter.
TrainResult optimize(DenoiserParams params, const TrainConfig& config, const Objective& objective,
                     const std::string& label, const StepMonitor& monitor = {});

TrainResult train(DenoiserParams params, const TrainConfig& config, const DatasetSpec& dataset,
                  const Schedule& schedule);

}  // namespace imdm
