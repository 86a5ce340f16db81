#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "imdm/sampler.hpp"
#include "imdm/training.hpp"

namespace imdm {

enum class TargetMode { exact, monte_carlo, automatic };

struct TargetOptions {
    TargetMode mode = TargetMode::automatic;
    int mc_rollouts = 8;
    int n_eps_quad = 64;
    // automatic mode enumerates when at most this many states are reachable.
    std::size_t exact_state_limit = 64;
    std::size_t capacity = 1'000'000;
    Schedule schedule;
};

struct DistillConfig {
    int rounds = 2;
    int iterations_per_round = 2000;
    int inner_steps = 2;
    std::string kl_direction = "teacher_to_student";
    // Training targets enumerate the discrete branches exactly and integrate
    // fresh noise with one draw per item; the batch averages those draws.
    TargetOptions targets{.mode = TargetMode::exact, .mc_rollouts = 8, .n_eps_quad = 1, .schedule = Schedule()};
    TrainConfig sdtt;  // optimizer settings; iterations come from iterations_per_round

    int coupling_size = 2000;
    int coupling_steps = 64;
    TrainConfig redi{.iterations = 12000};

    int workers = 1;

    void validate() const;
};

// Per-position targets over V plus the mask (index N) at time s.
using PositionTargets = std::vector<Categorical>;

// Any batched x-predictor; the trained denoiser is one, exact oracles another.
using BatchPredictor =
    std::function<std::vector<std::vector<Categorical>>(std::span<const ModelInput>)>;

BatchPredictor model_predictor(const DenoiserParams& params);

// Composes `inner_steps` teacher reverse steps from (z_t, noise) at t down to s.
// Exact mode enumerates every reachable state, marginalizing refreshed noise
// over n_eps_quad draws; Monte Carlo mode averages mc_rollouts rollouts and
// replaces the last step by its expectation.
PositionTargets sdtt_targets(const DenoiserParams& teacher, const ModelInput& start, double s,
                             int inner_steps, const TargetOptions& options, Rng& rng);
PositionTargets sdtt_targets(const BatchPredictor& teacher, const DenoiserConfig& model,
                             const ModelInput& start, double s, int inner_steps,
                             const TargetOptions& options, Rng& rng);

// Exact joint law of z_s (tokens, kMasked for masked) after composing the
// teacher steps; same enumeration as exact-mode targets.
std::map<std::vector<int>, double> sdtt_exact_joint(const BatchPredictor& teacher,
                                                    const DenoiserConfig& model,
                                                    const ModelInput& start, double s,
                                                    int inner_steps, int n_eps_quad, Rng& rng,
                                                    std::size_t capacity = 1'000'000,
                                                    const Schedule& schedule = Schedule());

// Number of joint states exact composition would enumerate.
std::size_t sdtt_exact_states(const DenoiserConfig& model, int inner_steps, int n_eps_quad);

// Student's one-step posterior at position level, KL(target || student) and
// its gradient with respect to the student parameters, averaged over the
// masked positions of the batch.
struct SdttExample {
    ModelInput input;
    double s = 0.0;
    PositionTargets targets;
};

LossAndGrads sdtt_loss_and_grads(std::span<const SdttExample> batch, const DenoiserParams& student,
                                 const Schedule& schedule = Schedule());

// Tracks the mean loss of the first `window` updates and throws TrainingAbort
// once the loss stays above factor times that level (and above floor) for
// `patience` consecutive updates.
class DivergenceGuard {
public:
    explicit DivergenceGuard(int window, double factor = 10.0, double floor = 1e-3, int patience = 1000);

    void observe(int iteration, double loss);
    double opening() const { return opening_; }

private:
    int window_;
    double factor_, floor_;
    int patience_;
    double opening_ = 0.0;
    int above_ = 0;
};

struct SdttRoundResult {
    TrainResult student;
    int student_steps = 1;  // student grid size this round was distilled onto
    double initial_loss = 0.0;
};

// One round: the student learns to cover `inner_steps` teacher steps with one
// step on a grid of `student_steps` knots.
SdttRoundResult sdtt_round(const DenoiserParams& student, const DenoiserParams& teacher,
                           const DistillConfig& config, int student_steps,
                           const DatasetSpec& dataset, const Schedule& schedule,
                           std::uint64_t seed);

// All rounds with step-halving: the first teacher runs inner_steps^rounds steps
// and the final student is a one-step model. Returns one result per round.
std::vector<SdttRoundResult> sdtt_distill(const DenoiserParams& base, const DistillConfig& config,
                                          const DatasetSpec& dataset, const Schedule& schedule);

struct CouplingPair {
    NoiseAssignment noise;
    Sequence sequence;
};

struct CouplingSet {
    std::vector<CouplingPair> pairs;
    std::string teacher_id;
    int steps = 0;
    std::uint64_t seed = 0;
};

// Teacher samples paired with the noise each position held when it unmasked.
CouplingSet redi_build_coupling(const DenoiserParams& teacher, int steps, int n_pairs,
                                const Rng& rng, int workers = 1, std::string teacher_id = "",
                                const Schedule& schedule = Schedule());

// NELBO training on the coupled sequences, reusing the stored noise for every
// position the forward process masks.
TrainResult redi_train(DenoiserParams student, const CouplingSet& coupling,
                       const TrainConfig& config, const Schedule& schedule);

struct CombinedResult {
    DenoiserParams final_model;
    std::vector<SdttRoundResult> sdtt_rounds;
    CouplingSet coupling;
    std::vector<LossPoint> redi_trace;
};

// SDTT rounds followed by ReDi on the SDTT student; rounds = 0 or
// coupling_size = 0 skip the respective stage.
CombinedResult combined_pipeline(const DenoiserParams& base, const DistillConfig& config,
                                 const DatasetSpec& dataset, const Schedule& schedule);

}  // namespace imdm
