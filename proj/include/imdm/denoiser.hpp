#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "imdm/core.hpp"

namespace imdm {

enum class ModelKind { mdm, imdm };
enum class NoiseDistribution { uniform, gaussian };

const char* to_string(ModelKind kind);
const char* to_string(NoiseDistribution dist);

// Distribution of the continuous noise attached to a masked position.
struct NoiseSpec {
    NoiseDistribution distribution = NoiseDistribution::uniform;  // U(-1,1) or N(0,1)
    int dim = 64;
    double scale = 1.0;

    void validate() const;
    std::vector<double> draw(Rng& rng) const;
    // CDF of the first coordinate, mapping a draw to [0, 1).
    double unit_coordinate(std::span<const double> eps) const;
};

struct DenoiserConfig {
    ModelKind kind = ModelKind::imdm;
    int n_data = 2;
    int length = 2;
    int d_embed = 16;
    int width = 64;
    NoiseSpec noise;

    void validate() const;
    bool uses_noise() const { return kind == ModelKind::imdm; }
};

// Named block of the flat parameter vector. Matrices are stored row-major with
// dims {rows, cols} = {out, in}.
struct ParamEntry {
    std::string name;
    std::vector<std::size_t> dims;
    std::size_t offset = 0;
    std::size_t size = 0;
};

class ParamLayout {
public:
    explicit ParamLayout(const DenoiserConfig& config);

    std::span<const ParamEntry> entries() const { return entries_; }
    std::size_t total() const { return total_; }
    const ParamEntry& at(const std::string& name) const;
    bool contains(const std::string& name) const;

private:
    void add(std::string name, std::vector<std::size_t> dims);

    std::vector<ParamEntry> entries_;
    std::size_t total_ = 0;
};

struct DenoiserParams {
    DenoiserConfig config;
    std::vector<double> values;

    ParamLayout layout() const { return ParamLayout(config); }
    bool all_finite() const;
};

// PyTorch-style initialization; the noise-MLP output layer starts at exactly 0.
DenoiserParams init_params(const DenoiserConfig& config, Rng& rng);

// IMDM that wraps trained MDM weights: shared blocks are copied, the noise MLP
// input layer is freshly initialized and its output layer is zero.
DenoiserParams imdm_from_mdm(const DenoiserParams& mdm, const NoiseSpec& noise, Rng& rng);

// Per position: the noise vector of a masked position, empty otherwise.
struct NoiseAssignment {
    std::vector<std::vector<double>> eps;

    static NoiseAssignment none(std::size_t length) { return {std::vector<std::vector<double>>(length)}; }
    static NoiseAssignment draw(const LatentSequence& z, const NoiseSpec& spec, Rng& rng);
};

struct ModelInput {
    LatentSequence z;
    NoiseAssignment noise;
    double t = 1.0;
};

// Embedding of one position: E(token), or m + MLP(scale * eps) when masked.
Eigen::VectorXd embed(int token, std::span<const double> eps, const DenoiserParams& params);

// Intermediate activations of a batched forward pass (columns are batch items).
struct ForwardCache {
    Eigen::MatrixXd h0, a1, h1, a2, h2;
    Eigen::RowVectorXd t;
    Eigen::MatrixXd log_probs;  // (L*N) x B, position-major blocks of N
    // Noise-MLP activations for masked positions, one column per (item, pos).
    Eigen::MatrixXd eps_in, noise_a, noise_g;
    std::vector<std::pair<std::size_t, std::size_t>> noise_slots;
    std::vector<std::vector<int>> tokens;
};

ForwardCache forward(std::span<const ModelInput> batch, const DenoiserParams& params);

// Backpropagates dloss/dlogits ((L*N) x B) into a gradient with the flat layout.
std::vector<double> backward(const ForwardCache& cache, const Eigen::MatrixXd& dlogits,
                             const DenoiserParams& params);

std::vector<Categorical> predict(const ModelInput& input, const DenoiserParams& params);
std::vector<std::vector<Categorical>> predict_batch(std::span<const ModelInput> batch,
                                                    const DenoiserParams& params);

struct TrainExample {
    ModelInput input;
    Sequence x;
};

struct LossAndGrads {
    double loss = 0.0;
    std::vector<double> grads;
    std::size_t masked_positions = 0;
    std::size_t floored_positions = 0;
};

inline constexpr double kDefaultLogProbFloor = -30.0;

// Mean Rao-Blackwellized NELBO term over masked positions of the batch.
LossAndGrads loss_and_grads(std::span<const TrainExample> batch, const DenoiserParams& params,
                            const Schedule& schedule, double log_prob_floor = kDefaultLogProbFloor);

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central finite differences on randomly sampled coordinates.
GradCheckResult grad_check(const DenoiserParams& params, std::span<const TrainExample> batch,
                           const Schedule& schedule, double h, std::size_t n_coords, Rng& rng,
                           double log_prob_floor = kDefaultLogProbFloor);

double gelu(double x);
double gelu_grad(double x);

}  // namespace imdm
