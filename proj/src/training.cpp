#include "imdm/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace imdm {

void TrainConfig::validate() const
{
    if (iterations < 0) {
        throw std::invalid_argument("train.iterations must be >= 0");
    }
    if (batch_size < 1 || eval_every < 1) {
        throw std::invalid_argument("train.batch_size and train.eval_every must be >= 1");
    }
    if (!(learning_rate > 0.0) || !(adam_eps > 0.0)) {
        throw std::invalid_argument("train.learning_rate and train.adam_eps must be positive");
    }
    if (!(adam_beta1 > 0.0 && adam_beta1 < 1.0) || !(adam_beta2 > 0.0 && adam_beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in (0, 1)");
    }
    if (!(log_prob_floor < 0.0)) {
        throw std::invalid_argument("log_prob_floor must be negative");
    }
}

DatasetSpec DatasetSpec::synthetic_pair()
{
    DatasetSpec d;
    d.kind = Kind::synthetic_pair;
    d.n_data = 2;
    d.length = 2;
    d.sequences = {Sequence{{0, 0}}, Sequence{{1, 1}}};
    d.weights = {0.5, 0.5};
    return d;
}

DatasetSpec DatasetSpec::explicit_list(int n_data, std::vector<Sequence> sequences,
                                       std::vector<double> weights)
{
    DatasetSpec d;
    d.kind = Kind::explicit_list;
    d.n_data = n_data;
    d.length = sequences.empty() ? 0 : static_cast<int>(sequences.front().length());
    d.sequences = std::move(sequences);
    d.weights = std::move(weights);
    d.validate();
    return d;
}

void DatasetSpec::validate() const
{
    if (sequences.empty() || sequences.size() != weights.size()) {
        throw std::invalid_argument("dataset: need one weight per sequence");
    }
    if (length < 1) {
        throw std::invalid_argument("dataset: sequence length must be >= 1");
    }
    const Vocabulary vocab(n_data, false);
    for (const auto& s : sequences) {
        if (s.length() != static_cast<std::size_t>(length)) {
            throw std::invalid_argument("dataset: sequences must share one length");
        }
        validate_sequence(s, vocab);
    }
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw std::invalid_argument("dataset: negative weight");
        }
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) {
        throw std::invalid_argument("dataset: weights must sum to 1");
    }
}

const Sequence& DatasetSpec::sample(Rng& rng) const
{
    return sequences[rng.categorical(weights)];
}

JointDist DatasetSpec::joint() const
{
    validate();
    std::vector<int> dims(static_cast<std::size_t>(length), n_data);
    std::vector<double> table(JointDist::checked_size(dims), 0.0);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        std::size_t flat = 0;
        for (int tok : sequences[i].tokens) {
            flat = flat * static_cast<std::size_t>(n_data) + static_cast<std::size_t>(tok);
        }
        table[flat] += weights[i];
    }
    return JointDist::from_weights(std::move(dims), std::move(table));
}

ModelInput noise_sequence(const Sequence& x, double t, const Schedule& schedule,
                          const DenoiserConfig& model, Rng& rng, const NoiseAssignment* stored)
{
    const double alpha = schedule.alpha(t);
    ModelInput in;
    in.t = t;
    in.z.tokens = x.tokens;
    in.noise = NoiseAssignment::none(x.length());
    for (std::size_t i = 0; i < x.length(); ++i) {
        if (rng.bernoulli(1.0 - alpha)) {
            in.z.tokens[i] = kMasked;
            if (model.uses_noise()) {
                if (stored != nullptr && !stored->eps[i].empty()) {
                    in.noise.eps[i] = stored->eps[i];
                } else {
                    in.noise.eps[i] = model.noise.draw(rng);
                }
            }
        }
    }
    return in;
}

std::vector<TrainExample> make_batch(const DatasetSpec& dataset, const Schedule& schedule,
                                     const DenoiserConfig& model, int batch_size, Rng& rng)
{
    if (batch_size < 1) {
        throw std::invalid_argument("make_batch: batch_size must be >= 1");
    }
    std::vector<TrainExample> batch;
    batch.reserve(static_cast<std::size_t>(batch_size));
    for (int k = 0; k < batch_size; ++k) {
        Rng item = rng.split(static_cast<std::uint64_t>(k));
        const Sequence& x = dataset.sample(item);
        const double t = item.uniform();
        batch.push_back({noise_sequence(x, t, schedule, model, item), x});
    }
    return batch;
}

Adam::Adam(std::size_t n, const TrainConfig& config) : config_(config), m_(n, 0.0), v_(n, 0.0) {}

void Adam::step(std::vector<double>& params, const std::vector<double>& grads)
{
    ++t_;
    const double b1 = config_.adam_beta1, b2 = config_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        m_[i] = b1 * m_[i] + (1.0 - b1) * grads[i];
        v_[i] = b2 * v_[i] + (1.0 - b2) * grads[i] * grads[i];
        const double m_hat = m_[i] / c1;
        const double v_hat = v_[i] / c2;
        params[i] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.adam_eps);
    }
}

TrainResult optimize(DenoiserParams params, const TrainConfig& config, const Objective& objective,
                     const std::string& label, const StepMonitor& monitor)
{
    config.validate();
    Adam adam(params.values.size(), config);
    const Rng master(config.seed);
    TrainResult out;
    double window = 0.0;
    int window_count = 0;
    for (int it = 0; it < config.iterations; ++it) {
        Rng rng = master.split(static_cast<std::uint64_t>(it));
        const auto res = objective(params, rng);
        const bool grads_finite = std::all_of(res.grads.begin(), res.grads.end(),
                                              [](double g) { return std::isfinite(g); });
        if (!std::isfinite(res.loss) || !grads_finite) {
            std::ostringstream msg;
            msg << label << ": non-finite " << (std::isfinite(res.loss) ? "gradient" : "loss")
                << " at iteration " << it << " (loss " << res.loss << ", masked positions "
                << res.masked_positions << ")";
            throw TrainingAbort(msg.str());
        }
        adam.step(params.values, res.grads);
        if (!params.all_finite()) {
            throw TrainingAbort(label + ": parameters became non-finite at iteration " +
                                std::to_string(it));
        }
        if (monitor) {
            monitor(it, res.loss);
        }
        window += res.loss;
        ++window_count;
        if ((it + 1) % config.eval_every == 0 || it + 1 == config.iterations) {
            out.trace.push_back({it + 1, window / window_count});
            window = 0.0;
            window_count = 0;
        }
    }
    out.params = std::move(params);
    return out;
}

TrainResult train(DenoiserParams params, const TrainConfig& config, const DatasetSpec& dataset,
                  const Schedule& schedule)
{
    dataset.validate();
    if (dataset.n_data != params.config.n_data || dataset.length != params.config.length) {
        throw std::invalid_argument("train: dataset shape does not match the model");
    }
    const DenoiserConfig model = params.config;
    auto objective = [&](const DenoiserParams& p, Rng& rng) {
        const auto batch = make_batch(dataset, schedule, model, config.batch_size, rng);
        return loss_and_grads(batch, p, schedule, config.log_prob_floor);
    };
    return optimize(std::move(params), config, objective, "train");
}

}  // namespace imdm
