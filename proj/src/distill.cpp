#include "imdm/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace imdm {

namespace {

// Joint state code per position: a token id, kOrig for "masked with the
// starting noise", or kFresh + q for "masked with quadrature draw q".
constexpr int kOrigOffset = 0;
constexpr int kFreshOffset = 1;

struct StepProbs {
    double unmask;
    double keep;
};

std::vector<double> inner_knots(double t, double s, int inner_steps)
{
    std::vector<double> knots(static_cast<std::size_t>(inner_steps) + 1);
    for (int j = 0; j <= inner_steps; ++j) {
        knots[static_cast<std::size_t>(j)] = t - (t - s) * j / inner_steps;
    }
    knots.back() = s;
    return knots;
}

StepProbs step_probs(const Schedule& schedule, double u, double v)
{
    const double a_u = schedule.reverse_alpha(u);
    const double a_v = schedule.reverse_alpha(v);
    return {(a_v - a_u) / (1.0 - a_u), a_u / a_v};
}

void check_start(const DenoiserConfig& model, const ModelInput& start, double s, int inner_steps)
{
    if (start.z.length() != static_cast<std::size_t>(model.length) ||
        start.noise.eps.size() != start.z.length()) {
        throw std::invalid_argument("sdtt: start state does not match the model length");
    }
    if (!(s >= 0.0 && s < start.t && start.t <= 1.0)) {
        throw std::invalid_argument("sdtt: need 0 <= s < t <= 1");
    }
    if (inner_steps < 1) {
        throw std::invalid_argument("sdtt: inner_steps must be >= 1");
    }
    if (model.uses_noise()) {
        for (std::size_t i = 0; i < start.z.length(); ++i) {
            if (start.z.is_masked(i) &&
                start.noise.eps[i].size() != static_cast<std::size_t>(model.noise.dim)) {
                throw std::invalid_argument("sdtt: masked start position lacks a noise vector");
            }
        }
    }
}

class ExactComposer {
public:
    ExactComposer(const BatchPredictor& teacher, const DenoiserConfig& model, const ModelInput& start,
                  int n_eps_quad, Rng& rng, std::size_t capacity)
        : teacher_(teacher), model_(model), start_(start), capacity_(capacity)
    {
        if (model.uses_noise()) {
            if (n_eps_quad < 1) {
                throw std::invalid_argument("sdtt: n_eps_quad must be >= 1");
            }
            for (int q = 0; q < n_eps_quad; ++q) {
                quad_.push_back(model.noise.draw(rng));
            }
        }
    }

    using StateMap = std::map<std::vector<int>, double>;

    StateMap initial() const
    {
        std::vector<int> codes(start_.z.tokens);
        for (auto& c : codes) {
            if (c == kMasked) {
                c = model_.n_data + kOrigOffset;
            }
        }
        return {{codes, 1.0}};
    }

    // Advances every state one teacher step; the result keeps full noise
    // identity unless `merge_masks`, which collapses masked codes to kMasked.
    StateMap advance(const StateMap& states, double u, double v, const Schedule& schedule,
                     bool merge_masks) const
    {
        const auto preds = predict_states(states, u);
        const StepProbs sp = step_probs(schedule, u, v);
        const int N = model_.n_data;
        const auto Q = static_cast<int>(quad_.size());
        StateMap next;
        std::size_t k = 0;
        for (const auto& [codes, w] : states) {
            std::vector<std::vector<std::pair<int, double>>> options(codes.size());
            for (std::size_t pos = 0; pos < codes.size(); ++pos) {
                auto& opt = options[pos];
                if (codes[pos] < N) {
                    opt.emplace_back(codes[pos], 1.0);
                    continue;
                }
                for (int tok = 0; tok < N; ++tok) {
                    const double p = sp.unmask * preds[k][pos][static_cast<std::size_t>(tok)];
                    if (p > 0.0) {
                        opt.emplace_back(tok, p);
                    }
                }
                const double stay = 1.0 - sp.unmask;
                if (!(stay > 0.0)) {
                    continue;
                }
                if (merge_masks) {
                    opt.emplace_back(kMasked, stay);
                } else if (!model_.uses_noise()) {
                    opt.emplace_back(codes[pos], stay);
                } else {
                    if (sp.keep > 0.0) {
                        opt.emplace_back(codes[pos], stay * sp.keep);
                    }
                    const double fresh = stay * (1.0 - sp.keep) / Q;
                    if (fresh > 0.0) {
                        for (int q = 0; q < Q; ++q) {
                            opt.emplace_back(N + kFreshOffset + q, fresh);
                        }
                    }
                }
            }
            // Odometer over the per-position option lists.
            std::vector<std::size_t> idx(codes.size(), 0);
            std::vector<int> out(codes.size());
            while (true) {
                double p = w;
                for (std::size_t pos = 0; pos < codes.size(); ++pos) {
                    out[pos] = options[pos][idx[pos]].first;
                    p *= options[pos][idx[pos]].second;
                }
                next[out] += p;
                if (next.size() > capacity_) {
                    throw CapacityError("sdtt: exact composition exceeds " +
                                        std::to_string(capacity_) + " states");
                }
                std::size_t pos = 0;
                while (pos < codes.size() && ++idx[pos] == options[pos].size()) {
                    idx[pos++] = 0;
                }
                if (pos == codes.size()) {
                    break;
                }
            }
            ++k;
        }
        return next;
    }

    // Expected last step, reduced to per-position laws over V plus mask.
    PositionTargets finish(const StateMap& states, double u, double v, const Schedule& schedule) const
    {
        const auto preds = predict_states(states, u);
        const StepProbs sp = step_probs(schedule, u, v);
        const int N = model_.n_data;
        const std::size_t L = start_.z.length();
        std::vector<std::vector<double>> acc(L, std::vector<double>(static_cast<std::size_t>(N) + 1, 0.0));
        std::size_t k = 0;
        for (const auto& [codes, w] : states) {
            for (std::size_t pos = 0; pos < L; ++pos) {
                if (codes[pos] < N) {
                    acc[pos][static_cast<std::size_t>(codes[pos])] += w;
                    continue;
                }
                for (int tok = 0; tok < N; ++tok) {
                    acc[pos][static_cast<std::size_t>(tok)] +=
                        w * sp.unmask * preds[k][pos][static_cast<std::size_t>(tok)];
                }
                acc[pos][static_cast<std::size_t>(N)] += w * (1.0 - sp.unmask);
            }
            ++k;
        }
        PositionTargets out;
        out.reserve(L);
        for (auto& row : acc) {
            out.emplace_back(std::move(row));
        }
        return out;
    }

private:
    std::vector<std::vector<Categorical>> predict_states(const StateMap& states, double u) const
    {
        const int N = model_.n_data;
        std::vector<ModelInput> inputs;
        inputs.reserve(states.size());
        for (const auto& [codes, w] : states) {
            ModelInput in;
            in.t = u;
            in.z.tokens.assign(codes.size(), kMasked);
            in.noise = NoiseAssignment::none(codes.size());
            for (std::size_t pos = 0; pos < codes.size(); ++pos) {
                if (codes[pos] < N) {
                    in.z.tokens[pos] = codes[pos];
                } else if (model_.uses_noise()) {
                    in.noise.eps[pos] = codes[pos] == N + kOrigOffset
                                            ? start_.noise.eps[pos]
                                            : quad_[static_cast<std::size_t>(codes[pos] - N - kFreshOffset)];
                }
            }
            inputs.push_back(std::move(in));
        }
        return teacher_(inputs);
    }

    const BatchPredictor& teacher_;
    const DenoiserConfig& model_;
    const ModelInput& start_;
    std::size_t capacity_;
    std::vector<std::vector<double>> quad_;
};

PositionTargets exact_targets(const BatchPredictor& teacher, const DenoiserConfig& model,
                              const ModelInput& start, double s, int inner_steps,
                              const TargetOptions& options, Rng& rng)
{
    const Schedule& schedule = options.schedule;
    const auto knots = inner_knots(start.t, s, inner_steps);
    ExactComposer composer(teacher, model, start, options.n_eps_quad, rng, options.capacity);
    auto states = composer.initial();
    for (int j = 0; j + 1 < inner_steps; ++j) {
        const auto J = static_cast<std::size_t>(j);
        states = composer.advance(states, knots[J], knots[J + 1], schedule, false);
    }
    const auto last = static_cast<std::size_t>(inner_steps - 1);
    return composer.finish(states, knots[last], knots[last + 1], schedule);
}

PositionTargets monte_carlo_targets(const BatchPredictor& teacher, const DenoiserConfig& model,
                                    const ModelInput& start, double s, int inner_steps,
                                    const TargetOptions& options, Rng& rng)
{
    if (options.mc_rollouts < 1) {
        throw std::invalid_argument("sdtt: mc_rollouts must be >= 1");
    }
    const Schedule& schedule = options.schedule;
    const auto knots = inner_knots(start.t, s, inner_steps);
    const auto M = static_cast<std::size_t>(options.mc_rollouts);
    const std::size_t L = start.z.length();
    const int N = model.n_data;
    std::vector<Rng> rngs;
    rngs.reserve(M);
    for (std::size_t m = 0; m < M; ++m) {
        rngs.push_back(rng.split(m));
    }
    std::vector<ModelInput> states(M, start);

    for (int j = 0; j + 1 < inner_steps; ++j) {
        const auto J = static_cast<std::size_t>(j);
        const StepProbs sp = step_probs(schedule, knots[J], knots[J + 1]);
        for (auto& st : states) {
            st.t = knots[J];
        }
        // Rollouts coincide before the first step; evaluate that state once.
        const auto preds = j == 0 ? std::vector<std::vector<Categorical>>(
                                        M, teacher(std::span(&states.front(), 1)).front())
                                  : teacher(states);
        for (std::size_t m = 0; m < M; ++m) {
            auto& st = states[m];
            for (std::size_t pos = 0; pos < L; ++pos) {
                if (!st.z.is_masked(pos)) {
                    continue;
                }
                if (rngs[m].bernoulli(sp.unmask)) {
                    st.z.tokens[pos] = static_cast<int>(preds[m][pos].sample(rngs[m]));
                    st.noise.eps[pos].clear();
                } else if (model.uses_noise() && !rngs[m].bernoulli(sp.keep)) {
                    st.noise.eps[pos] = model.noise.draw(rngs[m]);
                }
            }
        }
    }

    const auto last = static_cast<std::size_t>(inner_steps - 1);
    const StepProbs sp = step_probs(schedule, knots[last], knots[last + 1]);
    for (auto& st : states) {
        st.t = knots[last];
    }
    const auto preds = inner_steps == 1 ? std::vector<std::vector<Categorical>>(
                                              1, teacher(std::span(&states.front(), 1)).front())
                                        : teacher(states);
    const std::size_t used = preds.size();
    std::vector<std::vector<double>> acc(L, std::vector<double>(static_cast<std::size_t>(N) + 1, 0.0));
    for (std::size_t m = 0; m < used; ++m) {
        for (std::size_t pos = 0; pos < L; ++pos) {
            const int tok = states[m].z.tokens[pos];
            if (tok != kMasked) {
                acc[pos][static_cast<std::size_t>(tok)] += 1.0;
                continue;
            }
            for (int v = 0; v < N; ++v) {
                acc[pos][static_cast<std::size_t>(v)] += sp.unmask * preds[m][pos][static_cast<std::size_t>(v)];
            }
            acc[pos][static_cast<std::size_t>(N)] += 1.0 - sp.unmask;
        }
    }
    PositionTargets out;
    out.reserve(L);
    for (auto& row : acc) {
        out.push_back(Categorical::from_weights(std::move(row)));
    }
    return out;
}

std::string params_fingerprint(const DenoiserParams& params)
{
    std::uint64_t h = 1469598103934665603ull;
    for (double v : params.values) {
        std::uint64_t bits = 0;
        std::memcpy(&bits, &v, sizeof bits);
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xffu;
            h *= 1099511628211ull;
        }
    }
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

}  // namespace

void DistillConfig::validate() const
{
    if (rounds < 0 || iterations_per_round < 0) {
        throw std::invalid_argument("distill: rounds and iterations_per_round must be >= 0");
    }
    if (inner_steps < 2) {
        throw std::invalid_argument("distill: inner_steps must be >= 2");
    }
    if (kl_direction != "teacher_to_student") {
        throw std::invalid_argument("distill: kl_direction must be teacher_to_student");
    }
    if (targets.mc_rollouts < 1 || targets.n_eps_quad < 1 || targets.capacity < 1) {
        throw std::invalid_argument("distill: mc_rollouts, n_eps_quad and capacity must be >= 1");
    }
    if (coupling_size < 0 || coupling_steps < 1 || workers < 1) {
        throw std::invalid_argument("distill: invalid coupling_size, coupling_steps or workers");
    }
    sdtt.validate();
    redi.validate();
}

DivergenceGuard::DivergenceGuard(int window, double factor, double floor, int patience)
    : window_(window), factor_(factor), floor_(floor), patience_(patience)
{
    if (window < 1 || patience < 1 || !(factor > 0.0)) {
        throw std::invalid_argument("DivergenceGuard: window, patience and factor must be positive");
    }
}

void DivergenceGuard::observe(int iteration, double loss)
{
    if (iteration < window_) {
        opening_ += loss / window_;
        return;
    }
    above_ = loss > factor_ * opening_ && loss > floor_ ? above_ + 1 : 0;
    if (above_ >= patience_) {
        throw TrainingAbort("loss diverged (above " + std::to_string(factor_) + "x its opening level of " +
                            std::to_string(opening_) + " for " + std::to_string(patience_) + " iterations)");
    }
}

BatchPredictor model_predictor(const DenoiserParams& params)
{
    return [&params](std::span<const ModelInput> batch) { return predict_batch(batch, params); };
}

std::size_t sdtt_exact_states(const DenoiserConfig& model, int inner_steps, int n_eps_quad)
{
    if (inner_steps <= 1) {
        return 1;
    }
    const std::size_t per_position =
        static_cast<std::size_t>(model.n_data) + 1 +
        (model.uses_noise() ? static_cast<std::size_t>(n_eps_quad) : 0);
    std::size_t total = 1;
    for (int i = 0; i < model.length; ++i) {
        if (total > std::numeric_limits<std::size_t>::max() / per_position) {
            return std::numeric_limits<std::size_t>::max();
        }
        total *= per_position;
    }
    return total;
}

PositionTargets sdtt_targets(const BatchPredictor& teacher, const DenoiserConfig& model,
                             const ModelInput& start, double s, int inner_steps,
                             const TargetOptions& options, Rng& rng)
{
    check_start(model, start, s, inner_steps);
    TargetMode mode = options.mode;
    if (mode == TargetMode::automatic) {
        mode = sdtt_exact_states(model, inner_steps, options.n_eps_quad) <= options.exact_state_limit
                   ? TargetMode::exact
                   : TargetMode::monte_carlo;
    }
    return mode == TargetMode::exact
               ? exact_targets(teacher, model, start, s, inner_steps, options, rng)
               : monte_carlo_targets(teacher, model, start, s, inner_steps, options, rng);
}

PositionTargets sdtt_targets(const DenoiserParams& teacher, const ModelInput& start, double s,
                             int inner_steps, const TargetOptions& options, Rng& rng)
{
    return sdtt_targets(model_predictor(teacher), teacher.config, start, s, inner_steps, options, rng);
}

std::map<std::vector<int>, double> sdtt_exact_joint(const BatchPredictor& teacher,
                                                    const DenoiserConfig& model,
                                                    const ModelInput& start, double s,
                                                    int inner_steps, int n_eps_quad, Rng& rng,
                                                    std::size_t capacity, const Schedule& schedule)
{
    check_start(model, start, s, inner_steps);
    const auto knots = inner_knots(start.t, s, inner_steps);
    ExactComposer composer(teacher, model, start, n_eps_quad, rng, capacity);
    auto states = composer.initial();
    for (int j = 0; j < inner_steps; ++j) {
        const auto J = static_cast<std::size_t>(j);
        states = composer.advance(states, knots[J], knots[J + 1], schedule, j + 1 == inner_steps);
    }
    return states;
}

LossAndGrads sdtt_loss_and_grads(std::span<const SdttExample> batch, const DenoiserParams& student,
                                 const Schedule& schedule)
{
    if (batch.empty()) {
        throw std::invalid_argument("sdtt_loss_and_grads: empty batch");
    }
    const auto N = static_cast<std::size_t>(student.config.n_data);
    const auto L = static_cast<std::size_t>(student.config.length);
    std::vector<ModelInput> inputs;
    inputs.reserve(batch.size());
    for (const auto& ex : batch) {
        if (ex.targets.size() != L) {
            throw std::invalid_argument("sdtt_loss_and_grads: one target per position required");
        }
        inputs.push_back(ex.input);
    }
    const ForwardCache cache = forward(inputs, student);
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(cache.log_probs.rows(), cache.log_probs.cols());

    LossAndGrads out;
    double total = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& ex = batch[b];
        const double a_t = schedule.reverse_alpha(ex.input.t);
        const double a_s = schedule.reverse_alpha(ex.s);
        const double r = (a_s - a_t) / (1.0 - a_t);
        for (std::size_t pos = 0; pos < L; ++pos) {
            if (!ex.input.z.is_masked(pos)) {
                continue;
            }
            const Categorical& tgt = ex.targets[pos];
            if (tgt.size() != N + 1) {
                throw std::invalid_argument("sdtt_loss_and_grads: targets must cover V plus mask");
            }
            ++out.masked_positions;
            double kl = 0.0, t_unmask = 0.0;
            for (std::size_t v = 0; v < N; ++v) {
                const double tv = tgt[v];
                t_unmask += tv;
                if (tv > 0.0) {
                    const double lp = cache.log_probs(static_cast<Eigen::Index>(pos * N + v),
                                                      static_cast<Eigen::Index>(b));
                    kl += tv * (std::log(tv) - std::log(r) - lp);
                }
            }
            const double tm = tgt[N];
            if (tm > 0.0 && r < 1.0) {
                kl += tm * (std::log(tm) - std::log1p(-r));
            }
            total += kl;
            for (std::size_t v = 0; v < N; ++v) {
                const auto row = static_cast<Eigen::Index>(pos * N + v);
                const auto col = static_cast<Eigen::Index>(b);
                dlogits(row, col) = t_unmask * std::exp(cache.log_probs(row, col)) - tgt[v];
            }
        }
    }
    if (out.masked_positions == 0) {
        out.grads.assign(student.values.size(), 0.0);
        return out;
    }
    const double scale = 1.0 / static_cast<double>(out.masked_positions);
    out.loss = total * scale;
    dlogits *= scale;
    out.grads = backward(cache, dlogits, student);
    return out;
}

SdttRoundResult sdtt_round(const DenoiserParams& student, const DenoiserParams& teacher,
                           const DistillConfig& config, int student_steps,
                           const DatasetSpec& dataset, const Schedule& schedule,
                           std::uint64_t seed)
{
    config.validate();
    dataset.validate();
    if (student.config.kind != teacher.config.kind || student.config.n_data != teacher.config.n_data ||
        student.config.length != teacher.config.length) {
        throw std::invalid_argument("sdtt_round: student and teacher shapes differ");
    }
    if (dataset.n_data != student.config.n_data || dataset.length != student.config.length) {
        throw std::invalid_argument("sdtt_round: dataset shape does not match the model");
    }
    if (student_steps < 1) {
        throw std::invalid_argument("sdtt_round: student_steps must be >= 1");
    }
    const TimeGrid grid(student_steps);
    const DenoiserConfig model = student.config;
    const BatchPredictor predictor = model_predictor(teacher);

    TargetOptions targets = config.targets;
    targets.schedule = schedule;
    TrainConfig train = config.sdtt;
    train.iterations = config.iterations_per_round;
    train.seed = seed;

    auto objective = [&](const DenoiserParams& p, Rng& rng) {
        std::vector<SdttExample> batch;
        batch.reserve(static_cast<std::size_t>(train.batch_size));
        for (int k = 0; k < train.batch_size; ++k) {
            Rng item = rng.split(static_cast<std::uint64_t>(k));
            const Sequence& x = dataset.sample(item);
            const auto knot = static_cast<std::size_t>(item.below(static_cast<std::uint64_t>(student_steps)));
            SdttExample ex;
            ex.input = noise_sequence(x, grid[knot], schedule, model, item);
            ex.s = grid[knot + 1];
            ex.targets = sdtt_targets(predictor, model, ex.input, ex.s, config.inner_steps,
                                      targets, item);
            batch.push_back(std::move(ex));
        }
        return sdtt_loss_and_grads(batch, p, schedule);
    };

    DivergenceGuard guard(std::min(train.eval_every, std::max(1, train.iterations)));
    SdttRoundResult result;
    auto monitor = [&](int it, double loss) { guard.observe(it, loss); };
    result.student = optimize(student, train, objective, "sdtt", monitor);
    result.student_steps = student_steps;
    result.initial_loss = guard.opening();
    return result;
}

std::vector<SdttRoundResult> sdtt_distill(const DenoiserParams& base, const DistillConfig& config,
                                          const DatasetSpec& dataset, const Schedule& schedule)
{
    config.validate();
    if (config.rounds < 1) {
        throw std::invalid_argument("sdtt: rounds must be >= 1");
    }
    long long teacher_steps = 1;
    for (int r = 0; r < config.rounds; ++r) {
        teacher_steps *= config.inner_steps;
        if (teacher_steps > (1LL << 30)) {
            throw CapacityError("sdtt: inner_steps^rounds is too large");
        }
    }
    std::vector<SdttRoundResult> rounds;
    DenoiserParams teacher = base;
    for (int r = 0; r < config.rounds; ++r) {
        teacher_steps /= config.inner_steps;
        const std::uint64_t seed = config.sdtt.seed + static_cast<std::uint64_t>(r);
        rounds.push_back(sdtt_round(teacher, teacher, config, static_cast<int>(teacher_steps),
                                    dataset, schedule, seed));
        teacher = rounds.back().student.params;
    }
    return rounds;
}

CouplingSet redi_build_coupling(const DenoiserParams& teacher, int steps, int n_pairs,
                                const Rng& rng, int workers, std::string teacher_id,
                                const Schedule& schedule)
{
    if (n_pairs < 1) {
        throw std::invalid_argument("redi: coupling needs n_pairs >= 1");
    }
    DecodeConfig cfg;
    cfg.steps = steps;
    cfg.mode = teacher.config.kind;
    cfg.length = teacher.config.length;
    cfg.seed = rng.seed();
    cfg.schedule = schedule;
    const auto samples = decode_batch(teacher, cfg, static_cast<std::size_t>(n_pairs), rng, workers);
    CouplingSet set;
    set.teacher_id = teacher_id.empty() ? params_fingerprint(teacher) : std::move(teacher_id);
    set.steps = steps;
    set.seed = rng.seed();
    set.pairs.reserve(samples.size());
    for (const auto& d : samples) {
        set.pairs.push_back({d.unmask_noise, d.sequence});
    }
    return set;
}

TrainResult redi_train(DenoiserParams student, const CouplingSet& coupling,
                       const TrainConfig& config, const Schedule& schedule)
{
    if (coupling.pairs.empty()) {
        throw std::invalid_argument("redi_train: coupling is empty");
    }
    const DenoiserConfig model = student.config;
    const Vocabulary vocab(model.n_data, false);
    for (const auto& pair : coupling.pairs) {
        if (pair.sequence.length() != static_cast<std::size_t>(model.length) ||
            pair.noise.eps.size() != pair.sequence.length()) {
            throw std::invalid_argument("redi_train: coupling pair does not match the model length");
        }
        validate_sequence(pair.sequence, vocab);
        if (model.uses_noise()) {
            for (const auto& e : pair.noise.eps) {
                if (e.size() != static_cast<std::size_t>(model.noise.dim)) {
                    throw std::invalid_argument("redi_train: stored noise has the wrong dimension");
                }
            }
        }
    }
    const auto n = static_cast<std::uint64_t>(coupling.pairs.size());
    auto objective = [&](const DenoiserParams& p, Rng& rng) {
        std::vector<TrainExample> batch;
        batch.reserve(static_cast<std::size_t>(config.batch_size));
        for (int k = 0; k < config.batch_size; ++k) {
            Rng item = rng.split(static_cast<std::uint64_t>(k));
            const auto& pair = coupling.pairs[item.below(n)];
            const double t = item.uniform();
            batch.push_back({noise_sequence(pair.sequence, t, schedule, model, item, &pair.noise),
                             pair.sequence});
        }
        return loss_and_grads(batch, p, schedule, config.log_prob_floor);
    };
    return optimize(std::move(student), config, objective, "redi");
}

CombinedResult combined_pipeline(const DenoiserParams& base, const DistillConfig& config,
                                 const DatasetSpec& dataset, const Schedule& schedule)
{
    config.validate();
    CombinedResult out;
    out.final_model = base;
    if (config.rounds > 0) {
        out.sdtt_rounds = sdtt_distill(base, config, dataset, schedule);
        out.final_model = out.sdtt_rounds.back().student.params;
    }
    if (config.coupling_size > 0) {
        const Rng rng = Rng(config.redi.seed).split(1);
        out.coupling = redi_build_coupling(out.final_model, config.coupling_steps,
                                           config.coupling_size, rng, config.workers, "", schedule);
        auto trained = redi_train(out.final_model, out.coupling, config.redi, schedule);
        out.final_model = std::move(trained.params);
        out.redi_trace = std::move(trained.trace);
    }
    return out;
}

}  // namespace imdm
