#include "imdm/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace imdm {

Vocabulary::Vocabulary(int n_data, bool has_mask_token) : n_data_(n_data), has_mask_(has_mask_token)
{
    if (n_data < 2) {
        throw std::invalid_argument("Vocabulary: n_data must be at least 2");
    }
}

int Vocabulary::mask_index() const
{
    if (!has_mask_) {
        throw std::logic_error("Vocabulary: no mask token");
    }
    return n_data_;
}

Schedule::Schedule(double clip_eps, Kind kind) : kind_(kind), clip_eps_(clip_eps)
{
    if (!(clip_eps > 0.0 && clip_eps < 0.5)) {
        throw std::invalid_argument("Schedule: clip_eps must lie in (0, 0.5)");
    }
}

AlphaValue Schedule::alpha_at(double t) const
{
    if (!(t >= 0.0 && t <= 1.0)) {
        throw std::domain_error("alpha_at: t outside [0, 1]");
    }
    // Linear only: alpha = 1 - t, derivative -1 (kept at -1 on the clipped
    // ends so the NELBO weight stays finite and continuous).
    double a = std::clamp(1.0 - t, clip_eps_, 1.0 - clip_eps_);
    return {a, -1.0};
}

double Schedule::reverse_alpha(double t) const
{
    if (t == 1.0) {
        return 0.0;
    }
    if (t == 0.0) {
        return 1.0;
    }
    return alpha(t);
}

AlphaValue alpha_at(const Schedule& schedule, double t)
{
    return schedule.alpha_at(t);
}

TimeGrid::TimeGrid(int steps)
{
    if (steps < 1) {
        throw std::invalid_argument("make_grid: steps must be >= 1");
    }
    knots_.resize(static_cast<std::size_t>(steps) + 1);
    for (int k = 0; k <= steps; ++k) {
        knots_[k] = 1.0 - static_cast<double>(k) / steps;
    }
    knots_.front() = 1.0;
    knots_.back() = 0.0;
}

TimeGrid make_grid(int steps)
{
    return TimeGrid(steps);
}

Categorical::Categorical(std::vector<double> probs) : probs_(std::move(probs))
{
    if (probs_.empty()) {
        throw std::invalid_argument("Categorical: empty support");
    }
    for (double p : probs_) {
        if (!(p >= 0.0) || !std::isfinite(p)) {
            throw std::invalid_argument("Categorical: negative or non-finite probability");
        }
    }
    if (std::abs(sum() - 1.0) > kNormTolerance) {
        std::ostringstream msg;
        msg << "Categorical: probabilities sum to " << sum();
        throw std::invalid_argument(msg.str());
    }
}

Categorical Categorical::uniform(std::size_t n)
{
    return Categorical(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

Categorical Categorical::delta(std::size_t n, std::size_t index)
{
    std::vector<double> p(n, 0.0);
    p.at(index) = 1.0;
    return Categorical(std::move(p));
}

Categorical Categorical::from_weights(std::vector<double> weights)
{
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0)) {
            throw std::invalid_argument("Categorical::from_weights: negative weight");
        }
        total += w;
    }
    if (!(total > 0.0)) {
        throw std::invalid_argument("Categorical::from_weights: weights sum to zero");
    }
    for (double& w : weights) {
        w /= total;
    }
    return Categorical(std::move(weights));
}

double Categorical::sum() const
{
    double s = 0.0;
    for (double p : probs_) {
        s += p;
    }
    return s;
}

void validate_sequence(const Sequence& seq, const Vocabulary& vocab)
{
    for (int tok : seq.tokens) {
        if (!vocab.is_data(tok)) {
            throw std::invalid_argument("Sequence: token id outside the data vocabulary");
        }
    }
}

std::size_t LatentSequence::masked_count() const
{
    return static_cast<std::size_t>(std::count(tokens.begin(), tokens.end(), kMasked));
}

}  // namespace imdm
