#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "imdm/analysis.hpp"
#include "imdm/distill.hpp"

// Evaluation and the end-to-end synthetic reproduction shared by the CLI and
// the acceptance checks.
namespace imdm::cli {

struct EvalMetrics {
    double validity = 0.0;
    double token_entropy_nats = 0.0;
    double fact_error_nats = 0.0;  // one-step decoding from full mask
    double thm1_bound_nats = 0.0;  // data bound for the same step
    int n_samples = 0;
    int n_eps = 0;  // noise draws behind fact_error_nats (0 when the model takes none)
    int steps = 1;
    std::uint64_t seed = 0;
    std::string model_kind;
};

nlohmann::json to_json(const EvalMetrics& m);

std::vector<Sequence> sequences_of(const std::vector<DecodeResult>& runs);

// Samples n sequences, computes sample metrics, the one-step factorization
// error against `data` with n_eps noise draws and the data bound.
struct Evaluation {
    EvalMetrics metrics;
    std::vector<DecodeResult> samples;
};

Evaluation evaluate_model(const DenoiserParams& model, const DatasetSpec& data, const DecodeConfig& decode,
                          int n_samples, int n_eps, const Rng& decode_rng, const Rng& analysis_rng, int workers = 1,
                          std::size_t capacity = JointDist::kDefaultCapacity);

// I.i.d. uniform tokens: the reference point for validity.
Evaluation evaluate_random_baseline(const DatasetSpec& data, int n_samples, const Rng& rng,
                                    std::size_t capacity = JointDist::kDefaultCapacity);

// Full-mask P(token 0) for fresh noise draws, with the two rows that best
// witness opposite consistent choices.
struct ProbeSummary {
    ProbeTable table;
    int row_a = -1;  // both positions >= hi, |p1 - p2| <= gap
    int row_b = -1;  // both positions <= lo, |p1 - p2| <= gap
    double consistent_fraction = 0.0;  // rows with |p1 - p2| <= gap
    double gap = 0.1;
};

ProbeSummary probe_summary(const DenoiserParams& model, int draws, const Rng& rng, double lo = 0.1,
                           double hi = 0.9, double gap = 0.1);
nlohmann::json to_json(const ProbeSummary& p);

// ---------------------------------------------------------------------------
// Synthetic reproduction
// ---------------------------------------------------------------------------

struct ReproOptions {
    bool quick = false;
    std::uint64_t seed = 0;
    int workers = 1;
    std::function<void(const std::string&)> log;
};

struct ReproRow {
    std::string group;   // "one-step" metrics or full-mask "probe"
    std::string metric;
    std::string model;
    std::string reference;  // published value, as printed
    double value = 0.0;
    double lo = 0.0;
    double hi = 0.0;

    bool passed() const { return value >= lo && value <= hi; }
};

struct ReproResult {
    ReproOptions options;
    int pretrain_iterations = 0;
    int redi_iterations = 0;
    int coupling_size = 0;
    DenoiserParams mdm_base;
    DenoiserParams mdm_student;
    DenoiserParams imdm_student;
    Evaluation mdm_eval;
    Evaluation imdm_eval;
    ProbeSummary mdm_probe;
    ProbeSummary imdm_probe;
    std::vector<LossPoint> pretrain_trace;
    std::vector<ReproRow> rows;
    double seconds = 0.0;

    bool passed() const;
};

ReproResult run_synthetic_repro(const ReproOptions& options);

std::string repro_markdown(const ReproResult& r);
nlohmann::json to_json(const ReproResult& r);

}  // namespace imdm::cli
