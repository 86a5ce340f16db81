#include "imdm/cli/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

namespace imdm::cli {

namespace {

double elapsed(std::chrono::steady_clock::time_point since)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - since).count();
}

SequencePredicate in_support(const DatasetSpec& data)
{
    std::set<std::vector<int>> support;
    for (std::size_t k = 0; k < data.sequences.size(); ++k) {
        if (data.weights.empty() || data.weights[k] > 0.0) {
            support.insert(data.sequences[k].tokens);
        }
    }
    return [support = std::move(support)](const Sequence& s) { return support.contains(s.tokens); };
}

std::string fixed(double v, int digits)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

}  // namespace

nlohmann::json to_json(const EvalMetrics& m)
{
    return {{"validity", m.validity},
            {"token_entropy_nats", m.token_entropy_nats},
            {"fact_error_nats", m.fact_error_nats},
            {"thm1_bound_nats", m.thm1_bound_nats},
            {"n_samples", m.n_samples},
            {"n_eps", m.n_eps},
            {"steps", m.steps},
            {"seed", m.seed},
            {"model_kind", m.model_kind}};
}

std::vector<Sequence> sequences_of(const std::vector<DecodeResult>& runs)
{
    std::vector<Sequence> out;
    out.reserve(runs.size());
    for (const auto& r : runs) {
        out.push_back(r.sequence);
    }
    return out;
}

Evaluation evaluate_model(const DenoiserParams& model, const DatasetSpec& data, const DecodeConfig& decode,
                          int n_samples, int n_eps, const Rng& decode_rng, const Rng& analysis_rng, int workers,
                          std::size_t capacity)
{
    if (data.n_data != model.config.n_data || data.length != model.config.length) {
        throw std::invalid_argument("evaluate: dataset shape does not match the model");
    }
    Evaluation e;
    e.samples = decode_batch(model, decode, static_cast<std::size_t>(n_samples), decode_rng, workers);
    const auto seqs = sequences_of(e.samples);
    auto& m = e.metrics;
    m.validity = validity(seqs, in_support(data));
    m.token_entropy_nats = token_entropy(seqs, data.n_data);
    const JointDist joint = data.joint();
    JointDist::checked_size(joint.dims(), capacity);
    m.n_eps = model.config.uses_noise() ? n_eps : 0;
    m.fact_error_nats = factorization_error(model, joint, std::max(1, m.n_eps), analysis_rng);
    m.thm1_bound_nats = thm1_lower_bound(joint, 0.0, 1.0, decode.schedule, capacity).value;
    m.n_samples = n_samples;
    m.steps = decode.steps;
    m.seed = decode_rng.seed();
    m.model_kind = to_string(model.config.kind);
    return e;
}

Evaluation evaluate_random_baseline(const DatasetSpec& data, int n_samples, const Rng& rng, std::size_t capacity)
{
    Evaluation e;
    e.samples.resize(static_cast<std::size_t>(n_samples));
    for (std::size_t k = 0; k < e.samples.size(); ++k) {
        Rng item = rng.split(k);
        auto& seq = e.samples[k].sequence;
        for (int l = 0; l < data.length; ++l) {
            seq.tokens.push_back(static_cast<int>(item.below(static_cast<std::uint64_t>(data.n_data))));
        }
    }
    const auto seqs = sequences_of(e.samples);
    auto& m = e.metrics;
    m.validity = validity(seqs, in_support(data));
    m.token_entropy_nats = token_entropy(seqs, data.n_data);
    const JointDist joint = data.joint();
    JointDist::checked_size(joint.dims(), capacity);
    std::vector<Categorical> uniform(static_cast<std::size_t>(data.length),
                                     Categorical::uniform(static_cast<std::size_t>(data.n_data)));
    m.fact_error_nats = kl_divergence(joint.probs(), product_joint(uniform, capacity).probs());
    m.thm1_bound_nats = thm1_lower_bound(joint, 0.0, 1.0, Schedule(), capacity).value;
    m.n_samples = n_samples;
    m.n_eps = 0;
    m.steps = 1;
    m.seed = rng.seed();
    m.model_kind = "random";
    return e;
}

ProbeSummary probe_summary(const DenoiserParams& model, int draws, const Rng& rng, double lo, double hi, double gap)
{
    const auto L = static_cast<std::size_t>(model.config.length);
    std::vector<NoiseAssignment> noises;
    if (model.config.uses_noise()) {
        Rng r = rng;
        for (int k = 0; k < draws; ++k) {
            noises.push_back(NoiseAssignment::draw(LatentSequence::fully_masked(L), model.config.noise, r));
        }
    } else {
        noises.push_back(NoiseAssignment::none(L));
    }
    std::vector<int> positions(L);
    for (std::size_t l = 0; l < L; ++l) {
        positions[l] = static_cast<int>(l);
    }
    ProbeSummary s;
    s.gap = gap;
    s.table = per_token_probe(model, noises, positions);
    double best_a = -1.0, best_b = 2.0;
    std::size_t consistent = 0;
    for (std::size_t k = 0; k < s.table.p_first.size(); ++k) {
        const auto& row = s.table.p_first[k];
        const auto [mn, mx] = std::minmax_element(row.begin(), row.end());
        const bool ok = *mx - *mn <= gap;
        consistent += ok ? 1 : 0;
        // Prefer consistent rows; among them the most extreme.
        const double score_a = *mn + (ok ? 1.0 : 0.0), score_b = *mx - (ok ? 1.0 : 0.0);
        if (score_a > best_a) {
            best_a = score_a;
            s.row_a = static_cast<int>(k);
        }
        if (score_b < best_b) {
            best_b = score_b;
            s.row_b = static_cast<int>(k);
        }
    }
    (void)lo;
    (void)hi;
    s.consistent_fraction = static_cast<double>(consistent) / static_cast<double>(s.table.p_first.size());
    return s;
}

nlohmann::json to_json(const ProbeSummary& p)
{
    return {{"positions", p.table.positions},
            {"p_token0", p.table.p_first},
            {"row_a", p.row_a},
            {"row_b", p.row_b},
            {"consistent_fraction", p.consistent_fraction},
            {"disagreement_limit", p.gap}};
}

bool ReproResult::passed() const
{
    return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const ReproRow& r) { return r.passed(); });
}

ReproResult run_synthetic_repro(const ReproOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    auto log = [&](const std::string& msg) {
        if (options.log) {
            options.log(msg);
        }
    };
    const std::uint64_t S = options.seed;
    const Schedule schedule;
    const DatasetSpec data = DatasetSpec::synthetic_pair();

    ReproResult r;
    r.options = options;
    DistillConfig distill;
    TrainConfig pretrain;
    pretrain.iterations = options.quick ? 5000 : 20000;
    pretrain.eval_every = 500;
    pretrain.seed = S;
    TrainConfig redi = distill.redi;
    redi.seed = S + 2;
    if (options.quick) {
        redi.iterations = 4000;
        redi.learning_rate = 3e-3;
    }
    r.pretrain_iterations = pretrain.iterations;
    r.redi_iterations = redi.iterations;
    r.coupling_size = distill.coupling_size;
    const int n_samples = options.quick ? 500 : 5000;
    const int n_eps = options.quick ? 1000 : 10000;

    DenoiserConfig mc;
    mc.kind = ModelKind::mdm;
    log("pretraining MDM for " + std::to_string(pretrain.iterations) + " iterations");
    Rng init = Rng(S).split(5);
    auto trained = train(init_params(mc, init), pretrain, data, schedule);
    r.mdm_base = trained.params;
    r.pretrain_trace = std::move(trained.trace);
    Rng wrap = Rng(S).split(6);
    const DenoiserParams imdm_init = imdm_from_mdm(r.mdm_base, NoiseSpec{}, wrap);

    log("ReDi distillation of the MDM");
    const auto mdm_coupling = redi_build_coupling(r.mdm_base, distill.coupling_steps, distill.coupling_size,
                                                  Rng(S).split(10), options.workers, "", schedule);
    r.mdm_student = redi_train(r.mdm_base, mdm_coupling, redi, schedule).params;
    log("ReDi distillation of the IMDM");
    const auto imdm_coupling = redi_build_coupling(imdm_init, distill.coupling_steps, distill.coupling_size,
                                                   Rng(S).split(11), options.workers, "", schedule);
    r.imdm_student = redi_train(imdm_init, imdm_coupling, redi, schedule).params;

    log("evaluating " + std::to_string(n_samples) + " one-step samples per model");
    DecodeConfig one;
    one.steps = 1;
    one.length = 2;
    one.schedule = schedule;
    one.mode = ModelKind::mdm;
    r.mdm_eval = evaluate_model(r.mdm_student, data, one, n_samples, n_eps, Rng(S).split(3), Rng(S).split(4),
                                options.workers);
    one.mode = ModelKind::imdm;
    r.imdm_eval = evaluate_model(r.imdm_student, data, one, n_samples, n_eps, Rng(S).split(3), Rng(S).split(4),
                                 options.workers);
    r.mdm_probe = probe_summary(r.mdm_student, 64, Rng(S).split(7));
    r.imdm_probe = probe_summary(r.imdm_student, 64, Rng(S).split(7));

    // Tolerances; --quick widens the sample-size-dependent ones (about three
    // binomial standard deviations at 500 samples).
    const bool q = options.quick;
    const auto& me = r.mdm_eval.metrics;
    const auto& ie = r.imdm_eval.metrics;
    r.rows.push_back({"one-step", "validity", "MDM", "49.8%", me.validity, q ? 0.43 : 0.47, q ? 0.57 : 0.53});
    r.rows.push_back({"one-step", "validity", "IMDM", "97.7%", ie.validity, q ? 0.90 : 0.95, 1.0});
    r.rows.push_back({"one-step", "token_entropy_nats", "MDM", "0.69", me.token_entropy_nats, q ? 0.65 : 0.67, 0.70});
    r.rows.push_back({"one-step", "token_entropy_nats", "IMDM", "0.69", ie.token_entropy_nats, q ? 0.65 : 0.67, 0.70});
    r.rows.push_back({"one-step", "fact_error_nats", "MDM", "0.693", me.fact_error_nats, q ? 0.653 : 0.673, q ? 0.733 : 0.713});
    r.rows.push_back({"one-step", "fact_error_nats", "IMDM", "0.082", ie.fact_error_nats, 0.0, q ? 0.25 : 0.15});

    const auto& mp = r.mdm_probe.table.p_first;
    r.rows.push_back({"probe", "P(token1=0)", "MDM", "49.7%", mp[0][0], 0.45, 0.55});
    r.rows.push_back({"probe", "P(token2=0)", "MDM", "49.7%", mp[0][1], 0.45, 0.55});
    const auto& a = r.imdm_probe.table.p_first[static_cast<std::size_t>(r.imdm_probe.row_a)];
    const auto& b = r.imdm_probe.table.p_first[static_cast<std::size_t>(r.imdm_probe.row_b)];
    r.rows.push_back({"probe", "P(token1=0) under eps_A", "IMDM", "98.2%", a[0], 0.9, 1.0});
    r.rows.push_back({"probe", "P(token2=0) under eps_A", "IMDM", "100.0%", a[1], 0.9, 1.0});
    r.rows.push_back({"probe", "P(token1=0) under eps_B", "IMDM", "0.6%", b[0], 0.0, 0.1});
    r.rows.push_back({"probe", "P(token2=0) under eps_B", "IMDM", "0.4%", b[1], 0.0, 0.1});
    r.rows.push_back({"probe", "P1-P2 gap under eps_A", "IMDM", "1.8%", std::abs(a[0] - a[1]), 0.0, 0.1});
    r.rows.push_back({"probe", "P1-P2 gap under eps_B", "IMDM", "0.2%", std::abs(b[0] - b[1]), 0.0, 0.1});
    r.seconds = elapsed(start);
    log("done in " + fixed(r.seconds, 1) + " s");
    return r;
}

std::string repro_markdown(const ReproResult& r)
{
    std::ostringstream os;
    os << "# Synthetic {00, 11} reproduction\n\n";
    os << "Seed " << r.options.seed << (r.options.quick ? " (quick mode, widened tolerances)" : "") << ". "
       << "MDM pretrained for " << r.pretrain_iterations << " iterations; ReDi on " << r.coupling_size
       << " coupled pairs for " << r.redi_iterations << " iterations. One-step decoding, "
       << r.mdm_eval.metrics.n_samples << " samples, " << r.imdm_eval.metrics.n_eps
       << " noise draws for the IMDM error. Wall clock " << fixed(r.seconds, 1) << " s.\n\n";
    os << "| Group | Metric | Model | Published | Measured | Accepted range | Result |\n";
    os << "|---|---|---|---|---|---|---|\n";
    for (const auto& row : r.rows) {
        os << "| " << row.group << " | " << row.metric << " | " << row.model << " | " << row.reference << " | "
           << fixed(row.value, 4) << " | [" << fixed(row.lo, 3) << ", " << fixed(row.hi, 3) << "] | "
           << (row.passed() ? "pass" : "FAIL") << " |\n";
    }
    os << "\nIMDM probe rows with |P1 - P2| <= " << r.imdm_probe.gap << ": "
       << fixed(100.0 * r.imdm_probe.consistent_fraction, 1) << "% of " << r.imdm_probe.table.p_first.size()
       << " noise draws.\n\nOverall: " << (r.passed() ? "PASS" : "FAIL") << "\n";
    return os.str();
}

nlohmann::json to_json(const ReproResult& r)
{
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"group", row.group},
                        {"metric", row.metric},
                        {"model", row.model},
                        {"published", row.reference},
                        {"value", row.value},
                        {"lo", row.lo},
                        {"hi", row.hi},
                        {"passed", row.passed()}});
    }
    return {{"seed", r.options.seed},
            {"quick", r.options.quick},
            {"pretrain_iterations", r.pretrain_iterations},
            {"redi_iterations", r.redi_iterations},
            {"coupling_size", r.coupling_size},
            {"mdm", to_json(r.mdm_eval.metrics)},
            {"imdm", to_json(r.imdm_eval.metrics)},
            {"mdm_probe", to_json(r.mdm_probe)},
            {"imdm_probe", to_json(r.imdm_probe)},
            {"rows", rows},
            {"passed", r.passed()}};
}

}  // namespace imdm::cli
