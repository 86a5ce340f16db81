#include "imdm/cli/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "imdm/cli/checkpoint.hpp"
#include "imdm/cli/output.hpp"
#include "imdm/oracle_suite.hpp"

namespace imdm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Writes the frozen config and a manifest of inputs and seeds. The content
// hash covers the config snapshot and every input file, so two run
// directories with equal hashes were produced from identical inputs.
void write_run_files(const fs::path& dir, const RunConfig& config, const std::string& command,
                     const std::map<std::string, fs::path>& inputs)
{
    fs::create_directories(dir);
    const std::string snapshot = to_toml(config);
    write_text(dir / "config.toml", snapshot);
    write_json(dir / "config.json", to_json(config));

    json in = json::object();
    std::string hashed = git_blob_hash(snapshot);
    for (const auto& [name, path] : inputs) {
        const std::string h = git_blob_hash(read_bytes(path));
        in[name] = {{"path", path.string()}, {"hash", h}};
        hashed += "\n" + name + " " + h;
    }
    json manifest = {{"command", command},
                     {"content_hash", git_blob_hash(hashed)},
                     {"config_hash", git_blob_hash(snapshot)},
                     {"inputs", in},
                     {"seeds",
                      {{"seed", config.seed},
                       {"train", config.train_config().seed},
                       {"sdtt", config.distill_config().sdtt.seed},
                       {"redi", config.distill_config().redi.seed},
                       {"init_stream", 5},
                       {"decode_stream", 3},
                       {"analysis_stream", 4}}}};
    write_json(dir / "manifest.json", manifest);
}

DenoiserParams load_model(const RunConfig& config, const fs::path& path)
{
    DenoiserParams p = load_checkpoint(path);
    if (p.config.n_data != config.data.n_data || p.config.length != config.data.length) {
        throw ConfigError({path.string() + ": checkpoint shape (n_data " + std::to_string(p.config.n_data) +
                           ", length " + std::to_string(p.config.length) + ") does not match the data"});
    }
    return p;
}

DecodeConfig decode_for(const RunConfig& config, const DenoiserParams& model)
{
    DecodeConfig dc = config.decode_config();
    dc.mode = model.config.kind;
    dc.length = model.config.length;
    dc.validate(model.config);
    return dc;
}

std::string samples_jsonl(const std::vector<DecodeResult>& samples, int steps, std::uint64_t seed)
{
    std::string out;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        out += json{{"tokens", samples[k].sequence.tokens}, {"steps", steps}, {"seed", seed}, {"stream", k}}.dump();
        out += '\n';
    }
    return out;
}

Evaluation evaluate_config(const RunConfig& config, const DenoiserParams& model, const DecodeConfig& dc)
{
    return evaluate_model(model, config.data, dc, config.decode.n_samples, config.analysis.n_eps,
                          config.decode_rng(), config.analysis_rng(), config.decode.workers,
                          config.analysis.capacity);
}

std::string fmt(double v, int digits = 4)
{
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

std::string metrics_markdown(const std::string& title, const EvalMetrics& m)
{
    std::ostringstream os;
    os << "# " << title << "\n\n"
       << "| Metric | Value |\n|---|---|\n"
       << "| model | " << m.model_kind << " |\n"
       << "| decode steps | " << m.steps << " |\n"
       << "| samples | " << m.n_samples << " |\n"
       << "| validity | " << fmt(m.validity) << " |\n"
       << "| token entropy (nats) | " << fmt(m.token_entropy_nats) << " |\n"
       << "| one-step factorization error (nats) | " << fmt(m.fact_error_nats) << " |\n"
       << "| noise draws for the error | " << m.n_eps << " |\n"
       << "| data lower bound, full mask to clean (nats) | " << fmt(m.thm1_bound_nats) << " |\n"
       << "| seed | " << m.seed << " |\n";
    return os.str();
}

void write_metrics(const fs::path& dir, const EvalMetrics& m, const json& extra = json::object())
{
    json j = to_json(m);
    for (const auto& [k, v] : extra.items()) {
        j[k] = v;
    }
    write_json(dir / "metrics.json", j);
}

json trace_summary(const std::vector<LossPoint>& trace, int iterations)
{
    return {{"iterations", iterations}, {"final_loss", trace.empty() ? json(nullptr) : json(trace.back().loss)}};
}

}  // namespace

int exit_code_for_current_exception(std::ostream& err)
{
    try {
        throw;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const TrainingAbort& e) {
        err << "error: training aborted: " << e.what() << "\n";
        return kExitTrainingAbort;
    } catch (const CapacityError& e) {
        err << "error: capacity exceeded: " << e.what() << "\n";
        return kExitCapacity;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitError;
    }
}

fs::path run_dir(const RunConfig& config, const std::string& command, const std::optional<fs::path>& out)
{
    return out ? *out : fs::path(config.output_dir) / config.name / command;
}

int cmd_pretrain(const RunConfig& config, std::optional<int> iterations, const fs::path& dir, std::ostream& log)
{
    RunConfig c = config;
    if (iterations) {
        c.train.iterations = *iterations;
    }
    c.validate();
    write_run_files(dir, c, "pretrain", {});

    Rng init = c.init_rng();
    const DenoiserParams start = init_params(c.model, init);
    log << "pretraining " << to_string(c.model.kind) << " for " << c.train.iterations << " iterations\n";
    const auto result = train(start, c.train_config(), c.data, c.schedule());
    save_checkpoint(result.params, dir / "model.ckpt");
    write_text(dir / "loss.csv", loss_csv(result.trace));

    const auto e = evaluate_config(c, result.params, decode_for(c, result.params));
    write_metrics(dir, e.metrics, {{"training", trace_summary(result.trace, c.train.iterations)}});
    log << "validity " << fmt(e.metrics.validity) << ", factorization error " << fmt(e.metrics.fact_error_nats)
        << " nats\n";
    return kExitOk;
}

int cmd_distill(DistillMode mode, const RunConfig& config, const fs::path& teacher_path, const fs::path& dir,
                std::ostream& log)
{
    config.validate();
    const DenoiserParams teacher = load_model(config, teacher_path);
    DenoiserParams base = teacher;
    if (config.model.kind == ModelKind::imdm && teacher.config.kind == ModelKind::mdm) {
        // Same predictions as the teacher: the noise branch starts at zero.
        Rng wrap = Rng(config.seed).split(6);
        base = imdm_from_mdm(teacher, config.model.noise, wrap);
    } else if (config.model.kind != teacher.config.kind) {
        throw ConfigError({"model.kind: cannot distill an imdm teacher into an mdm student"});
    }

    DistillConfig dc = config.distill_config();
    if (mode == DistillMode::sdtt) {
        dc.coupling_size = 0;
    } else if (mode == DistillMode::redi) {
        dc.rounds = 0;
    }
    const char* names[] = {"sdtt", "redi", "combined"};
    write_run_files(dir, config, std::string("distill-") + names[static_cast<int>(mode)],
                    {{"teacher", teacher_path}});
    save_checkpoint(base, dir / "teacher.ckpt");

    log << "distilling (" << dc.rounds << " SDTT rounds, " << dc.coupling_size << " ReDi pairs)\n";
    const auto result = combined_pipeline(base, dc, config.data, config.schedule());

    json rounds = json::array();
    for (std::size_t k = 0; k < result.sdtt_rounds.size(); ++k) {
        const auto& r = result.sdtt_rounds[k];
        const std::string stem = "round_" + std::to_string(k + 1);
        save_checkpoint(r.student.params, dir / (stem + ".ckpt"));
        write_text(dir / (stem + "_loss.csv"), loss_csv(r.student.trace));
        const auto e = evaluate_config(config, r.student.params, decode_for(config, r.student.params));
        rounds.push_back({{"round", k + 1},
                          {"student_steps", r.student_steps},
                          {"initial_loss", r.initial_loss},
                          {"training", trace_summary(r.student.trace, dc.iterations_per_round)},
                          {"metrics", to_json(e.metrics)}});
        log << "round " << k + 1 << ": student on " << r.student_steps << " steps, validity "
            << fmt(e.metrics.validity) << "\n";
    }
    if (!result.coupling.pairs.empty()) {
        write_text(dir / "redi_loss.csv", loss_csv(result.redi_trace));
        std::string lines;
        for (const auto& pair : result.coupling.pairs) {
            lines += json{{"tokens", pair.sequence.tokens}, {"noise", pair.noise.eps}}.dump() + "\n";
        }
        write_text(dir / "coupling.jsonl", lines);
    }
    save_checkpoint(result.final_model, dir / "model.ckpt");

    const auto e = evaluate_config(config, result.final_model, decode_for(config, result.final_model));
    json extra = {{"rounds", rounds}};
    if (!result.coupling.pairs.empty()) {
        extra["redi"] = {{"coupling_size", result.coupling.pairs.size()},
                         {"coupling_steps", result.coupling.steps},
                         {"teacher_id", result.coupling.teacher_id},
                         {"training", trace_summary(result.redi_trace, dc.redi.iterations)}};
    }
    write_metrics(dir, e.metrics, extra);
    log << "student validity " << fmt(e.metrics.validity) << ", factorization error "
        << fmt(e.metrics.fact_error_nats) << " nats\n";
    return kExitOk;
}

int cmd_sample(const RunConfig& config, const fs::path& checkpoint, const fs::path& dir, std::ostream& log)
{
    config.validate();
    const DenoiserParams model = load_model(config, checkpoint);
    write_run_files(dir, config, "sample", {{"checkpoint", checkpoint}});
    const DecodeConfig dc = decode_for(config, model);
    const auto samples = decode_batch(model, dc, static_cast<std::size_t>(config.decode.n_samples),
                                      config.decode_rng(), config.decode.workers);
    write_text(dir / "samples.jsonl", samples_jsonl(samples, dc.steps, config.seed));
    log << "wrote " << samples.size() << " samples\n";
    return kExitOk;
}

int cmd_eval(const RunConfig& config, const std::optional<fs::path>& checkpoint, const fs::path& dir,
             std::ostream& log)
{
    config.validate();
    Evaluation e;
    if (checkpoint) {
        const DenoiserParams model = load_model(config, *checkpoint);
        write_run_files(dir, config, "eval", {{"checkpoint", *checkpoint}});
        e = evaluate_config(config, model, decode_for(config, model));
    } else {
        write_run_files(dir, config, "eval-random", {});
        e = evaluate_random_baseline(config.data, config.decode.n_samples, config.decode_rng(),
                                     config.analysis.capacity);
    }
    write_text(dir / "samples.jsonl", samples_jsonl(e.samples, e.metrics.steps, config.seed));
    write_metrics(dir, e.metrics);
    write_text(dir / "report.md", metrics_markdown("Evaluation", e.metrics));
    log << metrics_markdown("Evaluation", e.metrics);
    return kExitOk;
}

int cmd_analyze(const RunConfig& config, const fs::path& checkpoint, const fs::path& dir, bool plots,
                std::ostream& log)
{
    config.validate();
    const DenoiserParams model = load_model(config, checkpoint);
    write_run_files(dir, config, "analyze", {{"checkpoint", checkpoint}});
    const Schedule schedule = config.schedule();
    const DecodeConfig dc = decode_for(config, model);
    const auto e = evaluate_config(config, model, dc);
    write_text(dir / "samples.jsonl", samples_jsonl(e.samples, dc.steps, config.seed));
    write_metrics(dir, e.metrics);

    // Validity against the number of decoding steps.
    Series validity_curve{"validity", {}, {}};
    std::string curve_csv = "steps,validity,token_entropy_nats\n";
    for (int steps = 1; steps <= 64; steps *= 2) {
        DecodeConfig k = dc;
        k.steps = steps;
        const auto runs = decode_batch(model, k, static_cast<std::size_t>(config.decode.n_samples),
                                       config.decode_rng(), config.decode.workers);
        const auto seqs = sequences_of(runs);
        const double v = validity(seqs, [&](const Sequence& s) {
            const auto& d = config.data;
            for (std::size_t i = 0; i < d.sequences.size(); ++i) {
                if (d.sequences[i] == s && (d.weights.empty() || d.weights[i] > 0.0)) {
                    return true;
                }
            }
            return false;
        });
        curve_csv += std::to_string(steps) + "," + fmt(v, 6) + "," + fmt(token_entropy(seqs, config.data.n_data), 6) +
                     "\n";
        validity_curve.x.push_back(steps);
        validity_curve.y.push_back(v);
    }
    write_text(dir / "steps_curve.csv", curve_csv);

    // Per grid step of the configured decoder: the data bound and, for models
    // evaluated in mask-absorbing mode, the exact conditional total correlation.
    const JointDist joint = config.data.joint();
    json grid = json::array();
    Series bound_curve{"lower bound", {}, {}}, tc_curve{"model TC", {}, {}};
    std::string grid_csv = "step,t,s,thm1_bound_nats,tc_nats\n";
    double bound_total = 0.0, tc_total = 0.0;
    const bool exact_tc = model.config.kind == ModelKind::mdm;
    for (int k = 0; k < dc.steps; ++k) {
        const double t = 1.0 - static_cast<double>(k) / dc.steps;
        const double s = 1.0 - static_cast<double>(k + 1) / dc.steps;
        const auto bound = thm1_lower_bound(joint, s, t, schedule, config.analysis.capacity);
        bound_total += bound.value;
        json row = {{"step", k + 1}, {"t", t}, {"s", s}, {"thm1_bound_nats", bound.value},
                    {"pair", {bound.i, bound.j}}, {"event_probability", bound.event_probability}};
        double tc = std::nan("");
        if (exact_tc) {
            const auto contexts = reverse_contexts(joint, s, t, schedule, config.analysis.capacity);
            tc = tc_exact(contexts, model_marginals(model, contexts, s, t, schedule));
            tc_total += tc;
            row["tc_nats"] = tc;
            tc_curve.x.push_back(k + 1);
            tc_curve.y.push_back(tc);
        }
        bound_curve.x.push_back(k + 1);
        bound_curve.y.push_back(bound.value);
        grid_csv += std::to_string(k + 1) + "," + fmt(t, 6) + "," + fmt(s, 6) + "," + fmt(bound.value, 9) + "," +
                    (exact_tc ? fmt(tc, 9) : std::string()) + "\n";
        grid.push_back(row);
    }
    write_text(dir / "grid_steps.csv", grid_csv);

    const auto probe = probe_summary(model, config.analysis.probe_draws, config.analysis_rng().split(1));
    json analysis = {{"metrics", to_json(e.metrics)},
                     {"grid", grid},
                     {"thm1_bound_total_nats", bound_total},
                     {"probe", to_json(probe)}};
    if (exact_tc) {
        analysis["tc_total_nats"] = tc_total;
    }
    write_json(dir / "analysis.json", analysis);

    std::ostringstream report;
    report << metrics_markdown("Analysis", e.metrics) << "\n## Decoding steps\n\n| steps | validity |\n|---|---|\n";
    for (std::size_t i = 0; i < validity_curve.x.size(); ++i) {
        report << "| " << validity_curve.x[i] << " | " << fmt(validity_curve.y[i]) << " |\n";
    }
    report << "\nSum of per-step lower bounds over the " << dc.steps << "-step grid: " << fmt(bound_total, 6)
           << " nats";
    if (exact_tc) {
        report << "; model total correlation: " << fmt(tc_total, 6) << " nats";
    }
    report << ".\n\nFull-mask probe: " << fmt(100.0 * probe.consistent_fraction, 1) << "% of "
           << probe.table.p_first.size() << " noise draws agree across positions within " << probe.gap << ".\n";
    write_text(dir / "report.md", report.str());

    if (plots) {
        std::string svg = svg_line_chart("Validity by decoding steps", "steps", "validity", {validity_curve}, true);
        std::vector<Series> per_step{bound_curve};
        if (exact_tc) {
            per_step.push_back(tc_curve);
        }
        const std::string svg2 = svg_line_chart("Per-step factorization terms", "grid step", "nats", per_step);
        write_text(dir / "plots.svg", svg);
        write_text(dir / "grid_plot.svg", svg2);
    }
    log << report.str();
    return kExitOk;
}

int cmd_repro_synthetic(const ReproOptions& options, const fs::path& dir, std::ostream& log)
{
    fs::create_directories(dir);
    ReproOptions o = options;
    if (!o.log) {
        o.log = [&log](const std::string& m) { log << m << "\n" << std::flush; };
    }
    const auto r = run_synthetic_repro(o);
    save_checkpoint(r.mdm_base, dir / "mdm_base.ckpt");
    save_checkpoint(r.mdm_student, dir / "mdm_student.ckpt");
    save_checkpoint(r.imdm_student, dir / "imdm_student.ckpt");
    write_text(dir / "pretrain_loss.csv", loss_csv(r.pretrain_trace));
    write_json(dir / "metrics_mdm.json", to_json(r.mdm_eval.metrics));
    write_json(dir / "metrics_imdm.json", to_json(r.imdm_eval.metrics));
    write_json(dir / "repro.json", to_json(r));
    write_json(dir / "timing.json", {{"seconds", r.seconds}});
    const std::string md = repro_markdown(r);
    write_text(dir / "report.md", md);
    log << md;
    return r.passed() ? kExitOk : kExitPropertyFailure;
}

int cmd_oracle(const OracleCommandOptions& options, const std::optional<fs::path>& report, std::ostream& out)
{
    OracleOptions o;
    o.seed = options.seed;
    o.workers = options.workers;
    if (options.inject_fault == "imdm-weight-sign") {
        o.imdm_posterior = [](int z, const Categorical& x, double a_s, double a_t) {
            auto p = kernels::posterior_imdm(z, x, a_s, a_t);
            p.fresh_mask_prob = -p.fresh_mask_prob;
            return p;
        };
    } else if (!options.inject_fault.empty()) {
        throw ConfigError({"--inject-fault: unknown fault \"" + options.inject_fault + "\""});
    }
    const auto& names = options.suites.empty() ? oracle_suite_names() : options.suites;
    for (const auto& n : names) {
        if (std::find(oracle_suite_names().begin(), oracle_suite_names().end(), n) == oracle_suite_names().end()) {
            throw ConfigError({"--suite: unknown suite \"" + n + "\""});
        }
    }

    bool all = true;
    json suites = json::array();
    for (const auto& n : names) {
        const auto r = run_oracle_suite(n, o);
        all = all && r.passed();
        json checks = json::array();
        for (const auto& c : r.checks) {
            checks.push_back({{"name", c.name}, {"value", c.value}, {"limit", c.limit},
                              {"bound", c.upper ? "upper" : "lower"}, {"slack", c.slack()},
                              {"passed", c.passed()}});
        }
        const auto& w = r.worst();
        suites.push_back({{"name", r.name}, {"passed", r.passed()}, {"seconds", r.seconds},
                          {"worst", {{"name", w.name}, {"slack", w.slack()}}}, {"checks", checks}});
        out << (r.passed() ? "PASS " : "FAIL ") << std::left << std::setw(24) << r.name << " worst " << w.name
            << " slack " << std::scientific << std::setprecision(3) << w.slack() << std::defaultfloat << " ("
            << std::fixed << std::setprecision(1) << r.seconds << std::defaultfloat << " s)\n";
    }
    const json doc = {{"seed", options.seed}, {"passed", all}, {"suites", suites}};
    if (report) {
        if (report->has_parent_path()) {
            fs::create_directories(report->parent_path());
        }
        write_json(*report, doc);
    }
    return all ? kExitOk : kExitPropertyFailure;
}

}  // namespace imdm::cli
