#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "imdm/cli/commands.hpp"

namespace fs = std::filesystem;
using namespace imdm::cli;

namespace {

RunConfig config_from(const std::string& path)
{
    return path.empty() ? parse_config("", "<defaults>") : load_config(path);
}

std::optional<fs::path> opt_path(const std::string& s)
{
    return s.empty() ? std::nullopt : std::optional<fs::path>(s);
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Masked and infinite-mask diffusion on small discrete tasks"};
    app.require_subcommand(1);

    std::string config_path, out, teacher, checkpoint, baseline, report, fault;
    int iterations = -1;
    bool plots = false, quick = false;
    int workers = 1;
    std::vector<std::string> suites;

    auto* pretrain = app.add_subcommand("pretrain", "Train a denoiser on the configured data");
    pretrain->add_option("config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
    pretrain->add_option("--iterations", iterations, "Override train.iterations")->check(CLI::NonNegativeNumber);
    pretrain->add_option("--out", out, "Run directory");

    auto* distill = app.add_subcommand("distill", "Distill a teacher checkpoint into a few-step student");
    distill->require_subcommand(1);
    std::string distill_mode;
    for (const char* mode : {"sdtt", "redi", "combined"}) {
        auto* sub = distill->add_subcommand(mode, std::string(mode) + " distillation");
        sub->add_option("config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--teacher", teacher, "Teacher checkpoint")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, "Run directory");
        sub->callback([&distill_mode, mode] { distill_mode = mode; });
    }

    auto* sample = app.add_subcommand("sample", "Decode samples to JSONL");
    sample->add_option("config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
    sample->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    sample->add_option("--out", out, "Run directory");

    auto* eval = app.add_subcommand("eval", "Sample metrics and the one-step factorization error");
    eval->add_option("config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
    auto* eval_ckpt = eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
    auto* eval_base = eval->add_option("--baseline", baseline, "Reference generator instead of a model")
                          ->check(CLI::IsMember({"random"}));
    eval_ckpt->excludes(eval_base);
    eval->add_option("--out", out, "Run directory");

    auto* analyze = app.add_subcommand("analyze", "Evaluation plus per-step bounds, probes and curves");
    analyze->add_option("config", config_path, "TOML run configuration")->required()->check(CLI::ExistingFile);
    analyze->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
    analyze->add_flag("--plots", plots, "Also write SVG plots");
    analyze->add_option("--out", out, "Run directory");

    auto* repro = app.add_subcommand("repro-synthetic", "End-to-end reproduction on the {00, 11} task");
    repro->add_flag("--quick", quick, "500 samples and 1,000 noise draws with widened tolerances");
    repro->add_option("--workers", workers, "Sampling threads")->check(CLI::PositiveNumber);
    repro->add_option("--out", out, "Output directory (default runs/repro-synthetic)");

    auto* oracle = app.add_subcommand("oracle", "Property suites against brute-force oracles");
    oracle->add_option("--suite", suites, "Run only these suites");
    oracle->add_option("--report", report, "Write the JSON report here");
    oracle->add_option("--workers", workers, "Threads")->check(CLI::PositiveNumber);
    oracle->add_option("--inject-fault", fault, "Mutation fixture")->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*pretrain) {
            const auto c = config_from(config_path);
            return cmd_pretrain(c, iterations >= 0 ? std::optional<int>(iterations) : std::nullopt,
                                run_dir(c, "pretrain", opt_path(out)), std::cerr);
        }
        if (*distill) {
            const auto c = config_from(config_path);
            const DistillMode mode = distill_mode == "sdtt"   ? DistillMode::sdtt
                                     : distill_mode == "redi" ? DistillMode::redi
                                                              : DistillMode::combined;
            return cmd_distill(mode, c, teacher, run_dir(c, "distill-" + distill_mode, opt_path(out)), std::cerr);
        }
        if (*sample) {
            const auto c = config_from(config_path);
            return cmd_sample(c, checkpoint, run_dir(c, "sample", opt_path(out)), std::cerr);
        }
        if (*eval) {
            const auto c = config_from(config_path);
            if (checkpoint.empty() && baseline.empty()) {
                throw ConfigError({"eval: give --checkpoint or --baseline random"});
            }
            return cmd_eval(c, opt_path(checkpoint), run_dir(c, "eval", opt_path(out)), std::cout);
        }
        if (*analyze) {
            const auto c = config_from(config_path);
            return cmd_analyze(c, checkpoint, run_dir(c, "analyze", opt_path(out)), plots, std::cout);
        }
        if (*repro) {
            ReproOptions o;
            o.quick = quick;
            o.workers = workers;
            o.seed = env_seed().value_or(0);
            return cmd_repro_synthetic(o, out.empty() ? fs::path("runs/repro-synthetic") : fs::path(out), std::cout);
        }
        if (*oracle) {
            OracleCommandOptions o;
            o.seed = env_seed().value_or(o.seed);
            o.workers = workers;
            o.suites = suites;
            o.inject_fault = fault;
            return cmd_oracle(o, opt_path(report), std::cout);
        }
    } catch (...) {
        return exit_code_for_current_exception(std::cerr);
    }
    return kExitError;
}
