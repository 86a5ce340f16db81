#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "imdm/cli/config.hpp"
#include "imdm/cli/pipeline.hpp"

// Subcommands behind the `imdm` executable. Each writes a self-describing run
// directory and returns the process exit code for its own outcome; errors
// propagate as exceptions and are mapped by exit_code_for.
namespace imdm::cli {

enum ExitCode : int {
    kExitOk = 0,
    kExitError = 1,
    kExitConfig = 2,
    kExitTrainingAbort = 3,
    kExitCapacity = 4,
    kExitPropertyFailure = 5,
};

// Maps the exception currently being handled to an exit code, printing a
// diagnostic to `err`. Call only from inside a catch block.
int exit_code_for_current_exception(std::ostream& err);

// Resolves the run directory: `out` when given, else output_dir/name/command.
std::filesystem::path run_dir(const RunConfig& config, const std::string& command,
                              const std::optional<std::filesystem::path>& out);

int cmd_pretrain(const RunConfig& config, std::optional<int> iterations, const std::filesystem::path& dir,
                 std::ostream& log);

enum class DistillMode { sdtt, redi, combined };

int cmd_distill(DistillMode mode, const RunConfig& config, const std::filesystem::path& teacher,
                const std::filesystem::path& dir, std::ostream& log);

int cmd_sample(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& dir,
               std::ostream& log);

// With no checkpoint, evaluates the uniform random-sequence baseline.
int cmd_eval(const RunConfig& config, const std::optional<std::filesystem::path>& checkpoint,
             const std::filesystem::path& dir, std::ostream& log);

int cmd_analyze(const RunConfig& config, const std::filesystem::path& checkpoint, const std::filesystem::path& dir,
                bool plots, std::ostream& log);

int cmd_repro_synthetic(const ReproOptions& options, const std::filesystem::path& dir, std::ostream& log);

struct OracleCommandOptions {
    std::uint64_t seed = 20240601;
    int workers = 1;
    std::vector<std::string> suites;  // empty: all
    std::string inject_fault;         // "" or "imdm-weight-sign"
};

int cmd_oracle(const OracleCommandOptions& options, const std::optional<std::filesystem::path>& report,
               std::ostream& out);

}  // namespace imdm::cli
