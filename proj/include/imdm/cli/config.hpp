#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "imdm/distill.hpp"

namespace imdm::cli {

// Invalid or unreadable configuration; carries one diagnostic per problem.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> diagnostics);

    const std::vector<std::string>& diagnostics() const { return diagnostics_; }

private:
    std::vector<std::string> diagnostics_;
};

struct DecodeSettings {
    int steps = 1;
    int n_samples = 5000;
    int workers = 1;
    std::vector<std::pair<int, int>> conditioning;  // (position, token)
};

struct AnalysisSettings {
    int n_eps = 10000;
    int probe_draws = 64;
    std::size_t capacity = JointDist::kDefaultCapacity;
};

// Every module's settings for one run. Stage seeds derive from `seed`.
struct RunConfig {
    std::string name = "run";
    std::string output_dir = "runs";
    std::uint64_t seed = 0;

    double clip_eps = 1e-4;
    DenoiserConfig model;
    DatasetSpec data = DatasetSpec::synthetic_pair();
    TrainConfig train;
    DistillConfig distill;
    DecodeSettings decode;
    AnalysisSettings analysis;

    Schedule schedule() const { return Schedule(clip_eps); }
    DecodeConfig decode_config() const;

    // Seeds for each stage, all functions of `seed`.
    TrainConfig train_config() const;
    DistillConfig distill_config() const;
    Rng init_rng() const { return Rng(seed).split(5); }
    Rng decode_rng() const { return Rng(seed).split(3); }
    Rng analysis_rng() const { return Rng(seed).split(4); }

    // Cross-field checks; throws ConfigError.
    void validate() const;
};

// Parses a TOML document. Unknown keys, wrong types and invalid values are
// all reported together. IMDM_SEED, when set, replaces the top-level seed.
RunConfig parse_config(const std::string& toml_text, const std::string& origin = "<string>");
RunConfig load_config(const std::filesystem::path& path);

// Seed override from the environment, if IMDM_SEED is set.
std::optional<std::uint64_t> env_seed();

// Fully resolved configuration (all defaults filled in).
std::string to_toml(const RunConfig& config);
nlohmann::json to_json(const RunConfig& config);

}  // namespace imdm::cli
