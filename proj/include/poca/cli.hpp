#pragma once

// Pipeline driver behind the `poca` executable: run configuration, one
// subcommand per pipeline stage, manifest and lock handling.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "poca/calibrate.hpp"
#include "poca/corpus.hpp"
#include "poca/evalreport.hpp"
#include "poca/rewards.hpp"
#include "poca/summarizer.hpp"

namespace poca::cli {

/// Stage seeds left unset derive from `seed` (rewards +1..+3, init +4,
/// supervised +5, rl +6).
struct SeedOverrides {
    std::optional<std::uint64_t> rewards;
    std::optional<std::uint64_t> init;
    std::optional<std::uint64_t> supervised;
    std::optional<std::uint64_t> rl;
};

struct RunConfig {
    std::uint64_t seed = 2024;
    std::filesystem::path out_dir = "runs/default";
    /// Empty means <out_dir>/corpus and <out_dir>/checkpoints.
    std::filesystem::path corpus_dir;
    std::filesystem::path checkpoint_dir;
    std::size_t vocab_min_freq = 1;
    corpus::CorpusConfig corpus;
    rewards::TrainConfig reward_training;
    summ::ArchConfig arch;
    summ::SupervisedConfig supervised;
    calib::RLConfig rl;
    rewards::RewardWeights weights;
    std::vector<eval::AblationConfig> ablation = eval::standard_ablation();
    SeedOverrides seeds;

    std::filesystem::path corpus_path() const;
    std::filesystem::path checkpoint_path() const;
    std::uint64_t rewards_seed() const;
    std::uint64_t init_seed() const;
    std::uint64_t supervised_seed() const;
    std::uint64_t rl_seed() const;

    /// Throws ConfigError.
    void validate() const;
};

/// Strict parse: unknown keys and wrong types throw ConfigError.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::filesystem::path& path);
/// Every effective value, stage seeds resolved.
nlohmann::json config_to_json(const RunConfig& config);
/// FNV-1a of the canonical effective JSON, as 16 hex digits.
std::string config_hash(const RunConfig& config);

/// "a,b,c" -> weights. Throws ConfigError.
rewards::RewardWeights parse_weights(const std::string& s);

/// Runs one subcommand; args[0] is the program name. Returns the exit code:
/// 0 ok, 1 config error, 2 data error, 3 training abort. Failures print one
/// line `poca: error=<kind> reason=<text>` to stderr.
int run(const std::vector<std::string>& args);

}  // namespace poca::cli
