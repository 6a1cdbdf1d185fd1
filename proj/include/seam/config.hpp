#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "seam/engine.hpp"
#include "seam/lab.hpp"
#include "seam/models.hpp"
#include "seam/pipeline.hpp"
#include "seam/samplers.hpp"

namespace seam {

inline constexpr int kConfigFormatVersion = 1;

/// Input and output locations. Empty corpus paths fall back to the files of
/// `world`; empty model paths fall back to `out/models`.
struct PathConfig {
  std::filesystem::path world;
  std::filesystem::path sft;
  std::filesystem::path preference;
  std::filesystem::path rl;
  std::filesystem::path policy;
  std::filesystem::path reward;
  std::filesystem::path lexicon;
  std::filesystem::path report;  // scores JSONL; its summary sits next to it
  std::filesystem::path out = "out";
  std::filesystem::path cache;

  std::filesystem::path world_dir() const { return world.empty() ? out / "world" : world; }
  std::filesystem::path sft_path() const { return sft.empty() ? world_dir() / "d_p.jsonl" : sft; }
  std::filesystem::path preference_path() const {
    return preference.empty() ? world_dir() / "d_r.jsonl" : preference;
  }
  std::filesystem::path rl_path() const { return rl.empty() ? world_dir() / "d_rl.jsonl" : rl; }
  std::filesystem::path lexicon_path() const {
    return lexicon.empty() ? world_dir() / "lexicon.jsonl" : lexicon;
  }
  std::filesystem::path policy_path() const { return policy.empty() ? out / "models" / "policy.json" : policy; }
  std::filesystem::path reward_path() const { return reward.empty() ? out / "models" / "reward.json" : reward; }
  std::filesystem::path report_path() const { return report.empty() ? out / "scores.jsonl" : report; }
};

/// Remote endpoints; an empty URL selects the local implementation.
struct BackendConfig {
  std::string policy_url;
  std::string reward_url;
  std::string embed_url;
  std::string generator_url;
  int timeout_ms = 30000;
  int max_attempts = 3;
};

struct SamplerParams {
  ContrastConfig contrast;
  std::size_t degrade_n = 30;
  std::size_t embedding_dim = 1024;
  AttackConfig attack;
};

struct LabParams {
  std::size_t eval_samples = 16;
  std::vector<double> fractions{0.1, 0.2, 0.3, 0.4, 0.6, 0.8};
  std::size_t mismatch_n = 1000;
};

struct RunConfig {
  int format_version = kConfigFormatVersion;
  std::uint64_t seed = 0;
  std::size_t concurrency = 1;
  /// Unset means lenient for scoring commands and strict for lab experiments.
  std::optional<bool> strict;
  PathConfig paths;
  BackendConfig backends;
  WorldConfig world;
  NgramConfig ngram;
  RewardTrainConfig reward_train;
  SamplerParams samplers;
  SeamMode mode = SeamMode::log;
  std::vector<Variant> variants{Variant::contrast, Variant::degrade, Variant::adversarial};
  double fraction = 0.2;
  Variant filter_variant = Variant::adversarial;
  AugmentConfig augment;
  RlConfig rl;
  LadderConfig ladder;
  LabParams lab;

  void validate() const;
};

/// Effective configuration with every default written out.
json to_json(const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and a wrong
/// format_version raise ConfigError.
RunConfig run_config_from_json(const json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// Applies `key.path=value` overrides to a config document. The value is
/// parsed as JSON when possible and taken as a string otherwise.
void apply_override(json& doc, const std::string& assignment);

using EnvLookup = std::function<const char*(const char*)>;

/// SEAM_POLICY_URL, SEAM_REWARD_URL, SEAM_EMBED_URL, SEAM_GENERATOR_URL and
/// SEAM_CACHE_DIR fill the matching fields when those are still empty.
void apply_environment(RunConfig& c, const EnvLookup& env);

/// sha256 of the effective config without paths and concurrency, which do
/// not change results.
std::string config_fingerprint(const RunConfig& c);

}  // namespace seam
