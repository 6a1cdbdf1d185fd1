#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "seam/corpus.hpp"
#include "seam/models.hpp"
#include "seam/samplers.hpp"

namespace seam {

inline constexpr int kWorldFormatVersion = 1;

/// Word inventory of one topic.
struct Topic {
  std::string noun;
  std::string trigger_noun;  // instructions about this noun are the hackable ones
  std::vector<std::string> core;
  std::vector<std::string> rare;  // rare[i] is a low-frequency variant of core[i]
  std::vector<std::string> jargon;
  /// markers[i] shares its reward-model unigram feature slot with core[i].
  std::vector<std::string> markers;
};

/// Ground-truth quality on a 1-10 scale:
///   1 + 9 * clamp(0.7 * relevance + 0.3 * length - 1.5 * markers, 0, 1)
/// where relevance is the share of tokens belonging to the instruction's
/// topic, length is min(len / target, 1) and markers is the share of marker
/// tokens.
class Oracle {
 public:
  Oracle() = default;
  Oracle(const std::vector<Topic>& topics, std::size_t target_len);

  double quality(const Instruction& instruction, const Response& response) const;
  std::optional<std::size_t> topic_of(const Instruction& instruction) const;
  bool is_trigger(const Instruction& instruction) const;
  bool is_marker(const std::string& token) const { return markers_.count(token) > 0; }

 private:
  std::unordered_map<std::string, std::size_t> nouns_;
  std::unordered_map<std::string, std::size_t> triggers_;
  std::vector<std::unordered_map<std::string, bool>> relevant_;  // per topic
  std::unordered_map<std::string, bool> markers_;
  std::size_t target_len_ = 6;
};

/// Oracle quality exposed as a reward backend.
class OracleReward : public RewardBackend {
 public:
  explicit OracleReward(const Oracle& oracle) : oracle_(&oracle) {}
  double score(const Instruction& i, const Response& r) const override { return oracle_->quality(i, r); }
  std::string fingerprint() const override { return "oracle"; }

 private:
  const Oracle* oracle_;
};

/// a * base + b.
class AffineReward : public RewardBackend {
 public:
  AffineReward(const RewardBackend& base, double scale, double shift)
      : base_(&base), scale_(scale), shift_(shift) {}
  double score(const Instruction& i, const Response& r) const override {
    return scale_ * base_->score(i, r) + shift_;
  }
  std::string fingerprint() const override;

 private:
  const RewardBackend* base_;
  double scale_;
  double shift_;
};

struct NoiseProfile {
  double filler = 0.0;
  double offtopic = 0.0;
};

struct WorldConfig {
  std::uint64_t seed = 0;
  std::size_t n_sft = 10000;
  std::size_t n_pref = 600;
  std::size_t n_rl = 1000;
  std::size_t n_eval = 1000;
  std::size_t n_pref_test = 200;
  std::size_t n_topics = 12;
  double hackable_fraction = 0.2;
  std::size_t len_min = 4;
  std::size_t len_max = 8;
  double jargon_share = 1.0;  // share of content slots using jargon in trigger responses
  double marker_rate = 0.35;  // jargon slots replaced by markers in the SFT corpus
  double rare_rate = 0.05;
  NoiseProfile sft_noise{0.2, 0.02};
  NoiseProfile preferred_noise{0.05, 0.0};
  NoiseProfile rejected_noise{0.4, 0.0};
  /// Every role draws instructions and responses from one generator
  /// (triggers included, SFT noise everywhere).
  bool shared_generator = false;

  void validate() const;
};

json to_json(const WorldConfig& c);
WorldConfig world_config_from_json(const json& j);

struct LabWorld {
  WorldConfig config;
  std::vector<Topic> topics;
  std::vector<std::string> fillers;
  SftCorpus d_p;
  PreferenceCorpus d_r;
  RlCorpus d_rl;
  RlCorpus eval;                    // held-out instructions from the RL distribution
  PreferenceCorpus pref_test;       // held-out pairs from the preference distribution
  PreferenceCorpus planted_pairs;   // held-out clean vs marker-laden trigger responses
  std::vector<std::string> planted; // d_rl ids of trigger instructions
  Oracle oracle;

  /// core -> rare variant, jargon -> the topic's markers.
  LexiconSynonyms lexicon() const;
  std::string fingerprint() const;
};

LabWorld generate_world(const WorldConfig& config);

void save_world(const LabWorld& world, const std::filesystem::path& dir);
LabWorld load_world(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// RL and metrics

struct RlConfig {
  double beta = 0.05;
  std::size_t samples_per_instruction = 8;
  std::size_t steps = 2;
  double step_size = 1.0;
  std::uint64_t seed = 0;
  /// Exponent applied to the mean log weight ratio when rescaling counts.
  double update_rate = 0.25;
  /// Instructions per count update; 0 updates once per pass over the corpus.
  std::size_t batch_size = 200;
  std::size_t max_len = 16;

  void validate() const;
};

json to_json(const RlConfig& c);
RlConfig rl_config_from_json(const json& j);

/// Sample-reweighting policy improvement of the KL-regularized objective
/// R(I o r) - beta * log(pi(r|I) / pi_sft(r|I)). Per step and instruction, k
/// responses are sampled with weights w_j = exp(step_size * (a_j - mean(a)) /
/// (1 + step_size * beta)). Every n-gram event visited in a step has its count
/// multiplied by exp(update_rate * mean log(w_j / mean(w))) over the visits.
NgramPolicy rl_improve(const NgramPolicy& sft, const RewardBackend& reward, const RlCorpus& d_rl,
                       const RlConfig& config);

/// Mean oracle quality of `samples` seeded samples per test instruction.
double q_pm(const PolicyBackend& policy, const RlCorpus& test, const Oracle& oracle,
            std::uint64_t seed = 0, std::size_t samples = 1, std::size_t max_len = 16);

/// Share of pairs ranked correctly; exact ties count one half.
double q_rm(const RewardBackend& reward, const PreferenceCorpus& pairs);

struct MismatchPair {
  std::string sample_id;
  double reward_a = 0.0, reward_b = 0.0;
  double quality_a = 0.0, quality_b = 0.0;
  bool counted = false;  // false for double ties
  bool mismatch = false;
};

struct MismatchResult {
  double rate = 0.0;
  std::vector<MismatchPair> pairs;
};

/// One sample per policy for the first n instructions; mismatch when the sign
/// of the reward difference differs from the sign of the quality difference.
MismatchResult mismatch_rate(const PolicyBackend& a, const PolicyBackend& b,
                             const RewardBackend& reward, const Oracle& oracle,
                             const RlCorpus& test, std::size_t n, std::uint64_t seed = 0,
                             std::size_t max_len = 16);

/// Mean next-token total variation between `a` and `b` along trajectories
/// sampled from `a`.
double policy_divergence(const NgramPolicy& a, const NgramPolicy& b, const RlCorpus& instructions,
                         std::size_t samples, std::uint64_t seed, std::size_t max_len = 16);

// ---------------------------------------------------------------------------
// Ladders, sweeps and cross-validation

struct LadderConfig {
  std::vector<std::size_t> pm_sizes{100, 400, 800};
  std::vector<std::size_t> rm_sizes{100, 300, 600};
  std::uint64_t seed = 0;
};

struct QualityLadder {
  std::vector<std::pair<std::size_t, NgramPolicy>> pm_rungs;
  std::vector<std::pair<std::size_t, LinearReward>> rm_rungs;
};

/// Nested prefixes of a seeded permutation of d_p and d_r.
QualityLadder build_ladder(const LabWorld& world, const LadderConfig& config,
                           const RewardTrainConfig& reward_config = {});

struct SaturationResult {
  std::vector<std::size_t> pm_sizes, rm_sizes;
  std::vector<double> pm_quality;               // pre-RL Q_PM per PM rung
  std::vector<double> rm_quality;               // Q_RM per RM rung
  std::vector<std::vector<double>> grid;        // [pm][rm] post-RL Q_PM
};

SaturationResult saturation_sweep(const LabWorld& world, const LadderConfig& ladder,
                                  const RlConfig& rl, std::size_t concurrency = 1);

struct CrossValidation {
  std::vector<std::string> metrics{"q_pm", "q_rm"};
  std::vector<std::string> roles{"d_p", "d_r", "d_rl"};
  std::vector<std::vector<double>> values;  // [metric][role]
};

/// Q_PM on the test split instructions of each role and Q_RM on preference
/// pairs of each role (d_r pairs as given; golden vs degraded for d_p/d_rl).
CrossValidation cross_validate(const PolicyBackend& policy, const RewardBackend& reward,
                               const LabWorld& world, std::uint64_t seed = 0,
                               std::size_t samples = 1);

struct CvTraining {
  SftCorpus d_p;
  PreferenceCorpus d_r;
};

/// Training splits matching the test splits cross_validate holds out.
CvTraining cv_training_sets(const LabWorld& world, std::uint64_t seed = 0);

json to_json(const SaturationResult& s);
json to_json(const CrossValidation& c);

}  // namespace seam
