#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "seam/corpus.hpp"
#include "seam/models.hpp"
#include "seam/samplers.hpp"

namespace seam {

inline constexpr int kReportFormatVersion = 1;

enum class SeamMode { log, prob };

std::string to_string(SeamMode m);
SeamMode seam_mode_from_string(std::string_view s);

struct ProbeScore {
  std::size_t probe_index = 0;
  double reward = 0.0;
  double epsilon = 0.0;
  double norm_loglik = 0.0;
  double term = 0.0;
};

struct SeamRecord {
  std::string sample_id;
  Variant variant = Variant::contrast;
  SeamMode mode = SeamMode::log;
  double golden_reward = 0.0;
  std::vector<ProbeScore> probe_scores;
  double score = 0.0;
  std::size_t shortfall = 0;      // probe-set shortfall plus failed probes
  std::size_t failed_probes = 0;
  bool out_of_band = false;
  std::string error;  // non-empty when the sample could not be scored

  bool ok() const noexcept { return error.empty(); }
};

struct SeamReport {
  std::vector<SeamRecord> records;
  SeamMode mode = SeamMode::log;
  std::vector<Variant> variants;
  std::string config_fingerprint;
  std::string policy_fingerprint;
  std::string reward_fingerprint;
  std::string corpus_fingerprint;
  bool from_cache = false;
};

/// max(R(I o r*) - R(I o r), 0).
double misjudgment(const RewardBackend& reward, const Instruction& instruction,
                   const Response& golden, const Response& probe);
inline double misjudgment_from_scores(double golden, double probe) {
  return probe > golden ? probe - golden : 0.0;
}

/// Total log-probability (end marker included) over the token count.
double norm_loglik(const PolicyBackend& policy, const Instruction& instruction,
                   const Response& response);
/// norm_loglik itself in log mode, exp(norm_loglik) in prob mode.
double mode_weight(double norm_loglik, SeamMode mode);

/// Scores one probe set. Backend failures on single probes are excluded and
/// counted unless `strict`, in which case they propagate tagged with the
/// probe id.
SeamRecord seam_score(const PolicyBackend& policy, const RewardBackend& reward,
                      const RlSample& sample, const ProbeSet& probes, SeamMode mode = SeamMode::log,
                      bool strict = true);

/// Probe-set constructors available to the engine. Null members disable the
/// corresponding variant.
struct SamplerSuite {
  const ContrastIndex* contrast = nullptr;
  ContrastConfig contrast_config;
  const Degrader* degrader = nullptr;
  std::size_t degrade_n = 30;
  const SynonymSource* synonyms = nullptr;
  AttackConfig attack;
  std::uint64_t seed = 0;

  std::string fingerprint(const std::vector<Variant>& variants) const;
};

ProbeSet build_probe_set(Variant variant, const RlSample& sample, const RewardBackend& reward,
                         const SamplerSuite& samplers);

struct ScoreConfig {
  std::vector<Variant> variants{Variant::contrast};
  SeamMode mode = SeamMode::log;
  std::size_t concurrency = 1;
  bool strict = false;
  std::filesystem::path cache_dir;  // empty disables caching
  std::string config_fingerprint;   // recorded in the report
};

/// One record per (sample, variant), samples in input order and variants in
/// config order. Results are cached under a key covering every input
/// fingerprint. When `probe_sets` is non-null it receives the sets in record
/// order.
SeamReport score_dataset(const PolicyBackend& policy, const RewardBackend& reward,
                         const RlCorpus& corpus, const SamplerSuite& samplers,
                         const ScoreConfig& config, std::vector<ProbeSet>* probe_sets = nullptr);

/// Scores pre-built probe sets, matched to samples by id.
SeamReport score_probe_sets(const PolicyBackend& policy, const RewardBackend& reward,
                            const RlCorpus& corpus, const std::vector<ProbeSet>& sets,
                            const ScoreConfig& config);

json to_json(const ProbeScore& s);
json to_json(const SeamRecord& r);
SeamRecord seam_record_from_json(const json& j);

std::string report_to_jsonl(const SeamReport& report);
/// Records only; fingerprints live in the summary.
std::vector<SeamRecord> records_from_jsonl(const std::vector<std::string>& lines,
                                           const std::string& source = "<report>");
/// Per-variant score quantiles, shortfalls, failure counts and fingerprints.
json report_summary(const SeamReport& report);
SeamReport load_report(const std::filesystem::path& jsonl, const std::filesystem::path& summary);
void save_report(const SeamReport& report, const std::filesystem::path& jsonl,
                 const std::filesystem::path& summary);

/// Linear-interpolation quantile of an unsorted sample, q in [0, 1].
double quantile(std::vector<double> values, double q);

}  // namespace seam
