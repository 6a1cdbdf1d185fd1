#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "seam/corpus.hpp"
#include "seam/models.hpp"
#include "seam/remote.hpp"

namespace seam {

enum class Variant { contrast, degrade, adversarial };

std::string to_string(Variant v);
/// Accepts "contrast", "degrade", "adversarial" and the short form "adv".
Variant variant_from_string(std::string_view s);

struct Edit {
  std::size_t position = 0;
  std::string from;
  std::string to;
  double gain = 0.0;  // reward change caused by this edit when it was applied
};

/// Where a probe came from. Only the fields of its variant are meaningful.
struct Provenance {
  Variant variant = Variant::contrast;
  // contrast
  std::string source_id;
  double similarity = 0.0;
  bool out_of_band = false;
  // degrade
  std::string op;
  std::uint64_t seed = 0;
  // adversarial
  std::vector<Edit> edits;
  int iterations = 0;
  int restart = 0;
};

struct Probe {
  Response response;
  Provenance provenance;
};

/// The finite sample set standing in for the hacking distribution of one
/// instruction.
struct ProbeSet {
  std::string sample_id;
  Variant variant = Variant::contrast;
  std::vector<Probe> probes;
  std::size_t target_size = 30;
  std::size_t shortfall = 0;  // target_size - probes.size(), when positive
  bool out_of_band = false;   // contrast fallback below the similarity band
};

json to_json(const Provenance& p);
Provenance provenance_from_json(const json& j);
json to_json(const ProbeSet& s);
ProbeSet probe_set_from_json(const json& j);
void save_probe_sets(const std::filesystem::path& path, const std::vector<ProbeSet>& sets);
std::vector<ProbeSet> load_probe_sets(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Contrast retrieval

struct ContrastConfig {
  std::size_t k = 30;
  double lo = 0.8;
  double hi = 0.9;
};

/// Pre-embedded SFT instructions. Holds references; the corpus and the
/// embedding backend must outlive the index.
class ContrastIndex {
 public:
  ContrastIndex(const SftCorpus& corpus, const EmbeddingBackend& embedding);

  struct Hit {
    std::size_t index;
    double similarity;
  };

  struct Result {
    std::vector<Hit> hits;
    bool out_of_band = false;
  };

  /// Candidates with a different instruction text whose similarity lies in
  /// [lo, hi], highest first (ties by corpus order), skipping responses
  /// already taken, up to k. With no in-band candidate, the k nearest below
  /// lo are returned and flagged out of band.
  Result retrieve(const Instruction& query, const ContrastConfig& config) const;

  const SftCorpus& corpus() const noexcept { return *corpus_; }
  const EmbeddingBackend& embedding() const noexcept { return *embedding_; }

 private:
  const SftCorpus* corpus_;
  const EmbeddingBackend* embedding_;
  std::vector<std::vector<double>> vectors_;  // empty for zero-vector instructions
};

ProbeSet build_contrast_set(const RlSample& sample, const ContrastIndex& index,
                            const ContrastConfig& config = {});
ProbeSet build_contrast_set(const RlSample& sample, const SftCorpus& sft,
                            const EmbeddingBackend& embedding, const ContrastConfig& config = {});

// ---------------------------------------------------------------------------
// Degradation

namespace degrade_ops {

inline constexpr std::array<std::string_view, 5> kNames = {"truncate", "shuffle", "splice",
                                                           "dropout", "repeat"};
inline constexpr double kDropoutRate = 0.15;

using Tokens = std::vector<std::string>;

/// First ceil(len / 2) tokens.
Tokens truncate(const Tokens& t);
/// Sentence order shuffle for multi-sentence text, token shuffle otherwise.
Tokens shuffle(const Tokens& t, Rng& rng);
/// First ceil(len / 2) tokens followed by the trailing half of `donor`.
Tokens splice(const Tokens& t, const Tokens& donor);
/// Removes each token independently with probability `rate`.
Tokens dropout(const Tokens& t, Rng& rng, double rate = kDropoutRate);
/// Repeats one sentence (multi-sentence text) or a 1-3 token span in place.
Tokens repeat_span(const Tokens& t, Rng& rng);

/// Splits after '.', '!' and '?' tokens.
std::vector<Tokens> sentences(const Tokens& t);

}  // namespace degrade_ops

class Degrader {
 public:
  virtual ~Degrader() = default;
  /// Candidate worse responses; duplicates are removed by the caller.
  virtual std::vector<Probe> generate(const RlSample& sample, std::size_t n,
                                      std::uint64_t seed) const = 0;
  virtual std::string fingerprint() const = 0;
};

/// Cycles the five degradation operators with distinct sub-seeds until n
/// distinct texts exist or 5n attempts are used.
class LocalDegrader : public Degrader {
 public:
  /// `donors` supplies the trailing halves for the splice operator.
  explicit LocalDegrader(std::vector<Response> donors);

  std::vector<Probe> generate(const RlSample& sample, std::size_t n,
                              std::uint64_t seed) const override;
  std::string fingerprint() const override;

 private:
  std::vector<Response> donors_;
};

class RemoteDegrader : public Degrader {
 public:
  explicit RemoteDegrader(RemoteConfig config) : generator_(std::move(config)) {}

  std::vector<Probe> generate(const RlSample& sample, std::size_t n,
                              std::uint64_t seed) const override;
  std::string fingerprint() const override { return generator_.fingerprint(); }

 private:
  RemoteGenerator generator_;
};

ProbeSet build_degraded_set(const RlSample& sample, const Degrader& generator, std::size_t n,
                            std::uint64_t seed);

// ---------------------------------------------------------------------------
// Adversarial word substitution

class SynonymSource {
 public:
  virtual ~SynonymSource() = default;
  virtual std::vector<std::string> synonyms(const std::string& word) const = 0;
  virtual std::string fingerprint() const = 0;
};

/// JSONL lexicon: {"word": str, "synonyms": [str...]}.
class LexiconSynonyms : public SynonymSource {
 public:
  explicit LexiconSynonyms(std::map<std::string, std::vector<std::string>> entries);
  static LexiconSynonyms load(const std::filesystem::path& path);
  static LexiconSynonyms parse(const std::vector<std::string>& lines,
                               const std::string& source = "<lexicon>");

  std::vector<std::string> synonyms(const std::string& word) const override;
  std::string fingerprint() const override;
  std::string to_jsonl() const;
  const std::map<std::string, std::vector<std::string>>& entries() const { return entries_; }

 private:
  std::map<std::string, std::vector<std::string>> entries_;
};

/// Nearest neighbours of each vocabulary word under an embedding backend.
class EmbeddingNeighborSynonyms : public SynonymSource {
 public:
  EmbeddingNeighborSynonyms(const std::vector<std::string>& vocabulary,
                            const EmbeddingBackend& embedding, std::size_t top_k = 5,
                            double min_cosine = 0.5);

  std::vector<std::string> synonyms(const std::string& word) const override;
  std::string fingerprint() const override { return fingerprint_; }

 private:
  std::map<std::string, std::vector<std::string>> neighbors_;
  std::string fingerprint_;
};

struct AttackConfig {
  std::size_t n_probes = 30;
  double max_replace_frac = 0.3;
  std::size_t max_restarts = 120;
  /// Restarts after the first search a random subset of positions.
  double restart_keep = 0.7;
  /// Stop restarting after this many restarts in a row add no new probe.
  std::size_t patience = 24;
};

/// Greedy word-substitution attack on the golden response. Restart 0 applies
/// the single best-gain edit at each step; later restarts order positions by
/// gain * softmax(saliency) over a random subset. Only positive-gain edits are
/// applied, until the score exceeds the golden score or the budget is spent.
/// Every intermediate state is a probe. A search that applies nothing emits
/// one forced <unk> substitution instead.
ProbeSet build_adversarial_set(const RlSample& sample, const RewardBackend& reward,
                               const SynonymSource* synonyms, const AttackConfig& config,
                               std::uint64_t seed);

/// Single-token synonym candidates for every position of `tokens`.
std::vector<std::vector<std::string>> substitution_candidates(
    const std::vector<std::string>& tokens, const SynonymSource& synonyms);

}  // namespace seam
