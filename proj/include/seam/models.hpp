#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "seam/corpus.hpp"
#include "seam/io.hpp"

namespace seam {

inline constexpr int kModelFormatVersion = 1;

struct TokenLogProbs {
  std::vector<double> per_token;  // one entry per response token, then the end marker
  double total = 0.0;
};

/// Token-level conditional likelihoods and sampling for pi(r | I).
class PolicyBackend {
 public:
  virtual ~PolicyBackend() = default;
  virtual TokenLogProbs logprob(const Instruction& instruction, const Response& response) const = 0;
  virtual Response sample(const Instruction& instruction, std::uint64_t seed,
                          std::size_t max_len) const = 0;
  virtual std::string fingerprint() const = 0;
};

/// Scalar reward R(I o r).
class RewardBackend {
 public:
  virtual ~RewardBackend() = default;
  virtual double score(const Instruction& instruction, const Response& response) const = 0;
  virtual std::string fingerprint() const = 0;
};

/// Fixed-dimension text embedding.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::vector<double> embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::string fingerprint() const = 0;
};

/// Checks the non-empty response precondition, then delegates.
TokenLogProbs policy_logprob(const PolicyBackend& policy, const Instruction& instruction,
                             const Response& response);
Response policy_sample(const PolicyBackend& policy, const Instruction& instruction,
                       std::uint64_t seed, std::size_t max_len);
double reward_score(const RewardBackend& reward, const Instruction& instruction,
                    const Response& response);
std::vector<double> embed(const EmbeddingBackend& embedding, std::string_view text);

/// Cosine similarity clamped to [-1, 1]. Throws ConfigError on a dimension
/// mismatch and DataError when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

// ---------------------------------------------------------------------------
// Vocabulary

/// Predicted symbols are ids [0, size()): <unk>, </s>, then words in sorted
/// order. The separator and begin-of-sequence padding are context-only ids.
class Vocabulary {
 public:
  static constexpr std::uint32_t kUnk = 0;
  static constexpr std::uint32_t kEnd = 1;

  Vocabulary() : Vocabulary(std::vector<std::string>{}) {}
  explicit Vocabulary(std::vector<std::string> words);

  std::uint32_t id(std::string_view token) const;
  const std::string& word(std::uint32_t id) const { return words_.at(id); }
  std::size_t size() const noexcept { return words_.size(); }
  std::uint32_t sep() const noexcept { return static_cast<std::uint32_t>(words_.size()); }
  std::uint32_t bos() const noexcept { return static_cast<std::uint32_t>(words_.size() + 1); }
  /// Words excluding the reserved symbols.
  std::vector<std::string> words() const;

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

// ---------------------------------------------------------------------------
// N-gram policy

struct NgramConfig {
  int order = 3;
  double discount = 0.75;
};

struct ContextKey {
  std::array<std::uint32_t, 4> ids{};
  bool operator==(const ContextKey&) const = default;
};

struct ContextKeyHash {
  std::size_t operator()(const ContextKey& k) const noexcept;
};

struct ContextStats {
  double total = 0.0;
  double discount_mass = 0.0;  // sum over tokens of min(discount, count)
  std::unordered_map<std::uint32_t, double> counts;
};

/// Interpolated absolute-discount n-gram model over
/// instruction <sep> response </s>, backing off to uniform over the vocabulary:
///
///   P(w | h) = (c(h,w) - min(D, c(h,w))) / c(h) + (sum_v min(D, c(h,v)) / c(h)) * P(w | h')
///
/// Counts may be fractional; policy improvement reweights them in place.
class NgramPolicy : public PolicyBackend {
 public:
  NgramPolicy(Vocabulary vocab, NgramConfig config);

  /// A policy with no counts: every token has probability 1 / |V|.
  static NgramPolicy uniform(std::vector<std::string> words, NgramConfig config = {});

  int order() const noexcept { return config_.order; }
  double discount() const noexcept { return config_.discount; }
  const NgramConfig& config() const noexcept { return config_; }
  const Vocabulary& vocab() const noexcept { return vocab_; }

  /// <bos>... instruction ids <sep>.
  std::vector<std::uint32_t> context_stream(const Instruction& instruction) const;
  std::vector<std::uint32_t> encode(const std::vector<std::string>& tokens) const;

  /// Probability of `token` following `history` (the id stream so far).
  double prob(std::span<const std::uint32_t> history, std::uint32_t token) const;
  /// Full next-token distribution over the predicted vocabulary.
  std::vector<double> distribution(std::span<const std::uint32_t> history) const;

  /// Adds `weight` to every n-gram event of the response (tokens then </s>).
  /// Counts are clamped at zero.
  void add_events(const Instruction& instruction, std::span<const std::uint32_t> response_ids,
                  double weight);
  /// Order-m event keys (m = 0..order-1) of the response, tokens then </s>.
  struct Event {
    int len;
    ContextKey key;
    std::uint32_t token;
    bool operator==(const Event&) const = default;
  };
  struct EventHash {
    std::size_t operator()(const Event& e) const noexcept;
  };
  std::vector<Event> events(const Instruction& instruction,
                            std::span<const std::uint32_t> response_ids) const;
  /// Multiplies the stored count of `e` by `factor` (no-op for absent events).
  void scale_event(const Event& e, double factor);
  /// Recomputes per-context totals from the stored counts.
  void renormalize();

  TokenLogProbs logprob(const Instruction& instruction, const Response& response) const override;
  Response sample(const Instruction& instruction, std::uint64_t seed,
                  std::size_t max_len) const override;
  std::string fingerprint() const override;

  json to_json() const;
  static NgramPolicy from_json(const json& j);

  const std::vector<std::unordered_map<ContextKey, ContextStats, ContextKeyHash>>& tables() const {
    return tables_;
  }

 private:
  ContextKey key_for(std::span<const std::uint32_t> history, int len) const;
  void add_event(int len, const ContextKey& key, std::uint32_t token, double delta);

  Vocabulary vocab_;
  NgramConfig config_;
  std::vector<std::unordered_map<ContextKey, ContextStats, ContextKeyHash>> tables_;
};

NgramPolicy train_policy(const SftCorpus& corpus, const NgramConfig& config = {});

// ---------------------------------------------------------------------------
// Linear reward over hashed features

/// Reward scores are snapped to this dyadic grid, which keeps score
/// differences exact when a constant is added to every score.
inline constexpr double kScoreGrid = 0x1.0p-32;
double snap_score(double x);

struct SparseVec {
  std::vector<std::pair<std::uint32_t, double>> entries;  // sorted by index, unique

  double dot(std::span<const double> dense) const;
  double norm() const;
};

/// a - b, merged.
SparseVec sparse_sub(const SparseVec& a, const SparseVec& b);

class LinearReward : public RewardBackend {
 public:
  explicit LinearReward(std::size_t dim = std::size_t{1} << 16);
  explicit LinearReward(std::vector<double> weights);

  static std::uint32_t feature_index(std::string_view feature, std::size_t dim);
  static std::string unigram_feature(std::string_view token);
  static std::string bigram_feature(std::string_view a, std::string_view b);

  /// l2-normalized hashed unigram+bigram counts of instruction <sep> response.
  static SparseVec featurize(const std::vector<std::string>& instruction_tokens,
                             const std::vector<std::string>& response_tokens, std::size_t dim);
  SparseVec features(const Instruction& instruction, const Response& response) const;

  double raw_score(const SparseVec& features) const { return features.dot(weights_); }
  double score(const Instruction& instruction, const Response& response) const override;
  std::string fingerprint() const override;

  std::size_t dim() const noexcept { return weights_.size(); }
  std::span<const double> weights() const noexcept { return weights_; }
  std::vector<double>& mutable_weights() noexcept { return weights_; }

  json to_json() const;
  static LinearReward from_json(const json& j);

 private:
  std::vector<double> weights_;
};

struct RewardTrainConfig {
  std::size_t dim = std::size_t{1} << 16;
  int epochs = 12;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
};

struct RewardTrainResult {
  LinearReward model;
  /// Full-batch loss before training, then after each epoch.
  std::vector<double> epoch_losses;
};

/// log(sigmoid(x)) without overflow.
double log_sigmoid(double x);

/// f(I o r+) - f(I o r-) for every pair.
std::vector<SparseVec> pair_differences(const PreferenceCorpus& corpus, std::size_t dim);
/// Mean of -log sigmoid(w . d) over the pair differences.
double ranking_loss(std::span<const double> weights, const std::vector<SparseVec>& diffs);
std::vector<double> ranking_loss_gradient(std::span<const double> weights,
                                          const std::vector<SparseVec>& diffs);

/// SGD on the pairwise ranking loss. Epochs whose full-batch loss would rise
/// are rolled back and the step size halved, so recorded losses never increase.
RewardTrainResult train_reward_with_history(const PreferenceCorpus& corpus,
                                            const RewardTrainConfig& config);
LinearReward train_reward(const PreferenceCorpus& corpus, const RewardTrainConfig& config);

// ---------------------------------------------------------------------------
// Hash embedding

/// Signed feature hashing of token unigrams, l2-normalized.
class HashEmbedding : public EmbeddingBackend {
 public:
  explicit HashEmbedding(std::size_t dim = 1024);

  std::vector<double> embed(std::string_view text) const override;
  std::vector<double> embed_tokens(const std::vector<std::string>& tokens) const;
  std::size_t dim() const override { return dim_; }
  std::string fingerprint() const override;

  /// (bucket, sign) for one token.
  std::pair<std::uint32_t, double> slot(std::string_view token) const;

 private:
  std::size_t dim_;
};

/// Loads a model file written by `to_json` (dispatches on "type").
json load_model_json(const std::filesystem::path& path);

}  // namespace seam
