#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "seam/models.hpp"

namespace seam {

struct RemoteConfig {
  std::string base_url;  // e.g. "http://127.0.0.1:8080"
  int timeout_ms = 30000;
  int max_attempts = 3;  // total tries for transient failures
  int retry_backoff_ms = 20;
  std::size_t max_in_flight = 8;
};

/// JSON-over-HTTP client shared by the remote backends. Transport errors,
/// timeouts and 5xx answers are retried; other non-2xx answers fail at once.
class RemoteClient {
 public:
  explicit RemoteClient(RemoteConfig config);

  json post(const std::string& path, const json& body) const;
  const RemoteConfig& config() const noexcept { return config_; }

 private:
  class Slots {
   public:
    explicit Slots(std::size_t n) : free_(n == 0 ? 1 : n) {}
    void acquire();
    void release();

   private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::size_t free_;
  };

  RemoteConfig config_;
  std::shared_ptr<Slots> slots_;
};

/// Log-probabilities served by `/v1/logprob`. Sampling is not part of the
/// wire protocol, so `sample` throws BackendError.
class RemotePolicy : public PolicyBackend {
 public:
  explicit RemotePolicy(RemoteConfig config) : client_(std::move(config)) {}

  TokenLogProbs logprob(const Instruction& instruction, const Response& response) const override;
  std::vector<TokenLogProbs> logprob_batch(
      const std::vector<std::pair<Instruction, Response>>& items) const;
  Response sample(const Instruction& instruction, std::uint64_t seed,
                  std::size_t max_len) const override;
  std::string fingerprint() const override;

 private:
  RemoteClient client_;
};

class RemoteReward : public RewardBackend {
 public:
  explicit RemoteReward(RemoteConfig config) : client_(std::move(config)) {}

  double score(const Instruction& instruction, const Response& response) const override;
  std::vector<double> score_batch(const std::vector<std::pair<Instruction, Response>>& items) const;
  std::string fingerprint() const override;

 private:
  RemoteClient client_;
};

class RemoteEmbedding : public EmbeddingBackend {
 public:
  RemoteEmbedding(RemoteConfig config, std::size_t dim) : client_(std::move(config)), dim_(dim) {}

  std::vector<double> embed(std::string_view text) const override;
  std::vector<std::vector<double>> embed_batch(const std::vector<std::string>& texts) const;
  std::size_t dim() const override { return dim_; }
  std::string fingerprint() const override;

 private:
  RemoteClient client_;
  std::size_t dim_;
};

/// Client for `/v1/generate_worse`.
class RemoteGenerator {
 public:
  explicit RemoteGenerator(RemoteConfig config) : client_(std::move(config)) {}

  std::vector<std::string> generate_worse(const Instruction& instruction, const Response& golden,
                                          std::size_t n) const;
  std::string fingerprint() const;

 private:
  RemoteClient client_;
};

// Wire-format helpers, exposed for stub servers and tests.
json logprob_request(const Instruction& instruction, const Response& response);
TokenLogProbs parse_logprob_reply(const json& reply);
double parse_reward_reply(const json& reply);
std::vector<double> parse_embed_reply(const json& reply, std::size_t expected_dim);
std::vector<std::string> parse_generate_reply(const json& reply);

}  // namespace seam
