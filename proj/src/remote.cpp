#include "seam/remote.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "httplib.h"
#include "seam/error.hpp"
#include "seam/hashing.hpp"

namespace seam {

void RemoteClient::Slots::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return free_ > 0; });
  --free_;
}

void RemoteClient::Slots::release() {
  {
    std::lock_guard lock(mu_);
    ++free_;
  }
  cv_.notify_one();
}

RemoteClient::RemoteClient(RemoteConfig config)
    : config_(std::move(config)), slots_(std::make_shared<Slots>(config_.max_in_flight)) {
  if (config_.base_url.empty()) throw ConfigError("remote backend: endpoint not configured");
  if (config_.max_attempts < 1) throw ConfigError("remote backend: max_attempts must be >= 1");
}

json RemoteClient::post(const std::string& path, const json& body) const {
  struct SlotGuard {
    Slots& s;
    explicit SlotGuard(Slots& slots) : s(slots) { s.acquire(); }
    ~SlotGuard() { s.release(); }
  } guard(*slots_);

  const std::string payload = body.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
    httplib::Client cli(config_.base_url);
    const auto secs = config_.timeout_ms / 1000;
    const auto usecs = (config_.timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    auto res = cli.Post(path, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "status " + std::to_string(res->status);
    } else if (res->status < 200 || res->status >= 300) {
      throw ServiceError(res->status, "remote " + path + " answered status " +
                                          std::to_string(res->status));
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::parse_error& e) {
        throw ProtocolError("remote " + path + ": malformed body (" + e.what() + ")");
      }
    }
    if (attempt < config_.max_attempts && config_.retry_backoff_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry_backoff_ms * attempt));
    }
  }
  throw TransientError("remote " + path + " failed after " + std::to_string(config_.max_attempts) +
                       " attempts: " + last_error);
}

// ---------------------------------------------------------------------------
// Wire format

json logprob_request(const Instruction& instruction, const Response& response) {
  return json{{"instruction", instruction.text}, {"response", response.text}};
}

namespace {

double finite_number(const json& j, const char* what) {
  if (!j.is_number()) throw ProtocolError(std::string(what) + " must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ProtocolError(std::string(what) + " must be finite");
  return v;
}

const json& field(const json& reply, const char* name) {
  if (!reply.is_object()) throw ProtocolError("reply must be a JSON object");
  auto it = reply.find(name);
  if (it == reply.end()) throw ProtocolError(std::string("reply is missing '") + name + "'");
  return *it;
}

json batch_reply(const json& reply, std::size_t n) {
  if (!reply.is_array() || reply.size() != n) {
    throw ProtocolError("batch reply must be an array of " + std::to_string(n) + " results");
  }
  return reply;
}

}  // namespace

TokenLogProbs parse_logprob_reply(const json& reply) {
  const auto& lps = field(reply, "token_logprobs");
  if (!lps.is_array()) throw ProtocolError("token_logprobs must be an array");
  TokenLogProbs out;
  for (const auto& v : lps) {
    const double lp = finite_number(v, "token logprob");
    if (lp > 0.0) throw ProtocolError("token logprob must be <= 0");
    out.per_token.push_back(lp);
  }
  out.total = finite_number(field(reply, "total"), "total");
  return out;
}

double parse_reward_reply(const json& reply) { return finite_number(field(reply, "score"), "score"); }

std::vector<double> parse_embed_reply(const json& reply, std::size_t expected_dim) {
  const auto& vec = field(reply, "vector");
  if (!vec.is_array()) throw ProtocolError("vector must be an array");
  if (vec.size() != expected_dim) {
    throw ProtocolError("embedding has dimension " + std::to_string(vec.size()) + ", expected " +
                        std::to_string(expected_dim));
  }
  std::vector<double> out;
  out.reserve(vec.size());
  for (const auto& v : vec) out.push_back(finite_number(v, "vector entry"));
  return out;
}

std::vector<std::string> parse_generate_reply(const json& reply) {
  const auto& rs = field(reply, "responses");
  if (!rs.is_array()) throw ProtocolError("responses must be an array");
  std::vector<std::string> out;
  for (const auto& r : rs) {
    if (!r.is_string()) throw ProtocolError("responses must contain strings");
    out.push_back(r.get<std::string>());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backends

TokenLogProbs RemotePolicy::logprob(const Instruction& instruction, const Response& response) const {
  return parse_logprob_reply(client_.post("/v1/logprob", logprob_request(instruction, response)));
}

std::vector<TokenLogProbs> RemotePolicy::logprob_batch(
    const std::vector<std::pair<Instruction, Response>>& items) const {
  json body = json::array();
  for (const auto& [i, r] : items) body.push_back(logprob_request(i, r));
  auto reply = batch_reply(client_.post("/v1/logprob", body), items.size());
  std::vector<TokenLogProbs> out;
  for (const auto& r : reply) out.push_back(parse_logprob_reply(r));
  return out;
}

Response RemotePolicy::sample(const Instruction&, std::uint64_t, std::size_t) const {
  throw BackendError("remote policy does not support sampling");
}

std::string RemotePolicy::fingerprint() const {
  return sha256_hex("remote_policy:" + client_.config().base_url);
}

double RemoteReward::score(const Instruction& instruction, const Response& response) const {
  return parse_reward_reply(client_.post("/v1/reward", logprob_request(instruction, response)));
}

std::vector<double> RemoteReward::score_batch(
    const std::vector<std::pair<Instruction, Response>>& items) const {
  json body = json::array();
  for (const auto& [i, r] : items) body.push_back(logprob_request(i, r));
  auto reply = batch_reply(client_.post("/v1/reward", body), items.size());
  std::vector<double> out;
  for (const auto& r : reply) out.push_back(parse_reward_reply(r));
  return out;
}

std::string RemoteReward::fingerprint() const {
  return sha256_hex("remote_reward:" + client_.config().base_url);
}

std::vector<double> RemoteEmbedding::embed(std::string_view text) const {
  return parse_embed_reply(client_.post("/v1/embed", json{{"text", std::string(text)}}), dim_);
}

std::vector<std::vector<double>> RemoteEmbedding::embed_batch(
    const std::vector<std::string>& texts) const {
  json body = json::array();
  for (const auto& t : texts) body.push_back(json{{"text", t}});
  auto reply = batch_reply(client_.post("/v1/embed", body), texts.size());
  std::vector<std::vector<double>> out;
  for (const auto& r : reply) out.push_back(parse_embed_reply(r, dim_));
  return out;
}

std::string RemoteEmbedding::fingerprint() const {
  return sha256_hex("remote_embedding:" + client_.config().base_url + ":" + std::to_string(dim_));
}

std::vector<std::string> RemoteGenerator::generate_worse(const Instruction& instruction,
                                                         const Response& golden,
                                                         std::size_t n) const {
  json body{{"instruction", instruction.text}, {"golden", golden.text}, {"n", n}};
  return parse_generate_reply(client_.post("/v1/generate_worse", body));
}

std::string RemoteGenerator::fingerprint() const {
  return sha256_hex("remote_generator:" + client_.config().base_url);
}

}  // namespace seam
