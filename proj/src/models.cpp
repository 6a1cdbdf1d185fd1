#include "seam/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "seam/error.hpp"
#include "seam/hashing.hpp"

namespace seam {

// ---------------------------------------------------------------------------
// Backend helpers

TokenLogProbs policy_logprob(const PolicyBackend& policy, const Instruction& instruction,
                             const Response& response) {
  if (response.tokens.len() == 0) throw DataError("policy_logprob: empty response");
  return policy.logprob(instruction, response);
}

Response policy_sample(const PolicyBackend& policy, const Instruction& instruction,
                       std::uint64_t seed, std::size_t max_len) {
  if (max_len == 0) throw ConfigError("policy_sample: max_len must be >= 1");
  return policy.sample(instruction, seed, max_len);
}

double reward_score(const RewardBackend& reward, const Instruction& instruction,
                    const Response& response) {
  return reward.score(instruction, response);
}

std::vector<double> embed(const EmbeddingBackend& embedding, std::string_view text) {
  return embedding.embed(text);
}

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ConfigError("cosine: dimension mismatch (" + std::to_string(a.size()) + " vs " +
                      std::to_string(b.size()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw DataError("cosine: zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> words) {
  std::set<std::string> uniq;
  for (auto& w : words) {
    if (w == kUnkToken || w == kEndToken || w == kSepToken) continue;
    uniq.insert(std::move(w));
  }
  words_.reserve(uniq.size() + 2);
  words_.emplace_back(kUnkToken);
  words_.emplace_back(kEndToken);
  for (const auto& w : uniq) words_.push_back(w);
  for (std::uint32_t i = 0; i < words_.size(); ++i) index_.emplace(words_[i], i);
}

std::uint32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<std::string> Vocabulary::words() const {
  return {words_.begin() + 2, words_.end()};
}

// ---------------------------------------------------------------------------
// NgramPolicy

std::size_t ContextKeyHash::operator()(const ContextKey& k) const noexcept {
  std::uint64_t h = kFnvOffset;
  for (auto id : k.ids) {
    h ^= id;
    h *= 0x100000001b3ULL;
  }
  return static_cast<std::size_t>(h);
}

NgramPolicy::NgramPolicy(Vocabulary vocab, NgramConfig config)
    : vocab_(std::move(vocab)), config_(config), tables_(static_cast<std::size_t>(config.order)) {
  if (config.order < 2 || config.order > 5) throw ConfigError("ngram order must be in [2, 5]");
  if (!(config.discount > 0.0 && config.discount < 1.0)) {
    throw ConfigError("ngram discount must be in (0, 1)");
  }
}

NgramPolicy NgramPolicy::uniform(std::vector<std::string> words, NgramConfig config) {
  return NgramPolicy(Vocabulary(std::move(words)), config);
}

std::vector<std::uint32_t> NgramPolicy::encode(const std::vector<std::string>& tokens) const {
  std::vector<std::uint32_t> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(vocab_.id(t));
  return ids;
}

std::vector<std::uint32_t> NgramPolicy::context_stream(const Instruction& instruction) const {
  std::vector<std::uint32_t> stream(static_cast<std::size_t>(config_.order - 1), vocab_.bos());
  for (const auto& t : instruction.tokens.tokens) stream.push_back(vocab_.id(t));
  stream.push_back(vocab_.sep());
  return stream;
}

ContextKey NgramPolicy::key_for(std::span<const std::uint32_t> history, int len) const {
  ContextKey key;
  const std::size_t n = history.size();
  for (int i = 0; i < len; ++i) key.ids[i] = history[n - static_cast<std::size_t>(len) + i];
  return key;
}

double NgramPolicy::prob(std::span<const std::uint32_t> history, std::uint32_t token) const {
  const double d = config_.discount;
  double p = 1.0 / static_cast<double>(vocab_.size());
  for (int m = 0; m < config_.order; ++m) {
    if (history.size() < static_cast<std::size_t>(m)) break;
    const auto& table = tables_[m];
    auto it = table.find(key_for(history, m));
    if (it == table.end() || it->second.total <= 0.0) continue;
    const ContextStats& s = it->second;
    double c = 0.0;
    if (auto ct = s.counts.find(token); ct != s.counts.end()) c = ct->second;
    p = (c - std::min(d, c)) / s.total + (s.discount_mass / s.total) * p;
  }
  return p;
}

std::vector<double> NgramPolicy::distribution(std::span<const std::uint32_t> history) const {
  const double d = config_.discount;
  std::vector<double> dist(vocab_.size(), 1.0 / static_cast<double>(vocab_.size()));
  for (int m = 0; m < config_.order; ++m) {
    if (history.size() < static_cast<std::size_t>(m)) break;
    const auto& table = tables_[m];
    auto it = table.find(key_for(history, m));
    if (it == table.end() || it->second.total <= 0.0) continue;
    const ContextStats& s = it->second;
    const double backoff = s.discount_mass / s.total;
    for (auto& v : dist) v *= backoff;
    for (const auto& [tok, c] : s.counts) dist[tok] += (c - std::min(d, c)) / s.total;
  }
  return dist;
}

void NgramPolicy::add_event(int len, const ContextKey& key, std::uint32_t token, double delta) {
  auto& table = tables_[len];
  auto it = table.find(key);
  if (it == table.end()) {
    if (delta <= 0.0) return;
    it = table.emplace(key, ContextStats{}).first;
  }
  ContextStats& s = it->second;
  auto ct = s.counts.find(token);
  const double old = ct == s.counts.end() ? 0.0 : ct->second;
  const double now = std::max(old + delta, 0.0);
  const double d = config_.discount;
  s.total += now - old;
  s.discount_mass += std::min(d, now) - std::min(d, old);
  if (now > 0.0) {
    s.counts[token] = now;
  } else if (ct != s.counts.end()) {
    s.counts.erase(ct);
  }
  if (s.counts.empty()) table.erase(it);
}

void NgramPolicy::add_events(const Instruction& instruction,
                             std::span<const std::uint32_t> response_ids, double weight) {
  if (weight == 0.0) return;
  auto stream = context_stream(instruction);
  auto emit = [&](std::uint32_t tok) {
    for (int m = 0; m < config_.order; ++m) add_event(m, key_for(stream, m), tok, weight);
    stream.push_back(tok);
  };
  for (auto id : response_ids) emit(id);
  emit(Vocabulary::kEnd);
}

std::size_t NgramPolicy::EventHash::operator()(const Event& e) const noexcept {
  std::size_t h = ContextKeyHash{}(e.key);
  h ^= (static_cast<std::size_t>(e.token) << 3) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
  return h ^ static_cast<std::size_t>(e.len);
}

std::vector<NgramPolicy::Event> NgramPolicy::events(const Instruction& instruction,
                                                    std::span<const std::uint32_t> response_ids) const {
  std::vector<Event> out;
  auto stream = context_stream(instruction);
  auto emit = [&](std::uint32_t tok) {
    for (int m = 0; m < config_.order; ++m) out.push_back({m, key_for(stream, m), tok});
    stream.push_back(tok);
  };
  for (auto id : response_ids) emit(id);
  emit(Vocabulary::kEnd);
  return out;
}

void NgramPolicy::scale_event(const Event& e, double factor) {
  auto it = tables_[e.len].find(e.key);
  if (it == tables_[e.len].end()) return;
  auto ct = it->second.counts.find(e.token);
  if (ct == it->second.counts.end()) return;
  ct->second *= factor;
}

void NgramPolicy::renormalize() {
  const double d = config_.discount;
  for (auto& table : tables_) {
    for (auto it = table.begin(); it != table.end();) {
      ContextStats& s = it->second;
      s.total = 0.0;
      s.discount_mass = 0.0;
      // Sum in token order so the result does not depend on hash iteration.
      std::vector<std::pair<std::uint32_t, double>> sorted(s.counts.begin(), s.counts.end());
      std::sort(sorted.begin(), sorted.end());
      for (const auto& [tok, c] : sorted) {
        s.total += c;
        s.discount_mass += std::min(d, c);
      }
      if (s.total <= 0.0) {
        it = table.erase(it);
      } else {
        ++it;
      }
    }
  }
}

TokenLogProbs NgramPolicy::logprob(const Instruction& instruction, const Response& response) const {
  auto stream = context_stream(instruction);
  TokenLogProbs out;
  out.per_token.reserve(response.tokens.len() + 1);
  auto step = [&](std::uint32_t tok) {
    double lp = std::log(prob(stream, tok));
    out.per_token.push_back(lp);
    out.total += lp;
    stream.push_back(tok);
  };
  for (const auto& t : response.tokens.tokens) step(vocab_.id(t));
  step(Vocabulary::kEnd);
  return out;
}

Response NgramPolicy::sample(const Instruction& instruction, std::uint64_t seed,
                             std::size_t max_len) const {
  Rng rng(mix_seed(seed, "ngram-sample"));
  auto stream = context_stream(instruction);
  std::vector<std::string> tokens;
  while (tokens.size() < max_len) {
    auto dist = distribution(stream);
    dist[Vocabulary::kUnk] = 0.0;
    if (tokens.empty()) dist[Vocabulary::kEnd] = 0.0;
    double total = 0.0;
    for (double p : dist) total += p;
    double u = rng.uniform() * total;
    std::uint32_t pick = static_cast<std::uint32_t>(dist.size() - 1);
    for (std::uint32_t i = 0; i < dist.size(); ++i) {
      if (dist[i] <= 0.0) continue;
      u -= dist[i];
      if (u < 0.0) {
        pick = i;
        break;
      }
    }
    if (pick == Vocabulary::kEnd) break;
    tokens.push_back(vocab_.word(pick));
    stream.push_back(pick);
  }
  return Response::from_tokens(std::move(tokens));
}

json NgramPolicy::to_json() const {
  json tables = json::array();
  for (const auto& table : tables_) {
    std::vector<std::pair<ContextKey, const ContextStats*>> entries;
    entries.reserve(table.size());
    for (const auto& [k, s] : table) entries.emplace_back(k, &s);
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.first.ids < b.first.ids; });
    json jt = json::array();
    const std::size_t len = static_cast<std::size_t>(&table - tables_.data());
    for (const auto& [k, s] : entries) {
      std::vector<std::pair<std::uint32_t, double>> counts(s->counts.begin(), s->counts.end());
      std::sort(counts.begin(), counts.end());
      json jc = json::array();
      for (const auto& [tok, c] : counts) jc.push_back(json::array({tok, c}));
      json ctx = json::array();
      for (std::size_t i = 0; i < len; ++i) ctx.push_back(k.ids[i]);
      jt.push_back(json{{"ctx", ctx}, {"counts", jc}});
    }
    tables.push_back(std::move(jt));
  }
  return json{{"format_version", kModelFormatVersion},
              {"type", "ngram_policy"},
              {"order", config_.order},
              {"discount", config_.discount},
              {"vocab", vocab_.words()},
              {"tables", tables}};
}

NgramPolicy NgramPolicy::from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw DataError("unsupported policy format_version");
    }
    if (j.at("type").get<std::string>() != "ngram_policy") throw DataError("not an ngram_policy");
    NgramConfig cfg{j.at("order").get<int>(), j.at("discount").get<double>()};
    NgramPolicy p(Vocabulary(j.at("vocab").get<std::vector<std::string>>()), cfg);
    const auto& tables = j.at("tables");
    if (tables.size() != static_cast<std::size_t>(cfg.order)) throw DataError("bad table count");
    for (std::size_t m = 0; m < tables.size(); ++m) {
      for (const auto& e : tables[m]) {
        ContextKey key;
        const auto& ctx = e.at("ctx");
        if (ctx.size() != m) throw DataError("bad context length");
        for (std::size_t i = 0; i < m; ++i) key.ids[i] = ctx[i].get<std::uint32_t>();
        for (const auto& c : e.at("counts")) {
          auto tok = c.at(0).get<std::uint32_t>();
          if (tok >= p.vocab_.size()) throw DataError("token id out of range");
          p.add_event(static_cast<int>(m), key, tok, c.at(1).get<double>());
        }
      }
    }
    p.renormalize();
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed policy model: ") + e.what());
  }
}

std::string NgramPolicy::fingerprint() const { return sha256_hex(to_json().dump()); }

NgramPolicy train_policy(const SftCorpus& corpus, const NgramConfig& config) {
  if (corpus.empty()) throw DataError("train_policy: empty corpus");
  std::vector<std::string> words;
  for (const auto& ex : corpus) {
    for (const auto& t : ex.instruction.tokens.tokens) words.push_back(t);
    for (const auto& t : ex.golden.tokens.tokens) words.push_back(t);
  }
  NgramPolicy policy(Vocabulary(std::move(words)), config);
  for (const auto& ex : corpus) {
    policy.add_events(ex.instruction, policy.encode(ex.golden.tokens.tokens), 1.0);
  }
  policy.renormalize();
  return policy;
}

// ---------------------------------------------------------------------------
// Sparse features and LinearReward

double snap_score(double x) { return std::nearbyint(x / kScoreGrid) * kScoreGrid; }

double SparseVec::dot(std::span<const double> dense) const {
  double s = 0.0;
  for (const auto& [i, v] : entries) s += dense[i] * v;
  return s;
}

double SparseVec::norm() const {
  double s = 0.0;
  for (const auto& [i, v] : entries) s += v * v;
  return std::sqrt(s);
}

SparseVec sparse_sub(const SparseVec& a, const SparseVec& b) {
  SparseVec out;
  std::size_t i = 0, j = 0;
  while (i < a.entries.size() || j < b.entries.size()) {
    if (j == b.entries.size() ||
        (i < a.entries.size() && a.entries[i].first < b.entries[j].first)) {
      out.entries.push_back(a.entries[i++]);
    } else if (i == a.entries.size() || b.entries[j].first < a.entries[i].first) {
      out.entries.emplace_back(b.entries[j].first, -b.entries[j].second);
      ++j;
    } else {
      double v = a.entries[i].second - b.entries[j].second;
      if (v != 0.0) out.entries.emplace_back(a.entries[i].first, v);
      ++i;
      ++j;
    }
  }
  return out;
}

LinearReward::LinearReward(std::size_t dim) : weights_(dim, 0.0) {
  if (dim == 0 || (dim & (dim - 1)) != 0) throw ConfigError("reward dim must be a power of two");
}

LinearReward::LinearReward(std::vector<double> weights) : weights_(std::move(weights)) {
  const auto dim = weights_.size();
  if (dim == 0 || (dim & (dim - 1)) != 0) throw ConfigError("reward dim must be a power of two");
}

std::uint32_t LinearReward::feature_index(std::string_view feature, std::size_t dim) {
  return static_cast<std::uint32_t>(fnv1a64(feature) & (dim - 1));
}

std::string LinearReward::unigram_feature(std::string_view token) {
  std::string f = "u\x1f";
  f += token;
  return f;
}

std::string LinearReward::bigram_feature(std::string_view a, std::string_view b) {
  std::string f = "b\x1f";
  f += a;
  f += '\x1f';
  f += b;
  return f;
}

SparseVec LinearReward::featurize(const std::vector<std::string>& instruction_tokens,
                                  const std::vector<std::string>& response_tokens,
                                  std::size_t dim) {
  std::vector<std::string_view> seq;
  seq.reserve(instruction_tokens.size() + response_tokens.size() + 1);
  for (const auto& t : instruction_tokens) seq.push_back(t);
  seq.push_back(kSepToken);
  for (const auto& t : response_tokens) seq.push_back(t);

  std::map<std::uint32_t, double> counts;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    counts[feature_index(unigram_feature(seq[i]), dim)] += 1.0;
    if (i + 1 < seq.size()) counts[feature_index(bigram_feature(seq[i], seq[i + 1]), dim)] += 1.0;
  }
  SparseVec v;
  v.entries.assign(counts.begin(), counts.end());
  const double n = v.norm();
  if (n > 0.0) {
    for (auto& e : v.entries) e.second /= n;
  }
  return v;
}

SparseVec LinearReward::features(const Instruction& instruction, const Response& response) const {
  return featurize(instruction.tokens.tokens, response.tokens.tokens, weights_.size());
}

double LinearReward::score(const Instruction& instruction, const Response& response) const {
  return snap_score(raw_score(features(instruction, response)));
}

json LinearReward::to_json() const {
  json nz = json::array();
  for (std::size_t i = 0; i < weights_.size(); ++i) {
    if (weights_[i] != 0.0) nz.push_back(json::array({i, weights_[i]}));
  }
  return json{{"format_version", kModelFormatVersion},
              {"type", "linear_reward"},
              {"dim", weights_.size()},
              {"weights", nz}};
}

LinearReward LinearReward::from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kModelFormatVersion) {
      throw DataError("unsupported reward format_version");
    }
    if (j.at("type").get<std::string>() != "linear_reward") throw DataError("not a linear_reward");
    LinearReward r(j.at("dim").get<std::size_t>());
    for (const auto& e : j.at("weights")) {
      auto i = e.at(0).get<std::size_t>();
      if (i >= r.dim()) throw DataError("weight index out of range");
      r.weights_[i] = e.at(1).get<double>();
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed reward model: ") + e.what());
  }
}

std::string LinearReward::fingerprint() const { return sha256_hex(to_json().dump()); }

// ---------------------------------------------------------------------------
// Ranking loss and training

double log_sigmoid(double x) {
  return x >= 0.0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

namespace {

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

std::vector<SparseVec> pair_differences(const PreferenceCorpus& corpus, std::size_t dim) {
  std::vector<SparseVec> diffs;
  diffs.reserve(corpus.size());
  for (const auto& p : corpus) {
    auto fp = LinearReward::featurize(p.instruction.tokens.tokens, p.preferred.tokens.tokens, dim);
    auto fr = LinearReward::featurize(p.instruction.tokens.tokens, p.rejected.tokens.tokens, dim);
    diffs.push_back(sparse_sub(fp, fr));
  }
  return diffs;
}

double ranking_loss(std::span<const double> weights, const std::vector<SparseVec>& diffs) {
  if (diffs.empty()) return 0.0;
  double s = 0.0;
  for (const auto& d : diffs) s -= log_sigmoid(d.dot(weights));
  return s / static_cast<double>(diffs.size());
}

std::vector<double> ranking_loss_gradient(std::span<const double> weights,
                                          const std::vector<SparseVec>& diffs) {
  std::vector<double> g(weights.size(), 0.0);
  if (diffs.empty()) return g;
  const double inv_n = 1.0 / static_cast<double>(diffs.size());
  for (const auto& d : diffs) {
    // d/dw [-log sigmoid(w.d)] = -sigmoid(-w.d) * d
    const double coef = -sigmoid(-d.dot(weights)) * inv_n;
    for (const auto& [i, v] : d.entries) g[i] += coef * v;
  }
  return g;
}

RewardTrainResult train_reward_with_history(const PreferenceCorpus& corpus,
                                            const RewardTrainConfig& config) {
  if (corpus.empty()) throw DataError("train_reward: empty corpus");
  if (!(config.learning_rate > 0.0)) throw ConfigError("train_reward: learning_rate must be > 0");
  if (config.epochs < 0) throw ConfigError("train_reward: epochs must be >= 0");
  LinearReward model(config.dim);
  const auto diffs = pair_differences(corpus, config.dim);
  std::vector<double>& w = model.mutable_weights();

  RewardTrainResult result{model, {}};
  double loss = ranking_loss(w, diffs);
  result.epoch_losses.push_back(loss);
  double lr = config.learning_rate;
  std::vector<std::size_t> order(diffs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);
    std::vector<double> saved = w;
    for (auto idx : order) {
      const auto& d = diffs[idx];
      const double step = lr * sigmoid(-d.dot(w));
      for (const auto& [i, v] : d.entries) w[i] += step * v;
    }
    double next = ranking_loss(w, diffs);
    if (next > loss) {
      w = std::move(saved);
      lr *= 0.5;
      next = loss;
    }
    loss = next;
    result.epoch_losses.push_back(loss);
  }
  result.model = std::move(model);
  return result;
}

LinearReward train_reward(const PreferenceCorpus& corpus, const RewardTrainConfig& config) {
  return train_reward_with_history(corpus, config).model;
}

// ---------------------------------------------------------------------------
// HashEmbedding

HashEmbedding::HashEmbedding(std::size_t dim) : dim_(dim) {
  if (dim == 0 || (dim & (dim - 1)) != 0) throw ConfigError("embedding dim must be a power of two");
}

std::pair<std::uint32_t, double> HashEmbedding::slot(std::string_view token) const {
  const std::uint64_t h = fnv1a64(token, mix_seed(kFnvOffset, "hash-embedding"));
  return {static_cast<std::uint32_t>(h & (dim_ - 1)), (h >> 63) ? -1.0 : 1.0};
}

std::vector<double> HashEmbedding::embed_tokens(const std::vector<std::string>& tokens) const {
  std::vector<double> v(dim_, 0.0);
  for (const auto& t : tokens) {
    auto [i, s] = slot(t);
    v[i] += s;
  }
  double n = 0.0;
  for (double x : v) n += x * x;
  if (n > 0.0) {
    n = std::sqrt(n);
    for (double& x : v) x /= n;
  }
  return v;
}

std::vector<double> HashEmbedding::embed(std::string_view text) const {
  return embed_tokens(tokenize(text).tokens);
}

std::string HashEmbedding::fingerprint() const {
  return sha256_hex("hash_embedding/v1/dim=" + std::to_string(dim_));
}

json load_model_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed model file (" + e.what() + ")");
  }
}

}  // namespace seam
