#include <algorithm>
#include <cmath>
#include <map>

#include "doctest.h"
#include "seam/lab.hpp"
#include "seam/models.hpp"

using namespace seam;

namespace {

SftCorpus one_example(const std::string& i, const std::string& r, int copies = 1) {
  SftCorpus c;
  for (int k = 0; k < copies; ++k) {
    c.push_back({Instruction::make("s" + std::to_string(k), i), Response::from_text(r)});
  }
  return c;
}

// Plain FNV-1a, kept separate from the library's hashing.
std::uint64_t fnv(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Interpolated absolute discounting recomputed from the raw count tables.
double table_walk(const NgramPolicy& p, const std::vector<std::uint32_t>& history, std::uint32_t tok) {
  double prob = 1.0 / static_cast<double>(p.vocab().size());
  for (int m = 0; m < p.order(); ++m) {
    ContextKey key;
    for (int i = 0; i < m; ++i) key.ids[i] = history[history.size() - m + i];
    const auto& table = p.tables()[m];
    auto it = table.find(key);
    if (it == table.end()) continue;
    double total = 0.0, mass = 0.0, c = 0.0;
    for (const auto& [t, n] : it->second.counts) {
      total += n;
      mass += std::min(p.discount(), n);
      if (t == tok) c = n;
    }
    prob = (c - std::min(p.discount(), c)) / total + mass / total * prob;
  }
  return prob;
}

LabWorld small_world(std::uint64_t seed = 0) {
  WorldConfig wc;
  wc.seed = seed;
  wc.n_sft = 200;
  wc.n_pref = 200;
  wc.n_rl = 50;
  wc.n_eval = 20;
  wc.n_pref_test = 20;
  return generate_world(wc);
}

}  // namespace

TEST_CASE("one-example bigram model matches hand computation") {
  const auto p = train_policy(one_example("a b", "c d"), NgramConfig{2, 0.75});
  CHECK(p.vocab().size() == 6);
  // Unigram level: c, d, </s> each once; P0(</s>) = 0.25/3 + (2.25/3)/6.
  // Context "d": </s> once; P = 0.25 + 0.75 * P0(</s>) = 0.40625.
  auto hist = p.context_stream(Instruction::make("q", "a b"));
  hist.push_back(p.vocab().id("c"));
  hist.push_back(p.vocab().id("d"));
  CHECK(p.prob(hist, Vocabulary::kEnd) == doctest::Approx(0.40625).epsilon(1e-12));
  double sum = 0.0;
  for (double x : p.distribution(hist)) sum += x;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("duplicated examples keep normalization and move mass to seen continuations") {
  const auto one = train_policy(one_example("a b", "c d c"), NgramConfig{2, 0.75});
  const auto two = train_policy(one_example("a b", "c d c", 2), NgramConfig{2, 0.75});
  auto hist = one.context_stream(Instruction::make("q", "a b"));
  const std::vector<std::pair<std::string, std::vector<std::uint32_t>>> seen = {
      {"c", {one.vocab().id("d"), Vocabulary::kEnd}}, {"d", {one.vocab().id("c")}}};
  for (const auto& [w, next] : seen) {
    hist.push_back(one.vocab().id(w));
    const auto d1 = one.distribution(hist), d2 = two.distribution(hist);
    double s1 = 0.0, s2 = 0.0, m1 = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < d1.size(); ++i) {
      s1 += d1[i];
      s2 += d2[i];
    }
    for (auto t : next) {
      m1 += d1[t];
      m2 += d2[t];
    }
    CHECK(s1 == doctest::Approx(1.0));
    CHECK(s2 == doctest::Approx(1.0));
    CHECK(m2 > m1);
  }
}

TEST_CASE("normalization and floor over random contexts") {
  const auto w = small_world();
  const auto p = train_policy(w.d_p);
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::uint32_t> hist = p.context_stream(w.d_p[rng.below(w.d_p.size())].instruction);
    const auto extra = rng.below(4);
    for (std::uint64_t k = 0; k < extra; ++k) hist.push_back(static_cast<std::uint32_t>(rng.below(p.vocab().size())));
    const auto dist = p.distribution(hist);
    double sum = 0.0;
    for (std::size_t t = 0; t < dist.size(); ++t) {
      sum += dist[t];
      CHECK(dist[t] > 0.0);
      CHECK(dist[t] == doctest::Approx(p.prob(hist, static_cast<std::uint32_t>(t))).epsilon(1e-12));
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("training responses beat shuffled responses") {
  const auto w = small_world(1);
  const auto p = train_policy(w.d_p);
  Rng rng(9);
  double real = 0.0, shuffled = 0.0;
  for (const auto& ex : w.d_p) {
    auto toks = ex.golden.tokens.tokens;
    real += policy_logprob(p, ex.instruction, ex.golden).total;
    rng.shuffle(toks);
    shuffled += policy_logprob(p, ex.instruction, Response::from_tokens(toks)).total;
  }
  CHECK(real >= shuffled);
}

TEST_CASE("uniform policy log-probability") {
  const auto p = NgramPolicy::uniform({"x", "y", "z"});
  const double v = static_cast<double>(p.vocab().size());
  const auto lp = policy_logprob(p, Instruction::make("q", "x"), Response::from_text("y z y z"));
  CHECK(lp.total == doctest::Approx(-5.0 * std::log(v)));
  CHECK(lp.per_token.size() == 5);
  CHECK_THROWS_AS(policy_logprob(p, Instruction::make("q", "x"), Response{}), DataError);
}

TEST_CASE("log-probabilities agree with a direct table walk") {
  SftCorpus c = one_example("one two", "three four five");
  c.push_back({Instruction::make("b", "one"), Response::from_text("five four")});
  c.push_back({Instruction::make("c", "two"), Response::from_text("three three")});
  const auto p = train_policy(c);
  const auto inst = Instruction::make("q", "one two");
  const auto resp = Response::from_text("three five four");
  const auto lp = policy_logprob(p, inst, resp);
  auto hist = p.context_stream(inst);
  double product = 1.0, sum = 0.0;
  std::size_t k = 0;
  for (const auto& t : resp.tokens.tokens) {
    const double q = table_walk(p, hist, p.vocab().id(t));
    product *= q;
    CHECK(lp.per_token[k++] == doctest::Approx(std::log(q)).epsilon(1e-12));
    hist.push_back(p.vocab().id(t));
  }
  product *= table_walk(p, hist, Vocabulary::kEnd);
  for (double x : lp.per_token) sum += x;
  CHECK(std::exp(lp.total) == doctest::Approx(product).epsilon(1e-12));
  CHECK(std::abs(sum - lp.total) < 1e-9);
  CHECK(policy_logprob(p, inst, resp).total == lp.total);
}

TEST_CASE("sampling is seeded and follows the model") {
  const auto w = small_world(2);
  const auto p = train_policy(w.d_p);
  const auto& inst = w.d_p.front().instruction;
  CHECK(policy_sample(p, inst, 42, 16).text == policy_sample(p, inst, 42, 16).text);

  auto dist = p.distribution(p.context_stream(inst));
  dist[Vocabulary::kUnk] = 0.0;
  dist[Vocabulary::kEnd] = 0.0;
  double z = 0.0;
  for (double x : dist) z += x;
  std::map<std::string, int> first;
  constexpr int kDraws = 10000;
  for (int s = 0; s < kDraws; ++s) first[policy_sample(p, inst, static_cast<std::uint64_t>(s), 1).tokens.tokens[0]]++;
  double worst = 0.0;
  for (std::uint32_t t = 2; t < dist.size(); ++t) {
    const double emp = static_cast<double>(first[p.vocab().word(t)]) / kDraws;
    worst = std::max(worst, std::abs(emp - dist[t] / z));
  }
  CHECK(worst < 0.02);
}

TEST_CASE("near-deterministic policy repeats its token") {
  auto p = NgramPolicy::uniform({"w", "z"}, NgramConfig{2, 0.75});
  const auto inst = Instruction::make("q", "w");
  const auto ids = p.encode({"z", "z", "z"});
  p.add_events(inst, ids, 1e9);
  for (const auto& e : p.events(inst, ids)) {
    if (e.token == Vocabulary::kEnd) p.scale_event(e, 1e-12);
  }
  p.renormalize();
  CHECK(policy_sample(p, inst, 7, 5).text == "z z z z z");
  CHECK_THROWS_AS(policy_sample(p, inst, 7, 0), ConfigError);
}

TEST_CASE("policy json round trip") {
  const auto p = train_policy(small_world().d_p);
  const auto q = NgramPolicy::from_json(p.to_json());
  CHECK(q.fingerprint() == p.fingerprint());
  json bad = p.to_json();
  bad["format_version"] = 99;
  CHECK_THROWS_AS(NgramPolicy::from_json(bad), DataError);
  CHECK_THROWS_AS(train_policy({}), DataError);
}

TEST_CASE("reward score equals a hand-built hashed dot product") {
  constexpr std::size_t dim = 16;
  std::vector<double> weights(dim);
  for (std::size_t i = 0; i < dim; ++i) weights[i] = 0.1 * static_cast<double>(i) - 0.7;
  const LinearReward r(weights);
  const std::vector<std::string> seq = {"x", "<sep>", "y", "z"};
  std::map<std::size_t, double> f;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    f[fnv("u\x1f" + seq[i]) % dim] += 1.0;
    if (i + 1 < seq.size()) f[fnv("b\x1f" + seq[i] + "\x1f" + seq[i + 1]) % dim] += 1.0;
  }
  double norm = 0.0, dot = 0.0;
  for (const auto& [i, v] : f) norm += v * v;
  for (const auto& [i, v] : f) dot += weights[i] * v / std::sqrt(norm);
  const double got = r.score(Instruction::make("q", "x"), Response::from_text("y z"));
  CHECK(got == doctest::Approx(dot).epsilon(1e-9));
  CHECK(r.features(Instruction::make("q", "x"), Response::from_text("y z")).norm() == doctest::Approx(1.0));
  CHECK(LinearReward(dim).score(Instruction::make("q", "x"), Response::from_text("y z")) == 0.0);
  CHECK(r.score(Instruction::make("q", "x"), Response::from_text("y z")) == got);
}

TEST_CASE("ranking loss starts at ln 2 and never rises") {
  const auto w = small_world(3);
  RewardTrainConfig cfg;
  const auto res = train_reward_with_history(w.d_r, cfg);
  CHECK(res.epoch_losses.front() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  for (std::size_t i = 1; i < res.epoch_losses.size(); ++i) {
    CHECK(res.epoch_losses[i] <= res.epoch_losses[i - 1] + 1e-6);
  }
  const double before = q_rm(LinearReward(cfg.dim), w.d_r);
  CHECK(q_rm(res.model, w.d_r) >= before);
  CHECK(train_reward(w.d_r, cfg).fingerprint() == res.model.fingerprint());
  CHECK_THROWS_AS(train_reward({}, cfg), DataError);
}

TEST_CASE("separable single pair is learned") {
  PreferenceCorpus c{{Instruction::make("p", "q"), Response::from_text("good answer"),
                      Response::from_text("bad reply")}};
  RewardTrainConfig cfg;
  cfg.epochs = 50;
  const auto r = train_reward(c, cfg);
  CHECK(r.score(c[0].instruction, c[0].preferred) > r.score(c[0].instruction, c[0].rejected));
}

TEST_CASE("ranking loss gradient matches central differences") {
  const auto w = small_world(4);
  constexpr std::size_t dim = 256;
  PreferenceCorpus pairs(w.d_r.begin(), w.d_r.begin() + 10);
  const auto diffs = pair_differences(pairs, dim);
  Rng rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> weights(dim);
    for (double& x : weights) x = 2.0 * rng.uniform() - 1.0;
    const auto g = ranking_loss_gradient(weights, diffs);
    for (std::size_t i = 0; i < dim; ++i) {
      const double h = 1e-4;
      auto wp = weights, wm = weights;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (ranking_loss(wp, diffs) - ranking_loss(wm, diffs)) / (2 * h);
      const double scale = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
      CHECK(std::abs(fd - g[i]) / scale < 1e-6);
    }
  }
}

TEST_CASE("log_sigmoid is stable") {
  CHECK(log_sigmoid(0.0) == doctest::Approx(-std::log(2.0)));
  CHECK(std::isfinite(log_sigmoid(-1000.0)));
  CHECK(log_sigmoid(-1000.0) == doctest::Approx(-1000.0));
  CHECK(log_sigmoid(1000.0) == 0.0);
}

TEST_CASE("cosine identities and errors") {
  const HashEmbedding e(256);
  const auto v = e.embed("alpha beta gamma");
  std::vector<double> neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  CHECK(cosine(v, v) == doctest::Approx(1.0));
  CHECK(cosine(v, neg) == doctest::Approx(-1.0));
  CHECK_THROWS_AS(cosine(v, std::vector<double>(8, 1.0)), ConfigError);
  CHECK_THROWS_AS(cosine(v, std::vector<double>(256, 0.0)), DataError);
  CHECK(e.embed("alpha beta gamma") == v);
  CHECK_THROWS_AS(HashEmbedding(100), ConfigError);
}

TEST_CASE("hashed embedding cosine matches explicit sparse vectors") {
  constexpr std::size_t dim = 256;
  const HashEmbedding e(dim);
  const std::vector<std::string> a = {"red", "green", "blue", "cyan"};
  const std::vector<std::string> b = {"red", "green", "pink", "gold"};
  const std::uint64_t basis = mix_seed(0xcbf29ce484222325ULL, "hash-embedding");
  auto sparse = [&](const std::vector<std::string>& toks) {
    std::map<std::size_t, double> m;
    for (const auto& t : toks) {
      const auto h = fnv(t, basis);
      m[h % dim] += (h >> 63) ? -1.0 : 1.0;
    }
    return m;
  };
  const auto sa = sparse(a), sb = sparse(b);
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [i, x] : sa) {
    na += x * x;
    if (auto it = sb.find(i); it != sb.end()) dot += x * it->second;
  }
  for (const auto& [i, x] : sb) nb += x * x;
  const double expected = dot / std::sqrt(na * nb);
  CHECK(cosine(e.embed_tokens(a), e.embed_tokens(b)) == doctest::Approx(expected).epsilon(1e-12));
}
