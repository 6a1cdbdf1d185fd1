#include "seam/lab.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "seam/parallel.hpp"

namespace seam {

namespace {

const std::vector<std::string>& openers() {
  static const std::vector<std::string> v{"how do i", "how can i", "is there a way to",
                                          "what is the best way to", "how should i"};
  return v;
}

const std::vector<std::string>& verbs() {
  static const std::vector<std::string> v{"fix", "clean", "tune", "store"};
  return v;
}

constexpr std::size_t kCorePerTopic = 8;
constexpr std::size_t kJargonPerTopic = 6;
constexpr std::size_t kMarkersPerTopic = 2;
constexpr std::size_t kFillers = 8;
constexpr std::size_t kRewardDim = std::size_t{1} << 16;

class WordFactory {
 public:
  explicit WordFactory(std::uint64_t seed) : rng_(seed) {
    for (const auto& o : openers()) {
      for (const auto& t : tokenize(o).tokens) used_.insert(t);
    }
    for (const auto& v : verbs()) used_.insert(v);
    used_.insert("the");
  }

  std::string word() {
    static constexpr std::string_view kC = "bdfgklmnprstvz";
    static constexpr std::string_view kV = "aeiou";
    for (;;) {
      const std::size_t syllables = 2 + rng_.below(2);
      std::string w;
      for (std::size_t s = 0; s < syllables; ++s) {
        w.push_back(kC[rng_.below(kC.size())]);
        w.push_back(kV[rng_.below(kV.size())]);
      }
      if (used_.insert(w).second) return w;
    }
  }

  /// A fresh word whose reward unigram feature shares a slot with `target`.
  std::string colliding(const std::string& target) {
    const auto slot = LinearReward::feature_index(LinearReward::unigram_feature(target), kRewardDim);
    for (std::uint64_t n = 0;; ++n) {
      std::string w = target + "q";
      for (std::uint64_t x = n;; x /= 26) {
        w.push_back(static_cast<char>('a' + x % 26));
        if (x < 26) break;
      }
      if (LinearReward::feature_index(LinearReward::unigram_feature(w), kRewardDim) == slot &&
          used_.insert(w).second) {
        return w;
      }
    }
  }

 private:
  Rng rng_;
  std::unordered_set<std::string> used_;
};

std::size_t round_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

class Generator {
 public:
  Generator(const WorldConfig& cfg, const std::vector<Topic>& topics,
            const std::vector<std::string>& fillers)
      : cfg_(cfg), topics_(topics), fillers_(fillers) {}

  struct Spec {
    std::size_t topic;
    bool trigger;
  };

  /// Topics uniform, exactly round(fraction * n) triggers at shuffled positions.
  std::vector<Spec> specs(std::size_t n, double trigger_fraction, Rng& rng) const {
    const std::size_t n_trig = round_count(trigger_fraction, n);
    std::vector<Spec> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = {rng.below(topics_.size()), i < n_trig};
    std::vector<bool> flags(n);
    for (std::size_t i = 0; i < n; ++i) flags[i] = out[i].trigger;
    rng.shuffle(flags);
    for (std::size_t i = 0; i < n; ++i) out[i].trigger = flags[i];
    return out;
  }

  std::string instruction(const Spec& s, Rng& rng) const {
    const auto& t = topics_[s.topic];
    return openers()[rng.below(openers().size())] + " " + verbs()[rng.below(verbs().size())] +
           " the " + (s.trigger ? t.trigger_noun : t.noun);
  }

  std::vector<std::string> response(const Spec& s, const NoiseProfile& noise, double marker_rate,
                                    double rare_rate, Rng& rng) const {
    const auto& t = topics_[s.topic];
    const std::size_t len = cfg_.len_min + rng.below(cfg_.len_max - cfg_.len_min + 1);
    std::vector<std::string> out;
    bool has_jargon = false;
    for (std::size_t i = 0; i < len; ++i) {
      // Trigger answers are terse and jargon-heavy: no filler or off-topic drift.
      const double u = s.trigger ? 1.0 : rng.uniform();
      if (u < noise.filler) {
        out.push_back(fillers_[rng.below(fillers_.size())]);
      } else if (u < noise.filler + noise.offtopic && topics_.size() > 1) {
        std::size_t other = rng.below(topics_.size() - 1);
        if (other >= s.topic) ++other;
        out.push_back(topics_[other].core[rng.below(kCorePerTopic)]);
      } else if (s.trigger && rng.bernoulli(cfg_.jargon_share)) {
        has_jargon = true;
        if (rng.bernoulli(marker_rate)) {
          out.push_back(t.markers[rng.below(t.markers.size())]);
        } else {
          out.push_back(t.jargon[rng.below(t.jargon.size())]);
        }
      } else {
        const std::size_t c = rng.below(kCorePerTopic);
        out.push_back(rng.bernoulli(rare_rate) ? t.rare[c] : t.core[c]);
      }
    }
    if (s.trigger && !has_jargon) out[rng.below(len)] = t.jargon[rng.below(t.jargon.size())];
    return out;
  }

  std::vector<std::string> clean(const Spec& s, Rng& rng) const {
    return response(s, NoiseProfile{}, 0.0, 0.0, rng);
  }

  /// Replaces each token by a filler with probability `rate`, at least once.
  std::vector<std::string> corrupt(std::vector<std::string> tokens, double rate, Rng& rng) const {
    bool changed = false;
    for (auto& tok : tokens) {
      if (rng.bernoulli(rate)) {
        tok = fillers_[rng.below(fillers_.size())];
        changed = true;
      }
    }
    if (!changed) tokens[rng.below(tokens.size())] = fillers_[rng.below(fillers_.size())];
    return tokens;
  }

 private:
  const WorldConfig& cfg_;
  const std::vector<Topic>& topics_;
  const std::vector<std::string>& fillers_;
};

std::string make_id(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

json topic_json(const Topic& t) {
  return json{{"noun", t.noun},     {"trigger_noun", t.trigger_noun}, {"core", t.core},
              {"rare", t.rare},     {"jargon", t.jargon},             {"markers", t.markers}};
}

Topic topic_from_json(const json& j) {
  Topic t;
  t.noun = j.at("noun").get<std::string>();
  t.trigger_noun = j.at("trigger_noun").get<std::string>();
  t.core = j.at("core").get<std::vector<std::string>>();
  t.rare = j.at("rare").get<std::vector<std::string>>();
  t.jargon = j.at("jargon").get<std::vector<std::string>>();
  t.markers = j.at("markers").get<std::vector<std::string>>();
  if (t.core.size() != t.rare.size() || t.markers.empty() || t.jargon.empty()) {
    throw DataError("malformed topic");
  }
  return t;
}

}  // namespace

// ---------------------------------------------------------------------------
// Oracle

Oracle::Oracle(const std::vector<Topic>& topics, std::size_t target_len)
    : relevant_(topics.size()), target_len_(target_len == 0 ? 1 : target_len) {
  for (std::size_t i = 0; i < topics.size(); ++i) {
    const auto& t = topics[i];
    nouns_[t.noun] = i;
    triggers_[t.trigger_noun] = i;
    for (const auto& w : t.core) relevant_[i][w] = true;
    for (const auto& w : t.rare) relevant_[i][w] = true;
    for (const auto& w : t.jargon) relevant_[i][w] = true;
    for (const auto& w : t.markers) markers_[w] = true;
  }
}

std::optional<std::size_t> Oracle::topic_of(const Instruction& instruction) const {
  const auto& toks = instruction.tokens.tokens;
  for (auto it = toks.rbegin(); it != toks.rend(); ++it) {
    if (auto n = nouns_.find(*it); n != nouns_.end()) return n->second;
    if (auto n = triggers_.find(*it); n != triggers_.end()) return n->second;
  }
  return std::nullopt;
}

bool Oracle::is_trigger(const Instruction& instruction) const {
  const auto& toks = instruction.tokens.tokens;
  return std::any_of(toks.begin(), toks.end(), [&](const std::string& t) { return triggers_.count(t) > 0; });
}

double Oracle::quality(const Instruction& instruction, const Response& response) const {
  const auto& toks = response.tokens.tokens;
  if (toks.empty()) return 1.0;
  const auto topic = topic_of(instruction);
  std::size_t rel = 0, mark = 0;
  for (const auto& t : toks) {
    if (topic && relevant_[*topic].count(t)) ++rel;
    if (markers_.count(t)) ++mark;
  }
  const double n = static_cast<double>(toks.size());
  const double length = std::min(n / static_cast<double>(target_len_), 1.0);
  const double raw = 0.7 * (static_cast<double>(rel) / n) + 0.3 * length - 1.5 * (static_cast<double>(mark) / n);
  return 1.0 + 9.0 * std::clamp(raw, 0.0, 1.0);
}

std::string AffineReward::fingerprint() const {
  return sha256_hex("affine:" + base_->fingerprint() + ":" + json(scale_).dump() + ":" +
                    json(shift_).dump());
}

// ---------------------------------------------------------------------------
// World

void WorldConfig::validate() const {
  if (n_sft < 100 || n_pref < 100 || n_rl < 50) {
    throw ConfigError("world sizes too small (need n_sft >= 100, n_pref >= 100, n_rl >= 50)");
  }
  if (n_eval == 0 || n_pref_test == 0) throw ConfigError("held-out sets must be non-empty");
  if (!(hackable_fraction >= 0.0 && hackable_fraction <= 0.5)) {
    throw ConfigError("hackable_fraction must lie in [0, 0.5]");
  }
  if (n_topics < 2) throw ConfigError("need at least two topics");
  if (len_min < 2 || len_max < len_min) throw ConfigError("invalid response length range");
  auto prob = [](double p, const char* what) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(what) + " must lie in [0, 1]");
  };
  prob(jargon_share, "jargon_share");
  prob(marker_rate, "marker_rate");
  prob(rare_rate, "rare_rate");
  for (const auto* n : {&sft_noise, &preferred_noise, &rejected_noise}) {
    prob(n->filler, "filler rate");
    prob(n->offtopic, "offtopic rate");
    if (n->filler + n->offtopic > 1.0) throw ConfigError("noise rates must sum to at most 1");
  }
}

json to_json(const WorldConfig& c) {
  auto noise = [](const NoiseProfile& n) { return json{{"filler", n.filler}, {"offtopic", n.offtopic}}; };
  return json{{"seed", c.seed},
              {"n_sft", c.n_sft},
              {"n_pref", c.n_pref},
              {"n_rl", c.n_rl},
              {"n_eval", c.n_eval},
              {"n_pref_test", c.n_pref_test},
              {"n_topics", c.n_topics},
              {"hackable_fraction", c.hackable_fraction},
              {"len_min", c.len_min},
              {"len_max", c.len_max},
              {"jargon_share", c.jargon_share},
              {"marker_rate", c.marker_rate},
              {"rare_rate", c.rare_rate},
              {"sft_noise", noise(c.sft_noise)},
              {"preferred_noise", noise(c.preferred_noise)},
              {"rejected_noise", noise(c.rejected_noise)},
              {"shared_generator", c.shared_generator}};
}

WorldConfig world_config_from_json(const json& j) {
  WorldConfig c;
  if (!j.is_object()) throw ConfigError("world config must be an object");
  auto noise = [](const json& n, NoiseProfile& out) {
    for (const auto& [k, v] : n.items()) {
      if (k == "filler") out.filler = v.get<double>();
      else if (k == "offtopic") out.offtopic = v.get<double>();
      else throw ConfigError("unknown noise key '" + k + "'");
    }
  };
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "n_sft") c.n_sft = v.get<std::size_t>();
      else if (k == "n_pref") c.n_pref = v.get<std::size_t>();
      else if (k == "n_rl") c.n_rl = v.get<std::size_t>();
      else if (k == "n_eval") c.n_eval = v.get<std::size_t>();
      else if (k == "n_pref_test") c.n_pref_test = v.get<std::size_t>();
      else if (k == "n_topics") c.n_topics = v.get<std::size_t>();
      else if (k == "hackable_fraction") c.hackable_fraction = v.get<double>();
      else if (k == "len_min") c.len_min = v.get<std::size_t>();
      else if (k == "len_max") c.len_max = v.get<std::size_t>();
      else if (k == "jargon_share") c.jargon_share = v.get<double>();
      else if (k == "marker_rate") c.marker_rate = v.get<double>();
      else if (k == "rare_rate") c.rare_rate = v.get<double>();
      else if (k == "sft_noise") noise(v, c.sft_noise);
      else if (k == "preferred_noise") noise(v, c.preferred_noise);
      else if (k == "rejected_noise") noise(v, c.rejected_noise);
      else if (k == "shared_generator") c.shared_generator = v.get<bool>();
      else throw ConfigError("unknown world key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("world config: ") + e.what());
  }
  return c;
}

LexiconSynonyms LabWorld::lexicon() const {
  std::map<std::string, std::vector<std::string>> entries;
  for (const auto& t : topics) {
    for (std::size_t i = 0; i < t.core.size(); ++i) entries[t.core[i]] = {t.rare[i]};
    for (const auto& j : t.jargon) entries[j] = t.markers;
  }
  return LexiconSynonyms(std::move(entries));
}

std::string LabWorld::fingerprint() const {
  json j{{"config", to_json(config)},
         {"d_p", corpus_fingerprint(d_p)},
         {"d_r", corpus_fingerprint(d_r)},
         {"d_rl", corpus_fingerprint(d_rl)},
         {"eval", corpus_fingerprint(eval)},
         {"pref_test", corpus_fingerprint(pref_test)},
         {"planted_pairs", corpus_fingerprint(planted_pairs)}};
  return sha256_hex(j.dump());
}

LabWorld generate_world(const WorldConfig& config) {
  config.validate();
  LabWorld w;
  w.config = config;
  WordFactory words(mix_seed(config.seed, "vocab"));
  for (std::size_t t = 0; t < config.n_topics; ++t) {
    Topic topic;
    topic.noun = words.word();
    topic.trigger_noun = words.word();
    for (std::size_t i = 0; i < kCorePerTopic; ++i) topic.core.push_back(words.word());
    for (std::size_t i = 0; i < kCorePerTopic; ++i) topic.rare.push_back(words.word());
    for (std::size_t i = 0; i < kJargonPerTopic; ++i) topic.jargon.push_back(words.word());
    w.topics.push_back(std::move(topic));
  }
  for (std::size_t i = 0; i < kFillers; ++i) w.fillers.push_back(words.word());
  for (auto& topic : w.topics) {
    for (std::size_t i = 0; i < kMarkersPerTopic; ++i) topic.markers.push_back(words.colliding(topic.core[i]));
  }
  w.oracle = Oracle(w.topics, (config.len_min + config.len_max) / 2);

  const Generator gen(config, w.topics, w.fillers);
  const bool shared = config.shared_generator;
  const double frac = config.hackable_fraction;

  {
    Rng rng(mix_seed(config.seed, "d_p"));
    const auto specs = gen.specs(config.n_sft, frac, rng);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto text = gen.instruction(specs[i], rng);
      auto resp = gen.response(specs[i], config.sft_noise, config.marker_rate, config.rare_rate, rng);
      w.d_p.push_back({Instruction::make(make_id("p", i), std::move(text)),
                       Response::from_tokens(std::move(resp))});
    }
  }

  auto make_pairs = [&](std::size_t n, const char* prefix, std::string_view tag) {
    PreferenceCorpus out;
    Rng rng(mix_seed(config.seed, tag));
    const auto specs = gen.specs(n, shared ? frac : 0.0, rng);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto instr = Instruction::make(make_id(prefix, i), gen.instruction(specs[i], rng));
      for (int attempt = 0;; ++attempt) {
        if (attempt == 64) throw Error("world generation could not form a strict preference pair");
        Response a, b;
        if (shared) {
          auto base = gen.response(specs[i], config.sft_noise, config.marker_rate, config.rare_rate, rng);
          a = Response::from_tokens(base);
          b = Response::from_tokens(gen.corrupt(base, 0.5, rng));
        } else {
          a = Response::from_tokens(gen.response(specs[i], config.preferred_noise, 0.0, config.rare_rate, rng));
          b = Response::from_tokens(gen.response(specs[i], config.rejected_noise, 0.0, config.rare_rate, rng));
        }
        const double qa = w.oracle.quality(instr, a), qb = w.oracle.quality(instr, b);
        if (qa == qb || a.text == b.text) continue;
        if (qa < qb) std::swap(a, b);
        out.push_back({instr, std::move(a), std::move(b)});
        break;
      }
    }
    return out;
  };
  w.d_r = make_pairs(config.n_pref, "r", "d_r");
  w.pref_test = make_pairs(config.n_pref_test, "rt", "pref_test");

  auto make_rl = [&](std::size_t n, const char* prefix, std::string_view tag,
                     std::vector<std::string>* planted) {
    RlCorpus out;
    Rng rng(mix_seed(config.seed, tag));
    const auto specs = gen.specs(n, frac, rng);
    for (std::size_t i = 0; i < specs.size(); ++i) {
      auto instr = Instruction::make(make_id(prefix, i), gen.instruction(specs[i], rng));
      auto resp = shared ? gen.response(specs[i], config.sft_noise, config.marker_rate, config.rare_rate, rng)
                         : gen.clean(specs[i], rng);
      if (planted && specs[i].trigger) planted->push_back(instr.id);
      out.push_back({std::move(instr), Response::from_tokens(std::move(resp))});
    }
    return out;
  };
  w.d_rl = make_rl(config.n_rl, "rl", "d_rl", &w.planted);
  w.eval = make_rl(config.n_eval, "ev", "eval", nullptr);

  {
    Rng rng(mix_seed(config.seed, "planted_pairs"));
    std::unordered_map<std::string, const Topic*> jargon_topic;
    for (const auto& t : w.topics) {
      for (const auto& j : t.jargon) jargon_topic[j] = &t;
    }
    std::size_t k = 0;
    for (const auto& s : w.eval) {
      if (!w.oracle.is_trigger(s.instruction)) continue;
      auto toks = s.golden.tokens.tokens;
      std::vector<std::size_t> slots;
      for (std::size_t i = 0; i < toks.size(); ++i) {
        if (jargon_topic.count(toks[i])) slots.push_back(i);
      }
      if (slots.empty()) continue;
      bool changed = false;
      for (auto i : slots) {
        if (rng.bernoulli(0.5)) {
          const auto& m = jargon_topic[toks[i]]->markers;
          toks[i] = m[rng.below(m.size())];
          changed = true;
        }
      }
      if (!changed) {
        const auto i = slots[rng.below(slots.size())];
        const auto& m = jargon_topic[toks[i]]->markers;
        toks[i] = m[rng.below(m.size())];
      }
      auto rejected = Response::from_tokens(std::move(toks));
      if (!(w.oracle.quality(s.instruction, s.golden) > w.oracle.quality(s.instruction, rejected))) continue;
      w.planted_pairs.push_back({Instruction::make(make_id("pp", k++), s.instruction.text), s.golden,
                                 std::move(rejected)});
    }
  }
  return w;
}

void save_world(const LabWorld& world, const std::filesystem::path& dir) {
  json topics = json::array();
  for (const auto& t : world.topics) topics.push_back(topic_json(t));
  json meta{{"format_version", kWorldFormatVersion},
            {"config", to_json(world.config)},
            {"topics", std::move(topics)},
            {"fillers", world.fillers},
            {"planted", world.planted},
            {"fingerprint", world.fingerprint()}};
  save_corpus(dir / "d_p.jsonl", world.d_p);
  save_corpus(dir / "d_r.jsonl", world.d_r);
  save_corpus(dir / "d_rl.jsonl", world.d_rl);
  save_corpus(dir / "eval.jsonl", world.eval);
  save_corpus(dir / "pref_test.jsonl", world.pref_test);
  save_corpus(dir / "planted_pairs.jsonl", world.planted_pairs);
  atomic_write(dir / "lexicon.jsonl", world.lexicon().to_jsonl());
  atomic_write(dir / "world.json", meta.dump(2) + "\n");
}

LabWorld load_world(const std::filesystem::path& dir) {
  LabWorld w;
  json meta;
  try {
    meta = json::parse(read_file(dir / "world.json"));
    if (meta.at("format_version").get<int>() != kWorldFormatVersion) {
      throw DataError("unsupported world format_version");
    }
    w.config = world_config_from_json(meta.at("config"));
    for (const auto& t : meta.at("topics")) w.topics.push_back(topic_from_json(t));
    w.fillers = meta.at("fillers").get<std::vector<std::string>>();
    w.planted = meta.at("planted").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw DataError((dir / "world.json").string() + ": " + e.what());
  }
  w.oracle = Oracle(w.topics, (w.config.len_min + w.config.len_max) / 2);
  w.d_p = load_sft(dir / "d_p.jsonl");
  w.d_r = load_preference(dir / "d_r.jsonl");
  w.d_rl = load_rl(dir / "d_rl.jsonl");
  w.eval = load_rl(dir / "eval.jsonl");
  w.pref_test = load_preference(dir / "pref_test.jsonl");
  w.planted_pairs = load_preference(dir / "planted_pairs.jsonl");
  return w;
}

// ---------------------------------------------------------------------------
// RL

void RlConfig::validate() const {
  if (!(beta >= 0.0)) throw ConfigError("rl beta must be >= 0");
  if (samples_per_instruction < 1) throw ConfigError("rl samples_per_instruction must be >= 1");
  if (steps < 1) throw ConfigError("rl steps must be >= 1");
  if (!(step_size >= 0.0)) throw ConfigError("rl step_size must be >= 0");
  if (!(update_rate >= 0.0)) throw ConfigError("rl update_rate must be >= 0");
  if (max_len < 1) throw ConfigError("rl max_len must be >= 1");
}

json to_json(const RlConfig& c) {
  return json{{"beta", c.beta},           {"samples_per_instruction", c.samples_per_instruction},
              {"steps", c.steps},         {"step_size", c.step_size},
              {"seed", c.seed},           {"update_rate", c.update_rate},
              {"batch_size", c.batch_size},
              {"max_len", c.max_len}};
}

RlConfig rl_config_from_json(const json& j) {
  RlConfig c;
  if (!j.is_object()) throw ConfigError("rl config must be an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "beta") c.beta = v.get<double>();
      else if (k == "samples_per_instruction") c.samples_per_instruction = v.get<std::size_t>();
      else if (k == "steps") c.steps = v.get<std::size_t>();
      else if (k == "step_size") c.step_size = v.get<double>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else if (k == "update_rate") c.update_rate = v.get<double>();
      else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (k == "max_len") c.max_len = v.get<std::size_t>();
      else throw ConfigError("unknown rl key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("rl config: ") + e.what());
  }
  return c;
}

namespace {

// One multiplicative update over d_rl[lo, hi).
void rl_minibatch(NgramPolicy& cur, const NgramPolicy& sft, const RewardBackend& reward, const RlCorpus& d_rl,
                  std::size_t lo, std::size_t hi, std::size_t step, const RlConfig& config) {
  const double eta = config.step_size;
  const std::size_t k = config.samples_per_instruction;
  std::unordered_map<NgramPolicy::Event, std::pair<double, double>, NgramPolicy::EventHash> acc;
  for (std::size_t i = lo; i < hi; ++i) {
    const auto& s = d_rl[i];
    const std::uint64_t base = mix_seed(mix_seed(config.seed, step), s.id());
    std::vector<std::vector<std::uint32_t>> ids(k);
    std::vector<double> adv(k);
    for (std::size_t j = 0; j < k; ++j) {
      const Response r = cur.sample(s.instruction, mix_seed(base, j), config.max_len);
      const double kl = config.beta == 0.0 ? 0.0
                                           : cur.logprob(s.instruction, r).total -
                                                 sft.logprob(s.instruction, r).total;
      adv[j] = reward_score(reward, s.instruction, r) - config.beta * kl;
      ids[j] = cur.encode(r.tokens.tokens);
    }
    double mean_a = 0.0;
    for (double a : adv) mean_a += a;
    mean_a /= static_cast<double>(k);
    std::vector<double> g(k);
    double mean_w = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      g[j] = eta * (adv[j] - mean_a) / (1.0 + eta * config.beta);
      mean_w += std::exp(g[j]);
    }
    mean_w /= static_cast<double>(k);
    for (std::size_t j = 0; j < k; ++j) {
      const double log_ratio = g[j] - std::log(mean_w);
      for (const auto& e : cur.events(s.instruction, ids[j])) {
        auto& [sum, n] = acc[e];
        sum += log_ratio;
        n += 1.0;
      }
    }
  }
  for (const auto& [e, sn] : acc) cur.scale_event(e, std::exp(config.update_rate * sn.first / sn.second));
  cur.renormalize();
}

}  // namespace

NgramPolicy rl_improve(const NgramPolicy& sft, const RewardBackend& reward, const RlCorpus& d_rl,
                       const RlConfig& config) {
  config.validate();
  NgramPolicy cur = sft;
  if (config.step_size == 0.0 || config.update_rate == 0.0) return cur;
  const std::size_t batch = config.batch_size == 0 ? d_rl.size() : config.batch_size;
  for (std::size_t step = 0; step < config.steps; ++step) {
    for (std::size_t lo = 0; lo < d_rl.size(); lo += batch) {
      rl_minibatch(cur, sft, reward, d_rl, lo, std::min(d_rl.size(), lo + batch), step, config);
    }
  }
  return cur;
}

double q_pm(const PolicyBackend& policy, const RlCorpus& test, const Oracle& oracle,
            std::uint64_t seed, std::size_t samples, std::size_t max_len) {
  if (test.empty()) throw DataError("q_pm: empty test set");
  if (samples == 0) throw ConfigError("q_pm: samples must be >= 1");
  double sum = 0.0;
  for (const auto& s : test) {
    const std::uint64_t base = mix_seed(seed, s.instruction.text);
    for (std::size_t j = 0; j < samples; ++j) {
      sum += oracle.quality(s.instruction, policy_sample(policy, s.instruction, mix_seed(base, j), max_len));
    }
  }
  return sum / static_cast<double>(test.size() * samples);
}

double q_rm(const RewardBackend& reward, const PreferenceCorpus& pairs) {
  if (pairs.empty()) throw DataError("q_rm: empty preference set");
  double correct = 0.0;
  for (const auto& p : pairs) {
    const double a = reward_score(reward, p.instruction, p.preferred);
    const double b = reward_score(reward, p.instruction, p.rejected);
    correct += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  return correct / static_cast<double>(pairs.size());
}

MismatchResult mismatch_rate(const PolicyBackend& a, const PolicyBackend& b,
                             const RewardBackend& reward, const Oracle& oracle,
                             const RlCorpus& test, std::size_t n, std::uint64_t seed,
                             std::size_t max_len) {
  if (n > test.size()) throw ConfigError("mismatch_rate: n exceeds the test set");
  MismatchResult out;
  std::size_t counted = 0, mismatched = 0;
  auto sign = [](double x) { return (x > 0.0) - (x < 0.0); };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& s = test[i];
    const std::uint64_t base = mix_seed(seed, s.id());
    const auto ra = policy_sample(a, s.instruction, mix_seed(base, "a"), max_len);
    const auto rb = policy_sample(b, s.instruction, mix_seed(base, "b"), max_len);
    MismatchPair p;
    p.sample_id = s.id();
    p.reward_a = reward_score(reward, s.instruction, ra);
    p.reward_b = reward_score(reward, s.instruction, rb);
    p.quality_a = oracle.quality(s.instruction, ra);
    p.quality_b = oracle.quality(s.instruction, rb);
    const int sr = sign(p.reward_a - p.reward_b), sq = sign(p.quality_a - p.quality_b);
    p.counted = !(sr == 0 && sq == 0);
    p.mismatch = p.counted && sr != sq;
    counted += p.counted;
    mismatched += p.mismatch;
    out.pairs.push_back(std::move(p));
  }
  out.rate = counted ? static_cast<double>(mismatched) / static_cast<double>(counted) : 0.0;
  return out;
}

double policy_divergence(const NgramPolicy& a, const NgramPolicy& b, const RlCorpus& instructions,
                         std::size_t samples, std::uint64_t seed, std::size_t max_len) {
  if (a.vocab().words() != b.vocab().words()) throw ConfigError("policies use different vocabularies");
  double total = 0.0;
  std::size_t steps = 0;
  for (const auto& s : instructions) {
    for (std::size_t j = 0; j < samples; ++j) {
      const auto r = a.sample(s.instruction, mix_seed(mix_seed(seed, s.id()), j), max_len);
      auto stream = a.context_stream(s.instruction);
      auto ids = a.encode(r.tokens.tokens);
      ids.push_back(Vocabulary::kEnd);
      for (auto id : ids) {
        const auto da = a.distribution(stream), db = b.distribution(stream);
        double tv = 0.0;
        for (std::size_t t = 0; t < da.size(); ++t) tv += std::abs(da[t] - db[t]);
        total += 0.5 * tv;
        ++steps;
        stream.push_back(id);
      }
    }
  }
  return steps ? total / static_cast<double>(steps) : 0.0;
}

// ---------------------------------------------------------------------------
// Ladders

namespace {

void check_sizes(const std::vector<std::size_t>& sizes, std::size_t available, const char* what) {
  if (sizes.empty()) throw ConfigError(std::string(what) + " ladder is empty");
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0 || sizes[i] > available || (i && sizes[i] <= sizes[i - 1])) {
      throw ConfigError(std::string(what) + " ladder sizes must be strictly increasing and within " +
                        std::to_string(available));
    }
  }
}

template <class Record>
std::vector<Record> nested_prefix(const std::vector<Record>& corpus, const std::vector<std::size_t>& order,
                                  std::size_t n) {
  std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(idx.begin(), idx.end());
  std::vector<Record> out;
  for (auto i : idx) out.push_back(corpus[i]);
  return out;
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  return order;
}

}  // namespace

QualityLadder build_ladder(const LabWorld& world, const LadderConfig& config,
                           const RewardTrainConfig& reward_config) {
  check_sizes(config.pm_sizes, world.d_p.size(), "PM");
  check_sizes(config.rm_sizes, world.d_r.size(), "RM");
  QualityLadder ladder;
  const auto pm_order = permutation(world.d_p.size(), mix_seed(config.seed, "ladder-pm"));
  for (auto n : config.pm_sizes) ladder.pm_rungs.emplace_back(n, train_policy(nested_prefix(world.d_p, pm_order, n)));
  const auto rm_order = permutation(world.d_r.size(), mix_seed(config.seed, "ladder-rm"));
  for (auto n : config.rm_sizes) {
    ladder.rm_rungs.emplace_back(n, train_reward(nested_prefix(world.d_r, rm_order, n), reward_config));
  }
  return ladder;
}

SaturationResult saturation_sweep(const LabWorld& world, const LadderConfig& ladder_config,
                                  const RlConfig& rl, std::size_t concurrency) {
  const auto ladder = build_ladder(world, ladder_config);
  SaturationResult out;
  out.pm_sizes = ladder_config.pm_sizes;
  out.rm_sizes = ladder_config.rm_sizes;
  for (const auto& [n, pm] : ladder.pm_rungs) out.pm_quality.push_back(q_pm(pm, world.eval, world.oracle, rl.seed));
  for (const auto& [n, rm] : ladder.rm_rungs) out.rm_quality.push_back(q_rm(rm, world.pref_test));
  const std::size_t np = ladder.pm_rungs.size(), nr = ladder.rm_rungs.size();
  std::vector<double> cells(np * nr);
  parallel_for(cells.size(), concurrency, [&](std::size_t c) {
    const auto& pm = ladder.pm_rungs[c / nr].second;
    const auto& rm = ladder.rm_rungs[c % nr].second;
    cells[c] = q_pm(rl_improve(pm, rm, world.d_rl, rl), world.eval, world.oracle, rl.seed);
  });
  out.grid.assign(np, std::vector<double>(nr));
  for (std::size_t c = 0; c < cells.size(); ++c) out.grid[c / nr][c % nr] = cells[c];
  return out;
}

CvTraining cv_training_sets(const LabWorld& world, std::uint64_t seed) {
  const std::array<double, 3> ratios{0.8, 0.1, 0.1};
  return {split(world.d_p, ratios, mix_seed(seed, "cv-p"))[0],
          split(world.d_r, ratios, mix_seed(seed, "cv-r"))[0]};
}

CrossValidation cross_validate(const PolicyBackend& policy, const RewardBackend& reward,
                               const LabWorld& world, std::uint64_t seed, std::size_t samples) {
  const std::array<double, 3> ratios{0.8, 0.1, 0.1};
  const auto p_test = split(world.d_p, ratios, mix_seed(seed, "cv-p"))[2];
  const auto r_test = split(world.d_r, ratios, mix_seed(seed, "cv-r"))[2];
  const auto rl_test = split(world.d_rl, ratios, mix_seed(seed, "cv-rl"))[2];

  const Generator gen(world.config, world.topics, world.fillers);
  Rng rng(mix_seed(seed, "cv-degrade"));
  RlCorpus p_inst, r_inst;
  PreferenceCorpus p_pairs, rl_pairs;
  // Golden vs corrupted copy, oriented by the oracle like the preference corpus.
  auto add_pair = [&](PreferenceCorpus& out, const Instruction& instruction, const Response& golden) {
    Response a = golden;
    Response b = Response::from_tokens(gen.corrupt(golden.tokens.tokens, 0.5, rng));
    const double qa = world.oracle.quality(instruction, a), qb = world.oracle.quality(instruction, b);
    if (qa == qb || a.text == b.text) return;
    if (qa < qb) std::swap(a, b);
    out.push_back({instruction, std::move(a), std::move(b)});
  };
  for (const auto& e : p_test) {
    p_inst.push_back({e.instruction, e.golden});
    add_pair(p_pairs, e.instruction, e.golden);
  }
  for (const auto& p : r_test) r_inst.push_back({p.instruction, p.preferred});
  for (const auto& s : rl_test) add_pair(rl_pairs, s.instruction, s.golden);

  CrossValidation cv;
  cv.values = {{q_pm(policy, p_inst, world.oracle, seed, samples),
                q_pm(policy, r_inst, world.oracle, seed, samples),
                q_pm(policy, rl_test, world.oracle, seed, samples)},
               {q_rm(reward, p_pairs), q_rm(reward, r_test), q_rm(reward, rl_pairs)}};
  return cv;
}

json to_json(const SaturationResult& s) {
  return json{{"pm_sizes", s.pm_sizes},
              {"rm_sizes", s.rm_sizes},
              {"pm_quality", s.pm_quality},
              {"rm_quality", s.rm_quality},
              {"grid", s.grid}};
}

json to_json(const CrossValidation& c) {
  return json{{"metrics", c.metrics}, {"roles", c.roles}, {"values", c.values}};
}

}  // namespace seam
