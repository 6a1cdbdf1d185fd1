#include "seam/samplers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_map>
#include <unordered_set>

#include "seam/error.hpp"
#include "seam/hashing.hpp"

namespace seam {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::contrast: return "contrast";
    case Variant::degrade: return "degrade";
    case Variant::adversarial: return "adversarial";
  }
  return "?";
}

Variant variant_from_string(std::string_view s) {
  if (s == "contrast") return Variant::contrast;
  if (s == "degrade") return Variant::degrade;
  if (s == "adversarial" || s == "adv") return Variant::adversarial;
  throw ConfigError("unknown probe variant '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const Provenance& p) {
  json j{{"variant", to_string(p.variant)}};
  switch (p.variant) {
    case Variant::contrast:
      j["source_id"] = p.source_id;
      j["similarity"] = p.similarity;
      j["out_of_band"] = p.out_of_band;
      break;
    case Variant::degrade:
      j["op"] = p.op;
      j["seed"] = p.seed;
      break;
    case Variant::adversarial: {
      json edits = json::array();
      for (const auto& e : p.edits) {
        edits.push_back({{"position", e.position}, {"from", e.from}, {"to", e.to}, {"gain", e.gain}});
      }
      j["edits"] = std::move(edits);
      j["iterations"] = p.iterations;
      j["restart"] = p.restart;
      break;
    }
  }
  return j;
}

Provenance provenance_from_json(const json& j) {
  try {
    Provenance p;
    p.variant = variant_from_string(j.at("variant").get<std::string>());
    switch (p.variant) {
      case Variant::contrast:
        p.source_id = j.at("source_id").get<std::string>();
        p.similarity = j.at("similarity").get<double>();
        p.out_of_band = j.value("out_of_band", false);
        break;
      case Variant::degrade:
        p.op = j.at("op").get<std::string>();
        p.seed = j.at("seed").get<std::uint64_t>();
        break;
      case Variant::adversarial:
        for (const auto& e : j.at("edits")) {
          p.edits.push_back(Edit{e.at("position").get<std::size_t>(), e.at("from").get<std::string>(),
                                 e.at("to").get<std::string>(), e.at("gain").get<double>()});
        }
        p.iterations = j.at("iterations").get<int>();
        p.restart = j.at("restart").get<int>();
        break;
    }
    return p;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed provenance: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
}

json to_json(const ProbeSet& s) {
  json probes = json::array();
  for (const auto& p : s.probes) {
    probes.push_back({{"response", p.response.text}, {"provenance", to_json(p.provenance)}});
  }
  return json{{"sample_id", s.sample_id},   {"variant", to_string(s.variant)},
              {"target_size", s.target_size}, {"shortfall", s.shortfall},
              {"out_of_band", s.out_of_band}, {"probes", std::move(probes)}};
}

ProbeSet probe_set_from_json(const json& j) {
  ProbeSet s;
  try {
    s.sample_id = j.at("sample_id").get<std::string>();
    s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.target_size = j.at("target_size").get<std::size_t>();
    s.shortfall = j.value("shortfall", std::size_t{0});
    s.out_of_band = j.value("out_of_band", false);
    std::unordered_set<std::string> seen;
    for (const auto& p : j.at("probes")) {
      Probe probe{Response::from_text(p.at("response").get<std::string>()),
                  provenance_from_json(p.at("provenance"))};
      if (!seen.insert(probe.response.text).second) {
        throw DataError("duplicate probe response in set '" + s.sample_id + "'");
      }
      s.probes.push_back(std::move(probe));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed probe set: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
  return s;
}

void save_probe_sets(const std::filesystem::path& path, const std::vector<ProbeSet>& sets) {
  std::string out;
  for (const auto& s : sets) {
    out += to_json(s).dump();
    out += '\n';
  }
  atomic_write(path, out);
}

std::vector<ProbeSet> load_probe_sets(const std::filesystem::path& path) {
  std::vector<ProbeSet> out;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(i + 1);
    try {
      out.push_back(probe_set_from_json(json::parse(lines[i])));
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contrast

namespace {

bool is_zero(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return x == 0.0; });
}

}  // namespace

ContrastIndex::ContrastIndex(const SftCorpus& corpus, const EmbeddingBackend& embedding)
    : corpus_(&corpus), embedding_(&embedding) {
  if (corpus.empty()) throw DataError("contrast retrieval needs a non-empty SFT corpus");
  vectors_.reserve(corpus.size());
  for (const auto& ex : corpus) {
    auto v = embedding.embed(ex.instruction.text);
    if (v.size() != embedding.dim()) throw ConfigError("embedding dimension mismatch");
    if (is_zero(v)) v.clear();
    vectors_.push_back(std::move(v));
  }
}

ContrastIndex::Result ContrastIndex::retrieve(const Instruction& query,
                                              const ContrastConfig& config) const {
  if (!(config.lo <= config.hi)) throw ConfigError("contrast band needs lo <= hi");
  Result result;
  const auto q = embedding_->embed(query.text);
  if (q.size() != embedding_->dim()) throw ConfigError("embedding dimension mismatch");
  if (is_zero(q) || config.k == 0) return result;

  std::vector<Hit> in_band, below;
  for (std::size_t i = 0; i < corpus_->size(); ++i) {
    if (vectors_[i].empty() || (*corpus_)[i].instruction.text == query.text) continue;
    const double sim = cosine(q, vectors_[i]);
    if (sim >= config.lo && sim <= config.hi) {
      in_band.push_back({i, sim});
    } else if (sim < config.lo) {
      below.push_back({i, sim});
    }
  }
  auto& pool = in_band.empty() ? below : in_band;
  result.out_of_band = in_band.empty() && !below.empty();
  std::stable_sort(pool.begin(), pool.end(),
                   [](const Hit& a, const Hit& b) { return a.similarity > b.similarity; });
  std::unordered_set<std::string> taken;
  for (const auto& h : pool) {
    if (result.hits.size() >= config.k) break;
    if (!taken.insert((*corpus_)[h.index].golden.text).second) continue;
    result.hits.push_back(h);
  }
  return result;
}

ProbeSet build_contrast_set(const RlSample& sample, const ContrastIndex& index,
                            const ContrastConfig& config) {
  ProbeSet set;
  set.sample_id = sample.id();
  set.variant = Variant::contrast;
  set.target_size = config.k;
  const auto result = index.retrieve(sample.instruction, config);
  set.out_of_band = result.out_of_band;
  for (const auto& h : result.hits) {
    const auto& ex = index.corpus()[h.index];
    Provenance p;
    p.variant = Variant::contrast;
    p.source_id = ex.id();
    p.similarity = h.similarity;
    p.out_of_band = result.out_of_band;
    set.probes.push_back({ex.golden, std::move(p)});
  }
  set.shortfall = config.k > set.probes.size() ? config.k - set.probes.size() : 0;
  return set;
}

ProbeSet build_contrast_set(const RlSample& sample, const SftCorpus& sft,
                            const EmbeddingBackend& embedding, const ContrastConfig& config) {
  ContrastIndex index(sft, embedding);
  return build_contrast_set(sample, index, config);
}

// ---------------------------------------------------------------------------
// Degradation operators

namespace degrade_ops {

namespace {

bool is_terminal(const std::string& tok) { return tok == "." || tok == "!" || tok == "?"; }

Tokens flatten(const std::vector<Tokens>& parts) {
  Tokens out;
  for (const auto& p : parts) out.insert(out.end(), p.begin(), p.end());
  return out;
}

}  // namespace

std::vector<Tokens> sentences(const Tokens& t) {
  std::vector<Tokens> out;
  Tokens cur;
  for (const auto& tok : t) {
    cur.push_back(tok);
    if (is_terminal(tok)) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Tokens truncate(const Tokens& t) { return Tokens(t.begin(), t.begin() + (t.size() + 1) / 2); }

Tokens shuffle(const Tokens& t, Rng& rng) {
  auto parts = sentences(t);
  if (parts.size() >= 2) {
    rng.shuffle(parts);
    return flatten(parts);
  }
  Tokens out = t;
  rng.shuffle(out);
  return out;
}

Tokens splice(const Tokens& t, const Tokens& donor) {
  Tokens out = truncate(t);
  out.insert(out.end(), donor.begin() + donor.size() / 2, donor.end());
  return out;
}

Tokens dropout(const Tokens& t, Rng& rng, double rate) {
  Tokens out;
  for (const auto& tok : t) {
    if (!rng.bernoulli(rate)) out.push_back(tok);
  }
  return out;
}

Tokens repeat_span(const Tokens& t, Rng& rng) {
  if (t.empty()) return t;
  auto parts = sentences(t);
  if (parts.size() >= 2) {
    const auto i = rng.below(parts.size());
    parts.insert(parts.begin() + static_cast<std::ptrdiff_t>(i) + 1, parts[i]);
    return flatten(parts);
  }
  const std::size_t len = std::min<std::size_t>(1 + rng.below(3), t.size());
  const std::size_t start = rng.below(t.size() - len + 1);
  Tokens out(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(start + len));
  out.insert(out.end(), t.begin() + static_cast<std::ptrdiff_t>(start), t.end());
  return out;
}

}  // namespace degrade_ops

LocalDegrader::LocalDegrader(std::vector<Response> donors) : donors_(std::move(donors)) {}

std::vector<Probe> LocalDegrader::generate(const RlSample& sample, std::size_t n,
                                           std::uint64_t seed) const {
  using namespace degrade_ops;
  const auto& golden = sample.golden.tokens.tokens;
  std::vector<Probe> out;
  std::unordered_set<std::string> seen{sample.golden.text};
  for (std::size_t attempt = 0; attempt < 5 * n && out.size() < n; ++attempt) {
    const std::size_t op = attempt % kNames.size();
    const std::uint64_t sub = mix_seed(seed, attempt);
    Rng rng(sub);
    Tokens t;
    switch (op) {
      case 0: t = truncate(golden); break;
      case 1: t = shuffle(golden, rng); break;
      case 2: {
        if (donors_.empty()) continue;
        const auto start = rng.below(donors_.size());
        const Response* donor = nullptr;
        for (std::size_t k = 0; k < donors_.size(); ++k) {
          const auto& d = donors_[(start + k) % donors_.size()];
          if (d.text != sample.golden.text) {
            donor = &d;
            break;
          }
        }
        if (!donor) continue;
        t = splice(golden, donor->tokens.tokens);
        break;
      }
      case 3: t = dropout(golden, rng); break;
      default: t = repeat_span(golden, rng); break;
    }
    if (t.empty()) continue;
    auto response = Response::from_tokens(std::move(t));
    if (!seen.insert(response.text).second) continue;
    Provenance p;
    p.variant = Variant::degrade;
    p.op = std::string(kNames[op]);
    p.seed = sub;
    out.push_back({std::move(response), std::move(p)});
  }
  return out;
}

std::string LocalDegrader::fingerprint() const {
  std::string blob = "local_degrader";
  for (const auto& d : donors_) {
    blob.push_back('\x1f');
    blob += d.text;
  }
  return sha256_hex(blob);
}

std::vector<Probe> RemoteDegrader::generate(const RlSample& sample, std::size_t n,
                                            std::uint64_t seed) const {
  std::vector<Probe> out;
  for (auto& text : generator_.generate_worse(sample.instruction, sample.golden, n)) {
    if (tokenize(text).len() == 0) continue;
    Provenance p;
    p.variant = Variant::degrade;
    p.op = "remote";
    p.seed = seed;
    out.push_back({Response::from_text(std::move(text)), std::move(p)});
  }
  return out;
}

ProbeSet build_degraded_set(const RlSample& sample, const Degrader& generator, std::size_t n,
                            std::uint64_t seed) {
  ProbeSet set;
  set.sample_id = sample.id();
  set.variant = Variant::degrade;
  set.target_size = n;
  std::unordered_set<std::string> seen{sample.golden.text};
  for (auto& p : generator.generate(sample, n, mix_seed(seed, sample.id()))) {
    if (set.probes.size() >= n) break;
    if (!seen.insert(p.response.text).second) continue;
    set.probes.push_back(std::move(p));
  }
  set.shortfall = n > set.probes.size() ? n - set.probes.size() : 0;
  return set;
}

// ---------------------------------------------------------------------------
// Synonym sources

LexiconSynonyms::LexiconSynonyms(std::map<std::string, std::vector<std::string>> entries)
    : entries_(std::move(entries)) {}

LexiconSynonyms LexiconSynonyms::parse(const std::vector<std::string>& lines,
                                       const std::string& source) {
  std::map<std::string, std::vector<std::string>> entries;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(i + 1);
    try {
      const auto j = json::parse(lines[i]);
      auto& list = entries[j.at("word").get<std::string>()];
      for (const auto& s : j.at("synonyms")) {
        auto syn = s.get<std::string>();
        if (std::find(list.begin(), list.end(), syn) == list.end()) list.push_back(std::move(syn));
      }
    } catch (const json::exception& e) {
      throw DataError(where + ": malformed lexicon entry (" + e.what() + ")");
    }
  }
  return LexiconSynonyms(std::move(entries));
}

LexiconSynonyms LexiconSynonyms::load(const std::filesystem::path& path) {
  return parse(read_lines(path), path.string());
}

std::vector<std::string> LexiconSynonyms::synonyms(const std::string& word) const {
  auto it = entries_.find(word);
  return it == entries_.end() ? std::vector<std::string>{} : it->second;
}

std::string LexiconSynonyms::to_jsonl() const {
  std::string out;
  for (const auto& [word, syns] : entries_) {
    out += json{{"word", word}, {"synonyms", syns}}.dump();
    out += '\n';
  }
  return out;
}

std::string LexiconSynonyms::fingerprint() const { return sha256_hex("lexicon\n" + to_jsonl()); }

EmbeddingNeighborSynonyms::EmbeddingNeighborSynonyms(const std::vector<std::string>& vocabulary,
                                                     const EmbeddingBackend& embedding,
                                                     std::size_t top_k, double min_cosine) {
  std::vector<std::string> words = vocabulary;
  std::sort(words.begin(), words.end());
  words.erase(std::unique(words.begin(), words.end()), words.end());
  std::vector<std::vector<double>> vecs;
  std::vector<std::string> kept;
  for (const auto& w : words) {
    auto v = embedding.embed(w);
    if (is_zero(v)) continue;
    vecs.push_back(std::move(v));
    kept.push_back(w);
  }
  for (std::size_t i = 0; i < kept.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < kept.size(); ++j) {
      if (i == j) continue;
      const double c = cosine(vecs[i], vecs[j]);
      if (c >= min_cosine) scored.emplace_back(c, j);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    if (scored.size() > top_k) scored.resize(top_k);
    if (scored.empty()) continue;
    auto& list = neighbors_[kept[i]];
    for (const auto& [c, j] : scored) list.push_back(kept[j]);
  }
  std::string blob = "embedding_neighbors:" + embedding.fingerprint() + ":" + std::to_string(top_k) +
                     ":" + std::to_string(min_cosine);
  for (const auto& [w, ns] : neighbors_) {
    blob += "\n" + w;
    for (const auto& n : ns) blob += "\x1f" + n;
  }
  fingerprint_ = sha256_hex(blob);
}

std::vector<std::string> EmbeddingNeighborSynonyms::synonyms(const std::string& word) const {
  auto it = neighbors_.find(word);
  return it == neighbors_.end() ? std::vector<std::string>{} : it->second;
}

// ---------------------------------------------------------------------------
// Adversarial attack

std::vector<std::vector<std::string>> substitution_candidates(
    const std::vector<std::string>& tokens, const SynonymSource& synonyms) {
  std::vector<std::vector<std::string>> out(tokens.size());
  std::unordered_map<std::string, std::vector<std::string>> memo;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    auto it = memo.find(tokens[i]);
    if (it == memo.end()) {
      std::vector<std::string> cands;
      for (const auto& s : synonyms.synonyms(tokens[i])) {
        auto toks = tokenize(s).tokens;
        if (toks.size() != 1 || toks[0] == tokens[i]) continue;
        if (std::find(cands.begin(), cands.end(), toks[0]) == cands.end()) cands.push_back(toks[0]);
      }
      it = memo.emplace(tokens[i], std::move(cands)).first;
    }
    out[i] = it->second;
  }
  return out;
}

namespace {

class AttackState {
 public:
  AttackState(const RlSample& sample, const RewardBackend& reward)
      : instruction_(sample.instruction), reward_(reward) {}

  double eval(const std::vector<std::string>& tokens) {
    auto r = Response::from_tokens(tokens);
    auto it = cache_.find(r.text);
    if (it != cache_.end()) return it->second;
    const double s = reward_score(reward_, instruction_, r);
    cache_.emplace(std::move(r.text), s);
    return s;
  }

  double eval_with(std::vector<std::string>& tokens, std::size_t pos, const std::string& tok) {
    std::string saved = std::move(tokens[pos]);
    tokens[pos] = tok;
    const double s = eval(tokens);
    tokens[pos] = std::move(saved);
    return s;
  }

 private:
  const Instruction& instruction_;
  const RewardBackend& reward_;
  std::unordered_map<std::string, double> cache_;
};

struct Trajectory {
  std::vector<std::string> tokens;
  std::vector<Edit> edits;
};

struct BestEdit {
  std::size_t position = 0;
  std::string replacement;
  double gain = -std::numeric_limits<double>::infinity();
  bool found = false;
};

BestEdit best_at(AttackState& st, std::vector<std::string>& cur, double cur_score, std::size_t pos,
                 const std::vector<std::string>& cands) {
  BestEdit best;
  for (const auto& c : cands) {
    const double g = st.eval_with(cur, pos, c) - cur_score;
    if (!best.found || g > best.gain) {
      best = {pos, c, g, true};
    }
  }
  return best;
}

}  // namespace

ProbeSet build_adversarial_set(const RlSample& sample, const RewardBackend& reward,
                               const SynonymSource* synonyms, const AttackConfig& config,
                               std::uint64_t seed) {
  if (!synonyms) throw ConfigError("adversarial probes need a synonym source");
  ProbeSet set;
  set.sample_id = sample.id();
  set.variant = Variant::adversarial;
  set.target_size = config.n_probes;
  if (config.n_probes == 0) return set;

  const auto& golden = sample.golden.tokens.tokens;
  const std::size_t L = golden.size();
  const std::string unk(kUnkToken);
  AttackState st(sample, reward);
  const double base = st.eval(golden);
  std::unordered_set<std::string> seen{sample.golden.text};

  auto emit = [&](const std::vector<std::string>& tokens, const std::vector<Edit>& edits,
                  int restart) {
    auto r = Response::from_tokens(tokens);
    if (!seen.insert(r.text).second) return false;
    Provenance p;
    p.variant = Variant::adversarial;
    p.edits = edits;
    p.iterations = static_cast<int>(edits.size());
    p.restart = restart;
    set.probes.push_back({std::move(r), std::move(p)});
    return true;
  };

  if (L < 2) {
    std::vector<std::string> t = golden;
    t[0] = unk;
    emit(t, {Edit{0, golden[0], unk, st.eval(t) - base}}, 0);
    set.shortfall = config.n_probes - set.probes.size();
    return set;
  }

  const auto cands = substitution_candidates(golden, *synonyms);
  const std::size_t budget =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(config.max_replace_frac * L)));
  const std::uint64_t base_seed = mix_seed(seed, sample.id());
  std::size_t idle = 0;

  for (std::size_t restart = 0; restart < config.max_restarts && set.probes.size() < config.n_probes;
       ++restart) {
    Rng rng(mix_seed(base_seed, restart));
    std::vector<std::size_t> eligible;
    for (std::size_t i = 0; i < L; ++i) {
      if (restart == 0 || rng.bernoulli(config.restart_keep)) eligible.push_back(i);
    }
    if (eligible.empty()) eligible.push_back(rng.below(L));

    std::vector<std::string> cur = golden;
    double cur_score = base;
    std::vector<bool> edited(L, false);
    std::vector<Trajectory> states;

    auto apply = [&](const BestEdit& b) {
      cur[b.position] = b.replacement;
      edited[b.position] = true;
      cur_score = st.eval(cur);
      auto edits = states.empty() ? std::vector<Edit>{} : states.back().edits;
      edits.push_back(Edit{b.position, golden[b.position], b.replacement, b.gain});
      states.push_back({cur, std::move(edits)});
    };

    if (restart == 0) {
      while (states.size() < budget && !(cur_score > base)) {
        BestEdit best;
        for (auto i : eligible) {
          if (edited[i]) continue;
          auto b = best_at(st, cur, cur_score, i, cands[i]);
          if (b.found && (!best.found || b.gain > best.gain)) best = std::move(b);
        }
        if (!best.found || !(best.gain > 0.0)) break;
        apply(best);
      }
    } else {
      std::vector<double> saliency, gain;
      for (auto i : eligible) {
        saliency.push_back(base - st.eval_with(cur, i, unk));
        auto b = best_at(st, cur, cur_score, i, cands[i]);
        gain.push_back(b.found ? b.gain : 0.0);
      }
      const double mx = *std::max_element(saliency.begin(), saliency.end());
      double z = 0.0;
      for (double s : saliency) z += std::exp(s - mx);
      std::vector<std::size_t> order(eligible.size());
      std::iota(order.begin(), order.end(), 0);
      std::vector<double> priority(eligible.size());
      for (std::size_t k = 0; k < eligible.size(); ++k) {
        priority[k] = gain[k] * std::exp(saliency[k] - mx) / z;
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return priority[a] > priority[b]; });
      for (auto k : order) {
        if (states.size() >= budget || cur_score > base) break;
        const auto i = eligible[k];
        auto b = best_at(st, cur, cur_score, i, cands[i]);
        if (b.found && b.gain > 0.0) apply(b);
      }
    }

    if (states.empty()) {
      std::size_t pos = eligible[rng.below(eligible.size())];
      if (restart == 0) {
        double best_sal = -std::numeric_limits<double>::infinity();
        for (auto i : eligible) {
          const double sal = base - st.eval_with(cur, i, unk);
          if (sal > best_sal) {
            best_sal = sal;
            pos = i;
          }
        }
      }
      std::vector<std::string> t = golden;
      t[pos] = unk;
      states.push_back({t, {Edit{pos, golden[pos], unk, st.eval(t) - base}}});
    }

    bool added = false;
    for (const auto& s : states) {
      if (set.probes.size() >= config.n_probes) break;
      added |= emit(s.tokens, s.edits, static_cast<int>(restart));
    }
    idle = added ? 0 : idle + 1;
    if (idle >= config.patience) break;
  }
  set.shortfall = config.n_probes > set.probes.size() ? config.n_probes - set.probes.size() : 0;
  return set;
}

}  // namespace seam
