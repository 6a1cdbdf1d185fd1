#include "seam/engine.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "seam/parallel.hpp"

namespace seam {

std::string to_string(SeamMode m) { return m == SeamMode::log ? "log" : "prob"; }

SeamMode seam_mode_from_string(std::string_view s) {
  if (s == "log") return SeamMode::log;
  if (s == "prob") return SeamMode::prob;
  throw ConfigError("unknown seam mode '" + std::string(s) + "'");
}

double misjudgment(const RewardBackend& reward, const Instruction& instruction,
                   const Response& golden, const Response& probe) {
  return misjudgment_from_scores(reward_score(reward, instruction, golden),
                                 reward_score(reward, instruction, probe));
}

double norm_loglik(const PolicyBackend& policy, const Instruction& instruction,
                   const Response& response) {
  const auto lp = policy_logprob(policy, instruction, response);
  const double v = lp.total / static_cast<double>(response.tokens.len());
  if (!std::isfinite(v)) throw BackendError("policy returned a non-finite log-probability");
  return std::min(v, 0.0);
}

double mode_weight(double nll, SeamMode mode) { return mode == SeamMode::log ? nll : std::exp(nll); }

SeamRecord seam_score(const PolicyBackend& policy, const RewardBackend& reward,
                      const RlSample& sample, const ProbeSet& probes, SeamMode mode, bool strict) {
  if (probes.probes.empty()) throw DataError("sample '" + sample.id() + "': probe set is empty");
  SeamRecord rec;
  rec.sample_id = sample.id();
  rec.variant = probes.variant;
  rec.mode = mode;
  rec.shortfall = probes.shortfall;
  rec.out_of_band = probes.out_of_band;
  rec.golden_reward = reward_score(reward, sample.instruction, sample.golden);
  for (std::size_t i = 0; i < probes.probes.size(); ++i) {
    const auto& r = probes.probes[i].response;
    ProbeScore ps;
    ps.probe_index = i;
    try {
      ps.reward = reward_score(reward, sample.instruction, r);
      ps.norm_loglik = norm_loglik(policy, sample.instruction, r);
    } catch (const BackendError& e) {
      if (strict) {
        throw BackendError("probe " + sample.id() + "#" + std::to_string(i) + ": " + e.what());
      }
      ++rec.failed_probes;
      continue;
    }
    ps.epsilon = misjudgment_from_scores(rec.golden_reward, ps.reward);
    ps.term = mode_weight(ps.norm_loglik, mode) * ps.epsilon;
    rec.probe_scores.push_back(ps);
  }
  rec.shortfall += rec.failed_probes;
  if (rec.probe_scores.empty()) {
    rec.error = "no probe could be scored";
    return rec;
  }
  double sum = 0.0;
  for (const auto& ps : rec.probe_scores) sum += ps.term;
  rec.score = sum;
  return rec;
}

// ---------------------------------------------------------------------------

std::string SamplerSuite::fingerprint(const std::vector<Variant>& variants) const {
  json j{{"seed", seed}};
  for (auto v : variants) {
    switch (v) {
      case Variant::contrast:
        if (contrast) {
          j["contrast"] = {{"embedding", contrast->embedding().fingerprint()},
                           {"corpus", corpus_fingerprint(contrast->corpus())},
                           {"k", contrast_config.k},
                           {"lo", contrast_config.lo},
                           {"hi", contrast_config.hi}};
        }
        break;
      case Variant::degrade:
        if (degrader) j["degrade"] = {{"generator", degrader->fingerprint()}, {"n", degrade_n}};
        break;
      case Variant::adversarial:
        if (synonyms) {
          j["adversarial"] = {{"synonyms", synonyms->fingerprint()},
                              {"n", attack.n_probes},
                              {"frac", attack.max_replace_frac},
                              {"restarts", attack.max_restarts},
                              {"keep", attack.restart_keep},
                              {"patience", attack.patience}};
        }
        break;
    }
  }
  return sha256_hex(j.dump());
}

ProbeSet build_probe_set(Variant variant, const RlSample& sample, const RewardBackend& reward,
                         const SamplerSuite& s) {
  switch (variant) {
    case Variant::contrast:
      if (!s.contrast) throw ConfigError("contrast probes need an SFT corpus and an embedding");
      return build_contrast_set(sample, *s.contrast, s.contrast_config);
    case Variant::degrade:
      if (!s.degrader) throw ConfigError("degrade probes need a generator");
      return build_degraded_set(sample, *s.degrader, s.degrade_n, s.seed);
    case Variant::adversarial:
      return build_adversarial_set(sample, reward, s.synonyms, s.attack, s.seed);
  }
  throw ConfigError("unknown variant");
}

namespace {

std::string cache_key(const SeamReport& header, const SamplerSuite* samplers,
                      const std::vector<ProbeSet>* sets) {
  json j{{"format_version", kReportFormatVersion},
         {"config", header.config_fingerprint},
         {"policy", header.policy_fingerprint},
         {"reward", header.reward_fingerprint},
         {"corpus", header.corpus_fingerprint},
         {"mode", to_string(header.mode)}};
  json vs = json::array();
  for (auto v : header.variants) vs.push_back(to_string(v));
  j["variants"] = vs;
  if (samplers) j["samplers"] = samplers->fingerprint(header.variants);
  if (sets) {
    std::string blob;
    for (const auto& s : *sets) blob += to_json(s).dump() + "\n";
    j["probe_sets"] = sha256_hex(blob);
  }
  return sha256_hex(j.dump());
}

SeamReport make_header(const PolicyBackend& policy, const RewardBackend& reward,
                       const RlCorpus& corpus, const ScoreConfig& config) {
  if (config.variants.empty()) throw ConfigError("no probe variant requested");
  SeamReport r;
  r.mode = config.mode;
  r.variants = config.variants;
  r.config_fingerprint = config.config_fingerprint;
  r.policy_fingerprint = policy.fingerprint();
  r.reward_fingerprint = reward.fingerprint();
  r.corpus_fingerprint = corpus_fingerprint(corpus);
  return r;
}

bool try_cache(const ScoreConfig& config, const std::string& key, SeamReport& report,
               std::vector<ProbeSet>* sets) {
  if (config.cache_dir.empty()) return false;
  const auto base = config.cache_dir / key;
  const auto rec_path = std::filesystem::path(base.string() + ".jsonl");
  const auto probe_path = std::filesystem::path(base.string() + ".probes.jsonl");
  if (!std::filesystem::exists(rec_path)) return false;
  if (sets && !std::filesystem::exists(probe_path)) return false;
  try {
    report.records = records_from_jsonl(read_lines(rec_path), rec_path.string());
    if (sets) *sets = load_probe_sets(probe_path);
  } catch (const DataError&) {
    return false;  // unreadable entries are recomputed
  }
  report.from_cache = true;
  return true;
}

void store_cache(const ScoreConfig& config, const std::string& key, const SeamReport& report,
                 const std::vector<ProbeSet>* sets) {
  if (config.cache_dir.empty()) return;
  const auto base = config.cache_dir / key;
  atomic_write(base.string() + ".jsonl", report_to_jsonl(report));
  if (sets) save_probe_sets(base.string() + ".probes.jsonl", *sets);
}

SeamRecord failed_record(const RlSample& sample, Variant v, SeamMode mode, const std::string& why) {
  SeamRecord r;
  r.sample_id = sample.id();
  r.variant = v;
  r.mode = mode;
  r.error = why;
  return r;
}

}  // namespace

SeamReport score_dataset(const PolicyBackend& policy, const RewardBackend& reward,
                         const RlCorpus& corpus, const SamplerSuite& samplers,
                         const ScoreConfig& config, std::vector<ProbeSet>* probe_sets) {
  SeamReport report = make_header(policy, reward, corpus, config);
  const std::string key = cache_key(report, &samplers, nullptr);
  if (try_cache(config, key, report, probe_sets)) return report;

  const std::size_t nv = config.variants.size();
  const std::size_t total = corpus.size() * nv;
  std::vector<SeamRecord> records(total);
  std::vector<ProbeSet> sets(probe_sets ? total : 0);
  parallel_for(total, config.concurrency, [&](std::size_t idx) {
    const auto& sample = corpus[idx / nv];
    const Variant v = config.variants[idx % nv];
    try {
      ProbeSet set = build_probe_set(v, sample, reward, samplers);
      if (set.probes.empty()) {
        records[idx] = failed_record(sample, v, config.mode, "probe set is empty");
        records[idx].shortfall = set.shortfall;
        records[idx].out_of_band = set.out_of_band;
      } else {
        records[idx] = seam_score(policy, reward, sample, set, config.mode, config.strict);
      }
      if (probe_sets) sets[idx] = std::move(set);
    } catch (const BackendError& e) {
      if (config.strict) throw;
      records[idx] = failed_record(sample, v, config.mode, e.what());
      if (probe_sets) sets[idx] = ProbeSet{sample.id(), v, {}, 0, 0, false};
    }
  });
  report.records = std::move(records);
  if (probe_sets) *probe_sets = std::move(sets);
  store_cache(config, key, report, probe_sets);
  return report;
}

SeamReport score_probe_sets(const PolicyBackend& policy, const RewardBackend& reward,
                            const RlCorpus& corpus, const std::vector<ProbeSet>& sets,
                            const ScoreConfig& config) {
  ScoreConfig cfg = config;
  cfg.variants.clear();
  for (const auto& s : sets) {
    if (std::find(cfg.variants.begin(), cfg.variants.end(), s.variant) == cfg.variants.end()) {
      cfg.variants.push_back(s.variant);
    }
  }
  if (cfg.variants.empty()) throw DataError("no probe sets to score");
  SeamReport report = make_header(policy, reward, corpus, cfg);
  const std::string key = cache_key(report, nullptr, &sets);
  if (try_cache(cfg, key, report, nullptr)) return report;

  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < corpus.size(); ++i) by_id.emplace(corpus[i].id(), i);
  for (const auto& s : sets) {
    if (!by_id.count(s.sample_id)) {
      throw DataError("probe set for unknown sample '" + s.sample_id + "'");
    }
  }
  std::vector<SeamRecord> records(sets.size());
  parallel_for(sets.size(), cfg.concurrency, [&](std::size_t i) {
    const auto& sample = corpus[by_id.at(sets[i].sample_id)];
    try {
      if (sets[i].probes.empty()) {
        records[i] = failed_record(sample, sets[i].variant, cfg.mode, "probe set is empty");
        records[i].shortfall = sets[i].shortfall;
      } else {
        records[i] = seam_score(policy, reward, sample, sets[i], cfg.mode, cfg.strict);
      }
    } catch (const BackendError& e) {
      if (cfg.strict) throw;
      records[i] = failed_record(sample, sets[i].variant, cfg.mode, e.what());
    }
  });
  report.records = std::move(records);
  store_cache(cfg, key, report, nullptr);
  return report;
}

// ---------------------------------------------------------------------------
// Persistence

json to_json(const ProbeScore& s) {
  return json{{"probe", s.probe_index},
              {"reward", s.reward},
              {"epsilon", s.epsilon},
              {"norm_loglik", s.norm_loglik},
              {"term", s.term}};
}

json to_json(const SeamRecord& r) {
  json scores = json::array();
  for (const auto& s : r.probe_scores) scores.push_back(to_json(s));
  json j{{"format_version", kReportFormatVersion},
         {"sample_id", r.sample_id},
         {"variant", to_string(r.variant)},
         {"mode", to_string(r.mode)},
         {"score", r.score},
         {"golden_reward", r.golden_reward},
         {"shortfall", r.shortfall},
         {"failed_probes", r.failed_probes},
         {"out_of_band", r.out_of_band},
         {"probe_scores", std::move(scores)}};
  if (!r.ok()) j["error"] = r.error;
  return j;
}

SeamRecord seam_record_from_json(const json& j) {
  try {
    if (j.at("format_version").get<int>() != kReportFormatVersion) {
      throw DataError("unsupported report format_version");
    }
    SeamRecord r;
    r.sample_id = j.at("sample_id").get<std::string>();
    r.variant = variant_from_string(j.at("variant").get<std::string>());
    r.mode = seam_mode_from_string(j.at("mode").get<std::string>());
    r.score = j.at("score").get<double>();
    r.golden_reward = j.at("golden_reward").get<double>();
    r.shortfall = j.at("shortfall").get<std::size_t>();
    r.failed_probes = j.at("failed_probes").get<std::size_t>();
    r.out_of_band = j.at("out_of_band").get<bool>();
    r.error = j.value("error", std::string{});
    for (const auto& s : j.at("probe_scores")) {
      r.probe_scores.push_back(ProbeScore{s.at("probe").get<std::size_t>(), s.at("reward").get<double>(),
                                          s.at("epsilon").get<double>(),
                                          s.at("norm_loglik").get<double>(),
                                          s.at("term").get<double>()});
    }
    return r;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed seam record: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
}

std::string report_to_jsonl(const SeamReport& report) {
  std::string out;
  for (const auto& r : report.records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<SeamRecord> records_from_jsonl(const std::vector<std::string>& lines,
                                           const std::string& source) {
  std::vector<SeamRecord> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (lines[i].find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(i + 1);
    try {
      out.push_back(seam_record_from_json(json::parse(lines[i])));
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  }
  return out;
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

json report_summary(const SeamReport& report) {
  json variants = json::object();
  for (auto v : report.variants) {
    std::vector<double> scores;
    std::size_t failed = 0, shortfall = 0, out_of_band = 0, samples = 0;
    for (const auto& r : report.records) {
      if (r.variant != v) continue;
      ++samples;
      shortfall += r.shortfall;
      out_of_band += r.out_of_band ? 1 : 0;
      if (r.ok()) {
        scores.push_back(r.score);
      } else {
        ++failed;
      }
    }
    json q = json::object();
    if (!scores.empty()) {
      double sum = 0.0;
      for (double s : scores) sum += s;
      q = {{"min", quantile(scores, 0.0)}, {"p10", quantile(scores, 0.1)},
           {"p25", quantile(scores, 0.25)}, {"p50", quantile(scores, 0.5)},
           {"p75", quantile(scores, 0.75)}, {"p90", quantile(scores, 0.9)},
           {"max", quantile(scores, 1.0)}, {"mean", sum / static_cast<double>(scores.size())}};
    }
    variants[to_string(v)] = {{"samples", samples},     {"scored", scores.size()},
                              {"failed", failed},       {"shortfall", shortfall},
                              {"out_of_band", out_of_band}, {"quantiles", std::move(q)}};
  }
  json vs = json::array();
  for (auto v : report.variants) vs.push_back(to_string(v));
  return json{{"format_version", kReportFormatVersion},
              {"mode", to_string(report.mode)},
              {"variants_order", std::move(vs)},
              {"config_fingerprint", report.config_fingerprint},
              {"policy_fingerprint", report.policy_fingerprint},
              {"reward_fingerprint", report.reward_fingerprint},
              {"corpus_fingerprint", report.corpus_fingerprint},
              {"records", report.records.size()},
              {"variants", std::move(variants)}};
}

void save_report(const SeamReport& report, const std::filesystem::path& jsonl,
                 const std::filesystem::path& summary) {
  atomic_write(jsonl, report_to_jsonl(report));
  atomic_write(summary, report_summary(report).dump(2) + "\n");
}

SeamReport load_report(const std::filesystem::path& jsonl, const std::filesystem::path& summary) {
  SeamReport r;
  r.records = records_from_jsonl(read_lines(jsonl), jsonl.string());
  json s;
  try {
    s = json::parse(read_file(summary));
    if (s.at("format_version").get<int>() != kReportFormatVersion) {
      throw DataError(summary.string() + ": unsupported format_version");
    }
    r.mode = seam_mode_from_string(s.at("mode").get<std::string>());
    for (const auto& v : s.at("variants_order")) r.variants.push_back(variant_from_string(v.get<std::string>()));
    r.config_fingerprint = s.at("config_fingerprint").get<std::string>();
    r.policy_fingerprint = s.at("policy_fingerprint").get<std::string>();
    r.reward_fingerprint = s.at("reward_fingerprint").get<std::string>();
    r.corpus_fingerprint = s.at("corpus_fingerprint").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(summary.string() + ": malformed summary (" + e.what() + ")");
  } catch (const ConfigError& e) {
    throw DataError(summary.string() + ": " + e.what());
  }
  return r;
}

}  // namespace seam
