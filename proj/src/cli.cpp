#include "seam/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <iostream>
#include <memory>
#include <optional>

#include "CLI11.hpp"
#include "seam/error.hpp"
#include "seam/experiments.hpp"
#include "seam/hashing.hpp"
#include "seam/parallel.hpp"
#include "seam/remote.hpp"
#include "seam/svg.hpp"

namespace seam {

namespace fs = std::filesystem;

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e)) return 3;
  if (dynamic_cast<const BackendError*>(&e)) return 4;
  return 1;
}

json error_json(const std::exception& e) {
  static const char* kTypes[] = {"", "internal", "config", "data", "backend"};
  return json{{"error", {{"type", kTypes[exit_code_for(e)]}, {"message", e.what()}}}};
}

fs::path summary_path_for(const fs::path& report_jsonl) {
  return report_jsonl.parent_path() / (report_jsonl.stem().string() + ".summary.json");
}

namespace {

// Writes outputs atomically and collects them into the command manifest.
class Outputs {
 public:
  Outputs(const RunConfig& config, std::string command)
      : config_(config), command_(std::move(command)), fingerprint_(config_fingerprint(config)) {}

  const std::string& fingerprint() const { return fingerprint_; }

  void write(const fs::path& path, const std::string& content) {
    atomic_write(path, content);
    record(path, content);
  }

  void write_json(const fs::path& path, json j) {
    j["config_fingerprint"] = fingerprint_;
    write(path, j.dump(2) + "\n");
  }

  /// Registers a file that a library routine already wrote.
  void adopt(const fs::path& path) { record(path, read_file(path)); }

  json finish(json extra = json::object()) {
    json cfg = to_json(config_);
    cfg.erase("concurrency");
    json m{{"command", command_}, {"config_fingerprint", fingerprint_}, {"config", std::move(cfg)},
           {"files", files_}};
    for (auto& [k, v] : extra.items()) m[k] = v;
    atomic_write(config_.paths.out / "manifests" / (command_ + ".json"), m.dump(2) + "\n");
    return m;
  }

 private:
  void record(const fs::path& path, const std::string& content) {
    files_[path.lexically_normal().generic_string()] = sha256_hex(content);
  }

  const RunConfig& config_;
  std::string command_;
  std::string fingerprint_;
  json files_ = json::object();
};

RemoteConfig remote_config(const RunConfig& c, const std::string& url) {
  RemoteConfig r;
  r.base_url = url;
  r.timeout_ms = c.backends.timeout_ms;
  r.max_attempts = c.backends.max_attempts;
  r.max_in_flight = c.concurrency;
  return r;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw DataError(std::string(what) + " not found: " + p.string());
}

NgramPolicy load_policy_file(const fs::path& p) {
  require_file(p, "policy model");
  return NgramPolicy::from_json(load_model_json(p));
}

LinearReward load_reward_file(const fs::path& p) {
  require_file(p, "reward model");
  return LinearReward::from_json(load_model_json(p));
}

std::vector<Variant> parse_variants(const RunConfig& c, const std::string& arg) {
  if (arg.empty()) return c.variants;
  if (arg == "all") return {Variant::contrast, Variant::degrade, Variant::adversarial};
  return {variant_from_string(arg)};
}

bool wants(const std::vector<Variant>& vs, Variant v) {
  return std::find(vs.begin(), vs.end(), v) != vs.end();
}

// Backends and probe machinery for scoring commands.
struct Scoring {
  std::unique_ptr<PolicyBackend> policy;
  std::unique_ptr<RewardBackend> reward;
  std::unique_ptr<EmbeddingBackend> embedding;
  std::unique_ptr<Degrader> degrader;
  std::unique_ptr<SynonymSource> synonyms;
  SftCorpus sft;
  std::unique_ptr<ContrastIndex> contrast;
  RlCorpus rl;

  SamplerSuite suite(const RunConfig& c) const {
    SamplerSuite s;
    s.contrast = contrast.get();
    s.contrast_config = c.samplers.contrast;
    s.degrader = degrader.get();
    s.degrade_n = c.samplers.degrade_n;
    s.synonyms = synonyms.get();
    s.attack = c.samplers.attack;
    s.seed = c.seed;
    return s;
  }
};

Scoring make_scoring(const RunConfig& c, const std::vector<Variant>& variants, bool need_policy) {
  Scoring s;
  const NgramPolicy* local = nullptr;
  if (need_policy) {
    if (!c.backends.policy_url.empty()) {
      s.policy = std::make_unique<RemotePolicy>(remote_config(c, c.backends.policy_url));
    } else {
      auto p = std::make_unique<NgramPolicy>(load_policy_file(c.paths.policy_path()));
      local = p.get();
      s.policy = std::move(p);
    }
  }
  if (!c.backends.reward_url.empty()) {
    s.reward = std::make_unique<RemoteReward>(remote_config(c, c.backends.reward_url));
  } else {
    s.reward = std::make_unique<LinearReward>(load_reward_file(c.paths.reward_path()));
  }
  if (!c.backends.embed_url.empty()) {
    s.embedding = std::make_unique<RemoteEmbedding>(remote_config(c, c.backends.embed_url),
                                                    c.samplers.embedding_dim);
  } else {
    s.embedding = std::make_unique<HashEmbedding>(c.samplers.embedding_dim);
  }
  s.rl = load_rl(c.paths.rl_path());
  const bool need_sft = wants(variants, Variant::contrast) ||
                        (wants(variants, Variant::degrade) && c.backends.generator_url.empty());
  if (need_sft) s.sft = load_sft(c.paths.sft_path());
  if (wants(variants, Variant::contrast)) s.contrast = std::make_unique<ContrastIndex>(s.sft, *s.embedding);
  if (wants(variants, Variant::degrade)) {
    if (!c.backends.generator_url.empty()) {
      s.degrader = std::make_unique<RemoteDegrader>(remote_config(c, c.backends.generator_url));
    } else {
      std::vector<Response> donors;
      for (const auto& e : s.sft) donors.push_back(e.golden);
      s.degrader = std::make_unique<LocalDegrader>(std::move(donors));
    }
  }
  if (wants(variants, Variant::adversarial)) {
    const fs::path lex = c.paths.lexicon_path();
    if (fs::exists(lex)) {
      s.synonyms = std::make_unique<LexiconSynonyms>(LexiconSynonyms::load(lex));
    } else if (local) {
      s.synonyms = std::make_unique<EmbeddingNeighborSynonyms>(local->vocab().words(), *s.embedding);
    } else {
      throw ConfigError("adversarial probes need a lexicon (" + lex.string() + " not found)");
    }
  }
  return s;
}

SeamReport load_scores(const RunConfig& c) {
  const fs::path p = c.paths.report_path();
  require_file(p, "scores report");
  require_file(summary_path_for(p), "scores summary");
  return load_report(p, summary_path_for(p));
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& s : cells) {
    if (!first) out += ',';
    out += s;
    first = false;
  }
  return out + "\n";
}

// ---------------------------------------------------------------------------
// lab

json lab_payload(const RunConfig& c, const std::string& experiment, Outputs& outs, fs::path dir) {
  const std::size_t workers = c.concurrency;
  if (experiment == "saturation") {
    const auto world = generate_world(c.world);
    const auto sat = saturation_sweep(world, c.ladder, c.rl, workers);
    std::string csv = "pm_size,rm_size,q_pm\n";
    for (std::size_t i = 0; i < sat.pm_sizes.size(); ++i) {
      for (std::size_t j = 0; j < sat.rm_sizes.size(); ++j) {
        csv += csv_row({std::to_string(sat.pm_sizes[i]), std::to_string(sat.rm_sizes[j]),
                        format_number(sat.grid[i][j])});
      }
    }
    outs.write(dir / "saturation.csv", csv);
    return to_json(sat);
  }
  if (experiment == "crossval") {
    const auto world = generate_world(c.world);
    const auto train = cv_training_sets(world, c.seed);
    const auto pm = train_policy(train.d_p, c.ngram);
    const auto rm = train_reward(train.d_r, c.reward_train);
    return to_json(cross_validate(pm, rm, world, c.seed, c.lab.eval_samples));
  }
  const auto lab = prepare_lab(c.world, c.reward_train);
  const auto& w = lab->world;
  if (experiment == "mismatch") {
    const auto post = rl_improve(lab->sft, lab->rm, w.d_rl, c.rl);
    const std::size_t n = std::min(c.lab.mismatch_n, w.eval.size());
    const auto mm = mismatch_rate(lab->sft, post, lab->rm, w.oracle, w.eval, n, c.seed);
    std::size_t counted = 0;
    for (const auto& p : mm.pairs) counted += p.counted ? 1 : 0;
    std::string csv = "sample_id,reward_a,reward_b,quality_a,quality_b,counted,mismatch\n";
    for (const auto& p : mm.pairs) {
      csv += csv_row({p.sample_id, format_number(p.reward_a), format_number(p.reward_b),
                      format_number(p.quality_a), format_number(p.quality_b), p.counted ? "1" : "0",
                      p.mismatch ? "1" : "0"});
    }
    outs.write(dir / "mismatch.csv", csv);
    return json{{"rate", mm.rate}, {"pairs", mm.pairs.size()}, {"counted", counted}};
  }
  if (experiment == "ordering") {
    const auto report = lab_report(*lab, {Variant::contrast, Variant::degrade, Variant::adversarial},
                                   SeamMode::log, workers);
    return to_json(likelihood_ordering(report));
  }
  const auto report = lab_report(*lab, {Variant::adversarial}, c.mode, workers);
  if (experiment == "less-is-more") {
    auto j = to_json(less_is_more(*lab, report, c.rl, c.fraction, c.seed, c.lab.eval_samples));
    j["planted_recall"] = planted_recall(report, w, c.fraction);
    return j;
  }
  if (experiment == "sweep") {
    const auto fs = filter_sweep(*lab, report, c.rl, c.lab.fractions, c.lab.eval_samples, workers);
    std::string csv = "fraction,q_pm\n";
    for (std::size_t i = 0; i < fs.fractions.size(); ++i) {
      csv += csv_row({format_number(fs.fractions[i]), format_number(fs.quality[i])});
    }
    outs.write(dir / "sweep.csv", csv);
    return to_json(fs);
  }
  if (experiment == "overlap") {
    if (c.ladder.rm_sizes.size() < 2) throw ConfigError("overlap needs two ladder rm_sizes");
    return to_json(overlap_experiment(*lab, c.ladder.rm_sizes.front(), c.ladder.rm_sizes.back(),
                                      c.fraction, c.seed, workers));
  }
  if (experiment == "augmentation") {
    return to_json(augmentation_effect(*lab, report, c.fraction, c.augment.per_target, c.seed,
                                       c.reward_train));
  }
  throw ConfigError("unknown lab experiment '" + experiment + "'");
}

// ---------------------------------------------------------------------------
// report

struct ReportInputs {
  std::vector<fs::path> scores;
  std::vector<fs::path> lab;
};

ReportInputs collect_inputs(const RunConfig& c, const std::vector<fs::path>& given) {
  ReportInputs in;
  if (!given.empty()) {
    for (const auto& p : given) {
      require_file(p, "report input");
      (p.extension() == ".jsonl" ? in.scores : in.lab).push_back(p);
    }
    return in;
  }
  if (fs::exists(c.paths.report_path())) in.scores.push_back(c.paths.report_path());
  const fs::path lab = c.paths.out / "lab";
  if (fs::is_directory(lab)) {
    for (const auto& e : fs::directory_iterator(lab)) {
      if (e.path().extension() == ".json") in.lab.push_back(e.path());
    }
    std::sort(in.lab.begin(), in.lab.end());
  }
  if (in.scores.empty() && in.lab.empty()) throw DataError("report: no inputs found");
  return in;
}

void chart(Outputs& outs, const fs::path& dir, const std::string& name, const ChartSpec& spec,
           const std::vector<Series>& series, bool line) {
  outs.write(dir / (name + ".csv"), series_csv(series));
  outs.write(dir / (name + ".svg"), line ? line_chart_svg(spec, series) : scatter_chart_svg(spec, series));
}

json report_scores(const fs::path& path, Outputs& outs, const fs::path& dir) {
  const auto report = load_report(path, summary_path_for(path));
  const std::string stem = path.stem().string();
  std::vector<Series> scatter;
  for (auto v : report.variants) {
    Series s{to_string(v), {}, {}};
    for (const auto& r : report.records) {
      if (r.variant != v || !r.ok() || r.probe_scores.empty()) continue;
      double ll = 0.0, eps = 0.0;
      for (const auto& p : r.probe_scores) {
        ll += p.norm_loglik;
        eps += p.epsilon;
      }
      const double n = static_cast<double>(r.probe_scores.size());
      s.x.push_back(ll / n);
      s.y.push_back(eps / n);
    }
    scatter.push_back(std::move(s));
  }
  chart(outs, dir, stem + "_likelihood_vs_misjudgment",
        {"Probe likelihood vs misjudgment", "mean normalized log-likelihood", "mean misjudgment"},
        scatter, false);
  std::string csv = "sample_id,variant,score,golden_reward,probes,shortfall,error\n";
  for (const auto& r : report.records) {
    csv += csv_row({r.sample_id, to_string(r.variant), format_number(r.score), format_number(r.golden_reward),
                    std::to_string(r.probe_scores.size()), std::to_string(r.shortfall),
                    r.ok() ? "" : "1"});
  }
  outs.write(dir / (stem + "_records.csv"), csv);
  return report_summary(report);
}

json report_lab(const fs::path& path, Outputs& outs, const fs::path& dir) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": malformed lab output (" + e.what() + ")");
  }
  if (!j.contains("experiment") || !j.contains("result")) {
    throw DataError(path.string() + ": not a lab output");
  }
  const auto experiment = j.at("experiment").get<std::string>();
  const auto& r = j.at("result");
  try {
    if (experiment == "sweep") {
      Series s{"filtered", r.at("fractions").get<std::vector<double>>(), r.at("quality").get<std::vector<double>>()};
      Series full{"full", {s.x.front(), s.x.back()}, {r.at("q_full").get<double>(), r.at("q_full").get<double>()}};
      chart(outs, dir, "sweep", {"Post-RL quality by filter fraction", "fraction removed", "Q_PM"},
            {s, full}, true);
    } else if (experiment == "saturation") {
      const auto rm = r.at("rm_sizes").get<std::vector<double>>();
      const auto pm = r.at("pm_sizes").get<std::vector<std::size_t>>();
      const auto grid = r.at("grid").get<std::vector<std::vector<double>>>();
      std::vector<Series> series;
      for (std::size_t i = 0; i < pm.size(); ++i) series.push_back({"pm " + std::to_string(pm[i]), rm, grid.at(i)});
      chart(outs, dir, "saturation", {"Post-RL quality by reward model size", "RM training pairs", "Q_PM"},
            series, true);
    }
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": malformed " + experiment + " result (" + e.what() + ")");
  }
  return j;
}

}  // namespace

// ---------------------------------------------------------------------------
// commands

json cmd_synth(const RunConfig& c) {
  Outputs outs(c, "synth");
  const auto world = generate_world(c.world);
  const fs::path dir = c.paths.world_dir();
  save_world(world, dir);
  for (const char* name : {"d_p.jsonl", "d_r.jsonl", "d_rl.jsonl", "eval.jsonl", "pref_test.jsonl",
                           "planted_pairs.jsonl", "lexicon.jsonl"}) {
    outs.adopt(dir / name);
  }
  json meta = json::parse(read_file(dir / "world.json"));
  outs.write_json(dir / "world.json", std::move(meta));
  return outs.finish({{"world_fingerprint", world.fingerprint()},
                      {"sizes",
                       {{"d_p", world.d_p.size()},
                        {"d_r", world.d_r.size()},
                        {"d_rl", world.d_rl.size()},
                        {"planted", world.planted.size()}}}});
}

json cmd_train(const RunConfig& c, const std::string& which) {
  if (which != "policy" && which != "reward" && which != "all") {
    throw ConfigError("train: expected policy, reward or all, got '" + which + "'");
  }
  Outputs outs(c, "train-" + which);
  json extra = json::object();
  if (which != "reward") {
    const auto policy = train_policy(load_sft(c.paths.sft_path()), c.ngram);
    outs.write_json(c.paths.policy_path(), policy.to_json());
    extra["policy_fingerprint"] = policy.fingerprint();
  }
  if (which != "policy") {
    const auto result = train_reward_with_history(load_preference(c.paths.preference_path()), c.reward_train);
    json j = result.model.to_json();
    j["epoch_losses"] = result.epoch_losses;
    outs.write_json(c.paths.reward_path(), std::move(j));
    extra["reward_fingerprint"] = result.model.fingerprint();
    extra["final_loss"] = result.epoch_losses.back();
  }
  return outs.finish(std::move(extra));
}

json cmd_score(const RunConfig& c, const std::string& variant) {
  const auto variants = parse_variants(c, variant);
  Outputs outs(c, "score");
  const auto s = make_scoring(c, variants, true);
  ScoreConfig sc;
  sc.variants = variants;
  sc.mode = c.mode;
  sc.concurrency = c.concurrency;
  sc.strict = c.strict.value_or(false);
  sc.cache_dir = c.paths.cache;
  sc.config_fingerprint = outs.fingerprint();
  std::vector<ProbeSet> probes;
  const auto report = score_dataset(*s.policy, *s.reward, s.rl, s.suite(c), sc, &probes);
  std::size_t failed = 0;
  for (const auto& r : report.records) failed += r.ok() ? 0 : 1;
  if (failed > 0 && failed == report.records.size()) {
    throw BackendError("no sample could be scored; first error: " + report.records.front().error);
  }
  const fs::path p = c.paths.report_path();
  outs.write(p, report_to_jsonl(report));
  outs.write(summary_path_for(p), report_summary(report).dump(2) + "\n");
  std::vector<json> rows;
  for (const auto& set : probes) rows.push_back(to_json(set));
  outs.write(p.parent_path() / (p.stem().string() + ".probes.jsonl"), to_jsonl(rows));
  return outs.finish({{"records", report.records.size()}, {"failed", failed}});
}

json cmd_filter(const RunConfig& c) {
  Outputs outs(c, "filter");
  const auto report = load_scores(c);
  const auto rl = load_rl(c.paths.rl_path());
  const auto out = filter_bottom(report, rl, c.fraction, c.filter_variant, report.mode);
  outs.write(c.paths.out / "filtered.jsonl", corpus_to_jsonl(out.kept));
  outs.write_json(c.paths.out / "selection.json", to_json(out.selection));
  return outs.finish({{"kept", out.kept.size()}, {"removed", out.selection.removed.size()}});
}

json cmd_augment(const RunConfig& c) {
  Outputs outs(c, "augment");
  const auto report = load_scores(c);
  const auto rl = load_rl(c.paths.rl_path());
  const auto sft = load_sft(c.paths.sft_path());
  const HashEmbedding local(c.samplers.embedding_dim);
  std::unique_ptr<RemoteEmbedding> remote;
  if (!c.backends.embed_url.empty()) {
    remote = std::make_unique<RemoteEmbedding>(remote_config(c, c.backends.embed_url), c.samplers.embedding_dim);
  }
  const ContrastIndex index(sft, remote ? static_cast<const EmbeddingBackend&>(*remote) : local);
  AugmentConfig ac = c.augment;
  ac.retrieval = c.samplers.contrast;
  const auto targets = select_augmentation_targets(report, c.fraction, c.filter_variant, report.mode);
  const auto sets = build_augmentation_sets(targets, rl, index, ac);
  outs.write(c.paths.out / "augment_pm.jsonl", corpus_to_jsonl(sets.pm_additions));
  outs.write(c.paths.out / "augment_rm.jsonl", corpus_to_jsonl(sets.rm_additions));
  json shortfalls = json::array();
  for (const auto& s : sets.shortfalls) {
    shortfalls.push_back({{"target_id", s.target_id}, {"pm_missing", s.pm_missing}, {"rm_missing", s.rm_missing}});
  }
  outs.write_json(c.paths.out / "augment.json", {{"targets", sets.targets}, {"shortfalls", shortfalls},
                                                  {"per_target", c.augment.per_target},
                                                  {"pm", to_string(c.augment.pm)}});
  return outs.finish({{"targets", sets.targets.size()},
                      {"pm_additions", sets.pm_additions.size()},
                      {"rm_additions", sets.rm_additions.size()}});
}

json cmd_probe(const RunConfig& c) {
  Outputs outs(c, "probe");
  const auto s = make_scoring(c, {Variant::adversarial}, false);
  struct Row {
    bool success = false;
    double mean_eps = 0.0, max_eps = 0.0;
    json edits;
    ProbeSet set;
  };
  std::vector<Row> rows(s.rl.size());
  const bool strict = c.strict.value_or(false);
  std::vector<std::string> errors(s.rl.size());
  parallel_for(s.rl.size(), c.concurrency, [&](std::size_t i) {
    const auto& sample = s.rl[i];
    try {
      Row row;
      row.set = build_adversarial_set(sample, *s.reward, s.synonyms.get(), c.samplers.attack,
                                      mix_seed(c.seed, sample.id()));
      const double golden = reward_score(*s.reward, sample.instruction, sample.golden);
      std::size_t best = 0;
      for (std::size_t k = 0; k < row.set.probes.size(); ++k) {
        const double e = misjudgment_from_scores(
            golden, reward_score(*s.reward, sample.instruction, row.set.probes[k].response));
        row.mean_eps += e;
        if (e > row.max_eps) {
          row.max_eps = e;
          best = k;
        }
      }
      if (!row.set.probes.empty()) row.mean_eps /= static_cast<double>(row.set.probes.size());
      row.success = row.max_eps > 0.0;
      row.edits = json::array();
      if (!row.set.probes.empty()) {
        for (const auto& e : row.set.probes[best].provenance.edits) {
          row.edits.push_back({{"position", e.position}, {"from", e.from}, {"to", e.to}, {"gain", e.gain}});
        }
      }
      rows[i] = std::move(row);
    } catch (const BackendError& e) {
      if (strict) throw BackendError(sample.id() + ": " + e.what());
      errors[i] = e.what();
    }
  });
  std::vector<json> lines;
  std::vector<json> sets;
  std::size_t ok = 0, success = 0;
  double mean_eps = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    json line{{"sample_id", s.rl[i].id()}};
    if (!errors[i].empty()) {
      line["error"] = errors[i];
    } else {
      ++ok;
      success += rows[i].success ? 1 : 0;
      mean_eps += rows[i].mean_eps;
      line.update({{"success", rows[i].success}, {"mean_epsilon", rows[i].mean_eps},
                   {"max_epsilon", rows[i].max_eps}, {"probes", rows[i].set.probes.size()},
                   {"edits", rows[i].edits}});
      sets.push_back(to_json(rows[i].set));
    }
    lines.push_back(std::move(line));
  }
  const double rate = ok ? static_cast<double>(success) / static_cast<double>(ok) : 0.0;
  if (ok) mean_eps /= static_cast<double>(ok);
  outs.write(c.paths.out / "probe" / "samples.jsonl", to_jsonl(lines));
  outs.write(c.paths.out / "probe" / "probes.jsonl", to_jsonl(sets));
  outs.write_json(c.paths.out / "probe" / "summary.json",
                  {{"samples", rows.size()}, {"scored", ok}, {"attack_success_rate", rate},
                   {"mean_epsilon", mean_eps}, {"reward_fingerprint", s.reward->fingerprint()}});
  return outs.finish({{"attack_success_rate", rate}, {"mean_epsilon", mean_eps}});
}

json cmd_lab(const RunConfig& c, const std::string& experiment) {
  if (!c.strict.value_or(true)) throw ConfigError("lab experiments always run strict");
  Outputs outs(c, "lab-" + experiment);
  const fs::path dir = c.paths.out / "lab";
  json result = lab_payload(c, experiment, outs, dir);
  outs.write_json(dir / (experiment + ".json"), {{"experiment", experiment}, {"result", result}});
  return outs.finish({{"result", result}});
}

json cmd_report(const RunConfig& c, const std::vector<fs::path>& inputs) {
  Outputs outs(c, "report");
  const auto in = collect_inputs(c, inputs);
  const fs::path dir = c.paths.out / "report";
  json scores = json::object(), lab = json::object();
  for (const auto& p : in.scores) scores[p.stem().string()] = report_scores(p, outs, dir);
  for (const auto& p : in.lab) {
    auto j = report_lab(p, outs, dir);
    lab[j.at("experiment").get<std::string>()] = j.at("result");
  }
  outs.write_json(dir / "summary.json", {{"scores", scores}, {"lab", lab}});
  return outs.finish();
}

// ---------------------------------------------------------------------------
// command line

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env) {
  CLI::App app{"SEAM: seamlessness scoring for RLHF data", "seam"};
  app.require_subcommand(0, 1);
  app.fallthrough();

  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> concurrency;
  std::optional<std::string> out_dir, world_dir, mode;
  std::optional<double> fraction;
  bool strict = false, lenient = false, print_config = false;

  app.add_option("-c,--config", config_path, "JSON config file");
  app.add_option("--set", sets, "Override a config value: key.path=value")->allow_extra_args(false);
  app.add_option("--seed", seed, "Top-level seed");
  app.add_option("-j,--concurrency", concurrency, "Worker and in-flight request limit");
  app.add_option("-o,--out", out_dir, "Output directory");
  app.add_option("--world", world_dir, "World directory");
  app.add_option("--mode", mode, "SEAM mode: log or prob");
  app.add_option("--fraction", fraction, "Filter / augmentation fraction");
  auto* strict_flag = app.add_flag("--strict", strict, "Fail on any backend error");
  app.add_flag("--lenient", lenient, "Skip samples whose backends fail")->excludes(strict_flag);
  app.add_flag("--print-config", print_config, "Print the effective config and exit");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic world");
  std::string which = "all";
  auto* train = app.add_subcommand("train", "Train the policy and/or reward model");
  train->add_option("which", which, "policy, reward or all");
  std::string variant;
  auto* score = app.add_subcommand("score", "Score the RL corpus");
  score->add_option("variant", variant, "contrast, degrade, adv or all");
  auto* filter = app.add_subcommand("filter", "Drop the lowest-scoring samples");
  auto* augment = app.add_subcommand("augment", "Build augmentation sets");
  auto* probe = app.add_subcommand("probe", "Adversarial robustness report");
  std::string experiment;
  auto* lab = app.add_subcommand("lab", "Run a lab experiment");
  lab->add_option("experiment", experiment, "saturation, mismatch, crossval, less-is-more, ...")->required();
  std::vector<std::string> inputs;
  auto* report = app.add_subcommand("report", "Charts and summaries from outputs");
  report->add_option("inputs", inputs, "Scores JSONL or lab JSON files");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", {{"type", "config"}, {"message", e.what()}}}}.dump() << "\n";
    return 2;
  }

  try {
    json doc = json::object();
    if (!config_path.empty()) {
      try {
        doc = json::parse(read_file(config_path));
      } catch (const json::parse_error& e) {
        throw ConfigError(config_path + ": malformed config (" + e.what() + ")");
      } catch (const DataError& e) {
        throw ConfigError(e.what());
      }
    }
    if (seed) doc["seed"] = *seed;
    if (concurrency) doc["concurrency"] = *concurrency;
    if (out_dir) doc["paths"]["out"] = *out_dir;
    if (world_dir) doc["paths"]["world"] = *world_dir;
    if (mode) doc["seam"]["mode"] = *mode;
    if (fraction) doc["filter"]["fraction"] = *fraction;
    if (strict) doc["strict"] = true;
    if (lenient) doc["strict"] = false;
    for (const auto& s : sets) apply_override(doc, s);
    RunConfig cfg = run_config_from_json(doc);
    apply_environment(cfg, env);

    if (print_config) {
      json j = to_json(cfg);
      j["config_fingerprint"] = config_fingerprint(cfg);
      out << j.dump(2) << "\n";
      return 0;
    }
    json result;
    if (*synth) result = cmd_synth(cfg);
    else if (*train) result = cmd_train(cfg, which);
    else if (*score) result = cmd_score(cfg, variant);
    else if (*filter) result = cmd_filter(cfg);
    else if (*augment) result = cmd_augment(cfg);
    else if (*probe) result = cmd_probe(cfg);
    else if (*lab) result = cmd_lab(cfg, experiment);
    else if (*report) result = cmd_report(cfg, {inputs.begin(), inputs.end()});
    else throw ConfigError("no command given (try --help)");
    result.erase("config");
    out << result.dump(2) << "\n";
    return 0;
  } catch (const std::exception& e) {
    err << error_json(e).dump() << "\n";
    return exit_code_for(e);
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr, [](const char* name) { return std::getenv(name); });
}

}  // namespace seam
