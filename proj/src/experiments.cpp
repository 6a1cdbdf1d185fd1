#include "seam/experiments.hpp"

#include <algorithm>
#include <unordered_set>

#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "seam/parallel.hpp"

namespace seam {

SamplerSuite LabSetup::samplers(std::uint64_t seed) const {
  SamplerSuite s;
  s.contrast = contrast.get();
  s.degrader = degrader.get();
  s.synonyms = &lexicon;
  s.seed = seed;
  return s;
}

std::unique_ptr<LabSetup> prepare_lab(const WorldConfig& config, const RewardTrainConfig& reward) {
  auto world = generate_world(config);
  auto sft = train_policy(world.d_p);
  auto rm = train_reward(world.d_r, reward);
  auto lexicon = world.lexicon();
  std::unique_ptr<LabSetup> lab(new LabSetup{std::move(world), std::move(sft), std::move(rm),
                                             std::move(lexicon), nullptr, nullptr, HashEmbedding(1024)});
  lab->contrast = std::make_unique<ContrastIndex>(lab->world.d_p, lab->embedding);
  std::vector<Response> donors;
  for (const auto& e : lab->world.d_p) donors.push_back(e.golden);
  lab->degrader = std::make_unique<LocalDegrader>(std::move(donors));
  return lab;
}

SeamReport lab_report(const LabSetup& lab, const std::vector<Variant>& variants, SeamMode mode,
                      std::size_t concurrency, std::vector<ProbeSet>* probes,
                      const RewardBackend* reward) {
  ScoreConfig cfg;
  cfg.variants = variants;
  cfg.mode = mode;
  cfg.concurrency = concurrency;
  cfg.strict = true;
  return score_dataset(lab.sft, reward ? *reward : lab.rm, lab.world.d_rl,
                       lab.samplers(lab.world.config.seed), cfg, probes);
}

LikelihoodOrdering likelihood_ordering(const SeamReport& report) {
  double sum[3] = {0, 0, 0};
  std::size_t n[3] = {0, 0, 0};
  for (const auto& r : report.records) {
    if (!r.ok() || r.probe_scores.empty()) continue;
    double s = 0.0;
    for (const auto& p : r.probe_scores) s += p.norm_loglik;
    const auto v = static_cast<std::size_t>(r.variant);
    sum[v] += s / static_cast<double>(r.probe_scores.size());
    ++n[v];
  }
  auto mean = [&](Variant v) {
    const auto i = static_cast<std::size_t>(v);
    return n[i] ? sum[i] / static_cast<double>(n[i]) : 0.0;
  };
  return {mean(Variant::degrade), mean(Variant::contrast), mean(Variant::adversarial),
          std::min({n[0], n[1], n[2]})};
}

double planted_recall(const SeamReport& report, const LabWorld& world, double fraction, Variant variant) {
  if (world.planted.empty()) throw DataError("world has no planted samples");
  const auto ranked = rank_by_risk(report, variant, report.mode);
  const std::size_t n = std::min(ranked.size(), static_cast<std::size_t>(fraction * ranked.size() + 0.5));
  const std::unordered_set<std::string> planted(world.planted.begin(), world.planted.end());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) hit += planted.count(ranked[i]);
  return static_cast<double>(hit) / static_cast<double>(planted.size());
}

SeamReport random_report(const RlCorpus& corpus, Variant variant, std::uint64_t seed) {
  SeamReport r;
  r.mode = SeamMode::log;
  r.variants = {variant};
  r.corpus_fingerprint = corpus_fingerprint(corpus);
  Rng rng(mix_seed(seed, "random-report"));
  for (const auto& s : corpus) {
    SeamRecord rec;
    rec.sample_id = s.id();
    rec.variant = variant;
    rec.mode = SeamMode::log;
    rec.score = -rng.uniform();
    r.records.push_back(std::move(rec));
  }
  return r;
}

LessIsMore less_is_more(const LabSetup& lab, const SeamReport& report, const RlConfig& rl,
                        double fraction, std::uint64_t seed, std::size_t eval_samples) {
  const auto& w = lab.world;
  auto quality = [&](const RlCorpus& data) {
    return q_pm(rl_improve(lab.sft, lab.rm, data, rl), w.eval, w.oracle, rl.seed, eval_samples);
  };
  LessIsMore out;
  out.q_sft = q_pm(lab.sft, w.eval, w.oracle, rl.seed, eval_samples);
  out.q_full = quality(w.d_rl);
  out.q_seam = quality(filter_bottom(report, w.d_rl, fraction, Variant::adversarial, report.mode).kept);
  const auto rnd = random_report(w.d_rl, Variant::adversarial, seed);
  out.q_random = quality(filter_bottom(rnd, w.d_rl, fraction, Variant::adversarial, rnd.mode).kept);
  return out;
}

FilterSweep filter_sweep(const LabSetup& lab, const SeamReport& report, const RlConfig& rl,
                         const std::vector<double>& fractions, std::size_t eval_samples,
                         std::size_t concurrency) {
  const auto& w = lab.world;
  FilterSweep out;
  out.fractions = fractions;
  out.quality.resize(fractions.size());
  std::vector<double> all(fractions.size() + 1);
  parallel_for(all.size(), concurrency, [&](std::size_t i) {
    const RlCorpus data = i == fractions.size()
                              ? w.d_rl
                              : filter_bottom(report, w.d_rl, fractions[i], Variant::adversarial, report.mode).kept;
    all[i] = q_pm(rl_improve(lab.sft, lab.rm, data, rl), w.eval, w.oracle, rl.seed, eval_samples);
  });
  std::copy(all.begin(), all.end() - 1, out.quality.begin());
  out.q_full = all.back();
  return out;
}

AugmentationEffect augmentation_effect(const LabSetup& lab, const SeamReport& report,
                                       double fraction, std::size_t per_target, std::uint64_t seed,
                                       const RewardTrainConfig& reward) {
  const auto& w = lab.world;
  AugmentConfig aug;
  aug.per_target = per_target;
  auto retrained = [&](const std::vector<std::string>& targets, std::size_t* added) {
    const auto sets = build_augmentation_sets(targets, w.d_rl, *lab.contrast, aug);
    PreferenceCorpus data = w.d_r;
    data.insert(data.end(), sets.rm_additions.begin(), sets.rm_additions.end());
    if (added) *added = sets.rm_additions.size();
    return q_rm(train_reward(data, reward), w.planted_pairs);
  };
  AugmentationEffect out;
  out.base = q_rm(lab.rm, w.planted_pairs);
  out.seam = retrained(select_augmentation_targets(report, fraction, Variant::adversarial, report.mode),
                       &out.additions);
  const auto rnd = random_report(w.d_rl, Variant::adversarial, seed);
  out.random = retrained(select_augmentation_targets(rnd, fraction, Variant::adversarial, rnd.mode), nullptr);
  return out;
}

OverlapExperiment overlap_experiment(const LabSetup& lab, std::size_t rm_small, std::size_t rm_large,
                                     double fraction, std::uint64_t seed, std::size_t concurrency) {
  LadderConfig lc;
  lc.pm_sizes = {lab.world.d_p.size()};
  lc.rm_sizes = {rm_small, rm_large};
  lc.seed = seed;
  const auto ladder = build_ladder(lab.world, lc);
  const auto& d_rl = lab.world.d_rl;
  std::vector<SelectionResult> sel;
  for (const auto& [n, rm] : ladder.rm_rungs) {
    const auto report = lab_report(lab, {Variant::adversarial}, SeamMode::log, concurrency, nullptr, &rm);
    sel.push_back(filter_bottom(report, d_rl, fraction, Variant::adversarial).selection);
  }
  OverlapExperiment out;
  out.rung_overlap = overlap_rate(sel[0], sel[1]);
  constexpr int kDraws = 20;
  double sum = 0.0;
  for (int i = 0; i < kDraws; ++i) {
    const auto a = random_report(d_rl, Variant::adversarial, mix_seed(seed, 2 * i));
    const auto b = random_report(d_rl, Variant::adversarial, mix_seed(seed, 2 * i + 1));
    sum += overlap_rate(filter_bottom(a, d_rl, fraction, Variant::adversarial).selection,
                        filter_bottom(b, d_rl, fraction, Variant::adversarial).selection);
  }
  out.random_overlap = sum / kDraws;
  return out;
}

json to_json(const LikelihoodOrdering& x) {
  return json{{"degrade", x.degrade}, {"contrast", x.contrast}, {"adversarial", x.adversarial},
              {"samples", x.samples}};
}

json to_json(const LessIsMore& x) {
  return json{{"q_sft", x.q_sft}, {"q_full", x.q_full}, {"q_seam", x.q_seam}, {"q_random", x.q_random}};
}

json to_json(const FilterSweep& x) {
  return json{{"fractions", x.fractions}, {"quality", x.quality}, {"q_full", x.q_full}};
}

json to_json(const AugmentationEffect& x) {
  return json{{"base", x.base}, {"seam", x.seam}, {"random", x.random}, {"additions", x.additions}};
}

json to_json(const OverlapExperiment& x) {
  return json{{"rung_overlap", x.rung_overlap}, {"random_overlap", x.random_overlap}};
}

}  // namespace seam
