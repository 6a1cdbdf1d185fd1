#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "seam/engine.hpp"
#include "seam/lab.hpp"
#include "seam/pipeline.hpp"

namespace seam {

/// A generated world with its SFT policy, reward model and probe machinery.
struct LabSetup {
  LabWorld world;
  NgramPolicy sft;
  LinearReward rm;
  LexiconSynonyms lexicon;
  std::unique_ptr<ContrastIndex> contrast;
  std::unique_ptr<LocalDegrader> degrader;
  HashEmbedding embedding;

  SamplerSuite samplers(std::uint64_t seed) const;
};

std::unique_ptr<LabSetup> prepare_lab(const WorldConfig& world,
                                      const RewardTrainConfig& reward = {});

/// SEAM report over d_rl, scored with the world's SFT policy and `reward`
/// (the setup's reward model when null).
SeamReport lab_report(const LabSetup& lab, const std::vector<Variant>& variants, SeamMode mode,
                      std::size_t concurrency, std::vector<ProbeSet>* probes = nullptr,
                      const RewardBackend* reward = nullptr);

struct LikelihoodOrdering {
  double degrade = 0.0;
  double contrast = 0.0;
  double adversarial = 0.0;
  std::size_t samples = 0;
};

/// Mean over samples of the per-sample mean probe norm_loglik, per variant.
LikelihoodOrdering likelihood_ordering(const SeamReport& report);

/// Share of planted ids among the first round(fraction * n) of the ranking.
double planted_recall(const SeamReport& report, const LabWorld& world, double fraction,
                      Variant variant = Variant::adversarial);

struct LessIsMore {
  double q_sft = 0.0;
  double q_full = 0.0;
  double q_seam = 0.0;
  double q_random = 0.0;
};

LessIsMore less_is_more(const LabSetup& lab, const SeamReport& report, const RlConfig& rl,
                        double fraction, std::uint64_t seed, std::size_t eval_samples = 1);

struct FilterSweep {
  std::vector<double> fractions;
  std::vector<double> quality;
  double q_full = 0.0;
};

FilterSweep filter_sweep(const LabSetup& lab, const SeamReport& report, const RlConfig& rl,
                         const std::vector<double>& fractions, std::size_t eval_samples = 1,
                         std::size_t concurrency = 1);

struct AugmentationEffect {
  double base = 0.0;
  double seam = 0.0;
  double random = 0.0;
  std::size_t additions = 0;
};

/// RM retrained on d_r plus the RM additions for SEAM-selected or random
/// targets, scored by q_rm on the world's planted pairs.
AugmentationEffect augmentation_effect(const LabSetup& lab, const SeamReport& report,
                                       double fraction, std::size_t per_target, std::uint64_t seed,
                                       const RewardTrainConfig& reward = {});

struct OverlapExperiment {
  double rung_overlap = 0.0;
  double random_overlap = 0.0;
};

/// Overlap of bottom-fraction selections under RMs trained on two nested
/// preference subsets, against the mean overlap of random-score selections.
OverlapExperiment overlap_experiment(const LabSetup& lab, std::size_t rm_small, std::size_t rm_large,
                                     double fraction, std::uint64_t seed, std::size_t concurrency = 1);

/// Report whose scores are seeded uniform draws, for baselines.
SeamReport random_report(const RlCorpus& corpus, Variant variant, std::uint64_t seed);

json to_json(const LikelihoodOrdering& x);
json to_json(const LessIsMore& x);
json to_json(const FilterSweep& x);
json to_json(const AugmentationEffect& x);
json to_json(const OverlapExperiment& x);

}  // namespace seam
