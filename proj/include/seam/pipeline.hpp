#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "seam/corpus.hpp"
#include "seam/engine.hpp"
#include "seam/samplers.hpp"

namespace seam {

struct SelectionResult {
  std::vector<std::string> kept;     // corpus order
  std::vector<std::string> removed;  // risk order
  double fraction = 0.2;
  SeamMode mode = SeamMode::log;
  Variant variant = Variant::adversarial;
  double threshold = 0.0;  // score of the last removed sample
  std::string corpus_fingerprint;
};

json to_json(const SelectionResult& s);
SelectionResult selection_from_json(const json& j);

/// round(fraction * n), half-up.
std::size_t round_half_up(double fraction, std::size_t n);

/// Sample ids, most filterable first: ascending score in log mode, descending
/// in prob mode, ties by id. Unscorable samples rank last.
std::vector<std::string> rank_by_risk(const SeamReport& report, Variant variant, SeamMode mode);

struct FilterOutput {
  RlCorpus kept;
  SelectionResult selection;
};

FilterOutput filter_bottom(const SeamReport& report, const RlCorpus& corpus, double fraction,
                           Variant variant, SeamMode mode);
FilterOutput filter_bottom(const SeamReport& report, const RlCorpus& corpus, double fraction,
                           Variant variant);

std::vector<std::string> select_augmentation_targets(const SeamReport& report, double fraction,
                                                     Variant variant, SeamMode mode);

enum class PmAugmentation { replicate, neighbors };
std::string to_string(PmAugmentation a);
PmAugmentation pm_augmentation_from_string(std::string_view s);

struct AugmentationShortfall {
  std::string target_id;
  std::size_t pm_missing = 0;
  std::size_t rm_missing = 0;
};

struct AugmentationSets {
  std::vector<SftExample> pm_additions;
  std::vector<PreferencePair> rm_additions;
  std::vector<std::string> targets;
  std::vector<AugmentationShortfall> shortfalls;
};

struct AugmentConfig {
  std::size_t per_target = 5;
  ContrastConfig retrieval;  // k is replaced by per_target
  PmAugmentation pm = PmAugmentation::replicate;
};

/// Per target (I, r): PM additions are per_target copies of (I, r) with
/// derived ids (or, with `neighbors`, I paired with retrieved responses); RM
/// additions are (I, r, r*) for the top per_target contrast-retrieved r*.
AugmentationSets build_augmentation_sets(const std::vector<std::string>& targets,
                                         const RlCorpus& rl, const ContrastIndex& index,
                                         const AugmentConfig& config = {});

/// |A.removed & B.removed| / min(|A.removed|, |B.removed|).
double overlap_rate(const SelectionResult& a, const SelectionResult& b);

}  // namespace seam
