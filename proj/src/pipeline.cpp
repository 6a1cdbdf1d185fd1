#include "seam/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include "seam/error.hpp"

namespace seam {

json to_json(const SelectionResult& s) {
  return json{{"format_version", kReportFormatVersion},
              {"fraction", s.fraction},
              {"mode", to_string(s.mode)},
              {"variant", to_string(s.variant)},
              {"threshold", s.threshold},
              {"corpus_fingerprint", s.corpus_fingerprint},
              {"removed", s.removed},
              {"kept", s.kept}};
}

SelectionResult selection_from_json(const json& j) {
  try {
    SelectionResult s;
    s.fraction = j.at("fraction").get<double>();
    s.mode = seam_mode_from_string(j.at("mode").get<std::string>());
    s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.threshold = j.at("threshold").get<double>();
    s.corpus_fingerprint = j.at("corpus_fingerprint").get<std::string>();
    s.removed = j.at("removed").get<std::vector<std::string>>();
    s.kept = j.at("kept").get<std::vector<std::string>>();
    return s;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed selection: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(e.what());
  }
}

std::size_t round_half_up(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 0.5));
}

std::vector<std::string> rank_by_risk(const SeamReport& report, Variant variant, SeamMode mode) {
  struct Entry {
    const std::string* id;
    double score;
    bool ok;
  };
  std::vector<Entry> entries;
  for (const auto& r : report.records) {
    if (r.variant != variant) continue;
    if (r.ok() && r.mode != mode) {
      throw DataError("report for sample '" + r.sample_id + "' was scored in " +
                      to_string(r.mode) + " mode");
    }
    entries.push_back({&r.sample_id, r.score, r.ok()});
  }
  if (entries.empty()) throw DataError("report has no records for variant " + to_string(variant));
  std::sort(entries.begin(), entries.end(), [mode](const Entry& a, const Entry& b) {
    if (a.ok != b.ok) return a.ok;
    if (a.ok && a.score != b.score) return mode == SeamMode::log ? a.score < b.score : a.score > b.score;
    return *a.id < *b.id;
  });
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(*e.id);
  return out;
}

namespace {

void check_fraction(double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("fraction must lie in (0, 1)");
}

}  // namespace

FilterOutput filter_bottom(const SeamReport& report, const RlCorpus& corpus, double fraction,
                           Variant variant, SeamMode mode) {
  check_fraction(fraction);
  const auto ranked = rank_by_risk(report, variant, mode);
  std::unordered_set<std::string> ids;
  for (const auto& s : corpus) ids.insert(s.id());
  if (ranked.size() != corpus.size()) {
    throw DataError("report covers " + std::to_string(ranked.size()) + " samples, corpus has " +
                    std::to_string(corpus.size()));
  }
  for (const auto& id : ranked) {
    if (!ids.count(id)) throw DataError("report sample '" + id + "' is not in the corpus");
  }
  std::unordered_map<std::string, double> score;
  for (const auto& r : report.records) {
    if (r.variant == variant) score[r.sample_id] = r.score;
  }

  FilterOutput out;
  auto& sel = out.selection;
  sel.fraction = fraction;
  sel.mode = mode;
  sel.variant = variant;
  sel.corpus_fingerprint = corpus_fingerprint(corpus);
  const std::size_t n_remove = round_half_up(fraction, corpus.size());
  sel.removed.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n_remove));
  if (!sel.removed.empty()) sel.threshold = score[sel.removed.back()];
  const std::unordered_set<std::string> removed(sel.removed.begin(), sel.removed.end());
  for (const auto& s : corpus) {
    if (removed.count(s.id())) continue;
    sel.kept.push_back(s.id());
    out.kept.push_back(s);
  }
  return out;
}

FilterOutput filter_bottom(const SeamReport& report, const RlCorpus& corpus, double fraction,
                           Variant variant) {
  return filter_bottom(report, corpus, fraction, variant, report.mode);
}

std::vector<std::string> select_augmentation_targets(const SeamReport& report, double fraction,
                                                     Variant variant, SeamMode mode) {
  check_fraction(fraction);
  auto ranked = rank_by_risk(report, variant, mode);
  ranked.resize(round_half_up(fraction, ranked.size()));
  return ranked;
}

std::string to_string(PmAugmentation a) {
  return a == PmAugmentation::replicate ? "replicate" : "neighbors";
}

PmAugmentation pm_augmentation_from_string(std::string_view s) {
  if (s == "replicate") return PmAugmentation::replicate;
  if (s == "neighbors") return PmAugmentation::neighbors;
  throw ConfigError("unknown PM augmentation '" + std::string(s) + "'");
}

AugmentationSets build_augmentation_sets(const std::vector<std::string>& targets,
                                         const RlCorpus& rl, const ContrastIndex& index,
                                         const AugmentConfig& config) {
  std::unordered_map<std::string, const RlSample*> by_id;
  for (const auto& s : rl) by_id.emplace(s.id(), &s);
  AugmentationSets out;
  ContrastConfig retrieval = config.retrieval;
  retrieval.k = config.per_target;
  for (const auto& id : targets) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("augmentation target '" + id + "' is not in the corpus");
    const RlSample& t = *it->second;
    out.targets.push_back(id);

    std::vector<const Response*> negatives;
    for (const auto& h : index.retrieve(t.instruction, retrieval).hits) {
      const auto& r = index.corpus()[h.index].golden;
      if (r.text != t.golden.text) negatives.push_back(&r);
    }

    AugmentationShortfall sf{id, 0, 0};
    if (config.pm == PmAugmentation::replicate) {
      for (std::size_t k = 0; k < config.per_target; ++k) {
        out.pm_additions.push_back(
            {Instruction::make(id + "/pm" + std::to_string(k), t.instruction.text), t.golden});
      }
    } else {
      for (std::size_t k = 0; k < negatives.size(); ++k) {
        out.pm_additions.push_back(
            {Instruction::make(id + "/pm" + std::to_string(k), t.instruction.text), *negatives[k]});
      }
      sf.pm_missing = config.per_target - negatives.size();
    }
    for (std::size_t k = 0; k < negatives.size(); ++k) {
      out.rm_additions.push_back({Instruction::make(id + "/rm" + std::to_string(k), t.instruction.text),
                                  t.golden, *negatives[k]});
    }
    sf.rm_missing = config.per_target - negatives.size();
    if (sf.pm_missing || sf.rm_missing) out.shortfalls.push_back(sf);
  }
  return out;
}

double overlap_rate(const SelectionResult& a, const SelectionResult& b) {
  if (a.corpus_fingerprint != b.corpus_fingerprint) {
    throw DataError("selections come from different corpora");
  }
  const std::size_t denom = std::min(a.removed.size(), b.removed.size());
  if (denom == 0) throw DataError("overlap of an empty selection");
  const std::unordered_set<std::string> sa(a.removed.begin(), a.removed.end());
  std::size_t both = 0;
  for (const auto& id : std::unordered_set<std::string>(b.removed.begin(), b.removed.end())) {
    both += sa.count(id);
  }
  return static_cast<double>(both) / static_cast<double>(denom);
}

}  // namespace seam
