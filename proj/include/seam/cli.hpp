#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "seam/config.hpp"
#include "seam/io.hpp"

namespace seam {

/// 2 for ConfigError, 3 for DataError, 4 for BackendError, 1 otherwise.
int exit_code_for(const std::exception& e);
/// {"error": {"type": ..., "message": ...}}
json error_json(const std::exception& e);

/// The scores summary that accompanies a scores JSONL file.
std::filesystem::path summary_path_for(const std::filesystem::path& report_jsonl);

// Each command writes its files atomically under the configured paths, plus
// out/manifests/<command>.json listing every file with its sha256 and the
// config fingerprint. The returned JSON is the manifest.

json cmd_synth(const RunConfig& config);
/// which: policy, reward or all.
json cmd_train(const RunConfig& config, const std::string& which);
/// variant: contrast, degrade, adv, adversarial or all; empty uses the config.
json cmd_score(const RunConfig& config, const std::string& variant);
json cmd_filter(const RunConfig& config);
json cmd_augment(const RunConfig& config);
json cmd_probe(const RunConfig& config);
/// saturation, mismatch, crossval, less-is-more, sweep, overlap, augmentation
/// or ordering.
json cmd_lab(const RunConfig& config, const std::string& experiment);
/// Inputs are scores JSONL files and lab JSON outputs; empty picks up the
/// configured report and everything under out/lab.
json cmd_report(const RunConfig& config, const std::vector<std::filesystem::path>& inputs);

/// Full command line: parses flags, loads the config, runs one command and
/// maps exceptions to exit codes with the error JSON on `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env);
int run_cli(int argc, char** argv);

}  // namespace seam
