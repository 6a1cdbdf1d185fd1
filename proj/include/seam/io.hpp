#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace seam {

using json = nlohmann::json;

/// Writes `content` to a sibling temp file and renames it over `path`, so
/// readers never observe a truncated file. Parent directories are created.
void atomic_write(const std::filesystem::path& path, const std::string& content);

std::string read_file(const std::filesystem::path& path);

/// Lines of a text file without trailing '\n' / '\r'. Throws DataError if the
/// file cannot be opened.
std::vector<std::string> read_lines(const std::filesystem::path& path);

/// Serializes a list of JSON objects as JSONL (one compact object per line).
std::string to_jsonl(const std::vector<json>& rows);

/// Compact, key-sorted dump used for fingerprints.
inline std::string canonical_dump(const json& j) { return j.dump(); }

}  // namespace seam
