#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "seam/io.hpp"

namespace seam {

// Reserved symbols. The tokenizer keeps these atomic.
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kEndToken = "</s>";
inline constexpr std::string_view kSepToken = "<sep>";

struct TokenSeq {
  std::vector<std::string> tokens;

  std::size_t len() const noexcept { return tokens.size(); }
  bool operator==(const TokenSeq&) const = default;
};

/// Lowercases ASCII, splits on whitespace and detaches every ASCII punctuation
/// character as its own token. Non-ASCII bytes are treated as word characters.
TokenSeq tokenize(std::string_view text);

/// Space-joins tokens. tokenize(join_tokens(t)) == t for tokenizer output.
std::string join_tokens(const std::vector<std::string>& tokens);

struct Instruction {
  std::string id;
  std::string text;
  TokenSeq tokens;

  static Instruction make(std::string id, std::string text);
};

struct Response {
  std::string text;
  TokenSeq tokens;

  /// Throws DataError when the text has no tokens.
  static Response from_text(std::string text);
  static Response from_tokens(std::vector<std::string> tokens);
};

struct SftExample {
  Instruction instruction;
  Response golden;

  const std::string& id() const { return instruction.id; }
};

struct PreferencePair {
  Instruction instruction;
  Response preferred;
  Response rejected;

  const std::string& id() const { return instruction.id; }
};

struct RlSample {
  Instruction instruction;
  Response golden;

  const std::string& id() const { return instruction.id; }
};

using SftCorpus = std::vector<SftExample>;
using PreferenceCorpus = std::vector<PreferencePair>;
using RlCorpus = std::vector<RlSample>;

enum class CorpusKind { sft, preference, rl };

std::string to_string(CorpusKind kind);
CorpusKind corpus_kind_from_string(std::string_view s);

/// Content-hash id used when a record carries no "id" field.
std::string content_id(std::string_view kind, std::initializer_list<std::string_view> fields);

// JSON record conversion. `from_json` throws DataError on schema violations.
json to_json(const SftExample& r);
json to_json(const PreferencePair& r);
json to_json(const RlSample& r);
SftExample sft_from_json(const json& j);
PreferencePair preference_from_json(const json& j);
RlSample rl_from_json(const json& j);

/// Parses JSONL text. `source` is used in error messages.
SftCorpus parse_sft(const std::vector<std::string>& lines, const std::string& source = "<input>");
PreferenceCorpus parse_preference(const std::vector<std::string>& lines,
                                  const std::string& source = "<input>");
RlCorpus parse_rl(const std::vector<std::string>& lines, const std::string& source = "<input>");

SftCorpus load_sft(const std::filesystem::path& path);
PreferenceCorpus load_preference(const std::filesystem::path& path);
RlCorpus load_rl(const std::filesystem::path& path);

template <class Record>
std::string corpus_to_jsonl(const std::vector<Record>& corpus) {
  std::string out;
  for (const auto& r : corpus) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

template <class Record>
void save_corpus(const std::filesystem::path& path, const std::vector<Record>& corpus) {
  atomic_write(path, corpus_to_jsonl(corpus));
}

template <class Record>
std::string corpus_fingerprint(const std::vector<Record>& corpus) {
  return sha256_hex(corpus_to_jsonl(corpus));
}

/// Sizes for a three-way split of n records by the largest-remainder rule;
/// each size is within 1 of ratio * n.
std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios);

/// Seeded partition into (train, dev, test). Each split keeps the original
/// record order.
template <class Record>
std::array<std::vector<Record>, 3> split(const std::vector<Record>& corpus,
                                         const std::array<double, 3>& ratios,
                                         std::uint64_t seed) {
  const auto sizes = split_sizes(corpus.size(), ratios);
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(mix_seed(seed, "split"));
  rng.shuffle(order);
  std::vector<int> bucket(corpus.size());
  std::size_t pos = 0;
  for (int b = 0; b < 3; ++b) {
    for (std::size_t k = 0; k < sizes[b]; ++k) bucket[order[pos++]] = b;
  }
  std::array<std::vector<Record>, 3> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out[bucket[i]].push_back(corpus[i]);
  return out;
}

}  // namespace seam
