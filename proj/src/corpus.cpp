#include "seam/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace seam {

namespace {

bool is_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

bool is_reserved(std::string_view chunk) {
  return chunk == kUnkToken || chunk == kEndToken || chunk == kSepToken;
}

std::string require_string(const json& j, const char* field, const std::string& where) {
  auto it = j.find(field);
  if (it == j.end()) throw DataError(where + ": missing field '" + field + "'");
  if (!it->is_string()) throw DataError(where + ": field '" + field + "' must be a string");
  return it->get<std::string>();
}

std::string optional_id(const json& j, const std::string& where) {
  auto it = j.find("id");
  if (it == j.end() || it->is_null()) return {};
  if (!it->is_string()) throw DataError(where + ": field 'id' must be a string");
  return it->get<std::string>();
}

Response response_field(const json& j, const char* field, const std::string& where) {
  auto text = require_string(j, field, where);
  if (tokenize(text).len() == 0) {
    throw DataError(where + ": field '" + field + "' has no tokens");
  }
  return Response::from_text(std::move(text));
}

template <class Record, class Parse>
std::vector<Record> parse_lines(const std::vector<std::string>& lines, const std::string& source,
                                Parse parse) {
  std::vector<Record> out;
  std::unordered_map<std::string, std::size_t> seen;  // id -> line number
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::size_t lineno = i + 1;
    const auto& line = lines[i];
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const std::string where = source + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(where + ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": expected a JSON object");
    Record rec = parse(j, where);
    auto [it, inserted] = seen.emplace(rec.instruction.id, lineno);
    if (!inserted) {
      throw DataError(source + ": duplicate id '" + rec.instruction.id + "' on lines " +
                      std::to_string(it->second) + " and " + std::to_string(lineno));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace

TokenSeq tokenize(std::string_view text) {
  TokenSeq seq;
  std::size_t i = 0;
  const std::size_t n = text.size();
  while (i < n) {
    while (i < n && is_space(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t start = i;
    while (i < n && !is_space(static_cast<unsigned char>(text[i]))) ++i;
    if (start == i) break;
    std::string_view chunk = text.substr(start, i - start);
    if (is_reserved(chunk)) {
      seq.tokens.emplace_back(chunk);
      continue;
    }
    std::string word;
    for (unsigned char c : chunk) {
      if (is_punct(c)) {
        if (!word.empty()) seq.tokens.push_back(std::move(word));
        word.clear();
        seq.tokens.emplace_back(1, static_cast<char>(c));
      } else {
        word.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : static_cast<char>(c));
      }
    }
    if (!word.empty()) seq.tokens.push_back(std::move(word));
  }
  return seq;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

Instruction Instruction::make(std::string id, std::string text) {
  Instruction ins;
  ins.id = std::move(id);
  ins.tokens = tokenize(text);
  ins.text = std::move(text);
  return ins;
}

Response Response::from_text(std::string text) {
  Response r;
  r.tokens = tokenize(text);
  if (r.tokens.len() == 0) throw DataError("response has no tokens");
  r.text = std::move(text);
  return r;
}

Response Response::from_tokens(std::vector<std::string> tokens) {
  return from_text(join_tokens(tokens));
}

std::string to_string(CorpusKind kind) {
  switch (kind) {
    case CorpusKind::sft: return "sft";
    case CorpusKind::preference: return "preference";
    case CorpusKind::rl: return "rl";
  }
  return "?";
}

CorpusKind corpus_kind_from_string(std::string_view s) {
  if (s == "sft") return CorpusKind::sft;
  if (s == "preference") return CorpusKind::preference;
  if (s == "rl") return CorpusKind::rl;
  throw ConfigError("unknown corpus kind '" + std::string(s) + "'");
}

std::string content_id(std::string_view kind, std::initializer_list<std::string_view> fields) {
  std::string blob(kind);
  for (auto f : fields) {
    blob.push_back('\x1f');
    blob += f;
  }
  return "h" + sha256_hex(blob).substr(0, 16);
}

json to_json(const SftExample& r) {
  return json{{"id", r.instruction.id},
              {"instruction", r.instruction.text},
              {"response", r.golden.text}};
}

json to_json(const PreferencePair& r) {
  return json{{"id", r.instruction.id},
              {"instruction", r.instruction.text},
              {"preferred", r.preferred.text},
              {"rejected", r.rejected.text}};
}

json to_json(const RlSample& r) {
  return json{{"id", r.instruction.id},
              {"instruction", r.instruction.text},
              {"golden", r.golden.text}};
}

SftExample sft_from_json(const json& j) {
  const std::string where = "sft record";
  auto text = require_string(j, "instruction", where);
  auto golden = response_field(j, "response", where);
  auto id = optional_id(j, where);
  if (id.empty()) id = content_id("sft", {text, golden.text});
  return SftExample{Instruction::make(std::move(id), std::move(text)), std::move(golden)};
}

PreferencePair preference_from_json(const json& j) {
  const std::string where = "preference record";
  auto text = require_string(j, "instruction", where);
  auto preferred = response_field(j, "preferred", where);
  auto rejected = response_field(j, "rejected", where);
  if (preferred.text == rejected.text) {
    throw DataError(where + ": invariant violated, preferred == rejected");
  }
  auto id = optional_id(j, where);
  if (id.empty()) id = content_id("preference", {text, preferred.text, rejected.text});
  return PreferencePair{Instruction::make(std::move(id), std::move(text)), std::move(preferred),
                        std::move(rejected)};
}

RlSample rl_from_json(const json& j) {
  const std::string where = "rl record";
  auto text = require_string(j, "instruction", where);
  auto golden = response_field(j, "golden", where);
  auto id = optional_id(j, where);
  if (id.empty()) id = content_id("rl", {text, golden.text});
  return RlSample{Instruction::make(std::move(id), std::move(text)), std::move(golden)};
}

namespace {

template <class Fn>
auto with_location(Fn fn) {
  return [fn](const json& j, const std::string& where) {
    try {
      return fn(j);
    } catch (const DataError& e) {
      throw DataError(where + ": " + e.what());
    }
  };
}

}  // namespace

SftCorpus parse_sft(const std::vector<std::string>& lines, const std::string& source) {
  return parse_lines<SftExample>(lines, source, with_location(sft_from_json));
}

PreferenceCorpus parse_preference(const std::vector<std::string>& lines,
                                  const std::string& source) {
  return parse_lines<PreferencePair>(lines, source, with_location(preference_from_json));
}

RlCorpus parse_rl(const std::vector<std::string>& lines, const std::string& source) {
  return parse_lines<RlSample>(lines, source, with_location(rl_from_json));
}

SftCorpus load_sft(const std::filesystem::path& path) {
  return parse_sft(read_lines(path), path.string());
}

PreferenceCorpus load_preference(const std::filesystem::path& path) {
  return parse_preference(read_lines(path), path.string());
}

RlCorpus load_rl(const std::filesystem::path& path) {
  return parse_rl(read_lines(path), path.string());
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const std::array<double, 3>& ratios) {
  double sum = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("split ratios must be positive");
    sum += r;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    double exact = ratios[i] * static_cast<double>(n);
    sizes[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(sizes[i]);
    assigned += sizes[i];
  }
  std::array<int, 3> idx{0, 1, 2};
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) sizes[idx[k % 3]] += 1;
  return sizes;
}

}  // namespace seam
