#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "seam/samplers.hpp"
#include "test_util.hpp"

using namespace seam;

namespace {

// Embeds each known text as a fixed vector; the query "q" is the first axis.
class TableEmbedding : public EmbeddingBackend {
 public:
  explicit TableEmbedding(std::size_t dim) : dim_(dim) {
    std::vector<double> q(dim, 0.0);
    q[0] = 1.0;
    table_["q"] = q;
  }
  // A text at exactly cosine `s` to "q", orthogonal part along axis `axis`.
  void add(const std::string& text, double s, std::size_t axis) {
    std::vector<double> v(dim_, 0.0);
    v[0] = s;
    v[axis] = std::sqrt(std::max(0.0, 1.0 - s * s));
    table_[text] = v;
  }
  std::vector<double> embed(std::string_view text) const override { return table_.at(std::string(text)); }
  std::size_t dim() const override { return dim_; }
  std::string fingerprint() const override { return "table"; }

 private:
  std::size_t dim_;
  std::map<std::string, std::vector<double>> table_;
};

RlSample rl(const std::string& inst, const std::string& golden) {
  return {Instruction::make("r", inst), Response::from_text(golden)};
}

std::vector<std::string> toks(const std::string& s) { return tokenize(s).tokens; }

}  // namespace

TEST_CASE("variant names") {
  CHECK(variant_from_string("adv") == Variant::adversarial);
  CHECK(to_string(variant_from_string("degrade")) == "degrade");
  CHECK_THROWS_AS(variant_from_string("gpt"), ConfigError);
}

TEST_CASE("contrast set records an in-band shortfall") {
  TableEmbedding emb(64);
  SftCorpus sft;
  const double sims[] = {0.95, 0.9, 0.88, 0.85, 0.81, 0.8, 0.79, 0.5};
  for (std::size_t i = 0; i < std::size(sims); ++i) {
    const std::string t = "c" + std::to_string(i);
    emb.add(t, sims[i], i + 1);
    sft.push_back({Instruction::make(t, t), Response::from_text("answer " + t)});
  }
  const auto set = build_contrast_set(rl("q", "gold"), sft, emb);
  REQUIRE(set.probes.size() == 5);
  CHECK(set.shortfall == 25);
  CHECK_FALSE(set.out_of_band);
  CHECK(set.probes[0].provenance.source_id == "c1");
  CHECK(set.probes[4].provenance.source_id == "c5");
  for (const auto& p : set.probes) {
    CHECK(p.provenance.similarity >= 0.8);
    CHECK(p.provenance.similarity <= 0.9);
  }
}

TEST_CASE("contrast excludes the identical instruction") {
  TableEmbedding emb(8);
  emb.add("twin", 1.0, 1);
  emb.add("near", 0.85, 2);
  const SftCorpus sft = {{Instruction::make("a", "q"), Response::from_text("same instruction")},
                         {Instruction::make("b", "twin"), Response::from_text("twin answer")},
                         {Instruction::make("c", "near"), Response::from_text("near answer")}};
  const auto set = build_contrast_set(rl("q", "gold"), sft, emb);
  REQUIRE(set.probes.size() == 1);
  CHECK(set.probes[0].response.text == "near answer");
}

TEST_CASE("contrast falls back below the band") {
  TableEmbedding emb(8);
  emb.add("far", 0.3, 1);
  emb.add("mid", 0.6, 2);
  emb.add("over", 0.95, 3);
  const SftCorpus sft = {{Instruction::make("a", "far"), Response::from_text("far answer")},
                         {Instruction::make("b", "mid"), Response::from_text("mid answer")},
                         {Instruction::make("c", "over"), Response::from_text("over answer")}};
  const auto set = build_contrast_set(rl("q", "gold"), sft, emb);
  CHECK(set.out_of_band);
  REQUIRE(set.probes.size() == 2);
  CHECK(set.probes[0].response.text == "mid answer");
  CHECK_THROWS_AS(build_contrast_set(rl("q", "gold"), SftCorpus{}, emb), DataError);
}

TEST_CASE("contrast retrieval matches an exhaustive scan") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    TableEmbedding emb(256);
    SftCorpus sft;
    std::vector<std::pair<double, std::size_t>> scan;
    for (std::size_t i = 0; i < 200; ++i) {
      const std::string t = "c" + std::to_string(i);
      const double s = std::round((0.5 + 0.5 * rng.uniform()) * 1000.0) / 1000.0;
      emb.add(t, s, i % 255 + 1);
      sft.push_back({Instruction::make(t, t), Response::from_text("answer " + t)});
    }
    for (std::size_t i = 0; i < sft.size(); ++i) {
      const double s = cosine(emb.embed("q"), emb.embed(sft[i].instruction.text));
      if (s >= 0.8 && s <= 0.9) scan.push_back({s, i});
    }
    std::stable_sort(scan.begin(), scan.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (scan.size() > 30) scan.resize(30);
    const auto set = build_contrast_set(rl("q", "gold"), sft, emb);
    REQUIRE(set.probes.size() == scan.size());
    for (std::size_t k = 0; k < scan.size(); ++k) {
      CHECK(set.probes[k].provenance.source_id == sft[scan[k].second].id());
      CHECK(std::abs(set.probes[k].provenance.similarity - scan[k].first) < 1e-9);
    }
  }
}

TEST_CASE("degradation operators") {
  const auto t = toks("one two three four five six seven eight");
  CHECK(degrade_ops::truncate(t) == toks("one two three four"));
  CHECK(degrade_ops::truncate(toks("a b c")) == toks("a b"));
  CHECK(degrade_ops::splice(t, toks("x y z w")) == toks("one two three four z w"));
  Rng rng(1);
  auto sh = degrade_ops::shuffle(t, rng);
  std::multiset<std::string> a(t.begin(), t.end()), b(sh.begin(), sh.end());
  CHECK(a == b);
  CHECK(degrade_ops::sentences(toks("a b . c ! d")).size() == 3);
  const auto rep = degrade_ops::repeat_span(t, rng);
  CHECK(rep.size() > t.size());
  CHECK(rep.size() <= t.size() + 3);
}

TEST_CASE("dropout keeps 85 percent on average") {
  std::vector<std::string> t;
  for (int i = 0; i < 20; ++i) t.push_back("w" + std::to_string(i));
  double total = 0.0;
  constexpr int kSeeds = 10000;
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(static_cast<std::uint64_t>(s));
    total += static_cast<double>(degrade_ops::dropout(t, rng).size());
  }
  CHECK(std::abs(total / kSeeds - 17.0) < 0.5);
}

TEST_CASE("degraded sets are deterministic and distinct") {
  const LocalDegrader gen({Response::from_text("donor text with several tokens here"),
                           Response::from_text("another donor answer . with two sentences")});
  const auto sample = rl("how do i start", "first open the lid . then press the red button twice .");
  const auto a = build_degraded_set(sample, gen, 30, 5);
  const auto b = build_degraded_set(sample, gen, 30, 5);
  CHECK(to_json(a) == to_json(b));
  std::set<std::string> texts;
  for (const auto& p : a.probes) {
    CHECK(texts.insert(p.response.text).second);
    CHECK(p.response.text != sample.golden.text);
    CHECK(std::find(degrade_ops::kNames.begin(), degrade_ops::kNames.end(), p.provenance.op) !=
          degrade_ops::kNames.end());
  }
  CHECK(a.probes.size() + a.shortfall == 30);

  const auto tiny = build_degraded_set(rl("x", "word"), gen, 30, 5);
  CHECK(tiny.probes.size() < 30);
  CHECK(tiny.shortfall == 30 - tiny.probes.size());
}

TEST_CASE("lexicon parsing") {
  const auto lex = LexiconSynonyms::parse({R"({"word":"big","synonyms":["large","huge"]})",
                                           R"({"word":"fast","synonyms":["quick"]})"});
  CHECK(lex.synonyms("big") == std::vector<std::string>{"large", "huge"});
  CHECK(lex.synonyms("none").empty());
  CHECK_THROWS_AS(LexiconSynonyms::parse({R"({"word":"big"})"}), DataError);
  test::TempDir dir("lex");
  {
    std::ofstream f(dir / "l.jsonl");
    f << lex.to_jsonl();
  }
  CHECK(LexiconSynonyms::load(dir / "l.jsonl").fingerprint() == lex.fingerprint());
}

TEST_CASE("embedding neighbours exclude the word itself") {
  const HashEmbedding emb(16);
  std::vector<std::string> vocab;
  for (int i = 0; i < 100; ++i) vocab.push_back("w" + std::to_string(i));
  const EmbeddingNeighborSynonyms syn(vocab, emb, 5, 0.5);
  for (const auto& w : vocab) {
    const auto s = syn.synonyms(w);
    CHECK(s.size() <= 5);
    CHECK(std::find(s.begin(), s.end(), w) == s.end());
    for (const auto& x : s) CHECK(cosine(emb.embed(w), emb.embed(x)) >= 0.5);
  }
}

TEST_CASE("flat reward yields forced unk probes") {
  const LinearReward zero(64);
  const auto lex = LexiconSynonyms::parse({R"({"word":"good","synonyms":["fine","nice"]})"});
  const auto set = build_adversarial_set(rl("q", "a good answer here"), zero, &lex, AttackConfig{}, 3);
  REQUIRE(!set.probes.empty());
  for (const auto& p : set.probes) {
    REQUIRE(p.provenance.edits.size() == 1);
    CHECK(p.provenance.edits[0].to == "<unk>");
  }
  CHECK_THROWS_AS(build_adversarial_set(rl("q", "a b"), zero, nullptr, AttackConfig{}, 3), ConfigError);
  const auto one = build_adversarial_set(rl("q", "solo"), zero, &lex, AttackConfig{}, 3);
  REQUIRE(one.probes.size() == 1);
  CHECK(one.probes[0].response.text == "<unk>");
}

TEST_CASE("a dominant synonym is substituted first") {
  constexpr std::size_t dim = 1024;
  std::vector<double> w(dim, 0.0);
  w[LinearReward::feature_index(LinearReward::unigram_feature("superb"), dim)] = 10.0;
  const LinearReward reward(w);
  const auto lex = LexiconSynonyms::parse({R"({"word":"good","synonyms":["fine","superb"]})",
                                           R"({"word":"answer","synonyms":["reply"]})"});
  const auto set = build_adversarial_set(rl("q", "a good answer here"), reward, &lex, AttackConfig{}, 1);
  REQUIRE(!set.probes.empty());
  const auto& first = set.probes[0].provenance.edits.at(0);
  CHECK(first.from == "good");
  CHECK(first.to == "superb");
  CHECK(first.gain > 0.0);
}

TEST_CASE("first greedy edit matches exhaustive single-edit search") {
  Rng rng(77);
  constexpr std::size_t dim = 256;
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("v" + std::to_string(i));
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> w(dim);
    for (double& x : w) x = rng.uniform() - 0.5;
    const LinearReward reward(w);
    std::vector<std::string> golden;
    std::map<std::string, std::vector<std::string>> entries;
    for (int i = 0; i < 5; ++i) {
      const auto word = words[(trial * 5 + i) % words.size()] + "p" + std::to_string(i);
      golden.push_back(word);
      entries[word] = {words[rng.below(words.size())], words[rng.below(words.size())]};
      if (entries[word][0] == entries[word][1]) entries[word].pop_back();
    }
    const LexiconSynonyms lex(entries);
    const auto sample = RlSample{Instruction::make("r", "q"), Response::from_tokens(golden)};
    const double base = reward.score(sample.instruction, sample.golden);
    double best = -1e300;
    std::size_t best_pos = 0;
    std::string best_word;
    for (std::size_t i = 0; i < golden.size(); ++i) {
      for (const auto& c : lex.synonyms(golden[i])) {
        auto t = golden;
        t[i] = c;
        const double g = reward.score(sample.instruction, Response::from_tokens(t)) - base;
        if (g > best) {
          best = g;
          best_pos = i;
          best_word = c;
        }
      }
    }
    if (!(best > 0.0)) continue;
    AttackConfig cfg;
    cfg.max_restarts = 1;
    const auto set = build_adversarial_set(sample, reward, &lex, cfg, 5);
    REQUIRE(!set.probes.empty());
    const auto& e = set.probes[0].provenance.edits.at(0);
    CHECK(e.position == best_pos);
    CHECK(e.to == best_word);
    CHECK(e.gain == doctest::Approx(best).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked > 50);
}

TEST_CASE("attack trajectories only climb") {
  Rng rng(13);
  constexpr std::size_t dim = 512;
  std::vector<std::string> vocab;
  for (int i = 0; i < 40; ++i) vocab.push_back("t" + std::to_string(i));
  std::map<std::string, std::vector<std::string>> entries;
  for (const auto& v : vocab) {
    for (int k = 0; k < 3; ++k) entries[v].push_back(vocab[rng.below(vocab.size())]);
  }
  const LexiconSynonyms lex(entries);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> w(dim);
    for (double& x : w) x = rng.uniform() - 0.5;
    const LinearReward reward(w);
    std::vector<std::string> golden;
    const auto len = 4 + rng.below(12);
    for (std::uint64_t i = 0; i < len; ++i) golden.push_back(vocab[rng.below(vocab.size())]);
    const RlSample sample{Instruction::make("r", "q"), Response::from_tokens(golden)};
    const double base = reward.score(sample.instruction, sample.golden);
    const auto set = build_adversarial_set(sample, reward, &lex, AttackConfig{}, static_cast<std::uint64_t>(trial));
    std::set<std::string> texts;
    const auto budget = static_cast<std::size_t>(std::floor(0.3 * static_cast<double>(len)));
    for (const auto& p : set.probes) {
      CHECK(texts.insert(p.response.text).second);
      const auto& edits = p.provenance.edits;
      REQUIRE(!edits.empty());
      CHECK(edits.size() <= std::max<std::size_t>(1, budget));
      if (edits.size() == 1 && edits[0].to == "<unk>") continue;
      double running = base;
      auto t = golden;
      for (const auto& e : edits) {
        CHECK(e.gain > 0.0);
        t[e.position] = e.to;
        const double now = reward.score(sample.instruction, Response::from_tokens(t));
        CHECK(now >= running);
        CHECK(now - running == doctest::Approx(e.gain).epsilon(1e-9));
        running = now;
      }
    }
    const auto again = build_adversarial_set(sample, reward, &lex, AttackConfig{}, static_cast<std::uint64_t>(trial));
    CHECK(to_json(again) == to_json(set));
  }
}

TEST_CASE("probe sets round trip through json") {
  const LocalDegrader gen({Response::from_text("donor words go here")});
  const auto set = build_degraded_set(rl("q", "some golden response text ."), gen, 10, 2);
  CHECK(to_json(probe_set_from_json(to_json(set))) == to_json(set));
  test::TempDir dir("probes");
  save_probe_sets(dir / "p.jsonl", {set, set});
  const auto back = load_probe_sets(dir / "p.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(to_json(back[1]) == to_json(set));
}
