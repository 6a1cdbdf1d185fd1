#include <cmath>
#include <set>

#include "doctest.h"
#include "seam/lab.hpp"
#include "test_util.hpp"

using namespace seam;

namespace {

WorldConfig small_config(std::uint64_t seed = 0) {
  WorldConfig c;
  c.seed = seed;
  c.n_sft = 400;
  c.n_pref = 200;
  c.n_rl = 60;
  c.n_eval = 40;
  c.n_pref_test = 40;
  return c;
}

const LabWorld& world() {
  static const LabWorld w = generate_world(small_config());
  return w;
}

const NgramPolicy& sft_policy() {
  static const NgramPolicy p = train_policy(world().d_p);
  return p;
}

RlCorpus first_n(const RlCorpus& c, std::size_t n) { return RlCorpus(c.begin(), c.begin() + static_cast<long>(n)); }

}  // namespace

TEST_CASE("world structure") {
  const auto& w = world();
  CHECK(w.d_p.size() == 400);
  CHECK(w.d_r.size() == 200);
  CHECK(w.d_rl.size() == 60);
  std::set<std::string> ids;
  for (const auto& e : w.d_p) CHECK(ids.insert(e.id()).second);
  for (const auto& e : w.d_r) CHECK(ids.insert(e.id()).second);
  std::set<std::string> rl_ids;
  for (const auto& e : w.d_rl) {
    CHECK(ids.insert(e.id()).second);
    rl_ids.insert(e.id());
  }
  CHECK(!w.planted.empty());
  for (const auto& id : w.planted) CHECK(rl_ids.count(id) == 1);
  for (const auto& p : w.d_r) {
    CHECK(w.oracle.quality(p.instruction, p.preferred) > w.oracle.quality(p.instruction, p.rejected));
  }
  CHECK(q_rm(OracleReward(w.oracle), w.d_r) == 1.0);
  for (const auto& e : w.d_rl) {
    const double q = w.oracle.quality(e.instruction, e.golden);
    CHECK(q >= 1.0);
    CHECK(q <= 10.0);
  }
}

TEST_CASE("worlds are deterministic and configurable") {
  CHECK(generate_world(small_config(5)).fingerprint() == generate_world(small_config(5)).fingerprint());
  CHECK(generate_world(small_config(5)).fingerprint() != generate_world(small_config(6)).fingerprint());
  auto c = small_config();
  c.hackable_fraction = 0.0;
  CHECK(generate_world(c).planted.empty());
  c.hackable_fraction = 0.6;
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  c = small_config();
  c.n_rl = 10;
  CHECK_THROWS_AS(generate_world(c), ConfigError);
  CHECK(to_json(world_config_from_json(to_json(small_config(3)))) == to_json(small_config(3)));
}

TEST_CASE("world files round trip") {
  test::TempDir dir("world");
  save_world(world(), dir.path());
  CHECK(load_world(dir.path()).fingerprint() == world().fingerprint());
}

TEST_CASE("markers share a reward feature slot with their core word") {
  for (const auto& t : world().topics) {
    REQUIRE(t.markers.size() <= t.core.size());
    for (std::size_t i = 0; i < t.markers.size(); ++i) {
      CHECK(t.markers[i] != t.core[i]);
      CHECK(LinearReward::feature_index(LinearReward::unigram_feature(t.markers[i]), std::size_t{1} << 16) ==
            LinearReward::feature_index(LinearReward::unigram_feature(t.core[i]), std::size_t{1} << 16));
    }
  }
}

TEST_CASE("zero step size leaves the policy unchanged") {
  RlConfig cfg;
  cfg.step_size = 0.0;
  const auto reward = train_reward(world().d_r, RewardTrainConfig{});
  CHECK(rl_improve(sft_policy(), reward, first_n(world().d_rl, 20), cfg).fingerprint() ==
        sft_policy().fingerprint());
}

TEST_CASE("constant reward without a KL term leaves the policy unchanged") {
  RlConfig cfg;
  cfg.beta = 0.0;
  const LinearReward zero(64);
  CHECK(rl_improve(sft_policy(), zero, first_n(world().d_rl, 20), cfg).fingerprint() ==
        sft_policy().fingerprint());
}

TEST_CASE("rl is deterministic and leaves the reference untouched") {
  const auto before = sft_policy().fingerprint();
  const OracleReward oracle(world().oracle);
  RlConfig cfg;
  const auto a = rl_improve(sft_policy(), oracle, first_n(world().d_rl, 20), cfg);
  const auto b = rl_improve(sft_policy(), oracle, first_n(world().d_rl, 20), cfg);
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint() != before);
  CHECK(sft_policy().fingerprint() == before);
  CHECK(to_json(rl_config_from_json(to_json(cfg))) == to_json(cfg));
  cfg.samples_per_instruction = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("kl anchoring") {
  const auto inst = first_n(world().d_rl, 20);
  const OracleReward oracle(world().oracle);
  double prev = 1e300;
  for (double beta : {0.0, 0.1, 1.0, 10.0}) {
    RlConfig cfg;
    cfg.beta = beta;
    const auto p = rl_improve(sft_policy(), oracle, inst, cfg);
    const double d = policy_divergence(p, sft_policy(), inst, 8, 1);
    CHECK(d <= prev + 1e-12);
    prev = d;
  }
  RlConfig huge;
  huge.beta = 1e6;
  CHECK(policy_divergence(rl_improve(sft_policy(), oracle, inst, huge), sft_policy(), inst, 8, 1) < 0.01);
}

TEST_CASE("q_pm equals a recomputed mean") {
  const auto test = first_n(world().eval, 15);
  double sum = 0.0;
  for (const auto& s : test) {
    const auto base = mix_seed(3, s.instruction.text);
    for (std::size_t j = 0; j < 2; ++j) {
      sum += world().oracle.quality(s.instruction, policy_sample(sft_policy(), s.instruction, mix_seed(base, j), 16));
    }
  }
  CHECK(q_pm(sft_policy(), test, world().oracle, 3, 2) == doctest::Approx(sum / 30.0).epsilon(1e-12));
  CHECK_THROWS_AS(q_pm(sft_policy(), {}, world().oracle), DataError);
}

TEST_CASE("a policy that emits on-topic text of full length scores the maximum") {
  const auto& topic = world().topics[0];
  const Oracle oracle(world().topics, 4);
  const Instruction inst = Instruction::make("q", "explain the " + topic.noun);
  REQUIRE(oracle.topic_of(inst).has_value());
  auto p = NgramPolicy::uniform({topic.core[0]}, NgramConfig{2, 0.75});
  const auto ids = p.encode({topic.core[0], topic.core[0], topic.core[0]});
  p.add_events(inst, ids, 1e9);
  for (const auto& e : p.events(inst, ids)) {
    if (e.token == Vocabulary::kEnd) p.scale_event(e, 1e-12);
  }
  p.renormalize();
  CHECK(q_pm(p, {{inst, Response::from_text("x")}}, oracle, 0, 4, 6) == 10.0);
}

TEST_CASE("q_rm examples") {
  CHECK(q_rm(LinearReward(64), world().d_r) == 0.5);
  CHECK(q_rm(AffineReward(OracleReward(world().oracle), -1.0, 0.0), world().d_r) == 0.0);
  Rng rng(2);
  std::vector<double> w(256);
  for (double& x : w) x = rng.uniform() - 0.5;
  const LinearReward r(w);
  double count = 0.0;
  for (const auto& p : world().d_r) {
    const double a = r.score(p.instruction, p.preferred), b = r.score(p.instruction, p.rejected);
    count += a > b ? 1.0 : (a == b ? 0.5 : 0.0);
  }
  CHECK(q_rm(r, world().d_r) == count / static_cast<double>(world().d_r.size()));
  CHECK_THROWS_AS(q_rm(r, {}), DataError);
}

TEST_CASE("mismatch rate examples") {
  const OracleReward oracle(world().oracle);
  const AffineReward anti(oracle, -1.0, 0.0);
  const auto& base = sft_policy();
  const auto other = rl_improve(base, oracle, first_n(world().d_rl, 20), RlConfig{});
  const auto same = mismatch_rate(base, other, oracle, world().oracle, world().eval, 40);
  CHECK(same.rate == 0.0);
  const auto flipped = mismatch_rate(base, other, anti, world().oracle, world().eval, 40);
  bool any = false;
  for (const auto& p : flipped.pairs) any |= p.counted;
  if (any) CHECK(flipped.rate == 1.0);

  const auto rm = train_reward(world().d_r, RewardTrainConfig{});
  const auto res = mismatch_rate(base, other, rm, world().oracle, world().eval, 40);
  REQUIRE(res.pairs.size() == 40);
  double counted = 0.0, bad = 0.0;
  for (const auto& p : res.pairs) {
    const int rs = (p.reward_a > p.reward_b) - (p.reward_a < p.reward_b);
    const int qs = (p.quality_a > p.quality_b) - (p.quality_a < p.quality_b);
    if (rs == 0 && qs == 0) continue;
    counted += 1.0;
    bad += rs != qs ? 1.0 : 0.0;
  }
  CHECK(res.rate == doctest::Approx(counted > 0 ? bad / counted : 0.0).epsilon(1e-12));
}

TEST_CASE("two by two saturation grid is deterministic") {
  LadderConfig ladder;
  ladder.pm_sizes = {100, 400};
  ladder.rm_sizes = {100, 200};
  RlConfig rl;
  const auto a = saturation_sweep(world(), ladder, rl);
  REQUIRE(a.grid.size() == 2);
  CHECK(a.grid[0].size() == 2);
  CHECK(a.pm_quality.size() == 2);
  CHECK(a.rm_quality.size() == 2);
  CHECK(to_json(saturation_sweep(world(), ladder, rl, 2)) == to_json(a));
  ladder.pm_sizes = {400, 100};
  CHECK_THROWS_AS(saturation_sweep(world(), ladder, rl), ConfigError);
  ladder.pm_sizes = {100, 5000};
  CHECK_THROWS_AS(saturation_sweep(world(), ladder, rl), ConfigError);
}

TEST_CASE("ladder rungs are nested") {
  LadderConfig cfg;
  cfg.pm_sizes = {100, 200, 400};
  cfg.rm_sizes = {50, 100, 200};
  const auto ladder = build_ladder(world(), cfg);
  REQUIRE(ladder.pm_rungs.size() == 3);
  REQUIRE(ladder.rm_rungs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ladder.pm_rungs[i].first == cfg.pm_sizes[i]);
    CHECK(ladder.rm_rungs[i].first == cfg.rm_sizes[i]);
  }
  // Every word a smaller rung knows is known to the next one.
  for (std::size_t i = 1; i < 3; ++i) {
    const auto& small = ladder.pm_rungs[i - 1].second.vocab();
    const auto& big = ladder.pm_rungs[i].second.vocab();
    for (std::uint32_t t = 2; t < small.size(); ++t) CHECK(big.id(small.word(t)) != Vocabulary::kUnk);
  }
}

TEST_CASE("cross validation grid") {
  const auto rm = train_reward(world().d_r, RewardTrainConfig{});
  const auto cv = cross_validate(sft_policy(), rm, world(), 0, 1);
  REQUIRE(cv.values.size() == 2);
  for (const auto& row : cv.values) CHECK(row.size() == 3);
  const auto r_test = split(world().d_r, {0.8, 0.1, 0.1}, mix_seed(0, "cv-r"))[2];
  CHECK(cv.values[1][1] == q_rm(rm, r_test));
  const auto train = cv_training_sets(world());
  CHECK(train.d_p.size() == 320);
  CHECK(train.d_r.size() == 160);
  CHECK(to_json(cv).at("values").size() == 2);
}
