#include <fstream>
#include <map>
#include <memory>

#include "doctest.h"
#include "seam/config.hpp"
#include "test_util.hpp"

using namespace seam;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
  auto shared = std::make_shared<std::map<std::string, std::string>>(std::move(vars));
  return [shared](const char* k) -> const char* {
    auto it = shared->find(k);
    return it == shared->end() ? nullptr : it->second.c_str();
  };
}

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c;
  CHECK(c.samplers.contrast.k == 30);
  CHECK(c.samplers.contrast.lo == 0.8);
  CHECK(c.samplers.contrast.hi == 0.9);
  CHECK(c.samplers.degrade_n == 30);
  CHECK(c.fraction == 0.2);
  CHECK(c.mode == SeamMode::log);
  CHECK(c.variants.size() == 3);
  CHECK(c.augment.per_target == 5);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("effective config round trips") {
  RunConfig c;
  c.seed = 9;
  c.fraction = 0.3;
  c.mode = SeamMode::prob;
  c.variants = {Variant::degrade};
  c.paths.out = "elsewhere";
  const auto j = to_json(c);
  CHECK(to_json(run_config_from_json(j)) == j);
  CHECK(j.at("format_version") == kConfigFormatVersion);
}

TEST_CASE("unknown keys and versions are rejected") {
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"fractoin", 0.2}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"samplers", {{"kk", 3}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 2}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"seam", {{"mode", "linear"}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"filter", {{"fraction", 1.5}}}}), ConfigError);
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"ngram", {{"order", 6}}}}), ConfigError);
  CHECK_NOTHROW(run_config_from_json(json{{"format_version", 1}, {"ngram", {{"order", 5}}}}));
  CHECK_THROWS_AS(run_config_from_json(json{{"format_version", 1}, {"samplers", {{"sim_lo", 0.9}, {"sim_hi", 0.8}}}}),
                  ConfigError);
}

TEST_CASE("overrides") {
  json doc = to_json(RunConfig{});
  apply_override(doc, "filter.fraction=0.4");
  apply_override(doc, "seam.mode=prob");
  apply_override(doc, "world.n_sft=500");
  apply_override(doc, "samplers.attack.n_probes=7");
  const auto c = run_config_from_json(doc);
  CHECK(c.fraction == 0.4);
  CHECK(c.mode == SeamMode::prob);
  CHECK(c.world.n_sft == 500);
  CHECK(c.samplers.attack.n_probes == 7);
  CHECK_THROWS_AS(apply_override(doc, "no-equals"), ConfigError);
}

TEST_CASE("environment fills only empty fields") {
  RunConfig c;
  c.backends.reward_url = "http://from-file";
  apply_environment(c, env_of({{"SEAM_POLICY_URL", "http://env-policy"},
                               {"SEAM_REWARD_URL", "http://env-reward"},
                               {"SEAM_CACHE_DIR", "/tmp/cache"}}));
  CHECK(c.backends.policy_url == "http://env-policy");
  CHECK(c.backends.reward_url == "http://from-file");
  CHECK(c.paths.cache == "/tmp/cache");
}

TEST_CASE("fingerprint ignores paths and concurrency only") {
  RunConfig a, b;
  b.paths.out = "other";
  b.concurrency = 8;
  CHECK(config_fingerprint(a) == config_fingerprint(b));
  b.seed = 1;
  CHECK(config_fingerprint(a) != config_fingerprint(b));
  RunConfig d;
  d.fraction = 0.3;
  CHECK(config_fingerprint(a) != config_fingerprint(d));
}

TEST_CASE("path defaults hang off the output directory") {
  PathConfig p;
  p.out = "run";
  CHECK(p.sft_path() == std::filesystem::path("run/world/d_p.jsonl"));
  CHECK(p.rl_path() == std::filesystem::path("run/world/d_rl.jsonl"));
  CHECK(p.policy_path() == std::filesystem::path("run/models/policy.json"));
  CHECK(p.report_path() == std::filesystem::path("run/scores.jsonl"));
  p.rl = "custom.jsonl";
  CHECK(p.rl_path() == std::filesystem::path("custom.jsonl"));
}

TEST_CASE("config files") {
  test::TempDir dir("cfg");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"format_version": 1, "seed": 4, "filter": {"fraction": 0.1}})";
  }
  const auto c = load_run_config(dir / "c.json");
  CHECK(c.seed == 4);
  CHECK(c.fraction == 0.1);
  {
    std::ofstream f(dir / "bad.json");
    f << "{ nope";
  }
  CHECK_THROWS_AS(load_run_config(dir / "bad.json"), ConfigError);
  CHECK_THROWS_AS(load_run_config(dir / "missing.json"), ConfigError);
}
