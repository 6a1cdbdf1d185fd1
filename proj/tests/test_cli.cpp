#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "seam/cli.hpp"
#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "test_util.hpp"

using namespace seam;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = 0;
  std::string out, err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(args, out, err, [](const char*) -> const char* { return nullptr; });
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

std::size_t lines(const fs::path& p) {
  std::ifstream f(p);
  std::size_t n = 0;
  for (std::string s; std::getline(f, s);) n += !s.empty();
  return n;
}

// Writes the first n lines of the generated RL corpus to `dst`.
void head(const fs::path& src, const fs::path& dst, std::size_t n) {
  std::ifstream in(src);
  std::ofstream out(dst);
  std::string s;
  for (std::size_t i = 0; i < n && std::getline(in, s); ++i) out << s << "\n";
}

void write_config(const fs::path& p) {
  std::ofstream f(p);
  f << R"({"format_version":1,
    "world":{"n_sft":300,"n_pref":150,"n_rl":50,"n_eval":20,"n_pref_test":20},
    "samplers":{"k":5,"sim_lo":0.3,"degrade_n":5,"attack":{"n_probes":5}},
    "augment":{"per_target":3},
    "lab":{"eval_samples":1,"mismatch_n":20},
    "ladder":{"pm_sizes":[100,300],"rm_sizes":[50,150]}})";
}

// Generated world and models shared by the tests below.
class Workspace {
 public:
  Workspace() : dir_("cli") {
    write_config(config());
    REQUIRE(cli({"-c", config().string(), "-o", out().string(), "synth"}).code == 0);
    REQUIRE(cli({"-c", config().string(), "-o", out().string(), "train", "all"}).code == 0);
  }
  fs::path config() const { return dir_ / "config.json"; }
  fs::path out() const { return dir_ / "out"; }
  fs::path root() const { return dir_.path(); }

 private:
  test::TempDir dir_;
};

Workspace& ws() {
  static Workspace w;
  return w;
}

std::vector<std::string> base(const fs::path& out) { return {"-c", ws().config().string(), "-o", out.string()}; }

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("exit codes map error kinds") {
  CHECK(exit_code_for(ConfigError("x")) == 2);
  CHECK(exit_code_for(DataError("x")) == 3);
  CHECK(exit_code_for(BackendError("x")) == 4);
  CHECK(exit_code_for(std::runtime_error("x")) == 1);
  const auto j = error_json(DataError("bad line"));
  CHECK(j.at("error").at("type") == "data");
  CHECK(j.at("error").at("message") == "bad line");
  CHECK(summary_path_for("a/scores.jsonl") == fs::path("a/scores.summary.json"));
}

TEST_CASE("usage and config errors exit 2 with json") {
  const auto bad_flag = cli({"--no-such-flag", "synth"});
  CHECK(bad_flag.code == 2);
  CHECK(json::parse(bad_flag.err).contains("error"));
  test::TempDir dir("cli-bad");
  {
    std::ofstream f(dir / "c.json");
    f << R"({"format_version":1,"typo":1})";
  }
  const auto unknown = cli({"-c", (dir / "c.json").string(), "synth"});
  CHECK(unknown.code == 2);
  CHECK(json::parse(unknown.err).at("error").at("type") == "config");
  CHECK(cli({"-o", (dir / "o").string(), "lab", "nonsense"}).code == 2);
  CHECK(cli({"-o", (dir / "o").string(), "--lenient", "lab", "ordering"}).code == 2);
}

TEST_CASE("missing inputs exit 3") {
  test::TempDir dir("cli-missing");
  const auto r = cli({"-o", (dir / "o").string(), "score"});
  CHECK(r.code == 3);
  CHECK(json::parse(r.err).at("error").at("type") == "data");
}

TEST_CASE("unreachable backend exits 4") {
  const auto out = ws().root() / "remote";
  const auto r = cli(with(base(out), {"--world", (ws().out() / "world").string(), "--set",
                                      "paths.policy=" + (ws().out() / "models/policy.json").string(), "--set",
                                      "backends.reward_url=\"http://127.0.0.1:1\"", "--set",
                                      "backends.timeout_ms=200", "--set", "backends.max_attempts=1", "score",
                                      "degrade"}));
  CHECK(r.code == 4);
  CHECK(json::parse(r.err).at("error").at("type") == "backend");
}

TEST_CASE("print-config emits the effective config") {
  const auto r = cli({"-c", ws().config().string(), "--set", "filter.fraction=0.3", "--print-config"});
  REQUIRE(r.code == 0);
  const auto j = json::parse(r.out);
  CHECK(j.at("filter").at("fraction") == 0.3);
  CHECK(j.at("world").at("n_sft") == 300);
}

TEST_CASE("synth and train outputs") {
  const auto out = ws().out();
  for (const char* f : {"world/d_p.jsonl", "world/d_r.jsonl", "world/d_rl.jsonl", "world/lexicon.jsonl",
                        "models/policy.json", "models/reward.json", "manifests/synth.json", "manifests/train-all.json"}) {
    CHECK_MESSAGE(fs::exists(out / f), f);
  }
  CHECK(lines(out / "world/d_rl.jsonl") == 50);
  const auto manifest = json::parse(slurp(out / "manifests/train-all.json"));
  CHECK(manifest.contains("config_fingerprint"));
  for (const auto& [path, digest] : manifest.at("files").items()) {
    CHECK(sha256_hex(slurp(out / path)) == digest.get<std::string>());
  }
  const auto reward = json::parse(slurp(out / "models/reward.json"));
  CHECK(reward.contains("config_fingerprint"));
}

TEST_CASE("three samples times three variants give nine records") {
  const auto out = ws().root() / "three";
  fs::create_directories(out);
  head(ws().out() / "world/d_rl.jsonl", out / "rl3.jsonl", 3);
  const auto args = with(base(out), {"--world", (ws().out() / "world").string(), "--set",
                                     "paths.rl=" + (out / "rl3.jsonl").string(), "--set",
                                     "paths.policy=" + (ws().out() / "models/policy.json").string(), "--set",
                                     "paths.reward=" + (ws().out() / "models/reward.json").string(), "score", "all"});
  const auto r = cli(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(lines(out / "scores.jsonl") == 9);
  const auto summary = json::parse(slurp(out / "scores.summary.json"));
  CHECK(summary.at("records") == 9);
  CHECK(summary.contains("config_fingerprint"));
  const auto first = slurp(out / "scores.jsonl");
  REQUIRE(cli(args).code == 0);
  CHECK(slurp(out / "scores.jsonl") == first);
}

TEST_CASE("filter keeps eight of ten and reruns are byte identical") {
  const auto out = ws().root() / "ten";
  fs::create_directories(out);
  head(ws().out() / "world/d_rl.jsonl", out / "rl10.jsonl", 10);
  const auto common = with(base(out), {"--world", (ws().out() / "world").string(), "--set",
                                       "paths.rl=" + (out / "rl10.jsonl").string(), "--set",
                                       "paths.policy=" + (ws().out() / "models/policy.json").string(), "--set",
                                       "paths.reward=" + (ws().out() / "models/reward.json").string(), "--set",
                                       "filter.variant=degrade"});
  REQUIRE(cli(with(common, {"score", "degrade"})).code == 0);
  REQUIRE(cli(with(common, {"--fraction", "0.2", "filter"})).code == 0);
  CHECK(lines(out / "filtered.jsonl") == 8);
  const auto sel = json::parse(slurp(out / "selection.json"));
  CHECK(sel.at("removed").size() == 2);
  CHECK(sel.contains("config_fingerprint"));

  std::map<std::string, std::string> before;
  for (const char* f : {"scores.jsonl", "scores.summary.json", "filtered.jsonl", "selection.json"}) {
    before[f] = slurp(out / f);
  }
  REQUIRE(cli(with(common, {"score", "degrade"})).code == 0);
  REQUIRE(cli(with(common, {"--fraction", "0.2", "filter"})).code == 0);
  for (const auto& [f, text] : before) CHECK_MESSAGE(slurp(out / f) == text, f);

  REQUIRE(cli(with(common, {"--fraction", "0.2", "augment"})).code == 0);
  CHECK(lines(out / "augment_pm.jsonl") == 6);
  CHECK(fs::exists(out / "augment.json"));
}

TEST_CASE("probe, lab and report commands") {
  const auto out = ws().root() / "lab";
  const auto common = with(base(out), {"--world", (ws().out() / "world").string(), "--set",
                                       "paths.policy=" + (ws().out() / "models/policy.json").string(), "--set",
                                       "paths.reward=" + (ws().out() / "models/reward.json").string()});
  const auto probe = cli(with(common, {"probe"}));
  REQUIRE_MESSAGE(probe.code == 0, probe.err);
  const auto ps = json::parse(slurp(out / "probe/summary.json"));
  CHECK(ps.at("attack_success_rate").get<double>() >= 0.0);
  CHECK(ps.at("attack_success_rate").get<double>() <= 1.0);

  const auto lab = cli(with(common, {"lab", "mismatch"}));
  REQUIRE_MESSAGE(lab.code == 0, lab.err);
  const auto m = json::parse(slurp(out / "lab/mismatch.json"));
  CHECK(m.at("experiment") == "mismatch");

  const auto report = cli(with(common, {"report"}));
  REQUIRE_MESSAGE(report.code == 0, report.err);
  CHECK(fs::exists(out / "report/summary.json"));
}

#ifdef SEAM_CLI_PATH
TEST_CASE("installed binary reports errors on stderr") {
  test::TempDir dir("cli-bin");
  const std::string cmd = std::string(SEAM_CLI_PATH) + " -o " + (dir / "o").string() + " score 2> " +
                          (dir / "err.json").string();
  const int status = std::system(cmd.c_str());
  CHECK(WEXITSTATUS(status) == 3);
  CHECK(json::parse(slurp(dir / "err.json")).at("error").at("type") == "data");
}
#endif
