#include "seam/config.hpp"

#include <set>

#include "seam/error.hpp"
#include "seam/hashing.hpp"
#include "seam/io.hpp"

namespace seam {

namespace {

// Reads the known keys of one object and rejects the rest on finish().
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
  }

  const json* find(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <class T>
  void get(const char* key, T& out) {
    if (const json* v = find(key)) {
      try {
        out = v->get<T>();
      } catch (const json::exception&) {
        throw ConfigError(where_ + "." + key + ": wrong type");
      }
    }
  }

  void path(const char* key, std::filesystem::path& out) {
    std::string s = out.string();
    get(key, s);
    out = s;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError("unknown key '" + where_ + "." + k + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

json paths_json(const PathConfig& p) {
  return json{{"world", p.world.string()},   {"sft", p.sft.string()},
              {"preference", p.preference.string()}, {"rl", p.rl.string()},
              {"policy", p.policy.string()}, {"reward", p.reward.string()},
              {"lexicon", p.lexicon.string()}, {"report", p.report.string()},
              {"out", p.out.string()},       {"cache", p.cache.string()}};
}

void read_paths(const json& j, PathConfig& p) {
  Section s(j, "paths");
  s.path("world", p.world);
  s.path("sft", p.sft);
  s.path("preference", p.preference);
  s.path("rl", p.rl);
  s.path("policy", p.policy);
  s.path("reward", p.reward);
  s.path("lexicon", p.lexicon);
  s.path("report", p.report);
  s.path("out", p.out);
  s.path("cache", p.cache);
  s.finish();
}

json attack_json(const AttackConfig& a) {
  return json{{"n_probes", a.n_probes},         {"max_replace_frac", a.max_replace_frac},
              {"max_restarts", a.max_restarts}, {"restart_keep", a.restart_keep},
              {"patience", a.patience}};
}

void read_attack(const json& j, AttackConfig& a) {
  Section s(j, "samplers.attack");
  s.get("n_probes", a.n_probes);
  s.get("max_replace_frac", a.max_replace_frac);
  s.get("max_restarts", a.max_restarts);
  s.get("restart_keep", a.restart_keep);
  s.get("patience", a.patience);
  s.finish();
}

std::vector<std::string> variant_names(const std::vector<Variant>& vs) {
  std::vector<std::string> out;
  for (auto v : vs) out.push_back(to_string(v));
  return out;
}

}  // namespace

void RunConfig::validate() const {
  if (format_version != kConfigFormatVersion) {
    throw ConfigError("unsupported config format_version " + std::to_string(format_version));
  }
  if (concurrency < 1) throw ConfigError("concurrency must be >= 1");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ConfigError("fraction must lie in [0, 1]");
  if (variants.empty()) throw ConfigError("at least one variant is required");
  if (!(samplers.contrast.lo <= samplers.contrast.hi)) throw ConfigError("similarity band lo > hi");
  if (samplers.contrast.k < 1 || samplers.degrade_n < 1 || samplers.attack.n_probes < 1) {
    throw ConfigError("probe counts must be >= 1");
  }
  if (samplers.embedding_dim < 1) throw ConfigError("embedding_dim must be >= 1");
  if (ngram.order < 2 || ngram.order > 5) throw ConfigError("ngram order must lie in [2, 5]");
  if (!(ngram.discount > 0.0 && ngram.discount < 1.0)) throw ConfigError("ngram discount must lie in (0, 1)");
  if (reward_train.dim < 1 || reward_train.epochs < 0) throw ConfigError("invalid reward_train");
  if (augment.per_target < 1) throw ConfigError("augment per_target must be >= 1");
  if (lab.eval_samples < 1) throw ConfigError("lab eval_samples must be >= 1");
  for (double f : lab.fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("lab fractions must lie in [0, 1]");
  }
  if (backends.timeout_ms < 1 || backends.max_attempts < 1) throw ConfigError("invalid backend limits");
  world.validate();
  rl.validate();
}

json to_json(const RunConfig& c) {
  json strict = c.strict ? json(*c.strict) : json(nullptr);
  return json{
      {"format_version", c.format_version},
      {"seed", c.seed},
      {"concurrency", c.concurrency},
      {"strict", strict},
      {"paths", paths_json(c.paths)},
      {"backends",
       {{"policy_url", c.backends.policy_url},
        {"reward_url", c.backends.reward_url},
        {"embed_url", c.backends.embed_url},
        {"generator_url", c.backends.generator_url},
        {"timeout_ms", c.backends.timeout_ms},
        {"max_attempts", c.backends.max_attempts}}},
      {"world", to_json(c.world)},
      {"ngram", {{"order", c.ngram.order}, {"discount", c.ngram.discount}}},
      {"reward_train",
       {{"dim", c.reward_train.dim},
        {"epochs", c.reward_train.epochs},
        {"learning_rate", c.reward_train.learning_rate},
        {"seed", c.reward_train.seed}}},
      {"samplers",
       {{"k", c.samplers.contrast.k},
        {"sim_lo", c.samplers.contrast.lo},
        {"sim_hi", c.samplers.contrast.hi},
        {"degrade_n", c.samplers.degrade_n},
        {"embedding_dim", c.samplers.embedding_dim},
        {"attack", attack_json(c.samplers.attack)}}},
      {"seam", {{"mode", to_string(c.mode)}, {"variants", variant_names(c.variants)}}},
      {"filter", {{"fraction", c.fraction}, {"variant", to_string(c.filter_variant)}}},
      {"augment", {{"per_target", c.augment.per_target}, {"pm", to_string(c.augment.pm)}}},
      {"rl", to_json(c.rl)},
      {"ladder",
       {{"pm_sizes", c.ladder.pm_sizes}, {"rm_sizes", c.ladder.rm_sizes}, {"seed", c.ladder.seed}}},
      {"lab",
       {{"eval_samples", c.lab.eval_samples},
        {"fractions", c.lab.fractions},
        {"mismatch_n", c.lab.mismatch_n}}},
  };
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Section top(j, "config");
  top.get("format_version", c.format_version);
  if (c.format_version != kConfigFormatVersion) {
    throw ConfigError("unsupported config format_version " + std::to_string(c.format_version));
  }
  top.get("seed", c.seed);
  top.get("concurrency", c.concurrency);
  if (const json* v = top.find("strict"); v && !v->is_null()) {
    if (!v->is_boolean()) throw ConfigError("config.strict: wrong type");
    c.strict = v->get<bool>();
  }
  if (const json* v = top.find("paths")) read_paths(*v, c.paths);
  if (const json* v = top.find("backends")) {
    Section s(*v, "backends");
    s.get("policy_url", c.backends.policy_url);
    s.get("reward_url", c.backends.reward_url);
    s.get("embed_url", c.backends.embed_url);
    s.get("generator_url", c.backends.generator_url);
    s.get("timeout_ms", c.backends.timeout_ms);
    s.get("max_attempts", c.backends.max_attempts);
    s.finish();
  }
  if (const json* v = top.find("world")) {
    json merged = to_json(c.world);
    if (!v->is_object()) throw ConfigError("world must be an object");
    merged.merge_patch(*v);
    c.world = world_config_from_json(merged);
  }
  if (const json* v = top.find("ngram")) {
    Section s(*v, "ngram");
    s.get("order", c.ngram.order);
    s.get("discount", c.ngram.discount);
    s.finish();
  }
  if (const json* v = top.find("reward_train")) {
    Section s(*v, "reward_train");
    s.get("dim", c.reward_train.dim);
    s.get("epochs", c.reward_train.epochs);
    s.get("learning_rate", c.reward_train.learning_rate);
    s.get("seed", c.reward_train.seed);
    s.finish();
  }
  if (const json* v = top.find("samplers")) {
    Section s(*v, "samplers");
    s.get("k", c.samplers.contrast.k);
    s.get("sim_lo", c.samplers.contrast.lo);
    s.get("sim_hi", c.samplers.contrast.hi);
    s.get("degrade_n", c.samplers.degrade_n);
    s.get("embedding_dim", c.samplers.embedding_dim);
    if (const json* a = s.find("attack")) read_attack(*a, c.samplers.attack);
    s.finish();
  }
  if (const json* v = top.find("seam")) {
    Section s(*v, "seam");
    std::string mode = to_string(c.mode);
    std::vector<std::string> variants = variant_names(c.variants);
    s.get("mode", mode);
    s.get("variants", variants);
    s.finish();
    c.mode = seam_mode_from_string(mode);
    c.variants.clear();
    for (const auto& name : variants) c.variants.push_back(variant_from_string(name));
  }
  if (const json* v = top.find("filter")) {
    Section s(*v, "filter");
    std::string variant = to_string(c.filter_variant);
    s.get("fraction", c.fraction);
    s.get("variant", variant);
    s.finish();
    c.filter_variant = variant_from_string(variant);
  }
  if (const json* v = top.find("augment")) {
    Section s(*v, "augment");
    std::string pm = to_string(c.augment.pm);
    s.get("per_target", c.augment.per_target);
    s.get("pm", pm);
    s.finish();
    c.augment.pm = pm_augmentation_from_string(pm);
  }
  if (const json* v = top.find("rl")) {
    json merged = to_json(c.rl);
    if (!v->is_object()) throw ConfigError("rl must be an object");
    merged.merge_patch(*v);
    c.rl = rl_config_from_json(merged);
  }
  if (const json* v = top.find("ladder")) {
    Section s(*v, "ladder");
    s.get("pm_sizes", c.ladder.pm_sizes);
    s.get("rm_sizes", c.ladder.rm_sizes);
    s.get("seed", c.ladder.seed);
    s.finish();
  }
  if (const json* v = top.find("lab")) {
    Section s(*v, "lab");
    s.get("eval_samples", c.lab.eval_samples);
    s.get("fractions", c.lab.fractions);
    s.get("mismatch_n", c.lab.mismatch_n);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  try {
    return run_config_from_json(json::parse(text));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed config (" + e.what() + ")");
  }
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "' has an empty key segment");
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override '" + key + "' descends into a non-object");
      *node = json::object();
    }
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

void apply_environment(RunConfig& c, const EnvLookup& env) {
  auto fill = [&](std::string& field, const char* name) {
    if (!field.empty()) return;
    if (const char* v = env(name); v && *v) field = v;
  };
  fill(c.backends.policy_url, "SEAM_POLICY_URL");
  fill(c.backends.reward_url, "SEAM_REWARD_URL");
  fill(c.backends.embed_url, "SEAM_EMBED_URL");
  fill(c.backends.generator_url, "SEAM_GENERATOR_URL");
  if (c.paths.cache.empty()) {
    if (const char* v = env("SEAM_CACHE_DIR"); v && *v) c.paths.cache = v;
  }
}

std::string config_fingerprint(const RunConfig& c) {
  json j = to_json(c);
  j.erase("paths");
  j.erase("concurrency");
  return sha256_hex(canonical_dump(j));
}

}  // namespace seam
