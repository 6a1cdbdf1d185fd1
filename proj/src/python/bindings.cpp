#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "seam/cli.hpp"
#include "seam/config.hpp"
#include "seam/engine.hpp"
#include "seam/error.hpp"
#include "seam/models.hpp"

namespace py = pybind11;
using namespace seam;

namespace {

RlSample make_sample(const std::string& instruction, const std::string& golden) {
  return RlSample{Instruction::make("sample", instruction), Response::from_text(golden)};
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Seamlessness scoring for RLHF data";

  auto base = py::register_exception<Error>(m, "SeamError");
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<BackendError>(m, "BackendError", base.ptr());

  m.def("tokenize", [](const std::string& text) { return tokenize(text).tokens; });
  m.def("misjudgment", &misjudgment_from_scores, py::arg("golden"), py::arg("probe"));

  py::class_<NgramPolicy>(m, "Policy")
      .def_static("load", [](const std::string& path) { return NgramPolicy::from_json(load_model_json(path)); })
      .def_static("train", [](const std::string& sft_jsonl, int order, double discount) {
        return train_policy(load_sft(sft_jsonl), NgramConfig{order, discount});
      }, py::arg("sft_jsonl"), py::arg("order") = 3, py::arg("discount") = 0.75)
      .def("logprob", [](const NgramPolicy& p, const std::string& instruction, const std::string& response) {
        const auto lp = policy_logprob(p, Instruction::make("q", instruction), Response::from_text(response));
        return py::make_tuple(lp.per_token, lp.total);
      })
      .def("norm_loglik", [](const NgramPolicy& p, const std::string& instruction, const std::string& response) {
        return norm_loglik(p, Instruction::make("q", instruction), Response::from_text(response));
      })
      .def("sample", [](const NgramPolicy& p, const std::string& instruction, std::uint64_t seed, std::size_t max_len) {
        return policy_sample(p, Instruction::make("q", instruction), seed, max_len).text;
      }, py::arg("instruction"), py::arg("seed") = 0, py::arg("max_len") = 16)
      .def_property_readonly("fingerprint", &NgramPolicy::fingerprint);

  py::class_<LinearReward>(m, "Reward")
      .def_static("load", [](const std::string& path) { return LinearReward::from_json(load_model_json(path)); })
      .def_static("train", [](const std::string& pref_jsonl, int epochs, double learning_rate) {
        RewardTrainConfig c;
        c.epochs = epochs;
        c.learning_rate = learning_rate;
        return train_reward(load_preference(pref_jsonl), c);
      }, py::arg("pref_jsonl"), py::arg("epochs") = 12, py::arg("learning_rate") = 0.5)
      .def("score", [](const LinearReward& r, const std::string& instruction, const std::string& response) {
        return reward_score(r, Instruction::make("q", instruction), Response::from_text(response));
      })
      .def_property_readonly("fingerprint", &LinearReward::fingerprint);

  m.def("seam_score",
        [](const NgramPolicy& policy, const LinearReward& reward, const std::string& instruction,
           const std::string& golden, const std::vector<std::string>& probes, const std::string& mode) {
          const auto sample = make_sample(instruction, golden);
          ProbeSet set;
          set.sample_id = sample.id();
          set.target_size = probes.size();
          for (const auto& p : probes) set.probes.push_back({Response::from_text(p), {}});
          const auto rec = seam_score(policy, reward, sample, set, seam_mode_from_string(mode));
          return to_json(rec).dump();
        },
        py::arg("policy"), py::arg("reward"), py::arg("instruction"), py::arg("golden"), py::arg("probes"),
        py::arg("mode") = "log");

  m.def("default_config", [] { return to_json(RunConfig{}).dump(); });
  m.def("normalize_config", [](const std::string& doc) { return to_json(run_config_from_json(json::parse(doc))).dump(); });
  m.def("config_fingerprint", [](const std::string& doc) { return config_fingerprint(run_config_from_json(json::parse(doc))); });

  m.def("run_cli", [](const std::vector<std::string>& args) {
    std::ostringstream out, err;
    int code;
    {
      py::gil_scoped_release release;
      code = run_cli(args, out, err, [](const char* name) { return std::getenv(name); });
    }
    return py::make_tuple(code, out.str(), err.str());
  });
}
