// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

// Thin bindings; structured values cross the boundary as JSON text and are
// turned into dicts by the Python package.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "dysco/decoder.hpp"
#include "dysco/error.hpp"
#include "dysco/manifest.hpp"
#include "dysco/tasks.hpp"
#include "dysco/weights.hpp"
#include "dysco/zoo.hpp"

namespace py = pybind11;
using namespace dysco;

namespace {

std::vector<HeadId> to_heads(const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  std::vector<HeadId> out;
  for (const auto& [l, h] : pairs) out.push_back(HeadId{l, h});
  return out;
}

py::array_t<float> to_array(const std::vector<float>& v) {
  return py::array_t<float>(static_cast<py::ssize_t>(v.size()), v.data());
}

Model induction_model(std::size_t vocab_size, double sharpness, std::uint64_t seed) {
  InductionModelSpec spec;
  spec.vocab_size = vocab_size;
  spec.sharpness = sharpness;
  spec.seed = seed;
  auto built = build_induction_model(spec);
  return Model(built.config, std::move(built.tensors));
}

DecodePolicy policy_from(const std::string& policy_json, const std::vector<std::pair<std::size_t, std::size_t>>& heads,
                         std::uint64_t seed) {
  return make_policy(parse_policy_config(nlohmann::json::parse(policy_json)), to_heads(heads), seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "dysco decoding runtime";

  py::register_exception<Error>(m, "DyscoError");

  py::class_<Model>(m, "Model")
      .def_property_readonly("config_json", [](const Model& self) { return config_to_json(self.config()).dump(); })
      .def(
          "logits",
          [](const Model& self, const std::vector<TokenId>& tokens) {
            return to_array(prefill(self, tokens, {}, 0).logits);
          },
          py::arg("tokens"), "Next-token logits after `tokens`.")
      .def(
          "attention",
          [](const Model& self, const std::vector<TokenId>& tokens, std::size_t layer, std::size_t head) {
            const HeadId id{layer, head};
            const auto res = prefill(self, tokens, std::vector<HeadId>{id}, 1);
            return to_array(res.traces.back().at(id).probs);
          },
          py::arg("tokens"), py::arg("layer"), py::arg("head"), "Attention row of the last position.")
      .def("save", [](const Model& self, const std::filesystem::path& path, const std::string& model_id) {
        save_model(path, self, model_id);
      }, py::arg("path"), py::arg("model_id") = "model");

  m.def("load_model", &load_model, py::arg("path"));
  m.def("build_induction_model", &induction_model, py::arg("vocab_size") = 8000, py::arg("sharpness") = 1.0,
        py::arg("seed") = 0);

  py::class_<Tokenizer>(m, "Tokenizer")
      .def_static("byte_level", &Tokenizer::byte_level)
      .def_static("load", &Tokenizer::load, py::arg("path"))
      .def_property_readonly("vocab_size", &Tokenizer::vocab_size)
      .def("encode", [](const Tokenizer& t, const std::string& s) { return t.encode(s); }, py::arg("text"))
      .def("decode", [](const Tokenizer& t, const std::vector<TokenId>& ids) { return py::bytes(t.decode(ids)); },
           py::arg("ids"))
      .def("save", &Tokenizer::save, py::arg("path"));
  m.def("build_path_tokenizer", &build_path_tokenizer);

  m.def(
      "select_top",
      [](const std::vector<double>& r, double p, std::size_t K) { return select_top(r, p, K); }, py::arg("relevance"),
      py::arg("p"), py::arg("K"));
  m.def(
      "build_bias",
      [](const std::vector<std::size_t>& selected, double beta, std::size_t length) {
        return to_array(build_bias(selected, beta, length));
      },
      py::arg("selected"), py::arg("beta"), py::arg("length"));

  m.def(
      "detect_heads",
      [](const Model& model, std::size_t k, std::size_t n_examples, std::size_t n_pairs, std::uint64_t seed) {
        std::vector<CalibrationExample> cal;
        for (std::size_t i = 0; i < n_examples; ++i) {
          cal.push_back(recall_calibration(gen_recall_task(n_pairs, seed + i, model.config().vocab_size)));
        }
        const auto ranking = detect_heads(model, cal, k);
        std::vector<std::tuple<std::size_t, std::size_t, double>> out;
        for (const auto& h : ranking.selected) out.emplace_back(h.layer, h.head, ranking.scores.at(h));
        return out;
      },
      py::arg("model"), py::arg("k"), py::arg("n_examples") = 16, py::arg("n_pairs") = 64, py::arg("seed") = 100000);

  m.def(
      "gen_recall_task_json",
      [](std::size_t n_pairs, std::uint64_t seed, std::size_t vocab, std::size_t n_queries) {
        return to_json(gen_recall_task(n_pairs, seed, vocab, n_queries)).dump();
      },
      py::arg("n_pairs"), py::arg("seed"), py::arg("vocab_size") = 8000, py::arg("n_queries") = 1);
  m.def(
      "gen_path_task_json",
      [](std::size_t n_edges, std::size_t path_len, std::uint64_t seed, const Tokenizer& tok) {
        return to_json(gen_path_task(n_edges, path_len, seed, tok)).dump();
      },
      py::arg("n_edges"), py::arg("path_len"), py::arg("seed"), py::arg("tokenizer"));

  m.def(
      "run_recall_json",
      [](const Model& model, const std::string& task_json, const std::string& policy_json,
         const std::vector<std::pair<std::size_t, std::size_t>>& heads, std::uint64_t seed) {
        const auto task = recall_from_json(nlohmann::json::parse(task_json));
        py::gil_scoped_release release;
        const auto out = run_recall(model, task, policy_from(policy_json, heads, seed));
        return nlohmann::json{{"answers", out.answers}, {"correct", out.correct}, {"accuracy", out.accuracy()}}.dump();
      },
      py::arg("model"), py::arg("task_json"), py::arg("policy_json"), py::arg("heads"), py::arg("seed") = 0);

  m.def(
      "flops_json",
      [](std::size_t prefill_len, std::size_t decode_len, double partial) {
        const auto r = flops_estimate(flops_reference_config(), prefill_len, decode_len, partial);
        return nlohmann::json{{"parameters", r.parameters}, {"prefill", r.prefill},         {"decode", r.decode},
                              {"partial", r.partial},       {"decode_ratio", r.decode_ratio}, {"overhead_ratio", r.overhead_ratio}}
            .dump();
      },
      py::arg("prefill"), py::arg("decode"), py::arg("partial"));

  m.def(
      "validate_manifest",
      [](const std::filesystem::path& model_path, const std::filesystem::path& manifest_path, double tolerance) {
        const auto weights = read_weights(model_path);
        const auto config = read_model_config(model_path);
        const auto manifest = read_manifest(manifest_path);
        verify_manifest(manifest, weights, config);
        const Model model(config, weights.tensors);
        auto dev = fixture_deviations(model, manifest);
        validate_against_fixture(model, manifest, tolerance);
        return dev;
      },
      py::arg("model_path"), py::arg("manifest_path"), py::arg("tolerance") = kFixtureTolerance,
      "Checks checksums and reference logits; returns the per-fixture max deviation.");
}
