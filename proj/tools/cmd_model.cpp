// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <memory>

#include "cli.hpp"
#include "dysco/error.hpp"
#include "dysco/manifest.hpp"
#include "dysco/weights.hpp"
#include "dysco/zoo.hpp"

namespace dysco::cli {

namespace {

struct BuildModelFlags {
  std::string out, tokenizer, model_id = "induction";
  std::optional<std::size_t> vocab;
  double sharpness = 1.0;
  std::uint64_t seed = 0;
};

struct BuildTokenizerFlags {
  std::string out;
  bool byte_level = false;
};

struct DetectFlags {
  std::string model, out;
  std::vector<std::string> tasks;
  std::optional<std::size_t> k;
  std::size_t calib_count = 16, calib_pairs = 64, workers = 1;
  std::uint64_t seed = 0;
};

struct ValidateFlags {
  std::string model, manifest;
  double tolerance = kFixtureTolerance;
};

void build_model(const BuildModelFlags& f) {
  InductionModelSpec spec;
  require(!(f.vocab && !f.tokenizer.empty()), ErrorKind::kValidation, "give at most one of --vocab, --tokenizer");
  if (f.vocab) spec.vocab_size = *f.vocab;
  if (!f.tokenizer.empty()) {
    require_file(f.tokenizer, "tokenizer");
    spec.vocab_size = Tokenizer::load(f.tokenizer).vocab_size();
  }
  spec.sharpness = f.sharpness;
  spec.seed = f.seed;
  auto built = build_induction_model(spec);
  const Model model(built.config, std::move(built.tensors));
  if (std::filesystem::path(f.out).has_parent_path()) {
    std::filesystem::create_directories(std::filesystem::path(f.out).parent_path());
  }
  save_model(f.out, model, f.model_id);
  std::cout << "wrote " << f.out << "  vocab=" << spec.vocab_size << "  layers=" << built.config.n_layers
            << "  heads/layer=" << built.config.n_heads << '\n';
}

void build_tokenizer(const BuildTokenizerFlags& f) {
  const auto tok = f.byte_level ? Tokenizer::byte_level() : build_path_tokenizer();
  if (std::filesystem::path(f.out).has_parent_path()) {
    std::filesystem::create_directories(std::filesystem::path(f.out).parent_path());
  }
  tok.save(f.out);
  std::cout << "wrote " << f.out << "  vocab=" << tok.vocab_size() << "  merges=" << tok.merges().size() << '\n';
}

void detect(const DetectFlags& f) {
  const auto path = resolve_model_path(f.model);
  const auto model = load_model(path);
  const auto total = model.config().n_layers * model.config().n_heads;
  std::size_t k = std::min(kDefaultDetectedHeads, total);
  if (f.k) {
    require(*f.k >= 1 && *f.k <= total, ErrorKind::kValidation,
            "--k " + std::to_string(*f.k) + " exceeds the model's " + std::to_string(total) + " heads");
    k = *f.k;
  }
  std::vector<CalibrationExample> examples;
  for (const auto& t : f.tasks) {
    const auto task = load_task(t);
    require(std::holds_alternative<RecallTask>(task), ErrorKind::kValidation,
            "calibration task '" + t + "' is not a recall task");
    examples.push_back(recall_calibration(std::get<RecallTask>(task)));
  }
  if (f.tasks.empty()) {
    for (std::size_t i = 0; i < f.calib_count; ++i) {
      const auto task = gen_recall_task(f.calib_pairs, split_seed(f.seed, i), model.config().vocab_size);
      examples.push_back(recall_calibration(task));
    }
  }
  const auto ranking = detect_heads(model, examples, k, f.workers);
  const auto meta = read_weights(path).metadata;
  save_heads(f.out, ranking, meta.value("model_id", std::string("unknown")));
  std::cout << "rank  head    qrscore\n";
  for (std::size_t i = 0; i < ranking.selected.size(); ++i) {
    const auto& h = ranking.selected[i];
    std::cout << format("%4.0f", static_cast<double>(i + 1)) << "  " << to_string(h) << "  "
              << format("%.4f", ranking.scores.at(h)) << '\n';
  }
  std::cout << "wrote " << f.out << " (" << examples.size() << " calibration examples)\n";
}

void validate(const ValidateFlags& f) {
  const auto path = resolve_model_path(f.model);
  require_file(f.manifest, "manifest");
  const auto weights = read_weights(path);
  const auto manifest = read_manifest(f.manifest);
  const auto config = read_model_config(path);
  verify_manifest(manifest, weights, config);
  std::cout << "tensors ok (" << manifest.tensors.size() << " checksums)\n";
  const Model model(config, weights.tensors);
  const auto dev = fixture_deviations(model, manifest);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    std::cout << "reference " << i << "  tokens=" << manifest.reference[i].prompt_tokens.size()
              << "  max|dlogit|=" << format("%.3g", dev[i]) << '\n';
  }
  validate_against_fixture(model, manifest, f.tolerance);
  std::cout << "fixtures ok (tolerance " << format("%.0e", f.tolerance) << ")\n";
}

}  // namespace

void register_model_commands(CLI::App& app) {
  auto bf = std::make_shared<BuildModelFlags>();
  auto* bm = app.add_subcommand("build-model", "Write the analytic induction model");
  bm->add_option("--out", bf->out, "Output .dymw file")->required();
  bm->add_option("--vocab", bf->vocab, "Vocabulary size (default 8000)");
  bm->add_option("--tokenizer", bf->tokenizer, "Take the vocabulary size from this tokenizer");
  bm->add_option("--sharpness", bf->sharpness, "Wired head query scale");
  bm->add_option("--seed", bf->seed, "Seed for the non-wired heads");
  bm->add_option("--model-id", bf->model_id, "Identifier stored in the file");
  bm->callback([bf] { build_model(*bf); });

  auto tf = std::make_shared<BuildTokenizerFlags>();
  auto* bt = app.add_subcommand("build-tokenizer", "Write the path-task tokenizer JSON");
  bt->add_option("--out", tf->out, "Output JSON")->required();
  bt->add_flag("--byte", tf->byte_level, "Byte-level tokenizer instead");
  bt->callback([tf] { build_tokenizer(*tf); });

  auto df = std::make_shared<DetectFlags>();
  auto* dh = app.add_subcommand("detect-heads", "Rank heads by QRScore on calibration tasks");
  dh->add_option("--model", df->model, "Model .dymw file")->required();
  dh->add_option("--out", df->out, "Head list JSON")->required();
  dh->add_option("--task", df->tasks, "Recall task files (default: generated)");
  dh->add_option("--k", df->k, "Heads to keep (default min(16, heads))");
  dh->add_option("--calib-count", df->calib_count, "Generated calibration examples");
  dh->add_option("--calib-pairs", df->calib_pairs, "Pairs per generated example");
  dh->add_option("--seed", df->seed, "Seed for generated calibration");
  dh->add_option("--workers", df->workers, "Worker threads");
  dh->callback([df] { detect(*df); });

  auto vf = std::make_shared<ValidateFlags>();
  auto* va = app.add_subcommand("validate", "Check a converted model against its manifest and reference logits");
  va->add_option("--model", vf->model, "Model .dymw file")->required();
  va->add_option("--manifest", vf->manifest, "Conversion manifest JSON")->required();
  va->add_option("--tolerance", vf->tolerance, "Max absolute logit deviation");
  va->callback([vf] { validate(*vf); });
}

}  // namespace dysco::cli
