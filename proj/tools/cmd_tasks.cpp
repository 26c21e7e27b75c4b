// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>
#include <memory>

#include "cli.hpp"
#include "dysco/error.hpp"
#include "dysco/weights.hpp"

namespace dysco::cli {

namespace {

struct GenPathFlags {
  std::optional<std::size_t> edges, tokens;
  std::size_t path_len = 4;
  std::optional<std::uint64_t> seed;
  std::string tokenizer, out;
};

struct GenRecallFlags {
  std::size_t pairs = 256, queries = 1, vocab = 8000, key_len = 1, value_len = 1;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct FlopsFlags {
  std::size_t prefill = 131072, decode = 4096;
  std::optional<double> partial;
  std::string model;
};

std::uint64_t need_seed(const std::optional<std::uint64_t>& seed) {
  require(seed.has_value(), ErrorKind::kValidation, "--seed is required");
  return *seed;
}

void report_task(const std::string& path, std::size_t tokens, std::uint64_t seed) {
  std::cout << "wrote " << path << "  tokens=" << tokens << "  seed=" << seed << '\n';
}

void gen_path(const GenPathFlags& f) {
  const auto seed = need_seed(f.seed);
  require(f.edges.has_value() != f.tokens.has_value(), ErrorKind::kValidation, "give exactly one of --edges, --tokens");
  const auto tok = load_tokenizer_or_default(f.tokenizer);
  const auto edges = f.edges ? *f.edges : edges_for_token_budget(*f.tokens, tok);
  const auto task = gen_path_task(edges, f.path_len, seed, tok);
  const auto out = f.out.empty() ? "path_e" + std::to_string(edges) + "_s" + std::to_string(seed) + ".json" : f.out;
  write_text(out, to_json(task).dump() + "\n");
  report_task(out, task.prompt_tokens.size(), seed);
}

void gen_recall(const GenRecallFlags& f) {
  const auto seed = need_seed(f.seed);
  const auto task = gen_recall_task(f.pairs, seed, f.vocab, f.queries, f.key_len, f.value_len);
  const auto out = f.out.empty() ? "recall_n" + std::to_string(f.pairs) + "_s" + std::to_string(seed) + ".json" : f.out;
  write_text(out, to_json(task).dump() + "\n");
  report_task(out, task.prompt_tokens.size(), seed);
}

void flops(const FlopsFlags& f) {
  ModelConfig config = f.model.empty() ? flops_reference_config() : read_model_config(resolve_model_path(f.model));
  const double partial = f.partial.value_or(0.6);
  const auto r = flops_estimate(config, f.prefill, f.decode, partial);
  std::cout << "config        " << (f.model.empty() ? "reference (36 layers)" : f.model) << '\n'
            << "parameters    " << format("%.4g", r.parameters) << '\n'
            << "prefill       " << format("%.4g", r.prefill) << " FLOPs (" << f.prefill << " tokens)\n"
            << "decode        " << format("%.4g", r.decode) << " FLOPs (" << f.decode << " tokens)\n"
            << "partial pass  " << format("%.4g", r.partial) << " FLOPs (fraction " << format("%.2f", partial)
            << ")\n"
            << "decode/prefill   " << format("%.1f%%", 100.0 * r.decode_ratio) << '\n'
            << "overhead/prefill " << format("%.1f%%", 100.0 * r.overhead_ratio) << '\n';
}

}  // namespace

void register_task_commands(CLI::App& app) {
  auto* gen = app.add_subcommand("gen-task", "Generate a task instance file");
  gen->require_subcommand(1);

  auto pf = std::make_shared<GenPathFlags>();
  auto* path = gen->add_subcommand("path", "Multi-hop path traversal task");
  path->add_option("--edges", pf->edges, "Edge count");
  path->add_option("--tokens", pf->tokens, "Target prompt length; picks the edge count");
  path->add_option("--path-len", pf->path_len, "Edges on the gold path");
  path->add_option("--seed", pf->seed, "Generator seed (required)");
  path->add_option("--tokenizer", pf->tokenizer, "Tokenizer JSON (default: built-in path tokenizer)");
  path->add_option("--out", pf->out, "Output file");
  path->callback([pf] { gen_path(*pf); });

  auto rf = std::make_shared<GenRecallFlags>();
  auto* recall = gen->add_subcommand("recall", "Key-value recall task");
  recall->add_option("--pairs", rf->pairs, "Key-value pairs in the prompt");
  recall->add_option("--queries", rf->queries, "Queries asked in sequence");
  recall->add_option("--vocab", rf->vocab, "Model vocabulary size");
  recall->add_option("--key-len", rf->key_len, "Tokens per key");
  recall->add_option("--value-len", rf->value_len, "Tokens per value");
  recall->add_option("--seed", rf->seed, "Generator seed (required)");
  recall->add_option("--out", rf->out, "Output file");
  recall->callback([rf] { gen_recall(*rf); });

  auto ff = std::make_shared<FlopsFlags>();
  auto* fl = app.add_subcommand("flops", "Prefill/decode cost table");
  fl->add_option("--prefill", ff->prefill, "Prompt tokens");
  fl->add_option("--decode", ff->decode, "Generated tokens");
  fl->add_option("--partial", ff->partial, "Fraction of layers in the partial pass (default 0.6)");
  fl->add_option("--model", ff->model, "Use this model's config instead of the reference config");
  fl->callback([ff] { flops(*ff); });
}

}  // namespace dysco::cli
