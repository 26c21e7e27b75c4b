// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dysco/decoder.hpp"
#include "dysco/heads.hpp"
#include "dysco/model.hpp"
#include "dysco/tokenizer.hpp"
#include "json.hpp"

namespace dysco {

inline constexpr const char* kGeneratorVersion = "dysco-tasks/1";

// ---- key-value recall ------------------------------------------------------

/// Prompt: <bos> k_0 v_0 ... k_{n-1} v_{n-1} <sep> k_probe, answer v_probe.
/// `queries` lists pair indices asked in order; queries[0] is the probe in the
/// prompt, later ones are asked by forcing "<sep> k_q" after each answer.
struct RecallTask {
  std::vector<std::pair<std::vector<TokenId>, std::vector<TokenId>>> pairs;
  std::vector<std::size_t> queries;
  std::vector<TokenId> prompt_tokens;
  std::uint64_t seed = 0;

  std::size_t probe_index() const { return queries.at(0); }
  const std::vector<TokenId>& probe_key() const { return pairs.at(probe_index()).first; }
  const std::vector<TokenId>& gold_value() const { return pairs.at(probe_index()).second; }
  /// Token range of pair `index` (key and value) inside prompt_tokens.
  Span pair_span(std::size_t index) const;
  Span gold_span() const { return pair_span(probe_index()); }
};

/// Keys and values are distinct ids drawn from [Tokenizer::kFirstMerge, vocab).
RecallTask gen_recall_task(std::size_t n_pairs, std::uint64_t seed, std::size_t vocab_size,
                           std::size_t n_queries = 1, std::size_t key_len = 1, std::size_t value_len = 1);

/// Calibration example for head detection: query = <sep> probe, gold = the pair.
CalibrationExample recall_calibration(const RecallTask& task);

// ---- path traversal --------------------------------------------------------

struct PathEdge {
  std::string src;
  std::string dst;
  std::string transit;
  bool operator==(const PathEdge&) const = default;
};

struct PathTask {
  std::vector<PathEdge> edges;        // in prompt order
  std::string start;
  std::string target;
  std::vector<std::size_t> gold_path;  // indices into edges, start to target
  std::string prompt_text;
  std::vector<TokenId> prompt_tokens;
  std::vector<Span> edge_spans;  // token range of each rendered edge sentence
  std::uint64_t seed = 0;

  std::string gold_route_text() const;
};

const std::vector<std::string>& city_names();
const std::vector<std::string>& transit_methods();

std::string render_edge(const PathEdge& e);
std::string render_route_step(const PathEdge& e);

PathTask gen_path_task(std::size_t n_edges, std::size_t path_len, std::uint64_t seed, const Tokenizer& tokenizer);

/// Edge count whose prompt lands near `target_tokens` under `tokenizer`.
std::size_t edges_for_token_budget(std::size_t target_tokens, const Tokenizer& tokenizer);

/// Subword tokenizer trained on the task vocabulary so every city name,
/// template word and transit method is a single token.
Tokenizer build_path_tokenizer();

struct ParsedRoute {
  std::vector<PathEdge> steps;
  std::size_t dropped_lines = 0;
  bool found_open_tag = false;
  bool missing_close_tag = false;
};

ParsedRoute parse_route(const std::string& text);

struct PathScore {
  double full_accuracy = 0.0;  // 0 or 1
  double step_accuracy = 0.0;
};

PathScore score_path(const ParsedRoute& parsed, const PathTask& task);

// ---- evaluation ------------------------------------------------------------

struct RecallOutcome {
  std::vector<std::vector<TokenId>> answers;  // one greedy answer per query
  std::vector<bool> correct;
  double accuracy() const;
};

/// Greedy answers for every query of `task`. After each answer the session is
/// forced through "<sep> key" of the next query.
RecallOutcome run_recall(const Model& model, const RecallTask& task, const DecodePolicy& policy);

struct PathOutcome {
  std::vector<TokenId> tokens;
  std::string text;
  ParsedRoute parsed;
  PathScore score;
  std::string stop_reason;
};

/// Generates until "</Route>" appears or `max_new` tokens, then parses and scores.
PathOutcome run_path(const Model& model, const PathTask& task, const Tokenizer& tokenizer,
                     const DecodePolicy& policy, const SamplerConfig& sampler, std::size_t max_new);

// ---- attention telemetry ---------------------------------------------------

struct TelemetryStep {
  std::size_t position = 0;
  double gold_mass = 0.0;
  std::size_t gold_rank = 0;  // 0-based, ties broken at random
  bool gold_in_top = false;
  double span_mass_total = 0.0;  // summed over all spans
};

struct StepMetrics {
  double gold_top5_fraction = 0.0;
  double gold_attention_mass = 0.0;
  double step_accuracy = 0.0;
  double full_accuracy = 0.0;
  std::vector<TelemetryStep> steps;
};

/// Per-step span scores from the heads' averaged rows; gold counts as top when
/// its rank is below ceil(top_fraction * spans).
StepMetrics attention_telemetry(std::span<const AttentionTrace> traces, std::span<const HeadId> heads,
                                std::span<const Span> spans, std::size_t gold_index, double top_fraction = 0.05,
                                std::uint64_t tie_seed = 0);

struct PathTelemetry {
  StepMetrics per_token;
  StepMetrics edge_aggregated;  // one step: rows averaged over the analyzed tokens
};

/// Teacher-forces the gold route after the prompt and returns the captured rows
/// of the queries that predict route line `route_step` (0-based).
std::vector<AttentionTrace> route_step_traces(const Model& model, const PathTask& task, const Tokenizer& tokenizer,
                                              std::span<const HeadId> capture, std::size_t route_step = 1);

/// Per-token and edge-aggregated metrics for `heads` (a subset of the captured heads).
PathTelemetry summarize_path_telemetry(std::span<const AttentionTrace> traces, std::span<const HeadId> heads,
                                       const PathTask& task, std::size_t route_step = 1,
                                       double top_fraction = 0.05, std::uint64_t tie_seed = 0);

/// route_step_traces followed by summarize_path_telemetry; default analyzes the second edge.
PathTelemetry path_telemetry(const Model& model, const PathTask& task, const Tokenizer& tokenizer,
                             std::span<const HeadId> heads, std::size_t route_step = 1,
                             double top_fraction = 0.05, std::uint64_t tie_seed = 0);

// ---- FLOPs -----------------------------------------------------------------

struct FlopsReport {
  double parameters = 0.0;
  double prefill = 0.0;
  double decode = 0.0;
  double partial = 0.0;
  double decode_ratio = 0.0;    // decode / prefill
  double overhead_ratio = 0.0;  // partial / prefill
};

/// Weights touched per token: attention and MLP projections, norms and the
/// output head (the embedding lookup is free).
double parameter_count(const ModelConfig& config);

/// Per-token cost at context c: 2 * params + 4 * n_layers * c * d_model.
FlopsReport flops_estimate(const ModelConfig& config, std::size_t prefill_len, std::size_t decode_len,
                           double partial_fraction);

/// 36 layers dominated by MLP weights, for long-context ratio tables.
ModelConfig flops_reference_config();

// ---- task files ------------------------------------------------------------

nlohmann::json to_json(const RecallTask& task);
nlohmann::json to_json(const PathTask& task);
RecallTask recall_from_json(const nlohmann::json& j);
PathTask path_from_json(const nlohmann::json& j);

}  // namespace dysco
