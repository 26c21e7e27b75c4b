// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include "dysco/error.hpp"
#include "dysco/tasks.hpp"

namespace dysco {

namespace {

std::vector<double> averaged_row(const AttentionTrace& trace, std::span<const HeadId> heads) {
  std::vector<double> avg;
  for (const auto& h : heads) {
    const auto& probs = trace.at(h).probs;
    if (avg.empty()) avg.assign(probs.size(), 0.0);
    require(probs.size() == avg.size(), ErrorKind::kDimension, "captured rows differ in length");
    for (std::size_t i = 0; i < probs.size(); ++i) avg[i] += probs[i];
  }
  for (auto& v : avg) v /= static_cast<double>(heads.size());
  return avg;
}

}  // namespace

StepMetrics attention_telemetry(std::span<const AttentionTrace> traces, std::span<const HeadId> heads,
                                std::span<const Span> spans, std::size_t gold_index, double top_fraction,
                                std::uint64_t tie_seed) {
  require(!traces.empty(), ErrorKind::kValidation, "telemetry needs at least one trace");
  require(!heads.empty(), ErrorKind::kValidation, "telemetry needs at least one head");
  require(gold_index < spans.size(), ErrorKind::kValidation, "gold span index out of range");
  require(top_fraction > 0.0 && top_fraction <= 1.0, ErrorKind::kValidation, "top_fraction must lie in (0, 1]");
  const auto top_k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(spans.size()) - 1e-12));
  std::mt19937_64 rng(tie_seed);

  StepMetrics m;
  for (const auto& trace : traces) {
    const auto row = averaged_row(trace, heads);
    std::vector<double> score(spans.size(), 0.0);
    TelemetryStep step;
    step.position = trace.step;
    for (std::size_t s = 0; s < spans.size(); ++s) {
      require(spans[s].end <= row.size(), ErrorKind::kValidation, "span extends past the attention row");
      for (std::size_t i = spans[s].begin; i < spans[s].end; ++i) score[s] += row[i];
      step.span_mass_total += score[s];
    }
    const double gold = score[gold_index];
    std::size_t greater = 0, ties = 0;
    for (std::size_t s = 0; s < spans.size(); ++s) {
      if (s == gold_index) continue;
      if (score[s] > gold) ++greater;
      else if (score[s] == gold) ++ties;
    }
    step.gold_mass = gold;
    step.gold_rank = greater + static_cast<std::size_t>(rng() % (ties + 1));
    step.gold_in_top = step.gold_rank < top_k;
    m.gold_attention_mass += gold;
    m.gold_top5_fraction += step.gold_in_top ? 1.0 : 0.0;
    m.steps.push_back(step);
  }
  m.gold_attention_mass /= static_cast<double>(traces.size());
  m.gold_top5_fraction /= static_cast<double>(traces.size());
  return m;
}

std::vector<AttentionTrace> route_step_traces(const Model& model, const PathTask& task, const Tokenizer& tokenizer,
                                              std::span<const HeadId> capture, std::size_t route_step) {
  require(route_step < task.gold_path.size(), ErrorKind::kValidation, "route_step past the gold path");
  std::vector<TokenId> seq = task.prompt_tokens;
  auto append = [&](const std::string& text) {
    auto ids = tokenizer.encode(text);
    seq.insert(seq.end(), ids.begin(), ids.end());
  };
  append("<Route>\n");
  Span line;
  for (std::size_t i = 0; i <= route_step; ++i) {
    line.begin = seq.size();
    append(render_route_step(task.edges.at(task.gold_path[i])));
    line.end = seq.size();
  }
  // position p predicts token p + 1, so the analyzed queries are line.begin-1 .. line.end-2
  seq.resize(line.end - 1);
  return prefill(model, seq, capture, line.size()).traces;
}

PathTelemetry summarize_path_telemetry(std::span<const AttentionTrace> traces, std::span<const HeadId> heads,
                                       const PathTask& task, std::size_t route_step, double top_fraction,
                                       std::uint64_t tie_seed) {
  require(route_step < task.gold_path.size(), ErrorKind::kValidation, "route_step past the gold path");
  require(!traces.empty(), ErrorKind::kValidation, "telemetry needs at least one trace");
  PathTelemetry out;
  const std::size_t gold = task.gold_path[route_step];
  out.per_token = attention_telemetry(traces, heads, task.edge_spans, gold, top_fraction, tie_seed);

  AttentionTrace mean;
  mean.step = traces.front().step;
  const std::size_t width = mean.step + 1;
  for (const auto& h : heads) {
    std::vector<double> acc(width, 0.0);
    for (const auto& t : traces) {
      const auto& p = t.at(h).probs;
      for (std::size_t i = 0; i < width; ++i) acc[i] += p[i];
    }
    HeadRow row;
    row.probs.resize(width);
    for (std::size_t i = 0; i < width; ++i) row.probs[i] = static_cast<float>(acc[i] / static_cast<double>(traces.size()));
    mean.entries.emplace(h, std::move(row));
  }
  out.edge_aggregated = attention_telemetry(std::span<const AttentionTrace>(&mean, 1), heads, task.edge_spans, gold,
                                            top_fraction, tie_seed);
  return out;
}

PathTelemetry path_telemetry(const Model& model, const PathTask& task, const Tokenizer& tokenizer,
                             std::span<const HeadId> heads, std::size_t route_step, double top_fraction,
                             std::uint64_t tie_seed) {
  const auto traces = route_step_traces(model, task, tokenizer, heads, route_step);
  return summarize_path_telemetry(traces, heads, task, route_step, top_fraction, tie_seed);
}

// ---- FLOPs -----------------------------------------------------------------

double parameter_count(const ModelConfig& c) {
  const double dm = static_cast<double>(c.d_model);
  const double q = static_cast<double>(c.n_heads * c.d_head);
  const double kv = static_cast<double>(c.kv_dim());
  double layer = dm * q + 2.0 * dm * kv + q * dm + dm;
  if (c.d_ff > 0) layer += 3.0 * dm * static_cast<double>(c.d_ff) + dm;
  return static_cast<double>(c.n_layers) * layer + dm + static_cast<double>(c.vocab_size) * dm;
}

FlopsReport flops_estimate(const ModelConfig& config, std::size_t prefill_len, std::size_t decode_len,
                           double partial_fraction) {
  require(partial_fraction > 0.0 && partial_fraction <= 1.0, ErrorKind::kValidation,
          "partial_fraction must lie in (0, 1]");
  FlopsReport r;
  r.parameters = parameter_count(config);
  require(r.parameters > 0.0 && config.n_layers > 0 && config.d_model > 0, ErrorKind::kValidation,
          "config has no parameters");
  const double attn = 4.0 * static_cast<double>(config.n_layers) * static_cast<double>(config.d_model);
  const double P = static_cast<double>(prefill_len), D = static_cast<double>(decode_len);
  // token i (1-based) sees a context of i positions
  r.prefill = 2.0 * r.parameters * P + attn * P * (P + 1.0) / 2.0;
  r.decode = 2.0 * r.parameters * D + attn * (D * P + D * (D + 1.0) / 2.0);
  r.partial = partial_fraction * r.decode;
  if (r.prefill > 0.0) {
    r.decode_ratio = r.decode / r.prefill;
    r.overhead_ratio = r.partial / r.prefill;
  }
  return r;
}

ModelConfig flops_reference_config() {
  ModelConfig c;
  c.n_layers = 36;
  c.n_heads = 1;
  c.n_kv_heads = 1;
  c.d_model = 64;
  c.d_head = 64;
  c.d_ff = 2'000'000;
  c.vocab_size = 151'936;
  c.max_seq = 131'072 + 8'192;
  return c;
}

}  // namespace dysco
