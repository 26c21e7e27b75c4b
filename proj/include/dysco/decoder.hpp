// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dysco/heads.hpp"
#include "dysco/model.hpp"
#include "json.hpp"

namespace dysco {

inline constexpr double kDefaultGamma = 0.75;
inline constexpr std::size_t kDefaultWarmup = 16;

struct DyscoParams {
  std::vector<HeadId> heads;  // H*
  double p = 0.975;
  std::size_t K = 4096;
  double beta = 2.0;
  double gamma = kDefaultGamma;
  std::size_t warmup = kDefaultWarmup;
  std::size_t stop_layer = 0;  // 0: deepest selected layer + 1

  /// Range checks; heads must exist in `config` when given.
  void validate(const ModelConfig* config = nullptr) const;
  /// True when (p, K, beta, gamma, warmup) all sit on the tuned grid.
  bool on_grid() const;
  std::size_t effective_stop_layer() const;
};

struct DyscoPreset {
  std::string name;
  double p;
  std::size_t K;
  double beta;
};

/// Named (p, K, beta) settings per model family and length regime.
const std::vector<DyscoPreset>& dysco_presets();
const DyscoPreset& dysco_preset(const std::string& name);

/// Attention temperature for the uniform-scaling baseline, per model family.
double uniattns_preset(const std::string& family);

struct RelevanceState {
  std::vector<double> r;  // over positions 0..step
  std::size_t step = 0;
};

/// Mean of the heads' probability rows, right-padded with zeros to `length`.
std::vector<double> head_average(const AttentionTrace& trace, std::span<const HeadId> heads,
                                 std::size_t length);

/// r_T = Normalize(sum_{d < T_w} gamma^d * avg_{H*}(alpha_{T-d})) over exactly
/// params.warmup consecutive traces ending at the prompt's last position.
RelevanceState init_relevance(std::span<const AttentionTrace> warmup_traces, const DyscoParams& params);

/// r_t = gamma * pad(r_{t-1}) + (1 - gamma) * avg_{H*}(alpha_t).
RelevanceState aggregate(const AttentionTrace& trace, const RelevanceState& state,
                         std::span<const HeadId> heads, double gamma);

/// Minimal prefix of positions by descending r (earlier first on ties) whose
/// mass reaches p (with 1e-9 slack), capped at K. Zero-relevance positions are
/// never chosen for p < 1; p >= 1 selects every position up to the cap.
std::vector<std::size_t> select_top(std::span<const double> r, double p, std::size_t K);

std::vector<float> build_bias(std::span<const std::size_t> selected, double beta, std::size_t length);

struct Vanilla {};
struct UniAttnS {
  float tau = 1.0f;
};
struct Dysco {
  DyscoParams params;
};
/// Selection fixed at the warm-up relevance and reused for every step.
struct StaticScaling {
  DyscoParams params;
};
/// DySCO with H* replaced by k heads drawn uniformly without replacement.
struct RandomHeadDysco {
  DyscoParams params;  // heads ignored
  std::size_t k = 1;
  std::uint64_t seed = 0;
};

using DecodePolicy = std::variant<Vanilla, UniAttnS, Dysco, StaticScaling, RandomHeadDysco>;

std::string policy_name(const DecodePolicy& policy);

std::vector<HeadId> draw_random_heads(const ModelConfig& config, std::size_t k, std::uint64_t seed);

struct SamplerConfig {
  enum class Mode { kGreedy, kNucleus };
  Mode mode = Mode::kGreedy;
  double temperature = 1.0;
  double top_p = 1.0;
  std::uint64_t seed = 0;
};

class Sampler {
 public:
  explicit Sampler(SamplerConfig config);
  TokenId sample(std::span<const float> logits);

 private:
  SamplerConfig config_;
  std::mt19937_64 rng_;
};

/// Per-step record of one DecodeSession::step call.
struct StepRecord {
  std::size_t position = 0;           // position of the token just fed
  std::vector<float> logits;          // next-token logits
  std::vector<std::size_t> selected;  // empty unless a rescaling policy is active
  double selected_mass = 0.0;         // relevance mass of `selected`
  AttentionTrace trace;               // captured rows of the intervened pass
  std::vector<float> bias;            // applied bias (empty when none)
};

/// One generation sequence. The prompt's last token is held back from prefill
/// so that the first generated token is already produced under the policy.
class DecodeSession {
 public:
  DecodeSession(const Model& model, DecodePolicy policy);

  /// `capture` adds heads whose intervened rows are returned in StepRecord.
  void start(std::span<const TokenId> prompt, std::span<const HeadId> capture = {});
  /// Runs the pending token through the model and returns next-token logits.
  StepRecord step();
  /// Queues the next token to feed.
  void feed(TokenId token);

  const std::vector<HeadId>& heads() const { return heads_; }
  const std::optional<RelevanceState>& relevance() const { return relevance_; }
  std::size_t length() const { return cache_.length(); }

 private:
  const Model& model_;
  DecodePolicy policy_;
  std::optional<DyscoParams> params_;
  std::vector<HeadId> heads_;
  std::vector<HeadId> capture_;
  KVCache cache_;
  std::vector<AttentionTrace> warmup_;
  std::optional<RelevanceState> relevance_;
  std::vector<std::size_t> static_selection_;
  std::optional<TokenId> pending_;
  bool first_step_ = true;
};

struct StopRules {
  std::size_t max_new = 64;
  std::vector<TokenId> stop_tokens;
  std::function<bool(std::span<const TokenId>)> stop_when;  // on generated tokens
};

struct StepTelemetry {
  std::size_t step = 0;
  std::size_t position = 0;
  TokenId token = 0;
  std::size_t selected_size = 0;
  double selected_mass = 0.0;
  std::map<HeadId, double> gold_mass;
};

nlohmann::json to_json(const StepTelemetry& t);

struct GenerateResult {
  std::vector<TokenId> tokens;
  std::vector<StepTelemetry> telemetry;
  std::string stop_reason;  // "max_new", "stop_token", "stop_rule"
};

struct GenerateOptions {
  std::optional<Span> gold_span;   // telemetry: per-head mass on this span
  std::vector<HeadId> telemetry_heads;
};

GenerateResult generate(const Model& model, std::span<const TokenId> prompt,
                        const DecodePolicy& policy, const SamplerConfig& sampler,
                        const StopRules& stop, const GenerateOptions& options = {});

/// Policy config file: {"policy", "preset", "p", "K", "beta", "gamma", "warmup",
/// "stop_layer", "tau", "heads", "random_k", "seed", "sampler"}.
struct PolicyConfig {
  std::string policy = "vanilla";
  DyscoParams params;
  float tau = 1.0f;
  std::string heads_path;
  std::size_t random_k = 0;  // 0: same count as the head list
  SamplerConfig sampler;
};

PolicyConfig parse_policy_config(const nlohmann::json& j);
DecodePolicy make_policy(const PolicyConfig& config, std::vector<HeadId> heads, std::uint64_t seed);

}  // namespace dysco
