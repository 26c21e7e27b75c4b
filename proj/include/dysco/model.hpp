// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "dysco/tensor.hpp"

namespace dysco {

using TokenId = std::int32_t;

struct ModelConfig {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::size_t n_kv_heads = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  std::size_t vocab_size = 0;
  std::size_t max_seq = 0;
  double theta_base = 10000.0;
  float norm_eps = 1e-6f;
  std::size_t rope_dims = 0;     // rotated leading dims per head; 0 = all
  std::size_t d_ff = 0;          // SwiGLU hidden size; 0 = attention-only layers
  bool tied_embeddings = true;   // output head reuses tok_embeddings

  std::size_t rotary_dims() const { return rope_dims == 0 ? d_head : rope_dims; }
  std::size_t group_size() const { return n_heads / n_kv_heads; }
  std::size_t total_heads() const { return n_layers * n_heads; }
  std::size_t kv_dim() const { return n_kv_heads * d_head; }

  /// Throws kValidation on any broken invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(const HeadId& id);

/// Sorted, de-duplicated head list.
std::vector<HeadId> normalize_heads(std::vector<HeadId> heads);
std::vector<HeadId> all_heads(const ModelConfig& config);

/// Per-layer keys (rotary already applied) and values for positions 0..length-1.
/// Layout per layer: [position][kv_head][d_head].
class KVCache {
 public:
  KVCache() = default;
  explicit KVCache(const ModelConfig& config);

  std::size_t length() const { return length_; }
  std::size_t n_layers() const { return keys_.size(); }
  std::size_t capacity() const { return max_seq_; }

  std::span<const float> keys(std::size_t layer) const { return keys_[layer]; }
  std::span<const float> values(std::size_t layer) const { return values_[layer]; }

 private:
  friend class ForwardPass;
  std::size_t max_seq_ = 0;
  std::size_t length_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

/// One captured attention row. `logits` are the effective pre-softmax scores
/// (after any intervention) and `probs == softmax(logits)`.
struct HeadRow {
  std::vector<float> logits;
  std::vector<float> probs;
};

struct AttentionTrace {
  std::size_t step = 0;  // query position; rows have length step + 1
  std::map<HeadId, HeadRow> entries;

  const HeadRow& at(const HeadId& head) const;
};

struct NoIntervention {};

/// Additive bias over positions 0..t (current position included).
struct LogitBias {
  std::vector<float> bias;
};

/// Uniform attention temperature: logits / tau, tau in (0, 1].
struct AttentionTemperature {
  float tau = 1.0f;
};

using InterventionSpec = std::variant<NoIntervention, LogitBias, AttentionTemperature>;

void validate_intervention(const InterventionSpec& spec, std::size_t row_length);

struct Linear {
  std::size_t out = 0;
  std::size_t in = 0;
  std::vector<float> w;  // [out x in] row-major
};

struct LayerWeights {
  std::vector<float> attn_norm;
  Linear wq, wk, wv, wo;
  std::vector<float> ffn_norm;
  Linear w_gate, w_up, w_down;
};

/// Named tensors as stored in a weight file. Naming convention:
///   tok_embeddings [vocab, d_model]
///   layers.{i}.attn_norm [d_model]
///   layers.{i}.wq [n_heads*d_head, d_model]   layers.{i}.wk/wv [n_kv_heads*d_head, d_model]
///   layers.{i}.wo [d_model, n_heads*d_head]
///   layers.{i}.ffn_norm [d_model], layers.{i}.w_gate/w_up [d_ff, d_model],
///   layers.{i}.w_down [d_model, d_ff]          (only when d_ff > 0)
///   norm [d_model]
///   output [vocab, d_model]                     (only when embeddings are untied)
using TensorMap = std::map<std::string, Tensor>;

std::map<std::string, std::vector<std::size_t>> expected_shapes(const ModelConfig& config);

/// Immutable decoder-only transformer. Shareable across threads.
class Model {
 public:
  Model(ModelConfig config, const TensorMap& tensors);

  static Model load(const std::filesystem::path& weights_file, const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const LayerWeights& layer(std::size_t i) const { return layers_[i]; }
  std::span<const float> embedding() const { return embedding_; }
  std::span<const float> output_head() const;
  std::span<const float> final_norm() const { return final_norm_; }

  /// Inverse of the constructor: tensors in file naming convention.
  TensorMap to_tensors() const;

 private:
  ModelConfig config_;
  std::vector<float> embedding_;
  std::vector<LayerWeights> layers_;
  std::vector<float> final_norm_;
  std::vector<float> output_;
};

struct PrefillResult {
  KVCache cache;
  std::vector<AttentionTrace> traces;  // ascending step order
  std::vector<float> logits;           // next-token logits at the last position
};

struct StepResult {
  std::vector<float> logits;
  AttentionTrace trace;
};

/// Runs the prompt through the model one position at a time. Captures `capture`
/// heads' rows for the final `capture_last` positions.
PrefillResult prefill(const Model& model, std::span<const TokenId> tokens,
                      std::span<const HeadId> capture, std::size_t capture_last);

/// Appends `token` at position cache.length() under `intervention`, applied to
/// the current query row of every head in every layer.
StepResult decode_step_full(const Model& model, KVCache& cache, TokenId token,
                            const InterventionSpec& intervention,
                            std::span<const HeadId> capture);

/// Read-only pass over layers [0, stop_layer) with no intervention. Returns the
/// captured rows; the cache is untouched.
AttentionTrace decode_step_partial(const Model& model, const KVCache& cache, TokenId token,
                                   std::size_t stop_layer, std::span<const HeadId> capture);

}  // namespace dysco
