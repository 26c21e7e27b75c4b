// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Test-only helpers: a seeded random model and an independent batched forward
// that recomputes every position from scratch with plain matmuls. The batched
// path shares no code with the incremental runtime beyond the public kernels.

#include <cmath>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "dysco/model.hpp"

namespace dysco::testing {

inline TensorMap random_tensors(const ModelConfig& c, std::uint64_t seed, float qk_gain = 1.0f) {
  std::mt19937_64 rng(seed);
  TensorMap out;
  for (const auto& [name, shape] : expected_shapes(c)) {
    const auto n = shape_product(shape);
    std::vector<float> data(n);
    if (shape.size() == 1) {
      std::uniform_real_distribution<float> u(0.8f, 1.2f);
      for (auto& v : data) v = u(rng);
    } else {
      float sd = 1.0f / std::sqrt(static_cast<float>(shape[1]));
      if (name.ends_with(".wq") || name.ends_with(".wk")) sd *= qk_gain;
      if (name == "tok_embeddings" || name == "output") sd = 1.0f;
      std::normal_distribution<float> g(0.0f, sd);
      for (auto& v : data) v = g(rng);
    }
    out.emplace(name, Tensor(shape, std::move(data)));
  }
  return out;
}

inline Model random_model(const ModelConfig& c, std::uint64_t seed, float qk_gain = 1.0f) {
  return Model(c, random_tensors(c, seed, qk_gain));
}

inline ModelConfig small_config(std::size_t n_layers = 2, std::size_t n_heads = 4,
                                std::size_t n_kv_heads = 2, std::size_t d_ff = 32) {
  ModelConfig c;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.n_kv_heads = n_kv_heads;
  c.d_head = 8;
  c.d_model = n_heads * c.d_head;
  c.vocab_size = 50;
  c.max_seq = 256;
  c.d_ff = d_ff;
  return c;
}

inline Tensor transpose(const Tensor& a) {
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

inline Tensor columns(const Tensor& a, std::size_t begin, std::size_t count) {
  Tensor t = Tensor::zeros({a.rows(), count});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) t.at(i, j) = a.at(i, begin + j);
  return t;
}

struct ReferenceOutput {
  Tensor logits;                       // [T, vocab]
  std::map<HeadId, Tensor> attention;  // [T, T] causal probability rows
};

/// Batched forward over `tokens`. `last_row_bias` (length T) or `last_row_tau`
/// modifies only the final query row of every head.
inline ReferenceOutput reference_forward(const Model& model, const std::vector<TokenId>& tokens,
                                         const std::optional<std::vector<float>>& last_row_bias = {},
                                         std::optional<float> last_row_tau = {}) {
  const auto& c = model.config();
  const auto tensors = model.to_tensors();
  const std::size_t T = tokens.size(), dm = c.d_model, dh = c.d_head;
  const auto& emb = tensors.at("tok_embeddings");
  Tensor x = Tensor::zeros({T, dm});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t i = 0; i < dm; ++i) x.at(t, i) = emb.at(static_cast<std::size_t>(tokens[t]), i);

  auto norm_rows = [&](const Tensor& in, const Tensor& w) {
    Tensor out = in;
    for (std::size_t t = 0; t < T; ++t) {
      auto r = rms_norm(in.row(t), w.data(), c.norm_eps);
      for (std::size_t i = 0; i < dm; ++i) out.at(t, i) = r[i];
    }
    return out;
  };
  auto L = [&](std::size_t l, const char* leaf) -> const Tensor& {
    return tensors.at("layers." + std::to_string(l) + "." + leaf);
  };

  ReferenceOutput out;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const Tensor h = norm_rows(x, L(l, "attn_norm"));
    const Tensor q = matmul(h, transpose(L(l, "wq")));
    const Tensor k = matmul(h, transpose(L(l, "wk")));
    const Tensor v = matmul(h, transpose(L(l, "wv")));
    Tensor heads = Tensor::zeros({T, c.n_heads * dh});
    for (std::size_t hh = 0; hh < c.n_heads; ++hh) {
      const std::size_t kvh = hh / c.group_size();
      const Tensor qh = apply_rope(columns(q, hh * dh, dh), 0, c.theta_base, c.rotary_dims());
      const Tensor kh = apply_rope(columns(k, kvh * dh, dh), 0, c.theta_base, c.rotary_dims());
      const Tensor vh = columns(v, kvh * dh, dh);
      const Tensor s = matmul(qh, transpose(kh));
      Tensor probs = Tensor::zeros({T, T});
      for (std::size_t i = 0; i < T; ++i) {
        std::vector<float> row(i + 1);
        for (std::size_t j = 0; j <= i; ++j) row[j] = s.at(i, j) * scale;
        std::vector<float> p;
        if (i + 1 == T && last_row_bias) {
          p = softmax_with_bias(row, std::vector<float>(last_row_bias->begin(), last_row_bias->end()));
        } else if (i + 1 == T && last_row_tau) {
          for (auto& r : row) r /= *last_row_tau;
          p = softmax(row);
        } else {
          p = softmax(row);
        }
        for (std::size_t j = 0; j <= i; ++j) probs.at(i, j) = p[j];
      }
      const Tensor o = matmul(probs, vh);
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t d = 0; d < dh; ++d) heads.at(t, hh * dh + d) = o.at(t, d);
      out.attention.emplace(HeadId{l, hh}, probs);
    }
    const Tensor proj = matmul(heads, transpose(L(l, "wo")));
    for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += proj.data()[i];
    if (c.d_ff > 0) {
      const Tensor h2 = norm_rows(x, L(l, "ffn_norm"));
      Tensor g = matmul(h2, transpose(L(l, "w_gate")));
      const Tensor u = matmul(h2, transpose(L(l, "w_up")));
      for (std::size_t i = 0; i < g.size(); ++i) {
        const float a = g.data()[i];
        g.data()[i] = a / (1.0f + std::exp(-a)) * u.data()[i];
      }
      const Tensor d = matmul(g, transpose(L(l, "w_down")));
      for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += d.data()[i];
    }
  }
  const Tensor hf = norm_rows(x, tensors.at("norm"));
  const Tensor& head = c.tied_embeddings ? emb : tensors.at("output");
  out.logits = matmul(hf, transpose(head));
  return out;
}

inline float max_abs_diff(std::span<const float> a, std::span<const float> b) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dysco::testing
