// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/zoo.hpp"

#include <array>
#include <cmath>
#include <random>

#include "dysco/error.hpp"

namespace dysco {

namespace {

// Per-frequency amplitudes of the previous-token query. Chosen (by a small
// linear program) so the cosine mix peaks at offset 1 with the widest gap to
// every other offset below 8192.
constexpr std::array<double, kInductionRopeDims / 2> kPrevAmp = {0.4103, 0.1171, 0.129,  0.0798,
                                                                 0.0754, 0.0563, 0.0756, 0.0565};

struct Matrix {
  std::size_t rows, cols;
  std::vector<float> w;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), w(r * c, 0.0f) {}
  float& at(std::size_t r, std::size_t c) { return w[r * cols + c]; }
  Tensor tensor() && { return Tensor({rows, cols}, std::move(w)); }
};

}  // namespace

void InductionModelSpec::validate() const {
  const auto D = code_dim;
  require(wired_head.layer == 1 && copy_head.layer == 1, ErrorKind::kValidation,
          "wired and copy heads must sit in layer 1");
  require(wired_head.head != copy_head.head, ErrorKind::kValidation, "wired and copy heads must differ");
  require(n_heads >= 2 && wired_head.head < n_heads && copy_head.head < n_heads, ErrorKind::kValidation,
          "head indices outside n_heads");
  require(code_dim >= 1 && d_model >= 2 * D + 1, ErrorKind::kValidation,
          "d_model must hold two code blocks plus a constant dimension");
  require(d_head >= kInductionRopeDims + D, ErrorKind::kValidation,
          "d_head must hold the rotary block plus a code block");
  require(d_model == n_heads * d_head, ErrorKind::kValidation, "d_model must equal n_heads * d_head");
  require(vocab_size >= 2 && max_seq >= 2, ErrorKind::kValidation, "vocab and max_seq must be at least 2");
  require(sharpness > 0.0 && match_scale > 0.0, ErrorKind::kValidation, "sharpness must be positive");
}

BuiltModel build_induction_model(const InductionModelSpec& spec) {
  spec.validate();
  const std::size_t DM = spec.d_model, DH = spec.d_head, NH = spec.n_heads, D = spec.code_dim, V = spec.vocab_size;
  const std::size_t kOne = 2 * D, kRd = kInductionRopeDims;
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = NH;
  c.n_kv_heads = NH;
  c.d_model = DM;
  c.d_head = DH;
  c.vocab_size = V;
  c.max_seq = spec.max_seq;
  c.rope_dims = kRd;
  c.validate();

  std::mt19937_64 rng(spec.seed);
  const float code = static_cast<float>(1.0 / std::sqrt(static_cast<double>(D)));
  Matrix emb(V, DM);
  for (std::size_t t = 0; t < V; ++t) {
    for (std::size_t i = 0; i < D; ++i) emb.at(t, i) = (rng() >> 63) ? code : -code;
    emb.at(t, kOne) = 1.0f;
  }

  BuiltModel out{c, {}};
  const float sqrt_dh = static_cast<float>(std::sqrt(static_cast<double>(DH)));
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.random_qk * std::sqrt(static_cast<double>(DM))));
  for (std::size_t l = 0; l < 2; ++l) {
    Matrix wq(NH * DH, DM), wk(NH * DH, DM), wv(NH * DH, DM), wo(DM, NH * DH);
    for (std::size_t h = 0; h < NH; ++h) {
      const std::size_t base = h * DH;
      if (l == 0 && h == 0) {
        for (std::size_t p = 0; p < kRd / 2; ++p) {
          const double omega = std::pow(c.theta_base, -static_cast<double>(2 * p) / static_cast<double>(kRd));
          wq.at(base + 2 * p, kOne) = static_cast<float>(spec.prev_scale * kPrevAmp[p]) * sqrt_dh;
          wk.at(base + 2 * p, kOne) = static_cast<float>(std::cos(omega));
          wk.at(base + 2 * p + 1, kOne) = static_cast<float>(std::sin(omega));
        }
        for (std::size_t i = 0; i < D; ++i) {
          wv.at(base + kRd + i, i) = 1.0f;
          wo.at(D + i, base + kRd + i) = 1.0f;
        }
      } else if (l == 1 && (h == spec.wired_head.head || h == spec.copy_head.head)) {
        const bool wired = h == spec.wired_head.head;
        const double scale = wired ? spec.match_scale * spec.sharpness : spec.copy_scale;
        const float gain = static_cast<float>(wired ? spec.wired_gain : spec.copy_gain);
        for (std::size_t i = 0; i < D; ++i) {
          wq.at(base + kRd + i, i) = static_cast<float>(scale) * sqrt_dh;
          wk.at(base + kRd + i, D + i) = 1.0f;
          if (wired) wk.at(base + kRd + i, i) = static_cast<float>(spec.self_scale / spec.match_scale);
          wv.at(base + kRd + i, i) = 1.0f;
          wo.at(i, base + kRd + i) = gain;
        }
      } else {
        for (std::size_t r = base; r < base + DH; ++r) {
          for (std::size_t col = 0; col < DM; ++col) wq.at(r, col) = noise(rng);
        }
        for (std::size_t r = base; r < base + DH; ++r) {
          for (std::size_t col = 0; col < DM; ++col) wk.at(r, col) = noise(rng);
        }
      }
    }
    // With these weights rms_norm(x) * w reproduces x: |x|^2 is 2 at layer 0
    // (code + constant) and about 3 at layer 1 (plus the previous-token code).
    const float norm_w = static_cast<float>(std::sqrt((l == 0 ? 2.0 : 3.0) / static_cast<double>(DM)));
    const std::string prefix = "layers." + std::to_string(l) + ".";
    out.tensors.emplace(prefix + "attn_norm", Tensor({DM}, std::vector<float>(DM, norm_w)));
    out.tensors.emplace(prefix + "wq", std::move(wq).tensor());
    out.tensors.emplace(prefix + "wk", std::move(wk).tensor());
    out.tensors.emplace(prefix + "wv", std::move(wv).tensor());
    out.tensors.emplace(prefix + "wo", std::move(wo).tensor());
  }
  out.tensors.emplace("tok_embeddings", std::move(emb).tensor());
  out.tensors.emplace("norm", Tensor({DM}, std::vector<float>(DM, 1.0f)));
  return out;
}

}  // namespace dysco
