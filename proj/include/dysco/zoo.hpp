// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "dysco/model.hpp"

namespace dysco {

/// Two-layer attention-only transformer with a hand-wired induction circuit.
///
/// Residual layout: [0, D) token code, [D, 2D) previous-token code, 2D constant 1.
/// Layer 0 head 0 attends to the previous position through rotary dims and
/// copies its code into the previous-token slot. In layer 1 the wired head
/// matches the current code against that slot (falling back to itself when
/// nothing matches) and the copy head does the same match at lower sharpness
/// but writes with a large gain. Other heads get small random Q/K and zero output.
struct InductionModelSpec {
  std::size_t vocab_size = 8000;
  std::size_t d_model = 256;
  std::size_t d_head = 64;
  std::size_t n_heads = 4;
  std::size_t code_dim = 48;
  std::size_t max_seq = 8192;
  HeadId wired_head{1, 0};
  HeadId copy_head{1, 1};
  double sharpness = 1.0;     // multiplies the wired head's query weights
  double match_scale = 20.0;  // wired head logit on an exact match
  double self_scale = 12.0;   // wired head logit on its own position
  double copy_scale = 4.5;
  double wired_gain = 0.2;
  double copy_gain = 5.0;
  double prev_scale = 80.0;
  double random_qk = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

inline constexpr std::size_t kInductionRopeDims = 16;

struct BuiltModel {
  ModelConfig config;
  TensorMap tensors;
};

BuiltModel build_induction_model(const InductionModelSpec& spec);

}  // namespace dysco
