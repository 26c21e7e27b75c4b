// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace dysco {

/// Dense row-major float32 tensor. Holds activations, weights and attention
/// rows; the kernels below are pure functions over it.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const float> data() const { return data_; }
  std::span<float> data() { return data_; }
  std::vector<float>& storage() { return data_; }

  std::span<const float> row(std::size_t i) const;
  std::span<float> row(std::size_t i);
  float at(std::size_t i, std::size_t j) const { return data_[i * cols() + j]; }
  float& at(std::size_t i, std::size_t j) { return data_[i * cols() + j]; }

  bool operator==(const Tensor&) const = default;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

std::size_t shape_product(std::span<const std::size_t> shape);

// ---- public kernels -------------------------------------------------------

/// Plain matrix product. Each output element accumulates k-terms sequentially
/// in index order.
Tensor matmul(const Tensor& a, const Tensor& b);

/// Softmax(logits + bias), max-subtracted, accumulated in double.
std::vector<float> softmax_with_bias(std::span<const float> logits, std::span<const float> bias);

std::vector<float> softmax(std::span<const float> logits);

/// x / sqrt(mean(x^2) + eps) * weight.
std::vector<float> rms_norm(std::span<const float> x, std::span<const float> weight, float eps);

/// Rotary embedding over interleaved pairs (2i, 2i+1) of the first
/// `rotary_dims` columns (0 means all). Row r sits at position
/// `position_offset + r`; pair i rotates by pos * theta_base^(-2i/rotary_dims).
/// `inverse` rotates by the negated angles.
Tensor apply_rope(const Tensor& x, std::size_t position_offset, double theta_base,
                  std::size_t rotary_dims = 0, bool inverse = false);

// ---- internal fast paths shared with the model runtime ---------------------

namespace kernels {

/// Dot product with eight interleaved partial sums combined in a fixed order.
inline float dot(const float* a, const float* b, std::size_t n) {
  float s[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t k = 0; k < 8; ++k) s[k] += a[i + k] * b[i + k];
  }
  for (; i < n; ++i) s[0] += a[i] * b[i];
  return ((s[0] + s[1]) + (s[2] + s[3])) + ((s[4] + s[5]) + (s[6] + s[7]));
}

/// y[r] = dot(w.row(r), x) for a [rows x cols] row-major matrix.
void matvec(std::span<const float> w, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y);

void rms_norm_into(std::span<const float> x, std::span<const float> weight, float eps,
                   std::span<float> out);

/// In-place rotary rotation of one head vector at `position`.
void rope_inplace(std::span<float> v, std::size_t position, double theta_base,
                  std::size_t rotary_dims, bool inverse = false);

/// probs = softmax(logits); float exponentials, double normaliser.
void softmax_into(std::span<const float> logits, std::span<float> probs);

void check_finite(std::span<const float> v, const char* what);

}  // namespace kernels

}  // namespace dysco
