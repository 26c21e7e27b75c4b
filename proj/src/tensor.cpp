// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "dysco/error.hpp"

namespace dysco {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kNonFinite: return "non-finite value";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kValidation: return "validation error";
    case ErrorKind::kCapacity: return "capacity error";
    case ErrorKind::kIo: return "io error";
  }
  return "error";
}

std::size_t shape_product(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  require(shape_product(shape_) == data_.size(), ErrorKind::kDimension,
          "tensor shape product " + std::to_string(shape_product(shape_)) +
              " != data length " + std::to_string(data_.size()));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  const auto n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<float>(n, 0.0f));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<float> data) {
  return Tensor({rows, cols}, std::move(data));
}

std::size_t Tensor::rows() const {
  require(rank() == 2, ErrorKind::kDimension, "rows() on non-matrix tensor");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require(rank() == 2, ErrorKind::kDimension, "cols() on non-matrix tensor");
  return shape_[1];
}

std::span<const float> Tensor::row(std::size_t i) const {
  const auto c = cols();
  return std::span<const float>(data_).subspan(i * c, c);
}

std::span<float> Tensor::row(std::size_t i) {
  const auto c = cols();
  return std::span<float>(data_).subspan(i * c, c);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2, ErrorKind::kDimension, "matmul expects matrices");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  require(b.rows() == k, ErrorKind::kDimension,
          "matmul inner dimensions disagree: " + std::to_string(k) + " vs " +
              std::to_string(b.rows()));
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) acc += a.at(i, p) * b.at(p, j);
      out.at(i, j) = acc;
    }
  }
  kernels::check_finite(out.data(), "matmul output");
  return out;
}

std::vector<float> softmax_with_bias(std::span<const float> logits, std::span<const float> bias) {
  require(logits.size() == bias.size(), ErrorKind::kDimension,
          "softmax_with_bias: logits length " + std::to_string(logits.size()) +
              " != bias length " + std::to_string(bias.size()));
  require(!logits.empty(), ErrorKind::kDimension, "softmax over empty row");
  kernels::check_finite(logits, "softmax logits");
  kernels::check_finite(bias, "softmax bias");
  std::vector<float> shifted(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double v = static_cast<double>(logits[i]) + static_cast<double>(bias[i]);
    require(std::isfinite(static_cast<float>(v)), ErrorKind::kNonFinite,
            "biased logit overflows float");
    shifted[i] = static_cast<float>(v);
  }
  std::vector<float> probs(logits.size());
  kernels::softmax_into(shifted, probs);
  return probs;
}

std::vector<float> softmax(std::span<const float> logits) {
  require(!logits.empty(), ErrorKind::kDimension, "softmax over empty row");
  kernels::check_finite(logits, "softmax logits");
  std::vector<float> probs(logits.size());
  kernels::softmax_into(logits, probs);
  return probs;
}

std::vector<float> rms_norm(std::span<const float> x, std::span<const float> weight, float eps) {
  require(x.size() == weight.size(), ErrorKind::kDimension, "rms_norm: length mismatch");
  require(eps >= 0.0f, ErrorKind::kValidation, "rms_norm: eps must be non-negative");
  std::vector<float> out(x.size());
  kernels::rms_norm_into(x, weight, eps, out);
  return out;
}

Tensor apply_rope(const Tensor& x, std::size_t position_offset, double theta_base,
                  std::size_t rotary_dims, bool inverse) {
  require(x.rank() == 2, ErrorKind::kDimension, "apply_rope expects [positions x d_head]");
  const auto d = x.cols();
  if (rotary_dims == 0) rotary_dims = d;
  require(d % 2 == 0, ErrorKind::kDimension, "apply_rope: odd head dimension " + std::to_string(d));
  require(rotary_dims % 2 == 0 && rotary_dims <= d, ErrorKind::kDimension,
          "apply_rope: rotary dims must be even and <= head dimension");
  require(theta_base > 0.0, ErrorKind::kValidation, "apply_rope: theta_base must be positive");
  Tensor out = x;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    kernels::rope_inplace(out.row(r), position_offset + r, theta_base, rotary_dims, inverse);
  }
  return out;
}

namespace kernels {

void matvec(std::span<const float> w, std::size_t rows, std::size_t cols,
            std::span<const float> x, std::span<float> y) {
  for (std::size_t r = 0; r < rows; ++r) y[r] = dot(w.data() + r * cols, x.data(), cols);
}

void rms_norm_into(std::span<const float> x, std::span<const float> weight, float eps,
                   std::span<float> out) {
  double ss = 0.0;
  for (float v : x) ss += static_cast<double>(v) * v;
  const double denom = std::sqrt(ss / static_cast<double>(x.size()) + eps);
  require(denom > 0.0, ErrorKind::kNonFinite, "rms_norm of a zero vector with eps = 0");
  const double inv = 1.0 / denom;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = static_cast<float>(x[i] * inv) * weight[i];
  }
}

void rope_inplace(std::span<float> v, std::size_t position, double theta_base,
                  std::size_t rotary_dims, bool inverse) {
  const double sign = inverse ? -1.0 : 1.0;
  for (std::size_t i = 0; i + 1 < rotary_dims; i += 2) {
    const double freq = std::pow(theta_base, -static_cast<double>(i) / static_cast<double>(rotary_dims));
    const double angle = sign * static_cast<double>(position) * freq;
    const double c = std::cos(angle), s = std::sin(angle);
    const double x0 = v[i], x1 = v[i + 1];
    v[i] = static_cast<float>(x0 * c - x1 * s);
    v[i + 1] = static_cast<float>(x0 * s + x1 * c);
  }
}

void softmax_into(std::span<const float> logits, std::span<float> probs) {
  float mx = -std::numeric_limits<float>::infinity();
  for (float v : logits) mx = std::max(mx, v);
  for (std::size_t i = 0; i < logits.size(); ++i) probs[i] = std::exp(logits[i] - mx);
  double total = 0.0;
  for (float e : probs) total += e;
  const double inv = 1.0 / total;
  for (auto& p : probs) p = static_cast<float>(p * inv);
}

void check_finite(std::span<const float> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorKind::kNonFinite, std::string(what) + " has non-finite entry at index " +
                                      std::to_string(i));
    }
  }
}

}  // namespace kernels

}  // namespace dysco
