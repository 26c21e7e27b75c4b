// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/model.hpp"

#include <algorithm>
#include <cmath>

#include "dysco/error.hpp"
#include "dysco/weights.hpp"

namespace dysco {

namespace {

std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

std::string layer_name(std::size_t i, const char* leaf) {
  return "layers." + std::to_string(i) + "." + leaf;
}

}  // namespace

void ModelConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, ErrorKind::kValidation, msg); };
  check(n_layers > 0, "n_layers must be positive");
  check(n_heads > 0 && n_kv_heads > 0, "head counts must be positive");
  check(n_heads % n_kv_heads == 0, "n_heads must be divisible by n_kv_heads");
  check(d_head > 0 && d_head % 2 == 0, "d_head must be positive and even");
  check(d_model == n_heads * d_head, "d_model must equal n_heads * d_head");
  check(vocab_size > 0, "vocab_size must be positive");
  check(max_seq > 0, "max_seq must be positive");
  check(theta_base > 0.0, "theta_base must be positive");
  check(norm_eps >= 0.0f, "norm_eps must be non-negative");
  check(rotary_dims() % 2 == 0 && rotary_dims() <= d_head, "rope_dims must be even and <= d_head");
}

std::string to_string(const HeadId& id) {
  return "L" + std::to_string(id.layer) + "H" + std::to_string(id.head);
}

std::vector<HeadId> normalize_heads(std::vector<HeadId> heads) {
  std::sort(heads.begin(), heads.end());
  heads.erase(std::unique(heads.begin(), heads.end()), heads.end());
  return heads;
}

std::vector<HeadId> all_heads(const ModelConfig& config) {
  std::vector<HeadId> out;
  out.reserve(config.total_heads());
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (std::size_t h = 0; h < config.n_heads; ++h) out.push_back({l, h});
  }
  return out;
}

KVCache::KVCache(const ModelConfig& config)
    : max_seq_(config.max_seq), keys_(config.n_layers), values_(config.n_layers) {}

const HeadRow& AttentionTrace::at(const HeadId& head) const {
  auto it = entries.find(head);
  require(it != entries.end(), ErrorKind::kValidation,
          "trace at step " + std::to_string(step) + " has no row for head " + to_string(head));
  return it->second;
}

void validate_intervention(const InterventionSpec& spec, std::size_t row_length) {
  if (const auto* b = std::get_if<LogitBias>(&spec)) {
    require(b->bias.size() == row_length, ErrorKind::kDimension,
            "bias length " + std::to_string(b->bias.size()) + " != cache length + 1 (" +
                std::to_string(row_length) + ")");
    kernels::check_finite(b->bias, "intervention bias");
  } else if (const auto* t = std::get_if<AttentionTemperature>(&spec)) {
    require(t->tau > 0.0f && t->tau <= 1.0f, ErrorKind::kValidation,
            "attention temperature must lie in (0, 1]");
  }
}

std::map<std::string, std::vector<std::size_t>> expected_shapes(const ModelConfig& c) {
  std::map<std::string, std::vector<std::size_t>> shapes;
  shapes["tok_embeddings"] = {c.vocab_size, c.d_model};
  shapes["norm"] = {c.d_model};
  if (!c.tied_embeddings) shapes["output"] = {c.vocab_size, c.d_model};
  const auto q_dim = c.n_heads * c.d_head;
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    shapes[layer_name(i, "attn_norm")] = {c.d_model};
    shapes[layer_name(i, "wq")] = {q_dim, c.d_model};
    shapes[layer_name(i, "wk")] = {c.kv_dim(), c.d_model};
    shapes[layer_name(i, "wv")] = {c.kv_dim(), c.d_model};
    shapes[layer_name(i, "wo")] = {c.d_model, q_dim};
    if (c.d_ff > 0) {
      shapes[layer_name(i, "ffn_norm")] = {c.d_model};
      shapes[layer_name(i, "w_gate")] = {c.d_ff, c.d_model};
      shapes[layer_name(i, "w_up")] = {c.d_ff, c.d_model};
      shapes[layer_name(i, "w_down")] = {c.d_model, c.d_ff};
    }
  }
  return shapes;
}

Model::Model(ModelConfig config, const TensorMap& tensors) : config_(std::move(config)) {
  config_.validate();
  const auto shapes = expected_shapes(config_);
  for (const auto& [name, shape] : shapes) {
    auto it = tensors.find(name);
    require(it != tensors.end(), ErrorKind::kValidation, "missing tensor '" + name + "'");
    require(it->second.shape() == shape, ErrorKind::kDimension,
            "shape mismatch for tensor '" + name + "': expected " + shape_str(shape) + ", got " +
                shape_str(it->second.shape()));
    kernels::check_finite(it->second.data(), name.c_str());
  }
  for (const auto& [name, t] : tensors) {
    require(shapes.count(name) == 1, ErrorKind::kValidation, "unexpected tensor '" + name + "'");
  }
  auto vec = [&](const std::string& name) {
    auto d = tensors.at(name).data();
    return std::vector<float>(d.begin(), d.end());
  };
  auto lin = [&](const std::string& name) {
    const auto& t = tensors.at(name);
    return Linear{t.shape()[0], t.shape()[1], std::vector<float>(t.data().begin(), t.data().end())};
  };
  embedding_ = vec("tok_embeddings");
  final_norm_ = vec("norm");
  if (!config_.tied_embeddings) output_ = vec("output");
  layers_.resize(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    auto& L = layers_[i];
    L.attn_norm = vec(layer_name(i, "attn_norm"));
    L.wq = lin(layer_name(i, "wq"));
    L.wk = lin(layer_name(i, "wk"));
    L.wv = lin(layer_name(i, "wv"));
    L.wo = lin(layer_name(i, "wo"));
    if (config_.d_ff > 0) {
      L.ffn_norm = vec(layer_name(i, "ffn_norm"));
      L.w_gate = lin(layer_name(i, "w_gate"));
      L.w_up = lin(layer_name(i, "w_up"));
      L.w_down = lin(layer_name(i, "w_down"));
    }
  }
}

Model Model::load(const std::filesystem::path& weights_file, const ModelConfig& config) {
  auto file = read_weights(weights_file);
  return Model(config, file.tensors);
}

std::span<const float> Model::output_head() const {
  return config_.tied_embeddings ? std::span<const float>(embedding_) : std::span<const float>(output_);
}

TensorMap Model::to_tensors() const {
  TensorMap out;
  const auto& c = config_;
  out.emplace("tok_embeddings", Tensor({c.vocab_size, c.d_model}, embedding_));
  out.emplace("norm", Tensor({c.d_model}, final_norm_));
  if (!c.tied_embeddings) out.emplace("output", Tensor({c.vocab_size, c.d_model}, output_));
  auto put = [&](const std::string& name, const Linear& l) {
    out.emplace(name, Tensor({l.out, l.in}, l.w));
  };
  for (std::size_t i = 0; i < c.n_layers; ++i) {
    const auto& L = layers_[i];
    out.emplace(layer_name(i, "attn_norm"), Tensor({c.d_model}, L.attn_norm));
    put(layer_name(i, "wq"), L.wq);
    put(layer_name(i, "wk"), L.wk);
    put(layer_name(i, "wv"), L.wv);
    put(layer_name(i, "wo"), L.wo);
    if (c.d_ff > 0) {
      out.emplace(layer_name(i, "ffn_norm"), Tensor({c.d_model}, L.ffn_norm));
      put(layer_name(i, "w_gate"), L.w_gate);
      put(layer_name(i, "w_up"), L.w_up);
      put(layer_name(i, "w_down"), L.w_down);
    }
  }
  return out;
}

// Single-position forward shared by prefill, the full step and the partial
// step, so captured rows agree bitwise between the three paths.
class ForwardPass {
 public:
  struct Options {
    const InterventionSpec* intervention = nullptr;
    std::size_t stop_layer = 0;
    std::span<const HeadId> capture;
    bool write_cache = false;
    bool compute_logits = false;
  };

  static void run(const Model& model, KVCache& cache, TokenId token, const Options& opt,
                  AttentionTrace* trace, std::vector<float>* logits) {
    const auto& c = model.config();
    const std::size_t pos = cache.length();
    require(cache.n_layers() == c.n_layers, ErrorKind::kValidation,
            "cache was built for a different model");
    require(pos < c.max_seq, ErrorKind::kCapacity,
            "cache overflow: position " + std::to_string(pos) + " >= max_seq " +
                std::to_string(c.max_seq));
    require(token >= 0 && static_cast<std::size_t>(token) < c.vocab_size, ErrorKind::kValidation,
            "token id " + std::to_string(token) + " outside vocabulary");
    const std::size_t row_len = pos + 1;
    if (opt.intervention) validate_intervention(*opt.intervention, row_len);
    const auto* bias = opt.intervention ? std::get_if<LogitBias>(opt.intervention) : nullptr;
    const auto* temp = opt.intervention ? std::get_if<AttentionTemperature>(opt.intervention) : nullptr;

    const std::size_t dm = c.d_model, dh = c.d_head, q_dim = c.n_heads * dh, kv_dim = c.kv_dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    std::vector<float> x(model.embedding().begin() + static_cast<std::ptrdiff_t>(token * dm),
                         model.embedding().begin() + static_cast<std::ptrdiff_t>((token + 1) * dm));
    std::vector<float> h(dm), q(q_dim), k(kv_dim), v(kv_dim), head_out(q_dim), proj(dm);
    std::vector<float> row_logits(row_len), row_probs(row_len);
    std::vector<float> ff_gate, ff_up;
    if (c.d_ff > 0) {
      ff_gate.resize(c.d_ff);
      ff_up.resize(c.d_ff);
    }
    if (trace) {
      trace->step = pos;
      trace->entries.clear();
    }

    for (std::size_t l = 0; l < opt.stop_layer; ++l) {
      const auto& L = model.layer(l);
      kernels::rms_norm_into(x, L.attn_norm, c.norm_eps, h);
      kernels::matvec(L.wq.w, q_dim, dm, h, q);
      kernels::matvec(L.wk.w, kv_dim, dm, h, k);
      kernels::matvec(L.wv.w, kv_dim, dm, h, v);
      for (std::size_t hh = 0; hh < c.n_heads; ++hh) {
        kernels::rope_inplace(std::span<float>(q).subspan(hh * dh, dh), pos, c.theta_base, c.rotary_dims());
      }
      for (std::size_t kh = 0; kh < c.n_kv_heads; ++kh) {
        kernels::rope_inplace(std::span<float>(k).subspan(kh * dh, dh), pos, c.theta_base, c.rotary_dims());
      }
      const float* K = cache.keys_[l].data();
      const float* V = cache.values_[l].data();
      for (std::size_t hh = 0; hh < c.n_heads; ++hh) {
        const std::size_t kvh = hh / c.group_size();
        const float* qh = q.data() + hh * dh;
        for (std::size_t j = 0; j < pos; ++j) {
          row_logits[j] = kernels::dot(qh, K + j * kv_dim + kvh * dh, dh) * scale;
        }
        row_logits[pos] = kernels::dot(qh, k.data() + kvh * dh, dh) * scale;
        if (bias) {
          for (std::size_t j = 0; j < row_len; ++j) row_logits[j] += bias->bias[j];
        } else if (temp) {
          for (std::size_t j = 0; j < row_len; ++j) row_logits[j] /= temp->tau;
        }
        kernels::check_finite(row_logits, "attention logits");
        kernels::softmax_into(row_logits, row_probs);
        const HeadId id{l, hh};
        if (trace && std::binary_search(opt.capture.begin(), opt.capture.end(), id)) {
          trace->entries.emplace(id, HeadRow{row_logits, row_probs});
        }
        float* out = head_out.data() + hh * dh;
        std::fill(out, out + dh, 0.0f);
        for (std::size_t j = 0; j < pos; ++j) {
          const float p = row_probs[j];
          const float* vj = V + j * kv_dim + kvh * dh;
          for (std::size_t d = 0; d < dh; ++d) out[d] += p * vj[d];
        }
        const float p = row_probs[pos];
        const float* vj = v.data() + kvh * dh;
        for (std::size_t d = 0; d < dh; ++d) out[d] += p * vj[d];
      }
      kernels::matvec(L.wo.w, dm, q_dim, head_out, proj);
      for (std::size_t i = 0; i < dm; ++i) x[i] += proj[i];

      if (c.d_ff > 0) {
        kernels::rms_norm_into(x, L.ffn_norm, c.norm_eps, h);
        kernels::matvec(L.w_gate.w, c.d_ff, dm, h, ff_gate);
        kernels::matvec(L.w_up.w, c.d_ff, dm, h, ff_up);
        for (std::size_t i = 0; i < c.d_ff; ++i) {
          const float g = ff_gate[i];
          ff_gate[i] = g / (1.0f + std::exp(-g)) * ff_up[i];
        }
        kernels::matvec(L.w_down.w, dm, c.d_ff, ff_gate, proj);
        for (std::size_t i = 0; i < dm; ++i) x[i] += proj[i];
      }

      if (opt.write_cache) {
        cache.keys_[l].insert(cache.keys_[l].end(), k.begin(), k.end());
        cache.values_[l].insert(cache.values_[l].end(), v.begin(), v.end());
      }
    }
    kernels::check_finite(x, "residual stream");
    if (opt.write_cache) ++cache.length_;

    if (opt.compute_logits && logits) {
      kernels::rms_norm_into(x, model.final_norm(), c.norm_eps, h);
      logits->assign(c.vocab_size, 0.0f);
      kernels::matvec(model.output_head(), c.vocab_size, dm, h, *logits);
      kernels::check_finite(*logits, "output logits");
    }
  }
};

namespace {

std::vector<HeadId> sorted_capture(std::span<const HeadId> capture, const ModelConfig& c) {
  std::vector<HeadId> out(capture.begin(), capture.end());
  for (const auto& id : out) {
    require(id.layer < c.n_layers && id.head < c.n_heads, ErrorKind::kValidation,
            "head " + to_string(id) + " outside model");
  }
  return normalize_heads(std::move(out));
}

}  // namespace

PrefillResult prefill(const Model& model, std::span<const TokenId> tokens,
                      std::span<const HeadId> capture, std::size_t capture_last) {
  const auto& c = model.config();
  require(!tokens.empty(), ErrorKind::kValidation, "prefill on empty input");
  require(tokens.size() <= c.max_seq, ErrorKind::kCapacity,
          "sequence of " + std::to_string(tokens.size()) + " tokens exceeds max_seq " +
              std::to_string(c.max_seq));
  const auto heads = sorted_capture(capture, c);
  capture_last = std::min(capture_last, tokens.size());
  PrefillResult result{KVCache(c), {}, {}};
  result.traces.reserve(capture_last);
  const InterventionSpec none = NoIntervention{};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    ForwardPass::Options opt;
    opt.intervention = &none;
    opt.stop_layer = c.n_layers;
    opt.capture = heads;
    opt.write_cache = true;
    opt.compute_logits = i + 1 == tokens.size();
    const bool want_trace = i + capture_last >= tokens.size() && capture_last > 0;
    AttentionTrace trace;
    ForwardPass::run(model, result.cache, tokens[i], opt, want_trace ? &trace : nullptr,
                     &result.logits);
    if (want_trace) result.traces.push_back(std::move(trace));
  }
  return result;
}

StepResult decode_step_full(const Model& model, KVCache& cache, TokenId token,
                            const InterventionSpec& intervention,
                            std::span<const HeadId> capture) {
  const auto& c = model.config();
  const auto heads = sorted_capture(capture, c);
  ForwardPass::Options opt;
  opt.intervention = &intervention;
  opt.stop_layer = c.n_layers;
  opt.capture = heads;
  opt.write_cache = true;
  opt.compute_logits = true;
  StepResult result;
  ForwardPass::run(model, cache, token, opt, &result.trace, &result.logits);
  return result;
}

AttentionTrace decode_step_partial(const Model& model, const KVCache& cache, TokenId token,
                                   std::size_t stop_layer, std::span<const HeadId> capture) {
  const auto& c = model.config();
  const auto heads = sorted_capture(capture, c);
  require(stop_layer >= 1 && stop_layer <= c.n_layers, ErrorKind::kValidation,
          "stop_layer must lie in [1, n_layers]");
  for (const auto& id : heads) {
    require(id.layer < stop_layer, ErrorKind::kValidation,
            "stop_layer " + std::to_string(stop_layer) + " is below captured head " + to_string(id));
  }
  ForwardPass::Options opt;
  opt.stop_layer = stop_layer;
  opt.capture = heads;
  AttentionTrace trace;
  // write_cache is off, so the cache is only read.
  ForwardPass::run(model, const_cast<KVCache&>(cache), token, opt, &trace, nullptr);
  return trace;
}

}  // namespace dysco
