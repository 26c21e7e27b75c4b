// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "dysco/error.hpp"

namespace dysco {

namespace {

constexpr double kMassSlack = 1e-9;

template <typename T>
bool one_of(T v, std::initializer_list<T> allowed) {
  return std::find(allowed.begin(), allowed.end(), v) != allowed.end();
}

}  // namespace

void DyscoParams::validate(const ModelConfig* config) const {
  require(!heads.empty(), ErrorKind::kValidation, "DySCO needs at least one head");
  require(std::set<HeadId>(heads.begin(), heads.end()).size() == heads.size(), ErrorKind::kValidation,
          "duplicate head in DySCO head set");
  require(p > 0.0 && p <= 1.0, ErrorKind::kValidation, "p must lie in (0, 1]");
  require(K >= 1, ErrorKind::kValidation, "K must be at least 1");
  require(std::isfinite(beta) && beta > 0.0, ErrorKind::kValidation, "beta must be positive");
  require(gamma >= 0.0 && gamma < 1.0, ErrorKind::kValidation, "gamma must lie in [0, 1)");
  require(warmup >= 1, ErrorKind::kValidation, "warm-up window must be at least 1");
  std::size_t deepest = 0;
  for (const auto& h : heads) deepest = std::max(deepest, h.layer);
  require(stop_layer == 0 || stop_layer >= deepest + 1, ErrorKind::kValidation,
          "stop_layer " + std::to_string(stop_layer) + " is below head layer " + std::to_string(deepest));
  if (config) {
    for (const auto& h : heads) {
      require(h.layer < config->n_layers && h.head < config->n_heads, ErrorKind::kValidation,
              "head " + to_string(h) + " outside model");
    }
    require(stop_layer <= config->n_layers, ErrorKind::kValidation, "stop_layer exceeds n_layers");
  }
}

bool DyscoParams::on_grid() const {
  return one_of(p, {0.95, 0.975}) && one_of<std::size_t>(K, {4096, 8192}) &&
         one_of(beta, {2.0, 2.5, 3.0}) && gamma == kDefaultGamma && warmup == kDefaultWarmup;
}

std::size_t DyscoParams::effective_stop_layer() const {
  if (stop_layer != 0) return stop_layer;
  std::size_t deepest = 0;
  for (const auto& h : heads) deepest = std::max(deepest, h.layer);
  return deepest + 1;
}

const std::vector<DyscoPreset>& dysco_presets() {
  static const std::vector<DyscoPreset> presets = {
      {"qwen3-4b", 0.975, 4096, 2.0},       {"qwen3-4b-yarn", 0.95, 8192, 2.5},
      {"qwen3-8b", 0.975, 4096, 2.0},       {"qwen3-8b-yarn", 0.975, 8192, 2.5},
      {"qwen3-32b", 0.975, 4096, 2.0},      {"qwen3-32b-yarn", 0.95, 8192, 2.5},
      {"llama-3.1-8b", 0.975, 4096, 2.0},
  };
  return presets;
}

const DyscoPreset& dysco_preset(const std::string& name) {
  for (const auto& p : dysco_presets()) {
    if (p.name == name) return p;
  }
  fail(ErrorKind::kValidation, "unknown DySCO preset '" + name + "'");
}

double uniattns_preset(const std::string& family) {
  static const std::map<std::string, double> taus = {
      {"qwen3-4b", 0.95}, {"qwen3-8b", 0.975}, {"qwen3-32b", 0.975}, {"llama-3.1-8b", 0.9}};
  auto it = taus.find(family);
  require(it != taus.end(), ErrorKind::kValidation, "no temperature preset for '" + family + "'");
  return it->second;
}

std::vector<double> head_average(const AttentionTrace& trace, std::span<const HeadId> heads,
                                 std::size_t length) {
  require(!heads.empty(), ErrorKind::kValidation, "head average over an empty head set");
  std::vector<double> acc(length, 0.0);
  for (const auto& h : heads) {
    const auto& row = trace.at(h).probs;
    require(row.size() <= length, ErrorKind::kDimension,
            "attention row of length " + std::to_string(row.size()) + " exceeds " + std::to_string(length));
    for (std::size_t i = 0; i < row.size(); ++i) acc[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(heads.size());
  for (auto& v : acc) v *= inv;
  return acc;
}

RelevanceState init_relevance(std::span<const AttentionTrace> traces, const DyscoParams& params) {
  require(!traces.empty(), ErrorKind::kValidation, "warm-up needs at least one trace");
  const std::size_t T = traces.back().step + 1;
  require(params.warmup <= T, ErrorKind::kValidation,
          "warm-up window " + std::to_string(params.warmup) + " exceeds prompt length " + std::to_string(T));
  require(traces.size() == params.warmup, ErrorKind::kValidation,
          "expected " + std::to_string(params.warmup) + " warm-up traces, got " + std::to_string(traces.size()));
  for (std::size_t i = 1; i < traces.size(); ++i) {
    require(traces[i].step == traces[i - 1].step + 1, ErrorKind::kValidation,
            "warm-up traces are not consecutive");
  }
  RelevanceState state{std::vector<double>(T, 0.0), T - 1};
  double weight = 1.0;
  for (std::size_t d = 0; d < traces.size(); ++d) {
    const auto avg = head_average(traces[traces.size() - 1 - d], params.heads, T);
    for (std::size_t i = 0; i < T; ++i) state.r[i] += weight * avg[i];
    weight *= params.gamma;
  }
  const double total = std::accumulate(state.r.begin(), state.r.end(), 0.0);
  require(total > 0.0, ErrorKind::kNonFinite, "warm-up relevance has zero mass");
  for (auto& v : state.r) v /= total;
  return state;
}

RelevanceState aggregate(const AttentionTrace& trace, const RelevanceState& state,
                         std::span<const HeadId> heads, double gamma) {
  require(trace.step == state.step + 1, ErrorKind::kValidation,
          "trace step " + std::to_string(trace.step) + " does not follow relevance step " +
              std::to_string(state.step));
  const std::size_t n = trace.step + 1;
  require(state.r.size() + 1 == n, ErrorKind::kDimension, "relevance length mismatch after padding");
  const auto fresh = head_average(trace, heads, n);
  RelevanceState out{std::vector<double>(n), trace.step};
  for (std::size_t i = 0; i < n; ++i) {
    const double prev = i < state.r.size() ? state.r[i] : 0.0;
    out.r[i] = gamma * prev + (1.0 - gamma) * fresh[i];
  }
  return out;
}

std::vector<std::size_t> select_top(std::span<const double> r, double p, std::size_t K) {
  require(!r.empty(), ErrorKind::kValidation, "select_top on an empty relevance vector");
  require(p > 0.0, ErrorKind::kValidation, "p must be positive");
  require(K >= 1, ErrorKind::kValidation, "K must be at least 1");
  std::vector<std::size_t> order(r.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return r[a] > r[b]; });
  std::vector<std::size_t> chosen;
  if (p >= 1.0) {
    chosen.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(K, order.size())));
  } else {
    double mass = 0.0;
    for (std::size_t idx : order) {
      if (chosen.size() == K || mass >= p - kMassSlack || r[idx] <= 0.0) break;
      chosen.push_back(idx);
      mass += r[idx];
    }
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<float> build_bias(std::span<const std::size_t> selected, double beta, std::size_t length) {
  require(beta > 0.0 && std::isfinite(beta), ErrorKind::kValidation, "beta must be positive");
  std::vector<float> v(length, 0.0f);
  const auto lb = static_cast<float>(std::log(beta));
  for (auto i : selected) {
    require(i < length, ErrorKind::kValidation,
            "selected position " + std::to_string(i) + " outside length " + std::to_string(length));
    v[i] = lb;
  }
  return v;
}

std::string policy_name(const DecodePolicy& policy) {
  struct Namer {
    std::string operator()(const Vanilla&) const { return "vanilla"; }
    std::string operator()(const UniAttnS&) const { return "uniattns"; }
    std::string operator()(const Dysco&) const { return "dysco"; }
    std::string operator()(const StaticScaling&) const { return "static"; }
    std::string operator()(const RandomHeadDysco&) const { return "random_head"; }
  };
  return std::visit(Namer{}, policy);
}

std::vector<HeadId> draw_random_heads(const ModelConfig& config, std::size_t k, std::uint64_t seed) {
  auto pool = all_heads(config);
  require(k >= 1 && k <= pool.size(), ErrorKind::kValidation, "random head count out of range");
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return normalize_heads(std::move(pool));
}

Sampler::Sampler(SamplerConfig config) : config_(config), rng_(config.seed) {
  if (config_.mode == SamplerConfig::Mode::kNucleus) {
    require(config_.temperature > 0.0, ErrorKind::kValidation, "sampling temperature must be positive");
    require(config_.top_p > 0.0 && config_.top_p <= 1.0, ErrorKind::kValidation, "top_p must lie in (0, 1]");
  }
}

TokenId Sampler::sample(std::span<const float> logits) {
  require(!logits.empty(), ErrorKind::kValidation, "sampling from empty logits");
  if (config_.mode == SamplerConfig::Mode::kGreedy) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> probs(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    z += probs[i] = std::exp((logits[i] - mx) / config_.temperature);
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double kept = 0.0;
  std::size_t n = 0;
  while (n < order.size() && kept < config_.top_p * z) kept += probs[order[n++]];
  const double u = static_cast<double>(rng_() >> 11) * 0x1.0p-53 * kept;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += probs[order[i]];
    if (u < acc) return static_cast<TokenId>(order[i]);
  }
  return static_cast<TokenId>(order[n - 1]);
}

DecodeSession::DecodeSession(const Model& model, DecodePolicy policy)
    : model_(model), policy_(std::move(policy)), cache_(model.config()) {
  if (auto* d = std::get_if<Dysco>(&policy_)) {
    params_ = d->params;
  } else if (auto* s = std::get_if<StaticScaling>(&policy_)) {
    params_ = s->params;
  } else if (auto* rh = std::get_if<RandomHeadDysco>(&policy_)) {
    params_ = rh->params;
    params_->heads = draw_random_heads(model.config(), rh->k, rh->seed);
  } else if (auto* u = std::get_if<UniAttnS>(&policy_)) {
    validate_intervention(AttentionTemperature{u->tau}, 1);
  }
  if (params_) {
    params_->heads = normalize_heads(params_->heads);
    params_->validate(&model.config());
    heads_ = params_->heads;
  }
}

void DecodeSession::start(std::span<const TokenId> prompt, std::span<const HeadId> capture) {
  require(!prompt.empty(), ErrorKind::kValidation, "empty prompt");
  require(prompt.size() <= model_.config().max_seq, ErrorKind::kCapacity, "prompt exceeds max_seq");
  std::vector<HeadId> cap(capture.begin(), capture.end());
  cap.insert(cap.end(), heads_.begin(), heads_.end());
  capture_ = normalize_heads(std::move(cap));
  warmup_.clear();
  relevance_.reset();
  static_selection_.clear();
  first_step_ = true;
  std::size_t warm = 0;
  if (params_) {
    // Prompts shorter than the window shrink it.
    params_->warmup = std::min(params_->warmup, prompt.size());
    warm = params_->warmup - 1;
  }
  if (prompt.size() > 1) {
    auto pre = prefill(model_, prompt.first(prompt.size() - 1), heads_, warm);
    cache_ = std::move(pre.cache);
    warmup_ = std::move(pre.traces);
  } else {
    cache_ = KVCache(model_.config());
  }
  pending_ = prompt.back();
}

void DecodeSession::feed(TokenId token) {
  require(!pending_.has_value(), ErrorKind::kValidation, "a token is already pending");
  pending_ = token;
}

StepRecord DecodeSession::step() {
  require(pending_.has_value(), ErrorKind::kValidation, "no pending token; call feed() first");
  const TokenId token = *pending_;
  StepRecord rec;
  rec.position = cache_.length();
  const std::size_t length = rec.position + 1;
  InterventionSpec spec = NoIntervention{};

  if (const auto* u = std::get_if<UniAttnS>(&policy_)) {
    spec = AttentionTemperature{u->tau};
  } else if (params_) {
    const bool is_static = std::holds_alternative<StaticScaling>(policy_);
    if (first_step_ || !is_static) {
      auto trace = decode_step_partial(model_, cache_, token, params_->effective_stop_layer(), heads_);
      if (first_step_) {
        warmup_.push_back(std::move(trace));
        relevance_ = init_relevance(warmup_, *params_);
        warmup_.clear();
      } else {
        relevance_ = aggregate(trace, *relevance_, heads_, params_->gamma);
      }
      rec.selected = select_top(relevance_->r, params_->p, params_->K);
      if (is_static) static_selection_ = rec.selected;
    } else {
      rec.selected = static_selection_;
    }
    for (auto i : rec.selected) rec.selected_mass += relevance_->r[i];
    // A bias on every position is a uniform shift, which softmax ignores.
    if (rec.selected.size() < length) {
      rec.bias = build_bias(rec.selected, params_->beta, length);
      spec = LogitBias{rec.bias};
    }
  }
  auto out = decode_step_full(model_, cache_, token, spec, capture_);
  rec.logits = std::move(out.logits);
  rec.trace = std::move(out.trace);
  pending_.reset();
  first_step_ = false;
  return rec;
}

nlohmann::json to_json(const StepTelemetry& t) {
  nlohmann::json j = {{"step", t.step},
                      {"position", t.position},
                      {"token", t.token},
                      {"selected_size", t.selected_size},
                      {"selected_mass", t.selected_mass}};
  if (!t.gold_mass.empty()) {
    nlohmann::json g = nlohmann::json::object();
    for (const auto& [h, m] : t.gold_mass) g[to_string(h)] = m;
    j["gold_mass"] = g;
  }
  return j;
}

GenerateResult generate(const Model& model, std::span<const TokenId> prompt, const DecodePolicy& policy,
                        const SamplerConfig& sampler_config, const StopRules& stop,
                        const GenerateOptions& options) {
  require(stop.max_new >= 1, ErrorKind::kValidation, "max_new must be at least 1");
  require(prompt.size() + stop.max_new <= model.config().max_seq, ErrorKind::kCapacity,
          "prompt of " + std::to_string(prompt.size()) + " tokens plus " + std::to_string(stop.max_new) +
              " new tokens exceeds max_seq " + std::to_string(model.config().max_seq));
  DecodeSession session(model, policy);
  std::vector<HeadId> tele = options.gold_span ? options.telemetry_heads : std::vector<HeadId>{};
  if (options.gold_span && tele.empty()) tele = session.heads();
  session.start(prompt, tele);
  Sampler sampler(sampler_config);
  GenerateResult result;
  result.stop_reason = "max_new";
  for (std::size_t i = 0; i < stop.max_new; ++i) {
    auto rec = session.step();
    const TokenId tok = sampler.sample(rec.logits);
    result.tokens.push_back(tok);
    StepTelemetry t{i, rec.position, tok, rec.selected.size(), rec.selected_mass, {}};
    if (options.gold_span) {
      for (const auto& h : tele) {
        const auto& row = rec.trace.at(h).probs;
        double m = 0.0;
        for (std::size_t j = options.gold_span->begin; j < std::min(options.gold_span->end, row.size()); ++j) {
          m += row[j];
        }
        t.gold_mass[h] = m;
      }
    }
    result.telemetry.push_back(std::move(t));
    if (std::find(stop.stop_tokens.begin(), stop.stop_tokens.end(), tok) != stop.stop_tokens.end()) {
      result.stop_reason = "stop_token";
      break;
    }
    if (stop.stop_when && stop.stop_when(result.tokens)) {
      result.stop_reason = "stop_rule";
      break;
    }
    if (i + 1 < stop.max_new) session.feed(tok);
  }
  return result;
}

PolicyConfig parse_policy_config(const nlohmann::json& j) {
  static const std::set<std::string> known = {"policy", "preset", "p",        "K",    "beta",
                                              "gamma",  "warmup", "stop_layer", "tau", "heads",
                                              "random_k", "seed", "sampler"};
  require(j.is_object(), ErrorKind::kValidation, "policy config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    require(known.count(key) == 1, ErrorKind::kValidation, "unknown policy config key '" + key + "'");
  }
  PolicyConfig c;
  try {
    c.policy = j.value("policy", c.policy);
    require(one_of<std::string>(c.policy, {"vanilla", "uniattns", "dysco", "static", "random_head"}),
            ErrorKind::kValidation, "unknown policy '" + c.policy + "'");
    if (j.contains("preset")) {
      const auto name = j["preset"].get<std::string>();
      if (c.policy == "uniattns") {
        c.tau = static_cast<float>(uniattns_preset(name));
      } else {
        const auto& pr = dysco_preset(name);
        c.params.p = pr.p;
        c.params.K = pr.K;
        c.params.beta = pr.beta;
      }
    }
    c.params.p = j.value("p", c.params.p);
    c.params.K = j.value("K", c.params.K);
    c.params.beta = j.value("beta", c.params.beta);
    c.params.gamma = j.value("gamma", c.params.gamma);
    c.params.warmup = j.value("warmup", c.params.warmup);
    c.params.stop_layer = j.value("stop_layer", c.params.stop_layer);
    c.tau = j.value("tau", c.tau);
    c.heads_path = j.value("heads", c.heads_path);
    c.random_k = j.value("random_k", c.random_k);
    c.sampler.seed = j.value("seed", c.sampler.seed);
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      for (const auto& [key, _] : s.items()) {
        require(one_of<std::string>(key, {"mode", "temperature", "top_p", "seed"}), ErrorKind::kValidation,
                "unknown sampler key '" + key + "'");
      }
      const auto mode = s.value("mode", std::string("greedy"));
      require(mode == "greedy" || mode == "nucleus", ErrorKind::kValidation, "unknown sampler mode '" + mode + "'");
      c.sampler.mode = mode == "greedy" ? SamplerConfig::Mode::kGreedy : SamplerConfig::Mode::kNucleus;
      c.sampler.temperature = s.value("temperature", c.sampler.temperature);
      c.sampler.top_p = s.value("top_p", c.sampler.top_p);
      c.sampler.seed = s.value("seed", c.sampler.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad policy config: ") + e.what());
  }
  return c;
}

DecodePolicy make_policy(const PolicyConfig& config, std::vector<HeadId> heads, std::uint64_t seed) {
  if (config.policy == "vanilla") return Vanilla{};
  if (config.policy == "uniattns") return UniAttnS{config.tau};
  DyscoParams params = config.params;
  if (config.policy == "random_head") {
    const std::size_t k = config.random_k ? config.random_k : heads.size();
    require(k >= 1, ErrorKind::kValidation, "random_head needs a head count (random_k or a head list)");
    params.heads = {HeadId{0, 0}};
    return RandomHeadDysco{params, k, seed};
  }
  params.heads = std::move(heads);
  if (config.policy == "static") return StaticScaling{params};
  return Dysco{params};
}

}  // namespace dysco
