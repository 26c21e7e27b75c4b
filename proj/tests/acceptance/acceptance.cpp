// Acceptance checks. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails (including its runtime budget).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "dysco/decoder.hpp"
#include "dysco/heads.hpp"
#include "dysco/tasks.hpp"
#include "dysco/tensor.hpp"
#include "dysco/zoo.hpp"
#include "support/path_oracle.hpp"
#include "support/reference.hpp"

using namespace dysco;

namespace {

struct Outcome {
  bool ok = true;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const Model& induction_model() {
  static const Model m = [] {
    auto built = build_induction_model(InductionModelSpec{});
    return Model(built.config, built.tensors);
  }();
  return m;
}

std::vector<CalibrationExample> recall_calibration_set(std::size_t vocab = 8000) {
  std::vector<CalibrationExample> cal;
  for (std::uint64_t s = 0; s < 16; ++s) cal.push_back(recall_calibration(gen_recall_task(64, 100000 + s, vocab)));
  return cal;
}

DyscoParams preset_params(const std::string& name, std::vector<HeadId> heads) {
  const auto& pr = dysco_preset(name);
  DyscoParams p;
  p.p = pr.p;
  p.K = pr.K;
  p.beta = pr.beta;
  p.heads = std::move(heads);
  return p;
}

// ---- criteria --------------------------------------------------------------

Outcome tilt_identity() {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 3.0);
  double worst = 0.0;
  const double betas[] = {2.0, 2.5, 3.0};
  for (int c = 0; c < 1000; ++c) {
    const std::size_t len = 1 + rng() % 256;
    std::vector<float> logits(len), bias(len, 0.0f);
    for (auto& l : logits) l = static_cast<float>(n(rng));
    const double beta = betas[c % 3];
    std::vector<bool> sel(len);
    for (std::size_t i = 0; i < len; ++i) {
      sel[i] = rng() % 3 == 0;
      if (sel[i]) bias[i] = static_cast<float>(std::log(beta));
    }
    const auto got = softmax_with_bias(logits, bias);
    // closed form: p_i * beta^[i in S] / sum_j p_j * beta^[j in S]
    double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> w(len);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      w[i] = std::exp(static_cast<double>(logits[i]) - mx) * (sel[i] ? beta : 1.0);
      z += w[i];
    }
    for (std::size_t i = 0; i < len; ++i) worst = std::max(worst, std::abs(got[i] - w[i] / z));
  }
  return {worst <= 1e-6, "max deviation " + fmt("%.2e", worst) + " over 1000 cases"};
}

Outcome vanilla_equivalences() {
  const auto& m = induction_model();
  const auto task = gen_recall_task(32, 5, 8000);
  StopRules stop;
  stop.max_new = 200;
  const auto vanilla = generate(m, task.prompt_tokens, Vanilla{}, {}, stop).tokens;
  const std::vector<HeadId> heads{{1, 0}, {1, 1}};

  auto beta_one = preset_params("qwen3-8b", heads);
  beta_one.beta = 1.0;
  auto empty = preset_params("qwen3-8b", heads);
  empty.p = 1e-12;  // below the mass slack: nothing is selected
  auto full = preset_params("qwen3-8b", heads);
  full.p = 1.0;
  full.K = 1u << 20;

  std::ostringstream d;
  bool ok = vanilla.size() == 200;
  const std::vector<std::pair<std::string, DyscoParams>> cases = {{"beta=1", beta_one}, {"empty", empty}, {"p=1", full}};
  for (const auto& [name, params] : cases) {
    auto gen = generate(m, task.prompt_tokens, Dysco{params}, {}, stop);
    std::size_t same = 0;
    while (same < std::min(gen.tokens.size(), vanilla.size()) && gen.tokens[same] == vanilla[same]) ++same;
    ok &= gen.tokens == vanilla;
    if (name == "empty") {
      for (const auto& t : gen.telemetry) ok &= t.selected_size == 0;
    }
    d << name << " " << same << "/200 ";
  }
  return {ok, d.str() + "identical tokens"};
}

Outcome temperature_equivalence() {
  const auto& m = induction_model();
  const auto task = gen_recall_task(16, 6, 8000);
  StopRules stop;
  stop.max_new = 40;
  const bool same = generate(m, task.prompt_tokens, Vanilla{}, {}, stop).tokens ==
                    generate(m, task.prompt_tokens, UniAttnS{1.0f}, {}, stop).tokens;

  // Random rows through the engine's temperature hook on a random model: layer-0
  // rows see the same inputs, so they must equal softmax(l / tau) of the clean row.
  auto c = testing::small_config(2, 4, 2);
  bool argmax_ok = true;
  double worst = 0.0;
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    auto model = testing::random_model(c, 300 + static_cast<std::uint64_t>(trial), 3.0f);
    std::vector<TokenId> toks(2 + rng() % 30);
    for (auto& t : toks) t = static_cast<TokenId>(rng() % c.vocab_size);
    std::vector<TokenId> prompt(toks.begin(), toks.end() - 1);
    auto pre = prefill(model, prompt, {}, 0);
    const auto hs = all_heads(c);
    KVCache scratch = pre.cache;
    auto clean = decode_step_full(model, scratch, toks.back(), NoIntervention{}, hs);
    for (float tau : {0.975f, 0.95f, 0.9f, 0.85f}) {
      KVCache cache = pre.cache;
      auto hot = decode_step_full(model, cache, toks.back(), AttentionTemperature{tau}, hs);
      for (std::size_t h = 0; h < c.n_heads; ++h) {
        const auto& l = clean.trace.at({0, h}).logits;
        const auto& p = hot.trace.at({0, h}).probs;
        const double mx = *std::max_element(l.begin(), l.end());
        double z = 0.0;
        for (float v : l) z += std::exp((v - mx) / tau);
        for (std::size_t i = 0; i < l.size(); ++i) {
          worst = std::max(worst, std::abs(p[i] - std::exp((l[i] - mx) / tau) / z));
        }
        argmax_ok &= (std::max_element(l.begin(), l.end()) - l.begin()) == (std::max_element(p.begin(), p.end()) - p.begin());
      }
      for (const auto& [id, row] : hot.trace.entries) {
        argmax_ok &= (std::max_element(row.logits.begin(), row.logits.end()) - row.logits.begin()) ==
                     (std::max_element(row.probs.begin(), row.probs.end()) - row.probs.begin());
      }
    }
  }
  return {same && argmax_ok && worst <= 1e-6,
          std::string("tau=1 ") + (same ? "identical" : "differs") + ", argmax " + (argmax_ok ? "kept" : "changed") +
              ", row deviation " + fmt("%.1e", worst)};
}

// Smallest subset (by brute force) whose mass reaches p - slack, capped at K.
std::vector<std::size_t> brute_force_select(const std::vector<double>& r, double p, std::size_t K) {
  const std::size_t n = r.size();
  std::vector<std::size_t> best;
  double best_mass = -1.0;
  for (std::size_t size = 1; size <= n; ++size) {
    best.clear();
    best_mass = -1.0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
      if (static_cast<std::size_t>(__builtin_popcount(mask)) != size) continue;
      double mass = 0.0;
      bool has_zero = false;
      for (std::size_t i = 0; i < n; ++i) {
        if (mask >> i & 1u) {
          mass += r[i];
          has_zero |= r[i] <= 0.0;
        }
      }
      if (has_zero) continue;
      if (mass > best_mass) {
        best_mass = mass;
        best.clear();
        for (std::size_t i = 0; i < n; ++i) {
          if (mask >> i & 1u) best.push_back(i);
        }
      }
    }
    if (size == K || best_mass >= p - 1e-9) return best;
  }
  return best;
}

Outcome select_top_oracle() {
  std::mt19937_64 rng(11);
  std::exponential_distribution<double> ex(1.0);
  std::size_t mismatches = 0;
  const double ps[] = {0.95, 0.975};
  const std::size_t Ks[] = {4096, 8192, 1, 2, 3, 5};
  for (int c = 0; c < 10000; ++c) {
    const std::size_t n = 1 + rng() % 10;
    std::vector<double> r(n);
    const double sharp = 1.0 + static_cast<double>(rng() % 4);
    double z = 0.0;
    for (auto& v : r) z += (v = (rng() % 7 == 0) ? 0.0 : std::pow(ex(rng), sharp));
    if (z == 0.0) {
      r[0] = 1.0;
      z = 1.0;
    }
    for (auto& v : r) v /= z;
    const double p = ps[c % 2];
    const std::size_t K = Ks[(c / 2) % 6];
    if (select_top(r, p, K) != brute_force_select(r, p, K)) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + " mismatches over 10000 distributions"};
}

Outcome qrscore_detection() {
  const auto ranking = detect_heads(induction_model(), recall_calibration_set(), 8, 1);
  const auto& top = ranking.selected.at(0);
  const double first = ranking.scores.at(top), second = ranking.scores.at(ranking.selected.at(1));
  const bool ok = top == HeadId{1, 0} && first >= 2.0 * second;
  return {ok, "top " + to_string(top) + " score " + fmt("%.2f", first) + ", runner-up " + to_string(ranking.selected[1]) +
                  " " + fmt("%.2f", second) + ", margin " + fmt("%.2fx", first / second)};
}

Outcome flops_table() {
  const auto c = flops_reference_config();
  const auto r4 = flops_estimate(c, 131072, 4096, 0.6);
  const auto r8 = flops_estimate(c, 131072, 8192, 0.6);
  auto pt = [](double ratio) { return std::round(ratio * 1000.0) / 10.0; };
  const bool ok = std::abs(pt(r4.decode_ratio) - 3.2) <= 0.3 + 1e-9 && std::abs(pt(r8.decode_ratio) - 6.4) <= 0.3 + 1e-9 &&
                  std::abs(pt(r4.overhead_ratio) - 2.0) <= 0.3 + 1e-9 &&
                  std::abs(pt(r8.overhead_ratio) - 3.8) <= 0.3 + 1e-9;
  return {ok, "decode/prefill " + fmt("%.1f%%", pt(r4.decode_ratio)) + " / " + fmt("%.1f%%", pt(r8.decode_ratio)) +
                  ", overhead " + fmt("%.1f%%", pt(r4.overhead_ratio)) + " / " + fmt("%.1f%%", pt(r8.overhead_ratio))};
}

Outcome recall_gain() {
  const auto& m = induction_model();
  const auto detected = detect_heads(m, recall_calibration_set(), 1, 1).selected;
  const auto params = preset_params("qwen3-8b", detected);
  constexpr int kTrials = 30;
  std::ostringstream d;
  bool ok = true;
  double largest_v = 0.0, largest_d = 0.0;
  for (std::size_t n : {64u, 128u, 256u}) {
    double v = 0.0, dy = 0.0, rh = 0.0;
    for (int s = 0; s < kTrials; ++s) {
      const auto task = gen_recall_task(n, static_cast<std::uint64_t>(s), 8000);
      v += run_recall(m, task, Vanilla{}).accuracy();
      dy += run_recall(m, task, Dysco{params}).accuracy();
      rh += run_recall(m, task, RandomHeadDysco{params, 1, static_cast<std::uint64_t>(s)}).accuracy();
    }
    v /= kTrials, dy /= kTrials, rh /= kTrials;
    ok &= dy >= v && rh <= dy;
    largest_v = v, largest_d = dy;
    d << n << ": vanilla " << fmt("%.2f", v) << " dysco " << fmt("%.2f", dy) << " random " << fmt("%.2f", rh) << "; ";
  }
  ok &= largest_d > largest_v;
  double st = 0.0, dy = 0.0;
  for (int s = 0; s < kTrials; ++s) {
    const auto task = gen_recall_task(256, 500 + static_cast<std::uint64_t>(s), 8000, 4);
    dy += run_recall(m, task, Dysco{params}).accuracy();
    st += run_recall(m, task, StaticScaling{params}).accuracy();
  }
  st /= kTrials, dy /= kTrials;
  ok &= st <= dy;
  d << "multi-query 256: dysco " << fmt("%.2f", dy) << " static " << fmt("%.2f", st);
  return {ok, d.str()};
}

Outcome fig3_telemetry() {
  const auto tok = build_path_tokenizer();
  InductionModelSpec spec;
  spec.vocab_size = tok.vocab_size();
  auto built = build_induction_model(spec);
  const Model m(built.config, built.tensors);
  const auto detected = detect_heads(m, recall_calibration_set(tok.vocab_size()), 1, 1).selected;
  const auto all = all_heads(m.config());
  constexpr int kSeeds = 20;
  bool ok = true;
  double prev_mass = 1.0;
  std::ostringstream d;
  for (std::size_t n : {50u, 100u, 200u}) {
    double det = 0.0, rnd = 0.0, mass = 0.0;
    for (int s = 0; s < kSeeds; ++s) {
      const auto seed = static_cast<std::uint64_t>(s);
      const auto task = gen_path_task(n, 4, seed, tok);
      const auto traces = route_step_traces(m, task, tok, all, 1);
      det += summarize_path_telemetry(traces, detected, task, 1, 0.05, seed).per_token.gold_top5_fraction;
      const auto random = draw_random_heads(m.config(), detected.size(), seed);
      rnd += summarize_path_telemetry(traces, random, task, 1, 0.05, seed).per_token.gold_top5_fraction;
      mass += summarize_path_telemetry(traces, all, task, 1, 0.05, seed).per_token.gold_attention_mass;
    }
    det /= kSeeds, rnd /= kSeeds, mass /= kSeeds;
    ok &= det > rnd && mass < prev_mass;
    prev_mass = mass;
    d << n << " edges: top5 detected " << fmt("%.3f", det) << " random " << fmt("%.3f", rnd) << ", all-head mass "
      << fmt("%.4f", mass) << "; ";
  }
  return {ok, d.str()};
}

Outcome cache_invariants() {
  std::mt19937_64 rng(21);
  std::size_t failures = 0;
  float worst = 0.0f;
  for (int prompt = 0; prompt < 100; ++prompt) {
    const std::size_t heads = 1 + rng() % 4;
    const std::size_t kv = (heads % 2 == 0 && rng() % 2) ? heads / 2 : heads;
    auto c = testing::small_config(1 + rng() % 3, heads, kv, (rng() % 2) ? 16 : 0);
    if (rng() % 2) c.rope_dims = 4;
    auto m = testing::random_model(c, 1000 + static_cast<std::uint64_t>(prompt), 2.0f);
    std::vector<TokenId> toks(2 + rng() % 40);
    for (auto& t : toks) t = static_cast<TokenId>(rng() % c.vocab_size);
    const auto ref = testing::reference_forward(m, toks);
    const std::size_t split = 1 + rng() % (toks.size() - 1);
    auto pre = prefill(m, std::span(toks).first(split), {}, 0);
    worst = std::max(worst, testing::max_abs_diff(pre.logits, ref.logits.row(split - 1)));
    const auto hs = all_heads(c);
    for (std::size_t t = split; t < toks.size(); ++t) {
      const KVCache before = pre.cache;
      const auto partial = decode_step_partial(m, pre.cache, toks[t], c.n_layers, hs);
      bool untouched = pre.cache.length() == before.length();
      for (std::size_t l = 0; l < c.n_layers && untouched; ++l) {
        untouched = std::ranges::equal(pre.cache.keys(l), before.keys(l)) &&
                    std::ranges::equal(pre.cache.values(l), before.values(l));
      }
      auto full = decode_step_full(m, pre.cache, toks[t], NoIntervention{}, hs);
      worst = std::max(worst, testing::max_abs_diff(full.logits, ref.logits.row(t)));
      bool bitwise = untouched;
      for (const auto& h : hs) {
        bitwise &= partial.at(h).logits == full.trace.at(h).logits && partial.at(h).probs == full.trace.at(h).probs;
        worst = std::max(worst, 10.0f * testing::max_abs_diff(full.trace.at(h).probs,
                                                              ref.attention.at(h).row(t).subspan(0, t + 1)));
      }
      if (!bitwise) ++failures;
    }
  }
  // logits within 1e-4 and rows within 1e-5 of the batched oracle
  const bool ok = failures == 0 && worst < 1e-4f;
  return {ok, std::to_string(failures) + " partial/full mismatches, worst oracle deviation " + fmt("%.1e", worst) +
                  " (rows weighted x10)"};
}

Outcome path_generator() {
  const auto tok = build_path_tokenizer();
  std::size_t bad = 0, round_trip_bad = 0;
  std::string first_reason;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto task = gen_path_task(250, 4, seed, tok);
    const auto check = oracle::validate_path_task(task, tok);
    if (!check.ok) {
      if (bad++ == 0) first_reason = check.reason;
    }
    const auto score = score_path(parse_route(task.gold_route_text()), task);
    if (score.full_accuracy != 1.0 || score.step_accuracy != 1.0) ++round_trip_bad;
  }
  return {bad == 0 && round_trip_bad == 0, std::to_string(bad) + " validator failures, " +
                                               std::to_string(round_trip_bad) + " round-trip failures over 1000 seeds" +
                                               (first_reason.empty() ? "" : " (" + first_reason + ")")};
}

struct Criterion {
  const char* name;
  double budget_seconds;
  std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"tilt-identity", 1.0, tilt_identity},
      {"vanilla-equivalence", 10.0, vanilla_equivalences},
      {"temperature-equivalence", 1.0, temperature_equivalence},
      {"select-top-oracle", 5.0, select_top_oracle},
      {"qrscore-detection", 30.0, qrscore_detection},
      {"flops-table", 1.0, flops_table},
      {"recall-directional-gain", 300.0, recall_gain},
      {"attention-telemetry", 600.0, fig3_telemetry},
      {"cache-invariants", 60.0, cache_invariants},
      {"path-generator", 60.0, path_generator},
  };
  const std::string only = argc > 1 ? argv[1] : "";
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && only != c.name) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs <= c.budget_seconds;
    const bool pass = o.ok && in_time;
    failed += pass ? 0 : 1;
    std::printf("%s %s: %s [%.2fs / %.0fs%s]\n", pass ? "PASS" : "FAIL", c.name, o.detail.c_str(), secs,
                c.budget_seconds, in_time ? "" : ", over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
