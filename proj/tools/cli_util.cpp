// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "cli.hpp"
#include "dysco/error.hpp"

namespace dysco::cli {

RunConfig load_run_config(const std::filesystem::path& path) {
  static const std::set<std::string> known = {"model",    "tokenizer", "heads",   "task",     "task_dir", "output_dir",
                                              "seed",     "telemetry", "max_new", "workers",  "policies", "policy"};
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open config '" + path.string() + "'");
  RunConfig c;
  try {
    const auto j = nlohmann::json::parse(in);
    require(j.is_object(), ErrorKind::kValidation, "config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
      require(known.count(key) == 1, ErrorKind::kValidation, "unknown config key '" + key + "'");
    }
    c.model = j.value("model", c.model);
    c.tokenizer = j.value("tokenizer", c.tokenizer);
    c.heads = j.value("heads", c.heads);
    c.task = j.value("task", c.task);
    c.task_dir = j.value("task_dir", c.task_dir);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    c.telemetry = j.value("telemetry", c.telemetry);
    c.max_new = j.value("max_new", c.max_new);
    c.workers = j.value("workers", c.workers);
    c.policies = j.value("policies", c.policies);
    if (j.contains("policy")) {
      const auto& p = j["policy"];
      c.policy = p.is_string() ? nlohmann::json{{"policy", p}} : p;
      require(c.policy.is_object(), ErrorKind::kValidation, "config 'policy' must be a name or an object");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, "bad config '" + path.string() + "': " + e.what());
  }
  return c;
}

void RunFlags::add_model(CLI::App& app) {
  app.add_option("--config", config, "Run config JSON (flags override it)");
  app.add_option("--model", model, "Model .dymw file");
  app.add_option("--tokenizer", tokenizer, "Tokenizer JSON (default: the built-in path tokenizer)");
  app.add_option("--heads", heads, "Head list JSON from detect-heads");
}

void RunFlags::add_policy(CLI::App& app) {
  app.add_option("--policy", policy, "vanilla | uniattns | dysco | static | random_head");
  app.add_option("--preset", preset, "Parameter preset name");
  app.add_option("--p", p, "Cumulative relevance threshold");
  app.add_option("--K", K, "Maximum selected positions");
  app.add_option("--beta", beta, "Rescaling factor");
  app.add_option("--gamma", gamma, "Relevance momentum");
  app.add_option("--warmup", warmup, "Warm-up window");
  app.add_option("--stop-layer", stop_layer, "Last layer of the partial pass");
  app.add_option("--tau", tau, "Temperature for uniattns");
  app.add_option("--random-k", random_k, "Head count for random_head");
  app.add_option("--sampler", sampler, "greedy | nucleus");
  app.add_option("--temperature", temperature, "Sampling temperature");
  app.add_option("--top-p", top_p, "Nucleus threshold");
}

void RunFlags::add_run(CLI::App& app) {
  app.add_option("--seed", seed, "Root seed");
  app.add_option("--max-new", max_new, "Generation budget per answer");
  app.add_option("--workers", workers, "Worker threads");
  app.add_option("--out-dir", output_dir, "Output directory");
  app.add_flag("--telemetry", telemetry, "Record per-step telemetry");
}

RunConfig RunFlags::resolve() const {
  RunConfig c = config.empty() ? RunConfig{} : load_run_config(config);
  auto take = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  take(c.model, model);
  take(c.tokenizer, tokenizer);
  take(c.heads, heads);
  take(c.task, task);
  take(c.task_dir, task_dir);
  take(c.output_dir, output_dir);
  if (seed) c.seed = seed;
  take(c.max_new, max_new);
  take(c.workers, workers);
  c.telemetry = c.telemetry || telemetry;

  auto set = [&](const char* key, const auto& v) {
    if (v) c.policy[key] = *v;
  };
  set("policy", policy);
  set("preset", preset);
  set("p", p);
  set("K", K);
  set("beta", beta);
  set("gamma", gamma);
  set("warmup", warmup);
  set("stop_layer", stop_layer);
  set("tau", tau);
  set("random_k", random_k);
  if (sampler || temperature || top_p) {
    auto& s = c.policy["sampler"];
    if (sampler) s["mode"] = *sampler;
    if (temperature) s["temperature"] = *temperature;
    if (top_p) s["top_p"] = *top_p;
  }
  require(c.workers >= 1, ErrorKind::kValidation, "--workers must be at least 1");
  require(c.max_new >= 1, ErrorKind::kValidation, "--max-new must be at least 1");
  if (!c.tokenizer.empty()) require_file(c.tokenizer, "tokenizer");
  if (!c.heads.empty()) require_file(c.heads, "head list");
  if (!c.task.empty()) require_file(c.task, "task");
  return c;
}

std::filesystem::path resolve_model_path(const std::string& path) {
  require(!path.empty(), ErrorKind::kValidation, "no model given (--model or config 'model')");
  if (std::filesystem::exists(path)) return path;
  if (const char* dir = std::getenv(kModelDirEnv); dir && *dir) {
    const auto candidate = std::filesystem::path(dir) / path;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  fail(ErrorKind::kIo, "model '" + path + "' not found (also looked in $" + kModelDirEnv + ")");
}

void require_file(const std::string& path, const std::string& what) {
  require(std::filesystem::is_regular_file(path), ErrorKind::kIo, what + " file '" + path + "' does not exist");
}

AnyTask load_task(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open task '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "task '" + path.string() + "' is not valid JSON: " + e.what());
  }
  const auto kind = j.is_object() ? j.value("kind", std::string()) : std::string();
  if (kind == "recall") return recall_from_json(j);
  if (kind == "path") return path_from_json(j);
  fail(ErrorKind::kFormat, "task '" + path.string() + "' has unknown kind '" + kind + "'");
}

std::string task_kind(const AnyTask& task) { return std::holds_alternative<RecallTask>(task) ? "recall" : "path"; }

std::size_t task_length(const AnyTask& task) {
  return std::visit([](const auto& t) { return t.prompt_tokens.size(); }, task);
}

Tokenizer load_tokenizer_or_default(const std::string& path) {
  return path.empty() ? build_path_tokenizer() : Tokenizer::load(path);
}

std::vector<HeadId> load_head_list(const std::string& path) {
  if (path.empty()) return {};
  return load_heads(path).ranking.selected;
}

DecodePolicy build_policy(const RunConfig& config, const std::vector<HeadId>& heads, std::uint64_t seed,
                          SamplerConfig* sampler) {
  const auto pc = parse_policy_config(config.policy);
  const bool rescaling = pc.policy == "dysco" || pc.policy == "static";
  require(!rescaling || !heads.empty(), ErrorKind::kValidation,
          "policy '" + pc.policy + "' needs a head list (--heads)");
  if (sampler) {
    *sampler = pc.sampler;
    if (!config.policy.contains("seed") &&
        !(config.policy.contains("sampler") && config.policy["sampler"].contains("seed"))) {
      sampler->seed = seed;
    }
  }
  return make_policy(pc, heads, seed);
}

std::uint64_t split_seed(std::uint64_t root, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(root ^ mix(index));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << text;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

}  // namespace dysco::cli
