// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <atomic>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <thread>

#include "cli.hpp"
#include "dysco/error.hpp"
#include "dysco/weights.hpp"

namespace dysco::cli {

namespace {

struct EvalFlags {
  RunFlags run;
  std::vector<std::string> policies;
  std::string out;
  std::size_t route_step = 1;
};

struct Context {
  RunConfig config;
  Model model;
  std::vector<HeadId> heads;
  std::optional<Tokenizer> tokenizer;
};

Context open_context(const RunConfig& config, bool need_tokenizer) {
  Context ctx{config, load_model(resolve_model_path(config.model)), load_head_list(config.heads), std::nullopt};
  if (need_tokenizer) ctx.tokenizer = load_tokenizer_or_default(config.tokenizer);
  return ctx;
}

std::string ids_text(const std::vector<TokenId>& ids) {
  std::ostringstream s;
  s << '[';
  for (std::size_t i = 0; i < ids.size(); ++i) s << (i ? " " : "") << ids[i];
  s << ']';
  return s.str();
}

nlohmann::json run_instance(const Context& ctx, const RunConfig& config, const AnyTask& task, std::uint64_t seed) {
  SamplerConfig sampler;
  const auto policy = build_policy(config, ctx.heads, seed, &sampler);
  nlohmann::json r;
  r["policy"] = policy_name(policy);
  r["kind"] = task_kind(task);
  r["prompt_tokens"] = task_length(task);
  r["seed"] = seed;
  if (const auto* recall = std::get_if<RecallTask>(&task)) {
    const auto out = run_recall(ctx.model, *recall, policy);
    r["size"] = recall->pairs.size();
    r["accuracy"] = out.accuracy();
    r["answers"] = out.answers;
    r["correct"] = out.correct;
  } else {
    const auto& path = std::get<PathTask>(task);
    const auto out = run_path(ctx.model, path, *ctx.tokenizer, policy, sampler, config.max_new);
    r["size"] = path.edges.size();
    r["accuracy"] = out.score.full_accuracy;
    r["step_accuracy"] = out.score.step_accuracy;
    r["text"] = out.text;
    r["stop_reason"] = out.stop_reason;
  }
  return r;
}

void decode(const EvalFlags& f) {
  const auto config = f.run.resolve();
  require(!config.task.empty(), ErrorKind::kValidation, "decode needs --task");
  const auto task = load_task(config.task);
  const auto ctx = open_context(config, std::holds_alternative<PathTask>(task));
  const auto seed = config.seed.value_or(0);
  SamplerConfig sampler;
  const auto policy = build_policy(config, ctx.heads, seed, &sampler);
  std::cerr << "policy " << policy_name(policy) << "  task " << task_kind(task) << "  prompt " << task_length(task)
            << " tokens  heads " << ctx.heads.size() << '\n';

  if (const auto* recall = std::get_if<RecallTask>(&task)) {
    const auto out = run_recall(ctx.model, *recall, policy);
    for (std::size_t q = 0; q < recall->queries.size(); ++q) {
      const auto& gold = recall->pairs[recall->queries[q]].second;
      std::cout << "query " << q << "  answer " << ids_text(out.answers[q]) << "  gold " << ids_text(gold) << "  "
                << (out.correct[q] ? "correct" : "wrong") << '\n';
    }
    std::cout << "accuracy " << format("%.3f", out.accuracy()) << '\n';
    return;
  }
  const auto& path = std::get<PathTask>(task);
  const auto out = run_path(ctx.model, path, *ctx.tokenizer, policy, sampler, config.max_new);
  std::cout << out.text << '\n';
  std::cout << "parsed " << out.parsed.steps.size() << " steps, stop " << out.stop_reason << '\n';
  std::cout << "gold   " << path.gold_route_text() << '\n';
  std::cout << "full_accuracy " << format("%.0f", out.score.full_accuracy) << "  step_accuracy "
            << format("%.3f", out.score.step_accuracy) << '\n';
}

std::vector<std::filesystem::path> list_tasks(const RunConfig& config) {
  std::vector<std::filesystem::path> files;
  if (!config.task.empty()) files.emplace_back(config.task);
  if (!config.task_dir.empty()) {
    require(std::filesystem::is_directory(config.task_dir), ErrorKind::kIo,
            "task directory '" + config.task_dir + "' does not exist");
    for (const auto& e : std::filesystem::directory_iterator(config.task_dir)) {
      if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::kValidation, "bench needs --task or a --task-dir with *.json files");
  return files;
}

struct JobResult {
  bool ok = false;
  nlohmann::json record;
  std::string error;
};

void bench(const EvalFlags& f) {
  auto config = f.run.resolve();
  if (!f.policies.empty()) config.policies = f.policies;
  if (config.policies.empty()) config.policies = {config.policy.value("policy", std::string("vanilla"))};
  const auto files = list_tasks(config);
  std::vector<AnyTask> tasks;
  bool any_path = false;
  for (const auto& p : files) {
    tasks.push_back(load_task(p));
    any_path |= std::holds_alternative<PathTask>(tasks.back());
  }
  const auto ctx = open_context(config, any_path);
  const auto root = config.seed.value_or(0);

  std::vector<RunConfig> per_policy;
  for (const auto& name : config.policies) {
    RunConfig c = config;
    c.policy["policy"] = name;
    if (name == "vanilla") c.policy = {{"policy", name}};
    build_policy(c, ctx.heads, root);  // surface config errors before any work
    per_policy.push_back(std::move(c));
  }

  const std::size_t n_jobs = per_policy.size() * tasks.size();
  std::vector<JobResult> results(n_jobs);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < n_jobs; j = next++) {
      const std::size_t pi = j / tasks.size(), ti = j % tasks.size();
      auto& res = results[j];
      try {
        res.record = run_instance(ctx, per_policy[pi], tasks[ti], split_seed(root, ti));
        res.ok = true;
      } catch (const std::exception& e) {
        res.error = e.what();
      }
      res.record["policy_config"] = config.policies[pi];
      res.record["instance"] = files[ti].stem().string();
    }
  };
  std::vector<std::thread> pool;
  const auto n_workers = std::min(config.workers, std::max<std::size_t>(n_jobs, 1));
  for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  const std::filesystem::path out_dir = config.output_dir;
  std::ostringstream jsonl, csv;
  csv << "policy,instance,kind,size,prompt_tokens,accuracy,step_accuracy\n";
  struct Acc {
    double sum = 0.0, tokens = 0.0;
    std::size_t n = 0;
  };
  std::map<std::tuple<std::string, std::string, std::size_t, std::string>, Acc> agg;
  nlohmann::json failures = nlohmann::json::array();
  for (std::size_t j = 0; j < n_jobs; ++j) {
    const auto& r = results[j];
    const auto policy = r.record["policy_config"].get<std::string>();
    const auto instance = r.record["instance"].get<std::string>();
    if (!r.ok) {
      failures.push_back({{"policy", policy}, {"instance", instance}, {"error", r.error}});
      continue;
    }
    jsonl << r.record.dump() << '\n';
    const auto kind = r.record["kind"].get<std::string>();
    const auto size = r.record["size"].get<std::size_t>();
    const auto tokens = r.record["prompt_tokens"].get<double>();
    csv << policy << ',' << instance << ',' << kind << ',' << size << ',' << r.record["prompt_tokens"] << ','
        << format("%.6g", r.record["accuracy"].get<double>()) << ','
        << (r.record.contains("step_accuracy") ? format("%.6g", r.record["step_accuracy"].get<double>()) : "")
        << '\n';
    for (const char* metric : {"accuracy", "step_accuracy"}) {
      if (!r.record.contains(metric)) continue;
      auto& a = agg[{policy, kind, size, metric}];
      a.sum += r.record[metric].get<double>();
      a.tokens += tokens;
      ++a.n;
    }
  }
  std::ostringstream agg_csv;
  agg_csv << "policy,kind,size,mean_prompt_tokens,metric,mean,n\n";
  for (const auto& [key, a] : agg) {
    const auto& [policy, kind, size, metric] = key;
    agg_csv << policy << ',' << kind << ',' << size << ',' << format("%.1f", a.tokens / a.n) << ',' << metric << ','
            << format("%.6g", a.sum / a.n) << ',' << a.n << '\n';
  }
  nlohmann::json manifest = {{"root_seed", root},
                             {"policies", config.policies},
                             {"tasks", nlohmann::json::array()},
                             {"jobs", n_jobs},
                             {"completed", n_jobs - failures.size()},
                             {"failures", failures}};
  for (const auto& p : files) manifest["tasks"].push_back(p.filename().string());
  write_text(out_dir / "results.jsonl", jsonl.str());
  write_text(out_dir / "results.csv", csv.str());
  write_text(out_dir / "aggregate.csv", agg_csv.str());
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << agg_csv.str();
  std::cout << "completed " << n_jobs - failures.size() << "/" << n_jobs << " jobs; results in " << out_dir.string()
            << '\n';
  if (!failures.empty()) {
    for (const auto& fl : failures) {
      std::cerr << "failed: " << fl["policy"].get<std::string>() << " " << fl["instance"].get<std::string>() << ": "
                << fl["error"].get<std::string>() << '\n';
    }
    throw ExitRequest{kExitFailure};
  }
}

nlohmann::json step_json(const TelemetryStep& s, const char* kind) {
  return {{"kind", kind},          {"position", s.position},   {"gold_mass", s.gold_mass},
          {"gold_rank", s.gold_rank}, {"gold_in_top", s.gold_in_top}, {"span_mass_total", s.span_mass_total}};
}

void trace(const EvalFlags& f) {
  const auto config = f.run.resolve();
  require(!config.task.empty(), ErrorKind::kValidation, "trace needs --task");
  const auto task = load_task(config.task);
  const auto ctx = open_context(config, std::holds_alternative<PathTask>(task));
  const auto heads = ctx.heads.empty() ? all_heads(ctx.model.config()) : ctx.heads;
  const auto seed = config.seed.value_or(0);
  std::ostringstream out;

  if (const auto* recall = std::get_if<RecallTask>(&task)) {
    SamplerConfig sampler;
    const auto policy = build_policy(config, ctx.heads, seed, &sampler);
    StopRules stop;
    stop.max_new = std::min(config.max_new, recall->gold_value().size());
    GenerateOptions opts;
    opts.gold_span = recall->gold_span();
    opts.telemetry_heads = heads;
    const auto res = generate(ctx.model, recall->prompt_tokens, policy, sampler, stop, opts);
    for (const auto& t : res.telemetry) out << to_json(t).dump() << '\n';
  } else {
    const auto& path = std::get<PathTask>(task);
    const auto tel = path_telemetry(ctx.model, path, *ctx.tokenizer, heads, f.route_step, 0.05, seed);
    for (const auto& s : tel.per_token.steps) out << step_json(s, "route_token").dump() << '\n';
    for (const auto& s : tel.edge_aggregated.steps) out << step_json(s, "edge_aggregated").dump() << '\n';
    std::cout << "gold top-5% fraction " << format("%.3f", tel.per_token.gold_top5_fraction)
              << "  gold attention mass " << format("%.4f", tel.per_token.gold_attention_mass) << '\n';
  }
  const auto dest = f.out.empty() ? std::filesystem::path(config.output_dir) / "trace.jsonl"
                                  : std::filesystem::path(f.out);
  write_text(dest, out.str());
  std::cout << "wrote " << dest.string() << '\n';
}

}  // namespace

void register_eval_commands(CLI::App& app) {
  auto df = std::make_shared<EvalFlags>();
  auto* de = app.add_subcommand("decode", "Run one task instance and print the output");
  df->run.add_model(*de);
  df->run.add_policy(*de);
  df->run.add_run(*de);
  de->add_option("--task", df->run.task, "Task file");
  de->callback([df] { decode(*df); });

  auto bf = std::make_shared<EvalFlags>();
  auto* be = app.add_subcommand("bench", "Sweep policies over task files");
  bf->run.add_model(*be);
  bf->run.add_policy(*be);
  bf->run.add_run(*be);
  be->add_option("--task", bf->run.task, "Single task file");
  be->add_option("--task-dir", bf->run.task_dir, "Directory of task files");
  be->add_option("--policies", bf->policies, "Comma-separated policy names")->delimiter(',');
  be->callback([bf] { bench(*bf); });

  auto tf = std::make_shared<EvalFlags>();
  auto* tr = app.add_subcommand("trace", "Per-step attention telemetry as JSONL");
  tf->run.add_model(*tr);
  tf->run.add_policy(*tr);
  tf->run.add_run(*tr);
  tr->add_option("--task", tf->run.task, "Task file");
  tr->add_option("--out", tf->out, "Output JSONL (default <out-dir>/trace.jsonl)");
  tr->add_option("--route-step", tf->route_step, "Route line analysed for path tasks");
  tr->callback([tf] { trace(*tf); });
}

}  // namespace dysco::cli
