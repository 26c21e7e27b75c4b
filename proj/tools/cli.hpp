// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "CLI11.hpp"
#include "dysco/decoder.hpp"
#include "dysco/tasks.hpp"
#include "json.hpp"

namespace dysco::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Thrown by a command that already reported its outcome.
struct ExitRequest {
  int code;
};

inline constexpr const char* kModelDirEnv = "DYSCO_MODEL_DIR";

/// Run config file. Keys: model, tokenizer, heads, task, task_dir, output_dir,
/// seed, telemetry, max_new, workers, policies, policy (a policy config object).
/// Flags given on the command line override file values.
struct RunConfig {
  std::string model;
  std::string tokenizer;
  std::string heads;
  std::string task;
  std::string task_dir;
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;
  bool telemetry = false;
  std::size_t max_new = 128;
  std::size_t workers = 1;
  std::vector<std::string> policies;
  nlohmann::json policy = nlohmann::json::object();
};

RunConfig load_run_config(const std::filesystem::path& path);

/// Flags shared by commands that take a RunConfig; unset flags leave the file value.
struct RunFlags {
  std::string config;
  std::optional<std::string> model, tokenizer, heads, task, task_dir, output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_new, workers;
  std::optional<std::string> policy, preset;
  std::optional<double> p, beta, tau, gamma;
  std::optional<std::size_t> K, warmup, stop_layer, random_k;
  std::optional<std::string> sampler;
  std::optional<double> temperature, top_p;
  bool telemetry = false;

  void add_model(CLI::App& app);
  void add_policy(CLI::App& app);
  void add_run(CLI::App& app);
  RunConfig resolve() const;
};

/// Model path as given, else relative to $DYSCO_MODEL_DIR.
std::filesystem::path resolve_model_path(const std::string& path);
void require_file(const std::string& path, const std::string& what);

using AnyTask = std::variant<RecallTask, PathTask>;
AnyTask load_task(const std::filesystem::path& path);
std::string task_kind(const AnyTask& task);
std::size_t task_length(const AnyTask& task);

Tokenizer load_tokenizer_or_default(const std::string& path);
std::vector<HeadId> load_head_list(const std::string& path);

/// Policy named by config.policy["policy"], built with `heads` and `seed`.
DecodePolicy build_policy(const RunConfig& config, const std::vector<HeadId>& heads, std::uint64_t seed,
                          SamplerConfig* sampler = nullptr);

std::uint64_t split_seed(std::uint64_t root, std::uint64_t index);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string format(const char* fmt, double v);

// subcommands
void register_task_commands(CLI::App& app);
void register_model_commands(CLI::App& app);
void register_eval_commands(CLI::App& app);

}  // namespace dysco::cli
