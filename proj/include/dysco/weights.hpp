// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// ".dymw" weight container:
//   "DYMW" | u32 version | u64 header length | JSON header | f32 LE payload | u32 CRC32(payload)
// The header maps each tensor name to {shape, dtype: "f32", offset} where offset
// is the byte offset into the payload. An optional "metadata" object carries the
// model id and the ModelConfig the file was written for.

#include <cstdint>
#include <filesystem>
#include <span>

#include "dysco/model.hpp"
#include "json.hpp"

namespace dysco {

inline constexpr std::uint32_t kWeightFormatVersion = 1;

struct WeightFile {
  TensorMap tensors;
  nlohmann::json metadata = nlohmann::json::object();
};

std::uint32_t crc32(std::span<const unsigned char> bytes);

void save_weights(const std::filesystem::path& path, const TensorMap& tensors,
                  const nlohmann::json& metadata = nlohmann::json::object());

WeightFile read_weights(const std::filesystem::path& path);

/// Writes the model with {"model_id", "config"} metadata.
void save_model(const std::filesystem::path& path, const Model& model, const std::string& model_id);

/// Reads the config stored in a weight file's metadata.
ModelConfig read_model_config(const std::filesystem::path& path);

/// Loads a model whose config is taken from the file metadata.
Model load_model(const std::filesystem::path& path);

nlohmann::json config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const nlohmann::json& j);

}  // namespace dysco
