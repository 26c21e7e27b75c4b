// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

// Conversion manifest written next to a converted ".dymw" file:
//   {"source": str, "name_map": {engine_name: source_name},
//    "tensors": [{"name", "shape", "crc32"}], "config": {...},
//    "reference": [{"prompt_tokens": [...], "logits": [...]}]}
// crc32 covers the tensor's little-endian f32 bytes. Reference logits are the
// final-position logits computed by the source framework.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dysco/model.hpp"
#include "dysco/weights.hpp"
#include "json.hpp"

namespace dysco {

struct ManifestTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint32_t crc32 = 0;
};

struct ReferenceFixture {
  std::vector<TokenId> prompt_tokens;
  std::vector<double> logits;
};

struct ConversionManifest {
  std::string source;
  std::map<std::string, std::string> name_map;
  std::vector<ManifestTensor> tensors;
  std::optional<ModelConfig> config;
  std::vector<ReferenceFixture> reference;
};

inline constexpr double kFixtureTolerance = 1e-3;

ConversionManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ConversionManifest& manifest);
ConversionManifest read_manifest(const std::filesystem::path& path);

std::uint32_t tensor_crc32(const Tensor& t);

/// Checks the manifest against a loaded weight file: every tensor the config
/// requires is listed exactly once, nothing else is listed, shapes agree and
/// checksums match the payload.
void verify_manifest(const ConversionManifest& manifest, const WeightFile& weights, const ModelConfig& config);

/// Max absolute deviation between engine logits and each reference fixture.
std::vector<double> fixture_deviations(const Model& model, const ConversionManifest& manifest);

/// Throws kValidation when any fixture deviates by more than `tolerance`.
void validate_against_fixture(const Model& model, const ConversionManifest& manifest,
                              double tolerance = kFixtureTolerance);

}  // namespace dysco
