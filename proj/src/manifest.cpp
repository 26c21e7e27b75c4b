// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/manifest.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "dysco/error.hpp"

namespace dysco {

namespace {

template <typename F>
auto format_guard(const std::string& what, F&& f) {
  try {
    return f();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "manifest " + what + ": " + e.what());
  }
}

}  // namespace

ConversionManifest manifest_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::kFormat, "manifest must be a JSON object");
  ConversionManifest m;
  format_guard("source", [&] { m.source = j.value("source", std::string()); return 0; });
  if (j.contains("name_map")) {
    format_guard("name_map", [&] { m.name_map = j.at("name_map").get<std::map<std::string, std::string>>(); return 0; });
  }
  format_guard("tensors", [&] {
    for (const auto& t : j.at("tensors")) {
      m.tensors.push_back({t.at("name").get<std::string>(), t.at("shape").get<std::vector<std::size_t>>(),
                           t.at("crc32").get<std::uint32_t>()});
    }
    return 0;
  });
  if (j.contains("config") && !j.at("config").is_null()) m.config = config_from_json(j.at("config"));
  if (j.contains("reference")) {
    format_guard("reference", [&] {
      for (const auto& r : j.at("reference")) {
        ReferenceFixture f;
        f.prompt_tokens = r.at("prompt_tokens").get<std::vector<TokenId>>();
        f.logits = r.at("logits").get<std::vector<double>>();
        m.reference.push_back(std::move(f));
      }
      return 0;
    });
  }
  return m;
}

nlohmann::json to_json(const ConversionManifest& m) {
  nlohmann::json j;
  j["source"] = m.source;
  j["name_map"] = m.name_map;
  j["tensors"] = nlohmann::json::array();
  for (const auto& t : m.tensors) j["tensors"].push_back({{"name", t.name}, {"shape", t.shape}, {"crc32", t.crc32}});
  j["config"] = m.config ? config_to_json(*m.config) : nlohmann::json();
  j["reference"] = nlohmann::json::array();
  for (const auto& r : m.reference) j["reference"].push_back({{"prompt_tokens", r.prompt_tokens}, {"logits", r.logits}});
  return j;
}

ConversionManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return manifest_from_json(j);
}

std::uint32_t tensor_crc32(const Tensor& t) {
  const auto bytes = std::as_bytes(t.data());
  return crc32(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

void verify_manifest(const ConversionManifest& manifest, const WeightFile& weights, const ModelConfig& config) {
  const auto expected = expected_shapes(config);
  std::set<std::string> seen;
  for (const auto& t : manifest.tensors) {
    require(seen.insert(t.name).second, ErrorKind::kValidation, "manifest lists tensor '" + t.name + "' twice");
    const auto want = expected.find(t.name);
    require(want != expected.end(), ErrorKind::kValidation, "manifest lists unexpected tensor '" + t.name + "'");
    require(t.shape == want->second, ErrorKind::kValidation, "manifest shape mismatch for '" + t.name + "'");
    const auto have = weights.tensors.find(t.name);
    require(have != weights.tensors.end(), ErrorKind::kValidation, "weight file lacks tensor '" + t.name + "'");
    require(have->second.shape() == t.shape, ErrorKind::kValidation, "weight file shape mismatch for '" + t.name + "'");
    require(tensor_crc32(have->second) == t.crc32, ErrorKind::kValidation, "checksum mismatch for '" + t.name + "'");
  }
  for (const auto& [name, shape] : expected) {
    require(seen.count(name) == 1, ErrorKind::kValidation, "manifest is missing tensor '" + name + "'");
  }
}

std::vector<double> fixture_deviations(const Model& model, const ConversionManifest& manifest) {
  std::vector<double> out;
  for (std::size_t i = 0; i < manifest.reference.size(); ++i) {
    const auto& f = manifest.reference[i];
    const std::string tag = "reference " + std::to_string(i);
    require(!f.prompt_tokens.empty(), ErrorKind::kValidation, tag + " has an empty prompt");
    require(f.logits.size() == model.config().vocab_size, ErrorKind::kDimension,
            tag + " logits length differs from the vocabulary");
    const auto logits = prefill(model, f.prompt_tokens, {}, 0).logits;
    double worst = 0.0;
    for (std::size_t v = 0; v < logits.size(); ++v) {
      require(std::isfinite(f.logits[v]), ErrorKind::kNonFinite, tag + " holds a non-finite logit");
      worst = std::max(worst, std::abs(static_cast<double>(logits[v]) - f.logits[v]));
    }
    out.push_back(worst);
  }
  return out;
}

void validate_against_fixture(const Model& model, const ConversionManifest& manifest, double tolerance) {
  require(!manifest.reference.empty(), ErrorKind::kValidation, "manifest carries no reference fixtures");
  const auto dev = fixture_deviations(model, manifest);
  for (std::size_t i = 0; i < dev.size(); ++i) {
    require(dev[i] <= tolerance, ErrorKind::kValidation,
            "reference " + std::to_string(i) + " deviates by " + std::to_string(dev[i]));
  }
}

}  // namespace dysco
