// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dysco/error.hpp"

namespace dysco {

static_assert(std::endian::native == std::endian::little, "weight IO assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'D', 'Y', 'M', 'W'};

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos, const std::string& what) {
  require(pos + sizeof(T) <= in.size(), ErrorKind::kFormat, "truncated weight file: missing " + what);
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

std::uint32_t crc32(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
    crc = ::crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void save_weights(const std::filesystem::path& path, const TensorMap& tensors,
                  const nlohmann::json& metadata) {
  nlohmann::json header;
  header["tensors"] = nlohmann::json::object();
  std::size_t offset = 0;
  for (const auto& [name, t] : tensors) {
    header["tensors"][name] = {{"shape", t.shape()}, {"dtype", "f32"}, {"offset", offset}};
    offset += t.size() * sizeof(float);
  }
  header["metadata"] = metadata.is_null() ? nlohmann::json::object() : metadata;
  const std::string header_text = header.dump();

  std::string payload;
  payload.reserve(offset);
  for (const auto& [name, t] : tensors) {
    payload.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(float));
  }
  std::string out;
  out.append(kMagic, 4);
  put<std::uint32_t>(out, kWeightFormatVersion);
  put<std::uint64_t>(out, header_text.size());
  out += header_text;
  out += payload;
  put<std::uint32_t>(out, crc32({reinterpret_cast<const unsigned char*>(payload.data()), payload.size()}));

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  require(static_cast<bool>(f), ErrorKind::kIo, "short write to '" + path.string() + "'");
}

WeightFile read_weights(const std::filesystem::path& path) {
  const std::string bytes = read_all(path);
  std::size_t pos = 0;
  require(bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) == 0, ErrorKind::kFormat,
          "bad magic in '" + path.string() + "'");
  pos = 4;
  const auto version = take<std::uint32_t>(bytes, pos, "version");
  require(version == kWeightFormatVersion, ErrorKind::kFormat,
          "unsupported weight format version " + std::to_string(version));
  const auto header_len = take<std::uint64_t>(bytes, pos, "header length");
  require(header_len <= bytes.size() - pos, ErrorKind::kFormat, "truncated weight file: header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                                   bytes.begin() + static_cast<std::ptrdiff_t>(pos + header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed weight header: ") + e.what());
  }
  pos += header_len;
  require(bytes.size() - pos >= 4, ErrorKind::kFormat, "truncated weight file: checksum");
  const std::size_t payload_len = bytes.size() - pos - 4;
  const auto* payload = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + pos + payload_len, 4);
  require(crc32({payload, payload_len}) == stored, ErrorKind::kFormat,
          "checksum mismatch in '" + path.string() + "'");

  WeightFile file;
  require(header.is_object() && header.contains("tensors") && header["tensors"].is_object(),
          ErrorKind::kFormat, "weight header lacks a tensors table");
  try {
    for (const auto& [name, entry] : header["tensors"].items()) {
      require(entry.value("dtype", "") == "f32", ErrorKind::kFormat,
              "tensor '" + name + "' has unsupported dtype");
      auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto n = shape_product(shape);
      require(offset % sizeof(float) == 0 && offset <= payload_len &&
                  n * sizeof(float) <= payload_len - offset,
              ErrorKind::kFormat, "tensor '" + name + "' lies outside the payload");
      std::vector<float> data(n);
      std::memcpy(data.data(), payload + offset, n * sizeof(float));
      file.tensors.emplace(name, Tensor(std::move(shape), std::move(data)));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed tensor entry: ") + e.what());
  }
  if (header.contains("metadata") && header["metadata"].is_object()) file.metadata = header["metadata"];
  return file;
}

nlohmann::json config_to_json(const ModelConfig& c) {
  return {{"n_layers", c.n_layers},     {"n_heads", c.n_heads},       {"n_kv_heads", c.n_kv_heads},
          {"d_model", c.d_model},       {"d_head", c.d_head},         {"vocab_size", c.vocab_size},
          {"max_seq", c.max_seq},       {"theta_base", c.theta_base}, {"norm_eps", c.norm_eps},
          {"rope_dims", c.rope_dims},   {"d_ff", c.d_ff},             {"tied_embeddings", c.tied_embeddings}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {"n_layers", "n_heads",  "n_kv_heads", "d_model",
                                                 "d_head",   "vocab_size", "max_seq",  "theta_base",
                                                 "norm_eps", "rope_dims", "d_ff",      "tied_embeddings"};
  require(j.is_object(), ErrorKind::kValidation, "model config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    require(std::find(known.begin(), known.end(), key) != known.end(), ErrorKind::kValidation,
            "unknown model config key '" + key + "'");
  }
  ModelConfig c;
  try {
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.n_kv_heads = j.value("n_kv_heads", c.n_heads);
    c.d_head = j.at("d_head").get<std::size_t>();
    c.d_model = j.value("d_model", c.n_heads * c.d_head);
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_seq = j.at("max_seq").get<std::size_t>();
    c.theta_base = j.value("theta_base", c.theta_base);
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.rope_dims = j.value("rope_dims", c.rope_dims);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.tied_embeddings = j.value("tied_embeddings", c.tied_embeddings);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kValidation, std::string("bad model config: ") + e.what());
  }
  c.validate();
  return c;
}

void save_model(const std::filesystem::path& path, const Model& model, const std::string& model_id) {
  save_weights(path, model.to_tensors(),
               {{"model_id", model_id}, {"config", config_to_json(model.config())}});
}

ModelConfig read_model_config(const std::filesystem::path& path) {
  const auto file = read_weights(path);
  require(file.metadata.contains("config"), ErrorKind::kFormat,
          "weight file '" + path.string() + "' carries no config metadata");
  return config_from_json(file.metadata["config"]);
}

Model load_model(const std::filesystem::path& path) {
  auto file = read_weights(path);
  require(file.metadata.contains("config"), ErrorKind::kFormat,
          "weight file '" + path.string() + "' carries no config metadata");
  return Model(config_from_json(file.metadata["config"]), file.tensors);
}

}  // namespace dysco
