// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dysco/model.hpp"
#include "json.hpp"

namespace dysco {

enum class TokenizerMode { kByte, kSubword };

/// Ids 0..255 are raw bytes, 256..258 are <bos>, <eos>, <sep>; subword merges
/// take ids from 259 upward in merge order (a merge spelling an existing token
/// reuses its id). encode() never emits a special id.
class Tokenizer {
 public:
  static constexpr TokenId kBos = 256;
  static constexpr TokenId kEos = 257;
  static constexpr TokenId kSep = 258;
  static constexpr TokenId kFirstMerge = 259;

  static Tokenizer byte_level();
  static Tokenizer subword(std::vector<std::pair<std::string, std::string>> merges);

  static Tokenizer from_json(const nlohmann::json& j);
  static Tokenizer load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void save(const std::filesystem::path& path) const;

  TokenizerMode mode() const { return mode_; }
  std::size_t vocab_size() const { return tokens_.size(); }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }
  /// Raw bytes of a token (specials render as "<bos>" etc).
  const std::string& token_bytes(TokenId id) const;
  bool is_special(TokenId id) const { return id >= kBos && id < kFirstMerge; }

  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<TokenId> encode_chunk(std::string_view chunk) const;

  TokenizerMode mode_ = TokenizerMode::kByte;
  std::vector<std::string> tokens_;
  std::vector<std::pair<std::string, std::string>> merges_;
  std::unordered_map<std::uint64_t, std::pair<std::size_t, TokenId>> merge_rank_;  // (left, right) -> (rank, id)
};

/// Splits text into merge-isolated chunks: an optional leading space joined to a
/// run of letters, of digits, or of punctuation (plus one trailing newline);
/// newline runs; other whitespace runs.
std::vector<std::string> pretokenize(std::string_view text);

/// Byte-pair training over weighted chunks. Each round merges the most frequent
/// adjacent pair (ties: lexicographically smallest left then right bytes) until
/// `max_merges` rounds or no pair reaches `min_count`.
Tokenizer train_bpe(const std::map<std::string, std::uint64_t>& chunk_counts, std::size_t max_merges,
                    std::uint64_t min_count = 1);

}  // namespace dysco
