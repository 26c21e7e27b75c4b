// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dysco/model.hpp"

namespace dysco {

/// Half-open position range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool empty() const { return end <= begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  bool operator==(const Span&) const = default;
};

struct CalibrationExample {
  std::vector<TokenId> tokens;
  Span query_span;
  Span gold_span;

  /// Spans lie in bounds, are disjoint, and the gold span precedes the query.
  void validate() const;
};

struct HeadRanking {
  std::map<HeadId, double> scores;
  std::vector<HeadId> selected;  // descending score, ties by (layer, head)
};

inline constexpr std::size_t kDefaultDetectedHeads = 16;

/// Sum over query rows of the probability mass on `gold`. `rows[k]` is the
/// attention row of query position `query.begin + k` (length position + 1).
double qr_score(std::span<const std::vector<float>> rows, Span query, Span gold);

/// Ranks `scores` and keeps the top k.
HeadRanking rank_heads(std::map<HeadId, double> scores, std::size_t k);

/// Per-head QRScore summed over examples from clean prefill attention rows.
/// `workers` > 1 scores examples concurrently; the reduction is in example order.
HeadRanking detect_heads(const Model& model, std::span<const CalibrationExample> examples,
                         std::size_t k, std::size_t workers = 1);

struct HeadFile {
  std::string model_id;
  HeadRanking ranking;  // scores hold the selected heads only
};

void save_heads(const std::filesystem::path& path, const HeadRanking& ranking,
                const std::string& model_id);
HeadFile load_heads(const std::filesystem::path& path);

}  // namespace dysco
