// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/heads.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <thread>

#include "dysco/error.hpp"
#include "json.hpp"

namespace dysco {

void CalibrationExample::validate() const {
  require(!tokens.empty(), ErrorKind::kValidation, "calibration example has no tokens");
  require(!query_span.empty(), ErrorKind::kValidation, "calibration query span is empty");
  require(query_span.end <= tokens.size() && gold_span.end <= tokens.size(), ErrorKind::kValidation,
          "calibration span out of range");
  require(gold_span.empty() || gold_span.end <= query_span.begin, ErrorKind::kValidation,
          "gold span must precede the query span");
}

double qr_score(std::span<const std::vector<float>> rows, Span query, Span gold) {
  require(rows.size() >= query.size(), ErrorKind::kValidation,
          "missing attention row for query position " + std::to_string(query.begin + rows.size()));
  double total = 0.0;
  for (std::size_t k = 0; k < query.size(); ++k) {
    const auto& row = rows[k];
    require(row.size() == query.begin + k + 1, ErrorKind::kDimension,
            "attention row for position " + std::to_string(query.begin + k) + " has length " +
                std::to_string(row.size()));
    require(gold.empty() || gold.end <= row.size(), ErrorKind::kValidation,
            "gold span out of range for query position " + std::to_string(query.begin + k));
    for (std::size_t j = gold.begin; j < gold.end; ++j) total += row[j];
  }
  return total;
}

HeadRanking rank_heads(std::map<HeadId, double> scores, std::size_t k) {
  require(k >= 1 && k <= scores.size(), ErrorKind::kValidation,
          "k = " + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  std::vector<HeadId> order;
  order.reserve(scores.size());
  for (const auto& [h, s] : scores) order.push_back(h);
  // map iteration is already (layer, head) ascending, so a stable sort settles ties
  std::stable_sort(order.begin(), order.end(),
                   [&](const HeadId& a, const HeadId& b) { return scores.at(a) > scores.at(b); });
  order.resize(k);
  return HeadRanking{std::move(scores), std::move(order)};
}

namespace {

std::vector<double> score_example(const Model& model, const CalibrationExample& ex,
                                  const std::vector<HeadId>& heads) {
  const auto& c = model.config();
  require(ex.tokens.size() <= c.max_seq, ErrorKind::kCapacity,
          "calibration example of " + std::to_string(ex.tokens.size()) + " tokens exceeds max_seq");
  const std::size_t capture_last = ex.tokens.size() - ex.query_span.begin;
  auto pre = prefill(model, ex.tokens, heads, capture_last);
  std::vector<double> out(heads.size());
  std::vector<std::vector<float>> rows(ex.query_span.size());
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (std::size_t k = 0; k < rows.size(); ++k) rows[k] = pre.traces[k].at(heads[h]).probs;
    out[h] = qr_score(rows, ex.query_span, ex.gold_span);
  }
  return out;
}

}  // namespace

HeadRanking detect_heads(const Model& model, std::span<const CalibrationExample> examples,
                         std::size_t k, std::size_t workers) {
  require(!examples.empty(), ErrorKind::kValidation, "detect_heads needs at least one example");
  const auto heads = all_heads(model.config());
  require(k >= 1 && k <= heads.size(), ErrorKind::kValidation,
          "k = " + std::to_string(k) + " exceeds the model's " + std::to_string(heads.size()) +
              " heads");
  for (const auto& ex : examples) ex.validate();

  std::vector<std::vector<double>> per_example(examples.size());
  workers = std::max<std::size_t>(1, std::min(workers, examples.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < examples.size(); ++i) per_example[i] = score_example(model, examples[i], heads);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t i = w; i < examples.size(); i += workers) {
            per_example[i] = score_example(model, examples[i], heads);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  std::map<HeadId, double> scores;
  for (std::size_t h = 0; h < heads.size(); ++h) {
    double s = 0.0;
    for (const auto& ex : per_example) s += ex[h];
    scores[heads[h]] = s;
  }
  return rank_heads(std::move(scores), k);
}

void save_heads(const std::filesystem::path& path, const HeadRanking& ranking,
                const std::string& model_id) {
  require(!ranking.selected.empty(), ErrorKind::kValidation, "refusing to save an empty head list");
  nlohmann::json j;
  j["model_id"] = model_id;
  j["k"] = ranking.selected.size();
  j["heads"] = nlohmann::json::array();
  for (const auto& h : ranking.selected) {
    auto it = ranking.scores.find(h);
    require(it != ranking.scores.end(), ErrorKind::kValidation, "no score for selected head " + to_string(h));
    j["heads"].push_back({{"layer", h.layer}, {"head", h.head}, {"score", it->second}});
  }
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  f << j.dump(2) << '\n';
}

HeadFile load_heads(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  HeadFile out;
  try {
    const auto j = nlohmann::json::parse(f);
    out.model_id = j.at("model_id").get<std::string>();
    const auto k = j.at("k").get<std::size_t>();
    const auto& heads = j.at("heads");
    require(heads.is_array() && !heads.empty(), ErrorKind::kValidation, "head list is empty");
    require(heads.size() == k, ErrorKind::kValidation, "head list length disagrees with k");
    std::set<HeadId> seen;
    for (const auto& e : heads) {
      HeadId h{e.at("layer").get<std::size_t>(), e.at("head").get<std::size_t>()};
      require(seen.insert(h).second, ErrorKind::kValidation, "duplicate head " + to_string(h));
      const double s = e.at("score").get<double>();
      if (!out.ranking.selected.empty()) {
        const auto& prev = out.ranking.selected.back();
        const double ps = out.ranking.scores.at(prev);
        require(ps > s || (ps == s && prev < h), ErrorKind::kValidation,
                "head list is not in ranking order at " + to_string(h));
      }
      out.ranking.selected.push_back(h);
      out.ranking.scores[h] = s;
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed head file '" + path.string() + "': " + e.what());
  }
  return out;
}

}  // namespace dysco
