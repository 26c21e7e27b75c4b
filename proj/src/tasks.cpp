// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "dysco/error.hpp"

namespace dysco {

namespace {

// Partial Fisher-Yates: the first k entries of a shuffled 0..n-1.
std::vector<std::size_t> sample_indices(std::mt19937_64& rng, std::size_t n, std::size_t k) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng() % (n - i)]);
  idx.resize(k);
  return idx;
}

const char* kTaskHeader =
    "[TASK]\n"
    "In a completely hypothetical world, there are a number of cities. Each city has a one-way connection to only "
    "one other city via a specific transit method (bus, train, plane, or ferry). Your task is to provide a route "
    "from a city to another city. You should follow the specific instruction provided later and output the route "
    "following the format provided in the instruction.\n\n"
    "[IMPORTANT NOTES]\n"
    "- All connections are one-way. If city A is connected to city B, you can travel from A to B, but not the other "
    "way around.\n"
    "- Because each city is connected to only one other city, so there's only one possible route. To find the "
    "route, you can simply start from the starting city, identify the next city it's connected to, and repeat the "
    "process until you reach the destination city.\n"
    "- Please follow the exact format specified below when outputting the route.\n\n"
    "[OUTPUT FORMAT]\n"
    "Please mark the route with <Route> and </Route> tags. The route should be in the following format, where one "
    "line is one step of the route:\n"
    "<Route>\n"
    "From <CITY_NAME>, take a <TRANSIT_METHOD> to <CITY_NAME>.\n"
    "...\n"
    "From <CITY_NAME>, take a <TRANSIT_METHOD> to <CITY_NAME>.\n"
    "</Route>\n\n"
    "[EXAMPLE]\n"
    "In a hypothetical world, there are a number of cities. Each city has a one-way connection to only one other "
    "city via a specific transit method. The details of the cities are as follows:\n\n"
    "Fort Worth is a lively city. You can travel from Fort Worth to Manchester by ferry.\n"
    "Leeds is a lively city. You can travel from Leeds to London by bus.\n"
    "Manchester is a lively city. You can travel from Manchester to Indianapolis by plane.\n"
    "Houston is a lively city. You can travel from Houston to London by ferry.\n"
    "Charlotte is a lively city. You can travel from Charlotte to Charlotte by bus.\n"
    "London is a lively city. You can travel from London to San Antonio by train.\n"
    "San Antonio is a lively city. You can travel from San Antonio to Kitchener by train.\n"
    "Seattle is a lively city. You can travel from Seattle to London by train.\n"
    "Indianapolis is a lively city. You can travel from Indianapolis to Houston by ferry.\n\n"
    "Now find the route from Manchester to Kitchener based on the information above.\n\n"
    "<Route>\n"
    "From Manchester, take a plane to Indianapolis.\n"
    "From Indianapolis, take a ferry to Houston.\n"
    "From Houston, take a ferry to London.\n"
    "From London, take a train to San Antonio.\n"
    "From San Antonio, take a train to Kitchener.\n"
    "</Route>\n\n"
    "[PROBLEM]\n"
    "In a hypothetical world, there are a number of cities. Each city has a one-way connection to only one other "
    "city via a specific transit method. The details of the cities are as follows:\n\n";

std::string task_footer(const std::string& start, const std::string& target) {
  return "\nNow find the route from " + start + " to " + target +
         " based on the information above. Some reminders:\n"
         "- All connections are one-way. You can solve the problem by iteratively finding the next city to travel "
         "to until you reach the destination city.\n"
         "- Follow the specific format for the route output. Mark the route with <Route> and </Route> tags.\n";
}

const char* kRouteOpen = "<Route>\n";
const char* kRouteClose = "</Route>";

}  // namespace

// ---- recall ----------------------------------------------------------------

Span RecallTask::pair_span(std::size_t index) const {
  require(index < pairs.size(), ErrorKind::kValidation, "pair index out of range");
  std::size_t begin = 1;
  for (std::size_t i = 0; i < index; ++i) begin += pairs[i].first.size() + pairs[i].second.size();
  return {begin, begin + pairs[index].first.size() + pairs[index].second.size()};
}

RecallTask gen_recall_task(std::size_t n_pairs, std::uint64_t seed, std::size_t vocab_size, std::size_t n_queries,
                           std::size_t key_len, std::size_t value_len) {
  require(n_pairs >= 1 && key_len >= 1 && value_len >= 1, ErrorKind::kValidation,
          "recall task needs at least one pair and non-empty keys and values");
  require(n_queries >= 1 && n_queries <= n_pairs, ErrorKind::kValidation, "n_queries must lie in [1, n_pairs]");
  const auto first = static_cast<std::size_t>(Tokenizer::kFirstMerge);
  const std::size_t needed = n_pairs * (key_len + value_len);
  require(vocab_size > first && vocab_size - first >= needed, ErrorKind::kValidation,
          "vocabulary too small for " + std::to_string(n_pairs) + " distinct pairs");

  std::mt19937_64 rng(seed);
  const auto ids = sample_indices(rng, vocab_size - first, needed);
  RecallTask task;
  task.seed = seed;
  task.prompt_tokens.push_back(Tokenizer::kBos);
  std::size_t k = 0;
  for (std::size_t p = 0; p < n_pairs; ++p) {
    std::vector<TokenId> key, value;
    for (std::size_t i = 0; i < key_len; ++i) key.push_back(static_cast<TokenId>(first + ids[k++]));
    for (std::size_t i = 0; i < value_len; ++i) value.push_back(static_cast<TokenId>(first + ids[k++]));
    task.prompt_tokens.insert(task.prompt_tokens.end(), key.begin(), key.end());
    task.prompt_tokens.insert(task.prompt_tokens.end(), value.begin(), value.end());
    task.pairs.emplace_back(std::move(key), std::move(value));
  }
  task.queries = sample_indices(rng, n_pairs, n_queries);
  task.prompt_tokens.push_back(Tokenizer::kSep);
  const auto& probe = task.probe_key();
  task.prompt_tokens.insert(task.prompt_tokens.end(), probe.begin(), probe.end());
  return task;
}

CalibrationExample recall_calibration(const RecallTask& task) {
  const std::size_t t = task.prompt_tokens.size();
  CalibrationExample ex{task.prompt_tokens, {t - task.probe_key().size() - 1, t}, task.gold_span()};
  ex.validate();
  return ex;
}

// ---- path ------------------------------------------------------------------

const std::vector<std::string>& city_names() {
  static const std::vector<std::string> names = [] {
    const std::vector<std::string> prefixes = {
        "Ash",  "Bel",  "Bram", "Cal",  "Cor",  "Dal", "Dun", "El",  "Fair", "Fen",   "Gal", "Glen", "Hal", "Har",
        "Hol",  "Ing",  "Jar",  "Kel",  "Kin",  "Lan", "Lin", "Mar", "Mel",  "Mor",   "Nor", "Oak",  "Or",  "Pen",
        "Pol",  "Quin", "Rav",  "Red",  "Ros",  "Sal", "Sel", "Stan", "Tal", "Thorn", "Tor", "Ul",   "Val", "Ver",
        "Wal",  "Wes",  "Wil",  "Win",  "Yar",  "Zan", "Bro", "Cas", "Del",  "Fal",   "Ken", "Lor",  "Mon"};
    const std::vector<std::string> suffixes = {
        "ton",   "ville", "burg",  "field", "ford",  "port", "mouth",  "stead",   "wick", "bury", "dale", "haven",
        "more",  "ridge", "worth", "by",    "ham",   "ley",  "mere",   "stone",   "gate", "crest", "brook", "wood",
        "vale",  "holm",  "moor",  "fell",  "shire", "land", "mont",   "cliff",   "bridge", "well", "hurst", "pool",
        "thorpe", "combe", "borough", "minster", "side", "view", "marsh", "bay", "ness"};
    std::set<std::string> unique;
    for (const auto& p : prefixes) {
      for (const auto& s : suffixes) unique.insert(p + s);
    }
    return std::vector<std::string>(unique.begin(), unique.end());
  }();
  return names;
}

const std::vector<std::string>& transit_methods() {
  static const std::vector<std::string> methods = {"bus", "train", "plane", "ferry"};
  return methods;
}

std::string render_edge(const PathEdge& e) {
  return e.src + " is a lively city. You can travel from " + e.src + " to " + e.dst + " by " + e.transit + ".\n";
}

std::string render_route_step(const PathEdge& e) {
  return "From " + e.src + ", take a " + e.transit + " to " + e.dst + ".\n";
}

std::string PathTask::gold_route_text() const {
  std::string out = kRouteOpen;
  for (std::size_t i : gold_path) out += render_route_step(edges.at(i));
  return out + kRouteClose;
}

PathTask gen_path_task(std::size_t n_edges, std::size_t path_len, std::uint64_t seed, const Tokenizer& tokenizer) {
  const auto& cities = city_names();
  require(path_len >= 1, ErrorKind::kValidation, "path_len must be at least 1");
  require(n_edges >= path_len + 1, ErrorKind::kValidation, "n_edges must be at least path_len + 1");
  require(n_edges + 1 <= cities.size(), ErrorKind::kValidation,
          "n_edges exceeds the city list (" + std::to_string(cities.size() - 1) + " edges at most)");

  std::mt19937_64 rng(seed);
  const auto nodes = sample_indices(rng, cities.size(), n_edges + 1);
  const auto& transit = transit_methods();
  // nodes[0..path_len] form the gold path; nodes[path_len] (the target) has no
  // outgoing edge; every other node is the source of exactly one distractor.
  std::vector<PathEdge> edges;
  for (std::size_t i = 0; i < path_len; ++i) {
    edges.push_back({cities[nodes[i]], cities[nodes[i + 1]], transit[rng() % transit.size()]});
  }
  for (std::size_t i = path_len + 1; i <= n_edges; ++i) {
    const auto dst = nodes[rng() % nodes.size()];
    edges.push_back({cities[nodes[i]], cities[dst], transit[rng() % transit.size()]});
  }
  std::vector<std::size_t> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng() % i]);

  PathTask task;
  task.seed = seed;
  task.start = cities[nodes[0]];
  task.target = cities[nodes[path_len]];
  task.gold_path.resize(path_len);
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    task.edges.push_back(edges[order[pos]]);
    if (order[pos] < path_len) task.gold_path[order[pos]] = pos;
  }

  task.prompt_text = kTaskHeader;
  task.prompt_tokens.push_back(Tokenizer::kBos);
  auto append = [&](const std::string& text) {
    task.prompt_text += text;
    auto ids = tokenizer.encode(text);
    task.prompt_tokens.insert(task.prompt_tokens.end(), ids.begin(), ids.end());
  };
  {
    auto ids = tokenizer.encode(kTaskHeader);
    task.prompt_tokens.insert(task.prompt_tokens.end(), ids.begin(), ids.end());
  }
  for (const auto& e : task.edges) {
    const std::size_t begin = task.prompt_tokens.size();
    append(render_edge(e));
    task.edge_spans.push_back({begin, task.prompt_tokens.size()});
  }
  append(task_footer(task.start, task.target));
  return task;
}

std::size_t edges_for_token_budget(std::size_t target_tokens, const Tokenizer& tokenizer) {
  constexpr std::size_t kProbeEdges = 64;
  const auto probe = gen_path_task(kProbeEdges, 4, 0, tokenizer);
  std::size_t edge_tokens = 0;
  for (const auto& s : probe.edge_spans) edge_tokens += s.size();
  const double per_edge = static_cast<double>(edge_tokens) / kProbeEdges;
  const double fixed = static_cast<double>(probe.prompt_tokens.size() - edge_tokens);
  const double n = std::round((static_cast<double>(target_tokens) - fixed) / per_edge);
  return static_cast<std::size_t>(std::max(n, 5.0));
}

Tokenizer build_path_tokenizer() {
  std::map<std::string, std::uint64_t> counts;
  auto add_text = [&](const std::string& text) {
    for (auto& chunk : pretokenize(text)) ++counts[chunk];
  };
  add_text(kTaskHeader);
  add_text(task_footer("A", "B"));
  add_text(kRouteOpen);
  add_text(kRouteClose);
  for (const auto& t : transit_methods()) {
    add_text(render_edge({"A", "B", t}));
    add_text(render_route_step({"A", "B", t}));
  }
  for (const auto& c : city_names()) {
    ++counts[c];
    ++counts[" " + c];
  }
  return train_bpe(counts, std::numeric_limits<std::size_t>::max());
}

// ---- route parsing and scoring --------------------------------------------

ParsedRoute parse_route(const std::string& text) {
  static const std::regex kStep(R"(^\s*From (.+?), take an? (\S+) to (.+?)\.?\s*$)");
  ParsedRoute out;
  const auto open = text.find("<Route>");
  if (open == std::string::npos) return out;
  out.found_open_tag = true;
  const std::size_t body = open + 7;
  auto close = text.find(kRouteClose, body);
  if (close == std::string::npos) {
    out.missing_close_tag = true;
    close = text.size();
  }
  std::istringstream lines(text.substr(body, close - body));
  std::string line;
  std::smatch m;
  while (std::getline(lines, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (std::regex_match(line, m, kStep)) {
      out.steps.push_back({m[1].str(), m[3].str(), m[2].str()});
    } else {
      ++out.dropped_lines;
    }
  }
  return out;
}

PathScore score_path(const ParsedRoute& parsed, const PathTask& task) {
  PathScore s;
  if (task.gold_path.empty()) return s;
  std::size_t matched = 0;
  for (std::size_t i = 0; i < task.gold_path.size() && i < parsed.steps.size(); ++i) {
    const auto& gold = task.edges.at(task.gold_path[i]);
    if (parsed.steps[i].src != gold.src || parsed.steps[i].dst != gold.dst) break;
    ++matched;
  }
  s.step_accuracy = static_cast<double>(matched) / static_cast<double>(task.gold_path.size());
  s.full_accuracy = matched == task.gold_path.size() ? 1.0 : 0.0;
  return s;
}

// ---- task files ------------------------------------------------------------

nlohmann::json to_json(const RecallTask& task) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& [k, v] : task.pairs) pairs.push_back({k, v});
  const auto gold = task.gold_span();
  return {{"kind", "recall"},
          {"generator_version", kGeneratorVersion},
          {"seed", task.seed},
          {"pairs", pairs},
          {"queries", task.queries},
          {"prompt_tokens", task.prompt_tokens},
          {"gold_span", {gold.begin, gold.end}}};
}

nlohmann::json to_json(const PathTask& task) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : task.edges) edges.push_back({e.src, e.dst, e.transit});
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : task.edge_spans) spans.push_back({s.begin, s.end});
  return {{"kind", "path"},
          {"generator_version", kGeneratorVersion},
          {"seed", task.seed},
          {"edges", edges},
          {"start", task.start},
          {"target", task.target},
          {"gold_path", task.gold_path},
          {"prompt_text", task.prompt_text},
          {"prompt_tokens", task.prompt_tokens},
          {"edge_spans", spans}};
}

namespace {

void expect_kind(const nlohmann::json& j, const std::string& kind) {
  require(j.value("kind", std::string()) == kind, ErrorKind::kFormat, "task file is not a " + kind + " task");
}

}  // namespace

RecallTask recall_from_json(const nlohmann::json& j) {
  RecallTask t;
  try {
    expect_kind(j, "recall");
    t.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("pairs")) {
      t.pairs.emplace_back(p.at(0).get<std::vector<TokenId>>(), p.at(1).get<std::vector<TokenId>>());
    }
    t.queries = j.at("queries").get<std::vector<std::size_t>>();
    t.prompt_tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed recall task: ") + e.what());
  }
  require(!t.queries.empty() && !t.pairs.empty(), ErrorKind::kFormat, "recall task has no pairs or queries");
  for (std::size_t q : t.queries) require(q < t.pairs.size(), ErrorKind::kFormat, "query index out of range");
  return t;
}

PathTask path_from_json(const nlohmann::json& j) {
  PathTask t;
  try {
    expect_kind(j, "path");
    t.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& e : j.at("edges")) {
      t.edges.push_back({e.at(0).get<std::string>(), e.at(1).get<std::string>(), e.at(2).get<std::string>()});
    }
    t.start = j.at("start").get<std::string>();
    t.target = j.at("target").get<std::string>();
    t.gold_path = j.at("gold_path").get<std::vector<std::size_t>>();
    t.prompt_text = j.at("prompt_text").get<std::string>();
    t.prompt_tokens = j.at("prompt_tokens").get<std::vector<TokenId>>();
    for (const auto& s : j.at("edge_spans")) t.edge_spans.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed path task: ") + e.what());
  }
  require(t.edge_spans.size() == t.edges.size(), ErrorKind::kFormat, "edge_spans and edges differ in length");
  for (std::size_t i : t.gold_path) require(i < t.edges.size(), ErrorKind::kFormat, "gold_path index out of range");
  return t;
}

}  // namespace dysco

namespace dysco {

// ---- evaluation ------------------------------------------------------------

double RecallOutcome::accuracy() const {
  if (correct.empty()) return 0.0;
  return static_cast<double>(std::count(correct.begin(), correct.end(), true)) / static_cast<double>(correct.size());
}

RecallOutcome run_recall(const Model& model, const RecallTask& task, const DecodePolicy& policy) {
  DecodeSession session(model, policy);
  session.start(task.prompt_tokens);
  RecallOutcome out;
  auto greedy = [](const std::vector<float>& logits) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  };
  StepRecord rec = session.step();
  for (std::size_t qi = 0; qi < task.queries.size(); ++qi) {
    const auto& [key, value] = task.pairs.at(task.queries[qi]);
    if (qi > 0) {
      std::vector<TokenId> forced{Tokenizer::kSep};
      forced.insert(forced.end(), key.begin(), key.end());
      for (TokenId t : forced) {
        session.feed(t);
        rec = session.step();
      }
    }
    std::vector<TokenId> answer;
    for (std::size_t i = 0; i < value.size(); ++i) {
      answer.push_back(greedy(rec.logits));
      session.feed(answer.back());
      if (i + 1 < value.size() || qi + 1 < task.queries.size()) rec = session.step();
    }
    out.correct.push_back(answer == value);
    out.answers.push_back(std::move(answer));
  }
  return out;
}

PathOutcome run_path(const Model& model, const PathTask& task, const Tokenizer& tokenizer, const DecodePolicy& policy,
                     const SamplerConfig& sampler, std::size_t max_new) {
  StopRules stop;
  stop.max_new = max_new;
  stop.stop_tokens = {Tokenizer::kEos};
  stop.stop_when = [&](std::span<const TokenId> generated) {
    // the closing tag ends with '>', so only check when the last token contains one
    const auto& last = tokenizer.token_bytes(generated.back());
    if (last.find('>') == std::string::npos) return false;
    return tokenizer.decode(generated).find("</Route>") != std::string::npos;
  };
  PathOutcome out;
  auto gen = generate(model, task.prompt_tokens, policy, sampler, stop);
  out.tokens = std::move(gen.tokens);
  out.stop_reason = gen.stop_reason;
  std::vector<TokenId> visible;
  for (TokenId t : out.tokens) {
    if (!tokenizer.is_special(t)) visible.push_back(t);
  }
  out.text = tokenizer.decode(visible);
  out.parsed = parse_route(out.text);
  out.score = score_path(out.parsed, task);
  return out;
}

}  // namespace dysco
