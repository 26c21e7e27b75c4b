#pragma once

// Independent checks for generated path tasks. Re-derives the route by greedy
// traversal over the edge list instead of trusting gold_path.

#include <map>
#include <set>
#include <string>

#include "dysco/tasks.hpp"

namespace oracle {

struct PathCheck {
  bool ok = true;
  std::string reason;
  void fail(const std::string& why) {
    if (ok) reason = why;
    ok = false;
  }
};

inline PathCheck validate_path_task(const dysco::PathTask& task, const dysco::Tokenizer& tok) {
  PathCheck c;
  std::map<std::string, std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < task.edges.size(); ++i) out[task.edges[i].src].push_back(i);

  // greedy walk
  std::vector<std::size_t> walk;
  std::set<std::string> seen{task.start};
  std::string at = task.start;
  while (at != task.target) {
    auto it = out.find(at);
    if (it == out.end()) {
      c.fail("walk stuck at " + at);
      return c;
    }
    if (it->second.size() != 1) {
      c.fail(at + " on the route has " + std::to_string(it->second.size()) + " outgoing edges");
      return c;
    }
    walk.push_back(it->second[0]);
    at = task.edges[it->second[0]].dst;
    if (!seen.insert(at).second) {
      c.fail("walk revisits " + at);
      return c;
    }
  }
  if (walk != task.gold_path) c.fail("greedy walk differs from gold_path");
  if (out.count(task.target)) c.fail("target has an outgoing edge");

  if (task.prompt_tokens.empty() || task.prompt_tokens[0] != dysco::Tokenizer::kBos) c.fail("missing <bos>");
  std::vector<dysco::TokenId> body(task.prompt_tokens.begin() + 1, task.prompt_tokens.end());
  if (tok.decode(body) != task.prompt_text) c.fail("prompt tokens do not decode to prompt_text");
  if (task.edge_spans.size() != task.edges.size()) c.fail("one span per edge expected");
  std::size_t prev_end = 0;
  for (std::size_t i = 0; i < task.edge_spans.size() && i < task.edges.size(); ++i) {
    const auto& s = task.edge_spans[i];
    if (s.begin < prev_end || s.end <= s.begin || s.end > task.prompt_tokens.size()) {
      c.fail("edge span " + std::to_string(i) + " overlaps or is out of range");
      break;
    }
    prev_end = s.end;
    std::vector<dysco::TokenId> piece(task.prompt_tokens.begin() + static_cast<std::ptrdiff_t>(s.begin),
                                      task.prompt_tokens.begin() + static_cast<std::ptrdiff_t>(s.end));
    if (tok.decode(piece) != dysco::render_edge(task.edges[i])) c.fail("edge span " + std::to_string(i) + " text");
  }
  return c;
}

}  // namespace oracle
