// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include "dysco/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "dysco/error.hpp"

namespace dysco {

namespace {

const std::array<const char*, 3> kSpecialNames = {"<bos>", "<eos>", "<sep>"};

std::uint64_t pair_key(TokenId a, TokenId b) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_blank(unsigned char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\v' || c == '\f'; }
bool is_punct(unsigned char c) { return !is_letter(c) && !is_digit(c) && !is_blank(c) && c != '\n'; }

// GPT-2 style reversible byte <-> printable code point table for JSON storage.
struct ByteUnicode {
  std::array<std::string, 256> to_utf8;
  std::map<std::string, unsigned char> from_utf8;

  ByteUnicode() {
    auto printable = [](int b) {
      return (b >= '!' && b <= '~') || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
    };
    int extra = 0;
    for (int b = 0; b < 256; ++b) {
      const int cp = printable(b) ? b : 256 + extra++;
      std::string s;
      if (cp < 0x80) {
        s.push_back(static_cast<char>(cp));
      } else {
        s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
      }
      to_utf8[b] = s;
      from_utf8[s] = static_cast<unsigned char>(b);
    }
  }

  std::string encode(const std::string& bytes) const {
    std::string out;
    for (unsigned char c : bytes) out += to_utf8[c];
    return out;
  }

  std::string decode(const std::string& text) const {
    std::string out;
    std::size_t i = 0;
    while (i < text.size()) {
      const std::size_t len = (static_cast<unsigned char>(text[i]) & 0x80) ? 2 : 1;
      auto it = from_utf8.find(text.substr(i, len));
      require(it != from_utf8.end(), ErrorKind::kFormat, "tokenizer string has an unmapped character");
      out.push_back(static_cast<char>(it->second));
      i += len;
    }
    return out;
  }
};

const ByteUnicode& byte_unicode() {
  static const ByteUnicode table;
  return table;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> out;
  const std::size_t n = text.size();
  auto at = [&](std::size_t i) { return static_cast<unsigned char>(text[i]); };
  std::size_t i = 0;
  while (i < n) {
    if (at(i) == '\n') {
      std::size_t j = i;
      while (j < n && at(j) == '\n') ++j;
      out.emplace_back(text.substr(i, j - i));
      i = j;
      continue;
    }
    if (is_blank(at(i))) {
      std::size_t j = i;
      while (j < n && is_blank(at(j))) ++j;
      // a single space right before a word joins that word
      if (j < n && at(j) != '\n' && at(j - 1) == ' ') --j;
      if (j > i) {
        out.emplace_back(text.substr(i, j - i));
        i = j;
        continue;
      }
    }
    const std::size_t start = i;
    if (at(i) == ' ') ++i;
    if (is_letter(at(i))) {
      while (i < n && is_letter(at(i))) ++i;
    } else if (is_digit(at(i))) {
      while (i < n && is_digit(at(i))) ++i;
    } else {
      while (i < n && is_punct(at(i))) ++i;
      if (i < n && at(i) == '\n') ++i;
    }
    out.emplace_back(text.substr(start, i - start));
  }
  return out;
}

Tokenizer Tokenizer::byte_level() {
  Tokenizer t;
  t.mode_ = TokenizerMode::kByte;
  for (int b = 0; b < 256; ++b) t.tokens_.emplace_back(1, static_cast<char>(b));
  for (const char* s : kSpecialNames) t.tokens_.emplace_back(s);
  return t;
}

Tokenizer Tokenizer::subword(std::vector<std::pair<std::string, std::string>> merges) {
  Tokenizer t = byte_level();
  t.mode_ = TokenizerMode::kSubword;
  std::map<std::string, TokenId> ids;
  for (int b = 0; b < 256; ++b) ids[t.tokens_[b]] = b;
  for (const auto& [l, r] : merges) {
    auto li = ids.find(l), ri = ids.find(r);
    require(li != ids.end() && ri != ids.end(), ErrorKind::kFormat,
            "merge (" + l + ", " + r + ") uses a token that does not exist yet");
    const auto key = pair_key(li->second, ri->second);
    require(t.merge_rank_.count(key) == 0, ErrorKind::kFormat, "merge (" + l + ", " + r + ") is listed twice");
    // Two different splits can spell the same string; they share one id.
    const std::string joined = l + r;
    auto [it, fresh] = ids.emplace(joined, static_cast<TokenId>(t.tokens_.size()));
    if (fresh) t.tokens_.push_back(joined);
    t.merge_rank_[key] = {t.merge_rank_.size(), it->second};
  }
  t.merges_ = std::move(merges);
  return t;
}

const std::string& Tokenizer::token_bytes(TokenId id) const {
  require(id >= 0 && static_cast<std::size_t>(id) < tokens_.size(), ErrorKind::kValidation,
          "unknown token id " + std::to_string(id));
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<TokenId> Tokenizer::encode_chunk(std::string_view chunk) const {
  std::vector<TokenId> sym(chunk.size());
  for (std::size_t i = 0; i < chunk.size(); ++i) sym[i] = static_cast<unsigned char>(chunk[i]);
  while (sym.size() > 1) {
    std::size_t best = merges_.size();
    TokenId merged = -1;
    for (std::size_t i = 0; i + 1 < sym.size(); ++i) {
      auto it = merge_rank_.find(pair_key(sym[i], sym[i + 1]));
      if (it != merge_rank_.end() && it->second.first < best) {
        best = it->second.first;
        merged = it->second.second;
      }
    }
    if (merged < 0) break;
    std::vector<TokenId> next;
    next.reserve(sym.size());
    for (std::size_t i = 0; i < sym.size(); ++i) {
      if (i + 1 < sym.size()) {
        auto it = merge_rank_.find(pair_key(sym[i], sym[i + 1]));
        if (it != merge_rank_.end() && it->second.first == best) {
          next.push_back(merged);
          ++i;
          continue;
        }
      }
      next.push_back(sym[i]);
    }
    sym.swap(next);
  }
  return sym;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> out;
  if (mode_ == TokenizerMode::kByte) {
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(c);
    return out;
  }
  for (const auto& chunk : pretokenize(text)) {
    auto ids = encode_chunk(chunk);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

nlohmann::json Tokenizer::to_json() const {
  const auto& bu = byte_unicode();
  nlohmann::json j;
  j["mode"] = mode_ == TokenizerMode::kByte ? "byte" : "subword";
  nlohmann::json vocab = nlohmann::json::object();
  for (std::size_t id = 0; id < tokens_.size(); ++id) {
    if (is_special(static_cast<TokenId>(id))) continue;
    vocab[bu.encode(tokens_[id])] = id;
  }
  j["vocab"] = vocab;
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merges_) merges.push_back({bu.encode(l), bu.encode(r)});
  j["merges"] = merges;
  nlohmann::json specials = nlohmann::json::object();
  for (std::size_t s = 0; s < kSpecialNames.size(); ++s) specials[kSpecialNames[s]] = kBos + static_cast<TokenId>(s);
  j["special_tokens"] = specials;
  return j;
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  const auto& bu = byte_unicode();
  Tokenizer t;
  try {
    const auto mode = j.at("mode").get<std::string>();
    require(mode == "byte" || mode == "subword", ErrorKind::kFormat, "unknown tokenizer mode '" + mode + "'");
    std::vector<std::pair<std::string, std::string>> merges;
    for (const auto& m : j.at("merges")) {
      require(m.is_array() && m.size() == 2, ErrorKind::kFormat, "merge entries must be pairs");
      merges.emplace_back(bu.decode(m[0].get<std::string>()), bu.decode(m[1].get<std::string>()));
    }
    require(mode == "subword" || merges.empty(), ErrorKind::kFormat, "byte-level tokenizer cannot carry merges");
    t = mode == "byte" ? byte_level() : subword(std::move(merges));
    const auto& vocab = j.at("vocab");
    require(vocab.size() + kSpecialNames.size() == t.tokens_.size(), ErrorKind::kFormat,
            "tokenizer vocab size disagrees with merges");
    for (const auto& [key, id] : vocab.items()) {
      const auto i = id.get<std::size_t>();
      require(i < t.tokens_.size() && !t.is_special(static_cast<TokenId>(i)) && t.tokens_[i] == bu.decode(key),
              ErrorKind::kFormat, "tokenizer vocab entry '" + key + "' disagrees with merges");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, std::string("malformed tokenizer JSON: ") + e.what());
  }
  return t;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot open '" + path.string() + "'");
  try {
    return from_json(nlohmann::json::parse(f));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kFormat, "malformed tokenizer file '" + path.string() + "': " + e.what());
  }
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream f(path);
  require(static_cast<bool>(f), ErrorKind::kIo, "cannot write '" + path.string() + "'");
  f << to_json().dump() << '\n';
}

Tokenizer train_bpe(const std::map<std::string, std::uint64_t>& chunk_counts, std::size_t max_merges,
                    std::uint64_t min_count) {
  std::vector<std::string> strings;
  for (int b = 0; b < 256; ++b) strings.emplace_back(1, static_cast<char>(b));
  for (const char* s : kSpecialNames) strings.emplace_back(s);

  std::map<std::string, TokenId> ids;
  for (int b = 0; b < 256; ++b) ids[strings[static_cast<std::size_t>(b)]] = b;

  std::vector<std::vector<TokenId>> words;
  std::vector<std::uint64_t> weights;
  for (const auto& [chunk, count] : chunk_counts) {
    if (chunk.empty() || count == 0) continue;
    std::vector<TokenId> w;
    for (unsigned char c : chunk) w.push_back(c);
    words.push_back(std::move(w));
    weights.push_back(count);
  }

  struct Entry {
    std::uint64_t count;
    TokenId a, b;
  };
  auto better = [&](const Entry& x, const Entry& y) {
    if (x.count != y.count) return x.count > y.count;
    const auto& xa = strings[static_cast<std::size_t>(x.a)];
    const auto& ya = strings[static_cast<std::size_t>(y.a)];
    if (xa != ya) return xa < ya;
    return strings[static_cast<std::size_t>(x.b)] < strings[static_cast<std::size_t>(y.b)];
  };
  std::set<Entry, decltype(better)> queue(better);
  std::unordered_map<std::uint64_t, std::uint64_t> counts;
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> where;

  auto adjust = [&](TokenId a, TokenId b, std::int64_t delta, std::size_t word) {
    const auto key = pair_key(a, b);
    auto& c = counts[key];
    if (c > 0) queue.erase(Entry{c, a, b});
    c = static_cast<std::uint64_t>(static_cast<std::int64_t>(c) + delta);
    if (c > 0) queue.insert(Entry{c, a, b});
    if (delta > 0) where[key].push_back(word);
  };
  for (std::size_t w = 0; w < words.size(); ++w) {
    for (std::size_t i = 0; i + 1 < words[w].size(); ++i) {
      adjust(words[w][i], words[w][i + 1], static_cast<std::int64_t>(weights[w]), w);
    }
  }

  std::vector<std::pair<std::string, std::string>> merges;
  while (merges.size() < max_merges && !queue.empty()) {
    const Entry top = *queue.begin();
    if (top.count < min_count) break;
    const std::string joined = strings[static_cast<std::size_t>(top.a)] + strings[static_cast<std::size_t>(top.b)];
    merges.emplace_back(strings[static_cast<std::size_t>(top.a)], strings[static_cast<std::size_t>(top.b)]);
    auto [known, fresh] = ids.emplace(joined, static_cast<TokenId>(strings.size()));
    if (fresh) strings.push_back(joined);
    const TokenId id = known->second;

    auto affected = where[pair_key(top.a, top.b)];
    std::sort(affected.begin(), affected.end());
    affected.erase(std::unique(affected.begin(), affected.end()), affected.end());
    for (std::size_t w : affected) {
      auto& sym = words[w];
      const auto wt = static_cast<std::int64_t>(weights[w]);
      bool present = false;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) present |= sym[i] == top.a && sym[i + 1] == top.b;
      if (!present) continue;
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) adjust(sym[i], sym[i + 1], -wt, w);
      std::vector<TokenId> next;
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == top.a && sym[i + 1] == top.b) {
          next.push_back(id);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym.swap(next);
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) adjust(sym[i], sym[i + 1], wt, w);
    }
  }
  return Tokenizer::subword(std::move(merges));
}

}  // namespace dysco
