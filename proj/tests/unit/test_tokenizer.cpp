#include <map>
#include <random>
#include <string>

#include "doctest.h"
#include "dysco/error.hpp"
#include "dysco/tokenizer.hpp"

using namespace dysco;

namespace {

// Naive trainer: recount every pair each round over the current segmentation.
std::vector<std::pair<std::string, std::string>> naive_bpe(const std::map<std::string, std::uint64_t>& counts,
                                                           std::size_t max_merges) {
  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  for (const auto& [w, c] : counts) {
    std::vector<std::string> sym;
    for (char ch : w) sym.emplace_back(1, ch);
    words.emplace_back(sym, c);
  }
  std::vector<std::pair<std::string, std::string>> merges;
  while (merges.size() < max_merges) {
    std::map<std::pair<std::string, std::string>, std::uint64_t> pc;
    for (const auto& [sym, c] : words) {
      for (std::size_t i = 0; i + 1 < sym.size(); ++i) pc[{sym[i], sym[i + 1]}] += c;
    }
    if (pc.empty()) break;
    auto best = pc.begin();
    for (auto it = pc.begin(); it != pc.end(); ++it) {
      if (it->second > best->second) best = it;  // map order gives the lexicographic tie-break
    }
    merges.push_back(best->first);
    for (auto& [sym, c] : words) {
      std::vector<std::string> next;
      for (std::size_t i = 0; i < sym.size(); ++i) {
        if (i + 1 < sym.size() && sym[i] == best->first.first && sym[i + 1] == best->first.second) {
          next.push_back(sym[i] + sym[i + 1]);
          ++i;
        } else {
          next.push_back(sym[i]);
        }
      }
      sym = next;
    }
  }
  return merges;
}

std::string random_text(std::mt19937_64& rng, std::size_t len, const std::string& alphabet) {
  std::string s;
  for (std::size_t i = 0; i < len; ++i) s.push_back(alphabet[rng() % alphabet.size()]);
  return s;
}

}  // namespace

TEST_CASE("byte tokenizer maps bytes to ids") {
  auto t = Tokenizer::byte_level();
  CHECK(t.encode("AB") == std::vector<TokenId>{65, 66});
  CHECK(t.vocab_size() == 259);
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    std::string s;
    for (std::size_t i = 0; i < rng() % 64; ++i) s.push_back(static_cast<char>(rng() & 0xFF));
    auto ids = t.encode(s);
    CHECK(t.decode(ids) == s);
  }
}

TEST_CASE("special ids decode to their names and unknown ids are rejected") {
  auto t = Tokenizer::byte_level();
  std::vector<TokenId> ids{Tokenizer::kBos, 'x', Tokenizer::kSep};
  CHECK(t.decode(ids) == "<bos>x<sep>");
  std::vector<TokenId> bad{9999};
  CHECK_THROWS_AS(t.decode(bad), Error);
  std::vector<TokenId> neg{-1};
  CHECK_THROWS_AS(t.decode(neg), Error);
}

TEST_CASE("a single merge joins the pair") {
  auto t = Tokenizer::subword({{"a", "b"}});
  auto ids = t.encode("abab");
  CHECK(ids == std::vector<TokenId>{Tokenizer::kFirstMerge, Tokenizer::kFirstMerge});
  CHECK(t.decode(ids) == "abab");
  CHECK(t.encode("aab") == std::vector<TokenId>{'a', Tokenizer::kFirstMerge});
}

TEST_CASE("merges referencing unknown tokens or repeated pairs are format errors") {
  CHECK_THROWS_AS(Tokenizer::subword({{"ab", "c"}}), Error);
  CHECK_THROWS_AS(Tokenizer::subword({{"a", "b"}, {"a", "b"}}), Error);
}

TEST_CASE("two merges spelling the same string share an id") {
  auto t = Tokenizer::subword({{"a", "b"}, {"b", "c"}, {"ab", "c"}, {"a", "bc"}});
  CHECK(t.vocab_size() == 259 + 3);
  CHECK(t.encode("abc").size() == 1);
}

TEST_CASE("pretokenizer chunk rules") {
  using V = std::vector<std::string>;
  CHECK(pretokenize("Hello world") == V{"Hello", " world"});
  CHECK(pretokenize("from A to B.\nNext") == V{"from", " A", " to", " B", ".\n", "Next"});
  CHECK(pretokenize("a:\n\nb") == V{"a", ":\n", "\n", "b"});
  CHECK(pretokenize("x   y") == V{"x", "  ", " y"});
  CHECK(pretokenize("n 42x") == V{"n", " 42", "x"});
  CHECK(pretokenize("end \n") == V{"end", " ", "\n"});
  CHECK(pretokenize("") == V{});
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_text(rng, rng() % 40, "ab 1.\n\t:");
    std::string joined;
    for (const auto& c : pretokenize(s)) {
      CHECK(!c.empty());
      joined += c;
    }
    CHECK(joined == s);
  }
}

TEST_CASE("trained merges match a naive recount trainer") {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::map<std::string, std::uint64_t> counts;
    for (int w = 0; w < 12; ++w) counts[random_text(rng, 1 + rng() % 7, "abcd")] += 1 + rng() % 4;
    const std::size_t max_merges = 1 + rng() % 15;
    auto t = train_bpe(counts, max_merges);
    CHECK(t.merges() == naive_bpe(counts, max_merges));
  }
}

TEST_CASE("training to exhaustion makes every chunk one token and round-trips text") {
  std::map<std::string, std::uint64_t> counts{{"Hello", 3}, {" world", 2}, {".\n", 4}, {" lively", 1}};
  auto t = train_bpe(counts, 1000);
  for (const auto& [chunk, c] : counts) CHECK(t.encode(chunk).size() == 1);
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_text(rng, rng() % 50, "Helowrd .\nlivy\t");
    CHECK(t.decode(t.encode(s)) == s);
  }
  auto again = train_bpe(counts, 1000);
  CHECK(again.merges() == t.merges());
}

TEST_CASE("JSON round trip preserves encoding") {
  std::map<std::string, std::uint64_t> counts{{" caf\xc3\xa9", 2}, {"tab\t", 1}, {"x\x01y", 3}};
  auto t = train_bpe(counts, 100);
  auto j = t.to_json();
  CHECK(j["mode"] == "subword");
  CHECK(j["special_tokens"]["<sep>"] == Tokenizer::kSep);
  auto back = Tokenizer::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.merges() == t.merges());
  CHECK(back.vocab_size() == t.vocab_size());
  for (const auto& [chunk, c] : counts) CHECK(back.encode(chunk) == t.encode(chunk));

  auto byte_back = Tokenizer::from_json(Tokenizer::byte_level().to_json());
  CHECK(byte_back.mode() == TokenizerMode::kByte);

  auto broken = j;
  broken["mode"] = "wordpiece";
  CHECK_THROWS_AS(Tokenizer::from_json(broken), Error);
  broken = j;
  broken.erase("merges");
  CHECK_THROWS_AS(Tokenizer::from_json(broken), Error);
}
