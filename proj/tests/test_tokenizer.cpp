#include <doctest.h>

#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "textrec/common.hpp"
#include "textrec/rng.hpp"
#include "textrec/tokenizer.hpp"

using namespace textrec;

TEST_SUITE_BEGIN("tokenizer");

TEST_CASE("empty corpus yields the four reserved tokens") {
  Vocab vocab = Vocab::build({}, 100);
  CHECK(vocab.size() == 4);
  CHECK(vocab.token(Vocab::kCls) == "[CLS]");
  CHECK(vocab.token(Vocab::kPad) == "[PAD]");
  CHECK(vocab.token(Vocab::kMask) == "[MASK]");
  CHECK(vocab.token(Vocab::kUnk) == "[UNK]");
}

TEST_CASE("frequency order with lexical tie break") {
  Vocab vocab = Vocab::build({"a a b"}, 6);
  CHECK(vocab.size() == 6);
  CHECK(vocab.id("a") == 4);
  CHECK(vocab.id("b") == 5);

  // Tie between b and c resolves lexically.
  Vocab tied = Vocab::build({"c b c b a"}, 6);
  CHECK(tied.id("b") == 4);
  CHECK(tied.id("c") == 5);
  CHECK(tied.id("a") == Vocab::kUnk);  // budget exhausted
}

TEST_CASE("build matches an independent counting oracle on synthetic docs") {
  Rng rng(7);
  std::vector<std::string> docs;
  for (int d = 0; d < 1000; ++d) {
    std::string doc;
    for (int w = 0; w < 20; ++w) {
      doc += "w" + std::to_string(rng.uniform_int(40)) + " ";
    }
    docs.push_back(doc);
  }
  const std::int32_t target = 24;
  Vocab vocab = Vocab::build(docs, target);

  // Oracle: count words, sort by (count desc, token asc), keep target-4.
  std::map<std::string, long> counts;
  for (const auto& doc : docs) {
    for (const auto& w : split_words(doc)) counts[w]++;
  }
  std::vector<std::pair<std::string, long>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  REQUIRE(vocab.size() == target);
  for (int i = 0; i < target - 4; ++i) {
    CHECK(vocab.token(4 + i) == ranked[static_cast<std::size_t>(i)].first);
  }
}

TEST_CASE("target size below 5 is rejected") {
  CHECK_THROWS_AS(Vocab::build({"a"}, 4), DataError);
}

TEST_CASE("split lowers case and isolates punctuation") {
  auto words = split_words("Hello, World! it's 3.5");
  std::vector<std::string> expect = {"hello", ",", "world", "!", "it", "'", "s", "3", ".", "5"};
  CHECK(words == expect);
}

TEST_CASE("empty text tokenizes to a lone [CLS]") {
  Vocab vocab = Vocab::build({"hello world"}, 10);
  TokenSequence seq = tokenize("", vocab, 8);
  CHECK(seq.true_len == 1);
  CHECK(seq.ids[0] == Vocab::kCls);
  for (std::size_t j = 1; j < seq.ids.size(); ++j) CHECK(seq.ids[j] == Vocab::kPad);
  CHECK(seq.attention_mask[0] == 1);
  CHECK(seq.attention_mask[1] == 0);
}

TEST_CASE("[CLS] leads and known words map to their ids") {
  Vocab vocab = Vocab::build({"hello world"}, 10);
  TokenSequence seq = tokenize("Hello world", vocab, 8);
  CHECK(seq.true_len == 3);
  CHECK(seq.ids[0] == Vocab::kCls);
  CHECK(vocab.token(seq.ids[1]) == "hello");
  CHECK(vocab.token(seq.ids[2]) == "world");
  CHECK(seq.ids[3] == Vocab::kPad);
}

TEST_CASE("long text truncates to max_len keeping word max_len-1") {
  std::string text;
  for (int w = 0; w < 600; ++w) text += "word" + std::to_string(w) + " ";
  Vocab vocab = Vocab::build({text}, 650);
  TokenSequence seq = tokenize(text, vocab, 512);
  CHECK(seq.true_len == 512);
  // Stream position 511 (0-based, [CLS] at 0) holds word index 510.
  CHECK(vocab.token(seq.ids[511]) == "word510");
  long mask_sum = 0;
  for (auto m : seq.attention_mask) mask_sum += m;
  CHECK(mask_sum == seq.true_len);
}

TEST_CASE("attention mask sums to true_len for arbitrary text") {
  Vocab vocab = Vocab::build({"a b c d e f"}, 10);
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::string text;
    const int n = static_cast<int>(rng.uniform_int(30));
    for (int w = 0; w < n; ++w) text += "tok" + std::to_string(rng.uniform_int(50)) + " ";
    TokenSequence seq = tokenize(text, vocab, 16);
    long mask_sum = 0;
    for (auto m : seq.attention_mask) mask_sum += m;
    CHECK(mask_sum == seq.true_len);
    CHECK(seq.true_len >= 1);
    CHECK(seq.true_len <= 16);
  }
}

TEST_CASE("in-vocab single words round-trip through id and token") {
  Vocab vocab = Vocab::build({"alpha beta gamma"}, 10);
  for (const auto& word : {"alpha", "beta", "gamma"}) {
    TokenSequence seq = tokenize(word, vocab, 4);
    CHECK(vocab.token(seq.ids[1]) == word);
  }
}

TEST_CASE("oov words map to [UNK]") {
  Vocab vocab = Vocab::build({"alpha"}, 5);
  TokenSequence seq = tokenize("alpha zeta", vocab, 4);
  CHECK(vocab.token(seq.ids[1]) == "alpha");
  CHECK(seq.ids[2] == Vocab::kUnk);
}

TEST_CASE("vocab save/load round trip") {
  Vocab vocab = Vocab::build({"one two three two two"}, 8);
  const std::string path = "vocab_roundtrip_test.txt";
  vocab.save(path);
  Vocab loaded = Vocab::load(path);
  REQUIRE(loaded.size() == vocab.size());
  for (std::int32_t id = 0; id < vocab.size(); ++id) CHECK(loaded.token(id) == vocab.token(id));
  std::remove(path.c_str());
}

TEST_SUITE_END();
