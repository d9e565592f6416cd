#include "textrec/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>

#include "textrec/common.hpp"

namespace textrec {

namespace {
const char* kReservedNames[Vocab::kNumReserved] = {"[CLS]", "[PAD]", "[MASK]", "[UNK]"};

bool is_ascii_space(unsigned char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_ascii_punct(unsigned char c) { return c < 128 && std::ispunct(c); }
}  // namespace

Vocab::Vocab() {
  for (const char* name : kReservedNames) add(name);
}

void Vocab::add(const std::string& token) {
  token_to_id_.emplace(token, static_cast<std::int32_t>(id_to_token_.size()));
  id_to_token_.push_back(token);
}

std::int32_t Vocab::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      words.push_back(current);
      current.clear();
    }
  };
  for (unsigned char c : text) {
    if (is_ascii_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      words.emplace_back(1, static_cast<char>(c));
    } else {
      current.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return words;
}

Vocab Vocab::build(const std::vector<std::string>& texts, std::int32_t target_size) {
  if (target_size < kNumReserved + 1) {
    throw DataError("vocab target_size must be >= 5, got " + std::to_string(target_size));
  }
  // std::map keeps candidates in lexical order, which settles frequency ties.
  std::map<std::string, std::int64_t> counts;
  for (const auto& text : texts) {
    for (auto& w : split_words(text)) counts[w] += 1;
  }
  std::vector<std::pair<std::string, std::int64_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  const std::size_t budget = static_cast<std::size_t>(target_size - kNumReserved);
  for (std::size_t i = 0; i < ranked.size() && i < budget; ++i) vocab.add(ranked[i].first);
  return vocab;
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocab file: " + path);
  for (const auto& token : id_to_token_) out << token << '\n';
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read vocab file: " + path);
  Vocab vocab;
  std::string line;
  std::int32_t line_no = 0;
  while (std::getline(in, line)) {
    if (line_no < kNumReserved) {
      if (line != kReservedNames[line_no]) {
        throw DataError("vocab file " + path + " line " + std::to_string(line_no + 1) +
                        ": expected reserved token " + kReservedNames[line_no]);
      }
    } else {
      if (line.empty()) {
        throw DataError("vocab file " + path + " line " + std::to_string(line_no + 1) +
                        ": empty token");
      }
      if (vocab.token_to_id_.count(line)) {
        throw DataError("vocab file " + path + " line " + std::to_string(line_no + 1) +
                        ": duplicate token '" + line + "'");
      }
      vocab.add(line);
    }
    ++line_no;
  }
  if (line_no < kNumReserved) throw DataError("vocab file " + path + " is truncated");
  return vocab;
}

TokenSequence tokenize(const std::string& text, const Vocab& vocab, std::int32_t max_len) {
  if (max_len < 2) throw DataError("tokenize: max_len must be >= 2");
  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
  seq.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
  seq.ids[0] = Vocab::kCls;
  std::int32_t pos = 1;
  for (const auto& word : split_words(text)) {
    if (pos >= max_len) break;
    seq.ids[static_cast<std::size_t>(pos)] = vocab.id(word);
    ++pos;
  }
  seq.true_len = pos;
  for (std::int32_t j = 0; j < pos; ++j) seq.attention_mask[static_cast<std::size_t>(j)] = 1;
  return seq;
}

}  // namespace textrec
