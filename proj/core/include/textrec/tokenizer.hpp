#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace textrec {

// Lowercase word-level vocabulary. Ids 0..3 are reserved for the special
// tokens; word tokens follow in frequency order (ties broken lexically).
class Vocab {
 public:
  static constexpr std::int32_t kCls = 0;
  static constexpr std::int32_t kPad = 1;
  static constexpr std::int32_t kMask = 2;
  static constexpr std::int32_t kUnk = 3;
  static constexpr std::int32_t kNumReserved = 4;

  Vocab();

  std::int32_t size() const { return static_cast<std::int32_t>(id_to_token_.size()); }
  const std::string& token(std::int32_t id) const { return id_to_token_.at(static_cast<std::size_t>(id)); }
  /// Id for a normalized token, or kUnk.
  std::int32_t id(const std::string& token) const;
  bool contains(const std::string& token) const { return token_to_id_.count(token) > 0; }

  /// Builds a vocab of at most `target_size` entries (reserved tokens included)
  /// from the most frequent word tokens of `texts`. target_size must be >= 5.
  /// An empty corpus yields the 4 reserved tokens only.
  static Vocab build(const std::vector<std::string>& texts, std::int32_t target_size);

  /// One token per line, line number = id.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  void add(const std::string& token);

  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
};

struct TokenSequence {
  std::vector<std::int32_t> ids;        // length max_len, [CLS] first, [PAD] tail
  std::vector<std::uint8_t> attention_mask;  // 1 iff position < true_len
  std::int32_t true_len = 0;
};

/// Splits into lowercase word tokens. ASCII punctuation becomes standalone
/// tokens; multi-byte UTF-8 sequences are kept as word characters.
std::vector<std::string> split_words(const std::string& text);

/// [CLS] + word ids (OOV -> [UNK]), truncated to max_len, padded with [PAD].
TokenSequence tokenize(const std::string& text, const Vocab& vocab, std::int32_t max_len);

}  // namespace textrec
