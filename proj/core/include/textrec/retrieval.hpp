#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "textrec/common.hpp"
#include "textrec/data.hpp"
#include "textrec/encoder.hpp"
#include "textrec/tokenizer.hpp"

namespace textrec {

enum class EntityKind : std::uint8_t { kUser = 0, kItem = 1 };

/// Frozen per-entity embeddings, rows aligned with `ids`. Persisted as an
/// "EZEM" file (magic, u32 version=1, u8 kind, u32 count, u32 dim, then
/// {u16 id length, id bytes, dim x f32 LE} per entity).
struct EmbeddingStore {
  EntityKind kind = EntityKind::kUser;
  std::vector<std::string> ids;
  std::unordered_map<std::string, std::int32_t> index;
  MatF rows;

  std::int32_t dim() const { return static_cast<std::int32_t>(rows.cols()); }
  std::int32_t count() const { return static_cast<std::int32_t>(rows.rows()); }
  std::int32_t row_of(const std::string& id) const;

  void save(const std::string& path) const;
  static EmbeddingStore load(const std::string& path);
};

/// Encodes profile `profile_index` of every entity in `order` (inference
/// mode). Deterministic; rows parallelize across `workers` threads.
template <typename S>
EmbeddingStore embed_entities(const EncoderParams<S>& params, const Vocab& vocab,
                              const std::vector<std::string>& order, const ProfileMap& profiles,
                              std::int32_t profile_index, EntityKind kind, int workers = 1);

/// Cosine similarity with double accumulation; throws NumericError on a
/// zero-norm row.
double cosine_score(const Eigen::Ref<const Eigen::RowVectorXf>& u,
                    const Eigen::Ref<const Eigen::RowVectorXf>& v);

struct ScoredItem {
  std::string item_id;
  double score;
};

struct RankedList {
  std::string user_id;
  std::vector<ScoredItem> items;  // scores non-increasing, ties by id bytes
};

/// Exact top-k by cosine over all items minus `excluded_items`. Returns fewer
/// than k only when candidates run out.
RankedList recommend(const std::string& user_id, std::int32_t k, const EmbeddingStore& users,
                     const EmbeddingStore& items,
                     const std::unordered_set<std::string>& excluded_items);

/// recommend() against an explicit user vector (the preference-shift demo
/// encodes ad-hoc profiles that live in no store).
RankedList recommend_vector(const Eigen::RowVectorXf& user_row, const std::string& label,
                            std::int32_t k, const EmbeddingStore& items,
                            const std::unordered_set<std::string>& excluded_items);

}  // namespace textrec
