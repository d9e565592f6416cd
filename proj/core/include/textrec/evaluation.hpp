#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "textrec/data.hpp"
#include "textrec/encoder.hpp"
#include "textrec/retrieval.hpp"

namespace textrec {

enum class ScoreKind { kCosine, kDot };

/// Per-round Recall@N / NDCG@N maps plus their arithmetic mean.
struct MetricsReport {
  std::vector<std::map<std::string, double>> rounds;
  std::map<std::string, double> mean;
  std::vector<std::int32_t> n_list;

  void compute_mean();
  std::string to_json() const;
  static MetricsReport from_json(const std::string& text);
};

std::string metric_key(const std::string& metric, std::int32_t n);

/// |top-k intersect relevant| / |relevant|.
double recall_at_k(const std::vector<std::int32_t>& ranked,
                   const std::unordered_set<std::int32_t>& relevant, std::int32_t k);

/// DCG over relevant hits at rank r (1-based) weighted 1/log2(r+1), divided by
/// the ideal DCG for min(k, |relevant|) hits.
double ndcg_at_k(const std::vector<std::int32_t>& ranked,
                 const std::unordered_set<std::int32_t>& relevant, std::int32_t k);

/// All-rank protocol: per user with at least one relevant item in `split`,
/// ranks every item except the user's train neighbors and averages each
/// metric@N over those users. Users with an empty relevant set are skipped.
std::map<std::string, double> evaluate_all_rank(const EmbeddingStore& users,
                                                const EmbeddingStore& items,
                                                const InteractionDataset& dataset, Split split,
                                                const std::vector<std::int32_t>& n_list,
                                                ScoreKind score_kind = ScoreKind::kCosine,
                                                int workers = 1);

/// Re-embeds users and items with profile pair j for rounds j = 1..t and
/// averages the per-round metrics. t = 0 evaluates the original profiles as a
/// single round; include_original prepends the original pair as round 0.
template <typename S>
MetricsReport evaluate_multi_profile(const EncoderParams<S>& params, const Vocab& vocab,
                                     const ProfileMap& user_profiles,
                                     const ProfileMap& item_profiles,
                                     const InteractionDataset& dataset, Split split,
                                     const std::vector<std::int32_t>& n_list, std::int32_t t,
                                     bool include_original = false, int workers = 1);

}  // namespace textrec
