#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace textrec {

struct RawItemRecord {
  std::string item_id;
  std::string title;
  std::optional<std::string> category;
  std::optional<std::string> description;
  std::vector<std::pair<std::string, std::string>> reviews;  // (user_id, text)
};

/// Index 0 is the original profile; 1..t are diversified rewrites.
struct ProfileSet {
  std::string entity_id;
  std::vector<std::string> profiles;

  std::int32_t diversified_count() const { return static_cast<std::int32_t>(profiles.size()) - 1; }
};

using ProfileMap = std::unordered_map<std::string, ProfileSet>;

struct IdPair {
  std::string user_id;
  std::string item_id;
};

struct RatedPair {
  std::string user_id;
  std::string item_id;
  std::optional<double> rating;
};

enum class Split { kTrain, kVal, kTest };

/// Users/items in file order; splits as index pairs; neighbor sets derived
/// from the train split only.
struct InteractionDataset {
  std::vector<std::string> users;
  std::vector<std::string> items;
  std::unordered_map<std::string, std::int32_t> user_index;
  std::unordered_map<std::string, std::int32_t> item_index;

  std::vector<std::pair<std::int32_t, std::int32_t>> train;
  std::vector<std::pair<std::int32_t, std::int32_t>> val;
  std::vector<std::pair<std::int32_t, std::int32_t>> test;

  std::vector<std::vector<std::int32_t>> user_neighbors;  // sorted item indices
  std::vector<std::vector<std::int32_t>> item_neighbors;  // sorted user indices

  const std::vector<std::pair<std::int32_t, std::int32_t>>& split(Split s) const {
    return s == Split::kTrain ? train : (s == Split::kVal ? val : test);
  }
  bool user_interacted(std::int32_t user, std::int32_t item) const;

  /// Populates user_neighbors/item_neighbors from train; validates that no
  /// split holds a duplicate pair.
  void finalize();
};

struct Corpus {
  std::vector<RawItemRecord> items;
  ProfileMap user_profiles;
  ProfileMap item_profiles;
  InteractionDataset dataset;
};

/// Reads items.jsonl. Errors carry the 1-based line number. An item with
/// neither description nor reviews is accepted; ids must be unique.
std::vector<RawItemRecord> load_items_jsonl(const std::string& path, ProfileMap* profiles);

/// Reads users.jsonl ({"user_id","profiles":[...]}).
std::vector<std::string> load_users_jsonl(const std::string& path, ProfileMap* profiles);

/// Reads one interactions TSV ("user<TAB>item[<TAB>rating]").
std::vector<RatedPair> load_interactions_tsv(const std::string& path);

void save_items_jsonl(const std::string& path, const std::vector<RawItemRecord>& items,
                      const ProfileMap& profiles);
void save_users_jsonl(const std::string& path, const std::vector<std::string>& users,
                      const ProfileMap& profiles);
void save_interactions_tsv(const std::string& path, const std::vector<RatedPair>& pairs);

/// Loads entities plus pre-split interaction files and cross-references them.
/// Interactions naming an unknown user or item are rejected.
Corpus load_corpus(const std::string& items_path, const std::string& users_path,
                   const std::string& train_path, const std::string& val_path,
                   const std::string& test_path);

/// Keeps pairs whose rating is strictly greater than min_rating. Pairs with
/// no rating pass through untouched.
std::vector<RatedPair> filter_ratings(const std::vector<RatedPair>& pairs, double min_rating);

/// Maximal sub-bipartite-graph where every surviving user and item has degree
/// >= k. Deterministic regardless of input order; duplicate pairs collapse.
std::vector<RatedPair> kcore_filter(const std::vector<RatedPair>& pairs, std::int32_t k);

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

struct SplitResult {
  std::vector<RatedPair> train;
  std::vector<RatedPair> val;
  std::vector<RatedPair> test;
};

/// Per-user random partition. Users with < 3 pairs keep everything in train;
/// otherwise val and test each get max(1, round(share)), clamped so at least
/// one pair stays in train. Deterministic per (seed, user_id).
SplitResult split_interactions(const std::vector<RatedPair>& pairs, const SplitRatios& ratios,
                               std::uint64_t seed);

/// Assembles a dataset from entity orderings and split pair lists.
InteractionDataset make_dataset(const std::vector<std::string>& users,
                                const std::vector<std::string>& items,
                                const std::vector<RatedPair>& train,
                                const std::vector<RatedPair>& val,
                                const std::vector<RatedPair>& test);

}  // namespace textrec
