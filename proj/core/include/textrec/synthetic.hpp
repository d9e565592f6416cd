#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "textrec/data.hpp"

namespace textrec {

/// Planted-topic corpus: disjoint word pools per topic, users interacting
/// mostly inside their topic, profiles sampled from the pools.
struct SyntheticSpec {
  std::int32_t topics = 16;
  std::int32_t users_per_topic = 40;
  std::int32_t items_per_topic = 30;
  std::int32_t words_per_topic = 50;
  std::int32_t interactions_per_user = 8;
  std::int32_t profile_words = 12;
  std::int32_t diversified = 3;  // t rewrites per entity, word-resampled
  double noise_rate = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SyntheticCorpus {
  std::vector<RawItemRecord> items;
  ProfileMap item_profiles;
  std::vector<std::string> users;
  ProfileMap user_profiles;
  SplitResult splits;  // 8:1:1 per user
  std::vector<std::int32_t> user_topic;  // by user order
  std::vector<std::int32_t> item_topic;  // by item order
};

/// Item ids look like "i<topic>x<index>", user ids "u<topic>x<index>"; the
/// topic digits make planted structure checkable downstream.
std::int32_t topic_of_entity_id(const std::string& id);

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec);

/// Writes items.jsonl, users.jsonl, train.tsv, val.tsv, test.tsv into out_dir
/// (the data-module formats) and returns the file names written.
std::vector<std::string> write_synthetic(const SyntheticCorpus& corpus,
                                         const std::string& out_dir);

}  // namespace textrec
