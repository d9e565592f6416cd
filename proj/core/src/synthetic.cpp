#include "textrec/synthetic.hpp"

#include <algorithm>
#include <set>
#include <stdexcept>

#include "textrec/common.hpp"
#include "textrec/rng.hpp"

namespace textrec {

void SyntheticSpec::validate() const {
  if (topics < 1 || users_per_topic < 1 || items_per_topic < 1 || words_per_topic < 1 ||
      interactions_per_user < 1 || profile_words < 1) {
    throw DataError("synthetic spec counts must be >= 1");
  }
  if (diversified < 0) throw DataError("synthetic spec diversified must be >= 0");
  if (noise_rate < 0 || noise_rate >= 1) throw DataError("noise rate must be in [0,1)");
}

namespace {

std::string topic_word(std::int32_t topic, std::int32_t index) {
  return "t" + std::to_string(topic) + "w" + std::to_string(index);
}

std::string entity_id(char prefix, std::int32_t topic, std::int32_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%c%03dx%04d", prefix, topic, index);
  return buf;
}

std::string sample_profile_text(Rng& rng, const std::vector<std::int32_t>& topic_pool,
                                std::int32_t words_per_topic, std::int32_t length) {
  std::string text;
  for (std::int32_t w = 0; w < length; ++w) {
    const std::int32_t topic =
        topic_pool[static_cast<std::size_t>(rng.uniform_int(topic_pool.size()))];
    const auto word = static_cast<std::int32_t>(
        rng.uniform_int(static_cast<std::uint64_t>(words_per_topic)));
    if (w > 0) text += ' ';
    text += topic_word(topic, word);
  }
  return text;
}

}  // namespace

std::int32_t topic_of_entity_id(const std::string& id) {
  if (id.size() < 5 || (id[0] != 'i' && id[0] != 'u')) {
    throw DataError("not a synthetic entity id: '" + id + "'");
  }
  return std::stoi(id.substr(1, 3));
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  SyntheticCorpus corpus;
  Rng rng(spec.seed);

  const std::int32_t item_total = spec.topics * spec.items_per_topic;

  // Items: one disjoint word pool per topic.
  for (std::int32_t topic = 0; topic < spec.topics; ++topic) {
    for (std::int32_t n = 0; n < spec.items_per_topic; ++n) {
      RawItemRecord rec;
      rec.item_id = entity_id('i', topic, n);
      rec.title = sample_profile_text(rng, {topic}, spec.words_per_topic, 3);
      rec.category = "topic" + std::to_string(topic);
      rec.description = sample_profile_text(rng, {topic}, spec.words_per_topic, 6);
      ProfileSet set;
      set.entity_id = rec.item_id;
      for (std::int32_t p = 0; p <= spec.diversified; ++p) {
        set.profiles.push_back(
            sample_profile_text(rng, {topic}, spec.words_per_topic, spec.profile_words));
      }
      corpus.item_profiles.emplace(rec.item_id, std::move(set));
      corpus.items.push_back(std::move(rec));
      corpus.item_topic.push_back(topic);
    }
  }

  // Users plus interactions: same-topic items except a noise_rate fraction.
  std::vector<RatedPair> pairs;
  for (std::int32_t topic = 0; topic < spec.topics; ++topic) {
    for (std::int32_t n = 0; n < spec.users_per_topic; ++n) {
      const std::string user_id = entity_id('u', topic, n);
      corpus.users.push_back(user_id);
      corpus.user_topic.push_back(topic);

      std::set<std::int32_t> chosen;
      int attempts = 0;
      while (static_cast<std::int32_t>(chosen.size()) < spec.interactions_per_user &&
             attempts < spec.interactions_per_user * 50) {
        ++attempts;
        std::int32_t item_index;
        if (rng.uniform() < spec.noise_rate) {
          item_index = static_cast<std::int32_t>(
              rng.uniform_int(static_cast<std::uint64_t>(item_total)));
        } else {
          item_index = topic * spec.items_per_topic +
                       static_cast<std::int32_t>(rng.uniform_int(
                           static_cast<std::uint64_t>(spec.items_per_topic)));
        }
        chosen.insert(item_index);
      }
      std::vector<std::int32_t> interacted_topics;
      std::set<std::int32_t> topic_set;
      for (auto item_index : chosen) {
        topic_set.insert(item_index / spec.items_per_topic);
        pairs.push_back(
            {user_id, corpus.items[static_cast<std::size_t>(item_index)].item_id, std::nullopt});
      }
      interacted_topics.assign(topic_set.begin(), topic_set.end());

      // User profiles draw from the union of interacted topics' pools.
      ProfileSet set;
      set.entity_id = user_id;
      for (std::int32_t p = 0; p <= spec.diversified; ++p) {
        set.profiles.push_back(sample_profile_text(rng, interacted_topics, spec.words_per_topic,
                                                   spec.profile_words));
      }
      corpus.user_profiles.emplace(user_id, std::move(set));
    }
  }

  corpus.splits = split_interactions(pairs, SplitRatios{0.8, 0.1, 0.1}, spec.seed);
  return corpus;
}

std::vector<std::string> write_synthetic(const SyntheticCorpus& corpus,
                                         const std::string& out_dir) {
  save_items_jsonl(out_dir + "/items.jsonl", corpus.items, corpus.item_profiles);
  save_users_jsonl(out_dir + "/users.jsonl", corpus.users, corpus.user_profiles);
  save_interactions_tsv(out_dir + "/train.tsv", corpus.splits.train);
  save_interactions_tsv(out_dir + "/val.tsv", corpus.splits.val);
  save_interactions_tsv(out_dir + "/test.tsv", corpus.splits.test);
  return {"items.jsonl", "users.jsonl", "train.tsv", "val.tsv", "test.tsv"};
}

}  // namespace textrec
