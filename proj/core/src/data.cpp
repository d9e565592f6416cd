#include "textrec/data.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textrec/common.hpp"
#include "textrec/rng.hpp"

namespace textrec {

using nlohmann::json;

namespace {

[[noreturn]] void line_error(const std::string& path, std::size_t line_no, const std::string& what) {
  throw DataError(path + ":" + std::to_string(line_no) + ": " + what);
}

void check_id(const std::string& path, std::size_t line_no, const std::string& id) {
  if (id.empty()) line_error(path, line_no, "empty id");
  if (id.find('\t') != std::string::npos || id.find('\n') != std::string::npos) {
    line_error(path, line_no, "id contains tab or newline: '" + id + "'");
  }
}

std::vector<std::string> parse_profiles(const std::string& path, std::size_t line_no,
                                        const json& obj, const std::string& id) {
  if (!obj.contains("profiles") || !obj["profiles"].is_array() || obj["profiles"].empty()) {
    line_error(path, line_no, "entity '" + id + "' needs a non-empty profiles array");
  }
  std::vector<std::string> profiles;
  for (const auto& p : obj["profiles"]) {
    if (!p.is_string() || p.get<std::string>().empty()) {
      line_error(path, line_no, "entity '" + id + "' has an empty or non-string profile");
    }
    profiles.push_back(p.get<std::string>());
  }
  return profiles;
}

void reject_unknown_keys(const std::string& path, std::size_t line_no, const json& obj,
                         std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* key : allowed) {
      if (it.key() == key) {
        ok = true;
        break;
      }
    }
    if (!ok) line_error(path, line_no, "unknown key '" + it.key() + "'");
  }
}

}  // namespace

bool InteractionDataset::user_interacted(std::int32_t user, std::int32_t item) const {
  const auto& nbrs = user_neighbors[static_cast<std::size_t>(user)];
  return std::binary_search(nbrs.begin(), nbrs.end(), item);
}

void InteractionDataset::finalize() {
  user_neighbors.assign(users.size(), {});
  item_neighbors.assign(items.size(), {});
  for (const auto& [u, i] : train) {
    user_neighbors[static_cast<std::size_t>(u)].push_back(i);
    item_neighbors[static_cast<std::size_t>(i)].push_back(u);
  }
  for (auto& nbrs : user_neighbors) std::sort(nbrs.begin(), nbrs.end());
  for (auto& nbrs : item_neighbors) std::sort(nbrs.begin(), nbrs.end());

  for (const auto* split : {&train, &val, &test}) {
    std::set<std::pair<std::int32_t, std::int32_t>> seen;
    for (const auto& pair : *split) {
      if (!seen.insert(pair).second) {
        throw DataError("duplicate interaction in split: user '" +
                        users[static_cast<std::size_t>(pair.first)] + "' item '" +
                        items[static_cast<std::size_t>(pair.second)] + "'");
      }
    }
  }
}

std::vector<RawItemRecord> load_items_jsonl(const std::string& path, ProfileMap* profiles) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open items file: " + path);
  std::vector<RawItemRecord> items;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) line_error(path, line_no, "malformed JSON object");
    reject_unknown_keys(path, line_no, obj,
                        {"item_id", "title", "category", "description", "reviews", "profiles"});
    RawItemRecord rec;
    if (!obj.contains("item_id") || !obj["item_id"].is_string()) {
      line_error(path, line_no, "missing string item_id");
    }
    rec.item_id = obj["item_id"].get<std::string>();
    check_id(path, line_no, rec.item_id);
    if (!seen.insert(rec.item_id).second) {
      line_error(path, line_no, "duplicate item_id '" + rec.item_id + "'");
    }
    if (!obj.contains("title") || !obj["title"].is_string()) {
      line_error(path, line_no, "item '" + rec.item_id + "' missing string title");
    }
    rec.title = obj["title"].get<std::string>();
    if (obj.contains("category")) rec.category = obj["category"].get<std::string>();
    if (obj.contains("description")) rec.description = obj["description"].get<std::string>();
    if (obj.contains("reviews")) {
      for (const auto& r : obj["reviews"]) {
        if (!r.is_object() || !r.contains("user_id") || !r.contains("text")) {
          line_error(path, line_no, "review entries need user_id and text");
        }
        rec.reviews.emplace_back(r["user_id"].get<std::string>(), r["text"].get<std::string>());
      }
    }
    if (profiles) {
      ProfileSet set{rec.item_id, parse_profiles(path, line_no, obj, rec.item_id)};
      profiles->emplace(rec.item_id, std::move(set));
    }
    items.push_back(std::move(rec));
  }
  return items;
}

std::vector<std::string> load_users_jsonl(const std::string& path, ProfileMap* profiles) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open users file: " + path);
  std::vector<std::string> users;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json obj = json::parse(line, nullptr, false);
    if (obj.is_discarded() || !obj.is_object()) line_error(path, line_no, "malformed JSON object");
    reject_unknown_keys(path, line_no, obj, {"user_id", "profiles"});
    if (!obj.contains("user_id") || !obj["user_id"].is_string()) {
      line_error(path, line_no, "missing string user_id");
    }
    std::string user_id = obj["user_id"].get<std::string>();
    check_id(path, line_no, user_id);
    if (!seen.insert(user_id).second) {
      line_error(path, line_no, "duplicate user_id '" + user_id + "'");
    }
    if (profiles) {
      ProfileSet set{user_id, parse_profiles(path, line_no, obj, user_id)};
      profiles->emplace(user_id, std::move(set));
    }
    users.push_back(std::move(user_id));
  }
  return users;
}

std::vector<RatedPair> load_interactions_tsv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open interactions file: " + path);
  std::vector<RatedPair> pairs;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t tab1 = line.find('\t');
    if (tab1 == std::string::npos) line_error(path, line_no, "expected user<TAB>item[<TAB>rating]");
    std::size_t tab2 = line.find('\t', tab1 + 1);
    RatedPair pair;
    pair.user_id = line.substr(0, tab1);
    if (tab2 == std::string::npos) {
      pair.item_id = line.substr(tab1 + 1);
    } else {
      pair.item_id = line.substr(tab1 + 1, tab2 - tab1 - 1);
      std::string rating_str = line.substr(tab2 + 1);
      try {
        std::size_t used = 0;
        pair.rating = std::stod(rating_str, &used);
        if (used != rating_str.size()) throw std::invalid_argument(rating_str);
      } catch (const std::exception&) {
        line_error(path, line_no, "non-numeric rating '" + rating_str + "'");
      }
    }
    check_id(path, line_no, pair.user_id);
    check_id(path, line_no, pair.item_id);
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

void save_items_jsonl(const std::string& path, const std::vector<RawItemRecord>& items,
                      const ProfileMap& profiles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write items file: " + path);
  for (const auto& rec : items) {
    json obj;
    obj["item_id"] = rec.item_id;
    obj["title"] = rec.title;
    if (rec.category) obj["category"] = *rec.category;
    if (rec.description) obj["description"] = *rec.description;
    if (!rec.reviews.empty()) {
      json reviews = json::array();
      for (const auto& [user, text] : rec.reviews) reviews.push_back({{"user_id", user}, {"text", text}});
      obj["reviews"] = reviews;
    }
    auto it = profiles.find(rec.item_id);
    if (it == profiles.end()) throw DataError("item '" + rec.item_id + "' has no profile set");
    obj["profiles"] = it->second.profiles;
    out << obj.dump() << '\n';
  }
}

void save_users_jsonl(const std::string& path, const std::vector<std::string>& users,
                      const ProfileMap& profiles) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write users file: " + path);
  for (const auto& user : users) {
    auto it = profiles.find(user);
    if (it == profiles.end()) throw DataError("user '" + user + "' has no profile set");
    json obj;
    obj["user_id"] = user;
    obj["profiles"] = it->second.profiles;
    out << obj.dump() << '\n';
  }
}

void save_interactions_tsv(const std::string& path, const std::vector<RatedPair>& pairs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write interactions file: " + path);
  for (const auto& pair : pairs) {
    out << pair.user_id << '\t' << pair.item_id;
    if (pair.rating) out << '\t' << *pair.rating;
    out << '\n';
  }
}

InteractionDataset make_dataset(const std::vector<std::string>& users,
                                const std::vector<std::string>& items,
                                const std::vector<RatedPair>& train,
                                const std::vector<RatedPair>& val,
                                const std::vector<RatedPair>& test) {
  InteractionDataset ds;
  ds.users = users;
  ds.items = items;
  for (std::size_t i = 0; i < users.size(); ++i) {
    if (!ds.user_index.emplace(users[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate user_id '" + users[i] + "'");
    }
  }
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!ds.item_index.emplace(items[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate item_id '" + items[i] + "'");
    }
  }
  auto convert = [&](const std::vector<RatedPair>& src, const char* name) {
    std::vector<std::pair<std::int32_t, std::int32_t>> out;
    out.reserve(src.size());
    for (const auto& pair : src) {
      auto u = ds.user_index.find(pair.user_id);
      if (u == ds.user_index.end()) {
        throw DataError(std::string(name) + " split references unknown user '" + pair.user_id + "'");
      }
      auto i = ds.item_index.find(pair.item_id);
      if (i == ds.item_index.end()) {
        throw DataError(std::string(name) + " split references unknown item '" + pair.item_id + "'");
      }
      out.emplace_back(u->second, i->second);
    }
    return out;
  };
  ds.train = convert(train, "train");
  ds.val = convert(val, "val");
  ds.test = convert(test, "test");
  ds.finalize();
  return ds;
}

Corpus load_corpus(const std::string& items_path, const std::string& users_path,
                   const std::string& train_path, const std::string& val_path,
                   const std::string& test_path) {
  Corpus corpus;
  corpus.items = load_items_jsonl(items_path, &corpus.item_profiles);
  std::vector<std::string> users = load_users_jsonl(users_path, &corpus.user_profiles);
  std::vector<std::string> item_ids;
  item_ids.reserve(corpus.items.size());
  for (const auto& rec : corpus.items) item_ids.push_back(rec.item_id);
  corpus.dataset = make_dataset(users, item_ids, load_interactions_tsv(train_path),
                                load_interactions_tsv(val_path), load_interactions_tsv(test_path));
  return corpus;
}

std::vector<RatedPair> filter_ratings(const std::vector<RatedPair>& pairs, double min_rating) {
  std::vector<RatedPair> kept;
  kept.reserve(pairs.size());
  for (const auto& pair : pairs) {
    if (!pair.rating || *pair.rating > min_rating) kept.push_back(pair);
  }
  return kept;
}

std::vector<RatedPair> kcore_filter(const std::vector<RatedPair>& pairs, std::int32_t k) {
  if (k < 1) throw DataError("kcore_filter: k must be >= 1");
  // Collapse duplicates so degrees count unique partners.
  std::map<std::string, std::map<std::string, const RatedPair*>> by_user;
  std::map<std::string, std::set<std::string>> by_item;
  for (const auto& pair : pairs) {
    by_user[pair.user_id].emplace(pair.item_id, &pair);
    by_item[pair.item_id].insert(pair.user_id);
  }
  std::set<std::string> dead_users, dead_items;
  bool changed = true;
  while (changed) {
    changed = false;
    for (auto& [user, items] : by_user) {
      if (dead_users.count(user)) continue;
      std::size_t degree = 0;
      for (auto& [item, _] : items)
        if (!dead_items.count(item)) ++degree;
      if (degree < static_cast<std::size_t>(k)) {
        dead_users.insert(user);
        changed = true;
      }
    }
    for (auto& [item, users] : by_item) {
      if (dead_items.count(item)) continue;
      std::size_t degree = 0;
      for (auto& user : users)
        if (!dead_users.count(user)) ++degree;
      if (degree < static_cast<std::size_t>(k)) {
        dead_items.insert(item);
        changed = true;
      }
    }
  }
  std::vector<RatedPair> kept;
  std::set<std::pair<std::string, std::string>> emitted;
  for (const auto& pair : pairs) {
    if (dead_users.count(pair.user_id) || dead_items.count(pair.item_id)) continue;
    if (emitted.emplace(pair.user_id, pair.item_id).second) kept.push_back(pair);
  }
  return kept;
}

SplitResult split_interactions(const std::vector<RatedPair>& pairs, const SplitRatios& ratios,
                               std::uint64_t seed) {
  if (ratios.train <= 0 || ratios.val <= 0 || ratios.test <= 0) {
    throw DataError("split ratios must be positive");
  }
  const double total = ratios.train + ratios.val + ratios.test;
  const double val_share = ratios.val / total;
  const double test_share = ratios.test / total;

  // Group per user preserving first-appearance order.
  std::vector<std::string> user_order;
  std::unordered_map<std::string, std::vector<std::size_t>> per_user;
  for (std::size_t idx = 0; idx < pairs.size(); ++idx) {
    auto [it, inserted] = per_user.try_emplace(pairs[idx].user_id);
    if (inserted) user_order.push_back(pairs[idx].user_id);
    it->second.push_back(idx);
  }

  SplitResult result;
  for (const auto& user : user_order) {
    auto indices = per_user[user];
    const std::size_t n = indices.size();
    if (n < 3) {
      for (auto idx : indices) result.train.push_back(pairs[idx]);
      continue;
    }
    Rng rng(derive_seed(seed, user));
    rng.shuffle(indices);
    auto n_val = static_cast<std::size_t>(std::max<long>(1, std::lround(val_share * static_cast<double>(n))));
    auto n_test = static_cast<std::size_t>(std::max<long>(1, std::lround(test_share * static_cast<double>(n))));
    // Keep at least one training pair per user.
    while (n_val + n_test > n - 1) {
      if (n_val >= n_test && n_val > 1) {
        --n_val;
      } else if (n_test > 1) {
        --n_test;
      } else {
        break;
      }
    }
    std::size_t cursor = 0;
    for (std::size_t j = 0; j < n - n_val - n_test; ++j) result.train.push_back(pairs[indices[cursor++]]);
    for (std::size_t j = 0; j < n_val; ++j) result.val.push_back(pairs[indices[cursor++]]);
    for (std::size_t j = 0; j < n_test; ++j) result.test.push_back(pairs[indices[cursor++]]);
  }
  return result;
}

}  // namespace textrec
