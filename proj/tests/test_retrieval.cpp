#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "textrec/common.hpp"
#include "textrec/encoder.hpp"
#include "textrec/retrieval.hpp"
#include "textrec/rng.hpp"
#include "textrec/tokenizer.hpp"

using namespace textrec;

namespace {

EmbeddingStore random_store(Rng& rng, EntityKind kind, int count, int dim,
                            const std::string& prefix) {
  EmbeddingStore store;
  store.kind = kind;
  store.rows.resize(count, dim);
  for (int r = 0; r < count; ++r) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s%04d", prefix.c_str(), r);
    store.ids.push_back(buf);
    store.index.emplace(store.ids.back(), r);
    for (int c = 0; c < dim; ++c) store.rows(r, c) = static_cast<float>(rng.uniform(-1, 1));
  }
  return store;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_SUITE_BEGIN("retrieval");

TEST_CASE("cosine of identical and orthogonal vectors") {
  Eigen::RowVectorXf a(3), b(3);
  a << 1, 2, 3;
  b << 1, 2, 3;
  CHECK(cosine_score(a, b) == doctest::Approx(1.0).epsilon(1e-9));
  Eigen::RowVectorXf c(3);
  c << -2, 1, 0;
  CHECK(cosine_score(a, c) == doctest::Approx(0.0).epsilon(1e-12));
  Eigen::RowVectorXf zero = Eigen::RowVectorXf::Zero(3);
  CHECK_THROWS_AS(cosine_score(a, zero), NumericError);
}

TEST_CASE("cosine matches a 64-bit formula oracle on random pairs") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::RowVectorXf a(8), b(8);
    for (int j = 0; j < 8; ++j) {
      a(j) = static_cast<float>(rng.uniform(-2, 2));
      b(j) = static_cast<float>(rng.uniform(-2, 2));
    }
    double dot = 0, na = 0, nb = 0;
    for (int j = 0; j < 8; ++j) {
      dot += static_cast<double>(a(j)) * b(j);
      na += static_cast<double>(a(j)) * a(j);
      nb += static_cast<double>(b(j)) * b(j);
    }
    const double oracle = dot / (std::sqrt(na) * std::sqrt(nb));
    CHECK(std::fabs(cosine_score(a, b) - oracle) < 1e-6);
  }
}

TEST_CASE("an item equal to the user vector ranks first with score one") {
  Rng rng(5);
  EmbeddingStore items = random_store(rng, EntityKind::kItem, 10, 6, "i");
  EmbeddingStore users = random_store(rng, EntityKind::kUser, 1, 6, "u");
  items.rows.row(4) = users.rows.row(0);
  auto ranked = recommend(users.ids[0], 3, users, items, {});
  REQUIRE(ranked.items.size() == 3);
  CHECK(ranked.items[0].item_id == "i0004");
  CHECK(ranked.items[0].score == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("k beyond the candidate count returns everything fully sorted") {
  Rng rng(6);
  EmbeddingStore items = random_store(rng, EntityKind::kItem, 8, 4, "i");
  EmbeddingStore users = random_store(rng, EntityKind::kUser, 1, 4, "u");
  auto ranked = recommend(users.ids[0], 50, users, items, {"i0002"});
  CHECK(ranked.items.size() == 7);
  for (std::size_t r = 1; r < ranked.items.size(); ++r) {
    CHECK(ranked.items[r - 1].score >= ranked.items[r].score);
  }
  for (const auto& item : ranked.items) CHECK(item.item_id != "i0002");
}

TEST_CASE("recommend matches a full-sort oracle for 50 users over 200 items") {
  Rng rng(7);
  EmbeddingStore items = random_store(rng, EntityKind::kItem, 200, 8, "i");
  EmbeddingStore users = random_store(rng, EntityKind::kUser, 50, 8, "u");
  for (int u = 0; u < 50; ++u) {
    std::unordered_set<std::string> excluded;
    for (int e = 0; e < 5; ++e) {
      excluded.insert("i" + std::string(4 - std::to_string(e * 13 % 200).size(), '0') +
                      std::to_string(e * 13 % 200));
    }
    auto ranked = recommend(users.ids[static_cast<std::size_t>(u)], 10, users, items, excluded);

    // Oracle: score every candidate in double, full sort, take 10.
    std::vector<std::pair<double, std::string>> all;
    for (int i = 0; i < 200; ++i) {
      if (excluded.count(items.ids[static_cast<std::size_t>(i)])) continue;
      double dot = 0, nu = 0, ni = 0;
      for (int c = 0; c < 8; ++c) {
        dot += static_cast<double>(users.rows(u, c)) * items.rows(i, c);
        nu += static_cast<double>(users.rows(u, c)) * users.rows(u, c);
        ni += static_cast<double>(items.rows(i, c)) * items.rows(i, c);
      }
      all.emplace_back(dot / (std::sqrt(nu) * std::sqrt(ni)), items.ids[static_cast<std::size_t>(i)]);
    }
    std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    REQUIRE(ranked.items.size() == 10);
    for (int r = 0; r < 10; ++r) {
      CHECK(ranked.items[static_cast<std::size_t>(r)].item_id == all[static_cast<std::size_t>(r)].second);
    }
  }
}

TEST_CASE("positive rescaling of all rows preserves every ranking") {
  Rng rng(8);
  EmbeddingStore items = random_store(rng, EntityKind::kItem, 60, 5, "i");
  EmbeddingStore users = random_store(rng, EntityKind::kUser, 10, 5, "u");
  EmbeddingStore items_scaled = items;
  items_scaled.rows *= 7.3f;
  EmbeddingStore users_scaled = users;
  users_scaled.rows *= 7.3f;
  for (int u = 0; u < 10; ++u) {
    auto a = recommend(users.ids[static_cast<std::size_t>(u)], 12, users, items, {});
    auto b = recommend(users_scaled.ids[static_cast<std::size_t>(u)], 12, users_scaled,
                       items_scaled, {});
    REQUIRE(a.items.size() == b.items.size());
    for (std::size_t r = 0; r < a.items.size(); ++r) {
      CHECK(a.items[r].item_id == b.items[r].item_id);
    }
  }
}

TEST_CASE("recommend(k) is a prefix of recommend(k+1)") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddingStore items = random_store(rng, EntityKind::kItem, 40, 4, "i");
    EmbeddingStore users = random_store(rng, EntityKind::kUser, 2, 4, "u");
    for (int k = 1; k < 8; ++k) {
      auto shorter = recommend(users.ids[0], k, users, items, {});
      auto longer = recommend(users.ids[0], k + 1, users, items, {});
      for (int r = 0; r < k; ++r) {
        CHECK(shorter.items[static_cast<std::size_t>(r)].item_id ==
              longer.items[static_cast<std::size_t>(r)].item_id);
      }
    }
  }
}

TEST_CASE("unknown user id is rejected") {
  Rng rng(10);
  EmbeddingStore items = random_store(rng, EntityKind::kItem, 4, 4, "i");
  EmbeddingStore users = random_store(rng, EntityKind::kUser, 2, 4, "u");
  CHECK_THROWS_AS(recommend("nobody", 2, users, items, {}), DataError);
}

TEST_CASE("store save/load round trip is bit exact") {
  Rng rng(11);
  EmbeddingStore store = random_store(rng, EntityKind::kItem, 12, 7, "i");
  const std::string p1 = "store_roundtrip_1.ezem";
  const std::string p2 = "store_roundtrip_2.ezem";
  store.save(p1);
  EmbeddingStore loaded = EmbeddingStore::load(p1);
  CHECK(loaded.kind == EntityKind::kItem);
  CHECK(loaded.ids == store.ids);
  CHECK(loaded.rows.isApprox(store.rows, 0.0));
  loaded.save(p2);
  CHECK(slurp(p1) == slurp(p2));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("embed_entities encodes the selected profile deterministically") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.vocab = 32;
  cfg.max_len = 8;
  cfg.embed_dim = 8;
  auto params = init_encoder_params<float>(cfg, 3);
  Vocab vocab = Vocab::build({"red green blue cyan magenta"}, 32);

  ProfileMap profiles;
  profiles.emplace("a", ProfileSet{"a", {"red green", "blue"}});
  profiles.emplace("b", ProfileSet{"b", {"red green", "cyan magenta"}});
  profiles.emplace("c", ProfileSet{"c", {"blue blue", "cyan"}});
  std::vector<std::string> order = {"a", "b", "c"};

  EmbeddingStore store =
      embed_entities(params, vocab, order, profiles, 0, EntityKind::kUser, 1);
  CHECK(store.count() == 3);
  // Identical profile text gives identical rows.
  CHECK(store.rows.row(0).isApprox(store.rows.row(1), 0.0));
  CHECK_FALSE(store.rows.row(0).isApprox(store.rows.row(2), 0.0));

  // Row equals a direct encode call on that entity's profile.
  Mat<float> direct = encode(params, {tokenize("blue blue", vocab, cfg.max_len)});
  CHECK(store.rows.row(2).isApprox(direct.row(0), 0.0));

  // Index 1 picks the diversified rewrites.
  EmbeddingStore diversified =
      embed_entities(params, vocab, order, profiles, 1, EntityKind::kUser, 1);
  Mat<float> direct_b = encode(params, {tokenize("cyan magenta", vocab, cfg.max_len)});
  CHECK(diversified.rows.row(1).isApprox(direct_b.row(0), 0.0));

  // Parallel workers produce the same rows.
  EmbeddingStore parallel =
      embed_entities(params, vocab, order, profiles, 0, EntityKind::kUser, 4);
  CHECK(parallel.rows.isApprox(store.rows, 0.0));

  CHECK_THROWS_AS(embed_entities(params, vocab, order, profiles, 7, EntityKind::kUser, 1),
                  DataError);
}

TEST_SUITE_END();
