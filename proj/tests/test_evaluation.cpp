#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "textrec/common.hpp"
#include "textrec/data.hpp"
#include "textrec/evaluation.hpp"
#include "textrec/rng.hpp"

using namespace textrec;

namespace {

EmbeddingStore store_of(const MatF& rows, const std::vector<std::string>& ids, EntityKind kind) {
  EmbeddingStore store;
  store.kind = kind;
  store.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) store.index.emplace(ids[i], static_cast<std::int32_t>(i));
  store.rows = rows;
  return store;
}

}  // namespace

TEST_SUITE_BEGIN("evaluation");

TEST_CASE("recall counts hits over the relevant size") {
  std::vector<std::int32_t> ranked = {3, 1, 4, 1 + 10, 5, 9, 2, 6};
  std::unordered_set<std::int32_t> relevant = {3, 4, 9};
  CHECK(recall_at_k(ranked, relevant, 8) == doctest::Approx(1.0));
  CHECK(recall_at_k(ranked, {100, 200}, 8) == doctest::Approx(0.0));
  // 3 relevant, one of them at rank 4, k = 10.
  std::vector<std::int32_t> ranked2 = {7, 8, 10, 3, 11, 12, 13, 14, 15, 16};
  CHECK(recall_at_k(ranked2, {3, 90, 91}, 10) == doctest::Approx(1.0 / 3.0));
  CHECK_THROWS_AS(recall_at_k(ranked, {}, 5), DataError);
}

TEST_CASE("ndcg matches the closed formula") {
  // Single relevant item at rank 1.
  CHECK(ndcg_at_k({5, 6, 7}, {5}, 3) == doctest::Approx(1.0));
  // No hits.
  CHECK(ndcg_at_k({5, 6, 7}, {9}, 3) == doctest::Approx(0.0));
  // Relevant at ranks 2 and 5 out of 3 relevant, k = 10.
  std::vector<std::int32_t> ranked = {10, 1, 11, 12, 2, 13, 14, 15, 16, 17};
  const double dcg = 1.0 / std::log2(3.0) + 1.0 / std::log2(6.0);
  const double idcg = 1.0 + 1.0 / std::log2(3.0) + 1.0 / std::log2(4.0);
  const double expected = dcg / idcg;
  CHECK(expected == doctest::Approx(0.4776).epsilon(1e-3));
  CHECK(ndcg_at_k(ranked, {1, 2, 3}, 10) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("recall is non-decreasing in k and both metrics stay in [0,1]") {
  // NDCG under the truncated-ideal convention (IDCG summed to min(k, |rel|))
  // can dip when rank k+1 is a miss while the ideal still grows, so only
  // recall carries a monotonicity guarantee.
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<std::int32_t> ranked;
    for (int i = 0; i < 30; ++i) ranked.push_back(i);
    rng.shuffle(ranked);
    std::unordered_set<std::int32_t> relevant;
    for (int i = 0; i < 6; ++i) {
      relevant.insert(static_cast<std::int32_t>(rng.uniform_int(30)));
    }
    double prev_recall = 0;
    for (int k = 1; k <= 30; ++k) {
      const double r = recall_at_k(ranked, relevant, k);
      const double n = ndcg_at_k(ranked, relevant, k);
      CHECK(r >= prev_recall - 1e-12);
      CHECK(r <= 1.0 + 1e-12);
      CHECK(n >= 0.0);
      CHECK(n <= 1.0 + 1e-12);
      prev_recall = r;
    }
    // Once k covers the whole list the ideal is saturated: full-list NDCG of a
    // ranking containing every relevant item is at least the value at any k
    // >= list length.
    CHECK(ndcg_at_k(ranked, relevant, 30) == ndcg_at_k(ranked, relevant, 60));
  }
}

TEST_CASE("single user and item give perfect metrics") {
  auto dataset = make_dataset({"u"}, {"i"}, {}, {}, {{"u", "i", std::nullopt}});
  MatF user_rows(1, 3), item_rows(1, 3);
  user_rows << 1, 0, 0;
  item_rows << 1, 0, 0;
  auto users = store_of(user_rows, {"u"}, EntityKind::kUser);
  auto items = store_of(item_rows, {"i"}, EntityKind::kItem);
  auto metrics = evaluate_all_rank(users, items, dataset, Split::kTest, {10, 20});
  CHECK(metrics.at("recall@10") == doctest::Approx(1.0));
  CHECK(metrics.at("ndcg@10") == doctest::Approx(1.0));
  CHECK(metrics.at("recall@20") == doctest::Approx(1.0));
}

TEST_CASE("train neighbors are excluded from the candidate ranking") {
  // The user's train item i0 scores highest; without exclusion it would
  // push the true test item off the top-1 slot.
  auto dataset = make_dataset({"u"}, {"i0", "i1", "i2"}, {{"u", "i0", std::nullopt}}, {},
                              {{"u", "i1", std::nullopt}});
  MatF user_rows(1, 2), item_rows(3, 2);
  user_rows << 1, 0;
  item_rows << 1.0f, 0.0f, 0.9f, 0.1f, 0.0f, 1.0f;
  auto users = store_of(user_rows, {"u"}, EntityKind::kUser);
  auto items = store_of(item_rows, {"i0", "i1", "i2"}, EntityKind::kItem);
  auto metrics = evaluate_all_rank(users, items, dataset, Split::kTest, {1});
  CHECK(metrics.at("recall@1") == doctest::Approx(1.0));
}

TEST_CASE("all-rank evaluation equals a brute-force oracle on a random instance") {
  Rng rng(11);
  const int user_count = 30, item_count = 40, dim = 6;
  std::vector<std::string> users_v, items_v;
  for (int u = 0; u < user_count; ++u) users_v.push_back("u" + std::to_string(u));
  for (int i = 0; i < item_count; ++i) items_v.push_back("i" + std::to_string(i));

  std::vector<RatedPair> train, test;
  for (int u = 0; u < user_count; ++u) {
    std::vector<std::int32_t> perm;
    for (int i = 0; i < item_count; ++i) perm.push_back(i);
    rng.shuffle(perm);
    const int n_train = 1 + static_cast<int>(rng.uniform_int(4));
    const int n_test = static_cast<int>(rng.uniform_int(4));  // may be zero: user skipped
    for (int j = 0; j < n_train; ++j) {
      train.push_back({users_v[static_cast<std::size_t>(u)],
                       items_v[static_cast<std::size_t>(perm[static_cast<std::size_t>(j)])],
                       std::nullopt});
    }
    for (int j = 0; j < n_test; ++j) {
      test.push_back({users_v[static_cast<std::size_t>(u)],
                      items_v[static_cast<std::size_t>(perm[static_cast<std::size_t>(n_train + j)])],
                      std::nullopt});
    }
  }
  auto dataset = make_dataset(users_v, items_v, train, {}, test);

  MatF user_rows(user_count, dim), item_rows(item_count, dim);
  for (int r = 0; r < user_count; ++r)
    for (int c = 0; c < dim; ++c) user_rows(r, c) = static_cast<float>(rng.uniform(-1, 1));
  for (int r = 0; r < item_count; ++r)
    for (int c = 0; c < dim; ++c) item_rows(r, c) = static_cast<float>(rng.uniform(-1, 1));
  auto users = store_of(user_rows, users_v, EntityKind::kUser);
  auto items = store_of(item_rows, items_v, EntityKind::kItem);

  for (ScoreKind kind : {ScoreKind::kCosine, ScoreKind::kDot}) {
    auto got = evaluate_all_rank(users, items, dataset, Split::kTest, {5, 10}, kind, 2);

    // Oracle: full sort per user in double precision, direct formulas.
    double sum_r5 = 0, sum_r10 = 0, sum_n5 = 0, sum_n10 = 0;
    int counted = 0;
    for (int u = 0; u < user_count; ++u) {
      std::unordered_set<std::int32_t> relevant;
      for (const auto& [tu, ti] : dataset.test) {
        if (tu == u) relevant.insert(ti);
      }
      if (relevant.empty()) continue;
      ++counted;
      std::vector<std::pair<double, std::string>> scored;
      for (int i = 0; i < item_count; ++i) {
        if (dataset.user_interacted(u, i)) continue;
        double dot = 0, nu = 0, ni = 0;
        for (int c = 0; c < dim; ++c) {
          dot += static_cast<double>(user_rows(u, c)) * item_rows(i, c);
          nu += static_cast<double>(user_rows(u, c)) * user_rows(u, c);
          ni += static_cast<double>(item_rows(i, c)) * item_rows(i, c);
        }
        const double score = kind == ScoreKind::kCosine ? dot / (std::sqrt(nu) * std::sqrt(ni)) : dot;
        scored.emplace_back(score, items_v[static_cast<std::size_t>(i)]);
      }
      std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      std::vector<std::int32_t> ranked;
      for (const auto& [score, id] : scored) ranked.push_back(dataset.item_index.at(id));
      sum_r5 += recall_at_k(ranked, relevant, 5);
      sum_r10 += recall_at_k(ranked, relevant, 10);
      sum_n5 += ndcg_at_k(ranked, relevant, 5);
      sum_n10 += ndcg_at_k(ranked, relevant, 10);
    }
    REQUIRE(counted > 0);
    CHECK(std::fabs(got.at("recall@5") - sum_r5 / counted) < 1e-12);
    CHECK(std::fabs(got.at("recall@10") - sum_r10 / counted) < 1e-12);
    CHECK(std::fabs(got.at("ndcg@5") - sum_n5 / counted) < 1e-12);
    CHECK(std::fabs(got.at("ndcg@10") - sum_n10 / counted) < 1e-12);
  }
}

TEST_CASE("multi-profile rounds average and t=1 equals a single pass") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.vocab = 32;
  cfg.max_len = 8;
  cfg.embed_dim = 8;
  auto params = init_encoder_params<float>(cfg, 9);
  Vocab vocab = Vocab::build({"apple banana cherry dates elderberry fig grape"}, 32);

  ProfileMap users, items;
  users.emplace("u0", ProfileSet{"u0", {"apple banana", "cherry dates", "fig"}});
  users.emplace("u1", ProfileSet{"u1", {"grape", "apple fig", "banana"}});
  items.emplace("i0", ProfileSet{"i0", {"apple", "dates", "grape fig"}});
  items.emplace("i1", ProfileSet{"i1", {"banana cherry", "fig fig", "apple dates"}});
  auto dataset = make_dataset({"u0", "u1"}, {"i0", "i1"},
                              {{"u0", "i0", std::nullopt}}, {},
                              {{"u0", "i1", std::nullopt}, {"u1", "i0", std::nullopt}});

  auto report1 = evaluate_multi_profile(params, vocab, users, items, dataset, Split::kTest,
                                        {1, 2}, 1, false, 1);
  REQUIRE(report1.rounds.size() == 1);
  EmbeddingStore u_store = embed_entities(params, vocab, dataset.users, users, 1,
                                          EntityKind::kUser, 1);
  EmbeddingStore i_store = embed_entities(params, vocab, dataset.items, items, 1,
                                          EntityKind::kItem, 1);
  auto direct = evaluate_all_rank(u_store, i_store, dataset, Split::kTest, {1, 2});
  for (const auto& [key, value] : direct) {
    CHECK(report1.rounds[0].at(key) == doctest::Approx(value).epsilon(1e-12));
    CHECK(report1.mean.at(key) == doctest::Approx(value).epsilon(1e-12));
  }

  auto report2 = evaluate_multi_profile(params, vocab, users, items, dataset, Split::kTest,
                                        {1, 2}, 2, false, 1);
  REQUIRE(report2.rounds.size() == 2);
  for (const auto& [key, value] : report2.mean) {
    CHECK(value ==
          doctest::Approx((report2.rounds[0].at(key) + report2.rounds[1].at(key)) / 2.0)
              .epsilon(1e-9));
  }

  // include_original prepends round 0.
  auto report3 = evaluate_multi_profile(params, vocab, users, items, dataset, Split::kTest,
                                        {1, 2}, 2, true, 1);
  CHECK(report3.rounds.size() == 3);

  // t beyond the available rewrites is rejected.
  CHECK_THROWS_AS(evaluate_multi_profile(params, vocab, users, items, dataset, Split::kTest,
                                         {1, 2}, 4, false, 1),
                  DataError);
}

TEST_CASE("identical profile text across rounds collapses to constant rounds") {
  EncoderConfig cfg;
  cfg.layers = 1;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.vocab = 16;
  cfg.max_len = 6;
  cfg.embed_dim = 8;
  auto params = init_encoder_params<float>(cfg, 10);
  Vocab vocab = Vocab::build({"same words here"}, 16);
  ProfileMap users, items;
  users.emplace("u", ProfileSet{"u", {"same", "same", "same"}});
  items.emplace("i", ProfileSet{"i", {"words", "words", "words"}});
  auto dataset = make_dataset({"u"}, {"i"}, {}, {}, {{"u", "i", std::nullopt}});
  auto report = evaluate_multi_profile(params, vocab, users, items, dataset, Split::kTest, {1},
                                       2, false, 1);
  REQUIRE(report.rounds.size() == 2);
  for (const auto& [key, value] : report.rounds[0]) {
    CHECK(report.rounds[1].at(key) == value);
    CHECK(report.mean.at(key) == value);
  }
}

TEST_CASE("metrics report serializes rounds and mean") {
  MetricsReport report;
  report.rounds = {{{"recall@10", 0.5}, {"ndcg@10", 0.25}},
                   {{"recall@10", 0.7}, {"ndcg@10", 0.35}}};
  report.compute_mean();
  CHECK(report.mean.at("recall@10") == doctest::Approx(0.6));
  const std::string text = report.to_json();
  MetricsReport parsed = MetricsReport::from_json(text);
  REQUIRE(parsed.rounds.size() == 2);
  CHECK(parsed.rounds[1].at("ndcg@10") == doctest::Approx(0.35));
  CHECK(parsed.mean.at("recall@10") == doctest::Approx(0.6));
}

TEST_SUITE_END();
