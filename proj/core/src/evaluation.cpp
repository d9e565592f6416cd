#include "textrec/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include <nlohmann/json.hpp>

namespace textrec {

using nlohmann::json;

std::string metric_key(const std::string& metric, std::int32_t n) {
  return metric + "@" + std::to_string(n);
}

void MetricsReport::compute_mean() {
  mean.clear();
  if (rounds.empty()) return;
  for (const auto& [key, value] : rounds.front()) {
    double sum = 0;
    for (const auto& round : rounds) {
      auto it = round.find(key);
      if (it == round.end()) throw DataError("metric key '" + key + "' missing from a round");
      sum += it->second;
    }
    mean[key] = sum / static_cast<double>(rounds.size());
  }
}

std::string MetricsReport::to_json() const {
  json obj;
  obj["rounds"] = json::array();
  for (const auto& round : rounds) obj["rounds"].push_back(round);
  obj["mean"] = mean;
  return obj.dump();
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.is_object() || !obj.contains("rounds") || !obj.contains("mean")) {
    throw DataError("malformed metrics report JSON");
  }
  MetricsReport report;
  for (const auto& round : obj["rounds"]) {
    report.rounds.push_back(round.get<std::map<std::string, double>>());
  }
  report.mean = obj["mean"].get<std::map<std::string, double>>();
  return report;
}

double recall_at_k(const std::vector<std::int32_t>& ranked,
                   const std::unordered_set<std::int32_t>& relevant, std::int32_t k) {
  if (relevant.empty()) throw DataError("recall_at_k: empty relevant set");
  std::int64_t hits = 0;
  const std::size_t limit = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < limit; ++r) {
    if (relevant.count(ranked[r])) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

double ndcg_at_k(const std::vector<std::int32_t>& ranked,
                 const std::unordered_set<std::int32_t>& relevant, std::int32_t k) {
  if (relevant.empty()) throw DataError("ndcg_at_k: empty relevant set");
  double dcg = 0;
  const std::size_t limit = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(k));
  for (std::size_t r = 0; r < limit; ++r) {
    if (relevant.count(ranked[r])) dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  }
  double idcg = 0;
  const std::size_t ideal =
      std::min<std::size_t>(static_cast<std::size_t>(k), relevant.size());
  for (std::size_t r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
  return dcg / idcg;
}

std::map<std::string, double> evaluate_all_rank(const EmbeddingStore& users,
                                                const EmbeddingStore& items,
                                                const InteractionDataset& dataset, Split split,
                                                const std::vector<std::int32_t>& n_list,
                                                ScoreKind score_kind, int workers) {
  const auto& pairs = dataset.split(split);

  // Relevant sets per user index.
  std::vector<std::unordered_set<std::int32_t>> relevant(dataset.users.size());
  for (const auto& [u, i] : pairs) relevant[static_cast<std::size_t>(u)].insert(i);

  std::vector<std::int32_t> eval_users;
  for (std::size_t u = 0; u < dataset.users.size(); ++u) {
    if (!relevant[u].empty()) eval_users.push_back(static_cast<std::int32_t>(u));
  }
  std::map<std::string, double> result;
  if (eval_users.empty()) {
    for (auto n : n_list) {
      result[metric_key("recall", n)] = 0.0;
      result[metric_key("ndcg", n)] = 0.0;
    }
    return result;
  }

  // Store rows for every dataset entity, resolved once.
  std::vector<std::int32_t> user_rows(dataset.users.size(), -1);
  for (auto u : eval_users) {
    user_rows[static_cast<std::size_t>(u)] = users.row_of(dataset.users[static_cast<std::size_t>(u)]);
  }
  std::vector<std::int32_t> item_rows(dataset.items.size());
  for (std::size_t i = 0; i < dataset.items.size(); ++i) item_rows[i] = items.row_of(dataset.items[i]);

  // Pre-normalize item rows once for cosine scoring.
  std::vector<double> item_inv_norm;
  if (score_kind == ScoreKind::kCosine) {
    item_inv_norm.resize(dataset.items.size());
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
      const double norm = items.rows.row(item_rows[i]).template cast<double>().norm();
      if (norm == 0.0) throw NumericError("zero-norm item row for '" + dataset.items[i] + "'");
      item_inv_norm[i] = 1.0 / norm;
    }
  }

  // per eval-user, per metric key, value; reduced in user order afterwards.
  std::vector<std::vector<double>> per_user(eval_users.size());

  auto eval_range = [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, std::int32_t>> scored;
    for (std::size_t idx = begin; idx < end; ++idx) {
      const std::int32_t u = eval_users[idx];
      const auto& exclude = dataset.user_neighbors[static_cast<std::size_t>(u)];
      Eigen::VectorXd user_vec =
          users.rows.row(user_rows[static_cast<std::size_t>(u)]).transpose().cast<double>();
      if (score_kind == ScoreKind::kCosine) {
        const double norm = user_vec.norm();
        if (norm == 0.0) {
          throw NumericError("zero-norm user row for '" +
                             dataset.users[static_cast<std::size_t>(u)] + "'");
        }
        user_vec /= norm;
      }
      scored.clear();
      for (std::size_t i = 0; i < dataset.items.size(); ++i) {
        const std::int32_t item = static_cast<std::int32_t>(i);
        if (std::binary_search(exclude.begin(), exclude.end(), item)) continue;
        double score = items.rows.row(item_rows[i]).template cast<double>().dot(user_vec);
        if (score_kind == ScoreKind::kCosine) score *= item_inv_norm[i];
        scored.emplace_back(score, item);
      }
      std::sort(scored.begin(), scored.end(),
                [&dataset](const std::pair<double, std::int32_t>& a,
                           const std::pair<double, std::int32_t>& b) {
                  if (a.first != b.first) return a.first > b.first;
                  return dataset.items[static_cast<std::size_t>(a.second)] <
                         dataset.items[static_cast<std::size_t>(b.second)];
                });
      std::vector<std::int32_t> ranked;
      ranked.reserve(scored.size());
      for (const auto& [score, item] : scored) ranked.push_back(item);

      const auto& rel = relevant[static_cast<std::size_t>(u)];
      std::vector<double> metrics;
      metrics.reserve(n_list.size() * 2);
      for (auto n : n_list) {
        metrics.push_back(recall_at_k(ranked, rel, n));
        metrics.push_back(ndcg_at_k(ranked, rel, n));
      }
      per_user[idx] = std::move(metrics);
    }
  };

  if (workers <= 1 || eval_users.size() < 16) {
    eval_range(0, eval_users.size());
  } else {
    const std::size_t n_threads =
        std::min<std::size_t>(static_cast<std::size_t>(workers), eval_users.size());
    const std::size_t chunk = (eval_users.size() + n_threads - 1) / n_threads;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(eval_users.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(eval_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }

  // Fixed reduction order: user index, then metric.
  std::vector<double> sums(n_list.size() * 2, 0.0);
  for (const auto& metrics : per_user) {
    for (std::size_t m = 0; m < sums.size(); ++m) sums[m] += metrics[m];
  }
  for (std::size_t ni = 0; ni < n_list.size(); ++ni) {
    result[metric_key("recall", n_list[ni])] =
        sums[2 * ni] / static_cast<double>(eval_users.size());
    result[metric_key("ndcg", n_list[ni])] =
        sums[2 * ni + 1] / static_cast<double>(eval_users.size());
  }
  return result;
}

template <typename S>
MetricsReport evaluate_multi_profile(const EncoderParams<S>& params, const Vocab& vocab,
                                     const ProfileMap& user_profiles,
                                     const ProfileMap& item_profiles,
                                     const InteractionDataset& dataset, Split split,
                                     const std::vector<std::int32_t>& n_list, std::int32_t t,
                                     bool include_original, int workers) {
  if (t < 0) throw DataError("evaluate_multi_profile: t must be >= 0");
  std::vector<std::int32_t> round_indices;
  if (include_original || t == 0) round_indices.push_back(0);
  for (std::int32_t j = 1; j <= t; ++j) round_indices.push_back(j);

  MetricsReport report;
  report.n_list = n_list;
  for (auto j : round_indices) {
    EmbeddingStore user_store = embed_entities(params, vocab, dataset.users, user_profiles, j,
                                               EntityKind::kUser, workers);
    EmbeddingStore item_store = embed_entities(params, vocab, dataset.items, item_profiles, j,
                                               EntityKind::kItem, workers);
    report.rounds.push_back(evaluate_all_rank(user_store, item_store, dataset, split, n_list,
                                              ScoreKind::kCosine, workers));
  }
  report.compute_mean();
  return report;
}

template MetricsReport evaluate_multi_profile<float>(const EncoderParams<float>&, const Vocab&,
                                                     const ProfileMap&, const ProfileMap&,
                                                     const InteractionDataset&, Split,
                                                     const std::vector<std::int32_t>&,
                                                     std::int32_t, bool, int);
template MetricsReport evaluate_multi_profile<double>(const EncoderParams<double>&, const Vocab&,
                                                      const ProfileMap&, const ProfileMap&,
                                                      const InteractionDataset&, Split,
                                                      const std::vector<std::int32_t>&,
                                                      std::int32_t, bool, int);

}  // namespace textrec
