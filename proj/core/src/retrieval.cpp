#include "textrec/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "textrec/serialize.hpp"

namespace textrec {

namespace {
constexpr char kStoreMagic[4] = {'E', 'Z', 'E', 'M'};
constexpr std::uint32_t kStoreVersion = 1;
}  // namespace

std::int32_t EmbeddingStore::row_of(const std::string& id) const {
  auto it = index.find(id);
  if (it == index.end()) throw DataError("entity '" + id + "' not present in embedding store");
  return it->second;
}

void EmbeddingStore::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write embedding store: " + path);
  out.write(kStoreMagic, 4);
  write_u32(out, kStoreVersion);
  write_u8(out, static_cast<std::uint8_t>(kind));
  write_u32(out, static_cast<std::uint32_t>(rows.rows()));
  write_u32(out, static_cast<std::uint32_t>(rows.cols()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const auto& id = ids[static_cast<std::size_t>(r)];
    if (id.size() > UINT16_MAX) throw DataError("entity id too long: " + id);
    write_u16(out, static_cast<std::uint16_t>(id.size()));
    write_bytes(out, id.data(), id.size());
    for (Eigen::Index c = 0; c < rows.cols(); ++c) write_f32(out, rows(r, c));
  }
  if (!out) throw DataError("write failure on embedding store: " + path);
}

EmbeddingStore EmbeddingStore::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read embedding store: " + path);
  char magic[4];
  read_bytes(in, magic, 4);
  if (std::memcmp(magic, kStoreMagic, 4) != 0) throw DataError(path + ": not an EZEM file");
  std::uint32_t version = read_u32(in);
  if (version != kStoreVersion) {
    throw DataError(path + ": unsupported store version " + std::to_string(version));
  }
  EmbeddingStore store;
  store.kind = static_cast<EntityKind>(read_u8(in));
  const std::uint32_t count = read_u32(in);
  const std::uint32_t dim = read_u32(in);
  store.ids.resize(count);
  store.rows.resize(count, dim);
  for (std::uint32_t r = 0; r < count; ++r) {
    std::uint16_t id_len = read_u16(in);
    store.ids[r].resize(id_len);
    if (id_len > 0) read_bytes(in, store.ids[r].data(), id_len);
    if (!store.index.emplace(store.ids[r], static_cast<std::int32_t>(r)).second) {
      throw DataError(path + ": duplicate entity id '" + store.ids[r] + "'");
    }
    for (std::uint32_t c = 0; c < dim; ++c) store.rows(r, c) = read_f32(in);
  }
  return store;
}

template <typename S>
EmbeddingStore embed_entities(const EncoderParams<S>& params, const Vocab& vocab,
                              const std::vector<std::string>& order, const ProfileMap& profiles,
                              std::int32_t profile_index, EntityKind kind, int workers) {
  EmbeddingStore store;
  store.kind = kind;
  store.ids = order;
  store.rows.resize(static_cast<Eigen::Index>(order.size()), params.config.embed_dim);
  for (std::size_t i = 0; i < order.size(); ++i) {
    store.index.emplace(order[i], static_cast<std::int32_t>(i));
    auto it = profiles.find(order[i]);
    if (it == profiles.end()) throw DataError("entity '" + order[i] + "' has no profile set");
    if (profile_index < 0 ||
        profile_index >= static_cast<std::int32_t>(it->second.profiles.size())) {
      throw DataError("entity '" + order[i] + "' has no profile at index " +
                      std::to_string(profile_index));
    }
  }

  const auto encode_range = [&](std::size_t begin, std::size_t end) {
    constexpr std::size_t kChunk = 16;
    for (std::size_t start = begin; start < end; start += kChunk) {
      const std::size_t stop = std::min(end, start + kChunk);
      std::vector<TokenSequence> seqs;
      seqs.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        seqs.push_back(tokenize(profiles.at(order[i]).profiles[static_cast<std::size_t>(profile_index)],
                                vocab, params.config.max_len));
      }
      Mat<S> emb = encode(params, seqs);
      for (std::size_t i = start; i < stop; ++i) {
        store.rows.row(static_cast<Eigen::Index>(i)) =
            emb.row(static_cast<Eigen::Index>(i - start)).template cast<float>();
      }
    }
  };

  if (workers <= 1 || order.size() < 32) {
    encode_range(0, order.size());
  } else {
    const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(workers), order.size());
    std::vector<std::thread> pool;
    const std::size_t chunk = (order.size() + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(order.size(), begin + chunk);
      if (begin >= end) break;
      pool.emplace_back(encode_range, begin, end);
    }
    for (auto& th : pool) th.join();
  }
  return store;
}

double cosine_score(const Eigen::Ref<const Eigen::RowVectorXf>& u,
                    const Eigen::Ref<const Eigen::RowVectorXf>& v) {
  if (u.size() != v.size()) throw DataError("cosine: dimension mismatch");
  double dot = 0, nu = 0, nv = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double a = u(i), b = v(i);
    dot += a * b;
    nu += a * a;
    nv += b * b;
  }
  if (nu == 0.0 || nv == 0.0) throw NumericError("cosine undefined for zero-norm vector");
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

namespace {

RankedList top_k_by_cosine(const Eigen::RowVectorXf& user_row, const std::string& label,
                           std::int32_t k, const EmbeddingStore& items,
                           const std::unordered_set<std::string>& excluded_items) {
  if (k < 1) throw DataError("recommend: k must be >= 1");
  RankedList out;
  out.user_id = label;
  std::vector<std::pair<double, std::int32_t>> scored;
  scored.reserve(static_cast<std::size_t>(items.count()));
  for (std::int32_t r = 0; r < items.count(); ++r) {
    if (excluded_items.count(items.ids[static_cast<std::size_t>(r)])) continue;
    scored.emplace_back(cosine_score(user_row, items.rows.row(r)), r);
  }
  const auto better = [&items](const std::pair<double, std::int32_t>& a,
                               const std::pair<double, std::int32_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return items.ids[static_cast<std::size_t>(a.second)] <
           items.ids[static_cast<std::size_t>(b.second)];
  };
  const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep),
                    scored.end(), better);
  out.items.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    out.items.push_back({items.ids[static_cast<std::size_t>(scored[i].second)], scored[i].first});
  }
  return out;
}

}  // namespace

RankedList recommend(const std::string& user_id, std::int32_t k, const EmbeddingStore& users,
                     const EmbeddingStore& items,
                     const std::unordered_set<std::string>& excluded_items) {
  const std::int32_t row = users.row_of(user_id);
  Eigen::RowVectorXf user_row = users.rows.row(row);
  return top_k_by_cosine(user_row, user_id, k, items, excluded_items);
}

RankedList recommend_vector(const Eigen::RowVectorXf& user_row, const std::string& label,
                            std::int32_t k, const EmbeddingStore& items,
                            const std::unordered_set<std::string>& excluded_items) {
  return top_k_by_cosine(user_row, label, k, items, excluded_items);
}

template EmbeddingStore embed_entities<float>(const EncoderParams<float>&, const Vocab&,
                                              const std::vector<std::string>&, const ProfileMap&,
                                              std::int32_t, EntityKind, int);
template EmbeddingStore embed_entities<double>(const EncoderParams<double>&, const Vocab&,
                                               const std::vector<std::string>&, const ProfileMap&,
                                               std::int32_t, EntityKind, int);

}  // namespace textrec
