#include "textrec/cf.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "textrec/rng.hpp"
#include "textrec/serialize.hpp"
#include "textrec/training.hpp"

namespace textrec {

using nlohmann::json;

CfBackbone cf_backbone_from_string(const std::string& name) {
  if (name == "lightgcn") return CfBackbone::kLightGcn;
  if (name == "gccf") return CfBackbone::kGccf;
  throw DataError("unknown CF backbone '" + name + "'");
}

std::string cf_backbone_to_string(CfBackbone backbone) {
  return backbone == CfBackbone::kLightGcn ? "lightgcn" : "gccf";
}

void CfConfig::validate() const {
  if (dim < 1) throw DataError("cf dim must be >= 1");
  if (layers < 0) throw DataError("cf layers must be >= 0");
  if (learning_rate <= 0) throw DataError("cf learning rate must be > 0");
  if (batch_size < 1) throw DataError("cf batch size must be >= 1");
  if (epochs < 1 && max_steps < 1) throw DataError("cf epochs or max_steps must be positive");
  if (eval_interval < 1) throw DataError("cf eval interval must be >= 1");
  if (align_weight < 0) throw DataError("cf align weight must be >= 0");
  if (align_tau <= 0) throw DataError("cf align tau must be > 0");
}

MatD NormalizedAdjacency::multiply(const MatD& x) const {
  MatD y = MatD::Zero(x.rows(), x.cols());
  for (std::int32_t r = 0; r < node_count(); ++r) {
    for (std::int64_t e = row_ptr[static_cast<std::size_t>(r)];
         e < row_ptr[static_cast<std::size_t>(r) + 1]; ++e) {
      y.row(r) += value[static_cast<std::size_t>(e)] * x.row(col[static_cast<std::size_t>(e)]);
    }
  }
  return y;
}

NormalizedAdjacency build_norm_adj(const InteractionDataset& dataset, bool allow_isolated) {
  if (dataset.train.empty()) throw DataError("build_norm_adj: train split is empty");
  NormalizedAdjacency adj;
  adj.user_count = static_cast<std::int32_t>(dataset.users.size());
  adj.item_count = static_cast<std::int32_t>(dataset.items.size());

  if (!allow_isolated) {
    for (std::size_t u = 0; u < dataset.users.size(); ++u) {
      if (dataset.user_neighbors[u].empty()) {
        throw DataError("zero-degree user '" + dataset.users[u] + "' in train split");
      }
    }
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
      if (dataset.item_neighbors[i].empty()) {
        throw DataError("zero-degree item '" + dataset.items[i] + "' in train split");
      }
    }
  }

  adj.row_ptr.assign(static_cast<std::size_t>(adj.node_count()) + 1, 0);
  for (std::int32_t u = 0; u < adj.user_count; ++u) {
    adj.row_ptr[static_cast<std::size_t>(u) + 1] =
        static_cast<std::int64_t>(dataset.user_neighbors[static_cast<std::size_t>(u)].size());
  }
  for (std::int32_t i = 0; i < adj.item_count; ++i) {
    adj.row_ptr[static_cast<std::size_t>(adj.user_count + i) + 1] =
        static_cast<std::int64_t>(dataset.item_neighbors[static_cast<std::size_t>(i)].size());
  }
  for (std::size_t r = 1; r < adj.row_ptr.size(); ++r) adj.row_ptr[r] += adj.row_ptr[r - 1];
  adj.col.resize(static_cast<std::size_t>(adj.row_ptr.back()));
  adj.value.resize(adj.col.size());

  auto degree_u = [&](std::int32_t u) {
    return static_cast<double>(dataset.user_neighbors[static_cast<std::size_t>(u)].size());
  };
  auto degree_i = [&](std::int32_t i) {
    return static_cast<double>(dataset.item_neighbors[static_cast<std::size_t>(i)].size());
  };

  // Neighbor lists are sorted, so the edge ordering is deterministic.
  for (std::int32_t u = 0; u < adj.user_count; ++u) {
    std::int64_t cursor = adj.row_ptr[static_cast<std::size_t>(u)];
    for (std::int32_t i : dataset.user_neighbors[static_cast<std::size_t>(u)]) {
      adj.col[static_cast<std::size_t>(cursor)] = adj.user_count + i;
      adj.value[static_cast<std::size_t>(cursor)] = 1.0 / std::sqrt(degree_u(u) * degree_i(i));
      ++cursor;
    }
  }
  for (std::int32_t i = 0; i < adj.item_count; ++i) {
    std::int64_t cursor = adj.row_ptr[static_cast<std::size_t>(adj.user_count + i)];
    for (std::int32_t u : dataset.item_neighbors[static_cast<std::size_t>(i)]) {
      adj.col[static_cast<std::size_t>(cursor)] = u;
      adj.value[static_cast<std::size_t>(cursor)] = 1.0 / std::sqrt(degree_u(u) * degree_i(i));
      ++cursor;
    }
  }
  return adj;
}

std::vector<std::pair<std::string, MatD*>> CfModel::named_tensors() {
  std::vector<std::pair<std::string, MatD*>> out;
  out.emplace_back("user_table", &user_table);
  out.emplace_back("item_table", &item_table);
  if (config.backbone == CfBackbone::kGccf) out.emplace_back("concat_proj", &concat_proj);
  if (align_proj.size() > 0) out.emplace_back("align_proj", &align_proj);
  return out;
}

void CfModel::save(const std::string& path) const {
  json cfg;
  cfg["kind"] = "cf";
  cfg["backbone"] = cf_backbone_to_string(config.backbone);
  cfg["dim"] = config.dim;
  cfg["layers"] = config.layers;
  cfg["users"] = static_cast<std::int64_t>(user_table.rows());
  cfg["items"] = static_cast<std::int64_t>(item_table.rows());
  cfg["text_dim"] = static_cast<std::int64_t>(align_proj.rows());
  TensorFile file;
  file.config_json = cfg.dump();
  for (const auto& [name, tensor] : const_cast<CfModel*>(this)->named_tensors()) {
    NamedTensor nt;
    nt.name = name;
    nt.dims = {static_cast<std::uint32_t>(tensor->rows()),
               static_cast<std::uint32_t>(tensor->cols())};
    nt.data.resize(static_cast<std::size_t>(tensor->size()));
    Eigen::Map<MatF>(nt.data.data(), tensor->rows(), tensor->cols()) = tensor->cast<float>();
    file.tensors.push_back(std::move(nt));
  }
  write_tensor_file(path, file);
}

CfModel CfModel::load(const std::string& path) {
  TensorFile file = read_tensor_file(path);
  json cfg = json::parse(file.config_json, nullptr, false);
  if (cfg.is_discarded() || cfg.value("kind", "") != "cf") {
    throw DataError(path + ": not a CF checkpoint");
  }
  CfModel model;
  model.config.backbone = cf_backbone_from_string(cfg.at("backbone").get<std::string>());
  model.config.dim = cfg.at("dim").get<std::int32_t>();
  model.config.layers = cfg.at("layers").get<std::int32_t>();
  const auto users = cfg.at("users").get<std::int64_t>();
  const auto items = cfg.at("items").get<std::int64_t>();
  const auto text_dim = cfg.at("text_dim").get<std::int64_t>();
  model.user_table.resize(users, model.config.dim);
  model.item_table.resize(items, model.config.dim);
  if (model.config.backbone == CfBackbone::kGccf) {
    model.concat_proj.resize(static_cast<Eigen::Index>(model.config.layers + 1) * model.config.dim,
                             model.config.dim);
  }
  if (text_dim > 0) model.align_proj.resize(text_dim, model.config.dim);
  for (auto& [name, tensor] : model.named_tensors()) {
    const NamedTensor& nt = file.find(name);
    if (nt.dims.size() != 2 || static_cast<Eigen::Index>(nt.dims[0]) != tensor->rows() ||
        static_cast<Eigen::Index>(nt.dims[1]) != tensor->cols()) {
      throw DataError(path + ": tensor '" + name + "' has unexpected shape");
    }
    *tensor = Eigen::Map<const MatF>(nt.data.data(), tensor->rows(), tensor->cols()).cast<double>();
  }
  return model;
}

CfModel init_cf_model(const CfConfig& config, std::int32_t user_count, std::int32_t item_count,
                      std::int32_t text_dim, std::uint64_t seed) {
  config.validate();
  CfModel model;
  model.config = config;
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(config.dim));
  auto fill = [&rng](MatD& m, double s) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.uniform(-s, s);
    }
  };
  model.user_table.resize(user_count, config.dim);
  model.item_table.resize(item_count, config.dim);
  fill(model.user_table, scale);
  fill(model.item_table, scale);
  if (config.backbone == CfBackbone::kGccf) {
    const Eigen::Index concat_dim = static_cast<Eigen::Index>(config.layers + 1) * config.dim;
    model.concat_proj.resize(concat_dim, config.dim);
    fill(model.concat_proj, 1.0 / std::sqrt(static_cast<double>(concat_dim)));
  }
  if (config.align_weight > 0) {
    if (text_dim < 1) throw DataError("alignment enabled but no text embedding dimension");
    model.align_proj.resize(text_dim, config.dim);
    fill(model.align_proj, 1.0 / std::sqrt(static_cast<double>(text_dim)));
  }
  return model;
}

Propagated propagate(const CfModel& model, const NormalizedAdjacency& adj) {
  if (model.user_table.rows() != adj.user_count || model.item_table.rows() != adj.item_count) {
    throw DataError("propagate: model tables do not match adjacency");
  }
  const std::int32_t layers = model.config.layers;
  Propagated out;
  out.states.reserve(static_cast<std::size_t>(layers) + 1);
  MatD state(adj.node_count(), model.config.dim);
  state.topRows(adj.user_count) = model.user_table;
  state.bottomRows(adj.item_count) = model.item_table;
  out.states.push_back(state);
  for (std::int32_t l = 0; l < layers; ++l) {
    state = adj.multiply(state);
    out.states.push_back(state);
  }

  MatD final_state;
  if (model.config.backbone == CfBackbone::kLightGcn) {
    final_state = MatD::Zero(adj.node_count(), model.config.dim);
    for (const auto& s : out.states) final_state += s;
    final_state /= static_cast<double>(out.states.size());
  } else {
    MatD concat(adj.node_count(), static_cast<Eigen::Index>(out.states.size()) * model.config.dim);
    for (std::size_t l = 0; l < out.states.size(); ++l) {
      concat.middleCols(static_cast<Eigen::Index>(l) * model.config.dim, model.config.dim) =
          out.states[l];
    }
    final_state = concat * model.concat_proj;
  }
  out.user_final = final_state.topRows(adj.user_count);
  out.item_final = final_state.bottomRows(adj.item_count);
  return out;
}

void propagate_backward(const CfModel& model, const NormalizedAdjacency& adj,
                        const Propagated& forward, const MatD& d_user_final,
                        const MatD& d_item_final, MatD& d_user_table, MatD& d_item_table,
                        MatD* d_concat_proj) {
  const std::int32_t layers = model.config.layers;
  MatD d_final(adj.node_count(), model.config.dim);
  d_final.topRows(adj.user_count) = d_user_final;
  d_final.bottomRows(adj.item_count) = d_item_final;

  // Per-layer upstream gradients d_l with E^l = A^l E^0; Horner accumulation
  // dE0 = d_0 + A (d_1 + A (d_2 + ...)) using the symmetry of A.
  std::vector<MatD> d_layers(static_cast<std::size_t>(layers) + 1);
  if (model.config.backbone == CfBackbone::kLightGcn) {
    const double inv = 1.0 / static_cast<double>(layers + 1);
    for (auto& d : d_layers) d = d_final * inv;
  } else {
    MatD concat(adj.node_count(), static_cast<Eigen::Index>(forward.states.size()) * model.config.dim);
    for (std::size_t l = 0; l < forward.states.size(); ++l) {
      concat.middleCols(static_cast<Eigen::Index>(l) * model.config.dim, model.config.dim) =
          forward.states[l];
    }
    if (d_concat_proj) *d_concat_proj += concat.transpose() * d_final;
    MatD d_concat = d_final * model.concat_proj.transpose();
    for (std::size_t l = 0; l < d_layers.size(); ++l) {
      d_layers[l] = d_concat.middleCols(static_cast<Eigen::Index>(l) * model.config.dim,
                                        model.config.dim);
    }
  }

  MatD acc = d_layers[static_cast<std::size_t>(layers)];
  for (std::int32_t l = layers - 1; l >= 0; --l) {
    acc = adj.multiply(acc);
    acc += d_layers[static_cast<std::size_t>(l)];
  }
  d_user_table += acc.topRows(adj.user_count);
  d_item_table += acc.bottomRows(adj.item_count);
}

AlignmentResult alignment_loss(const MatD& cf_rows, const MatD& text_rows, const MatD& proj,
                               double tau, bool with_grad) {
  if (cf_rows.rows() != text_rows.rows() || cf_rows.rows() == 0) {
    throw DataError("alignment_loss: batch size mismatch");
  }
  if (text_rows.cols() != proj.rows() || proj.cols() != cf_rows.cols()) {
    throw DataError("alignment_loss: projection shape mismatch");
  }
  const Eigen::Index b_count = cf_rows.rows();
  const double inv_tau = 1.0 / tau;

  MatD projected = text_rows * proj;
  MatD t_unit(b_count, proj.cols());
  MatD c_unit(b_count, cf_rows.cols());
  Eigen::VectorXd t_norm(b_count), c_norm(b_count);
  for (Eigen::Index r = 0; r < b_count; ++r) {
    const double tn = projected.row(r).norm();
    const double cn = cf_rows.row(r).norm();
    if (tn == 0 || cn == 0) throw NumericError("alignment_loss: zero-norm row");
    t_norm(r) = tn;
    c_norm(r) = cn;
    t_unit.row(r) = projected.row(r) / tn;
    c_unit.row(r) = cf_rows.row(r) / cn;
  }

  MatD logits = t_unit * c_unit.transpose() * inv_tau;

  // Row-direction softmax (text -> cf) and column-direction (cf -> text).
  double loss = 0;
  MatD d_logits;
  if (with_grad) d_logits = MatD::Zero(b_count, b_count);
  for (Eigen::Index r = 0; r < b_count; ++r) {
    const double max_row = logits.row(r).maxCoeff();
    double sum = 0;
    for (Eigen::Index c2 = 0; c2 < b_count; ++c2) sum += std::exp(logits(r, c2) - max_row);
    const double lse = max_row + std::log(sum);
    loss += lse - logits(r, r);
    if (with_grad) {
      for (Eigen::Index c2 = 0; c2 < b_count; ++c2) {
        d_logits(r, c2) += std::exp(logits(r, c2) - lse);
      }
      d_logits(r, r) -= 1.0;
    }
  }
  for (Eigen::Index c2 = 0; c2 < b_count; ++c2) {
    double max_col = logits(0, c2);
    for (Eigen::Index r = 0; r < b_count; ++r) max_col = std::max(max_col, logits(r, c2));
    double sum = 0;
    for (Eigen::Index r = 0; r < b_count; ++r) sum += std::exp(logits(r, c2) - max_col);
    const double lse = max_col + std::log(sum);
    loss += lse - logits(c2, c2);
    if (with_grad) {
      for (Eigen::Index r = 0; r < b_count; ++r) {
        d_logits(r, c2) += std::exp(logits(r, c2) - lse);
      }
      d_logits(c2, c2) -= 1.0;
    }
  }

  AlignmentResult out;
  out.value = loss / (2.0 * static_cast<double>(b_count));
  if (!with_grad) return out;

  d_logits *= inv_tau / (2.0 * static_cast<double>(b_count));
  MatD d_t_unit = d_logits * c_unit;
  MatD d_c_unit = d_logits.transpose() * t_unit;
  out.d_cf.setZero(cf_rows.rows(), cf_rows.cols());
  MatD d_projected(b_count, proj.cols());
  for (Eigen::Index r = 0; r < b_count; ++r) {
    const double t_dot = d_t_unit.row(r).dot(t_unit.row(r));
    d_projected.row(r) = (d_t_unit.row(r) - t_dot * t_unit.row(r)) / t_norm(r);
    const double c_dot = d_c_unit.row(r).dot(c_unit.row(r));
    out.d_cf.row(r) = (d_c_unit.row(r) - c_dot * c_unit.row(r)) / c_norm(r);
  }
  out.d_proj = text_rows.transpose() * d_projected;
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::pair<std::string, std::int32_t> parse_metric(const std::string& name) {
  auto at = name.find('@');
  if (at == std::string::npos) throw DataError("selection metric must look like recall@20");
  return {name.substr(0, at), std::stoi(name.substr(at + 1))};
}

EmbeddingStore store_from_rows(const MatD& rows, const std::vector<std::string>& ids,
                               EntityKind kind) {
  EmbeddingStore store;
  store.kind = kind;
  store.ids = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    store.index.emplace(ids[i], static_cast<std::int32_t>(i));
  }
  store.rows = rows.cast<float>();
  return store;
}

}  // namespace

CfTrainOutcome train_cf(const InteractionDataset& dataset, const CfConfig& config,
                        const EmbeddingStore* text_users, const EmbeddingStore* text_items,
                        int workers) {
  config.validate();
  if (dataset.train.empty()) throw DataError("train split is empty");
  if (dataset.val.empty()) throw DataError("validation split is empty");
  const bool align = config.align_weight > 0;
  if (align && (!text_users || !text_items)) {
    throw DataError("alignment enabled but text stores are missing");
  }

  NormalizedAdjacency adj = build_norm_adj(dataset, config.drop_isolated);
  std::int32_t text_dim = 0;
  MatD text_user_rows, text_item_rows;
  if (align) {
    text_dim = text_users->dim();
    if (text_items->dim() != text_dim) throw DataError("text store dimensions differ");
    text_user_rows.resize(static_cast<Eigen::Index>(dataset.users.size()), text_dim);
    for (std::size_t u = 0; u < dataset.users.size(); ++u) {
      text_user_rows.row(static_cast<Eigen::Index>(u)) =
          text_users->rows.row(text_users->row_of(dataset.users[u])).cast<double>();
    }
    text_item_rows.resize(static_cast<Eigen::Index>(dataset.items.size()), text_dim);
    for (std::size_t i = 0; i < dataset.items.size(); ++i) {
      text_item_rows.row(static_cast<Eigen::Index>(i)) =
          text_items->rows.row(text_items->row_of(dataset.items[i])).cast<double>();
    }
  }

  CfModel model = init_cf_model(config, adj.user_count, adj.item_count, text_dim, config.seed);
  auto params = model.named_tensors();
  std::vector<MatD> grad_store;
  grad_store.reserve(params.size());
  for (auto& [name, p] : params) grad_store.emplace_back(MatD::Zero(p->rows(), p->cols()));
  std::vector<std::pair<std::string, MatD*>> grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    grads.emplace_back(params[i].first, &grad_store[i]);
  }
  MatD* d_user_table = grads[0].second;
  MatD* d_item_table = grads[1].second;
  MatD* d_concat = nullptr;
  MatD* d_align = nullptr;
  for (auto& [name, g] : grads) {
    if (name == "concat_proj") d_concat = g;
    if (name == "align_proj") d_align = g;
  }

  AdamOptimizer<double> adam(config.learning_rate);
  Rng rng(derive_seed(config.seed, "cf-sample"));

  auto [sel_metric, sel_n] = parse_metric(config.selection_metric);
  std::vector<std::int32_t> n_list = {5, 10, 20};
  if (std::find(n_list.begin(), n_list.end(), sel_n) == n_list.end()) n_list.push_back(sel_n);

  const std::int64_t steps_per_epoch = std::max<std::int64_t>(
      1, (static_cast<std::int64_t>(dataset.train.size()) + config.batch_size - 1) /
             config.batch_size);
  std::int64_t total_steps = steps_per_epoch * config.epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  CfTrainOutcome outcome;
  outcome.total_steps = total_steps;

  auto run_validation = [&](std::int64_t step) {
    Propagated prop = propagate(model, adj);
    EmbeddingStore users = store_from_rows(prop.user_final, dataset.users, EntityKind::kUser);
    EmbeddingStore items = store_from_rows(prop.item_final, dataset.items, EntityKind::kItem);
    auto metrics =
        evaluate_all_rank(users, items, dataset, Split::kVal, n_list, ScoreKind::kDot, workers);
    const double value = metrics.at(metric_key(sel_metric, sel_n));
    if (value > outcome.best_metric) {
      outcome.best_metric = value;
      outcome.best_step = step;
      outcome.best_model = model;
      outcome.best_val_metrics = metrics;
    }
  };

  const std::size_t item_count = dataset.items.size();
  for (std::int64_t step = 1; step <= total_steps; ++step) {
    Propagated prop = propagate(model, adj);

    std::vector<std::int32_t> users_b, pos_b, neg_b;
    users_b.reserve(static_cast<std::size_t>(config.batch_size));
    for (std::int32_t b = 0; b < config.batch_size; ++b) {
      const auto& [u, i] =
          dataset.train[static_cast<std::size_t>(rng.uniform_int(dataset.train.size()))];
      if (dataset.user_neighbors[static_cast<std::size_t>(u)].size() >= item_count) {
        throw DataError("user '" + dataset.users[static_cast<std::size_t>(u)] +
                        "' interacts with every item; no negative exists");
      }
      std::int32_t neg = -1;
      for (int attempt = 0; attempt < 10000; ++attempt) {
        const auto candidate = static_cast<std::int32_t>(rng.uniform_int(item_count));
        if (!dataset.user_interacted(u, candidate)) {
          neg = candidate;
          break;
        }
      }
      if (neg < 0) throw DataError("negative sampling exhausted retries");
      users_b.push_back(u);
      pos_b.push_back(i);
      neg_b.push_back(neg);
    }

    MatD d_user_final = MatD::Zero(adj.user_count, config.dim);
    MatD d_item_final = MatD::Zero(adj.item_count, config.dim);

    // BPR over dot-product scores of propagated embeddings.
    double bpr = 0;
    const double inv_b = 1.0 / static_cast<double>(config.batch_size);
    for (std::int32_t b = 0; b < config.batch_size; ++b) {
      const auto u = users_b[static_cast<std::size_t>(b)];
      const auto ip = pos_b[static_cast<std::size_t>(b)];
      const auto in = neg_b[static_cast<std::size_t>(b)];
      const double x = prop.user_final.row(u).dot(prop.item_final.row(ip)) -
                       prop.user_final.row(u).dot(prop.item_final.row(in));
      bpr += x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
      const double dx = (1.0 / (1.0 + std::exp(-x)) - 1.0) * inv_b;
      d_user_final.row(u) += dx * (prop.item_final.row(ip) - prop.item_final.row(in));
      d_item_final.row(ip) += dx * prop.user_final.row(u);
      d_item_final.row(in) -= dx * prop.user_final.row(u);
    }
    bpr *= inv_b;
    double align_value = 0;

    if (align) {
      // Unique batch entities; alignment pulls matching text/CF rows together.
      std::vector<std::int32_t> uniq_users = users_b, uniq_items = pos_b;
      std::sort(uniq_users.begin(), uniq_users.end());
      uniq_users.erase(std::unique(uniq_users.begin(), uniq_users.end()), uniq_users.end());
      std::sort(uniq_items.begin(), uniq_items.end());
      uniq_items.erase(std::unique(uniq_items.begin(), uniq_items.end()), uniq_items.end());

      MatD cf_u(static_cast<Eigen::Index>(uniq_users.size()), config.dim);
      MatD tx_u(static_cast<Eigen::Index>(uniq_users.size()), text_dim);
      for (std::size_t r = 0; r < uniq_users.size(); ++r) {
        cf_u.row(static_cast<Eigen::Index>(r)) = prop.user_final.row(uniq_users[r]);
        tx_u.row(static_cast<Eigen::Index>(r)) = text_user_rows.row(uniq_users[r]);
      }
      MatD cf_i(static_cast<Eigen::Index>(uniq_items.size()), config.dim);
      MatD tx_i(static_cast<Eigen::Index>(uniq_items.size()), text_dim);
      for (std::size_t r = 0; r < uniq_items.size(); ++r) {
        cf_i.row(static_cast<Eigen::Index>(r)) = prop.item_final.row(uniq_items[r]);
        tx_i.row(static_cast<Eigen::Index>(r)) = text_item_rows.row(uniq_items[r]);
      }

      AlignmentResult align_u = alignment_loss(cf_u, tx_u, model.align_proj, config.align_tau);
      AlignmentResult align_i = alignment_loss(cf_i, tx_i, model.align_proj, config.align_tau);
      align_value = 0.5 * (align_u.value + align_i.value);
      const double w = 0.5 * config.align_weight;
      for (std::size_t r = 0; r < uniq_users.size(); ++r) {
        d_user_final.row(uniq_users[r]) += w * align_u.d_cf.row(static_cast<Eigen::Index>(r));
      }
      for (std::size_t r = 0; r < uniq_items.size(); ++r) {
        d_item_final.row(uniq_items[r]) += w * align_i.d_cf.row(static_cast<Eigen::Index>(r));
      }
      *d_align += w * (align_u.d_proj + align_i.d_proj);
    }

    const double total_loss = bpr + config.align_weight * align_value;
    if (!std::isfinite(total_loss)) {
      outcome.aborted_non_finite = true;
      break;
    }

    propagate_backward(model, adj, prop, d_user_final, d_item_final, *d_user_table,
                       *d_item_table, d_concat);

    const double norm = global_grad_norm(grads);
    if (config.grad_clip > 0 && norm > config.grad_clip) {
      const double scale = config.grad_clip / norm;
      for (auto& [name, g] : grads) (*g) *= scale;
    }
    adam.step(params, grads);
    for (auto& [name, g] : grads) g->setZero();

    if (step % config.eval_interval == 0 || step == total_steps) run_validation(step);
  }
  if (outcome.best_step < 0) run_validation(0);

  Propagated best_prop = propagate(outcome.best_model, adj);
  EmbeddingStore users = store_from_rows(best_prop.user_final, dataset.users, EntityKind::kUser);
  EmbeddingStore items = store_from_rows(best_prop.item_final, dataset.items, EntityKind::kItem);
  outcome.test_metrics =
      evaluate_all_rank(users, items, dataset, Split::kTest, n_list, ScoreKind::kDot, workers);
  return outcome;
}

}  // namespace textrec
