#include "textrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "textrec/evaluation.hpp"
#include "textrec/retrieval.hpp"

namespace textrec {

using nlohmann::json;

Objective objective_from_string(const std::string& name) {
  if (name == "contrastive-paper") return Objective::kContrastivePaper;
  if (name == "contrastive-standard") return Objective::kContrastiveStandard;
  if (name == "bpr") return Objective::kBpr;
  throw DataError("unknown objective '" + name + "'");
}

std::string objective_to_string(Objective objective) {
  switch (objective) {
    case Objective::kContrastivePaper: return "contrastive-paper";
    case Objective::kContrastiveStandard: return "contrastive-standard";
    case Objective::kBpr: return "bpr";
  }
  throw DataError("invalid objective value");
}

void TrainConfig::validate() const {
  if (temperature <= 0) throw DataError("temperature must be > 0");
  if (mlm_weight < 0) throw DataError("mlm weight must be >= 0");
  if (mask_ratio < 0 || mask_ratio >= 1) throw DataError("mask ratio must be in [0,1)");
  if (learning_rate <= 0) throw DataError("learning rate must be > 0");
  if (epochs < 1 && max_steps < 1) throw DataError("epochs or max_steps must be positive");
  if (batch_size < 1) throw DataError("batch size must be >= 1");
  if (objective != Objective::kBpr && batch_size < 2) {
    throw DataError("contrastive objectives need batch size >= 2");
  }
  if (eval_interval < 1) throw DataError("eval interval must be >= 1");
}

// ---------------------------------------------------------------------------
// Contrastive / BPR losses

namespace {

template <typename S>
struct NormalizedRows {
  Mat<S> unit;       // rows scaled to unit norm
  std::vector<S> norm;
};

template <typename S>
NormalizedRows<S> normalize_rows(const Mat<S>& m, const char* what) {
  NormalizedRows<S> out;
  out.unit.resize(m.rows(), m.cols());
  out.norm.resize(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const S n = m.row(r).norm();
    if (!(n > S(0))) {
      throw NumericError(std::string("zero-norm ") + what + " embedding at batch row " +
                         std::to_string(r));
    }
    out.norm[static_cast<std::size_t>(r)] = n;
    out.unit.row(r) = m.row(r) / n;
  }
  return out;
}

// d cos(u,v) / du = (v_hat - cos * u_hat) / |u|
template <typename S>
void add_cosine_grad(const NormalizedRows<S>& a, Eigen::Index ra, const NormalizedRows<S>& b,
                     Eigen::Index rb, S cos_ab, S coeff, Mat<S>& d_a, Mat<S>& d_b) {
  d_a.row(ra) += coeff * (b.unit.row(rb) - cos_ab * a.unit.row(ra)) / a.norm[static_cast<std::size_t>(ra)];
  d_b.row(rb) += coeff * (a.unit.row(ra) - cos_ab * b.unit.row(rb)) / b.norm[static_cast<std::size_t>(rb)];
}

}  // namespace

template <typename S>
TripletLoss<S> contrastive_loss(const Mat<S>& user, const Mat<S>& pos, const Mat<S>& neg,
                                double tau, Objective mode, bool with_grad) {
  if (mode == Objective::kBpr) throw DataError("contrastive_loss called with bpr objective");
  if (user.rows() != pos.rows() || user.rows() != neg.rows() || user.rows() == 0) {
    throw DataError("contrastive_loss: batch size mismatch");
  }
  if (tau <= 0) throw DataError("contrastive_loss: tau must be > 0");
  const Eigen::Index b_count = user.rows();
  const S inv_tau = S(1.0 / tau);
  const S inv_b = S(1) / static_cast<S>(b_count);
  const bool include_pos = mode == Objective::kContrastiveStandard;

  auto u = normalize_rows(user, "user");
  auto p = normalize_rows(pos, "positive item");
  auto n = normalize_rows(neg, "negative item");

  // cos(u_b, p_m) for every pair; cos(u_b, n_b) per row.
  Mat<S> cos_up = u.unit * p.unit.transpose();
  Vec<S> cos_un(b_count);
  for (Eigen::Index b = 0; b < b_count; ++b) cos_un(b) = u.unit.row(b).dot(n.unit.row(b));

  TripletLoss<S> out;
  if (with_grad) {
    out.d_user = Mat<S>::Zero(user.rows(), user.cols());
    out.d_pos = Mat<S>::Zero(pos.rows(), pos.cols());
    out.d_neg = Mat<S>::Zero(neg.rows(), neg.cols());
  }

  S loss = 0;
  std::vector<S> logits;
  std::vector<Eigen::Index> term_pos;  // index of p_m for each logit, -1 for the negative
  for (Eigen::Index b = 0; b < b_count; ++b) {
    logits.clear();
    term_pos.clear();
    logits.push_back(cos_un(b) * inv_tau);
    term_pos.push_back(-1);
    for (Eigen::Index m = 0; m < b_count; ++m) {
      if (m == b && !include_pos) continue;
      logits.push_back(cos_up(b, m) * inv_tau);
      term_pos.push_back(m);
    }
    S max_logit = logits[0];
    for (S v : logits) max_logit = std::max(max_logit, v);
    S sum_exp = 0;
    for (S v : logits) sum_exp += std::exp(v - max_logit);
    const S lse = max_logit + std::log(sum_exp);
    loss += lse - cos_up(b, b) * inv_tau;

    if (with_grad) {
      // d loss_b / d logit_m = softmax weight; numerator contributes -1 to
      // the own-positive cosine.
      for (std::size_t t = 0; t < logits.size(); ++t) {
        const S w = std::exp(logits[t] - lse);
        const S coeff = w * inv_tau * inv_b;
        if (term_pos[t] < 0) {
          add_cosine_grad(u, b, n, b, cos_un(b), coeff, out.d_user, out.d_neg);
        } else {
          add_cosine_grad(u, b, p, term_pos[t], cos_up(b, term_pos[t]), coeff, out.d_user,
                          out.d_pos);
        }
      }
      add_cosine_grad(u, b, p, b, cos_up(b, b), -inv_tau * inv_b, out.d_user, out.d_pos);
    }
  }
  out.value = loss * inv_b;
  return out;
}

template <typename S>
TripletLoss<S> bpr_loss(const Mat<S>& user, const Mat<S>& pos, const Mat<S>& neg, double tau,
                        bool with_grad) {
  if (user.rows() != pos.rows() || user.rows() != neg.rows() || user.rows() == 0) {
    throw DataError("bpr_loss: batch size mismatch");
  }
  if (tau <= 0) throw DataError("bpr_loss: tau must be > 0");
  const Eigen::Index b_count = user.rows();
  const S inv_tau = S(1.0 / tau);
  const S inv_b = S(1) / static_cast<S>(b_count);

  auto u = normalize_rows(user, "user");
  auto p = normalize_rows(pos, "positive item");
  auto n = normalize_rows(neg, "negative item");

  TripletLoss<S> out;
  if (with_grad) {
    out.d_user = Mat<S>::Zero(user.rows(), user.cols());
    out.d_pos = Mat<S>::Zero(pos.rows(), pos.cols());
    out.d_neg = Mat<S>::Zero(neg.rows(), neg.cols());
  }

  S loss = 0;
  for (Eigen::Index b = 0; b < b_count; ++b) {
    const S cos_pos = u.unit.row(b).dot(p.unit.row(b));
    const S cos_neg = u.unit.row(b).dot(n.unit.row(b));
    const S x = (cos_pos - cos_neg) * inv_tau;
    // -log sigmoid(x) = softplus(-x), computed stably on both tails.
    loss += x > 0 ? std::log1p(std::exp(-x)) : -x + std::log1p(std::exp(x));
    if (with_grad) {
      const S sig = S(1) / (S(1) + std::exp(-x));
      const S dx = (sig - S(1)) * inv_b;  // d loss / d x
      add_cosine_grad(u, b, p, b, cos_pos, dx * inv_tau, out.d_user, out.d_pos);
      add_cosine_grad(u, b, n, b, cos_neg, -dx * inv_tau, out.d_user, out.d_neg);
    }
  }
  out.value = loss * inv_b;
  return out;
}

// ---------------------------------------------------------------------------
// MLM

MaskedSequence mlm_mask(const TokenSequence& seq, double ratio, Rng& rng,
                        std::int32_t vocab_size, bool mask_all) {
  if (ratio < 0 || ratio >= 1) throw DataError("mlm_mask: ratio must be in [0,1)");
  MaskedSequence out;
  out.sequence = seq;
  if (ratio == 0) return out;
  const std::int32_t word_count = vocab_size - Vocab::kNumReserved;
  for (std::int32_t t = 1; t < seq.true_len; ++t) {
    if (!(rng.uniform() < ratio)) continue;
    const auto pos = static_cast<std::size_t>(t);
    out.positions.push_back(t);
    out.labels.push_back(seq.ids[pos]);
    if (mask_all) {
      out.sequence.ids[pos] = Vocab::kMask;
      continue;
    }
    const double convert = rng.uniform();
    if (convert < 0.8 || word_count <= 0) {
      out.sequence.ids[pos] = Vocab::kMask;
    } else if (convert < 0.9) {
      out.sequence.ids[pos] =
          Vocab::kNumReserved + static_cast<std::int32_t>(rng.uniform_int(
                                    static_cast<std::uint64_t>(word_count)));
    }  // else: keep the original token
  }
  return out;
}

template <typename S>
S mlm_loss(const EncoderParams<S>& params, const Mat<S>& token_outputs,
           const std::vector<std::int32_t>& offsets, const std::vector<MaskedSequence>& examples,
           double grad_scale, EncoderParams<S>* grads, Mat<S>* d_token_outputs) {
  if (offsets.size() != examples.size()) throw DataError("mlm_loss: offsets/examples mismatch");
  const Eigen::Index d = params.config.hidden;

  std::vector<Eigen::Index> row_of;  // packed row per labeled position
  std::vector<std::int32_t> labels;
  for (std::size_t s = 0; s < examples.size(); ++s) {
    for (std::size_t j = 0; j < examples[s].positions.size(); ++j) {
      row_of.push_back(offsets[s] + examples[s].positions[j]);
      labels.push_back(examples[s].labels[j]);
    }
  }
  const Eigen::Index p_count = static_cast<Eigen::Index>(row_of.size());
  if (p_count == 0) return S(0);

  Mat<S> z(p_count, d);
  for (Eigen::Index r = 0; r < p_count; ++r) z.row(r) = token_outputs.row(row_of[static_cast<std::size_t>(r)]);

  Mat<S> a = (z * params.mlm_w).rowwise() + params.mlm_b.row(0);
  Mat<S> g = a.unaryExpr([](S v) { return gelu(v); });
  Vec<S> mu, inv_std;
  Mat<S> ln = layer_norm_forward(g, params.mlm_ln_g, params.mlm_ln_b, mu, inv_std);
  const Mat<S>& dec = params.config.tie_mlm ? params.tok_emb : params.mlm_dec;
  Mat<S> logits = (ln * dec.transpose()).rowwise() + params.mlm_bias.row(0);

  // Row-stable log-softmax cross entropy.
  S loss = 0;
  Mat<S> d_logits;
  if (grads) d_logits.resize(p_count, logits.cols());
  for (Eigen::Index r = 0; r < p_count; ++r) {
    const S max_logit = logits.row(r).maxCoeff();
    S sum_exp = 0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) sum_exp += std::exp(logits(r, c) - max_logit);
    const S lse = max_logit + std::log(sum_exp);
    const std::int32_t label = labels[static_cast<std::size_t>(r)];
    loss += lse - logits(r, label);
    if (grads) {
      for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        d_logits(r, c) = std::exp(logits(r, c) - lse);
      }
      d_logits(r, label) -= S(1);
    }
  }
  const S inv_p = S(1) / static_cast<S>(p_count);
  loss *= inv_p;

  if (grads) {
    d_logits *= inv_p * S(grad_scale);
    grads->mlm_bias += d_logits.colwise().sum();
    Mat<S> d_ln = d_logits * dec;
    Mat<S>& d_dec = params.config.tie_mlm ? grads->tok_emb : grads->mlm_dec;
    d_dec += d_logits.transpose() * ln;
    Mat<S> d_g = layer_norm_backward(d_ln, g, params.mlm_ln_g, mu, inv_std, grads->mlm_ln_g,
                                     grads->mlm_ln_b);
    Mat<S> d_a = d_g.cwiseProduct(a.unaryExpr([](S v) { return gelu_grad(v); }));
    grads->mlm_w += z.transpose() * d_a;
    grads->mlm_b += d_a.colwise().sum();
    Mat<S> d_z = d_a * params.mlm_w.transpose();
    if (d_token_outputs) {
      if (d_token_outputs->rows() != token_outputs.rows() ||
          d_token_outputs->cols() != token_outputs.cols()) {
        d_token_outputs->setZero(token_outputs.rows(), token_outputs.cols());
      }
      for (Eigen::Index r = 0; r < p_count; ++r) {
        d_token_outputs->row(row_of[static_cast<std::size_t>(r)]) += d_z.row(r);
      }
    }
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Sampling

const std::string& sample_profile(const ProfileSet& set, Rng& rng, std::int32_t limit_t) {
  if (set.profiles.empty()) throw DataError("entity '" + set.entity_id + "' has no profiles");
  std::size_t count = set.profiles.size();
  if (limit_t >= 0) count = std::min<std::size_t>(count, static_cast<std::size_t>(limit_t) + 1);
  return set.profiles[static_cast<std::size_t>(rng.uniform_int(count))];
}

TrainingBatch sample_batch(const InteractionDataset& dataset, const ProfileMap& user_profiles,
                           const ProfileMap& item_profiles, const Vocab& vocab,
                           std::int32_t max_len, std::int32_t batch_size, Rng& rng,
                           std::int32_t augmentation) {
  if (dataset.train.empty()) throw DataError("sample_batch: train split is empty");
  const std::size_t item_count = dataset.items.size();
  TrainingBatch batch;
  for (std::int32_t b = 0; b < batch_size; ++b) {
    const auto& [user, pos] =
        dataset.train[static_cast<std::size_t>(rng.uniform_int(dataset.train.size()))];
    if (dataset.user_neighbors[static_cast<std::size_t>(user)].size() >= item_count) {
      throw DataError("user '" + dataset.users[static_cast<std::size_t>(user)] +
                      "' interacts with every item; no negative exists");
    }
    std::int32_t neg = -1;
    for (int attempt = 0; attempt < 10000; ++attempt) {
      const auto candidate = static_cast<std::int32_t>(rng.uniform_int(item_count));
      if (!dataset.user_interacted(user, candidate)) {
        neg = candidate;
        break;
      }
    }
    if (neg < 0) throw DataError("negative sampling exhausted retries");
    batch.users.push_back(user);
    batch.pos_items.push_back(pos);
    batch.neg_items.push_back(neg);
    batch.user_seqs.push_back(
        tokenize(sample_profile(user_profiles.at(dataset.users[static_cast<std::size_t>(user)]),
                                rng, augmentation),
                 vocab, max_len));
    batch.pos_seqs.push_back(
        tokenize(sample_profile(item_profiles.at(dataset.items[static_cast<std::size_t>(pos)]),
                                rng, augmentation),
                 vocab, max_len));
    batch.neg_seqs.push_back(
        tokenize(sample_profile(item_profiles.at(dataset.items[static_cast<std::size_t>(neg)]),
                                rng, augmentation),
                 vocab, max_len));
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Optimizer

template <typename S>
double global_grad_norm(const std::vector<std::pair<std::string, Mat<S>*>>& grads) {
  double sum = 0;
  for (const auto& [name, g] : grads) sum += g->template cast<double>().squaredNorm();
  return std::sqrt(sum);
}

template <typename S>
void AdamOptimizer<S>::step(const std::vector<std::pair<std::string, Mat<S>*>>& params,
                            const std::vector<std::pair<std::string, Mat<S>*>>& grads) {
  if (params.size() != grads.size()) throw DataError("adam: parameter/gradient count mismatch");
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].setZero(params[i].second->rows(), params[i].second->cols());
      v_[i].setZero(params[i].second->rows(), params[i].second->cols());
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat<S>& p = *params[i].second;
    const Mat<S>& g = *grads[i].second;
    m_[i] = S(beta1_) * m_[i] + S(1.0 - beta1_) * g;
    v_[i] = S(beta2_) * v_[i] + S(1.0 - beta2_) * g.cwiseProduct(g);
    p.array() -= S(lr_) * (m_[i].array() / S(bc1)) /
                 ((v_[i].array() / S(bc2)).sqrt() + S(eps_));
  }
}

std::string StepReport::to_json() const {
  json obj;
  obj["step"] = step;
  obj["l_con"] = l_con;
  obj["l_mlm"] = l_mlm;
  obj["l"] = total;
  obj["grad_norm"] = grad_norm;
  return obj.dump();
}

// ---------------------------------------------------------------------------
// Train loop

namespace {

std::pair<std::string, std::int32_t> parse_metric(const std::string& name) {
  auto at = name.find('@');
  if (at == std::string::npos) throw DataError("selection metric must look like recall@20");
  const std::string metric = name.substr(0, at);
  if (metric != "recall" && metric != "ndcg") {
    throw DataError("unsupported selection metric '" + name + "'");
  }
  return {metric, std::stoi(name.substr(at + 1))};
}

}  // namespace

template <typename S>
TrainOutcome<S> train_encoder(const EncoderConfig& encoder_config, const TrainConfig& config,
                              const InteractionDataset& dataset, const ProfileMap& user_profiles,
                              const ProfileMap& item_profiles, const Vocab& vocab,
                              std::ostream* log_stream, int workers) {
  encoder_config.validate();
  config.validate();
  if (dataset.train.empty()) throw DataError("train split is empty");
  if (dataset.val.empty()) throw DataError("validation split is empty");

  auto [sel_metric, sel_n] = parse_metric(config.selection_metric);
  std::vector<std::int32_t> n_list = {10, 20};
  if (std::find(n_list.begin(), n_list.end(), sel_n) == n_list.end()) n_list.push_back(sel_n);

  EncoderParams<S> params = init_encoder_params<S>(encoder_config, config.seed);
  EncoderParams<S> grads = zeros_like(params);
  auto param_list = params.named_tensors();
  auto grad_list = grads.named_tensors();
  AdamOptimizer<S> adam(config.learning_rate);

  Rng sample_rng(derive_seed(config.seed, "sample"));
  Rng mlm_rng(derive_seed(config.seed, "mlm"));
  Rng dropout_rng(derive_seed(config.seed, "dropout"));

  const std::int64_t steps_per_epoch =
      std::max<std::int64_t>(1, (static_cast<std::int64_t>(dataset.train.size()) +
                                 config.batch_size - 1) /
                                    config.batch_size);
  std::int64_t total_steps = steps_per_epoch * config.epochs;
  if (config.max_steps > 0) total_steps = std::min(total_steps, config.max_steps);

  TrainOutcome<S> outcome;
  outcome.total_steps = total_steps;

  const bool use_mlm = config.mlm_weight > 0 && config.mask_ratio > 0;

  auto run_validation = [&](std::int64_t step) {
    EmbeddingStore users = embed_entities(params, vocab, dataset.users, user_profiles, 0,
                                          EntityKind::kUser, workers);
    EmbeddingStore items = embed_entities(params, vocab, dataset.items, item_profiles, 0,
                                          EntityKind::kItem, workers);
    auto metrics = evaluate_all_rank(users, items, dataset, Split::kVal, n_list,
                                     ScoreKind::kCosine, workers);
    const double value = metrics.at(metric_key(sel_metric, sel_n));
    if (value > outcome.best_metric) {
      outcome.best_metric = value;
      outcome.best_step = step;
      outcome.best_params = params;
      outcome.best_val_metrics = metrics;
    }
  };

  for (std::int64_t step = 1; step <= total_steps; ++step) {
    TrainingBatch batch =
        sample_batch(dataset, user_profiles, item_profiles, vocab, encoder_config.max_len,
                     config.batch_size, sample_rng, config.augmentation);
    const Eigen::Index b_count = config.batch_size;

    std::vector<TokenSequence> stacked;
    stacked.reserve(batch.user_seqs.size() * 3);
    stacked.insert(stacked.end(), batch.user_seqs.begin(), batch.user_seqs.end());
    stacked.insert(stacked.end(), batch.pos_seqs.begin(), batch.pos_seqs.end());
    stacked.insert(stacked.end(), batch.neg_seqs.begin(), batch.neg_seqs.end());

    ForwardOptions<S> options;
    options.training = true;
    options.dropout_rng = &dropout_rng;
    EncoderOutput<S> fwd = encoder_forward(params, stacked, options);

    Mat<S> user_emb = fwd.embeddings.topRows(b_count);
    Mat<S> pos_emb = fwd.embeddings.middleRows(b_count, b_count);
    Mat<S> neg_emb = fwd.embeddings.bottomRows(b_count);

    TripletLoss<S> loss =
        config.objective == Objective::kBpr
            ? bpr_loss(user_emb, pos_emb, neg_emb, config.temperature, true)
            : contrastive_loss(user_emb, pos_emb, neg_emb, config.temperature, config.objective,
                               true);

    Mat<S> d_embeddings(b_count * 3, params.config.embed_dim);
    d_embeddings.topRows(b_count) = loss.d_user;
    d_embeddings.middleRows(b_count, b_count) = loss.d_pos;
    d_embeddings.bottomRows(b_count) = loss.d_neg;
    encoder_backward(params, *fwd.trace, d_embeddings, Mat<S>(), grads);

    double l_mlm = 0;
    if (use_mlm) {
      std::vector<MaskedSequence> masked;
      masked.reserve(batch.user_seqs.size() * 2);
      for (const auto& seq : batch.user_seqs) {
        masked.push_back(mlm_mask(seq, config.mask_ratio, mlm_rng, encoder_config.vocab,
                                  config.mask_all_convention));
      }
      for (const auto& seq : batch.pos_seqs) {
        masked.push_back(mlm_mask(seq, config.mask_ratio, mlm_rng, encoder_config.vocab,
                                  config.mask_all_convention));
      }
      std::vector<TokenSequence> masked_seqs;
      masked_seqs.reserve(masked.size());
      for (const auto& ex : masked) masked_seqs.push_back(ex.sequence);
      EncoderOutput<S> mlm_fwd = encoder_forward(params, masked_seqs, options);
      Mat<S> d_tokens;
      l_mlm = static_cast<double>(mlm_loss(params, mlm_fwd.token_outputs, mlm_fwd.offsets, masked,
                                           config.mlm_weight, &grads, &d_tokens));
      if (d_tokens.size() > 0) {
        encoder_backward(params, *mlm_fwd.trace, Mat<S>(), d_tokens, grads);
      }
    }

    StepReport report;
    report.step = step;
    report.l_con = static_cast<double>(loss.value);
    report.l_mlm = l_mlm;
    report.total = report.l_con + config.mlm_weight * report.l_mlm;
    report.grad_norm = global_grad_norm(grad_list);
    if (log_stream) (*log_stream) << report.to_json() << '\n';
    outcome.reports.push_back(report);

    if (!std::isfinite(report.total) || !std::isfinite(report.grad_norm)) {
      outcome.aborted_non_finite = true;
      break;
    }

    if (config.grad_clip > 0 && report.grad_norm > config.grad_clip) {
      const S scale = S(config.grad_clip / report.grad_norm);
      for (auto& [name, g] : grad_list) (*g) *= scale;
    }
    adam.step(param_list, grad_list);
    for (auto& [name, g] : grad_list) g->setZero();

    if (step % config.eval_interval == 0 || step == total_steps) {
      run_validation(step);
    }
  }

  if (outcome.best_step < 0) run_validation(outcome.reports.empty() ? 0 : outcome.reports.back().step);
  return outcome;
}

// ---------------------------------------------------------------------------

template struct TripletLoss<float>;
template struct TripletLoss<double>;

template TripletLoss<float> contrastive_loss<float>(const Mat<float>&, const Mat<float>&,
                                                    const Mat<float>&, double, Objective, bool);
template TripletLoss<double> contrastive_loss<double>(const Mat<double>&, const Mat<double>&,
                                                      const Mat<double>&, double, Objective, bool);

template TripletLoss<float> bpr_loss<float>(const Mat<float>&, const Mat<float>&,
                                            const Mat<float>&, double, bool);
template TripletLoss<double> bpr_loss<double>(const Mat<double>&, const Mat<double>&,
                                              const Mat<double>&, double, bool);

template float mlm_loss<float>(const EncoderParams<float>&, const Mat<float>&,
                               const std::vector<std::int32_t>&,
                               const std::vector<MaskedSequence>&, double, EncoderParams<float>*,
                               Mat<float>*);
template double mlm_loss<double>(const EncoderParams<double>&, const Mat<double>&,
                                 const std::vector<std::int32_t>&,
                                 const std::vector<MaskedSequence>&, double,
                                 EncoderParams<double>*, Mat<double>*);

template double global_grad_norm<float>(const std::vector<std::pair<std::string, Mat<float>*>>&);
template double global_grad_norm<double>(const std::vector<std::pair<std::string, Mat<double>*>>&);

template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

template struct TrainOutcome<float>;
template struct TrainOutcome<double>;

template TrainOutcome<float> train_encoder<float>(const EncoderConfig&, const TrainConfig&,
                                                  const InteractionDataset&, const ProfileMap&,
                                                  const ProfileMap&, const Vocab&, std::ostream*,
                                                  int);
template TrainOutcome<double> train_encoder<double>(const EncoderConfig&, const TrainConfig&,
                                                    const InteractionDataset&, const ProfileMap&,
                                                    const ProfileMap&, const Vocab&, std::ostream*,
                                                    int);

}  // namespace textrec
