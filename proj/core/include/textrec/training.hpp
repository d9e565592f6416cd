#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "textrec/data.hpp"
#include "textrec/encoder.hpp"
#include "textrec/rng.hpp"
#include "textrec/tokenizer.hpp"

namespace textrec {

enum class Objective { kContrastivePaper, kContrastiveStandard, kBpr };

Objective objective_from_string(const std::string& name);
std::string objective_to_string(Objective objective);

struct TrainConfig {
  double temperature = 0.05;
  double mlm_weight = 0.1;
  double mask_ratio = 0.15;
  double learning_rate = 5e-5;
  std::int32_t epochs = 25;
  std::int32_t batch_size = 64;
  std::int32_t eval_interval = 1000;
  std::string selection_metric = "recall@20";
  Objective objective = Objective::kContrastivePaper;
  std::uint64_t seed = 0;
  std::int64_t max_steps = 0;     // 0: epochs alone decide the step count
  std::int32_t augmentation = -1; // profiles sampled per entity: -1 = all
  double grad_clip = 5.0;
  bool mask_all_convention = false;  // force every selected position to [MASK]

  void validate() const;
};

// ---------------------------------------------------------------------------
// Losses over embedding batches. Row b of each matrix belongs to triplet b.

template <typename S>
struct TripletLoss {
  S value = 0;
  Mat<S> d_user, d_pos, d_neg;
};

/// Mean over rows of -log(exp(cos(u,pos)/tau) / sum_m exp(cos(u,m)/tau)).
/// Paper mode: the denominator holds the row's explicit negative plus every
/// other row's positive (the row's own positive excluded). Standard mode adds
/// the row's positive, giving conventional InfoNCE (loss >= 0).
template <typename S>
TripletLoss<S> contrastive_loss(const Mat<S>& user, const Mat<S>& pos, const Mat<S>& neg,
                                double tau, Objective mode, bool with_grad = true);

/// Mean of -log sigmoid((cos(u,pos) - cos(u,neg)) / tau).
template <typename S>
TripletLoss<S> bpr_loss(const Mat<S>& user, const Mat<S>& pos, const Mat<S>& neg, double tau,
                        bool with_grad = true);

// ---------------------------------------------------------------------------
// Masked language modeling.

struct MaskedSequence {
  TokenSequence sequence;
  std::vector<std::int32_t> positions;  // selected token positions
  std::vector<std::int32_t> labels;     // original ids at those positions
};

/// Selects non-special, non-pad positions independently with probability
/// `ratio`; 80% become [MASK], 10% a random word token, 10% stay unchanged
/// (mask_all forces 100% [MASK]). Deterministic per rng state.
MaskedSequence mlm_mask(const TokenSequence& seq, double ratio, Rng& rng,
                        std::int32_t vocab_size, bool mask_all = false);

/// Mean cross-entropy of the MLM head over all labeled positions (0 when none
/// are labeled). When `grads` is given, accumulates head-parameter gradients
/// scaled by grad_scale and writes the packed token-output gradient.
template <typename S>
S mlm_loss(const EncoderParams<S>& params, const Mat<S>& token_outputs,
           const std::vector<std::int32_t>& offsets, const std::vector<MaskedSequence>& examples,
           double grad_scale, EncoderParams<S>* grads, Mat<S>* d_token_outputs);

// ---------------------------------------------------------------------------
// Batch sampling.

/// Uniform draw over the profile set (first limit_t+1 entries when
/// limit_t >= 0).
const std::string& sample_profile(const ProfileSet& set, Rng& rng, std::int32_t limit_t = -1);

struct TrainingBatch {
  std::vector<std::int32_t> users, pos_items, neg_items;
  std::vector<TokenSequence> user_seqs, pos_seqs, neg_seqs;
};

/// Positives uniform over train pairs; one uniform negative per row drawn
/// from the items the user has not interacted with (bounded retries).
TrainingBatch sample_batch(const InteractionDataset& dataset, const ProfileMap& user_profiles,
                           const ProfileMap& item_profiles, const Vocab& vocab,
                           std::int32_t max_len, std::int32_t batch_size, Rng& rng,
                           std::int32_t augmentation = -1);

// ---------------------------------------------------------------------------
// Optimization.

template <typename S>
double global_grad_norm(const std::vector<std::pair<std::string, Mat<S>*>>& grads);

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8), no weight
/// decay or schedule.
template <typename S>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double lr) : lr_(lr) {}

  void step(const std::vector<std::pair<std::string, Mat<S>*>>& params,
            const std::vector<std::pair<std::string, Mat<S>*>>& grads);

 private:
  double lr_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
  std::vector<Mat<S>> m_, v_;
};

struct StepReport {
  std::int64_t step = 0;
  double l_con = 0, l_mlm = 0, total = 0, grad_norm = 0;
  std::string to_json() const;
};

template <typename S>
struct TrainOutcome {
  EncoderParams<S> best_params;
  std::map<std::string, double> best_val_metrics;
  double best_metric = -1.0;
  std::int64_t best_step = -1;
  std::int64_t total_steps = 0;
  std::vector<StepReport> reports;
  bool aborted_non_finite = false;
};

/// Full training loop: sample -> forward -> contrastive (+ lambda * MLM on the
/// same batch's user and positive-item sequences, re-encoded with masking) ->
/// backward -> clipped Adam update, evaluating the validation split every
/// eval_interval steps and retaining the best snapshot. A non-finite loss
/// aborts, keeping the last good snapshot.
template <typename S>
TrainOutcome<S> train_encoder(const EncoderConfig& encoder_config, const TrainConfig& config,
                              const InteractionDataset& dataset, const ProfileMap& user_profiles,
                              const ProfileMap& item_profiles, const Vocab& vocab,
                              std::ostream* log_stream = nullptr, int workers = 1);

}  // namespace textrec
