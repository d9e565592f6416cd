#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "textrec/common.hpp"
#include "textrec/data.hpp"
#include "textrec/evaluation.hpp"
#include "textrec/retrieval.hpp"

namespace textrec {

enum class CfBackbone { kLightGcn, kGccf };

CfBackbone cf_backbone_from_string(const std::string& name);
std::string cf_backbone_to_string(CfBackbone backbone);

struct CfConfig {
  CfBackbone backbone = CfBackbone::kLightGcn;
  std::int32_t dim = 64;     // ID-embedding width
  std::int32_t layers = 2;   // propagation depth
  double learning_rate = 5e-3;
  std::int32_t epochs = 20;
  std::int64_t max_steps = 0;
  std::int32_t batch_size = 1024;
  std::int32_t eval_interval = 200;
  std::string selection_metric = "recall@20";
  double align_weight = 0.0;  // > 0 enables contrastive text alignment
  double align_tau = 0.2;
  double grad_clip = 5.0;
  bool drop_isolated = true;  // tolerate zero-degree entities in the adjacency
  std::uint64_t seed = 0;

  void validate() const;
};

/// D^{-1/2} A D^{-1/2} over the train bipartite graph, CSR over the combined
/// node index space (users 0..U-1, items U..U+I-1). Each edge carries
/// 1/sqrt(deg(u) * deg(i)) in both directions.
struct NormalizedAdjacency {
  std::int32_t user_count = 0, item_count = 0;
  std::vector<std::int64_t> row_ptr;
  std::vector<std::int32_t> col;
  std::vector<double> value;

  std::int32_t node_count() const { return user_count + item_count; }
  MatD multiply(const MatD& x) const;
};

/// allow_isolated keeps zero-degree entities as edgeless nodes (their higher
/// propagation layers contribute zeros); otherwise they are an error.
NormalizedAdjacency build_norm_adj(const InteractionDataset& dataset, bool allow_isolated = false);

struct CfModel {
  CfConfig config;
  MatD user_table, item_table;  // layer-0 ID embeddings
  MatD concat_proj;             // gccf: ((layers+1)*dim) x dim
  MatD align_proj;              // text_dim x dim, allocated iff alignment on

  std::vector<std::pair<std::string, MatD*>> named_tensors();
  void save(const std::string& path) const;
  static CfModel load(const std::string& path);
};

CfModel init_cf_model(const CfConfig& config, std::int32_t user_count, std::int32_t item_count,
                      std::int32_t text_dim, std::uint64_t seed);

struct Propagated {
  MatD user_final, item_final;
  std::vector<MatD> states;  // E^0 .. E^L over combined nodes
};

/// lightgcn: mean of layer states. gccf: layer states concatenated and
/// projected back to dim.
Propagated propagate(const CfModel& model, const NormalizedAdjacency& adj);

/// Exact gradients of the propagation outputs back to the ID tables (and the
/// gccf projection). d_user_final/d_item_final may be sparse-by-rows.
void propagate_backward(const CfModel& model, const NormalizedAdjacency& adj,
                        const Propagated& forward, const MatD& d_user_final,
                        const MatD& d_item_final, MatD& d_user_table, MatD& d_item_table,
                        MatD* d_concat_proj);

struct AlignmentResult {
  double value = 0;
  MatD d_cf;    // gradient w.r.t. the CF rows
  MatD d_proj;  // gradient w.r.t. the projection (text side is frozen)
};

/// Symmetric in-batch InfoNCE between projected text rows and CF rows of the
/// same entities: positives at matching indices, cosine/tau logits, mean of
/// both directions.
AlignmentResult alignment_loss(const MatD& cf_rows, const MatD& text_rows, const MatD& proj,
                               double tau, bool with_grad = true);

struct CfTrainOutcome {
  CfModel best_model;
  std::map<std::string, double> best_val_metrics;
  std::map<std::string, double> test_metrics;
  double best_metric = -1.0;
  std::int64_t best_step = -1;
  std::int64_t total_steps = 0;
  bool aborted_non_finite = false;
};

/// BPR over propagated dot-product scores, plus align_weight * alignment_loss
/// on the batch entities when text stores are given. Best-on-validation
/// selection by the configured metric; test metrics at N in {5,10,20}.
CfTrainOutcome train_cf(const InteractionDataset& dataset, const CfConfig& config,
                        const EmbeddingStore* text_users, const EmbeddingStore* text_items,
                        int workers = 1);

}  // namespace textrec
