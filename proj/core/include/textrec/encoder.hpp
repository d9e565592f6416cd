#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "textrec/common.hpp"
#include "textrec/rng.hpp"
#include "textrec/tokenizer.hpp"

namespace textrec {

struct EncoderConfig {
  std::int32_t layers = 2;
  std::int32_t hidden = 16;
  std::int32_t heads = 2;
  std::int32_t ffn = 64;       // feed-forward width, defaults to 4*hidden
  std::int32_t vocab = 64;
  std::int32_t max_len = 16;
  std::int32_t embed_dim = 16; // output dimension of the pooled MLP head
  double dropout = 0.1;
  bool pre_norm = true;
  bool tie_mlm = true;         // MLM decoder shares the token embedding table

  std::int32_t head_dim() const { return hidden / heads; }

  /// Size presets: tiny 2/16/2, small 6/768/12, base 12/768/12, large 24/1024/16.
  /// Presets fix layers/hidden/heads/ffn/embed_dim; vocab and max_len stay
  /// at their current values.
  static EncoderConfig preset(const std::string& name);

  void validate() const;
  std::string to_json() const;
  static EncoderConfig from_json(const std::string& text);
};

template <typename S>
struct AttentionParams {
  Mat<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

template <typename S>
struct LayerParams {
  Mat<S> ln1_g, ln1_b;
  AttentionParams<S> attn;
  Mat<S> ln2_g, ln2_b;
  Mat<S> w1, b1, w2, b2;
};

/// All learnable tensors of the encoder stack. The same struct doubles as the
/// gradient / optimizer-moment container (zeros_like).
template <typename S>
struct EncoderParams {
  EncoderConfig config;
  Mat<S> tok_emb;  // V x d
  Mat<S> pos_emb;  // max_len x d
  std::vector<LayerParams<S>> layers;
  Mat<S> lnf_g, lnf_b;  // final LN (pre-norm) / embedding LN (post-norm)
  Mat<S> head_w1, head_b1, head_w2, head_b2;
  Mat<S> mlm_w, mlm_b, mlm_ln_g, mlm_ln_b, mlm_bias;
  Mat<S> mlm_dec;  // V x d, allocated only when !tie_mlm

  std::vector<std::pair<std::string, Mat<S>*>> named_tensors();
  std::vector<std::pair<std::string, const Mat<S>*>> named_tensors() const;
  std::int64_t parameter_count() const;

  /// "EZRC" container, tensors stored f32 row-major.
  void save(const std::string& path) const;
  static EncoderParams load(const std::string& path);
};

/// Deterministic init: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weight
/// matrices and embeddings, zeros for biases, ones for layer-norm gains.
template <typename S>
EncoderParams<S> init_encoder_params(const EncoderConfig& config, std::uint64_t seed);

template <typename S>
EncoderParams<S> zeros_like(const EncoderParams<S>& params);

template <typename From, typename To>
EncoderParams<To> cast_params(const EncoderParams<From>& params);

// ---------------------------------------------------------------------------
// Row-wise primitives, shared with the loss heads and their unit checks.

template <typename S>
inline S gelu(S x) {
  return S(0.5) * x * (S(1) + std::erf(x / S(std::sqrt(2.0))));
}

template <typename S>
inline S gelu_grad(S x) {
  const S cdf = S(0.5) * (S(1) + std::erf(x / S(std::sqrt(2.0))));
  const S pdf = S(std::exp(-0.5 * double(x) * double(x)) / std::sqrt(2.0 * M_PI));
  return cdf + x * pdf;
}

/// In-place row softmax. Entries equal to -infinity stay exactly zero.
template <typename S>
void softmax_rows(Mat<S>& m);

/// y = g .* (x - mu)/sqrt(var + eps) + b, per row. mu/inv_std are emitted for
/// the backward pass.
template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                          Vec<S>& mu, Vec<S>& inv_std);

/// Returns dx; accumulates into d_gain/d_bias.
template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& x, const Mat<S>& gain,
                           const Vec<S>& mu, const Vec<S>& inv_std, Mat<S>& d_gain,
                           Mat<S>& d_bias);

/// Multi-head self-attention over one sequence (softmax(Q Kh^T / sqrt(d_head)) V
/// per head, concatenated, output-projected). mask entries of 0 mark pad
/// positions whose logits become -infinity before the softmax.
template <typename S>
Mat<S> multi_head_attention(const Mat<S>& x, const std::vector<std::uint8_t>& mask,
                            const AttentionParams<S>& attn, std::int32_t heads);

// ---------------------------------------------------------------------------
// Forward / backward. Sequences are packed row-wise (sequence s occupies rows
// [offsets[s], offsets[s]+lens[s])); pad positions are trimmed away up front,
// which is exact because pads are always a suffix and never read.

template <typename S>
struct LayerTrace {
  Mat<S> x_in, ln1_out;
  Vec<S> ln1_mu, ln1_is;
  Mat<S> q, k, v;
  std::vector<Mat<S>> probs;  // per sequence, head-stacked (heads*n) x n
  Mat<S> attn_concat;
  Mat<S> attn_drop_mask;
  Mat<S> x_mid, ln2_out;
  Vec<S> ln2_mu, ln2_is;
  Mat<S> ffn_pre, ffn_act;
  Mat<S> ffn_drop_mask;
  Mat<S> post_sum1, post_sum2;  // post-norm residual sums (empty in pre-norm)
};

template <typename S>
struct EncoderTrace {
  std::vector<std::vector<std::int32_t>> ids;  // trimmed token ids per sequence
  std::vector<std::int32_t> offsets, lens;
  Mat<S> emb_sum;  // token + positional embeddings, before LN/dropout
  Vec<S> emb_ln_mu, emb_ln_is;
  Mat<S> emb_drop_mask;
  Mat<S> x0;
  std::vector<LayerTrace<S>> layers;
  Mat<S> x_last;   // output of the final block
  Vec<S> lnf_mu, lnf_is;
  Mat<S> h_final;  // final per-token outputs
  Mat<S> cls_rows, head_pre, head_tanh;
  bool training = false;
};

template <typename S>
struct ForwardOptions {
  bool training = false;   // record a trace; apply dropout when rng is given
  Rng* dropout_rng = nullptr;
};

template <typename S>
struct EncoderOutput {
  Mat<S> embeddings;     // B x embed_dim, one row per sequence
  Mat<S> token_outputs;  // packed N x d final token states
  std::vector<std::int32_t> offsets, lens;
  std::unique_ptr<EncoderTrace<S>> trace;  // present iff options.training
};

template <typename S>
EncoderOutput<S> encoder_forward(const EncoderParams<S>& params,
                                 const std::vector<TokenSequence>& batch,
                                 const ForwardOptions<S>& options);

/// Inference-mode embeddings only.
template <typename S>
Mat<S> encode(const EncoderParams<S>& params, const std::vector<TokenSequence>& batch);

/// Accumulates exact gradients into `grads` given upstream gradients for the
/// pooled embeddings (B x embed_dim; may be empty) and/or the packed final
/// token outputs (N x d; may be empty).
template <typename S>
void encoder_backward(const EncoderParams<S>& params, const EncoderTrace<S>& trace,
                      const Mat<S>& d_embeddings, const Mat<S>& d_token_outputs,
                      EncoderParams<S>& grads);

}  // namespace textrec
