#include "textrec/encoder.hpp"

#include <algorithm>
#include <limits>

#include <nlohmann/json.hpp>

#include "textrec/serialize.hpp"

namespace textrec {

using nlohmann::json;

namespace {
constexpr double kLnEps = 1e-5;
}

// ---------------------------------------------------------------------------
// Config

EncoderConfig EncoderConfig::preset(const std::string& name) {
  EncoderConfig cfg;
  if (name == "tiny") {
    cfg.layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
  } else if (name == "small") {
    cfg.layers = 6;
    cfg.hidden = 768;
    cfg.heads = 12;
  } else if (name == "base") {
    cfg.layers = 12;
    cfg.hidden = 768;
    cfg.heads = 12;
  } else if (name == "large") {
    cfg.layers = 24;
    cfg.hidden = 1024;
    cfg.heads = 16;
  } else {
    throw DataError("unknown encoder preset '" + name + "'");
  }
  cfg.ffn = 4 * cfg.hidden;
  cfg.embed_dim = cfg.hidden;
  return cfg;
}

void EncoderConfig::validate() const {
  if (layers < 1 || hidden < 1 || heads < 1 || ffn < 1 || vocab < 5 || max_len < 2 ||
      embed_dim < 1) {
    throw DataError("encoder config has a non-positive or undersized field");
  }
  if (hidden % heads != 0) {
    throw DataError("hidden size " + std::to_string(hidden) + " not divisible by heads " +
                    std::to_string(heads));
  }
  if (dropout < 0.0 || dropout >= 1.0) throw DataError("dropout must be in [0,1)");
}

std::string EncoderConfig::to_json() const {
  json obj;
  obj["kind"] = "encoder";
  obj["layers"] = layers;
  obj["hidden"] = hidden;
  obj["heads"] = heads;
  obj["ffn"] = ffn;
  obj["vocab"] = vocab;
  obj["max_len"] = max_len;
  obj["embed_dim"] = embed_dim;
  obj["dropout"] = dropout;
  obj["pre_norm"] = pre_norm;
  obj["tie_mlm"] = tie_mlm;
  return obj.dump();
}

EncoderConfig EncoderConfig::from_json(const std::string& text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) throw DataError("malformed encoder config JSON");
  if (obj.value("kind", "encoder") != std::string("encoder")) {
    throw DataError("tensor container does not hold an encoder checkpoint");
  }
  EncoderConfig cfg;
  cfg.layers = obj.at("layers").get<std::int32_t>();
  cfg.hidden = obj.at("hidden").get<std::int32_t>();
  cfg.heads = obj.at("heads").get<std::int32_t>();
  cfg.ffn = obj.at("ffn").get<std::int32_t>();
  cfg.vocab = obj.at("vocab").get<std::int32_t>();
  cfg.max_len = obj.at("max_len").get<std::int32_t>();
  cfg.embed_dim = obj.at("embed_dim").get<std::int32_t>();
  cfg.dropout = obj.at("dropout").get<double>();
  cfg.pre_norm = obj.at("pre_norm").get<bool>();
  cfg.tie_mlm = obj.at("tie_mlm").get<bool>();
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameter plumbing

template <typename S>
std::vector<std::pair<std::string, Mat<S>*>> EncoderParams<S>::named_tensors() {
  std::vector<std::pair<std::string, Mat<S>*>> out;
  out.emplace_back("tok_emb", &tok_emb);
  out.emplace_back("pos_emb", &pos_emb);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& lay = layers[l];
    out.emplace_back(p + "ln1.g", &lay.ln1_g);
    out.emplace_back(p + "ln1.b", &lay.ln1_b);
    out.emplace_back(p + "attn.wq", &lay.attn.wq);
    out.emplace_back(p + "attn.bq", &lay.attn.bq);
    out.emplace_back(p + "attn.wk", &lay.attn.wk);
    out.emplace_back(p + "attn.bk", &lay.attn.bk);
    out.emplace_back(p + "attn.wv", &lay.attn.wv);
    out.emplace_back(p + "attn.bv", &lay.attn.bv);
    out.emplace_back(p + "attn.wo", &lay.attn.wo);
    out.emplace_back(p + "attn.bo", &lay.attn.bo);
    out.emplace_back(p + "ln2.g", &lay.ln2_g);
    out.emplace_back(p + "ln2.b", &lay.ln2_b);
    out.emplace_back(p + "ffn.w1", &lay.w1);
    out.emplace_back(p + "ffn.b1", &lay.b1);
    out.emplace_back(p + "ffn.w2", &lay.w2);
    out.emplace_back(p + "ffn.b2", &lay.b2);
  }
  out.emplace_back("ln_f.g", &lnf_g);
  out.emplace_back("ln_f.b", &lnf_b);
  out.emplace_back("head.w1", &head_w1);
  out.emplace_back("head.b1", &head_b1);
  out.emplace_back("head.w2", &head_w2);
  out.emplace_back("head.b2", &head_b2);
  out.emplace_back("mlm.w", &mlm_w);
  out.emplace_back("mlm.b", &mlm_b);
  out.emplace_back("mlm.ln.g", &mlm_ln_g);
  out.emplace_back("mlm.ln.b", &mlm_ln_b);
  out.emplace_back("mlm.bias", &mlm_bias);
  if (!config.tie_mlm) out.emplace_back("mlm.dec", &mlm_dec);
  return out;
}

template <typename S>
std::vector<std::pair<std::string, const Mat<S>*>> EncoderParams<S>::named_tensors() const {
  auto mut = const_cast<EncoderParams<S>*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Mat<S>*>> out;
  out.reserve(mut.size());
  for (auto& [name, ptr] : mut) out.emplace_back(name, ptr);
  return out;
}

template <typename S>
std::int64_t EncoderParams<S>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& [name, t] : named_tensors()) n += t->size();
  return n;
}

template <typename S>
EncoderParams<S> init_encoder_params(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  EncoderParams<S> p;
  p.config = config;
  const auto d = config.hidden;
  const auto f = config.ffn;
  p.tok_emb.setZero(config.vocab, d);
  p.pos_emb.setZero(config.max_len, d);
  p.layers.resize(static_cast<std::size_t>(config.layers));
  for (auto& lay : p.layers) {
    lay.ln1_g.setOnes(1, d);
    lay.ln1_b.setZero(1, d);
    lay.attn.wq.setZero(d, d);
    lay.attn.bq.setZero(1, d);
    lay.attn.wk.setZero(d, d);
    lay.attn.bk.setZero(1, d);
    lay.attn.wv.setZero(d, d);
    lay.attn.bv.setZero(1, d);
    lay.attn.wo.setZero(d, d);
    lay.attn.bo.setZero(1, d);
    lay.ln2_g.setOnes(1, d);
    lay.ln2_b.setZero(1, d);
    lay.w1.setZero(d, f);
    lay.b1.setZero(1, f);
    lay.w2.setZero(f, d);
    lay.b2.setZero(1, d);
  }
  p.lnf_g.setOnes(1, d);
  p.lnf_b.setZero(1, d);
  p.head_w1.setZero(d, d);
  p.head_b1.setZero(1, d);
  p.head_w2.setZero(d, config.embed_dim);
  p.head_b2.setZero(1, config.embed_dim);
  p.mlm_w.setZero(d, d);
  p.mlm_b.setZero(1, d);
  p.mlm_ln_g.setOnes(1, d);
  p.mlm_ln_b.setZero(1, d);
  p.mlm_bias.setZero(1, config.vocab);
  if (!config.tie_mlm) p.mlm_dec.setZero(config.vocab, d);

  Rng rng(seed);
  auto fill = [&rng](Mat<S>& m, double scale) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = static_cast<S>(rng.uniform(-scale, scale));
      }
    }
  };
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double inv_sqrt_f = 1.0 / std::sqrt(static_cast<double>(f));
  // Fixed traversal order keeps init bit-reproducible for a given seed.
  fill(p.tok_emb, inv_sqrt_d);
  fill(p.pos_emb, inv_sqrt_d);
  for (auto& lay : p.layers) {
    fill(lay.attn.wq, inv_sqrt_d);
    fill(lay.attn.wk, inv_sqrt_d);
    fill(lay.attn.wv, inv_sqrt_d);
    fill(lay.attn.wo, inv_sqrt_d);
    fill(lay.w1, inv_sqrt_d);
    fill(lay.w2, inv_sqrt_f);
  }
  fill(p.head_w1, inv_sqrt_d);
  fill(p.head_w2, inv_sqrt_d);
  fill(p.mlm_w, inv_sqrt_d);
  if (!config.tie_mlm) fill(p.mlm_dec, inv_sqrt_d);
  return p;
}

template <typename S>
EncoderParams<S> zeros_like(const EncoderParams<S>& params) {
  EncoderParams<S> z;
  z.config = params.config;
  z.tok_emb.setZero(params.tok_emb.rows(), params.tok_emb.cols());
  z.pos_emb.setZero(params.pos_emb.rows(), params.pos_emb.cols());
  z.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& src = params.layers[l];
    auto& dst = z.layers[l];
    auto zero = [](Mat<S>& m, const Mat<S>& ref) { m.setZero(ref.rows(), ref.cols()); };
    zero(dst.ln1_g, src.ln1_g);
    zero(dst.ln1_b, src.ln1_b);
    zero(dst.attn.wq, src.attn.wq);
    zero(dst.attn.bq, src.attn.bq);
    zero(dst.attn.wk, src.attn.wk);
    zero(dst.attn.bk, src.attn.bk);
    zero(dst.attn.wv, src.attn.wv);
    zero(dst.attn.bv, src.attn.bv);
    zero(dst.attn.wo, src.attn.wo);
    zero(dst.attn.bo, src.attn.bo);
    zero(dst.ln2_g, src.ln2_g);
    zero(dst.ln2_b, src.ln2_b);
    zero(dst.w1, src.w1);
    zero(dst.b1, src.b1);
    zero(dst.w2, src.w2);
    zero(dst.b2, src.b2);
  }
  auto zero = [](Mat<S>& m, const Mat<S>& ref) { m.setZero(ref.rows(), ref.cols()); };
  zero(z.lnf_g, params.lnf_g);
  zero(z.lnf_b, params.lnf_b);
  zero(z.head_w1, params.head_w1);
  zero(z.head_b1, params.head_b1);
  zero(z.head_w2, params.head_w2);
  zero(z.head_b2, params.head_b2);
  zero(z.mlm_w, params.mlm_w);
  zero(z.mlm_b, params.mlm_b);
  zero(z.mlm_ln_g, params.mlm_ln_g);
  zero(z.mlm_ln_b, params.mlm_ln_b);
  zero(z.mlm_bias, params.mlm_bias);
  if (!params.config.tie_mlm) zero(z.mlm_dec, params.mlm_dec);
  return z;
}

template <typename From, typename To>
EncoderParams<To> cast_params(const EncoderParams<From>& params) {
  EncoderParams<To> out;
  out.config = params.config;
  auto src = params.named_tensors();
  // Allocate by mirroring shapes.
  out.tok_emb.resize(params.tok_emb.rows(), params.tok_emb.cols());
  out.pos_emb.resize(params.pos_emb.rows(), params.pos_emb.cols());
  out.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& s = params.layers[l];
    auto& d = out.layers[l];
    auto sized = [](Mat<To>& m, const Mat<From>& ref) { m.resize(ref.rows(), ref.cols()); };
    sized(d.ln1_g, s.ln1_g);
    sized(d.ln1_b, s.ln1_b);
    sized(d.attn.wq, s.attn.wq);
    sized(d.attn.bq, s.attn.bq);
    sized(d.attn.wk, s.attn.wk);
    sized(d.attn.bk, s.attn.bk);
    sized(d.attn.wv, s.attn.wv);
    sized(d.attn.bv, s.attn.bv);
    sized(d.attn.wo, s.attn.wo);
    sized(d.attn.bo, s.attn.bo);
    sized(d.ln2_g, s.ln2_g);
    sized(d.ln2_b, s.ln2_b);
    sized(d.w1, s.w1);
    sized(d.b1, s.b1);
    sized(d.w2, s.w2);
    sized(d.b2, s.b2);
  }
  auto sized = [](Mat<To>& m, const Mat<From>& ref) { m.resize(ref.rows(), ref.cols()); };
  sized(out.lnf_g, params.lnf_g);
  sized(out.lnf_b, params.lnf_b);
  sized(out.head_w1, params.head_w1);
  sized(out.head_b1, params.head_b1);
  sized(out.head_w2, params.head_w2);
  sized(out.head_b2, params.head_b2);
  sized(out.mlm_w, params.mlm_w);
  sized(out.mlm_b, params.mlm_b);
  sized(out.mlm_ln_g, params.mlm_ln_g);
  sized(out.mlm_ln_b, params.mlm_ln_b);
  sized(out.mlm_bias, params.mlm_bias);
  if (!params.config.tie_mlm) sized(out.mlm_dec, params.mlm_dec);

  auto dst = out.named_tensors();
  for (std::size_t i = 0; i < src.size(); ++i) {
    *dst[i].second = src[i].second->template cast<To>();
  }
  return out;
}

template <typename S>
void EncoderParams<S>::save(const std::string& path) const {
  TensorFile file;
  file.config_json = config.to_json();
  for (const auto& [name, tensor] : named_tensors()) {
    NamedTensor nt;
    nt.name = name;
    nt.dims = {static_cast<std::uint32_t>(tensor->rows()), static_cast<std::uint32_t>(tensor->cols())};
    nt.data.resize(static_cast<std::size_t>(tensor->size()));
    Eigen::Map<MatF>(nt.data.data(), tensor->rows(), tensor->cols()) = tensor->template cast<float>();
    file.tensors.push_back(std::move(nt));
  }
  write_tensor_file(path, file);
}

template <typename S>
EncoderParams<S> EncoderParams<S>::load(const std::string& path) {
  TensorFile file = read_tensor_file(path);
  EncoderConfig cfg = EncoderConfig::from_json(file.config_json);
  EncoderParams<S> params = init_encoder_params<S>(cfg, 0);
  for (auto& [name, tensor] : params.named_tensors()) {
    const NamedTensor& nt = file.find(name);
    if (nt.dims.size() != 2 || static_cast<Eigen::Index>(nt.dims[0]) != tensor->rows() ||
        static_cast<Eigen::Index>(nt.dims[1]) != tensor->cols()) {
      throw DataError(path + ": tensor '" + name + "' has unexpected shape");
    }
    *tensor = Eigen::Map<const MatF>(nt.data.data(), tensor->rows(), tensor->cols()).cast<S>();
  }
  return params;
}

// ---------------------------------------------------------------------------
// Primitives

template <typename S>
void softmax_rows(Mat<S>& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    S max_val = -std::numeric_limits<S>::infinity();
    for (Eigen::Index c = 0; c < m.cols(); ++c) max_val = std::max(max_val, m(r, c));
    S sum = 0;
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      S e = std::isinf(m(r, c)) && m(r, c) < 0 ? S(0) : std::exp(m(r, c) - max_val);
      m(r, c) = e;
      sum += e;
    }
    m.row(r) /= sum;
  }
}

template <typename S>
Mat<S> layer_norm_forward(const Mat<S>& x, const Mat<S>& gain, const Mat<S>& bias,
                          Vec<S>& mu, Vec<S>& inv_std) {
  const Eigen::Index n = x.cols();
  mu.resize(x.rows());
  inv_std.resize(x.rows());
  Mat<S> y(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S mean = x.row(r).mean();
    const S var = (x.row(r).array() - mean).square().sum() / static_cast<S>(n);
    const S is = S(1) / std::sqrt(var + S(kLnEps));
    mu(r) = mean;
    inv_std(r) = is;
    y.row(r) = ((x.row(r).array() - mean) * is) * gain.row(0).array() + bias.row(0).array();
  }
  return y;
}

template <typename S>
Mat<S> layer_norm_backward(const Mat<S>& dy, const Mat<S>& x, const Mat<S>& gain,
                           const Vec<S>& mu, const Vec<S>& inv_std, Mat<S>& d_gain,
                           Mat<S>& d_bias) {
  const Eigen::Index n = x.cols();
  Mat<S> dx(x.rows(), n);
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const S is = inv_std(r);
    Eigen::Array<S, 1, Eigen::Dynamic> xhat = (x.row(r).array() - mu(r)) * is;
    Eigen::Array<S, 1, Eigen::Dynamic> dyh = dy.row(r).array() * gain.row(0).array();
    d_gain.row(0).array() += dy.row(r).array() * xhat;
    d_bias.row(0).array() += dy.row(r).array();
    const S m1 = dyh.sum() / static_cast<S>(n);
    const S m2 = (dyh * xhat).sum() / static_cast<S>(n);
    dx.row(r) = (is * (dyh - m1 - xhat * m2)).matrix();
  }
  return dx;
}

template <typename S>
Mat<S> multi_head_attention(const Mat<S>& x, const std::vector<std::uint8_t>& mask,
                            const AttentionParams<S>& attn, std::int32_t heads) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  if (!mask.empty() && static_cast<Eigen::Index>(mask.size()) != n) {
    throw DataError("attention mask length does not match sequence length");
  }
  Mat<S> q = (x * attn.wq).rowwise() + attn.bq.row(0);
  Mat<S> k = (x * attn.wk).rowwise() + attn.bk.row(0);
  Mat<S> v = (x * attn.wv).rowwise() + attn.bv.row(0);
  Mat<S> concat(n, d);
  for (std::int32_t h = 0; h < heads; ++h) {
    auto qh = q.middleCols(h * dh, dh);
    auto kh = k.middleCols(h * dh, dh);
    auto vh = v.middleCols(h * dh, dh);
    Mat<S> logits = qh * kh.transpose() * scale;
    if (!mask.empty()) {
      for (Eigen::Index key = 0; key < n; ++key) {
        if (!mask[static_cast<std::size_t>(key)]) {
          logits.col(key).setConstant(-std::numeric_limits<S>::infinity());
        }
      }
    }
    softmax_rows(logits);
    concat.middleCols(h * dh, dh) = logits * vh;
  }
  return (concat * attn.wo).rowwise() + attn.bo.row(0);
}

// ---------------------------------------------------------------------------
// Forward

namespace {

template <typename S>
Mat<S> make_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Mat<S> mask(rows, cols);
  const S keep_scale = S(1.0 / (1.0 - rate));
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      mask(i, j) = rng.uniform() < rate ? S(0) : keep_scale;
    }
  }
  return mask;
}

// Linear layers run one sequence block at a time. A packed whole-batch GEMM
// would round differently depending on a row's position in the batch, losing
// bitwise batch-order invariance of the per-sequence outputs.
template <typename S>
Mat<S> linear_per_seq(const Mat<S>& x, const Mat<S>& w, const Mat<S>& b,
                      const std::vector<std::int32_t>& offsets,
                      const std::vector<std::int32_t>& lens) {
  Mat<S> out(x.rows(), w.cols());
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    const Eigen::Index o = offsets[s];
    const Eigen::Index n = lens[s];
    out.middleRows(o, n).noalias() = x.middleRows(o, n) * w;
    out.middleRows(o, n).rowwise() += b.row(0);
  }
  return out;
}

// dW += X^T dY, db += colsum(dY), returns dX = dY W^T; per-sequence blocks.
template <typename S>
Mat<S> linear_backward_per_seq(const Mat<S>& d_out, const Mat<S>& x, const Mat<S>& w,
                               const std::vector<std::int32_t>& offsets,
                               const std::vector<std::int32_t>& lens, Mat<S>& d_w, Mat<S>& d_b) {
  Mat<S> d_x(x.rows(), x.cols());
  for (std::size_t s = 0; s < offsets.size(); ++s) {
    const Eigen::Index o = offsets[s];
    const Eigen::Index n = lens[s];
    d_w.noalias() += x.middleRows(o, n).transpose() * d_out.middleRows(o, n);
    d_b += d_out.middleRows(o, n).colwise().sum();
    d_x.middleRows(o, n).noalias() = d_out.middleRows(o, n) * w.transpose();
  }
  return d_x;
}

// Attention over packed sequences; probs recorded per sequence when tracing.
template <typename S>
void attention_block(const EncoderParams<S>& params, std::size_t layer_idx, const Mat<S>& x,
                     const std::vector<std::int32_t>& offsets, const std::vector<std::int32_t>& lens,
                     LayerTrace<S>* trace, Mat<S>& out) {
  const auto& attn = params.layers[layer_idx].attn;
  const Eigen::Index d = params.config.hidden;
  const std::int32_t heads = params.config.heads;
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));

  Mat<S> q = linear_per_seq(x, attn.wq, attn.bq, offsets, lens);
  Mat<S> k = linear_per_seq(x, attn.wk, attn.bk, offsets, lens);
  Mat<S> v = linear_per_seq(x, attn.wv, attn.bv, offsets, lens);
  Mat<S> concat(x.rows(), d);
  std::vector<Mat<S>> probs;
  if (trace) probs.resize(offsets.size());

  for (std::size_t s = 0; s < offsets.size(); ++s) {
    const Eigen::Index o = offsets[s];
    const Eigen::Index n = lens[s];
    if (trace) probs[s].resize(heads * n, n);
    for (std::int32_t h = 0; h < heads; ++h) {
      auto qh = q.block(o, h * dh, n, dh);
      auto kh = k.block(o, h * dh, n, dh);
      auto vh = v.block(o, h * dh, n, dh);
      Mat<S> logits = qh * kh.transpose() * scale;
      softmax_rows(logits);
      concat.block(o, h * dh, n, dh) = logits * vh;
      if (trace) probs[s].middleRows(h * n, n) = logits;
    }
  }
  out = linear_per_seq(concat, attn.wo, attn.bo, offsets, lens);
  if (trace) {
    trace->q = std::move(q);
    trace->k = std::move(k);
    trace->v = std::move(v);
    trace->attn_concat = std::move(concat);
    trace->probs = std::move(probs);
  }
}

template <typename S>
void ffn_block(const EncoderParams<S>& params, std::size_t layer_idx, const Mat<S>& x,
               const std::vector<std::int32_t>& offsets, const std::vector<std::int32_t>& lens,
               LayerTrace<S>* trace, Mat<S>& out) {
  const auto& lay = params.layers[layer_idx];
  Mat<S> pre = linear_per_seq(x, lay.w1, lay.b1, offsets, lens);
  Mat<S> act = pre.unaryExpr([](S v) { return gelu(v); });
  out = linear_per_seq(act, lay.w2, lay.b2, offsets, lens);
  if (trace) {
    trace->ffn_pre = std::move(pre);
    trace->ffn_act = std::move(act);
  }
}

}  // namespace

template <typename S>
EncoderOutput<S> encoder_forward(const EncoderParams<S>& params,
                                 const std::vector<TokenSequence>& batch,
                                 const ForwardOptions<S>& options) {
  const auto& cfg = params.config;
  const Eigen::Index d = cfg.hidden;
  const bool training = options.training;
  const bool use_dropout = training && cfg.dropout > 0.0 && options.dropout_rng != nullptr;

  EncoderOutput<S> result;
  result.offsets.reserve(batch.size());
  result.lens.reserve(batch.size());
  Eigen::Index total = 0;
  for (const auto& seq : batch) {
    if (seq.true_len < 1) throw DataError("sequence without [CLS] token");
    if (static_cast<std::int32_t>(seq.ids.size()) < seq.true_len) {
      throw DataError("sequence ids shorter than true_len");
    }
    if (seq.true_len > cfg.max_len) throw DataError("sequence longer than encoder max_len");
    result.offsets.push_back(static_cast<std::int32_t>(total));
    result.lens.push_back(seq.true_len);
    total += seq.true_len;
  }

  auto trace = training ? std::make_unique<EncoderTrace<S>>() : nullptr;
  if (trace) {
    trace->training = true;
    trace->offsets = result.offsets;
    trace->lens = result.lens;
    trace->ids.resize(batch.size());
  }

  // Token + positional embeddings, pads trimmed away.
  Mat<S> emb(total, d);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const Eigen::Index o = result.offsets[s];
    const Eigen::Index n = result.lens[s];
    for (Eigen::Index t = 0; t < n; ++t) {
      const std::int32_t id = batch[s].ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= cfg.vocab) throw DataError("token id out of vocab range");
      emb.row(o + t) = params.tok_emb.row(id) + params.pos_emb.row(t);
    }
    if (trace) {
      trace->ids[s].assign(batch[s].ids.begin(), batch[s].ids.begin() + result.lens[s]);
    }
  }
  if (trace) trace->emb_sum = emb;

  Mat<S> x;
  if (!cfg.pre_norm) {
    Vec<S> mu, is;
    x = layer_norm_forward(emb, params.lnf_g, params.lnf_b, mu, is);
    if (trace) {
      trace->emb_ln_mu = std::move(mu);
      trace->emb_ln_is = std::move(is);
    }
  } else {
    x = std::move(emb);
  }
  if (use_dropout) {
    Mat<S> mask = make_dropout_mask<S>(x.rows(), x.cols(), cfg.dropout, *options.dropout_rng);
    x = x.cwiseProduct(mask);
    if (trace) trace->emb_drop_mask = std::move(mask);
  }
  if (trace) trace->x0 = x;

  if (trace) trace->layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lay = params.layers[l];
    LayerTrace<S>* lt = trace ? &trace->layers[l] : nullptr;
    if (lt) lt->x_in = x;
    Mat<S> attn_out;
    if (cfg.pre_norm) {
      Vec<S> mu, is;
      Mat<S> normed = layer_norm_forward(x, lay.ln1_g, lay.ln1_b, mu, is);
      if (lt) {
        lt->ln1_out = normed;
        lt->ln1_mu = std::move(mu);
        lt->ln1_is = std::move(is);
      }
      attention_block(params, l, normed, result.offsets, result.lens, lt, attn_out);
      if (use_dropout) {
        Mat<S> mask = make_dropout_mask<S>(attn_out.rows(), attn_out.cols(), cfg.dropout,
                                           *options.dropout_rng);
        attn_out = attn_out.cwiseProduct(mask);
        if (lt) lt->attn_drop_mask = std::move(mask);
      }
      x += attn_out;
      if (lt) lt->x_mid = x;
      Vec<S> mu2, is2;
      Mat<S> normed2 = layer_norm_forward(x, lay.ln2_g, lay.ln2_b, mu2, is2);
      if (lt) {
        lt->ln2_out = normed2;
        lt->ln2_mu = std::move(mu2);
        lt->ln2_is = std::move(is2);
      }
      Mat<S> ffn_out;
      ffn_block(params, l, normed2, result.offsets, result.lens, lt, ffn_out);
      if (use_dropout) {
        Mat<S> mask = make_dropout_mask<S>(ffn_out.rows(), ffn_out.cols(), cfg.dropout,
                                           *options.dropout_rng);
        ffn_out = ffn_out.cwiseProduct(mask);
        if (lt) lt->ffn_drop_mask = std::move(mask);
      }
      x += ffn_out;
    } else {
      attention_block(params, l, x, result.offsets, result.lens, lt, attn_out);
      if (use_dropout) {
        Mat<S> mask = make_dropout_mask<S>(attn_out.rows(), attn_out.cols(), cfg.dropout,
                                           *options.dropout_rng);
        attn_out = attn_out.cwiseProduct(mask);
        if (lt) lt->attn_drop_mask = std::move(mask);
      }
      Mat<S> sum1 = x + attn_out;
      Vec<S> mu, is;
      x = layer_norm_forward(sum1, lay.ln1_g, lay.ln1_b, mu, is);
      if (lt) {
        lt->post_sum1 = std::move(sum1);
        lt->ln1_out = x;
        lt->ln1_mu = std::move(mu);
        lt->ln1_is = std::move(is);
      }
      Mat<S> ffn_out;
      ffn_block(params, l, x, result.offsets, result.lens, lt, ffn_out);
      if (use_dropout) {
        Mat<S> mask = make_dropout_mask<S>(ffn_out.rows(), ffn_out.cols(), cfg.dropout,
                                           *options.dropout_rng);
        ffn_out = ffn_out.cwiseProduct(mask);
        if (lt) lt->ffn_drop_mask = std::move(mask);
      }
      Mat<S> sum2 = x + ffn_out;
      Vec<S> mu2, is2;
      x = layer_norm_forward(sum2, lay.ln2_g, lay.ln2_b, mu2, is2);
      if (lt) {
        lt->post_sum2 = std::move(sum2);
        lt->ln2_out = x;
        lt->ln2_mu = std::move(mu2);
        lt->ln2_is = std::move(is2);
      }
    }
  }

  if (trace) trace->x_last = x;
  Mat<S> h;
  if (cfg.pre_norm) {
    Vec<S> mu, is;
    h = layer_norm_forward(x, params.lnf_g, params.lnf_b, mu, is);
    if (trace) {
      trace->lnf_mu = std::move(mu);
      trace->lnf_is = std::move(is);
    }
  } else {
    h = std::move(x);
  }

  // [CLS] pooling + MLP head, row-at-a-time for batch-position invariance.
  const Eigen::Index b_count = static_cast<Eigen::Index>(batch.size());
  Mat<S> cls(b_count, d);
  Mat<S> pre(b_count, d);
  Mat<S> th(b_count, d);
  result.embeddings.resize(b_count, cfg.embed_dim);
  for (Eigen::Index s = 0; s < b_count; ++s) {
    cls.row(s) = h.row(result.offsets[static_cast<std::size_t>(s)]);
    pre.row(s) = cls.row(s) * params.head_w1 + params.head_b1.row(0);
    th.row(s) = pre.row(s).unaryExpr([](S v) { return std::tanh(v); });
    result.embeddings.row(s) = th.row(s) * params.head_w2 + params.head_b2.row(0);
  }

  if (trace) {
    trace->h_final = h;
    trace->cls_rows = std::move(cls);
    trace->head_pre = std::move(pre);
    trace->head_tanh = std::move(th);
    result.trace = std::move(trace);
  }
  result.token_outputs = std::move(h);
  return result;
}

template <typename S>
Mat<S> encode(const EncoderParams<S>& params, const std::vector<TokenSequence>& batch) {
  ForwardOptions<S> options;
  return encoder_forward(params, batch, options).embeddings;
}

// ---------------------------------------------------------------------------
// Backward

template <typename S>
void encoder_backward(const EncoderParams<S>& params, const EncoderTrace<S>& trace,
                      const Mat<S>& d_embeddings, const Mat<S>& d_token_outputs,
                      EncoderParams<S>& grads) {
  if (!trace.training) throw NumericError("encoder_backward called without a recorded forward");
  const auto& cfg = params.config;
  const Eigen::Index d = cfg.hidden;
  const std::int32_t heads = cfg.heads;
  const Eigen::Index dh = d / heads;
  const S scale = S(1) / std::sqrt(static_cast<S>(dh));
  const Eigen::Index total = trace.h_final.rows();
  const Eigen::Index b_count = static_cast<Eigen::Index>(trace.offsets.size());

  Mat<S> dh_final = Mat<S>::Zero(total, d);
  if (d_token_outputs.size() > 0) {
    if (d_token_outputs.rows() != total || d_token_outputs.cols() != d) {
      throw NumericError("d_token_outputs shape mismatch");
    }
    dh_final = d_token_outputs;
  }

  if (d_embeddings.size() > 0) {
    if (d_embeddings.rows() != b_count || d_embeddings.cols() != cfg.embed_dim) {
      throw NumericError("d_embeddings shape mismatch");
    }
    // Head: e = tanh(cls*W1 + b1)*W2 + b2.
    grads.head_w2 += trace.head_tanh.transpose() * d_embeddings;
    grads.head_b2 += d_embeddings.colwise().sum();
    Mat<S> dth = d_embeddings * params.head_w2.transpose();
    Mat<S> dpre = dth.cwiseProduct(
        trace.head_tanh.unaryExpr([](S v) { return S(1) - v * v; }));
    grads.head_w1 += trace.cls_rows.transpose() * dpre;
    grads.head_b1 += dpre.colwise().sum();
    Mat<S> dcls = dpre * params.head_w1.transpose();
    for (Eigen::Index s = 0; s < b_count; ++s) {
      dh_final.row(trace.offsets[static_cast<std::size_t>(s)]) += dcls.row(s);
    }
  }

  Mat<S> dx;
  if (cfg.pre_norm) {
    dx = layer_norm_backward(dh_final, trace.x_last, params.lnf_g, trace.lnf_mu, trace.lnf_is,
                             grads.lnf_g, grads.lnf_b);
  } else {
    dx = std::move(dh_final);
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& lay = params.layers[li];
    auto& glay = grads.layers[li];
    const auto& lt = trace.layers[li];

    auto attention_backward = [&](const Mat<S>& d_attn_out, const Mat<S>& attn_in,
                                  Mat<S>& d_attn_in) {
      // out = concat * wo + bo
      Mat<S> dconcat = linear_backward_per_seq(d_attn_out, lt.attn_concat, lay.attn.wo,
                                               trace.offsets, trace.lens, glay.attn.wo,
                                               glay.attn.bo);
      Mat<S> dq = Mat<S>::Zero(total, d);
      Mat<S> dk = Mat<S>::Zero(total, d);
      Mat<S> dv = Mat<S>::Zero(total, d);
      for (std::size_t s = 0; s < trace.offsets.size(); ++s) {
        const Eigen::Index o = trace.offsets[s];
        const Eigen::Index n = trace.lens[s];
        for (std::int32_t h = 0; h < heads; ++h) {
          auto probs = lt.probs[s].middleRows(h * n, n);
          auto qh = lt.q.block(o, h * dh, n, dh);
          auto kh = lt.k.block(o, h * dh, n, dh);
          auto vh = lt.v.block(o, h * dh, n, dh);
          auto d_out_h = dconcat.block(o, h * dh, n, dh);
          Mat<S> d_probs = d_out_h * vh.transpose();
          dv.block(o, h * dh, n, dh) += probs.transpose() * d_out_h;
          // softmax rows backward
          Mat<S> d_logits(n, n);
          for (Eigen::Index r = 0; r < n; ++r) {
            const S dot = d_probs.row(r).cwiseProduct(probs.row(r)).sum();
            d_logits.row(r) =
                (probs.row(r).array() * (d_probs.row(r).array() - dot) * scale).matrix();
          }
          dq.block(o, h * dh, n, dh) += d_logits * kh;
          dk.block(o, h * dh, n, dh) += d_logits.transpose() * qh;
        }
      }
      d_attn_in =
          linear_backward_per_seq(dq, attn_in, lay.attn.wq, trace.offsets, trace.lens,
                                  glay.attn.wq, glay.attn.bq) +
          linear_backward_per_seq(dk, attn_in, lay.attn.wk, trace.offsets, trace.lens,
                                  glay.attn.wk, glay.attn.bk) +
          linear_backward_per_seq(dv, attn_in, lay.attn.wv, trace.offsets, trace.lens,
                                  glay.attn.wv, glay.attn.bv);
    };

    auto ffn_backward = [&](const Mat<S>& d_ffn_out, const Mat<S>& ffn_in, Mat<S>& d_ffn_in) {
      Mat<S> dact = linear_backward_per_seq(d_ffn_out, lt.ffn_act, lay.w2, trace.offsets,
                                            trace.lens, glay.w2, glay.b2);
      Mat<S> dpre = dact.cwiseProduct(lt.ffn_pre.unaryExpr([](S v) { return gelu_grad(v); }));
      d_ffn_in = linear_backward_per_seq(dpre, ffn_in, lay.w1, trace.offsets, trace.lens,
                                         glay.w1, glay.b1);
    };

    if (cfg.pre_norm) {
      // x_out = x_mid + drop(ffn(ln2(x_mid)))
      Mat<S> d_ffn_out = dx;
      if (lt.ffn_drop_mask.size() > 0) d_ffn_out = d_ffn_out.cwiseProduct(lt.ffn_drop_mask);
      Mat<S> d_ln2;
      ffn_backward(d_ffn_out, lt.ln2_out, d_ln2);
      Mat<S> d_mid = dx + layer_norm_backward(d_ln2, lt.x_mid, lay.ln2_g, lt.ln2_mu, lt.ln2_is,
                                              glay.ln2_g, glay.ln2_b);
      // x_mid = x_in + drop(attn(ln1(x_in)))
      Mat<S> d_attn_out = d_mid;
      if (lt.attn_drop_mask.size() > 0) d_attn_out = d_attn_out.cwiseProduct(lt.attn_drop_mask);
      Mat<S> d_ln1;
      attention_backward(d_attn_out, lt.ln1_out, d_ln1);
      dx = d_mid + layer_norm_backward(d_ln1, lt.x_in, lay.ln1_g, lt.ln1_mu, lt.ln1_is,
                                       glay.ln1_g, glay.ln1_b);
    } else {
      // x_out = LN2(y1 + drop(ffn(y1))), y1 = LN1(x_in + drop(attn(x_in)))
      Mat<S> d_sum2 = layer_norm_backward(dx, lt.post_sum2, lay.ln2_g, lt.ln2_mu, lt.ln2_is,
                                          glay.ln2_g, glay.ln2_b);
      Mat<S> d_ffn_out = d_sum2;
      if (lt.ffn_drop_mask.size() > 0) d_ffn_out = d_ffn_out.cwiseProduct(lt.ffn_drop_mask);
      Mat<S> d_y1_from_ffn;
      ffn_backward(d_ffn_out, lt.ln1_out, d_y1_from_ffn);
      Mat<S> d_y1 = d_sum2 + d_y1_from_ffn;
      Mat<S> d_sum1 = layer_norm_backward(d_y1, lt.post_sum1, lay.ln1_g, lt.ln1_mu, lt.ln1_is,
                                          glay.ln1_g, glay.ln1_b);
      Mat<S> d_attn_out = d_sum1;
      if (lt.attn_drop_mask.size() > 0) d_attn_out = d_attn_out.cwiseProduct(lt.attn_drop_mask);
      Mat<S> d_attn_in;
      attention_backward(d_attn_out, lt.x_in, d_attn_in);
      dx = d_sum1 + d_attn_in;
    }
  }

  // Embedding pipeline backward.
  if (trace.emb_drop_mask.size() > 0) dx = dx.cwiseProduct(trace.emb_drop_mask);
  if (!cfg.pre_norm) {
    dx = layer_norm_backward(dx, trace.emb_sum, params.lnf_g, trace.emb_ln_mu, trace.emb_ln_is,
                             grads.lnf_g, grads.lnf_b);
  }
  for (std::size_t s = 0; s < trace.offsets.size(); ++s) {
    const Eigen::Index o = trace.offsets[s];
    const Eigen::Index n = trace.lens[s];
    for (Eigen::Index t = 0; t < n; ++t) {
      grads.tok_emb.row(trace.ids[s][static_cast<std::size_t>(t)]) += dx.row(o + t);
      grads.pos_emb.row(t) += dx.row(o + t);
    }
  }
}

// ---------------------------------------------------------------------------
// Explicit instantiations

template struct EncoderParams<float>;
template struct EncoderParams<double>;

template EncoderParams<float> init_encoder_params<float>(const EncoderConfig&, std::uint64_t);
template EncoderParams<double> init_encoder_params<double>(const EncoderConfig&, std::uint64_t);

template EncoderParams<float> zeros_like<float>(const EncoderParams<float>&);
template EncoderParams<double> zeros_like<double>(const EncoderParams<double>&);

template EncoderParams<double> cast_params<float, double>(const EncoderParams<float>&);
template EncoderParams<float> cast_params<double, float>(const EncoderParams<double>&);
template EncoderParams<float> cast_params<float, float>(const EncoderParams<float>&);
template EncoderParams<double> cast_params<double, double>(const EncoderParams<double>&);

template void softmax_rows<float>(Mat<float>&);
template void softmax_rows<double>(Mat<double>&);

template Mat<float> layer_norm_forward<float>(const Mat<float>&, const Mat<float>&,
                                              const Mat<float>&, Vec<float>&, Vec<float>&);
template Mat<double> layer_norm_forward<double>(const Mat<double>&, const Mat<double>&,
                                                const Mat<double>&, Vec<double>&, Vec<double>&);

template Mat<float> layer_norm_backward<float>(const Mat<float>&, const Mat<float>&,
                                               const Mat<float>&, const Vec<float>&,
                                               const Vec<float>&, Mat<float>&, Mat<float>&);
template Mat<double> layer_norm_backward<double>(const Mat<double>&, const Mat<double>&,
                                                 const Mat<double>&, const Vec<double>&,
                                                 const Vec<double>&, Mat<double>&, Mat<double>&);

template Mat<float> multi_head_attention<float>(const Mat<float>&, const std::vector<std::uint8_t>&,
                                                const AttentionParams<float>&, std::int32_t);
template Mat<double> multi_head_attention<double>(const Mat<double>&,
                                                  const std::vector<std::uint8_t>&,
                                                  const AttentionParams<double>&, std::int32_t);

template EncoderOutput<float> encoder_forward<float>(const EncoderParams<float>&,
                                                     const std::vector<TokenSequence>&,
                                                     const ForwardOptions<float>&);
template EncoderOutput<double> encoder_forward<double>(const EncoderParams<double>&,
                                                       const std::vector<TokenSequence>&,
                                                       const ForwardOptions<double>&);

template Mat<float> encode<float>(const EncoderParams<float>&, const std::vector<TokenSequence>&);
template Mat<double> encode<double>(const EncoderParams<double>&,
                                    const std::vector<TokenSequence>&);

template void encoder_backward<float>(const EncoderParams<float>&, const EncoderTrace<float>&,
                                      const Mat<float>&, const Mat<float>&, EncoderParams<float>&);
template void encoder_backward<double>(const EncoderParams<double>&, const EncoderTrace<double>&,
                                       const Mat<double>&, const Mat<double>&,
                                       EncoderParams<double>&);

}  // namespace textrec
