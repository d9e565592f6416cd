#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "textrec/common.hpp"
#include "textrec/encoder.hpp"
#include "textrec/rng.hpp"
#include "textrec/tokenizer.hpp"

using namespace textrec;

namespace {

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 16;
  cfg.heads = 2;
  cfg.ffn = 64;
  cfg.vocab = 64;
  cfg.max_len = 16;
  cfg.embed_dim = 16;
  cfg.dropout = 0.0;
  return cfg;
}

TokenSequence make_seq(std::initializer_list<std::int32_t> word_ids, std::int32_t max_len) {
  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
  seq.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
  seq.ids[0] = Vocab::kCls;
  std::int32_t pos = 1;
  for (auto id : word_ids) seq.ids[static_cast<std::size_t>(pos++)] = id;
  seq.true_len = pos;
  for (std::int32_t j = 0; j < pos; ++j) seq.attention_mask[static_cast<std::size_t>(j)] = 1;
  return seq;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

TEST_SUITE_BEGIN("encoder");

TEST_CASE("presets carry the published sizes") {
  auto base = EncoderConfig::preset("base");
  CHECK(base.layers == 12);
  CHECK(base.hidden == 768);
  CHECK(base.heads == 12);
  auto small = EncoderConfig::preset("small");
  CHECK(small.layers == 6);
  CHECK(small.hidden == 768);
  CHECK(small.heads == 12);
  auto large = EncoderConfig::preset("large");
  CHECK(large.layers == 24);
  CHECK(large.hidden == 1024);
  CHECK(large.heads == 16);
  CHECK_THROWS_AS(EncoderConfig::preset("huge"), DataError);
}

TEST_CASE("hidden size must divide by heads") {
  EncoderConfig cfg = tiny_config();
  cfg.heads = 3;
  CHECK_THROWS_AS(init_encoder_params<double>(cfg, 1), DataError);
}

TEST_CASE("same seed gives bit-identical parameters") {
  auto a = init_encoder_params<double>(tiny_config(), 7);
  auto b = init_encoder_params<double>(tiny_config(), 7);
  auto ta = a.named_tensors();
  auto tb = b.named_tensors();
  REQUIRE(ta.size() == tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    CHECK(ta[i].second->isApprox(*tb[i].second, 0.0));
  }
  auto c = init_encoder_params<double>(tiny_config(), 8);
  CHECK_FALSE(c.tok_emb.isApprox(a.tok_emb, 0.0));
}

TEST_CASE("tiny parameter count equals the closed-form shape sum") {
  EncoderConfig cfg = tiny_config();
  auto params = init_encoder_params<float>(cfg, 3);
  const std::int64_t V = cfg.vocab, d = cfg.hidden, L = cfg.layers, f = cfg.ffn,
                     m = cfg.max_len, e = cfg.embed_dim;
  // Embeddings + per layer (2 LN pairs + 4 projections with bias + FFN) +
  // final LN + pooled head + MLM head (decoder tied).
  const std::int64_t per_layer = 2 * (2 * d) + 4 * (d * d + d) + (d * f + f) + (f * d + d);
  const std::int64_t expect = V * d + m * d + L * per_layer + 2 * d + (d * d + d) +
                              (d * e + e) + (d * d + d) + 2 * d + V;
  CHECK(params.parameter_count() == expect);
}

TEST_CASE("single-token attention reduces to the value projection") {
  Rng rng(5);
  const std::int32_t d = 8, heads = 2;
  AttentionParams<double> attn;
  auto fill = [&rng](Mat<double>& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
  };
  fill(attn.wq, d, d);
  fill(attn.bq, 1, d);
  fill(attn.wk, d, d);
  fill(attn.bk, 1, d);
  fill(attn.wv, d, d);
  fill(attn.bv, 1, d);
  fill(attn.wo, d, d);
  fill(attn.bo, 1, d);

  Mat<double> x(1, d);
  for (Eigen::Index j = 0; j < d; ++j) x(0, j) = rng.uniform(-1, 1);
  Mat<double> out = multi_head_attention(x, {}, attn, heads);
  Mat<double> v = (x * attn.wv).rowwise() + attn.bv.row(0);
  Mat<double> expect = (v * attn.wo).rowwise() + attn.bo.row(0);
  CHECK(out.isApprox(expect, 1e-12));
}

TEST_CASE("identical tokens produce identical attention rows") {
  Rng rng(6);
  const std::int32_t d = 8;
  AttentionParams<double> attn;
  auto fill = [&rng](Mat<double>& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
  };
  fill(attn.wq, d, d);
  fill(attn.bq, 1, d);
  fill(attn.wk, d, d);
  fill(attn.bk, 1, d);
  fill(attn.wv, d, d);
  fill(attn.bv, 1, d);
  fill(attn.wo, d, d);
  fill(attn.bo, 1, d);

  Mat<double> x(2, d);
  for (Eigen::Index j = 0; j < d; ++j) x(0, j) = x(1, j) = rng.uniform(-1, 1);
  Mat<double> out = multi_head_attention(x, {}, attn, 2);
  CHECK(out.row(0).isApprox(out.row(1), 1e-12));
}

TEST_CASE("single-head attention matches a direct formula evaluation") {
  Rng rng(9);
  const std::int32_t n = 3, d = 4;
  AttentionParams<double> attn;
  auto fill = [&rng](Mat<double>& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
  };
  fill(attn.wq, d, d);
  fill(attn.bq, 1, d);
  fill(attn.wk, d, d);
  fill(attn.bk, 1, d);
  fill(attn.wv, d, d);
  fill(attn.bv, 1, d);
  fill(attn.wo, d, d);
  fill(attn.bo, 1, d);
  Mat<double> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.uniform(-1, 1);

  Mat<double> out = multi_head_attention(x, {}, attn, 1);

  // Direct evaluation: softmax(Q K^T / sqrt(d)) V, then output projection.
  Mat<double> q = (x * attn.wq).rowwise() + attn.bq.row(0);
  Mat<double> k = (x * attn.wk).rowwise() + attn.bk.row(0);
  Mat<double> v = (x * attn.wv).rowwise() + attn.bv.row(0);
  Mat<double> expect(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    double weights[3];
    double denom = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      weights[j] = std::exp(q.row(i).dot(k.row(j)) / std::sqrt(static_cast<double>(d)));
      denom += weights[j];
    }
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(d);
    for (Eigen::Index j = 0; j < n; ++j) row += (weights[j] / denom) * v.row(j);
    expect.row(i) = row;
  }
  expect = ((expect * attn.wo).rowwise() + attn.bo.row(0)).eval();
  CHECK((out - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("masked positions cannot influence valid outputs") {
  Rng rng(12);
  const std::int32_t d = 8;
  AttentionParams<double> attn;
  auto fill = [&rng](Mat<double>& m, Eigen::Index r, Eigen::Index c) {
    m.resize(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
      for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.uniform(-1, 1);
  };
  fill(attn.wq, d, d);
  fill(attn.bq, 1, d);
  fill(attn.wk, d, d);
  fill(attn.bk, 1, d);
  fill(attn.wv, d, d);
  fill(attn.bv, 1, d);
  fill(attn.wo, d, d);
  fill(attn.bo, 1, d);

  Mat<double> x(4, d);
  for (Eigen::Index i = 0; i < 4; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = rng.uniform(-1, 1);
  std::vector<std::uint8_t> mask = {1, 1, 0, 0};
  Mat<double> out1 = multi_head_attention(x, mask, attn, 2);
  Mat<double> perturbed = x;
  perturbed.row(2).setConstant(42.0);
  perturbed.row(3).setConstant(-17.0);
  Mat<double> out2 = multi_head_attention(perturbed, mask, attn, 2);
  CHECK(out1.row(0).isApprox(out2.row(0), 1e-12));
  CHECK(out1.row(1).isApprox(out2.row(1), 1e-12));
}

TEST_CASE("identical sequences in a batch encode identically") {
  auto params = init_encoder_params<double>(tiny_config(), 17);
  auto seq = make_seq({5, 9, 12}, 16);
  Mat<double> emb = encode(params, {seq, seq, seq});
  CHECK(emb.row(0).isApprox(emb.row(1), 0.0));
  CHECK(emb.row(1).isApprox(emb.row(2), 0.0));
}

TEST_CASE("padding in the batch cannot leak into other sequences") {
  auto params = init_encoder_params<double>(tiny_config(), 17);
  auto target = make_seq({5, 9, 12}, 16);
  Mat<double> solo = encode(params, {target});

  std::vector<TokenSequence> batch = {target};
  for (int n = 0; n < 7; ++n) batch.push_back(make_seq({static_cast<std::int32_t>(4 + n)}, 16));
  Mat<double> grouped = encode(params, batch);
  CHECK(solo.row(0).isApprox(grouped.row(0), 0.0));

  // Perturbing a pad token id changes nothing.
  TokenSequence tweaked = target;
  tweaked.ids[10] = 33;
  Mat<double> after = encode(params, {tweaked});
  CHECK(solo.row(0).isApprox(after.row(0), 0.0));
}

TEST_CASE("encode is permutation-equivariant over the batch") {
  auto params = init_encoder_params<double>(tiny_config(), 21);
  std::vector<TokenSequence> batch = {make_seq({4, 5}, 16), make_seq({6}, 16),
                                      make_seq({7, 8, 9}, 16)};
  Mat<double> forward_order = encode(params, batch);
  std::vector<TokenSequence> reversed = {batch[2], batch[1], batch[0]};
  Mat<double> reverse_order = encode(params, reversed);
  CHECK(forward_order.row(0).isApprox(reverse_order.row(2), 0.0));
  CHECK(forward_order.row(1).isApprox(reverse_order.row(1), 0.0));
  CHECK(forward_order.row(2).isApprox(reverse_order.row(0), 0.0));
}

TEST_CASE("sequences longer than max_len are rejected") {
  auto params = init_encoder_params<double>(tiny_config(), 2);
  TokenSequence seq;
  seq.ids.assign(32, 5);
  seq.ids[0] = Vocab::kCls;
  seq.attention_mask.assign(32, 1);
  seq.true_len = 32;  // config max_len is 16
  CHECK_THROWS_AS(encode(params, {seq}), DataError);
}

TEST_CASE("tiny forward matches a straight-line reference evaluation") {
  // Reference: independent re-implementation of the pre-norm stack for one
  // sequence, all in long-hand loops.
  EncoderConfig cfg = tiny_config();
  cfg.layers = 1;
  cfg.heads = 1;
  cfg.hidden = 4;
  cfg.ffn = 8;
  cfg.embed_dim = 4;
  cfg.vocab = 16;
  cfg.max_len = 8;
  auto params = init_encoder_params<double>(cfg, 33);
  auto seq = make_seq({3, 7}, 8);
  Mat<double> got = encode(params, {seq});

  const auto d = cfg.hidden;
  auto layer_norm_ref = [&](const Mat<double>& x, const Mat<double>& g, const Mat<double>& b) {
    Mat<double> y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      double mean = 0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
      mean /= static_cast<double>(x.cols());
      double var = 0;
      for (Eigen::Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mean) * (x(r, c) - mean);
      var /= static_cast<double>(x.cols());
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        y(r, c) = g(0, c) * (x(r, c) - mean) / std::sqrt(var + 1e-5) + b(0, c);
      }
    }
    return y;
  };

  Mat<double> x(3, d);
  const std::int32_t ids[3] = {Vocab::kCls, 3, 7};
  for (int t = 0; t < 3; ++t) x.row(t) = params.tok_emb.row(ids[t]) + params.pos_emb.row(t);

  const auto& lay = params.layers[0];
  Mat<double> normed = layer_norm_ref(x, lay.ln1_g, lay.ln1_b);
  Mat<double> q = (normed * lay.attn.wq).rowwise() + lay.attn.bq.row(0);
  Mat<double> k = (normed * lay.attn.wk).rowwise() + lay.attn.bk.row(0);
  Mat<double> v = (normed * lay.attn.wv).rowwise() + lay.attn.bv.row(0);
  Mat<double> attn_out(3, d);
  for (int i = 0; i < 3; ++i) {
    double w[3], denom = 0;
    for (int j = 0; j < 3; ++j) {
      w[j] = std::exp(q.row(i).dot(k.row(j)) / std::sqrt(static_cast<double>(d)));
      denom += w[j];
    }
    Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(d);
    for (int j = 0; j < 3; ++j) row += (w[j] / denom) * v.row(j);
    attn_out.row(i) = row;
  }
  attn_out = ((attn_out * lay.attn.wo).rowwise() + lay.attn.bo.row(0)).eval();
  x += attn_out;
  Mat<double> normed2 = layer_norm_ref(x, lay.ln2_g, lay.ln2_b);
  Mat<double> pre = (normed2 * lay.w1).rowwise() + lay.b1.row(0);
  Mat<double> act = pre.unaryExpr([](double t) { return gelu(t); });
  x += ((act * lay.w2).rowwise() + lay.b2.row(0)).eval();

  Mat<double> h = layer_norm_ref(x, params.lnf_g, params.lnf_b);
  Eigen::RowVectorXd cls = h.row(0);
  Eigen::RowVectorXd hidden = ((cls * params.head_w1) + params.head_b1.row(0))
                                  .unaryExpr([](double t) { return std::tanh(t); });
  Eigen::RowVectorXd expect = (hidden * params.head_w2) + params.head_b2.row(0);

  const double rel = (got.row(0) - expect).norm() / expect.norm();
  CHECK(rel < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact and reproduces outputs") {
  auto params = init_encoder_params<float>(tiny_config(), 41);
  const std::string p1 = "encoder_ckpt_1.ezrc";
  const std::string p2 = "encoder_ckpt_2.ezrc";
  params.save(p1);
  auto loaded = EncoderParams<float>::load(p1);
  loaded.save(p2);
  CHECK(slurp(p1) == slurp(p2));

  auto seq = make_seq({8, 2, 30}, 16);
  Mat<float> before = encode(params, {seq});
  Mat<float> after = encode(loaded, {seq});
  CHECK(before.isApprox(after, 0.0));
  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("every attention row over valid positions sums to one") {
  auto params = init_encoder_params<double>(tiny_config(), 61);
  std::vector<TokenSequence> batch = {make_seq({4, 5, 6, 7}, 16), make_seq({8}, 16),
                                      make_seq({9, 10}, 16)};
  ForwardOptions<double> options;
  options.training = true;
  auto fwd = encoder_forward(params, batch, options);
  REQUIRE(fwd.trace != nullptr);
  for (const auto& layer : fwd.trace->layers) {
    for (const auto& probs : layer.probs) {
      for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        CHECK(std::fabs(probs.row(r).sum() - 1.0) < 1e-6);
        CHECK(probs.row(r).minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("post-norm flag changes the architecture but stays finite") {
  EncoderConfig cfg = tiny_config();
  cfg.pre_norm = false;
  auto params = init_encoder_params<double>(cfg, 50);
  auto seq = make_seq({4, 6, 8}, 16);
  Mat<double> emb = encode(params, {seq});
  CHECK(emb.allFinite());

  EncoderConfig pre_cfg = tiny_config();
  auto pre_params = init_encoder_params<double>(pre_cfg, 50);
  Mat<double> pre_emb = encode(pre_params, {seq});
  CHECK_FALSE(emb.isApprox(pre_emb, 1e-9));
}

TEST_SUITE_END();
