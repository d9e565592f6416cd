#include <doctest.h>

#include <cmath>
#include <functional>

#include "textrec/common.hpp"
#include "textrec/encoder.hpp"
#include "textrec/rng.hpp"
#include "textrec/training.hpp"

using namespace textrec;

namespace {

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

double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-10});
  return std::fabs(a - b) / denom;
}

// Central finite differences over randomly sampled parameter coordinates.
void check_against_fd(EncoderParams<double>& params, const EncoderParams<double>& grads,
                      const std::function<double()>& loss_fn, int samples, double step,
                      double tol, Rng& rng) {
  auto tensors = params.named_tensors();
  auto grad_tensors = const_cast<EncoderParams<double>&>(grads).named_tensors();
  std::int64_t total = 0;
  for (auto& [name, t] : tensors) total += t->size();
  for (int s = 0; s < samples; ++s) {
    std::int64_t flat = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(total)));
    std::size_t which = 0;
    while (flat >= tensors[which].second->size()) {
      flat -= tensors[which].second->size();
      ++which;
    }
    double* coord = tensors[which].second->data() + flat;
    const double analytic = *(grad_tensors[which].second->data() + flat);
    const double saved = *coord;
    *coord = saved + step;
    const double up = loss_fn();
    *coord = saved - step;
    const double down = loss_fn();
    *coord = saved;
    const double fd = (up - down) / (2.0 * step);
    if (std::fabs(analytic) < 1e-12 && std::fabs(fd) < 1e-7) continue;
    INFO("tensor ", tensors[which].first, " coord ", flat, " analytic ", analytic, " fd ", fd);
    CHECK(rel_err(analytic, fd) < tol);
  }
}

}  // namespace

TEST_SUITE_BEGIN("gradients");

TEST_CASE("layer norm backward matches finite differences") {
  Rng rng(3);
  const Eigen::Index rows = 3, cols = 6;
  Mat<double> x(rows, cols), gain(1, cols), bias(1, cols), w(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) {
      x(i, j) = rng.uniform(-2, 2);
      w(i, j) = rng.uniform(-1, 1);
    }
  for (Eigen::Index j = 0; j < cols; ++j) {
    gain(0, j) = rng.uniform(0.5, 1.5);
    bias(0, j) = rng.uniform(-0.5, 0.5);
  }

  auto loss_of = [&]() {
    Vec<double> mu, is;
    return (layer_norm_forward(x, gain, bias, mu, is).cwiseProduct(w)).sum();
  };

  Vec<double> mu, is;
  layer_norm_forward(x, gain, bias, mu, is);
  Mat<double> d_gain = Mat<double>::Zero(1, cols);
  Mat<double> d_bias = Mat<double>::Zero(1, cols);
  Mat<double> dx = layer_norm_backward(w, x, gain, mu, is, d_gain, d_bias);

  const double h = 1e-6;
  for (int s = 0; s < 30; ++s) {
    Eigen::Index i = static_cast<Eigen::Index>(rng.uniform_int(rows));
    Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_int(cols));
    const double saved = x(i, j);
    x(i, j) = saved + h;
    const double up = loss_of();
    x(i, j) = saved - h;
    const double down = loss_of();
    x(i, j) = saved;
    CHECK(rel_err(dx(i, j), (up - down) / (2 * h)) < 1e-6);
  }
  for (Eigen::Index j = 0; j < cols; ++j) {
    const double saved = gain(0, j);
    gain(0, j) = saved + h;
    const double up = loss_of();
    gain(0, j) = saved - h;
    const double down = loss_of();
    gain(0, j) = saved;
    CHECK(rel_err(d_gain(0, j), (up - down) / (2 * h)) < 1e-6);
  }
}

TEST_CASE("gelu gradient matches finite differences") {
  Rng rng(4);
  for (int s = 0; s < 40; ++s) {
    const double x = rng.uniform(-4, 4);
    const double h = 1e-6;
    const double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    CHECK(rel_err(gelu_grad(x), fd) < 1e-6);
  }
}

TEST_CASE("contrastive loss embedding gradients match finite differences") {
  Rng rng(8);
  for (Objective mode : {Objective::kContrastivePaper, Objective::kContrastiveStandard}) {
    const Eigen::Index b = 3, d = 5;
    Mat<double> u(b, d), p(b, d), n(b, d);
    for (Eigen::Index i = 0; i < b; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        u(i, j) = rng.uniform(-1, 1);
        p(i, j) = rng.uniform(-1, 1);
        n(i, j) = rng.uniform(-1, 1);
      }
    auto result = contrastive_loss(u, p, n, 0.2, mode, true);
    const double h = 1e-6;
    for (Mat<double>* m : {&u, &p, &n}) {
      Mat<double>* grad = m == &u ? &result.d_user : (m == &p ? &result.d_pos : &result.d_neg);
      for (int s = 0; s < 15; ++s) {
        Eigen::Index i = static_cast<Eigen::Index>(rng.uniform_int(b));
        Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_int(d));
        const double saved = (*m)(i, j);
        (*m)(i, j) = saved + h;
        const double up = contrastive_loss(u, p, n, 0.2, mode, false).value;
        (*m)(i, j) = saved - h;
        const double down = contrastive_loss(u, p, n, 0.2, mode, false).value;
        (*m)(i, j) = saved;
        CHECK(rel_err((*grad)(i, j), (up - down) / (2 * h)) < 1e-6);
      }
    }
  }
}

TEST_CASE("bpr loss embedding gradients match finite differences") {
  Rng rng(9);
  const Eigen::Index b = 4, d = 6;
  Mat<double> u(b, d), p(b, d), n(b, d);
  for (Eigen::Index i = 0; i < b; ++i)
    for (Eigen::Index j = 0; j < d; ++j) {
      u(i, j) = rng.uniform(-1, 1);
      p(i, j) = rng.uniform(-1, 1);
      n(i, j) = rng.uniform(-1, 1);
    }
  auto result = bpr_loss(u, p, n, 0.1, true);
  const double h = 1e-6;
  for (Mat<double>* m : {&u, &p, &n}) {
    Mat<double>* grad = m == &u ? &result.d_user : (m == &p ? &result.d_pos : &result.d_neg);
    for (int s = 0; s < 12; ++s) {
      Eigen::Index i = static_cast<Eigen::Index>(rng.uniform_int(b));
      Eigen::Index j = static_cast<Eigen::Index>(rng.uniform_int(d));
      const double saved = (*m)(i, j);
      (*m)(i, j) = saved + h;
      const double up = bpr_loss(u, p, n, 0.1, false).value;
      (*m)(i, j) = saved - h;
      const double down = bpr_loss(u, p, n, 0.1, false).value;
      (*m)(i, j) = saved;
      CHECK(rel_err((*grad)(i, j), (up - down) / (2 * h)) < 1e-6);
    }
  }
}

namespace {

EncoderConfig grad_config(bool pre_norm) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 8;
  cfg.heads = 2;
  cfg.ffn = 16;
  cfg.vocab = 32;
  cfg.max_len = 8;
  cfg.embed_dim = 8;
  cfg.dropout = 0.0;
  cfg.pre_norm = pre_norm;
  return cfg;
}

// Contrastive pipeline loss on a fixed 2-triplet batch.
double pipeline_loss(const EncoderParams<double>& params,
                     const std::vector<TokenSequence>& stacked, Objective mode) {
  ForwardOptions<double> options;
  Mat<double> emb = encode(params, stacked);
  const Eigen::Index b = emb.rows() / 3;
  Mat<double> u = emb.topRows(b), p = emb.middleRows(b, b), n = emb.bottomRows(b);
  return mode == Objective::kBpr ? bpr_loss(u, p, n, 0.2, false).value
                                 : contrastive_loss(u, p, n, 0.2, mode, false).value;
}

}  // namespace

TEST_CASE("encoder parameter gradients match finite differences (pre and post norm)") {
  for (bool pre_norm : {true, false}) {
    CAPTURE(pre_norm);
    auto params = init_encoder_params<double>(grad_config(pre_norm), 77);
    std::vector<TokenSequence> stacked = {make_seq({4, 9, 11}, 8), make_seq({5}, 8),
                                          make_seq({6, 7}, 8),     make_seq({8, 9}, 8),
                                          make_seq({10, 4}, 8),    make_seq({12, 13, 14}, 8)};

    ForwardOptions<double> options;
    options.training = true;
    auto fwd = encoder_forward(params, stacked, options);
    Mat<double> u = fwd.embeddings.topRows(2), p = fwd.embeddings.middleRows(2, 2),
                n = fwd.embeddings.bottomRows(2);
    auto loss = contrastive_loss(u, p, n, 0.2, Objective::kContrastivePaper, true);
    Mat<double> d_emb(6, 8);
    d_emb.topRows(2) = loss.d_user;
    d_emb.middleRows(2, 2) = loss.d_pos;
    d_emb.bottomRows(2) = loss.d_neg;
    auto grads = zeros_like(params);
    encoder_backward(params, *fwd.trace, d_emb, Mat<double>(), grads);

    Rng rng(pre_norm ? 100 : 101);
    check_against_fd(
        params, grads,
        [&]() { return pipeline_loss(params, stacked, Objective::kContrastivePaper); }, 40, 1e-4,
        2e-6, rng);
  }
}

TEST_CASE("mlm pipeline gradients match finite differences") {
  auto cfg = grad_config(true);
  auto params = init_encoder_params<double>(cfg, 55);
  std::vector<TokenSequence> seqs = {make_seq({4, 9, 11, 6}, 8), make_seq({5, 7, 8}, 8)};

  Rng mask_rng(7);
  std::vector<MaskedSequence> masked;
  for (const auto& seq : seqs) masked.push_back(mlm_mask(seq, 0.6, mask_rng, cfg.vocab));
  std::size_t selected = 0;
  for (const auto& ex : masked) selected += ex.positions.size();
  REQUIRE(selected > 0);

  auto loss_of = [&]() {
    std::vector<TokenSequence> inputs;
    for (const auto& ex : masked) inputs.push_back(ex.sequence);
    ForwardOptions<double> options;
    options.training = true;
    auto fwd = encoder_forward(params, inputs, options);
    return static_cast<double>(
        mlm_loss<double>(params, fwd.token_outputs, fwd.offsets, masked, 1.0, nullptr, nullptr));
  };

  std::vector<TokenSequence> inputs;
  for (const auto& ex : masked) inputs.push_back(ex.sequence);
  ForwardOptions<double> options;
  options.training = true;
  auto fwd = encoder_forward(params, inputs, options);
  auto grads = zeros_like(params);
  Mat<double> d_tokens;
  mlm_loss(params, fwd.token_outputs, fwd.offsets, masked, 1.0, &grads, &d_tokens);
  encoder_backward(params, *fwd.trace, Mat<double>(), d_tokens, grads);

  Rng rng(200);
  check_against_fd(params, grads, loss_of, 40, 1e-4, 2e-6, rng);
}

TEST_CASE("untied mlm decoder keeps embedding and decoder gradients separate") {
  auto cfg = grad_config(true);
  cfg.tie_mlm = false;
  auto params = init_encoder_params<double>(cfg, 60);
  std::vector<TokenSequence> seqs = {make_seq({4, 9, 11, 6}, 8)};
  Rng mask_rng(8);
  std::vector<MaskedSequence> masked = {mlm_mask(seqs[0], 0.7, mask_rng, cfg.vocab)};
  REQUIRE(!masked[0].positions.empty());

  auto loss_of = [&]() {
    std::vector<TokenSequence> inputs = {masked[0].sequence};
    ForwardOptions<double> options;
    options.training = true;
    auto fwd = encoder_forward(params, inputs, options);
    return static_cast<double>(
        mlm_loss<double>(params, fwd.token_outputs, fwd.offsets, masked, 1.0, nullptr, nullptr));
  };

  std::vector<TokenSequence> inputs = {masked[0].sequence};
  ForwardOptions<double> options;
  options.training = true;
  auto fwd = encoder_forward(params, inputs, options);
  auto grads = zeros_like(params);
  Mat<double> d_tokens;
  mlm_loss(params, fwd.token_outputs, fwd.offsets, masked, 1.0, &grads, &d_tokens);
  encoder_backward(params, *fwd.trace, Mat<double>(), d_tokens, grads);

  Rng rng(201);
  check_against_fd(params, grads, loss_of, 30, 1e-4, 2e-6, rng);
}

TEST_CASE("zero upstream gradient produces zero parameter gradients") {
  auto params = init_encoder_params<double>(grad_config(true), 31);
  std::vector<TokenSequence> seqs = {make_seq({4, 5}, 8), make_seq({6}, 8)};
  ForwardOptions<double> options;
  options.training = true;
  auto fwd = encoder_forward(params, seqs, options);
  auto grads = zeros_like(params);
  Mat<double> d_emb = Mat<double>::Zero(2, 8);
  encoder_backward(params, *fwd.trace, d_emb, Mat<double>(), grads);
  for (auto& [name, g] : grads.named_tensors()) {
    CHECK(g->cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("unused vocab rows receive exactly zero gradient") {
  auto params = init_encoder_params<double>(grad_config(true), 32);
  std::vector<TokenSequence> stacked = {make_seq({4, 5}, 8), make_seq({6}, 8),
                                        make_seq({7}, 8),    make_seq({8}, 8),
                                        make_seq({9}, 8),    make_seq({10}, 8)};
  ForwardOptions<double> options;
  options.training = true;
  auto fwd = encoder_forward(params, stacked, options);
  Mat<double> u = fwd.embeddings.topRows(2), p = fwd.embeddings.middleRows(2, 2),
              n = fwd.embeddings.bottomRows(2);
  auto loss = contrastive_loss(u, p, n, 0.2, Objective::kContrastivePaper, true);
  Mat<double> d_emb(6, 8);
  d_emb.topRows(2) = loss.d_user;
  d_emb.middleRows(2, 2) = loss.d_pos;
  d_emb.bottomRows(2) = loss.d_neg;
  auto grads = zeros_like(params);
  encoder_backward(params, *fwd.trace, d_emb, Mat<double>(), grads);

  // Token id 20 never appears; its embedding row must be untouched.
  CHECK(grads.tok_emb.row(20).cwiseAbs().maxCoeff() == 0.0);
  CHECK(grads.tok_emb.row(4).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("backward without a recorded forward is rejected") {
  auto params = init_encoder_params<double>(grad_config(true), 33);
  EncoderTrace<double> empty_trace;
  auto grads = zeros_like(params);
  CHECK_THROWS_AS(encoder_backward(params, empty_trace, Mat<double>(), Mat<double>(), grads),
                  NumericError);
}

TEST_SUITE_END();
