#include <benchmark/benchmark.h>

#include "textrec/cf.hpp"
#include "textrec/encoder.hpp"
#include "textrec/retrieval.hpp"
#include "textrec/rng.hpp"
#include "textrec/synthetic.hpp"
#include "textrec/tokenizer.hpp"
#include "textrec/training.hpp"

using namespace textrec;

namespace {

EncoderConfig bench_encoder_config(std::int32_t hidden) {
  EncoderConfig cfg;
  cfg.layers = 2;
  cfg.hidden = hidden;
  cfg.heads = hidden >= 32 ? 4 : 2;
  cfg.ffn = 4 * hidden;
  cfg.vocab = 1024;
  cfg.max_len = 32;
  cfg.embed_dim = hidden;
  cfg.dropout = 0.0;
  return cfg;
}

std::vector<TokenSequence> bench_batch(std::int32_t count, std::int32_t words,
                                       std::int32_t max_len, std::int32_t vocab) {
  Rng rng(11);
  std::vector<TokenSequence> batch;
  for (std::int32_t s = 0; s < count; ++s) {
    TokenSequence seq;
    seq.ids.assign(static_cast<std::size_t>(max_len), Vocab::kPad);
    seq.attention_mask.assign(static_cast<std::size_t>(max_len), 0);
    seq.ids[0] = Vocab::kCls;
    for (std::int32_t w = 1; w <= words; ++w) {
      seq.ids[static_cast<std::size_t>(w)] =
          Vocab::kNumReserved + static_cast<std::int32_t>(rng.uniform_int(vocab - 4));
    }
    seq.true_len = words + 1;
    for (std::int32_t j = 0; j <= words; ++j) seq.attention_mask[static_cast<std::size_t>(j)] = 1;
    batch.push_back(std::move(seq));
  }
  return batch;
}

void BM_EncoderForward(benchmark::State& state) {
  const auto hidden = static_cast<std::int32_t>(state.range(0));
  auto cfg = bench_encoder_config(hidden);
  auto params = init_encoder_params<float>(cfg, 1);
  auto batch = bench_batch(16, 15, cfg.max_len, cfg.vocab);
  for (auto _ : state) {
    Mat<float> emb = encode(params, batch);
    benchmark::DoNotOptimize(emb.data());
  }
  state.SetItemsProcessed(state.iterations() * 16);
}
BENCHMARK(BM_EncoderForward)->Arg(16)->Arg(32)->Arg(64);

void BM_EncoderTrainStep(benchmark::State& state) {
  const auto hidden = static_cast<std::int32_t>(state.range(0));
  auto cfg = bench_encoder_config(hidden);
  auto params = init_encoder_params<float>(cfg, 2);
  auto grads = zeros_like(params);
  auto batch = bench_batch(24, 15, cfg.max_len, cfg.vocab);  // 8 triplets stacked
  for (auto _ : state) {
    ForwardOptions<float> options;
    options.training = true;
    auto fwd = encoder_forward(params, batch, options);
    Mat<float> u = fwd.embeddings.topRows(8);
    Mat<float> p = fwd.embeddings.middleRows(8, 8);
    Mat<float> n = fwd.embeddings.bottomRows(8);
    auto loss = contrastive_loss(u, p, n, 0.05, Objective::kContrastivePaper, true);
    Mat<float> d_emb(24, cfg.embed_dim);
    d_emb.topRows(8) = loss.d_user;
    d_emb.middleRows(8, 8) = loss.d_pos;
    d_emb.bottomRows(8) = loss.d_neg;
    encoder_backward(params, *fwd.trace, d_emb, Mat<float>(), grads);
    benchmark::DoNotOptimize(grads.tok_emb.data());
    for (auto& [name, g] : grads.named_tensors()) g->setZero();
  }
  state.SetItemsProcessed(state.iterations() * 8);
}
BENCHMARK(BM_EncoderTrainStep)->Arg(16)->Arg(32);

void BM_Tokenize(benchmark::State& state) {
  Vocab vocab = Vocab::build({"the quick brown fox jumps over a lazy dog again and again"}, 64);
  const std::string text =
      "The quick brown fox jumps over the lazy dog, again and again, until the dog "
      "finally wakes up and chases the fox away from the quiet yard.";
  for (auto _ : state) {
    auto seq = tokenize(text, vocab, 64);
    benchmark::DoNotOptimize(seq.ids.data());
  }
}
BENCHMARK(BM_Tokenize);

void BM_RecommendTopK(benchmark::State& state) {
  const auto item_count = static_cast<std::int32_t>(state.range(0));
  Rng rng(5);
  EmbeddingStore items;
  items.kind = EntityKind::kItem;
  items.rows.resize(item_count, 64);
  for (std::int32_t r = 0; r < item_count; ++r) {
    items.ids.push_back("i" + std::to_string(r));
    items.index.emplace(items.ids.back(), r);
    for (int c = 0; c < 64; ++c) items.rows(r, c) = static_cast<float>(rng.uniform(-1, 1));
  }
  Eigen::RowVectorXf user(64);
  for (int c = 0; c < 64; ++c) user(c) = static_cast<float>(rng.uniform(-1, 1));
  for (auto _ : state) {
    auto ranked = recommend_vector(user, "u", 20, items, {});
    benchmark::DoNotOptimize(ranked.items.data());
  }
  state.SetItemsProcessed(state.iterations() * item_count);
}
BENCHMARK(BM_RecommendTopK)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_LightGcnPropagate(benchmark::State& state) {
  SyntheticSpec spec;
  spec.topics = 8;
  spec.users_per_topic = 50;
  spec.items_per_topic = 40;
  spec.interactions_per_user = 10;
  spec.seed = 9;
  auto corpus = generate_synthetic(spec);
  std::vector<std::string> item_ids;
  for (const auto& rec : corpus.items) item_ids.push_back(rec.item_id);
  auto dataset = make_dataset(corpus.users, item_ids, corpus.splits.train, corpus.splits.val,
                              corpus.splits.test);
  auto adj = build_norm_adj(dataset, true);
  CfConfig config;
  config.dim = 64;
  config.layers = static_cast<std::int32_t>(state.range(0));
  auto model = init_cf_model(config, adj.user_count, adj.item_count, 0, 3);
  for (auto _ : state) {
    auto prop = propagate(model, adj);
    benchmark::DoNotOptimize(prop.user_final.data());
  }
}
BENCHMARK(BM_LightGcnPropagate)->Arg(1)->Arg(2)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
