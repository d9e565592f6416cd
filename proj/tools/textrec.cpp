// textrec: train a text-profile embedder with collaborative contrastive
// objectives and use it for zero-shot recommendation, evaluation, profile
// diversification, and text-enhanced collaborative filtering.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "textrec/cf.hpp"
#include "textrec/common.hpp"
#include "textrec/data.hpp"
#include "textrec/evaluation.hpp"
#include "textrec/manifest.hpp"
#include "textrec/profile_llm.hpp"
#include "textrec/retrieval.hpp"
#include "textrec/run_config.hpp"
#include "textrec/serialize.hpp"
#include "textrec/synthetic.hpp"
#include "textrec/tokenizer.hpp"
#include "textrec/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace textrec;

namespace {

Corpus load_data_dir(const std::string& dir) {
  return load_corpus(dir + "/items.jsonl", dir + "/users.jsonl", dir + "/train.tsv",
                     dir + "/val.tsv", dir + "/test.tsv");
}

SplitRatios parse_ratios(const std::string& text) {
  SplitRatios ratios;
  std::stringstream stream(text);
  std::string part;
  double values[3];
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(stream, part, ':')) throw DataError("ratios must look like 8:1:1");
    values[i] = std::stod(part);
  }
  ratios.train = values[0];
  ratios.val = values[1];
  ratios.test = values[2];
  return ratios;
}

std::vector<std::int32_t> parse_k_list(const std::string& text) {
  std::vector<std::int32_t> out;
  std::stringstream stream(text);
  std::string part;
  while (std::getline(stream, part, ',')) out.push_back(std::stoi(part));
  if (out.empty()) throw DataError("empty k list");
  return out;
}

Split parse_split(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw DataError("split must be train, val, or test");
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open file: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::unordered_set<std::string> train_exclusions(const Corpus& corpus, const std::string& user_id) {
  std::unordered_set<std::string> excluded;
  auto it = corpus.dataset.user_index.find(user_id);
  if (it == corpus.dataset.user_index.end()) throw DataError("unknown user '" + user_id + "'");
  for (auto item : corpus.dataset.user_neighbors[static_cast<std::size_t>(it->second)]) {
    excluded.insert(corpus.dataset.items[static_cast<std::size_t>(item)]);
  }
  return excluded;
}

json ranked_to_json(const RankedList& ranked) {
  json items = json::array();
  for (const auto& item : ranked.items) {
    items.push_back({{"item_id", item.item_id}, {"score", item.score}});
  }
  return {{"user_id", ranked.user_id}, {"items", items}};
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  SyntheticSpec spec;
  std::string out;
};

int cmd_synth(const SynthArgs& args) {
  fs::create_directories(args.out);
  auto corpus = generate_synthetic(args.spec);
  auto files = write_synthetic(corpus, args.out);
  json config;
  config["topics"] = args.spec.topics;
  config["users_per_topic"] = args.spec.users_per_topic;
  config["items_per_topic"] = args.spec.items_per_topic;
  config["words_per_topic"] = args.spec.words_per_topic;
  config["interactions_per_user"] = args.spec.interactions_per_user;
  config["profile_words"] = args.spec.profile_words;
  config["diversified"] = args.spec.diversified;
  config["noise_rate"] = args.spec.noise_rate;
  config["seed"] = args.spec.seed;
  write_manifest(args.out, config.dump(2), files);
  std::cout << json({{"out", args.out},
                     {"users", corpus.users.size()},
                     {"items", corpus.items.size()},
                     {"train", corpus.splits.train.size()},
                     {"val", corpus.splits.val.size()},
                     {"test", corpus.splits.test.size()}})
                   .dump()
            << "\n";
  return 0;
}

struct PrepareArgs {
  std::string items, users, interactions, out, ratios = "8:1:1";
  double min_rating = 3.0;
  bool no_rating_filter = false;
  std::int32_t kcore = 10;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& args) {
  fs::create_directories(args.out);
  ProfileMap item_profiles, user_profiles;
  auto items = load_items_jsonl(args.items, &item_profiles);
  auto users = load_users_jsonl(args.users, &user_profiles);
  auto pairs = load_interactions_tsv(args.interactions);

  if (!args.no_rating_filter) pairs = filter_ratings(pairs, args.min_rating);
  if (args.kcore > 0) pairs = kcore_filter(pairs, args.kcore);
  auto splits = split_interactions(pairs, parse_ratios(args.ratios), args.seed);

  // Keep only entities that survive filtering, in original file order.
  std::unordered_set<std::string> live_users, live_items;
  for (const auto& pair : pairs) {
    live_users.insert(pair.user_id);
    live_items.insert(pair.item_id);
  }
  std::vector<RawItemRecord> kept_items;
  for (auto& rec : items) {
    if (live_items.count(rec.item_id)) kept_items.push_back(std::move(rec));
  }
  std::vector<std::string> kept_users;
  for (auto& user : users) {
    if (live_users.count(user)) kept_users.push_back(std::move(user));
  }
  for (const auto& pair : pairs) {
    if (!item_profiles.count(pair.item_id)) {
      throw DataError("interaction references item '" + pair.item_id + "' missing from items file");
    }
    if (!user_profiles.count(pair.user_id)) {
      throw DataError("interaction references user '" + pair.user_id + "' missing from users file");
    }
  }

  save_items_jsonl(args.out + "/items.jsonl", kept_items, item_profiles);
  save_users_jsonl(args.out + "/users.jsonl", kept_users, user_profiles);
  save_interactions_tsv(args.out + "/train.tsv", splits.train);
  save_interactions_tsv(args.out + "/val.tsv", splits.val);
  save_interactions_tsv(args.out + "/test.tsv", splits.test);

  json config;
  config["items"] = args.items;
  config["users"] = args.users;
  config["interactions"] = args.interactions;
  config["min_rating"] = args.no_rating_filter ? json() : json(args.min_rating);
  config["kcore"] = args.kcore;
  config["ratios"] = args.ratios;
  config["seed"] = args.seed;
  write_manifest(args.out, config.dump(2),
                 {"items.jsonl", "users.jsonl", "train.tsv", "val.tsv", "test.tsv"});
  std::cout << json({{"out", args.out},
                     {"users", kept_users.size()},
                     {"items", kept_items.size()},
                     {"train", splits.train.size()},
                     {"val", splits.val.size()},
                     {"test", splits.test.size()}})
                   .dump()
            << "\n";
  return 0;
}

struct VocabArgs {
  std::string data, out;
  std::int32_t size = 30000;
};

int cmd_vocab(const VocabArgs& args) {
  Corpus corpus = load_data_dir(args.data);
  std::vector<std::string> texts;
  for (const auto& [id, set] : corpus.user_profiles) {
    for (const auto& profile : set.profiles) texts.push_back(profile);
  }
  for (const auto& [id, set] : corpus.item_profiles) {
    for (const auto& profile : set.profiles) texts.push_back(profile);
  }
  Vocab vocab = Vocab::build(texts, args.size);
  vocab.save(args.out);
  std::cout << json({{"out", args.out}, {"size", vocab.size()}}).dump() << "\n";
  return 0;
}

// Fills encoder vocab from the vocab file and caps max_len sanity.
template <typename S>
int run_train(RunConfig config, const Corpus& corpus, const Vocab& vocab) {
  config.encoder.vocab = vocab.size();
  config.validate();
  fs::create_directories(config.out_dir);

  const std::string effective = config.to_json();
  {
    std::ofstream out(config.out_dir + "/config.json", std::ios::binary);
    out << effective << "\n";
  }
  std::ofstream log(config.out_dir + "/train_log.jsonl", std::ios::binary);

  auto outcome = train_encoder<S>(config.encoder, config.train, corpus.dataset,
                                  corpus.user_profiles, corpus.item_profiles, vocab, &log,
                                  config.workers);
  log.close();
  outcome.best_params.save(config.out_dir + "/best.ezrc");

  // Augmentation count actually available to sampling.
  std::int32_t available_t = std::numeric_limits<std::int32_t>::max();
  for (const auto& [id, set] : corpus.user_profiles) {
    available_t = std::min(available_t, set.diversified_count());
  }
  for (const auto& [id, set] : corpus.item_profiles) {
    available_t = std::min(available_t, set.diversified_count());
  }
  std::int32_t used_t = config.train.augmentation >= 0
                            ? std::min(config.train.augmentation, available_t)
                            : available_t;

  MetricsReport best_report;
  best_report.rounds.push_back(outcome.best_val_metrics);
  best_report.compute_mean();
  json info;
  info["preset"] = config.preset.empty() ? "custom" : config.preset;
  info["augmentation_count"] = used_t;
  info["best_step"] = outcome.best_step;
  info["total_steps"] = outcome.total_steps;
  info["selection_metric"] = config.train.selection_metric;
  info["aborted_non_finite"] = outcome.aborted_non_finite;
  info["metrics"] = json::parse(best_report.to_json());
  {
    std::ofstream out(config.out_dir + "/run_info.json", std::ios::binary);
    out << info.dump(2) << "\n";
  }
  write_manifest(config.out_dir, effective,
                 {"config.json", "train_log.jsonl", "best.ezrc", "run_info.json"});
  std::cout << info.dump() << "\n";
  return outcome.aborted_non_finite ? 3 : 0;
}

struct EmbedArgs {
  std::string checkpoint, vocab, data, kind = "user", out;
  std::int32_t profile_index = 0;
  int workers = 1;
};

int cmd_embed(const EmbedArgs& args) {
  auto params = EncoderParams<float>::load(args.checkpoint);
  Vocab vocab = Vocab::load(args.vocab);
  if (vocab.size() != params.config.vocab) {
    throw DataError("vocab file size does not match checkpoint vocab");
  }
  Corpus corpus = load_data_dir(args.data);
  const bool user_side = args.kind == "user";
  if (!user_side && args.kind != "item") throw DataError("kind must be user or item");
  EmbeddingStore store = embed_entities(
      params, vocab, user_side ? corpus.dataset.users : corpus.dataset.items,
      user_side ? corpus.user_profiles : corpus.item_profiles, args.profile_index,
      user_side ? EntityKind::kUser : EntityKind::kItem, args.workers);
  store.save(args.out);
  std::cout << json({{"out", args.out}, {"count", store.count()}, {"dim", store.dim()}}).dump()
            << "\n";
  return 0;
}

struct RecommendArgs {
  std::string users, items, data, user_id;
  std::int32_t k = 10;
  bool no_exclusions = false;
};

int cmd_recommend(const RecommendArgs& args) {
  EmbeddingStore users = EmbeddingStore::load(args.users);
  EmbeddingStore items = EmbeddingStore::load(args.items);
  std::unordered_set<std::string> excluded;
  if (!args.no_exclusions) {
    Corpus corpus = load_data_dir(args.data);
    excluded = train_exclusions(corpus, args.user_id);
  }
  auto ranked = recommend(args.user_id, args.k, users, items, excluded);
  std::cout << ranked_to_json(ranked).dump() << "\n";
  return 0;
}

struct EvaluateArgs {
  std::string users, items, data, split = "test", k_list = "10,20";
  std::string checkpoint, vocab;
  std::int32_t rounds = 0;
  bool include_original = false;
  int workers = 1;
};

int cmd_evaluate(const EvaluateArgs& args) {
  Corpus corpus = load_data_dir(args.data);
  const Split split = parse_split(args.split);
  const auto n_list = parse_k_list(args.k_list);

  MetricsReport report;
  report.n_list = n_list;
  if (!args.checkpoint.empty()) {
    // Multi-profile protocol: rounds over diversified profile pairs.
    auto params = EncoderParams<float>::load(args.checkpoint);
    Vocab vocab = Vocab::load(args.vocab);
    report = evaluate_multi_profile(params, vocab, corpus.user_profiles, corpus.item_profiles,
                                    corpus.dataset, split, n_list, args.rounds,
                                    args.include_original, args.workers);
  } else {
    EmbeddingStore users = EmbeddingStore::load(args.users);
    EmbeddingStore items = EmbeddingStore::load(args.items);
    report.rounds.push_back(evaluate_all_rank(users, items, corpus.dataset, split, n_list,
                                              ScoreKind::kCosine, args.workers));
    report.compute_mean();
  }
  std::cout << report.to_json() << "\n";
  return 0;
}

struct TrainCfArgs {
  std::string data, out, backbone = "lightgcn";
  std::string text_users, text_items;
  CfConfig config;
  int workers = 1;
};

int cmd_train_cf(TrainCfArgs args) {
  args.config.backbone = cf_backbone_from_string(args.backbone);
  Corpus corpus = load_data_dir(args.data);
  EmbeddingStore text_users, text_items;
  const bool align = args.config.align_weight > 0;
  if (align) {
    if (args.text_users.empty() || args.text_items.empty()) {
      throw DataError("--align-weight > 0 needs --text-users and --text-items");
    }
    text_users = EmbeddingStore::load(args.text_users);
    text_items = EmbeddingStore::load(args.text_items);
  }
  auto outcome = train_cf(corpus.dataset, args.config, align ? &text_users : nullptr,
                          align ? &text_items : nullptr, args.workers);

  json result;
  result["backbone"] = args.backbone;
  result["align_weight"] = args.config.align_weight;
  result["best_step"] = outcome.best_step;
  result["val"] = outcome.best_val_metrics;
  result["test"] = outcome.test_metrics;
  if (!args.out.empty()) {
    fs::create_directories(args.out);
    outcome.best_model.save(args.out + "/cf.ezrc");
    json config;
    config["backbone"] = args.backbone;
    config["dim"] = args.config.dim;
    config["layers"] = args.config.layers;
    config["learning_rate"] = args.config.learning_rate;
    config["epochs"] = args.config.epochs;
    config["max_steps"] = args.config.max_steps;
    config["batch_size"] = args.config.batch_size;
    config["align_weight"] = args.config.align_weight;
    config["align_tau"] = args.config.align_tau;
    config["seed"] = args.config.seed;
    {
      std::ofstream out(args.out + "/cf_result.json", std::ios::binary);
      out << result.dump(2) << "\n";
    }
    write_manifest(args.out, config.dump(2), {"cf.ezrc", "cf_result.json"});
  }
  std::cout << result.dump() << "\n";
  return outcome.aborted_non_finite ? 3 : 0;
}

struct DiversifyArgs {
  std::string data, out, kind = "both";
  std::int32_t t = 3;
  std::string endpoint, model = "gpt-3.5-turbo", auth_env = "TEXTREC_API_KEY";
  std::string mock_transcript;
  double temperature = 1.0;
  double timeout = 30.0;
  int max_retries = 3;
  int workers = 1;
};

int cmd_diversify(const DiversifyArgs& args) {
  Corpus corpus = load_data_dir(args.data);
  fs::create_directories(args.out);

  LlmClientConfig client_config;
  client_config.endpoint = args.endpoint;
  client_config.mock_transcript = args.mock_transcript;
  client_config.model = args.model;
  client_config.auth_env = args.auth_env;
  client_config.timeout_seconds = args.timeout;
  client_config.max_retries = args.max_retries;
  client_config.temperature = args.temperature;
  auto client = make_llm_client(client_config);

  json summary;
  summary["t"] = args.t;
  auto run_side = [&](bool user_side) {
    DiversifyOptions options;
    options.t = args.t;
    options.user_side = user_side;
    options.model = args.model;
    options.temperature = args.temperature;
    options.progress_path =
        args.out + (user_side ? "/progress_users.jsonl" : "/progress_items.jsonl");
    options.workers = args.workers;
    auto& profiles = user_side ? corpus.user_profiles : corpus.item_profiles;
    const auto& order = user_side ? corpus.dataset.users : corpus.dataset.items;
    auto report = diversify(profiles, order, options, *client);
    json side;
    side["calls_made"] = report.calls_made;
    side["resumed_iterations"] = report.resumed_iterations;
    side["failed_entities"] = report.failed_entities;
    summary[user_side ? "users" : "items"] = side;
  };
  if (args.kind == "user" || args.kind == "both") run_side(true);
  if (args.kind == "item" || args.kind == "both") run_side(false);
  if (args.kind != "user" && args.kind != "item" && args.kind != "both") {
    throw DataError("kind must be user, item, or both");
  }

  save_items_jsonl(args.out + "/items.jsonl", corpus.items, corpus.item_profiles);
  save_users_jsonl(args.out + "/users.jsonl", corpus.dataset.users, corpus.user_profiles);
  for (const char* name : {"train.tsv", "val.tsv", "test.tsv"}) {
    fs::copy_file(args.data + "/" + std::string(name), args.out + "/" + std::string(name),
                  fs::copy_options::overwrite_existing);
  }
  std::cout << summary.dump() << "\n";
  return 0;
}

struct DemoShiftArgs {
  std::string checkpoint, vocab, items, before_path, after_path;
  std::int32_t k = 5;
};

int cmd_demo_shift(const DemoShiftArgs& args) {
  auto params = EncoderParams<float>::load(args.checkpoint);
  Vocab vocab = Vocab::load(args.vocab);
  EmbeddingStore items = EmbeddingStore::load(args.items);

  auto embed_profile = [&](const std::string& text) {
    Mat<float> emb = encode(params, {tokenize(text, vocab, params.config.max_len)});
    return Eigen::RowVectorXf(emb.row(0));
  };
  const std::string before_text = read_text_file(args.before_path);
  const std::string after_text = read_text_file(args.after_path);
  auto before = recommend_vector(embed_profile(before_text), "before", args.k, items, {});
  auto after = recommend_vector(embed_profile(after_text), "after", args.k, items, {});

  std::unordered_set<std::string> before_set;
  for (const auto& item : before.items) before_set.insert(item.item_id);
  int overlap = 0;
  for (const auto& item : after.items) overlap += before_set.count(item.item_id) ? 1 : 0;

  json result;
  result["k"] = args.k;
  result["before"] = ranked_to_json(before);
  result["after"] = ranked_to_json(after);
  result["overlap"] = overlap;
  result["jaccard"] =
      static_cast<double>(overlap) /
      static_cast<double>(before.items.size() + after.items.size() - overlap);
  std::cout << result.dump() << "\n";
  return 0;
}

struct ReportScalingArgs {
  std::vector<std::string> runs;
};

int cmd_report_scaling(const ReportScalingArgs& args) {
  if (args.runs.empty()) throw DataError("report-scaling needs at least one run directory");
  std::cout << "preset\taugmentation\trecall@10\tndcg@10\n";
  bool first = true;
  std::set<std::string> reference_keys;
  for (const auto& run : args.runs) {
    json info = json::parse(read_text_file(run + "/run_info.json"), nullptr, false);
    if (info.is_discarded()) throw DataError(run + ": malformed run_info.json");
    const auto& mean = info.at("metrics").at("mean");
    std::set<std::string> keys;
    for (auto it = mean.begin(); it != mean.end(); ++it) keys.insert(it.key());
    if (first) {
      reference_keys = keys;
      first = false;
    } else if (keys != reference_keys) {
      throw DataError(run + ": metric keys do not match the other runs");
    }
    if (!mean.contains("recall@10") || !mean.contains("ndcg@10")) {
      throw DataError(run + ": run lacks recall@10 / ndcg@10");
    }
    std::ostringstream row;
    row << info.at("preset").get<std::string>() << '\t'
        << info.at("augmentation_count").get<std::int64_t>() << '\t'
        << mean.at("recall@10").get<double>() << '\t' << mean.at("ndcg@10").get<double>();
    std::cout << row.str() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"text-profile recommendation toolkit"};
  app.require_subcommand(1);

  // --- synth
  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "generate a planted-topic synthetic corpus");
  synth_cmd->add_option("--topics", synth.spec.topics);
  synth_cmd->add_option("--users-per-topic", synth.spec.users_per_topic);
  synth_cmd->add_option("--items-per-topic", synth.spec.items_per_topic);
  synth_cmd->add_option("--words-per-topic", synth.spec.words_per_topic);
  synth_cmd->add_option("--interactions-per-user", synth.spec.interactions_per_user);
  synth_cmd->add_option("--profile-words", synth.spec.profile_words);
  synth_cmd->add_option("--diversified", synth.spec.diversified);
  synth_cmd->add_option("--noise-rate", synth.spec.noise_rate);
  synth_cmd->add_option("--seed", synth.spec.seed);
  synth_cmd->add_option("--out", synth.out)->required();

  // --- prepare
  PrepareArgs prepare;
  auto* prepare_cmd = app.add_subcommand("prepare", "filter, k-core, and split raw interactions");
  prepare_cmd->add_option("--items", prepare.items)->required();
  prepare_cmd->add_option("--users", prepare.users)->required();
  prepare_cmd->add_option("--interactions", prepare.interactions)->required();
  prepare_cmd->add_option("--min-rating", prepare.min_rating);
  prepare_cmd->add_flag("--no-rating-filter", prepare.no_rating_filter);
  prepare_cmd->add_option("--kcore", prepare.kcore);
  prepare_cmd->add_option("--ratios", prepare.ratios);
  prepare_cmd->add_option("--seed", prepare.seed);
  prepare_cmd->add_option("--out", prepare.out)->required();

  // --- vocab
  VocabArgs vocab_args;
  auto* vocab_cmd = app.add_subcommand("vocab", "build a word vocabulary from profiles");
  vocab_cmd->add_option("--data", vocab_args.data)->required();
  vocab_cmd->add_option("--size", vocab_args.size);
  vocab_cmd->add_option("--out", vocab_args.out)->required();

  // --- train
  std::string train_config_path;
  RunConfig train_overrides;
  auto* train_cmd = app.add_subcommand("train", "train the profile encoder");
  train_cmd->add_option("--config", train_config_path, "JSON run config (flags override)");
  auto* opt_data = train_cmd->add_option("--data", train_overrides.data_dir);
  auto* opt_vocab = train_cmd->add_option("--vocab", train_overrides.vocab_path);
  auto* opt_out = train_cmd->add_option("--out", train_overrides.out_dir);
  auto* opt_preset = train_cmd->add_option("--preset", train_overrides.preset);
  auto* opt_seed = train_cmd->add_option("--seed", train_overrides.train.seed);
  auto* opt_epochs = train_cmd->add_option("--epochs", train_overrides.train.epochs);
  auto* opt_steps = train_cmd->add_option("--max-steps", train_overrides.train.max_steps);
  auto* opt_batch = train_cmd->add_option("--batch-size", train_overrides.train.batch_size);
  auto* opt_lr = train_cmd->add_option("--lr", train_overrides.train.learning_rate);
  auto* opt_tau = train_cmd->add_option("--tau", train_overrides.train.temperature);
  auto* opt_lambda = train_cmd->add_option("--lambda", train_overrides.train.mlm_weight);
  auto* opt_mask = train_cmd->add_option("--mask-ratio", train_overrides.train.mask_ratio);
  std::string objective_name;
  auto* opt_objective = train_cmd->add_option("--objective", objective_name,
                                              "contrastive-paper|contrastive-standard|bpr");
  auto* opt_interval = train_cmd->add_option("--eval-interval", train_overrides.train.eval_interval);
  auto* opt_selection = train_cmd->add_option("--selection", train_overrides.train.selection_metric);
  auto* opt_augment = train_cmd->add_option("--augmentation", train_overrides.train.augmentation);
  auto* opt_precision = train_cmd->add_option("--precision", train_overrides.precision);
  auto* opt_workers = train_cmd->add_option("--workers", train_overrides.workers);
  auto* opt_max_len = train_cmd->add_option("--max-len", train_overrides.encoder.max_len);

  // --- embed
  EmbedArgs embed_args;
  auto* embed_cmd = app.add_subcommand("embed", "freeze entity embeddings into a store");
  embed_cmd->add_option("--checkpoint", embed_args.checkpoint)->required();
  embed_cmd->add_option("--vocab", embed_args.vocab)->required();
  embed_cmd->add_option("--data", embed_args.data)->required();
  embed_cmd->add_option("--kind", embed_args.kind, "user|item");
  embed_cmd->add_option("--profile-index", embed_args.profile_index);
  embed_cmd->add_option("--workers", embed_args.workers);
  embed_cmd->add_option("--out", embed_args.out)->required();

  // --- recommend
  RecommendArgs rec_args;
  auto* rec_cmd = app.add_subcommand("recommend", "top-k items for a user");
  rec_cmd->add_option("--users", rec_args.users)->required();
  rec_cmd->add_option("--items", rec_args.items)->required();
  rec_cmd->add_option("--data", rec_args.data);
  rec_cmd->add_option("--user", rec_args.user_id)->required();
  rec_cmd->add_option("--k", rec_args.k);
  rec_cmd->add_flag("--no-exclusions", rec_args.no_exclusions);

  // --- evaluate
  EvaluateArgs eval_args;
  auto* eval_cmd = app.add_subcommand("evaluate", "all-rank Recall/NDCG over a split");
  eval_cmd->add_option("--users", eval_args.users);
  eval_cmd->add_option("--items", eval_args.items);
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--split", eval_args.split, "train|val|test");
  eval_cmd->add_option("--k", eval_args.k_list, "comma-separated N list");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint,
                       "multi-profile mode: re-embed per round");
  eval_cmd->add_option("--vocab", eval_args.vocab);
  eval_cmd->add_option("--rounds", eval_args.rounds, "diversified rounds t");
  eval_cmd->add_flag("--include-original", eval_args.include_original);
  eval_cmd->add_option("--workers", eval_args.workers);

  // --- train-cf
  TrainCfArgs cf_args;
  auto* cf_cmd = app.add_subcommand("train-cf", "train a graph CF backbone with optional text alignment");
  cf_cmd->add_option("--data", cf_args.data)->required();
  cf_cmd->add_option("--backbone", cf_args.backbone, "lightgcn|gccf");
  cf_cmd->add_option("--dim", cf_args.config.dim);
  cf_cmd->add_option("--layers", cf_args.config.layers);
  cf_cmd->add_option("--lr", cf_args.config.learning_rate);
  cf_cmd->add_option("--epochs", cf_args.config.epochs);
  cf_cmd->add_option("--max-steps", cf_args.config.max_steps);
  cf_cmd->add_option("--batch-size", cf_args.config.batch_size);
  cf_cmd->add_option("--eval-interval", cf_args.config.eval_interval);
  cf_cmd->add_option("--align-weight", cf_args.config.align_weight);
  cf_cmd->add_option("--align-tau", cf_args.config.align_tau);
  cf_cmd->add_option("--text-users", cf_args.text_users);
  cf_cmd->add_option("--text-items", cf_args.text_items);
  cf_cmd->add_option("--seed", cf_args.config.seed);
  cf_cmd->add_option("--workers", cf_args.workers);
  cf_cmd->add_option("--out", cf_args.out);

  // --- diversify
  DiversifyArgs div_args;
  auto* div_cmd = app.add_subcommand("diversify", "LLM-rephrase profiles t times");
  div_cmd->add_option("--data", div_args.data)->required();
  div_cmd->add_option("--out", div_args.out)->required();
  div_cmd->add_option("--kind", div_args.kind, "user|item|both");
  div_cmd->add_option("--t", div_args.t);
  div_cmd->add_option("--endpoint", div_args.endpoint, "chat-completions URL (live mode)");
  div_cmd->add_option("--model", div_args.model);
  div_cmd->add_option("--auth-env", div_args.auth_env, "env var holding the bearer token");
  div_cmd->add_option("--mock", div_args.mock_transcript, "offline transcript JSONL");
  div_cmd->add_option("--temperature", div_args.temperature);
  div_cmd->add_option("--timeout", div_args.timeout);
  div_cmd->add_option("--max-retries", div_args.max_retries);
  div_cmd->add_option("--workers", div_args.workers);

  // --- demo-shift
  DemoShiftArgs shift_args;
  auto* shift_cmd = app.add_subcommand("demo-shift", "compare top-k before/after a profile edit");
  shift_cmd->add_option("--checkpoint", shift_args.checkpoint)->required();
  shift_cmd->add_option("--vocab", shift_args.vocab)->required();
  shift_cmd->add_option("--items", shift_args.items)->required();
  shift_cmd->add_option("--user-profile-before", shift_args.before_path)->required();
  shift_cmd->add_option("--after", shift_args.after_path)->required();
  shift_cmd->add_option("--k", shift_args.k);

  // --- report-scaling
  ReportScalingArgs scaling_args;
  auto* scaling_cmd = app.add_subcommand("report-scaling", "tabulate runs for scaling trends");
  scaling_cmd->add_option("--runs", scaling_args.runs, "run directories")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*prepare_cmd) return cmd_prepare(prepare);
    if (*vocab_cmd) return cmd_vocab(vocab_args);
    if (*train_cmd) {
      RunConfig config = train_config_path.empty() ? RunConfig{}
                                                   : RunConfig::from_json_file(train_config_path);
      if (opt_preset->count()) {
        config.preset = train_overrides.preset;
        config.encoder = EncoderConfig::preset(config.preset);
      }
      if (opt_data->count()) config.data_dir = train_overrides.data_dir;
      if (opt_vocab->count()) config.vocab_path = train_overrides.vocab_path;
      if (opt_out->count()) config.out_dir = train_overrides.out_dir;
      if (opt_seed->count()) config.train.seed = train_overrides.train.seed;
      if (opt_epochs->count()) config.train.epochs = train_overrides.train.epochs;
      if (opt_steps->count()) config.train.max_steps = train_overrides.train.max_steps;
      if (opt_batch->count()) config.train.batch_size = train_overrides.train.batch_size;
      if (opt_lr->count()) config.train.learning_rate = train_overrides.train.learning_rate;
      if (opt_tau->count()) config.train.temperature = train_overrides.train.temperature;
      if (opt_lambda->count()) config.train.mlm_weight = train_overrides.train.mlm_weight;
      if (opt_mask->count()) config.train.mask_ratio = train_overrides.train.mask_ratio;
      if (opt_objective->count()) config.train.objective = objective_from_string(objective_name);
      if (opt_interval->count()) config.train.eval_interval = train_overrides.train.eval_interval;
      if (opt_selection->count()) {
        config.train.selection_metric = train_overrides.train.selection_metric;
      }
      if (opt_augment->count()) config.train.augmentation = train_overrides.train.augmentation;
      if (opt_precision->count()) config.precision = train_overrides.precision;
      if (opt_workers->count()) config.workers = train_overrides.workers;
      if (opt_max_len->count()) config.encoder.max_len = train_overrides.encoder.max_len;

      Corpus corpus = load_data_dir(config.data_dir);
      Vocab vocab = Vocab::load(config.vocab_path);
      return config.precision == "f64" ? run_train<double>(config, corpus, vocab)
                                       : run_train<float>(config, corpus, vocab);
    }
    if (*embed_cmd) return cmd_embed(embed_args);
    if (*rec_cmd) return cmd_recommend(rec_args);
    if (*eval_cmd) return cmd_evaluate(eval_args);
    if (*cf_cmd) return cmd_train_cf(cf_args);
    if (*div_cmd) return cmd_diversify(div_args);
    if (*shift_cmd) return cmd_demo_shift(shift_args);
    if (*scaling_cmd) return cmd_report_scaling(scaling_args);
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "response parse error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
