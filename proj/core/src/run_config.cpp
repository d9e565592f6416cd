#include "textrec/run_config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "textrec/common.hpp"

namespace textrec {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw DataError("unknown " + where + " key '" + it.key() + "'");
    }
  }
}

}  // namespace

RunConfig RunConfig::from_json_text(const std::string& text) {
  json obj = json::parse(text, nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) throw DataError("run config is not a JSON object");
  reject_unknown(obj,
                 {"preset", "encoder", "temperature", "mlm_weight", "mask_ratio",
                  "learning_rate", "epochs", "batch_size", "eval_interval", "selection_metric",
                  "objective", "max_steps", "augmentation", "grad_clip", "mask_all", "data_dir",
                  "vocab_path", "out_dir", "seed", "workers", "precision"},
                 "run config");

  RunConfig config;
  if (obj.contains("preset")) {
    config.preset = obj["preset"].get<std::string>();
    config.encoder = EncoderConfig::preset(config.preset);
  }
  if (obj.contains("encoder")) {
    const json& enc = obj["encoder"];
    if (!enc.is_object()) throw DataError("encoder section must be an object");
    reject_unknown(enc,
                   {"layers", "hidden", "heads", "ffn", "vocab", "max_len", "embed_dim",
                    "dropout", "pre_norm", "tie_mlm"},
                   "encoder");
    auto& e = config.encoder;
    bool hidden_changed = false;
    if (enc.contains("layers")) e.layers = enc["layers"].get<std::int32_t>();
    if (enc.contains("hidden")) {
      e.hidden = enc["hidden"].get<std::int32_t>();
      hidden_changed = true;
    }
    if (enc.contains("heads")) e.heads = enc["heads"].get<std::int32_t>();
    if (enc.contains("ffn")) {
      e.ffn = enc["ffn"].get<std::int32_t>();
    } else if (hidden_changed) {
      e.ffn = 4 * e.hidden;
    }
    if (enc.contains("vocab")) e.vocab = enc["vocab"].get<std::int32_t>();
    if (enc.contains("max_len")) e.max_len = enc["max_len"].get<std::int32_t>();
    if (enc.contains("embed_dim")) {
      e.embed_dim = enc["embed_dim"].get<std::int32_t>();
    } else if (hidden_changed) {
      e.embed_dim = e.hidden;
    }
    if (enc.contains("dropout")) e.dropout = enc["dropout"].get<double>();
    if (enc.contains("pre_norm")) e.pre_norm = enc["pre_norm"].get<bool>();
    if (enc.contains("tie_mlm")) e.tie_mlm = enc["tie_mlm"].get<bool>();
  }

  auto& t = config.train;
  if (obj.contains("temperature")) t.temperature = obj["temperature"].get<double>();
  if (obj.contains("mlm_weight")) t.mlm_weight = obj["mlm_weight"].get<double>();
  if (obj.contains("mask_ratio")) t.mask_ratio = obj["mask_ratio"].get<double>();
  if (obj.contains("learning_rate")) t.learning_rate = obj["learning_rate"].get<double>();
  if (obj.contains("epochs")) t.epochs = obj["epochs"].get<std::int32_t>();
  if (obj.contains("batch_size")) t.batch_size = obj["batch_size"].get<std::int32_t>();
  if (obj.contains("eval_interval")) t.eval_interval = obj["eval_interval"].get<std::int32_t>();
  if (obj.contains("selection_metric")) {
    t.selection_metric = obj["selection_metric"].get<std::string>();
  }
  if (obj.contains("objective")) {
    t.objective = objective_from_string(obj["objective"].get<std::string>());
  }
  if (obj.contains("max_steps")) t.max_steps = obj["max_steps"].get<std::int64_t>();
  if (obj.contains("augmentation")) t.augmentation = obj["augmentation"].get<std::int32_t>();
  if (obj.contains("grad_clip")) t.grad_clip = obj["grad_clip"].get<double>();
  if (obj.contains("mask_all")) t.mask_all_convention = obj["mask_all"].get<bool>();
  if (obj.contains("seed")) t.seed = obj["seed"].get<std::uint64_t>();

  if (obj.contains("data_dir")) config.data_dir = obj["data_dir"].get<std::string>();
  if (obj.contains("vocab_path")) config.vocab_path = obj["vocab_path"].get<std::string>();
  if (obj.contains("out_dir")) config.out_dir = obj["out_dir"].get<std::string>();
  if (obj.contains("workers")) config.workers = obj["workers"].get<int>();
  if (obj.contains("precision")) config.precision = obj["precision"].get<std::string>();
  return config;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open run config: " + path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return from_json_text(buffer.str());
}

std::string RunConfig::to_json() const {
  json obj;
  if (!preset.empty()) obj["preset"] = preset;
  obj["encoder"] = json::parse(encoder.to_json());
  obj["encoder"].erase("kind");
  obj["temperature"] = train.temperature;
  obj["mlm_weight"] = train.mlm_weight;
  obj["mask_ratio"] = train.mask_ratio;
  obj["learning_rate"] = train.learning_rate;
  obj["epochs"] = train.epochs;
  obj["batch_size"] = train.batch_size;
  obj["eval_interval"] = train.eval_interval;
  obj["selection_metric"] = train.selection_metric;
  obj["objective"] = objective_to_string(train.objective);
  obj["max_steps"] = train.max_steps;
  obj["augmentation"] = train.augmentation;
  obj["grad_clip"] = train.grad_clip;
  obj["mask_all"] = train.mask_all_convention;
  obj["seed"] = train.seed;
  obj["data_dir"] = data_dir;
  obj["vocab_path"] = vocab_path;
  obj["out_dir"] = out_dir;
  obj["workers"] = workers;
  obj["precision"] = precision;
  return obj.dump(2);
}

void RunConfig::validate() const {
  encoder.validate();
  train.validate();
  if (precision != "f32" && precision != "f64") {
    throw DataError("precision must be f32 or f64");
  }
  if (workers < 1) throw DataError("workers must be >= 1");
  if (data_dir.empty()) throw DataError("data_dir is required");
  if (vocab_path.empty()) throw DataError("vocab_path is required");
  if (out_dir.empty()) throw DataError("out_dir is required");
}

}  // namespace textrec
