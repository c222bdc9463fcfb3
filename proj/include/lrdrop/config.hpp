#pragma once

// One flat JSON document configures every subcommand. Parsing is strict:
// unknown keys are rejected by name, every field is type- and range-checked,
// and parse(serialize(cfg)) == cfg holds for any valid config.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrdrop/losses.hpp"
#include "lrdrop/model.hpp"
#include "lrdrop/optim.hpp"
#include "lrdrop/data.hpp"

namespace lrdrop {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct ExperimentConfig {
  // data
  std::string task = "parity";
  std::size_t dataset_size = 2560;
  std::size_t seq_len = 8;
  std::size_t train_size = 0;  // 0 = the full train split
  std::uint64_t data_seed = 7;

  // model
  std::size_t hidden_size = 32;
  std::size_t num_layers = 2;
  std::size_t num_heads = 4;
  std::size_t ffn_size = 64;
  double dropout_rate = 0.1;
  std::string attention_capture = "pre_dropout";  // or "post_dropout"

  // objective
  double alpha = 0.1;
  double beta = 0.1;
  double gamma = 0.1;
  std::size_t k = 2;
  std::string hsr_layers = "all";  // or "last"
  bool hsr_on = true;
  bool mhar_on = true;
  bool or_on = true;

  // optimization
  double lr = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.0;
  double clip_norm = 1.0;  // 0 disables clipping
  std::size_t epochs = 10;
  std::size_t batch_size = 32;

  // experiment
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string out_dir = "out";
  std::vector<std::size_t> sizes = {64, 128, 256, 512};  // size-study rows

  // landscape
  std::size_t grid_points = 21;
  double grid_range = 1.0;
  std::size_t landscape_eval_size = 128;
  std::string direction_rule = "block_norm";  // or "block_std"
  bool compare_baseline = false;

  bool operator==(const ExperimentConfig&) const = default;

  void validate() const {
    if (task != "parity" && task != "majority" && task != "first-token")
      throw ConfigError("config: unknown task \"" + task + "\"");
    if (dataset_size < 10) throw ConfigError("config: dataset_size must be at least 10");
    if (seq_len < 1) throw ConfigError("config: seq_len must be positive");
    if (hidden_size == 0 || num_heads == 0 || hidden_size % num_heads != 0)
      throw ConfigError("config: hidden_size must be a positive multiple of num_heads");
    if (num_layers == 0) throw ConfigError("config: num_layers must be positive");
    if (ffn_size == 0) throw ConfigError("config: ffn_size must be positive");
    if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0)
      throw ConfigError("config: dropout_rate must lie in [0, 1)");
    if (attention_capture != "pre_dropout" && attention_capture != "post_dropout")
      throw ConfigError("config: attention_capture must be pre_dropout or post_dropout");
    if (!(alpha >= 0.0) || !(beta >= 0.0) || !(gamma >= 0.0))
      throw ConfigError("config: loss weights must be finite and non-negative");
    if (k < 1) throw ConfigError("config: k must be at least 1");
    if (hsr_layers != "all" && hsr_layers != "last")
      throw ConfigError("config: hsr_layers must be all or last");
    if (!(lr > 0.0)) throw ConfigError("config: lr must be positive");
    if (!(adam_beta1 >= 0.0) || adam_beta1 >= 1.0 || !(adam_beta2 >= 0.0) || adam_beta2 >= 1.0)
      throw ConfigError("config: adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("config: adam_eps must be positive");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be non-negative");
    if (clip_norm < 0.0) throw ConfigError("config: clip_norm must be non-negative");
    if (batch_size < 1) throw ConfigError("config: batch_size must be positive");
    if (seeds.empty()) throw ConfigError("config: seeds must be non-empty");
    if (sizes.empty()) throw ConfigError("config: sizes must be non-empty");
    for (std::size_t s : sizes)
      if (s < 1) throw ConfigError("config: sizes entries must be positive");
    if (grid_points < 1 || grid_points % 2 == 0)
      throw ConfigError("config: grid_points must be odd");
    if (!(grid_range > 0.0)) throw ConfigError("config: grid_range must be positive");
    if (landscape_eval_size < 1) throw ConfigError("config: landscape_eval_size must be positive");
    if (direction_rule != "block_norm" && direction_rule != "block_std")
      throw ConfigError("config: direction_rule must be block_norm or block_std");
  }
};

namespace detail {
using json = nlohmann::ordered_json;

inline double as_double(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config: \"" + key + "\" must be a number");
  return v.get<double>();
}

inline std::size_t as_size(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError("config: \"" + key + "\" must be a non-negative integer");
  return v.get<std::size_t>();
}

inline std::uint64_t as_u64(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0))
    throw ConfigError("config: \"" + key + "\" must be a non-negative integer");
  return v.get<std::uint64_t>();
}

inline bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config: \"" + key + "\" must be a boolean");
  return v.get<bool>();
}

inline std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config: \"" + key + "\" must be a string");
  return v.get<std::string>();
}

template <typename T, typename F>
inline std::vector<T> as_list(const json& v, const std::string& key, F elem) {
  if (!v.is_array()) throw ConfigError("config: \"" + key + "\" must be an array");
  std::vector<T> out;
  for (const auto& e : v) out.push_back(elem(e, key));
  return out;
}
}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text) {
  detail::json doc;
  try {
    doc = detail::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be a JSON object");
  ExperimentConfig cfg;
  for (const auto& [key, value] : doc.items()) {
    using namespace detail;
    if (key == "task") cfg.task = as_string(value, key);
    else if (key == "dataset_size") cfg.dataset_size = as_size(value, key);
    else if (key == "seq_len") cfg.seq_len = as_size(value, key);
    else if (key == "train_size") cfg.train_size = as_size(value, key);
    else if (key == "data_seed") cfg.data_seed = as_u64(value, key);
    else if (key == "hidden_size") cfg.hidden_size = as_size(value, key);
    else if (key == "num_layers") cfg.num_layers = as_size(value, key);
    else if (key == "num_heads") cfg.num_heads = as_size(value, key);
    else if (key == "ffn_size") cfg.ffn_size = as_size(value, key);
    else if (key == "dropout_rate") cfg.dropout_rate = as_double(value, key);
    else if (key == "attention_capture") cfg.attention_capture = as_string(value, key);
    else if (key == "alpha") cfg.alpha = as_double(value, key);
    else if (key == "beta") cfg.beta = as_double(value, key);
    else if (key == "gamma") cfg.gamma = as_double(value, key);
    else if (key == "k") cfg.k = as_size(value, key);
    else if (key == "hsr_layers") cfg.hsr_layers = as_string(value, key);
    else if (key == "hsr_on") cfg.hsr_on = as_bool(value, key);
    else if (key == "mhar_on") cfg.mhar_on = as_bool(value, key);
    else if (key == "or_on") cfg.or_on = as_bool(value, key);
    else if (key == "lr") cfg.lr = as_double(value, key);
    else if (key == "adam_beta1") cfg.adam_beta1 = as_double(value, key);
    else if (key == "adam_beta2") cfg.adam_beta2 = as_double(value, key);
    else if (key == "adam_eps") cfg.adam_eps = as_double(value, key);
    else if (key == "weight_decay") cfg.weight_decay = as_double(value, key);
    else if (key == "clip_norm") cfg.clip_norm = as_double(value, key);
    else if (key == "epochs") cfg.epochs = as_size(value, key);
    else if (key == "batch_size") cfg.batch_size = as_size(value, key);
    else if (key == "seeds") cfg.seeds = as_list<std::uint64_t>(value, key, as_u64);
    else if (key == "out_dir") cfg.out_dir = as_string(value, key);
    else if (key == "sizes") cfg.sizes = as_list<std::size_t>(value, key, as_size);
    else if (key == "grid_points") cfg.grid_points = as_size(value, key);
    else if (key == "grid_range") cfg.grid_range = as_double(value, key);
    else if (key == "landscape_eval_size") cfg.landscape_eval_size = as_size(value, key);
    else if (key == "direction_rule") cfg.direction_rule = as_string(value, key);
    else if (key == "compare_baseline") cfg.compare_baseline = as_bool(value, key);
    else throw ConfigError("config: unknown key \"" + key + "\"");
  }
  cfg.validate();
  return cfg;
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  detail::json doc;
  doc["task"] = cfg.task;
  doc["dataset_size"] = cfg.dataset_size;
  doc["seq_len"] = cfg.seq_len;
  doc["train_size"] = cfg.train_size;
  doc["data_seed"] = cfg.data_seed;
  doc["hidden_size"] = cfg.hidden_size;
  doc["num_layers"] = cfg.num_layers;
  doc["num_heads"] = cfg.num_heads;
  doc["ffn_size"] = cfg.ffn_size;
  doc["dropout_rate"] = cfg.dropout_rate;
  doc["attention_capture"] = cfg.attention_capture;
  doc["alpha"] = cfg.alpha;
  doc["beta"] = cfg.beta;
  doc["gamma"] = cfg.gamma;
  doc["k"] = cfg.k;
  doc["hsr_layers"] = cfg.hsr_layers;
  doc["hsr_on"] = cfg.hsr_on;
  doc["mhar_on"] = cfg.mhar_on;
  doc["or_on"] = cfg.or_on;
  doc["lr"] = cfg.lr;
  doc["adam_beta1"] = cfg.adam_beta1;
  doc["adam_beta2"] = cfg.adam_beta2;
  doc["adam_eps"] = cfg.adam_eps;
  doc["weight_decay"] = cfg.weight_decay;
  doc["clip_norm"] = cfg.clip_norm;
  doc["epochs"] = cfg.epochs;
  doc["batch_size"] = cfg.batch_size;
  doc["seeds"] = cfg.seeds;
  doc["out_dir"] = cfg.out_dir;
  doc["sizes"] = cfg.sizes;
  doc["grid_points"] = cfg.grid_points;
  doc["grid_range"] = cfg.grid_range;
  doc["landscape_eval_size"] = cfg.landscape_eval_size;
  doc["direction_rule"] = cfg.direction_rule;
  doc["compare_baseline"] = cfg.compare_baseline;
  return doc.dump(2) + "\n";
}

inline ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

// The model implied by a config and the dataset it will see. The pad symbol
// is appended after the task alphabet.
inline ModelConfig make_model_config(const ExperimentConfig& cfg, const Dataset& ds) {
  ModelConfig mc;
  mc.vocab_size = ds.vocab_size + 1;
  mc.pad_id = ds.vocab_size;
  mc.max_len = cfg.seq_len;
  mc.hidden_size = cfg.hidden_size;
  mc.num_heads = cfg.num_heads;
  mc.num_layers = cfg.num_layers;
  mc.ffn_size = cfg.ffn_size;
  mc.num_classes = ds.num_classes;
  mc.dropout_rate = cfg.dropout_rate;
  mc.capture_pre_dropout = cfg.attention_capture == "pre_dropout";
  mc.validate();
  return mc;
}

inline LossWeights make_loss_weights(const ExperimentConfig& cfg) {
  LossWeights w;
  w.alpha = cfg.alpha;
  w.beta = cfg.beta;
  w.gamma = cfg.gamma;
  w.hsr_on = cfg.hsr_on;
  w.mhar_on = cfg.mhar_on;
  w.or_on = cfg.or_on;
  w.hsr_layers = cfg.hsr_layers == "last" ? HsrLayers::kLast : HsrLayers::kAll;
  return w;
}

inline AdamConfig make_adam_config(const ExperimentConfig& cfg) {
  AdamConfig ac;
  ac.lr = cfg.lr;
  ac.beta1 = cfg.adam_beta1;
  ac.beta2 = cfg.adam_beta2;
  ac.eps = cfg.adam_eps;
  ac.weight_decay = cfg.weight_decay;
  return ac;
}

}  // namespace lrdrop
