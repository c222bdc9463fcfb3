#pragma once

// Encoder hyperparameters, parameter initialization and the text checkpoint
// format. Parameters live in a ParamMap keyed by block name; every consumer
// (optimizer, checkpoints, landscape directions) iterates that map in sorted
// order, which is what makes runs reproducible.

#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lrdrop/rng.hpp"
#include "lrdrop/tensor.hpp"

namespace lrdrop {

struct ModelConfig {
  std::size_t vocab_size = 0;  // includes the pad symbol
  std::size_t pad_id = 0;
  std::size_t max_len = 0;
  std::size_t hidden_size = 0;
  std::size_t num_heads = 0;
  std::size_t num_layers = 0;
  std::size_t ffn_size = 0;
  std::size_t num_classes = 0;
  double dropout_rate = 0.1;
  // Attention matrices handed to the regularizer are taken before the
  // attention-probability dropout by default.
  bool capture_pre_dropout = true;

  std::size_t head_dim() const { return hidden_size / num_heads; }

  void validate() const {
    if (vocab_size < 2) throw std::invalid_argument("ModelConfig: vocab_size must be >= 2");
    if (pad_id >= vocab_size) throw std::invalid_argument("ModelConfig: pad_id out of range");
    if (max_len == 0) throw std::invalid_argument("ModelConfig: max_len must be positive");
    if (hidden_size == 0 || num_heads == 0 || hidden_size % num_heads != 0)
      throw std::invalid_argument("ModelConfig: hidden_size must be a positive multiple of num_heads");
    if (num_layers == 0) throw std::invalid_argument("ModelConfig: num_layers must be positive");
    if (ffn_size == 0) throw std::invalid_argument("ModelConfig: ffn_size must be positive");
    if (num_classes < 2) throw std::invalid_argument("ModelConfig: num_classes must be >= 2");
    if (!(dropout_rate >= 0.0) || dropout_rate >= 1.0)
      throw std::invalid_argument("ModelConfig: dropout_rate must lie in [0, 1)");
  }
};

// Shape of every parameter block, in map (= sorted) order.
inline std::map<std::string, std::vector<std::size_t>> param_shapes(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.hidden_size;
  std::map<std::string, std::vector<std::size_t>> shapes;
  shapes["embed.token"] = {cfg.vocab_size, d};
  shapes["embed.pos"] = {cfg.max_len, d};
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    shapes[p + "attn.wq"] = {d, d};
    shapes[p + "attn.wk"] = {d, d};
    shapes[p + "attn.wv"] = {d, d};
    shapes[p + "attn.wo"] = {d, d};
    shapes[p + "norm1.gain"] = {d};
    shapes[p + "norm1.bias"] = {d};
    shapes[p + "ffn.w1"] = {d, cfg.ffn_size};
    shapes[p + "ffn.b1"] = {cfg.ffn_size};
    shapes[p + "ffn.w2"] = {cfg.ffn_size, d};
    shapes[p + "ffn.b2"] = {d};
    shapes[p + "norm2.gain"] = {d};
    shapes[p + "norm2.bias"] = {d};
  }
  shapes["head.weight"] = {d, cfg.num_classes};
  shapes["head.bias"] = {cfg.num_classes};
  return shapes;
}

namespace detail {
// Glorot uniform: limit = sqrt(6 / (fan_in + fan_out)) for a 2-D block.
inline Tensor glorot(const std::vector<std::size_t>& shape, RngStream rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = (2.0 * rng.uniform() - 1.0) * limit;
  return t;
}

inline Tensor gaussian_init(const std::vector<std::size_t>& shape, double stddev, RngStream rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.gaussian();
  return t;
}
}  // namespace detail

// Fresh parameters. Each block draws from its own stream keyed by the block
// name, so the values of one block do not depend on any other block's size.
inline ParamMap init_params(const ModelConfig& cfg, std::uint64_t seed) {
  RngStream root(seed);
  ParamMap params;
  for (const auto& [name, shape] : param_shapes(cfg)) {
    RngStream block = root.fork(name.c_str());
    const bool is_embed = name.rfind("embed.", 0) == 0;
    const bool is_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "gain") == 0;
    const bool is_bias = name.compare(name.size() - 4, 4, "bias") == 0 ||
                         name.find(".b1") != std::string::npos ||
                         name.find(".b2") != std::string::npos;
    if (is_embed) {
      params.emplace(name, detail::gaussian_init(shape, 0.02, block));
    } else if (is_gain) {
      params.emplace(name, Tensor::full(shape, 1.0));
    } else if (is_bias) {
      params.emplace(name, Tensor(shape));
    } else {
      params.emplace(name, detail::glorot(shape, block));
    }
  }
  return params;
}

inline std::size_t num_params(const ParamMap& params) {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

// Throws unless `params` has exactly the blocks and shapes `cfg` implies.
inline void validate_params(const ModelConfig& cfg, const ParamMap& params) {
  const auto shapes = param_shapes(cfg);
  if (params.size() != shapes.size())
    throw std::invalid_argument("validate_params: block count mismatch");
  for (const auto& [name, shape] : shapes) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("validate_params: missing block " + name);
    if (it->second.shape() != shape)
      throw std::invalid_argument("validate_params: shape mismatch for " + name);
  }
}

inline constexpr const char* kCheckpointMagic = "lrdrop-ckpt";
inline constexpr int kCheckpointVersion = 1;

// Plain-text checkpoint. Values are written with enough digits to round-trip
// bit for bit; loading then saving reproduces the file byte for byte.
inline void save_checkpoint(const std::string& path, const ParamMap& params) {
  for (const auto& [name, t] : params)
    if (!t.all_finite()) throw NumericError("save_checkpoint: non-finite values in " + name);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "blocks " << params.size() << '\n';
  for (const auto& [name, t] : params) {
    out << name << ' ' << t.ndim();
    for (std::size_t d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.numel(); ++i) {
      if (i) out << ' ';
      out << format_g17(t[i]);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline ParamMap load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic;
  int version = 0;
  if (!(in >> magic >> version) || magic != kCheckpointMagic || version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: bad header in " + path);
  std::string word;
  std::size_t n_blocks = 0;
  if (!(in >> word >> n_blocks) || word != "blocks")
    throw std::runtime_error("load_checkpoint: bad block count in " + path);
  ParamMap params;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    std::string name;
    std::size_t ndim = 0;
    if (!(in >> name >> ndim) || ndim == 0 || ndim > 2)
      throw std::runtime_error("load_checkpoint: bad block header in " + path);
    std::vector<std::size_t> shape(ndim);
    std::size_t numel = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
      if (!(in >> shape[i]) || shape[i] == 0)
        throw std::runtime_error("load_checkpoint: bad shape in " + path);
      numel *= shape[i];
    }
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) {
      if (!(in >> data[i])) throw std::runtime_error("load_checkpoint: truncated values in " + path);
      if (!std::isfinite(data[i])) throw NumericError("load_checkpoint: non-finite value in " + name);
    }
    if (!params.emplace(name, Tensor(std::move(shape), std::move(data))).second)
      throw std::runtime_error("load_checkpoint: duplicate block " + name);
  }
  return params;
}

}  // namespace lrdrop
