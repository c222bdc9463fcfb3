#pragma once

// Post-norm transformer encoder with a mean-pool classification head,
// recorded on a Tape so one backward sweep reaches every parameter.
//
// The forward pass returns a ForwardTrace: per-layer hidden states, per-head
// attention matrices, the logits node, and the dropout masks it drew. Two
// passes over the same tokens with different RNG streams are the two
// sub-models the regularizers compare.
//
// Padding: a token sequence may end in pad symbols. Pad key columns are
// masked out of every attention softmax with a -1e9 additive bias, pad rows
// are excluded from the pooled representation, and n_real tells loss code
// which rows are meaningful. Pad-free sequences skip the bias entirely.

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "lrdrop/autodiff.hpp"
#include "lrdrop/model.hpp"
#include "lrdrop/ops.hpp"
#include "lrdrop/rng.hpp"

namespace lrdrop {

inline constexpr double kPadBias = -1e9;

// Dropout control for one forward pass. With training off or rate zero the
// pass applies no dropout and records no masks.
struct DropoutCtx {
  bool training = false;
  double rate = 0.0;
  RngStream rng{0};
  std::map<std::string, Tensor>* masks = nullptr;

  bool active() const { return training && rate > 0.0; }
};

// Multiplies `x` by a fresh Bernoulli mask scaled by 1/keep. Identity when
// dropout is inactive. The mask draw depends only on (rng, site), never on
// call order.
inline Var apply_dropout(Tape& tape, Var x, DropoutCtx& ctx, const std::string& site) {
  if (!ctx.active()) return x;
  RngStream stream = ctx.rng.fork(site.c_str());
  const double keep = 1.0 - ctx.rate;
  const double inv_keep = 1.0 / keep;
  Tensor mask(x.value().shape());
  Tensor scaled(x.value().shape());
  for (std::size_t i = 0; i < mask.numel(); ++i) {
    mask[i] = stream.bernoulli(keep) ? 1.0 : 0.0;
    scaled[i] = mask[i] * inv_keep;
  }
  if (ctx.masks) ctx.masks->emplace(site, std::move(mask));
  return tape.mul(x, tape.constant(std::move(scaled)));
}

struct Attention {
  Var probs;   // row-stochastic n×n
  Var output;  // n×d_v
};

// softmax(q·kᵀ / sqrt(d_k) + bias) · v. `mask_bias`, when given, is added to
// the scores before the softmax.
inline Attention attention(Tape& tape, Var q, Var k, Var v, const Tensor* mask_bias = nullptr) {
  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.value().cols()));
  Var scores = tape.scale(tape.matmul_nt(q, k), inv_sqrt_dk);
  if (mask_bias) scores = tape.add(scores, tape.constant(*mask_bias));
  Var probs = tape.row_softmax(scores);
  return {probs, tape.matmul(probs, v)};
}

struct MhaResult {
  Var output;              // n×d, after the output projection
  std::vector<Var> probs;  // per head, as captured for the regularizer
};

// One multi-head attention block: per-head slices of x·Wq / x·Wk / x·Wv,
// scaled dot-product attention per head, concat, output projection.
// Attention probabilities are captured pre-dropout unless configured
// otherwise.
inline MhaResult multi_head_attention(Tape& tape, Var x, const Var& wq, const Var& wk,
                                      const Var& wv, const Var& wo, std::size_t num_heads,
                                      const Tensor* mask_bias, bool capture_pre_dropout,
                                      DropoutCtx& ctx, const std::string& site_prefix) {
  const std::size_t n = x.value().rows();
  const std::size_t d = x.value().cols();
  const std::size_t dk = d / num_heads;
  Var xq = tape.matmul(x, wq);
  Var xk = tape.matmul(x, wk);
  Var xv = tape.matmul(x, wv);
  std::vector<Var> heads, captured;
  heads.reserve(num_heads);
  captured.reserve(num_heads);
  for (std::size_t h = 0; h < num_heads; ++h) {
    Var qh = tape.block(xq, 0, n, h * dk, dk);
    Var kh = tape.block(xk, 0, n, h * dk, dk);
    Var vh = tape.block(xv, 0, n, h * dk, dk);
    Attention att = attention(tape, qh, kh, vh, mask_bias);
    Var probs = apply_dropout(tape, att.probs, ctx, site_prefix + ".h" + std::to_string(h));
    captured.push_back(capture_pre_dropout ? att.probs : probs);
    heads.push_back(tape.matmul(probs, vh));
  }
  Var concat = num_heads == 1 ? heads[0] : tape.concat_cols(heads);
  return {tape.matmul(concat, wo), std::move(captured)};
}

// max(0, x·W1 + b1)·W2 + b2, with dropout on the activation when active.
inline Var feed_forward(Tape& tape, Var x, const Var& w1, const Var& b1, const Var& w2,
                        const Var& b2, DropoutCtx& ctx, const std::string& site_prefix) {
  Var hidden = tape.relu(tape.add_rowvec(tape.matmul(x, w1), b1));
  hidden = apply_dropout(tape, hidden, ctx, site_prefix + ".act");
  return tape.add_rowvec(tape.matmul(hidden, w2), b2);
}

// Everything one training pass produces that the loss terms consume.
struct ForwardTrace {
  std::vector<Var> hidden_states;          // per layer, seq_len×d
  std::vector<std::vector<Var>> attentions;  // [layer][head], seq_len×seq_len
  Var logits;                              // 1×num_classes
  std::size_t n_real = 0;                  // leading non-pad rows
  int pass_id = 0;
  std::map<std::string, Tensor> masks;     // dropout masks by site
};

namespace detail {
inline std::size_t checked_real_length(const std::vector<int>& tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("forward_pass: empty token sequence");
  if (tokens.size() > cfg.max_len) throw std::invalid_argument("forward_pass: sequence too long");
  std::size_t n_real = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= cfg.vocab_size)
      throw std::invalid_argument("forward_pass: token id out of range");
    const bool is_pad = static_cast<std::size_t>(tokens[i]) == cfg.pad_id;
    if (is_pad && n_real == tokens.size()) n_real = i;
    if (!is_pad && n_real != tokens.size())
      throw std::invalid_argument("forward_pass: pad symbol inside the sequence");
  }
  if (n_real == 0) throw std::invalid_argument("forward_pass: all-pad sequence");
  return n_real;
}
}  // namespace detail

inline ForwardTrace forward_pass(Tape& tape, const ParamVars& params, const ModelConfig& cfg,
                                 const std::vector<int>& tokens, bool training, RngStream rng,
                                 int pass_id = 0) {
  const std::size_t n = tokens.size();
  const std::size_t n_real = detail::checked_real_length(tokens, cfg);

  ForwardTrace trace;
  trace.n_real = n_real;
  trace.pass_id = pass_id;
  DropoutCtx ctx{training, cfg.dropout_rate, rng, &trace.masks};

  Tensor pad_bias_store;
  const Tensor* mask_bias = nullptr;
  if (n_real < n) {
    pad_bias_store = Tensor({n, n});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = n_real; j < n; ++j) pad_bias_store.at(i, j) = kPadBias;
    mask_bias = &pad_bias_store;
  }

  std::vector<int> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = static_cast<int>(i);
  Var x = tape.add(tape.gather_rows(params.at("embed.token"), tokens),
                   tape.gather_rows(params.at("embed.pos"), positions));
  x = apply_dropout(tape, x, ctx, "emb");

  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const std::string site = "L" + std::to_string(l);
    MhaResult mha = multi_head_attention(
        tape, x, params.at(p + "attn.wq"), params.at(p + "attn.wk"), params.at(p + "attn.wv"),
        params.at(p + "attn.wo"), cfg.num_heads, mask_bias, cfg.capture_pre_dropout, ctx,
        site + ".attn");
    Var attn_out = apply_dropout(tape, mha.output, ctx, site + ".attn_out");
    x = tape.layer_norm(tape.add(x, attn_out), params.at(p + "norm1.gain"),
                        params.at(p + "norm1.bias"));
    Var ffn_out = feed_forward(tape, x, params.at(p + "ffn.w1"), params.at(p + "ffn.b1"),
                               params.at(p + "ffn.w2"), params.at(p + "ffn.b2"), ctx,
                               site + ".ffn");
    ffn_out = apply_dropout(tape, ffn_out, ctx, site + ".ffn_out");
    x = tape.layer_norm(tape.add(x, ffn_out), params.at(p + "norm2.gain"),
                        params.at(p + "norm2.bias"));
    trace.hidden_states.push_back(x);
    trace.attentions.push_back(std::move(mha.probs));
  }

  std::vector<double> pool(n, 0.0);
  for (std::size_t i = 0; i < n_real; ++i) pool[i] = 1.0 / static_cast<double>(n_real);
  Var pooled = tape.pool_rows(x, std::move(pool));
  trace.logits = tape.add_rowvec(tape.matmul(pooled, params.at("head.weight")),
                                 params.at("head.bias"));
  return trace;
}

}  // namespace lrdrop
