#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/rng.hpp"
#include "rgm/tape.hpp"
#include "rgm/tensor.hpp"
#include "rgm/vocab.hpp"

namespace rgm {

inline constexpr float kRmsEps = 1e-5f;
inline constexpr float kInitStd = 0.08f;

/// MLP hidden width multiplier (kept small; the toy model is latency-bound).
inline constexpr int kMlpMult = 2;

struct PolicyConfig {
  int vocab_size = 100;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int max_context = 512;
  float dropout_p = 0.0f;

  int head_dim() const { return d_model / n_heads; }
  int d_ff() const { return kMlpMult * d_model; }

  void validate() const {
    require(n_layers >= 2, "policy: n_layers must be >= 2 (a second-to-last layer must exist)");
    require(d_model % n_heads == 0, "policy: d_model must be divisible by n_heads");
    require(vocab_size > 0 && d_model > 0 && n_heads > 0 && max_context > 0,
            "policy: sizes must be positive");
    require(dropout_p >= 0.0f && dropout_p < 1.0f, "policy: dropout_p must be in [0,1)");
  }
};

template <typename T>
T attn_scale(int head_dim) {
  return T(1) / std::sqrt(static_cast<T>(head_dim));
}

/**
 * Decoder-only transformer parameters: learned token/position embeddings,
 * pre-norm blocks (RMS norm, causal multi-head attention, two-layer MLP),
 * final norm and an untied unembedding.
 */
template <typename T>
struct PolicyParams {
  struct Block {
    Parameter<T> norm1_g, wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<T> norm2_g, w1, b1, w2, b2;
  };

  PolicyConfig cfg;
  Parameter<T> tok_embed, pos_embed;
  std::vector<Block> blocks;
  Parameter<T> norm_f_g;
  Parameter<T> unembed_w, unembed_b;

  PolicyParams() = default;

  PolicyParams(const PolicyConfig& c, RngState rng) : cfg(c) {
    cfg.validate();
    const int d = cfg.d_model, ff = cfg.d_ff(), v = cfg.vocab_size;
    const T s = T(kInitStd);
    tok_embed = Parameter<T>("tok_embed", Tensor<T>::randn({v, d}, rng, s));
    pos_embed = Parameter<T>("pos_embed", Tensor<T>::randn({cfg.max_context, d}, rng, s));
    blocks.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
      Block& b = blocks[static_cast<size_t>(l)];
      const std::string p = "block" + std::to_string(l) + ".";
      b.norm1_g = Parameter<T>(p + "norm1_g", Tensor<T>::full({d}, T(1)));
      b.wq = Parameter<T>(p + "wq", Tensor<T>::randn({d, d}, rng, s));
      b.bq = Parameter<T>(p + "bq", Tensor<T>::zeros({d}));
      b.wk = Parameter<T>(p + "wk", Tensor<T>::randn({d, d}, rng, s));
      b.bk = Parameter<T>(p + "bk", Tensor<T>::zeros({d}));
      b.wv = Parameter<T>(p + "wv", Tensor<T>::randn({d, d}, rng, s));
      b.bv = Parameter<T>(p + "bv", Tensor<T>::zeros({d}));
      b.wo = Parameter<T>(p + "wo", Tensor<T>::randn({d, d}, rng, s));
      b.bo = Parameter<T>(p + "bo", Tensor<T>::zeros({d}));
      b.norm2_g = Parameter<T>(p + "norm2_g", Tensor<T>::full({d}, T(1)));
      b.w1 = Parameter<T>(p + "w1", Tensor<T>::randn({ff, d}, rng, s));
      b.b1 = Parameter<T>(p + "b1", Tensor<T>::zeros({ff}));
      b.w2 = Parameter<T>(p + "w2", Tensor<T>::randn({d, ff}, rng, s));
      b.b2 = Parameter<T>(p + "b2", Tensor<T>::zeros({d}));
    }
    norm_f_g = Parameter<T>("norm_f_g", Tensor<T>::full({d}, T(1)));
    unembed_w = Parameter<T>("unembed_w", Tensor<T>::randn({v, d}, rng, s));
    unembed_b = Parameter<T>("unembed_b", Tensor<T>::zeros({v}));
  }

  template <typename Self, typename Fn>
  static void for_each_param(Self& self, Fn&& fn) {
    fn(self.tok_embed);
    fn(self.pos_embed);
    for (auto& b : self.blocks) {
      fn(b.norm1_g);
      fn(b.wq);
      fn(b.bq);
      fn(b.wk);
      fn(b.bk);
      fn(b.wv);
      fn(b.bv);
      fn(b.wo);
      fn(b.bo);
      fn(b.norm2_g);
      fn(b.w1);
      fn(b.b1);
      fn(b.w2);
      fn(b.b2);
    }
    fn(self.norm_f_g);
    fn(self.unembed_w);
    fn(self.unembed_b);
  }

  /// Fixed-order list of all parameters (checkpoint layout order).
  std::vector<Parameter<T>*> param_list() {
    std::vector<Parameter<T>*> out;
    for_each_param(*this, [&](Parameter<T>& p) { out.push_back(&p); });
    return out;
  }

  int64_t param_count() const {
    int64_t n = 0;
    for_each_param(*this, [&](const Parameter<T>& p) { n += static_cast<int64_t>(p.value.numel()); });
    return n;
  }

  void zero_grads() {
    for (auto* p : param_list()) p->zero_grad();
  }
};

template <typename T>
struct PolicyTapeOut {
  typename Tape<T>::NodeId logits;    // (L, vocab)
  typename Tape<T>::NodeId features;  // (L, d_model), second-to-last layer output
};

/**
 * Teacher-forced tape forward over a full token sequence. Row i of the
 * outputs corresponds to feeding tokens[i]: logits row i predicts token i+1,
 * and features row i is the second-to-last layer's representation of
 * position i (the rows the SPRM head reads).
 */
template <typename T>
PolicyTapeOut<T> policy_forward_tape(Tape<T>& t, PolicyParams<T>& P, std::span<const int> tokens,
                                     bool train = false, RngState* dropout_rng = nullptr) {
  const PolicyConfig& cfg = P.cfg;
  const int L = static_cast<int>(tokens.size());
  require(L >= 1, "policy forward: context must hold at least one token");
  require(L <= cfg.max_context, "policy forward: context length " + std::to_string(L) +
                                    " exceeds max_context " + std::to_string(cfg.max_context));
  const int hd = cfg.head_dim();
  const T scale = attn_scale<T>(hd);
  const bool use_dropout = train && cfg.dropout_p > 0.0f;
  require(!use_dropout || dropout_rng != nullptr, "policy forward: dropout needs an rng");

  std::vector<int> ids(tokens.begin(), tokens.end());
  std::vector<int> positions(static_cast<size_t>(L));
  for (int i = 0; i < L; ++i) positions[static_cast<size_t>(i)] = i;

  auto x = t.add(t.embedding(t.param(P.tok_embed), ids),
                 t.embedding(t.param(P.pos_embed), positions));

  typename Tape<T>::NodeId features = Tape<T>::kNone;
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& b = P.blocks[static_cast<size_t>(l)];
    auto hn = t.rmsnorm(x, t.param(b.norm1_g), T(kRmsEps));
    auto q = t.linear(hn, t.param(b.wq), t.param(b.bq));
    auto k = t.linear(hn, t.param(b.wk), t.param(b.bk));
    auto v = t.linear(hn, t.param(b.wv), t.param(b.bv));
    std::vector<typename Tape<T>::NodeId> heads;
    heads.reserve(static_cast<size_t>(cfg.n_heads));
    for (int h = 0; h < cfg.n_heads; ++h) {
      const int c0 = h * hd, c1 = (h + 1) * hd;
      auto qh = t.slice_cols(q, c0, c1);
      auto kh = t.slice_cols(k, c0, c1);
      auto vh = t.slice_cols(v, c0, c1);
      auto probs = t.causal_softmax(t.scale(t.matmul_nt(qh, kh), scale));
      heads.push_back(t.matmul(probs, vh));
    }
    auto attn = t.linear(t.concat_cols(heads), t.param(b.wo), t.param(b.bo));
    if (use_dropout) attn = t.dropout(attn, T(cfg.dropout_p), *dropout_rng, true);
    x = t.add(x, attn);

    auto h2 = t.rmsnorm(x, t.param(b.norm2_g), T(kRmsEps));
    auto m = t.linear(t.relu(t.linear(h2, t.param(b.w1), t.param(b.b1))), t.param(b.w2),
                      t.param(b.b2));
    if (use_dropout) m = t.dropout(m, T(cfg.dropout_p), *dropout_rng, true);
    x = t.add(x, m);

    if (l == cfg.n_layers - 2) features = x;
  }

  auto logits = t.linear(t.rmsnorm(x, t.param(P.norm_f_g), T(kRmsEps)), t.param(P.unembed_w),
                         t.param(P.unembed_b));
  return {logits, features};
}

/**
 * One sampled reasoning trajectory.
 *
 * think_tokens excludes the <think>/<\/think> markers. hidden_states row i is
 * the second-to-last-layer representation of think token i. logprobs holds
 * the raw log-softmax value of every *sampled* token in generation order:
 * think tokens, then </think> when it was sampled (not budget-forced), then
 * answer tokens, then <end> when sampled.
 */
struct Trajectory {
  std::vector<int> query_tokens;
  std::vector<int> think_tokens;
  std::vector<int> answer_tokens;
  bool think_closed = false;  // false => truncated think region
  bool has_answer = false;    // answer region was generated
  bool answer_ended = false;  // <end> was sampled
  Tensor<float> hidden_states;  // (|think_tokens|, d_model)
  std::vector<float> logprobs;
  uint64_t rng_label = 0;

  bool truncated() const { return !think_closed; }

  int sampled_token_count() const {
    return static_cast<int>(think_tokens.size()) + (think_closed ? 1 : 0) +
           static_cast<int>(answer_tokens.size()) + (answer_ended ? 1 : 0);
  }

  /// Full token sequence. </think> appears when it was sampled or when an
  /// answer region follows a truncated think; <end> only when sampled.
  std::vector<int> full_tokens() const {
    std::vector<int> out = query_tokens;
    out.push_back(Vocabulary::kThinkOpen);
    out.insert(out.end(), think_tokens.begin(), think_tokens.end());
    if (think_closed || has_answer) out.push_back(Vocabulary::kThinkClose);
    out.insert(out.end(), answer_tokens.begin(), answer_tokens.end());
    if (answer_ended) out.push_back(Vocabulary::kEnd);
    return out;
  }

  /// Positions within full_tokens() that were sampled (carry a logprob).
  std::vector<int> sampled_positions() const {
    std::vector<int> out;
    const int q = static_cast<int>(query_tokens.size());
    const int nt = static_cast<int>(think_tokens.size());
    for (int i = 0; i < nt; ++i) out.push_back(q + 1 + i);
    int pos = q + 1 + nt;
    if (think_closed) out.push_back(pos);
    if (think_closed || has_answer) pos += 1;
    for (int i = 0; i < static_cast<int>(answer_tokens.size()); ++i) out.push_back(pos + i);
    pos += static_cast<int>(answer_tokens.size());
    if (answer_ended) out.push_back(pos);
    return out;
  }
};

}  // namespace rgm
