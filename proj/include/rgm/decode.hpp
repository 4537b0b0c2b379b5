#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/kernels.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/tensor.hpp"
#include "rgm/vocab.hpp"

namespace rgm {

/**
 * Per-layer K/V rows for a contiguous run of positions. Spans chain through
 * `parent`, so a Best-of-N candidate extends a shared query prefix and an
 * MCTS child extends its parent node without recomputing or copying history.
 * A parent must outlive its children.
 */
struct DecodeSpan {
  const DecodeSpan* parent = nullptr;
  int base_pos = 0;
  int len = 0;
  // [layer][row * d_model + j]
  std::vector<std::vector<float>> k, v;

  void init(int n_layers, const DecodeSpan* parent_span) {
    parent = parent_span;
    base_pos = (parent == nullptr) ? 0 : parent->base_pos + parent->len;
    len = 0;
    k.assign(static_cast<size_t>(n_layers), {});
    v.assign(static_cast<size_t>(n_layers), {});
  }

  void truncate(int new_len, int d_model) {
    require(new_len >= 0 && new_len <= len, "decode span: bad truncation length");
    len = new_len;
    for (auto& kl : k) kl.resize(static_cast<size_t>(new_len) * d_model);
    for (auto& vl : v) vl.resize(static_cast<size_t>(new_len) * d_model);
  }
};

/**
 * Incremental eval-mode forward pass (no tape, no dropout). Feeding a token
 * produces the logits predicting the next position and the second-to-last
 * layer feature of the fed position. The arithmetic per position is
 * bit-identical to the tape forward and independent of how the history is
 * split into spans, because every kernel walks positions in ascending order.
 */
class Decoder {
 public:
  Decoder(const PolicyParams<float>& params, const DecodeSpan* parent = nullptr)
      : P_(params), cfg_(params.cfg) {
    span_.init(cfg_.n_layers, parent);
    for (const DecodeSpan* s = parent; s != nullptr; s = s->parent) chain_.push_back(s);
    std::reverse(chain_.begin(), chain_.end());
    if (!chain_.empty()) {
      require(chain_.front()->base_pos == 0, "decoder: span chain must start at position 0");
    }
    const int d = cfg_.d_model;
    x_.resize(static_cast<size_t>(d));
    hn_.resize(static_cast<size_t>(d));
    q_.resize(static_cast<size_t>(d));
    kv_row_.resize(static_cast<size_t>(d) * 2);
    attn_.resize(static_cast<size_t>(d));
    proj_.resize(static_cast<size_t>(d));
    mlp_.resize(static_cast<size_t>(cfg_.d_ff()));
    scores_.resize(static_cast<size_t>(cfg_.max_context));
    feature_.resize(static_cast<size_t>(d));
    logits_.resize(static_cast<size_t>(cfg_.vocab_size));
  }

  /// Absolute position the next step() call will occupy.
  int pos() const { return span_.base_pos + span_.len; }

  struct StepOut {
    std::span<const float> logits;   // (vocab) prediction for pos()+1
    std::span<const float> feature;  // (d_model) tap at the fed position
  };

  /// Feed one token at the next position.
  StepOut step(int token) {
    const int p = pos();
    require(p < cfg_.max_context,
            "decoder: context overflow at position " + std::to_string(p));
    require(token >= 0 && token < cfg_.vocab_size, "decoder: token id out of range");
    const int d = cfg_.d_model;
    const int hd = cfg_.head_dim();
    const float scale = attn_scale<float>(hd);

    const float* te = P_.tok_embed.value.row(token).data();
    const float* pe = P_.pos_embed.value.row(p).data();
    for (int j = 0; j < d; ++j) x_[j] = te[j] + pe[j];

    for (int l = 0; l < cfg_.n_layers; ++l) {
      const auto& b = P_.blocks[static_cast<size_t>(l)];
      kernels::rmsnorm_row(x_.data(), b.norm1_g.value.data.data(), hn_.data(), d, kRmsEps);
      kernels::linear_row(hn_.data(), b.wq.value.data.data(), b.bq.value.data.data(), q_.data(), d,
                          d);
      float* krow = kv_row_.data();
      float* vrow = kv_row_.data() + d;
      kernels::linear_row(hn_.data(), b.wk.value.data.data(), b.bk.value.data.data(), krow, d, d);
      kernels::linear_row(hn_.data(), b.wv.value.data.data(), b.bv.value.data.data(), vrow, d, d);
      auto& kl = span_.k[static_cast<size_t>(l)];
      auto& vl = span_.v[static_cast<size_t>(l)];
      kl.insert(kl.end(), krow, krow + d);
      vl.insert(vl.end(), vrow, vrow + d);

      for (int h = 0; h < cfg_.n_heads; ++h) {
        const int off = h * hd;
        const float* qh = q_.data() + off;
        int n = 0;
        for (const DecodeSpan* s : chain_) {
          const float* ks = s->k[static_cast<size_t>(l)].data();
          for (int r = 0; r < s->len; ++r) {
            scores_[n++] = kernels::dot(qh, ks + static_cast<size_t>(r) * d + off, hd) * scale;
          }
        }
        {
          const float* ks = kl.data();
          for (int r = 0; r < span_.len + 1; ++r) {
            scores_[n++] = kernels::dot(qh, ks + static_cast<size_t>(r) * d + off, hd) * scale;
          }
        }
        kernels::softmax_inplace(scores_.data(), n);
        float* out = attn_.data() + off;
        std::fill(out, out + hd, 0.0f);
        int j = 0;
        for (const DecodeSpan* s : chain_) {
          const float* vs = s->v[static_cast<size_t>(l)].data();
          for (int r = 0; r < s->len; ++r) {
            kernels::axpy(scores_[j++], vs + static_cast<size_t>(r) * d + off, out, hd);
          }
        }
        {
          const float* vs = vl.data();
          for (int r = 0; r < span_.len + 1; ++r) {
            kernels::axpy(scores_[j++], vs + static_cast<size_t>(r) * d + off, out, hd);
          }
        }
      }
      kernels::linear_row(attn_.data(), b.wo.value.data.data(), b.bo.value.data.data(),
                          proj_.data(), d, d);
      for (int j = 0; j < d; ++j) x_[j] += proj_[j];

      kernels::rmsnorm_row(x_.data(), b.norm2_g.value.data.data(), hn_.data(), d, kRmsEps);
      kernels::linear_row(hn_.data(), b.w1.value.data.data(), b.b1.value.data.data(), mlp_.data(),
                          d, cfg_.d_ff());
      for (auto& m : mlp_) m = kernels::relu(m);
      kernels::linear_row(mlp_.data(), b.w2.value.data.data(), b.b2.value.data.data(),
                          proj_.data(), cfg_.d_ff(), d);
      for (int j = 0; j < d; ++j) x_[j] += proj_[j];

      if (l == cfg_.n_layers - 2) std::copy(x_.begin(), x_.end(), feature_.begin());
    }
    span_.len += 1;

    kernels::rmsnorm_row(x_.data(), P_.norm_f_g.value.data.data(), hn_.data(), d, kRmsEps);
    kernels::linear_row(hn_.data(), P_.unembed_w.value.data.data(),
                        P_.unembed_b.value.data.data(), logits_.data(), d, cfg_.vocab_size);
    for (float lg : logits_) {
      if (!std::isfinite(lg)) throw NumericError("decoder: non-finite logit");
    }
    return {std::span<const float>(logits_), std::span<const float>(feature_)};
  }

  /// Hand the accumulated span to the caller (for forking children off it).
  DecodeSpan take_span() && { return std::move(span_); }
  const DecodeSpan& span() const { return span_; }

  void truncate_tail(int keep_rows) { span_.truncate(keep_rows, cfg_.d_model); }

 private:
  const PolicyParams<float>& P_;
  const PolicyConfig& cfg_;
  DecodeSpan span_;
  std::vector<const DecodeSpan*> chain_;
  std::vector<float> x_, hn_, q_, kv_row_, attn_, proj_, mlp_, scores_, feature_, logits_;
};

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SamplingParams {
  float temperature = 0.8f;
  float top_p = 1.0f;
  int max_think_tokens = 96;
  int max_answer_tokens = 16;
};

enum class SampleMode { think, answer };

struct SampledToken {
  int token = -1;
  float logprob = 0.0f;  // raw log-softmax at the chosen token
};

/**
 * Draw the next token. Mode masks keep regions well-formed: think mode bans
 * <think> and <end>; answer mode bans <think> and </think>. temperature == 0
 * is greedy argmax (ties to the lowest index). The recorded logprob is the
 * unmasked, untempered log-softmax of the chosen token, so teacher-forced
 * re-scoring reproduces it exactly.
 */
inline SampledToken sample_token(std::span<const float> logits, SampleMode mode,
                                 const SamplingParams& sp, RngState& rng,
                                 std::vector<float>& scratch) {
  const int n = static_cast<int>(logits.size());
  auto banned = [mode](int id) {
    if (mode == SampleMode::think) return id == Vocabulary::kThinkOpen || id == Vocabulary::kEnd;
    return id == Vocabulary::kThinkOpen || id == Vocabulary::kThinkClose;
  };

  int chosen = -1;
  if (sp.temperature <= 0.0f) {
    float best = -std::numeric_limits<float>::infinity();
    for (int i = 0; i < n; ++i) {
      if (banned(i)) continue;
      if (logits[static_cast<size_t>(i)] > best) {
        best = logits[static_cast<size_t>(i)];
        chosen = i;
      }
    }
  } else {
    scratch.assign(static_cast<size_t>(n), 0.0f);
    float mx = -std::numeric_limits<float>::infinity();
    for (int i = 0; i < n; ++i) {
      if (!banned(i)) mx = std::max(mx, logits[static_cast<size_t>(i)] / sp.temperature);
    }
    float sum = 0.0f;
    for (int i = 0; i < n; ++i) {
      if (banned(i)) continue;
      scratch[static_cast<size_t>(i)] = std::exp(logits[static_cast<size_t>(i)] / sp.temperature - mx);
      sum += scratch[static_cast<size_t>(i)];
    }
    for (auto& p : scratch) p /= sum;

    if (sp.top_p < 1.0f) {
      // Keep the smallest prob-descending prefix reaching top_p; ties break
      // toward lower index so the kept set is deterministic.
      std::vector<int> order;
      order.reserve(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        if (scratch[static_cast<size_t>(i)] > 0.0f) order.push_back(i);
      }
      std::sort(order.begin(), order.end(), [&](int a, int b) {
        const float pa = scratch[static_cast<size_t>(a)], pb = scratch[static_cast<size_t>(b)];
        if (pa != pb) return pa > pb;
        return a < b;
      });
      float cum = 0.0f;
      size_t keep = 0;
      while (keep < order.size()) {
        cum += scratch[static_cast<size_t>(order[keep])];
        ++keep;
        if (cum >= sp.top_p) break;
      }
      std::vector<bool> kept(static_cast<size_t>(n), false);
      float kept_sum = 0.0f;
      for (size_t i = 0; i < keep; ++i) {
        kept[static_cast<size_t>(order[i])] = true;
        kept_sum += scratch[static_cast<size_t>(order[i])];
      }
      for (int i = 0; i < n; ++i) {
        if (kept[static_cast<size_t>(i)]) {
          scratch[static_cast<size_t>(i)] /= kept_sum;
        } else {
          scratch[static_cast<size_t>(i)] = 0.0f;
        }
      }
    }

    const double u = rng.next_unit();
    double cum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (scratch[static_cast<size_t>(i)] <= 0.0f) continue;
      cum += static_cast<double>(scratch[static_cast<size_t>(i)]);
      chosen = i;
      if (u < cum) break;
    }
  }
  require(chosen >= 0, "sample_token: no candidate token available");
  return {chosen, kernels::log_softmax_at(logits.data(), n, chosen)};
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Query context processed up to and including <think>, ready to fork
/// candidates. `next_logits` predicts the first think token.
struct PrefixState {
  DecodeSpan span;
  std::vector<float> next_logits;
};

inline PrefixState build_prefix(const PolicyParams<float>& params,
                                std::span<const int> query_tokens) {
  require(!query_tokens.empty(), "generation: query context must hold at least one token");
  Decoder dec(params);
  Decoder::StepOut out{};
  for (int tok : query_tokens) out = dec.step(tok);
  out = dec.step(Vocabulary::kThinkOpen);
  PrefixState st;
  st.next_logits.assign(out.logits.begin(), out.logits.end());
  st.span = std::move(dec).take_span();
  return st;
}

/// A generated candidate plus the decode state needed to continue it into an
/// answer without re-encoding. `span` chains off the prefix it was built from.
struct ThinkCandidate {
  Trajectory traj;
  DecodeSpan span;
  std::vector<float> next_logits;  // prediction after the last fed token
  bool context_full = false;
};

/**
 * Sample a thinking region off a shared prefix. Emits think tokens until
 * </think>, the token budget, or the context limit; the trajectory is marked
 * truncated when </think> was not sampled.
 */
inline ThinkCandidate generate_thinking_from(const PolicyParams<float>& params,
                                             const PrefixState& prefix,
                                             std::span<const int> query_tokens,
                                             const SamplingParams& sp, RngState rng,
                                             uint64_t rng_label = 0) {
  const PolicyConfig& cfg = params.cfg;
  ThinkCandidate cand;
  Trajectory& traj = cand.traj;
  traj.query_tokens.assign(query_tokens.begin(), query_tokens.end());
  traj.rng_label = rng_label;

  Decoder dec(params, &prefix.span);
  std::vector<float> scratch;
  std::vector<float> features;
  std::span<const float> logits(prefix.next_logits);

  while (static_cast<int>(traj.think_tokens.size()) < sp.max_think_tokens) {
    if (dec.pos() >= cfg.max_context) {
      cand.context_full = true;
      break;
    }
    const SampledToken s = sample_token(logits, SampleMode::think, sp, rng, scratch);
    traj.logprobs.push_back(s.logprob);
    if (s.token == Vocabulary::kThinkClose) {
      traj.think_closed = true;
      break;
    }
    traj.think_tokens.push_back(s.token);
    const auto out = dec.step(s.token);
    features.insert(features.end(), out.feature.begin(), out.feature.end());
    logits = out.logits;
  }
  traj.hidden_states =
      Tensor<float>({static_cast<int>(traj.think_tokens.size()), cfg.d_model}, std::move(features));
  cand.next_logits.assign(logits.begin(), logits.end());
  cand.span = std::move(dec).take_span();
  return cand;
}

/**
 * Continue a think candidate into an answer: feeds </think> (sampled or
 * forced after truncation) and samples answer tokens until <end> or the
 * budget. Fills the candidate's trajectory in place.
 */
inline void generate_answer_from(const PolicyParams<float>& params, ThinkCandidate& cand,
                                 const SamplingParams& sp, RngState rng) {
  const PolicyConfig& cfg = params.cfg;
  Trajectory& traj = cand.traj;
  require(!traj.has_answer, "generation: answer region already generated");
  traj.has_answer = true;

  // The local decoder chains off cand.span, which must stay put until this
  // returns; the answer rows themselves are not needed afterwards.
  Decoder dec(params, &cand.span);
  std::vector<float> scratch;
  if (dec.pos() >= cfg.max_context) return;
  auto out = dec.step(Vocabulary::kThinkClose);
  std::span<const float> logits = out.logits;

  while (static_cast<int>(traj.answer_tokens.size()) < sp.max_answer_tokens) {
    const SampledToken s = sample_token(logits, SampleMode::answer, sp, rng, scratch);
    traj.logprobs.push_back(s.logprob);
    if (s.token == Vocabulary::kEnd) {
      traj.answer_ended = true;
      break;
    }
    traj.answer_tokens.push_back(s.token);
    if (dec.pos() >= cfg.max_context) break;
    out = dec.step(s.token);
    logits = out.logits;
  }
}

/// Standalone answer generation from (query, think) without a prior state.
inline Trajectory generate_answer(const PolicyParams<float>& params,
                                  std::span<const int> query_tokens,
                                  std::span<const int> think_tokens, bool think_closed,
                                  const SamplingParams& sp, RngState rng) {
  PrefixState prefix = build_prefix(params, query_tokens);
  ThinkCandidate cand;
  cand.traj.query_tokens.assign(query_tokens.begin(), query_tokens.end());
  cand.traj.think_tokens.assign(think_tokens.begin(), think_tokens.end());
  cand.traj.think_closed = think_closed;

  Decoder dec(params, &prefix.span);
  std::vector<float> features;
  std::span<const float> logits(prefix.next_logits);
  for (int tok : think_tokens) {
    const auto out = dec.step(tok);
    features.insert(features.end(), out.feature.begin(), out.feature.end());
    logits = out.logits;
  }
  cand.traj.hidden_states = Tensor<float>(
      {static_cast<int>(think_tokens.size()), params.cfg.d_model}, std::move(features));
  cand.traj.logprobs.clear();  // teacher-forced region carries no sampling logprobs
  cand.next_logits.assign(logits.begin(), logits.end());
  cand.span = std::move(dec).take_span();

  generate_answer_from(params, cand, sp, rng);
  return std::move(cand.traj);
}

/**
 * Teacher-forced re-scoring of an assembled trajectory: recomputes the
 * logprobs of all sampled tokens and the think-region features in eval mode.
 */
struct RescoreOut {
  std::vector<float> logprobs;
  Tensor<float> features;  // (|think_tokens|, d_model)
};

inline RescoreOut rescore_trajectory(const PolicyParams<float>& params, const Trajectory& traj) {
  const std::vector<int> tokens = traj.full_tokens();
  const std::vector<int> sampled = traj.sampled_positions();
  const int q = static_cast<int>(traj.query_tokens.size());
  const int nt = static_cast<int>(traj.think_tokens.size());

  Decoder dec(params);
  RescoreOut out;
  out.features = Tensor<float>({nt, params.cfg.d_model});
  size_t next_sampled = 0;
  const int len = static_cast<int>(tokens.size());
  for (int p = 0; p < len; ++p) {
    const int think_index = p - (q + 1);
    // The final token feeds nothing downstream unless its feature is needed
    // (generation may have stopped exactly at the context limit).
    if (p == len - 1 && !(think_index >= 0 && think_index < nt)) break;
    const auto so = dec.step(tokens[static_cast<size_t>(p)]);
    if (think_index >= 0 && think_index < nt) {
      std::copy(so.feature.begin(), so.feature.end(), out.features.row(think_index).begin());
    }
    if (next_sampled < sampled.size() && sampled[next_sampled] == p + 1) {
      out.logprobs.push_back(kernels::log_softmax_at(
          so.logits.data(), static_cast<int>(so.logits.size()),
          tokens[static_cast<size_t>(p + 1)]));
      ++next_sampled;
    }
  }
  require(next_sampled == sampled.size(), "rescore: sampled positions out of range");
  return out;
}

}  // namespace rgm
