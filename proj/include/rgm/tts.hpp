#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/decode.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/segmentation.hpp"
#include "rgm/sprm.hpp"
#include "rgm/trainloop.hpp"
#include "rgm/vocab.hpp"

namespace rgm {

// ---------------------------------------------------------------------------
// Reasoning efforts and compute accounting
// ---------------------------------------------------------------------------

enum class EffortLevel { low, medium, high };

struct EffortMap {
  int low = 2;
  int medium = 8;
  int high = 32;

  int k_for(EffortLevel level) const {
    switch (level) {
      case EffortLevel::low: return low;
      case EffortLevel::medium: return medium;
      case EffortLevel::high: return high;
    }
    throw ContractError("effort: unknown level");
  }
};

inline std::optional<EffortLevel> effort_from_string(const std::string& s) {
  if (s == "low") return EffortLevel::low;
  if (s == "medium") return EffortLevel::medium;
  if (s == "high") return EffortLevel::high;
  return std::nullopt;
}

/**
 * C = policy parameter count x tokens generated, accumulated over every
 * sampled token of one query (discarded candidates and snapped-off MCTS
 * tokens included; forced marker tokens are not sampled and do not count).
 */
struct ComputeBudget {
  int64_t param_count = 0;
  int64_t tokens_generated = 0;

  int64_t c() const { return param_count * tokens_generated; }

  void add_tokens(int64_t n) {
    require(n >= 0, "compute budget: negative token count");
    tokens_generated += n;
  }
};

// ---------------------------------------------------------------------------
// Candidate sets and selection
// ---------------------------------------------------------------------------

struct ScoredCandidate {
  Trajectory traj;  // think-only except the chosen candidate (oracle mode answers all)
  std::optional<TrajectoryScore> score;
  int think_tokens_sampled = 0;   // think region + sampled </think>
  int answer_tokens_sampled = 0;  // filled when this candidate was answered
};

struct CandidateSet {
  std::vector<ScoredCandidate> candidates;
  int chosen = -1;
  bool fallback_used = false;  // every candidate was unscoreable; longest think wins
};

/// Argmax with lowest-index tie-break; unscoreable candidates never win
/// unless all are unscoreable (then returns -1).
inline int pick_best(const std::vector<ScoredCandidate>& candidates) {
  int best = -1;
  for (size_t i = 0; i < candidates.size(); ++i) {
    if (!candidates[i].score.has_value()) continue;
    if (best < 0 || candidates[i].score->final_score > candidates[best].score->final_score) {
      best = static_cast<int>(i);
    }
  }
  return best;
}

/// Verifier-informed oracle used by tests and ablations: scores a think
/// region by whether its (separately generated) answer is correct.
using OracleScorer = std::function<double(const Trajectory& answered)>;

struct TtsContext {
  const PolicyParams<float>* policy = nullptr;
  const SprmHead<float>* head = nullptr;
  const Vocabulary* vocab = nullptr;
  SamplingParams sampling;
};

struct InferResult {
  Trajectory traj;  // final trajectory, answer included
  std::string answer_text;
  CandidateSet candidates;
  int chosen_index = -1;
  double chosen_score = std::numeric_limits<double>::quiet_NaN();
  ComputeBudget budget;
};

// ---------------------------------------------------------------------------
// Basic and internal inference
// ---------------------------------------------------------------------------

/// Direct answering: the think region is forced empty (<think></think>).
inline InferResult infer_basic(const TtsContext& ctx, std::span<const int> query_tokens,
                               const RngState& rng) {
  InferResult out;
  out.budget.param_count = ctx.policy->param_count();
  const PrefixState prefix = build_prefix(*ctx.policy, query_tokens);
  ThinkCandidate cand;
  cand.traj.query_tokens.assign(query_tokens.begin(), query_tokens.end());
  cand.traj.hidden_states = Tensor<float>({0, ctx.policy->cfg.d_model});
  cand.next_logits = prefix.next_logits;
  Decoder dec(*ctx.policy, &prefix.span);
  cand.span = std::move(dec).take_span();  // empty span chained to the prefix
  generate_answer_from(*ctx.policy, cand, ctx.sampling,
                       rng.split(kAnswerStreamBase));
  out.budget.add_tokens(static_cast<int>(cand.traj.answer_tokens.size()) +
                        (cand.traj.answer_ended ? 1 : 0));
  out.traj = std::move(cand.traj);
  out.answer_text = ctx.vocab->decode(out.traj.answer_tokens);
  return out;
}

/// One thinking trajectory, then the answer conditioned on it. Stream layout
/// matches Best-of-N with k = 1 (think from split(0), answer from
/// split(kAnswerStreamBase)).
inline InferResult infer_internal(const TtsContext& ctx, std::span<const int> query_tokens,
                                  const RngState& rng) {
  InferResult out;
  out.budget.param_count = ctx.policy->param_count();
  const PrefixState prefix = build_prefix(*ctx.policy, query_tokens);
  ThinkCandidate cand =
      generate_thinking_from(*ctx.policy, prefix, query_tokens, ctx.sampling, rng.split(0), 0);
  out.budget.add_tokens(static_cast<int>(cand.traj.think_tokens.size()) +
                        (cand.traj.think_closed ? 1 : 0));
  generate_answer_from(*ctx.policy, cand, ctx.sampling, rng.split(kAnswerStreamBase));
  out.budget.add_tokens(static_cast<int>(cand.traj.answer_tokens.size()) +
                        (cand.traj.answer_ended ? 1 : 0));
  out.traj = std::move(cand.traj);
  out.answer_text = ctx.vocab->decode(out.traj.answer_tokens);
  out.chosen_index = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Best-of-N
// ---------------------------------------------------------------------------

struct BonRow {
  int k = 0;
  int chosen = -1;
  double chosen_score = std::numeric_limits<double>::quiet_NaN();
  bool fallback_used = false;
  std::string answer_text;
  Trajectory answered;       // the chosen candidate with its answer
  int64_t tokens = 0;        // standalone-equivalent token count for this k
};

struct BonMultiResult {
  CandidateSet set;          // max(ks) candidates, scored
  std::vector<BonRow> rows;  // one per requested k, ascending
  ComputeBudget budget;      // actual sampled tokens across the whole call
};

/**
 * Best-of-N over shared candidate streams. Candidate i always draws from
 * rng.split(i) and the answer for a chosen index j from
 * rng.split(kAnswerStreamBase + j), so evaluating several k at once is
 * bit-identical to separate standalone runs, and the k = 8 candidate set is
 * a prefix of the k = 32 set. `oracle`, when given, answers every candidate
 * first and scores 0.9/0.1 by the verifier instead of the SPRM head.
 */
inline BonMultiResult infer_best_of_n_multi(const TtsContext& ctx,
                                            std::span<const int> query_tokens,
                                            std::vector<int> ks, const RngState& rng,
                                            const OracleScorer* oracle = nullptr) {
  require(!ks.empty(), "best_of_n: need at least one k");
  std::sort(ks.begin(), ks.end());
  require(ks.front() >= 1, "best_of_n: k must be >= 1");
  const int k_max = ks.back();

  BonMultiResult out;
  out.budget.param_count = ctx.policy->param_count();
  const PrefixState prefix = build_prefix(*ctx.policy, query_tokens);

  std::vector<ThinkCandidate> cands;
  cands.reserve(static_cast<size_t>(k_max));
  for (int i = 0; i < k_max; ++i) {
    cands.push_back(generate_thinking_from(*ctx.policy, prefix, query_tokens, ctx.sampling,
                                           rng.split(static_cast<uint64_t>(i)),
                                           static_cast<uint64_t>(i)));
  }

  out.set.candidates.resize(static_cast<size_t>(k_max));
  for (int i = 0; i < k_max; ++i) {
    ScoredCandidate& sc = out.set.candidates[static_cast<size_t>(i)];
    sc.think_tokens_sampled = static_cast<int>(cands[static_cast<size_t>(i)].traj.think_tokens.size()) +
                              (cands[static_cast<size_t>(i)].traj.think_closed ? 1 : 0);
    out.budget.add_tokens(sc.think_tokens_sampled);
  }

  auto answer_candidate = [&](int i) {
    ThinkCandidate& cand = cands[static_cast<size_t>(i)];
    if (cand.traj.has_answer) return;
    generate_answer_from(*ctx.policy, cand, ctx.sampling,
                         rng.split(kAnswerStreamBase + static_cast<uint64_t>(i)));
    const int n = static_cast<int>(cand.traj.answer_tokens.size()) +
                  (cand.traj.answer_ended ? 1 : 0);
    out.set.candidates[static_cast<size_t>(i)].answer_tokens_sampled = n;
    out.budget.add_tokens(n);
  };

  if (oracle != nullptr) {
    for (int i = 0; i < k_max; ++i) answer_candidate(i);
  }
  for (int i = 0; i < k_max; ++i) {
    ScoredCandidate& sc = out.set.candidates[static_cast<size_t>(i)];
    const Trajectory& traj = cands[static_cast<size_t>(i)].traj;
    if (oracle != nullptr) {
      TrajectoryScore score;
      score.final_score = (*oracle)(traj);
      score.log_final = std::log(score.final_score);
      sc.score = std::move(score);
    } else {
      const StepSegmentation seg = segment_with_fallback(traj.think_tokens, Vocabulary::kStep);
      if (seg.n_steps() > 0) sc.score = score_trajectory(*ctx.head, traj, seg);
    }
  }

  for (int k : ks) {
    std::vector<ScoredCandidate> view(out.set.candidates.begin(),
                                      out.set.candidates.begin() + k);
    BonRow row;
    row.k = k;
    row.chosen = pick_best(view);
    if (row.chosen < 0) {
      // All unscoreable: fall back to the longest think region.
      row.fallback_used = true;
      int best_len = -1;
      for (int i = 0; i < k; ++i) {
        const int len = static_cast<int>(cands[static_cast<size_t>(i)].traj.think_tokens.size());
        if (len > best_len) {
          best_len = len;
          row.chosen = i;
        }
      }
    } else {
      row.chosen_score = view[static_cast<size_t>(row.chosen)].score->final_score;
    }
    answer_candidate(row.chosen);
    row.answered = cands[static_cast<size_t>(row.chosen)].traj;
    row.answer_text = ctx.vocab->decode(row.answered.answer_tokens);
    // Standalone-equivalent accounting: the first k candidates plus the
    // chosen answer.
    for (int i = 0; i < k; ++i) {
      row.tokens += out.set.candidates[static_cast<size_t>(i)].think_tokens_sampled;
      if (oracle != nullptr) {
        row.tokens += out.set.candidates[static_cast<size_t>(i)].answer_tokens_sampled;
      }
    }
    if (oracle == nullptr) {
      row.tokens += out.set.candidates[static_cast<size_t>(row.chosen)].answer_tokens_sampled;
    }
    out.rows.push_back(std::move(row));
  }

  // Candidate trajectories move into the set after answers are settled.
  for (int i = 0; i < k_max; ++i) {
    out.set.candidates[static_cast<size_t>(i)].traj = std::move(cands[static_cast<size_t>(i)].traj);
  }
  out.set.chosen = out.rows.back().chosen;
  out.set.fallback_used = out.rows.back().fallback_used;
  return out;
}

/// Single-k Best-of-N (Eq-7-style selection, answer from the winner only).
inline InferResult infer_best_of_n(const TtsContext& ctx, std::span<const int> query_tokens,
                                   int k, const RngState& rng,
                                   const OracleScorer* oracle = nullptr) {
  BonMultiResult multi = infer_best_of_n_multi(ctx, query_tokens, {k}, rng, oracle);
  InferResult out;
  out.budget = multi.budget;
  BonRow& row = multi.rows.front();
  out.traj = std::move(row.answered);
  out.answer_text = std::move(row.answer_text);
  out.chosen_index = row.chosen;
  out.chosen_score = row.chosen_score;
  out.candidates = std::move(multi.set);
  out.candidates.chosen = out.chosen_index;
  out.candidates.fallback_used = row.fallback_used;
  return out;
}

// ---------------------------------------------------------------------------
// MCTS over step-segmented think prefixes
// ---------------------------------------------------------------------------

struct MctsParams {
  int branching = 4;
  int tokens_per_expansion = 64;
  int64_t total_token_budget = 0;  // 0 = no search (internal inference)
  float c_uct = 1.0f;
};

struct MctsStats {
  int iterations = 0;
  int expansions = 0;
  int nodes = 0;
  int64_t search_tokens = 0;
  bool degenerate_budget = false;   // budget below one expansion: ran as budget 0
  std::vector<double> best_so_far;  // best complete score after each iteration
};

struct MctsResult {
  InferResult infer;
  MctsStats stats;
};

namespace detail_mcts {

struct Node {
  int parent = -1;
  std::vector<int> children;
  std::unique_ptr<DecodeSpan> span;  // think rows owned by this node
  std::vector<int> span_tokens;
  SegmentationCursor cursor;         // segmentation state after this node's tokens
  std::vector<double> step_logs;     // cumulative log process scores, root..here
  std::vector<float> next_logits;
  std::vector<float> last_feature;   // feature of the final kept token (fallback scoring)
  double value = 0.5;
  double value_sum = 0.0;
  int visits = 0;
  int think_len = 0;
  int open_descendants = 0;  // expandable leaves in this subtree
  bool terminal = false;
  bool complete = false;                // </think> was sampled
  std::optional<double> final_score;    // complete nodes only
};

}  // namespace detail_mcts

/**
 * UCT search over think prefixes. Expansion grows up to `branching` children
 * by sampling at most tokens_per_expansion tokens each; a child's boundary
 * snaps back to the last retained step boundary inside its new span (tokens
 * past it are discarded but still count against the budget). Node values are
 * SPRM prefix scores; backup is mean-value. The answer comes from the best
 * scoring complete trajectory, else from the best-value leaf extended
 * greedily to completion.
 */
inline MctsResult mcts_infer(const TtsContext& ctx, std::span<const int> query_tokens,
                             const MctsParams& params, const RngState& rng) {
  MctsResult result;
  if (params.total_token_budget < params.tokens_per_expansion) {
    result.stats.degenerate_budget = params.total_token_budget > 0;
    result.infer = infer_internal(ctx, query_tokens, rng);
    return result;
  }
  require(ctx.head != nullptr, "mcts: SPRM head required");
  using detail_mcts::Node;

  InferResult& out = result.infer;
  MctsStats& stats = result.stats;
  out.budget.param_count = ctx.policy->param_count();
  const PrefixState prefix = build_prefix(*ctx.policy, query_tokens);
  const int d = ctx.policy->cfg.d_model;

  std::vector<std::unique_ptr<Node>> nodes;
  auto span_of = [&](const Node& n) -> const DecodeSpan* {
    return n.span ? n.span.get() : &prefix.span;
  };

  nodes.push_back(std::make_unique<Node>());
  Node& root = *nodes[0];
  root.next_logits = prefix.next_logits;
  root.open_descendants = 1;
  root.visits = 1;

  int64_t budget_left = params.total_token_budget;
  uint64_t stream_counter = 0;
  int best_complete = -1;

  auto backup = [&](int id, double value) {
    for (int at = id; at >= 0; at = nodes[static_cast<size_t>(at)]->parent) {
      Node& n = *nodes[static_cast<size_t>(at)];
      n.visits += 1;
      n.value_sum += value;
    }
  };
  auto propagate_open_delta = [&](int id, int delta) {
    for (int at = id; at >= 0; at = nodes[static_cast<size_t>(at)]->parent) {
      nodes[static_cast<size_t>(at)]->open_descendants += delta;
    }
  };
  auto mean_value = [&](const Node& n) {
    return n.visits > 0 ? n.value_sum / n.visits : n.value;
  };

  std::vector<float> scratch;
  while (budget_left > 0 && root.open_descendants > 0) {
    stats.iterations += 1;

    // Selection: descend UCT among children that still have open leaves.
    int at = 0;
    while (!nodes[static_cast<size_t>(at)]->children.empty()) {
      Node& n = *nodes[static_cast<size_t>(at)];
      int pick = -1;
      double best_uct = 0.0;
      for (int c : n.children) {
        const Node& child = *nodes[static_cast<size_t>(c)];
        if (child.open_descendants == 0) continue;  // nothing expandable below
        const double uct = mean_value(child) +
                           params.c_uct * std::sqrt(std::log(static_cast<double>(n.visits)) /
                                                    static_cast<double>(child.visits));
        if (pick < 0 || uct > best_uct) {
          pick = c;
          best_uct = uct;
        }
      }
      if (pick < 0) break;  // no open child (open-count bookkeeping guards this)
      at = pick;
    }
    Node& leaf = *nodes[static_cast<size_t>(at)];
    if (leaf.terminal) {
      backup(at, leaf.value);
      continue;
    }

    // Expansion.
    const int leaf_id = at;
    int open_children = 0;
    for (int c = 0; c < params.branching && budget_left > 0; ++c) {
      Decoder dec(*ctx.policy, span_of(leaf));
      std::span<const float> logits(leaf.next_logits);

      auto child = std::make_unique<Node>();
      child->parent = leaf_id;
      child->cursor = leaf.cursor;
      child->step_logs = leaf.step_logs;
      child->think_len = leaf.think_len;
      RngState crng = rng.split(stream_counter++);

      struct TokenInfo {
        bool retained = false;
        std::vector<float> boundary_logits;
      };
      std::vector<TokenInfo> info;
      std::vector<float> features;  // per fed token
      bool closed = false;
      bool limit_hit = false;
      int sampled_in_span = 0;
      SegmentationCursor cursor = leaf.cursor;

      while (sampled_in_span < params.tokens_per_expansion && budget_left > 0) {
        if (child->think_len + static_cast<int>(child->span_tokens.size()) >=
                ctx.sampling.max_think_tokens ||
            dec.pos() >= ctx.policy->cfg.max_context) {
          limit_hit = true;
          break;
        }
        const SampledToken s = sample_token(logits, SampleMode::think, ctx.sampling, crng, scratch);
        sampled_in_span += 1;
        budget_left -= 1;
        stats.search_tokens += 1;
        if (s.token == Vocabulary::kThinkClose) {
          closed = true;
          break;
        }
        const auto so = dec.step(s.token);
        child->span_tokens.push_back(s.token);
        features.insert(features.end(), so.feature.begin(), so.feature.end());
        TokenInfo ti;
        ti.retained = cursor.feed(s.token == Vocabulary::kStep);
        if (ti.retained) ti.boundary_logits.assign(so.logits.begin(), so.logits.end());
        info.push_back(std::move(ti));
        logits = so.logits;
      }

      int keep = static_cast<int>(child->span_tokens.size());
      if (!closed && !limit_hit) {
        // Snap to the last retained boundary in the span, if any.
        int last_retained = -1;
        for (int i = 0; i < keep; ++i) {
          if (info[static_cast<size_t>(i)].retained) last_retained = i;
        }
        if (last_retained >= 0) keep = last_retained + 1;
      }
      child->span_tokens.resize(static_cast<size_t>(keep));
      dec.truncate_tail(keep);
      child->think_len = leaf.think_len + keep;
      for (int i = 0; i < keep; ++i) {
        if (child->cursor.feed(child->span_tokens[static_cast<size_t>(i)] == Vocabulary::kStep)) {
          const float* f = features.data() + static_cast<size_t>(i) * d;
          const float s = score_step_eval<float>(*ctx.head, std::span<const float>(f, static_cast<size_t>(d)));
          child->step_logs.push_back(std::log(static_cast<double>(s)));
        }
      }
      if (keep > 0) {
        const float* f = features.data() + static_cast<size_t>(keep - 1) * d;
        child->last_feature.assign(f, f + d);
        const std::span<const float> nl =
            info[static_cast<size_t>(keep - 1)].retained
                ? std::span<const float>(info[static_cast<size_t>(keep - 1)].boundary_logits)
                : logits;
        child->next_logits.assign(nl.begin(), nl.end());
      }
      child->span = std::make_unique<DecodeSpan>(std::move(dec).take_span());
      child->terminal = closed || limit_hit ||
                        child->think_len >= ctx.sampling.max_think_tokens;
      child->complete = closed;

      // Node value: prefix score over retained steps, else the last token as
      // a one-step fallback, else neutral.
      if (!child->step_logs.empty()) {
        double acc = 0;
        for (double lg : child->step_logs) acc += lg;
        child->value = std::exp(acc / static_cast<double>(child->step_logs.size()));
      } else if (!child->last_feature.empty()) {
        child->value = static_cast<double>(
            score_step_eval<float>(*ctx.head, std::span<const float>(child->last_feature)));
      } else if (!leaf.last_feature.empty()) {
        child->value = static_cast<double>(
            score_step_eval<float>(*ctx.head, std::span<const float>(leaf.last_feature)));
      }
      if (child->complete) {
        if (!child->step_logs.empty()) {
          double acc = 0;
          for (double lg : child->step_logs) acc += lg;
          child->final_score = std::exp(acc / static_cast<double>(child->step_logs.size()));
        } else if (!child->last_feature.empty()) {
          child->final_score = static_cast<double>(
              score_step_eval<float>(*ctx.head, std::span<const float>(child->last_feature)));
        }
      }

      const int child_id = static_cast<int>(nodes.size());
      child->visits = 1;
      child->value_sum = child->value;
      child->open_descendants = child->terminal ? 0 : 1;
      leaf.children.push_back(child_id);
      if (!child->terminal) open_children += 1;
      const bool is_complete = child->complete;
      const double child_value = child->value;
      const std::optional<double> fs = child->final_score;
      nodes.push_back(std::move(child));
      stats.nodes += 1;
      backup(leaf_id, child_value);

      if (is_complete && fs.has_value()) {
        if (best_complete < 0 ||
            *fs > nodes[static_cast<size_t>(best_complete)]->final_score.value()) {
          best_complete = child_id;
        }
      }
    }
    stats.expansions += 1;
    propagate_open_delta(leaf_id, open_children - 1);

    if (best_complete >= 0) {
      stats.best_so_far.push_back(nodes[static_cast<size_t>(best_complete)]->final_score.value());
    }
  }

  // Choose the think region: best complete node, else best-value leaf
  // extended greedily to completion.
  auto collect_think = [&](int id) {
    std::vector<int> chain;
    for (int at2 = id; at2 > 0; at2 = nodes[static_cast<size_t>(at2)]->parent) chain.push_back(at2);
    std::reverse(chain.begin(), chain.end());
    std::vector<int> think;
    for (int n : chain) {
      think.insert(think.end(), nodes[static_cast<size_t>(n)]->span_tokens.begin(),
                   nodes[static_cast<size_t>(n)]->span_tokens.end());
    }
    return think;
  };

  Trajectory final_traj;
  final_traj.query_tokens.assign(query_tokens.begin(), query_tokens.end());
  if (best_complete >= 0) {
    final_traj.think_tokens = collect_think(best_complete);
    final_traj.think_closed = true;
  } else {
    int pick = 0;
    for (size_t i = 1; i < nodes.size(); ++i) {
      if (!nodes[i]->children.empty()) continue;
      if (mean_value(*nodes[i]) > mean_value(*nodes[static_cast<size_t>(pick)])) {
        pick = static_cast<int>(i);
      }
    }
    final_traj.think_tokens = collect_think(pick);
    // Greedy completion from the picked leaf.
    const Node& n = *nodes[static_cast<size_t>(pick)];
    Decoder dec(*ctx.policy, span_of(n));
    std::span<const float> logits(n.next_logits);
    SamplingParams greedy = ctx.sampling;
    greedy.temperature = 0.0f;
    RngState grng = rng.split(stream_counter++);
    while (static_cast<int>(final_traj.think_tokens.size()) < ctx.sampling.max_think_tokens &&
           dec.pos() < ctx.policy->cfg.max_context) {
      const SampledToken s = sample_token(logits, SampleMode::think, greedy, grng, scratch);
      out.budget.add_tokens(1);
      if (s.token == Vocabulary::kThinkClose) {
        final_traj.think_closed = true;
        break;
      }
      final_traj.think_tokens.push_back(s.token);
      logits = dec.step(s.token).logits;
    }
  }

  out.budget.add_tokens(stats.search_tokens);

  // Answer from the chosen think region, then score the full trajectory.
  Trajectory answered = generate_answer(*ctx.policy, final_traj.query_tokens,
                                        final_traj.think_tokens, final_traj.think_closed,
                                        ctx.sampling, rng.split(kAnswerStreamBase));
  answered.think_closed = final_traj.think_closed;
  out.budget.add_tokens(static_cast<int>(answered.answer_tokens.size()) +
                        (answered.answer_ended ? 1 : 0));
  const StepSegmentation seg = segment_with_fallback(answered.think_tokens, Vocabulary::kStep);
  if (seg.n_steps() > 0) {
    out.chosen_score = score_trajectory(*ctx.head, answered, seg).final_score;
  }
  out.traj = std::move(answered);
  out.answer_text = ctx.vocab->decode(out.traj.answer_tokens);
  return result;
}

}  // namespace rgm
