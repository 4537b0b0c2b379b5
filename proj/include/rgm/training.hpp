#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/optim.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/sprm.hpp"
#include "rgm/stats.hpp"
#include "rgm/tape.hpp"

namespace rgm {

// ---------------------------------------------------------------------------
// Self-supervised process reward loss
// ---------------------------------------------------------------------------

/**
 * Dynamic pseudo-label weight: 1 when the head's own prediction agrees with
 * the outcome label (score above 0.5 for correct outcomes, below 0.5 for
 * incorrect ones), else 0. Both inequalities are strict, so a score of
 * exactly 0.5 always weighs 0.
 */
inline int spr_weight(int y, double score) {
  if (y == 1 && score > 0.5) return 1;
  if (y == 0 && score < 0.5) return 1;
  return 0;
}

enum class SprLossKind { spr, bce };

/// One step record: the step-token feature and its trajectory's outcome.
template <typename T>
struct SprBatchT {
  Tensor<T> features;        // (N, d_model)
  std::vector<int> ys;       // outcome label per record
  std::vector<int> traj_ids; // record -> trajectory (for per-trajectory metrics)

  int count() const { return features.ndim() == 2 ? features.rows() : 0; }
};
using SprBatch = SprBatchT<float>;

template <typename T>
struct SprLossGraph {
  typename Tape<T>::NodeId loss;
  typename Tape<T>::NodeId scores;  // (N, 1) clamped
  std::vector<T> weights;           // the dynamic weights actually applied
  T bce_equivalent;                 // same batch with every weight forced to 1
};

/**
 * Loss over a head forward of `features`: mean over all N records of
 * w_i * BCE(score_i, y_i). Weights come from the same forward's scores
 * (the head's own current prediction) and are treated as constants; the
 * ablation kind forces every weight to 1. N counts zero-weight records.
 */
template <typename T>
SprLossGraph<T> spr_loss_graph(Tape<T>& t, SprmHead<T>& head,
                               typename Tape<T>::NodeId features, const std::vector<int>& ys,
                               SprLossKind kind, bool train, RngState* rng) {
  const int n = t.value(features).rows();
  require(n >= 1, "spr loss: empty batch");
  require(static_cast<int>(ys.size()) == n, "spr loss: one label per record");

  SprLossGraph<T> out;
  out.scores = sprm_scores_tape(t, head, features, train, rng);
  const auto& s = t.value(out.scores).data;

  std::vector<T> targets(static_cast<size_t>(n));
  out.weights.assign(static_cast<size_t>(n), T(1));
  T bce_acc = T(0);
  for (int i = 0; i < n; ++i) {
    targets[static_cast<size_t>(i)] = static_cast<T>(ys[static_cast<size_t>(i)]);
    if (kind == SprLossKind::spr) {
      out.weights[static_cast<size_t>(i)] =
          static_cast<T>(spr_weight(ys[static_cast<size_t>(i)], static_cast<double>(s[static_cast<size_t>(i)])));
    }
    const T si = s[static_cast<size_t>(i)];
    const T yi = targets[static_cast<size_t>(i)];
    bce_acc += -(yi * std::log(si) + (T(1) - yi) * std::log(T(1) - si));
  }
  out.bce_equivalent = bce_acc / static_cast<T>(n);
  out.loss = t.weighted_bce(out.scores, targets, out.weights);
  return out;
}

/// Convenience: build the batch graph on constant feature inputs.
template <typename T>
SprLossGraph<T> spr_loss_graph(Tape<T>& t, SprmHead<T>& head, const SprBatchT<T>& batch,
                               SprLossKind kind, bool train, RngState* rng) {
  require(batch.count() >= 1, "spr loss: empty batch");
  return spr_loss_graph(t, head, t.input(batch.features), batch.ys, kind, train, rng);
}

// ---------------------------------------------------------------------------
// Group-relative policy optimization (clip-only, single inner epoch)
// ---------------------------------------------------------------------------

/// Group-normalized advantages: (r - mean) / population std; all zero when
/// the rewards are identical.
inline std::vector<double> grpo_advantages(const std::vector<double>& rewards) {
  require(rewards.size() >= 2, "grpo_advantages: need a group of at least 2");
  const double m = stats::mean(rewards);
  const double sd = stats::stddev(rewards);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd > 0.0) {
    for (size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - m) / sd;
  }
  return out;
}

struct GrpoGroup {
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;
  std::vector<double> advantages;  // filled by grpo_step when empty
};

struct GrpoStepStats {
  double objective = 0.0;  // mean over tokens of the clipped surrogate
  int total_tokens = 0;
  int trajectories = 0;
};

/**
 * One clipped-ratio policy-gradient step over the groups. Per sampled token:
 * ratio = exp(lp_new - lp_old), objective term min(ratio*a, clip(ratio)*a),
 * pooled as a mean over every sampled token in the batch; the update
 * maximizes the objective. Trajectories with zero advantage contribute an
 * exactly zero gradient and are skipped.
 */
inline GrpoStepStats grpo_step(std::vector<GrpoGroup>& groups, PolicyParams<float>& policy,
                               AdaptiveOptimizer<float>& optimizer, float clip_eps) {
  int total_tokens = 0;
  int n_traj = 0;
  for (auto& g : groups) {
    if (g.advantages.empty()) g.advantages = grpo_advantages(g.rewards);
    require(g.advantages.size() == g.trajectories.size(),
            "grpo_step: one advantage per trajectory");
    for (const auto& traj : g.trajectories) {
      require(static_cast<int>(traj.logprobs.size()) == traj.sampled_token_count(),
              "grpo_step: trajectory is missing sampling logprobs");
      total_tokens += traj.sampled_token_count();
      n_traj += 1;
    }
  }
  GrpoStepStats st;
  st.total_tokens = total_tokens;
  st.trajectories = n_traj;
  if (total_tokens == 0) return st;

  policy.zero_grads();
  double objective = 0.0;
  for (auto& g : groups) {
    for (size_t i = 0; i < g.trajectories.size(); ++i) {
      const Trajectory& traj = g.trajectories[i];
      const double adv = g.advantages[i];
      if (adv == 0.0 || traj.sampled_token_count() == 0) continue;

      const std::vector<int> tokens = traj.full_tokens();
      const std::vector<int> sampled = traj.sampled_positions();
      // Feed everything that has a successor; logits row p predicts p+1.
      std::vector<int> context(tokens.begin(), tokens.end() - 1);
      std::vector<int> rows, ids;
      rows.reserve(sampled.size());
      for (int p : sampled) {
        rows.push_back(p - 1);
        ids.push_back(tokens[static_cast<size_t>(p)]);
      }

      Tape<float> t;
      auto fwd = policy_forward_tape<float>(t, policy, context);
      auto lp_new = t.gather_log_softmax(t.gather_rows(fwd.logits, rows), ids);
      auto lp_old = t.input(Tensor<float>({static_cast<int>(traj.logprobs.size())},
                                          std::vector<float>(traj.logprobs)));
      auto ratio = t.exp(t.sub(lp_new, lp_old));
      auto adv_vec = t.input(Tensor<float>::full({static_cast<int>(rows.size())},
                                                 static_cast<float>(adv)));
      auto surrogate = t.min_elem(t.mul(ratio, adv_vec),
                                  t.mul(t.clamp(ratio, 1.0f - clip_eps, 1.0f + clip_eps), adv_vec));
      auto contribution = t.scale(t.sum(surrogate), 1.0f / static_cast<float>(total_tokens));
      objective += static_cast<double>(t.value(contribution).data[0]);
      // Gradient ascent on the objective: backprop its negation.
      t.backward(t.scale(contribution, -1.0f));
    }
  }
  st.objective = objective;
  optimizer.step(policy.param_list());
  return st;
}

// ---------------------------------------------------------------------------
// Score-gap analytics
// ---------------------------------------------------------------------------

/**
 * Aha detection: the first step t such that the gap stays strictly above the
 * threshold from t to the end of the trace AND a full window starting at t
 * fits inside the trace (its mean is then above the threshold too). Returns
 * a 0-based index into the trace, or nothing when divergence never holds.
 */
inline std::optional<int> detect_aha(std::span<const double> gap, int window, double threshold) {
  const int n = static_cast<int>(gap.size());
  require(window >= 1, "detect_aha: window must be >= 1");
  require(n >= window, "detect_aha: trace shorter than the window");
  int t = n;
  while (t > 0 && gap[static_cast<size_t>(t - 1)] > threshold) --t;
  if (t + window > n) return std::nullopt;
  return t;
}

/// Per-training-step mean final scores of correct and incorrect trajectories.
struct AhaTrace {
  std::vector<double> mean_correct;
  std::vector<double> mean_incorrect;
  std::vector<double> gap;

  void push(double mc, double mi) {
    mean_correct.push_back(mc);
    mean_incorrect.push_back(mi);
    gap.push_back(mc - mi);
  }

  std::optional<int> detect(int window, double threshold) const {
    if (static_cast<int>(gap.size()) < window) return std::nullopt;
    return detect_aha(gap, window, threshold);
  }
};

}  // namespace rgm
