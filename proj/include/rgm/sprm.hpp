#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/kernels.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/segmentation.hpp"
#include "rgm/tape.hpp"
#include "rgm/tensor.hpp"

namespace rgm {

/// Process scores are clamped to this open interval before any log or loss.
inline constexpr float kScoreClampLo = 1e-6f;
inline constexpr float kScoreClampHi = 1.0f - 1e-6f;

/**
 * Process reward head: two linear layers with a rectifier and dropout between
 * them, reading second-to-last-layer features of step tokens. About
 * d_model^2 + 2*d_model + 1 parameters, a rounding error next to the policy.
 */
template <typename T>
struct SprmHead {
  int d_model = 0;
  T dropout_p = T(0.1);
  Parameter<T> w1, b1, w2, b2;

  SprmHead() = default;

  SprmHead(int d, RngState rng, T dropout = T(0.1)) : d_model(d), dropout_p(dropout) {
    w1 = Parameter<T>("sprm.w1", Tensor<T>::randn({d, d}, rng, T(kInitStd)));
    b1 = Parameter<T>("sprm.b1", Tensor<T>::zeros({d}));
    w2 = Parameter<T>("sprm.w2", Tensor<T>::randn({1, d}, rng, T(kInitStd)));
    b2 = Parameter<T>("sprm.b2", Tensor<T>::zeros({1}));
  }

  std::vector<Parameter<T>*> param_list() { return {&w1, &b1, &w2, &b2}; }

  int64_t param_count() {
    int64_t n = 0;
    for (auto* p : param_list()) n += static_cast<int64_t>(p->value.numel());
    return n;
  }

  void zero_grads() {
    for (auto* p : param_list()) p->zero_grad();
  }
};

enum class ScoreMode { train, eval };

/**
 * Score one step feature: sigmoid(w2 . dropout(relu(w1 f + b1)) + b2),
 * clamped into (0,1). Eval mode is deterministic (dropout = identity); train
 * mode draws an inverted-dropout mask from `rng`.
 */
template <typename T>
T score_step(const SprmHead<T>& head, std::span<const T> feature, ScoreMode mode, RngState& rng) {
  require(static_cast<int>(feature.size()) == head.d_model,
          "sprm: feature width " + std::to_string(feature.size()) + " does not match d_model " +
              std::to_string(head.d_model));
  const int d = head.d_model;
  std::vector<T> h(static_cast<size_t>(d));
  kernels::linear_row(feature.data(), head.w1.value.data.data(), head.b1.value.data.data(),
                      h.data(), d, d);
  for (auto& x : h) x = kernels::relu(x);
  if (mode == ScoreMode::train && head.dropout_p > T(0)) {
    const T keep_scale = T(1) / (T(1) - head.dropout_p);
    for (auto& x : h) {
      x *= (static_cast<T>(rng.next_unit_f()) < head.dropout_p) ? T(0) : keep_scale;
    }
  }
  T z{};
  kernels::linear_row(h.data(), head.w2.value.data.data(), head.b2.value.data.data(), &z, d, 1);
  const T s = kernels::sigmoid(z);
  return std::min(T(kScoreClampHi), std::max(T(kScoreClampLo), s));
}

template <typename T>
T score_step_eval(const SprmHead<T>& head, std::span<const T> feature) {
  RngState unused(0);
  return score_step(head, feature, ScoreMode::eval, unused);
}

/**
 * Head forward on the tape: features (N, d) -> clamped scores (N, 1).
 * Used by the loss paths; gradients flow into the head parameters and into
 * `features` (which is a constant input unless the caller wired it to the
 * policy forward).
 */
template <typename T>
typename Tape<T>::NodeId sprm_scores_tape(Tape<T>& t, SprmHead<T>& head,
                                          typename Tape<T>::NodeId features, bool train,
                                          RngState* rng) {
  auto h = t.relu(t.linear(features, t.param(head.w1), t.param(head.b1)));
  if (train && head.dropout_p > T(0)) {
    require(rng != nullptr, "sprm: train-mode scoring needs an rng");
    h = t.dropout(h, head.dropout_p, *rng, true);
  }
  auto z = t.linear(h, t.param(head.w2), t.param(head.b2));
  return t.clamp(t.sigmoid(z), T(kScoreClampLo), T(kScoreClampHi));
}

/**
 * Final trajectory score: per-step process scores at the retained boundaries
 * and their geometric mean, computed in log space.
 */
struct TrajectoryScore {
  std::vector<double> process_scores;
  double final_score = 0.0;
  double log_final = 0.0;
};

inline double geometric_mean_log(std::span<const double> scores, double* log_out = nullptr) {
  require(!scores.empty(), "geometric mean: empty score list");
  double acc = 0.0;
  for (double s : scores) acc += std::log(s);
  const double log_final = acc / static_cast<double>(scores.size());
  if (log_out != nullptr) *log_out = log_final;
  return std::exp(log_final);
}

inline TrajectoryScore score_trajectory(const SprmHead<float>& head, const Trajectory& traj,
                                        const StepSegmentation& seg) {
  require(seg.n_steps() >= 1, "score_trajectory: no steps to score (unscoreable trajectory)");
  const int nt = static_cast<int>(traj.think_tokens.size());
  require(traj.hidden_states.ndim() == 2 && traj.hidden_states.rows() == nt,
          "score_trajectory: hidden states missing or misaligned");
  TrajectoryScore out;
  out.process_scores.reserve(static_cast<size_t>(seg.n_steps()));
  for (int idx : seg.step_end_indices) {
    require(idx >= 0 && idx < nt, "score_trajectory: step index outside think region");
    const auto row = traj.hidden_states.row(idx);
    out.process_scores.push_back(static_cast<double>(score_step_eval(head, row)));
  }
  out.final_score = geometric_mean_log(out.process_scores, &out.log_final);
  return out;
}

}  // namespace rgm
