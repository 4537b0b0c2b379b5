#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/decode.hpp"
#include "rgm/optim.hpp"
#include "rgm/policy.hpp"
#include "rgm/rng.hpp"
#include "rgm/segmentation.hpp"
#include "rgm/sprm.hpp"
#include "rgm/tasks.hpp"
#include "rgm/training.hpp"
#include "rgm/vocab.hpp"

namespace rgm {

/// Stream ids for deriving child rngs; fixed so that runs are reproducible
/// and parallel rollouts are schedule-independent.
inline constexpr uint64_t kAnswerStreamBase = uint64_t{1} << 30;
inline constexpr uint64_t kDropoutStream = uint64_t{1} << 40;

// ---------------------------------------------------------------------------
// Supervised warm-up on canonical solutions
// ---------------------------------------------------------------------------

struct PretrainConfig {
  int steps = 1500;
  int batch_size = 8;
  float lr = 1e-3f;
  int n_ops_min = 1;
  int n_ops_max = 2;
  TaskGenConfig tasks;
  uint64_t seed = 0;
};

struct PretrainResult {
  std::vector<double> losses;  // one per step
};

/// Full canonical training sequence for a task.
inline std::vector<int> canonical_sequence(const Vocabulary& vocab, const SyntheticTask& task) {
  std::vector<int> seq = vocab.encode(task.query_text);
  seq.push_back(Vocabulary::kThinkOpen);
  const auto think = vocab.encode(task.canonical_think);
  seq.insert(seq.end(), think.begin(), think.end());
  seq.push_back(Vocabulary::kThinkClose);
  const auto ans = vocab.encode(std::to_string(task.ground_truth));
  seq.insert(seq.end(), ans.begin(), ans.end());
  seq.push_back(Vocabulary::kEnd);
  return seq;
}

/**
 * Next-token training on canonical step-by-step solutions. Steps are
 * numbered from `start_step` so a resumed run continues the same data
 * stream the fresh run would have seen.
 */
inline PretrainResult pretrain_policy(PolicyParams<float>& policy, const Vocabulary& vocab,
                                      const PretrainConfig& cfg, AdaptiveOptimizer<float>& opt,
                                      uint64_t start_step = 0) {
  PretrainResult result;
  RngState master(cfg.seed);
  for (int s = 0; s < cfg.steps; ++s) {
    const uint64_t abs_step = start_step + static_cast<uint64_t>(s);
    RngState rng = master.split(abs_step);
    policy.zero_grads();
    double step_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const int n_ops = cfg.n_ops_min + static_cast<int>(rng.below(static_cast<uint32_t>(
                                            cfg.n_ops_max - cfg.n_ops_min + 1)));
      const SyntheticTask task = generate_task(cfg.tasks, n_ops, rng.next_u64());
      const std::vector<int> seq = canonical_sequence(vocab, task);
      require(static_cast<int>(seq.size()) <= policy.cfg.max_context,
              "pretrain: canonical sequence exceeds max_context");
      const std::vector<int> context(seq.begin(), seq.end() - 1);
      const std::vector<int> targets(seq.begin() + 1, seq.end());
      Tape<float> t;
      auto fwd = policy_forward_tape<float>(t, policy, context);
      auto loss = t.scale(t.cross_entropy_mean(fwd.logits, targets),
                          1.0f / static_cast<float>(cfg.batch_size));
      step_loss += static_cast<double>(t.value(loss).data[0]);
      t.backward(loss);
    }
    opt.step(policy.param_list());
    result.losses.push_back(step_loss);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

/// One verified rollout: complete trajectory plus its outcome label.
struct Rollout {
  SyntheticTask task;
  Trajectory traj;
  int y = 0;
};

/**
 * Sample `count` trajectories for one task off a shared prefix. Candidate i
 * draws its think tokens from rng.split(i) and its answer from
 * rng.split(kAnswerStreamBase + i).
 */
inline std::vector<Rollout> rollout_group(const PolicyParams<float>& policy,
                                          const Vocabulary& vocab, const SyntheticTask& task,
                                          int count, const SamplingParams& sp,
                                          const RngState& rng) {
  const std::vector<int> query = vocab.encode(task.query_text);
  const PrefixState prefix = build_prefix(policy, query);
  std::vector<Rollout> rollouts;
  rollouts.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    ThinkCandidate cand = generate_thinking_from(policy, prefix, query, sp,
                                                 rng.split(static_cast<uint64_t>(i)),
                                                 static_cast<uint64_t>(i));
    generate_answer_from(policy, cand, sp, rng.split(kAnswerStreamBase + static_cast<uint64_t>(i)));
    Rollout r;
    r.task = task;
    r.y = verify(task, vocab.decode(cand.traj.answer_tokens));
    r.traj = std::move(cand.traj);
    rollouts.push_back(std::move(r));
  }
  return rollouts;
}

/// Step records of one trajectory (empty when the think region is empty).
inline std::optional<SprBatch> trajectory_records(const Trajectory& traj, int y) {
  const StepSegmentation seg = segment_with_fallback(traj.think_tokens, Vocabulary::kStep);
  if (seg.n_steps() == 0) return std::nullopt;
  SprBatch batch;
  batch.features = Tensor<float>({seg.n_steps(), traj.hidden_states.cols()});
  for (int i = 0; i < seg.n_steps(); ++i) {
    const auto row = traj.hidden_states.row(seg.step_end_indices[static_cast<size_t>(i)]);
    std::copy(row.begin(), row.end(), batch.features.row(i).begin());
  }
  batch.ys.assign(static_cast<size_t>(seg.n_steps()), y);
  batch.traj_ids.assign(static_cast<size_t>(seg.n_steps()), 0);
  return batch;
}

// ---------------------------------------------------------------------------
// Head training on a fixed corpus
// ---------------------------------------------------------------------------

/// Per-trajectory step features, ready for head training.
struct TrajFeatures {
  int y = 0;
  Tensor<float> step_features;  // (n_steps, d_model)
};

/// Recompute step features for corpus records by teacher-forcing the policy
/// over each think region. Records whose think region is empty or does not
/// fit the context are dropped.
inline std::vector<TrajFeatures> extract_corpus_features(const PolicyParams<float>& policy,
                                                         const Vocabulary& vocab,
                                                         const std::vector<TrajectoryRecord>& records) {
  std::vector<TrajFeatures> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    const std::vector<int> query = vocab.encode(rec.query);
    const std::vector<int> think = vocab.encode(rec.think);
    if (query.empty() || think.empty()) continue;
    if (static_cast<int>(query.size() + 1 + think.size()) > policy.cfg.max_context) continue;
    const StepSegmentation seg = segment_with_fallback(think, Vocabulary::kStep);

    Decoder dec(policy);
    for (int tok : query) dec.step(tok);
    dec.step(Vocabulary::kThinkOpen);
    Tensor<float> feats({static_cast<int>(think.size()), policy.cfg.d_model});
    for (size_t i = 0; i < think.size(); ++i) {
      const auto so = dec.step(think[i]);
      std::copy(so.feature.begin(), so.feature.end(), feats.row(static_cast<int>(i)).begin());
    }
    TrajFeatures tf;
    tf.y = rec.y;
    tf.step_features = Tensor<float>({seg.n_steps(), policy.cfg.d_model});
    for (int i = 0; i < seg.n_steps(); ++i) {
      const auto row = feats.row(seg.step_end_indices[static_cast<size_t>(i)]);
      std::copy(row.begin(), row.end(), tf.step_features.row(i).begin());
    }
    out.push_back(std::move(tf));
  }
  return out;
}

struct HeadTrainConfig {
  int steps = 2000;
  int batch_trajectories = 64;
  float lr = 1e-3f;
  SprLossKind kind = SprLossKind::spr;
  int aha_window = 25;
  double aha_threshold = 0.2;
  uint64_t seed = 0;
};

struct HeadTrainResult {
  AhaTrace trace;
  std::optional<int> aha_step;
  double final_gap = 0.0;  // mean gap over the last 50 steps
  std::vector<double> losses;
};

/**
 * Train the head alone on fixed per-trajectory features. The trace records,
 * per step, the eval-mode mean final score of the batch's correct and
 * incorrect trajectories (carrying the previous value forward when a class
 * is absent from the batch).
 */
inline HeadTrainResult train_head_on_corpus(SprmHead<float>& head,
                                            const std::vector<TrajFeatures>& corpus,
                                            const HeadTrainConfig& cfg) {
  require(!corpus.empty(), "head training: empty corpus");
  HeadTrainResult result;
  AdaptiveOptimizer<float> opt(cfg.lr);
  RngState master(cfg.seed);
  double carry_correct = 0.5, carry_incorrect = 0.5;

  for (int s = 0; s < cfg.steps; ++s) {
    RngState rng = master.split(static_cast<uint64_t>(s));
    // Whole trajectories per batch so final scores are measurable.
    std::vector<int> picks(static_cast<size_t>(cfg.batch_trajectories));
    int total_records = 0;
    for (auto& p : picks) {
      p = static_cast<int>(rng.below(static_cast<uint32_t>(corpus.size())));
      total_records += corpus[static_cast<size_t>(p)].step_features.rows();
    }
    SprBatch batch;
    batch.features = Tensor<float>({total_records, head.d_model});
    batch.ys.reserve(static_cast<size_t>(total_records));
    std::vector<std::pair<int, int>> spans;  // (first record, count) per pick
    int at = 0;
    for (int p : picks) {
      const TrajFeatures& tf = corpus[static_cast<size_t>(p)];
      const int n = tf.step_features.rows();
      std::copy(tf.step_features.data.begin(), tf.step_features.data.end(),
                batch.features.row(at).begin());
      for (int i = 0; i < n; ++i) batch.ys.push_back(tf.y);
      spans.emplace_back(at, n);
      at += n;
    }

    // Eval-mode trajectory scores before the update.
    double sum_c = 0, sum_i = 0;
    int n_c = 0, n_i = 0;
    for (size_t pi = 0; pi < picks.size(); ++pi) {
      const auto [first, count] = spans[pi];
      std::vector<double> scores;
      scores.reserve(static_cast<size_t>(count));
      for (int r = 0; r < count; ++r) {
        scores.push_back(static_cast<double>(score_step_eval<float>(
            head, batch.features.row(first + r))));
      }
      const double s_final = geometric_mean_log(scores);
      if (corpus[static_cast<size_t>(picks[pi])].y == 1) {
        sum_c += s_final;
        n_c += 1;
      } else {
        sum_i += s_final;
        n_i += 1;
      }
    }
    if (n_c > 0) carry_correct = sum_c / n_c;
    if (n_i > 0) carry_incorrect = sum_i / n_i;
    result.trace.push(carry_correct, carry_incorrect);

    RngState dropout_rng = rng.split(kDropoutStream);
    Tape<float> t;
    auto graph = spr_loss_graph<float>(t, head, batch, cfg.kind, true, &dropout_rng);
    result.losses.push_back(static_cast<double>(t.value(graph.loss).data[0]));
    head.zero_grads();
    t.backward(graph.loss);
    opt.step(head.param_list());
  }

  const int tail = std::min<int>(50, static_cast<int>(result.trace.gap.size()));
  double acc = 0;
  for (int i = 0; i < tail; ++i) {
    acc += result.trace.gap[result.trace.gap.size() - 1 - static_cast<size_t>(i)];
  }
  result.final_gap = acc / tail;
  result.aha_step = result.trace.detect(cfg.aha_window, cfg.aha_threshold);
  return result;
}

// ---------------------------------------------------------------------------
// Joint optimization: policy (GRPO) + head (SPR loss)
// ---------------------------------------------------------------------------

struct TrainLoopConfig {
  int steps = 200;
  int group_size = 8;
  int groups_per_step = 1;
  float clip_eps = 0.2f;
  float lr_policy = 1e-4f;
  float lr_head = 1e-3f;
  SprLossKind loss_kind = SprLossKind::spr;
  bool freeze_policy = false;
  bool sprm_backprop_backbone = false;
  int aha_window = 25;
  double aha_threshold = 0.2;
  int n_ops_min = 1;
  int n_ops_max = 2;
  SamplingParams sampling;
  TaskGenConfig tasks;
  uint64_t seed = 0;
  bool collect_rollouts = false;
};

struct TrainLogRow {
  int step = 0;
  double spr_loss = 0, bce_equivalent = 0;
  double mean_score_correct = 0, mean_score_incorrect = 0, gap = 0;
  double policy_loss = 0;
  double pass_rate = 0;
};

struct TrainResult {
  AhaTrace trace;
  std::optional<int> aha_step;
  std::vector<TrainLogRow> log;
  std::vector<TrajectoryRecord> rollouts;
};

/**
 * The joint loop: every step rolls out fresh groups, applies a GRPO update
 * to the policy (unless frozen) and an SPR (or ablation BCE) update to the
 * head. SPR gradients never reach the backbone unless
 * `sprm_backprop_backbone` is set, in which case the head loss is rebuilt
 * through a policy tape forward and applied as a second policy update.
 */
inline TrainResult train_reflective(PolicyParams<float>& policy, SprmHead<float>& head,
                                    const Vocabulary& vocab, const TrainLoopConfig& cfg) {
  TrainResult result;
  AdaptiveOptimizer<float> policy_opt(cfg.lr_policy);
  AdaptiveOptimizer<float> head_opt(cfg.lr_head);
  RngState master(cfg.seed);
  double carry_correct = 0.5, carry_incorrect = 0.5;

  for (int s = 0; s < cfg.steps; ++s) {
    RngState step_rng = master.split(static_cast<uint64_t>(s));
    std::vector<GrpoGroup> groups;
    std::vector<Rollout> all_rollouts;
    for (int g = 0; g < cfg.groups_per_step; ++g) {
      RngState grng = step_rng.split(static_cast<uint64_t>(g));
      const int n_ops = cfg.n_ops_min + static_cast<int>(grng.below(static_cast<uint32_t>(
                                            cfg.n_ops_max - cfg.n_ops_min + 1)));
      const SyntheticTask task = generate_task(cfg.tasks, n_ops, grng.next_u64());
      auto rollouts = rollout_group(policy, vocab, task, cfg.group_size, cfg.sampling, grng);
      GrpoGroup group;
      for (auto& r : rollouts) {
        group.rewards.push_back(static_cast<double>(r.y));
        group.trajectories.push_back(r.traj);  // keep a copy for the update
        all_rollouts.push_back(std::move(r));
      }
      groups.push_back(std::move(group));
    }

    TrainLogRow row;
    row.step = s + 1;
    double pass_sum = 0;
    for (const auto& r : all_rollouts) pass_sum += r.y;
    row.pass_rate = pass_sum / static_cast<double>(all_rollouts.size());

    // Eval-mode trajectory scores (pre-update) for the trace and rollout dump.
    double sum_c = 0, sum_i = 0;
    int n_c = 0, n_i = 0;
    for (auto& r : all_rollouts) {
      const StepSegmentation seg = segment_with_fallback(r.traj.think_tokens, Vocabulary::kStep);
      std::optional<TrajectoryScore> score;
      if (seg.n_steps() > 0) score = score_trajectory(head, r.traj, seg);
      if (score.has_value()) {
        if (r.y == 1) {
          sum_c += score->final_score;
          n_c += 1;
        } else {
          sum_i += score->final_score;
          n_i += 1;
        }
      }
      if (cfg.collect_rollouts) {
        TrajectoryRecord rec;
        rec.seed = r.task.seed;
        rec.query = r.task.query_text;
        rec.think = vocab.decode(r.traj.think_tokens);
        rec.answer = vocab.decode(r.traj.answer_tokens);
        rec.y = r.y;
        if (score.has_value()) {
          rec.process_scores = score->process_scores;
          rec.s_final = score->final_score;
        }
        result.rollouts.push_back(std::move(rec));
      }
    }
    if (n_c > 0) carry_correct = sum_c / n_c;
    if (n_i > 0) carry_incorrect = sum_i / n_i;
    result.trace.push(carry_correct, carry_incorrect);
    row.mean_score_correct = carry_correct;
    row.mean_score_incorrect = carry_incorrect;
    row.gap = carry_correct - carry_incorrect;

    if (!cfg.freeze_policy) {
      const GrpoStepStats st = grpo_step(groups, policy, policy_opt, cfg.clip_eps);
      row.policy_loss = (st.objective == 0.0) ? 0.0 : -st.objective;
    }

    // Head update. Default: features are constants (no backbone gradients).
    RngState dropout_rng = step_rng.split(kDropoutStream);
    if (!cfg.sprm_backprop_backbone) {
      SprBatch batch;
      int total = 0;
      std::vector<const SprBatch*> keep;
      std::vector<SprBatch> parts;
      for (const auto& r : all_rollouts) {
        auto part = trajectory_records(r.traj, r.y);
        if (part.has_value()) parts.push_back(std::move(*part));
      }
      for (const auto& p : parts) total += p.count();
      if (total > 0) {
        batch.features = Tensor<float>({total, head.d_model});
        int at = 0;
        for (const auto& p : parts) {
          std::copy(p.features.data.begin(), p.features.data.end(),
                    batch.features.row(at).begin());
          batch.ys.insert(batch.ys.end(), p.ys.begin(), p.ys.end());
          at += p.count();
        }
        Tape<float> t;
        auto graph = spr_loss_graph<float>(t, head, batch, cfg.loss_kind, true, &dropout_rng);
        row.spr_loss = static_cast<double>(t.value(graph.loss).data[0]);
        row.bce_equivalent = static_cast<double>(graph.bce_equivalent);
        head.zero_grads();
        t.backward(graph.loss);
        head_opt.step(head.param_list());
      }
      (void)keep;
    } else {
      // Head loss through the backbone: rebuild each trajectory's features on
      // a tape and let the gradients reach the policy as a second update.
      head.zero_grads();
      policy.zero_grads();
      double loss_sum = 0, bce_sum = 0;
      int graphs = 0;
      int total = 0;
      std::vector<std::pair<const Rollout*, StepSegmentation>> scored;
      for (const auto& r : all_rollouts) {
        StepSegmentation seg = segment_with_fallback(r.traj.think_tokens, Vocabulary::kStep);
        if (seg.n_steps() == 0) continue;
        total += seg.n_steps();
        scored.emplace_back(&r, std::move(seg));
      }
      for (const auto& [r, seg] : scored) {
        std::vector<int> context = r->traj.query_tokens;
        context.push_back(Vocabulary::kThinkOpen);
        context.insert(context.end(), r->traj.think_tokens.begin(), r->traj.think_tokens.end());
        const int base = static_cast<int>(r->traj.query_tokens.size()) + 1;
        std::vector<int> rows;
        for (int idx : seg.step_end_indices) rows.push_back(base + idx);
        Tape<float> t;
        auto fwd = policy_forward_tape<float>(t, policy, context);
        auto feats = t.gather_rows(fwd.features, rows);
        std::vector<int> ys(rows.size(), r->y);
        auto graph = spr_loss_graph<float>(t, head, feats, ys, cfg.loss_kind, true, &dropout_rng);
        // Rescale this graph's mean to the global 1/N pooling.
        auto pooled = t.scale(graph.loss, static_cast<float>(seg.n_steps()) /
                                              static_cast<float>(total));
        loss_sum += static_cast<double>(t.value(pooled).data[0]);
        bce_sum += static_cast<double>(graph.bce_equivalent) * seg.n_steps() / total;
        graphs += 1;
        t.backward(pooled);
      }
      if (graphs > 0) {
        row.spr_loss = loss_sum;
        row.bce_equivalent = bce_sum;
        head_opt.step(head.param_list());
        if (!cfg.freeze_policy) policy_opt.step(policy.param_list());
      }
    }

    result.log.push_back(row);
  }
  result.aha_step = result.trace.detect(cfg.aha_window, cfg.aha_threshold);
  return result;
}

}  // namespace rgm
