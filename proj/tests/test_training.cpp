#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rgm/stats.hpp"
#include "rgm/trainloop.hpp"
#include "rgm/training.hpp"

using namespace rgm;

namespace {

// Head rigged so score == sigmoid(feature): w1=1, b1=10 keeps the rectifier
// linear, w2=1, b2=-10 undoes the shift.
SprmHead<float> passthrough_head() {
  SprmHead<float> head(1, RngState(0), 0.0f);
  head.w1.value.data = {1.0f};
  head.b1.value.data = {10.0f};
  head.w2.value.data = {1.0f};
  head.b2.value.data = {-10.0f};
  return head;
}

float logit(float s) { return std::log(s / (1.0f - s)); }

SprBatch batch_with_scores(const std::vector<float>& scores, const std::vector<int>& ys) {
  SprBatch b;
  b.features = Tensor<float>({static_cast<int>(scores.size()), 1});
  for (size_t i = 0; i < scores.size(); ++i) b.features.at(static_cast<int>(i), 0) = logit(scores[i]);
  b.ys = ys;
  b.traj_ids.assign(scores.size(), 0);
  return b;
}

}  // namespace

TEST_CASE("spr_weight case table") {
  REQUIRE(spr_weight(1, 0.8) == 1);
  REQUIRE(spr_weight(1, 0.3) == 0);
  REQUIRE(spr_weight(0, 0.3) == 1);
  REQUIRE(spr_weight(0, 0.8) == 0);
  // The boundary is strict on both sides.
  REQUIRE(spr_weight(1, 0.5) == 0);
  REQUIRE(spr_weight(0, 0.5) == 0);
}

TEST_CASE("spr loss on the two-record example") {
  auto head = passthrough_head();
  auto batch = batch_with_scores({0.8f, 0.3f}, {1, 1});
  Tape<float> t;
  RngState rng(0);
  auto g = spr_loss_graph<float>(t, head, batch, SprLossKind::spr, false, &rng);
  // (-ln 0.8 + 0) / 2: the second record disagrees with its label and weighs 0.
  REQUIRE(t.value(g.loss).data[0] == Catch::Approx(0.111571776).margin(1e-4));
  REQUIRE(g.weights == std::vector<float>{1.0f, 0.0f});
}

TEST_CASE("spr loss single incorrect-outcome record") {
  auto head = passthrough_head();
  auto batch = batch_with_scores({0.2f}, {0});
  Tape<float> t;
  auto g = spr_loss_graph<float>(t, head, batch, SprLossKind::spr, false, nullptr);
  REQUIRE(t.value(g.loss).data[0] == Catch::Approx(0.22314355).margin(1e-4));
}

TEST_CASE("all-zero weights give exactly zero loss and gradient") {
  auto head = passthrough_head();
  // Both records disagree with their labels.
  auto batch = batch_with_scores({0.3f, 0.7f}, {1, 0});
  Tape<float> t;
  auto g = spr_loss_graph<float>(t, head, batch, SprLossKind::spr, false, nullptr);
  REQUIRE(t.value(g.loss).data[0] == 0.0f);
  head.zero_grads();
  t.backward(g.loss);
  for (auto* p : head.param_list()) {
    for (float grad : p->grad.data) REQUIRE(grad == 0.0f);
  }
}

TEST_CASE("bce baseline on the two-record example") {
  auto head = passthrough_head();
  auto batch = batch_with_scores({0.8f, 0.3f}, {1, 1});
  Tape<float> t;
  auto g = spr_loss_graph<float>(t, head, batch, SprLossKind::bce, false, nullptr);
  REQUIRE(t.value(g.loss).data[0] == Catch::Approx(0.71355817).margin(1e-4));
  REQUIRE(g.weights == std::vector<float>{1.0f, 1.0f});
}

TEST_CASE("spr equals bce when every record already agrees with its label") {
  auto head = passthrough_head();
  auto batch = batch_with_scores({0.8f, 0.2f, 0.9f}, {1, 0, 1});
  Tape<float> ta, tb;
  auto ga = spr_loss_graph<float>(ta, head, batch, SprLossKind::spr, false, nullptr);
  auto gb = spr_loss_graph<float>(tb, head, batch, SprLossKind::bce, false, nullptr);
  REQUIRE(ta.value(ga.loss).data[0] == tb.value(gb.loss).data[0]);
}

TEST_CASE("spr loss never exceeds the bce baseline") {
  RngState rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    SprmHead<float> head(4, rng.split(static_cast<uint64_t>(rep)), 0.0f);
    const int n = 1 + static_cast<int>(rng.below(12));
    SprBatch batch;
    batch.features = Tensor<float>::randn({n, 4}, rng, 2.0f);
    for (int i = 0; i < n; ++i) batch.ys.push_back(static_cast<int>(rng.below(2)));
    Tape<float> ta, tb;
    auto ga = spr_loss_graph<float>(ta, head, batch, SprLossKind::spr, false, nullptr);
    auto gb = spr_loss_graph<float>(tb, head, batch, SprLossKind::bce, false, nullptr);
    REQUIRE(ta.value(ga.loss).data[0] <= tb.value(gb.loss).data[0]);
  }
}

TEST_CASE("zero-weight records receive exactly zero feature gradient") {
  RngState rng(9);
  SprmHead<float> head(4, rng, 0.0f);
  SprBatch batch;
  batch.features = Tensor<float>::randn({6, 4}, rng, 1.0f);
  batch.ys = {1, 0, 1, 0, 1, 0};
  Tape<float> t;
  auto features = t.input(batch.features);
  auto g = spr_loss_graph<float>(t, head, features, batch.ys, SprLossKind::spr, false, nullptr);
  head.zero_grads();
  t.backward(g.loss);
  const auto& fgrad = t.grad(features);
  for (int i = 0; i < 6; ++i) {
    const bool zero_weight = g.weights[static_cast<size_t>(i)] == 0.0f;
    bool all_zero = true;
    for (int j = 0; j < 4; ++j) all_zero = all_zero && fgrad.at(i, j) == 0.0f;
    if (zero_weight) {
      REQUIRE(all_zero);
    } else {
      REQUIRE_FALSE(all_zero);
    }
  }
}

TEST_CASE("grpo advantages worked examples") {
  REQUIRE(grpo_advantages({1, 0, 0, 1}) == std::vector<double>{1, -1, -1, 1});
  REQUIRE(grpo_advantages({1, 1, 1, 1}) == std::vector<double>{0, 0, 0, 0});
  REQUIRE(grpo_advantages({2, 4}) == std::vector<double>{-1, 1});
  REQUIRE_THROWS_AS(grpo_advantages({1.0}), ContractError);
}

TEST_CASE("grpo advantages are standardized") {
  RngState rng(17);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> rewards;
    const int g = 2 + static_cast<int>(rng.below(14));
    for (int i = 0; i < g; ++i) rewards.push_back(static_cast<double>(rng.below(3)));
    const auto adv = grpo_advantages(rewards);
    REQUIRE(std::abs(stats::mean(adv)) < 1e-12);
    const double sd = stats::stddev(adv);
    REQUIRE((sd == 0.0 || std::abs(sd - 1.0) < 1e-9));
  }
}

TEST_CASE("clipped surrogate caps the ratio contribution") {
  // ratio 1.5, a = 0.7, eps = 0.2 -> min(1.5a, 1.2a) = 1.2a.
  Tape<float> t;
  auto ratio = t.input(Tensor<float>({1}, {1.5f}));
  auto a = t.input(Tensor<float>({1}, {0.7f}));
  auto surrogate = t.min_elem(t.mul(ratio, a), t.mul(t.clamp(ratio, 0.8f, 1.2f), a));
  REQUIRE(t.value(surrogate).data[0] == Catch::Approx(1.2f * 0.7f));
}

namespace {
PolicyConfig tiny_policy_config() {
  PolicyConfig cfg;
  cfg.vocab_size = 100;
  cfg.d_model = 32;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_context = 128;
  return cfg;
}
}  // namespace

TEST_CASE("grpo step with identical rewards leaves parameters untouched") {
  Vocabulary vocab;
  PolicyParams<float> policy(tiny_policy_config(), RngState(2));
  const auto before = policy.tok_embed.value.data;

  const SyntheticTask task = generate_task(TaskGenConfig{}, 1, 5);
  auto rollouts = rollout_group(policy, vocab, task, 2, SamplingParams{}, RngState(3));
  GrpoGroup group;
  for (auto& r : rollouts) {
    group.trajectories.push_back(r.traj);
    group.rewards.push_back(1.0);
  }
  std::vector<GrpoGroup> groups{std::move(group)};
  AdaptiveOptimizer<float> opt(1e-3f);
  const auto st = grpo_step(groups, policy, opt, 0.2f);
  REQUIRE(st.objective == 0.0);
  REQUIRE(policy.tok_embed.value.data == before);
}

TEST_CASE("grpo step at unchanged parameters sees ratio one") {
  Vocabulary vocab;
  PolicyParams<float> policy(tiny_policy_config(), RngState(4));
  const SyntheticTask task = generate_task(TaskGenConfig{}, 1, 6);
  SamplingParams sp;
  sp.temperature = 1.0f;
  auto rollouts = rollout_group(policy, vocab, task, 2, sp, RngState(7));

  GrpoGroup group;
  for (auto& r : rollouts) group.trajectories.push_back(r.traj);
  group.rewards = {1.0, 0.0};  // advantages {+1, -1}
  const int n0 = group.trajectories[0].sampled_token_count();
  const int n1 = group.trajectories[1].sampled_token_count();
  std::vector<GrpoGroup> groups{std::move(group)};
  AdaptiveOptimizer<float> opt(1e-3f);
  const auto st = grpo_step(groups, policy, opt, 0.2f);
  // With ratios exactly 1, the objective is the token-mean advantage.
  const double expect = (static_cast<double>(n0) - n1) / (n0 + n1);
  REQUIRE(st.objective == Catch::Approx(expect).margin(1e-6));
}

TEST_CASE("missing logprobs are rejected") {
  Vocabulary vocab;
  PolicyParams<float> policy(tiny_policy_config(), RngState(4));
  const SyntheticTask task = generate_task(TaskGenConfig{}, 1, 6);
  auto rollouts = rollout_group(policy, vocab, task, 2, SamplingParams{}, RngState(7));
  GrpoGroup group;
  for (auto& r : rollouts) group.trajectories.push_back(r.traj);
  group.rewards = {1.0, 0.0};
  group.trajectories[0].logprobs.pop_back();
  std::vector<GrpoGroup> groups{std::move(group)};
  AdaptiveOptimizer<float> opt(1e-3f);
  REQUIRE_THROWS_AS(grpo_step(groups, policy, opt, 0.2f), ContractError);
}

TEST_CASE("aha detection follows the documented window convention") {
  // Steps 1..9 flat, 0.4 from step 10 on (0-based index 9).
  std::vector<double> gap(20, 0.0);
  for (size_t i = 9; i < gap.size(); ++i) gap[i] = 0.4;
  REQUIRE(detect_aha(gap, 3, 0.2) == 9);

  std::vector<double> flat(20, 0.0);
  REQUIRE_FALSE(detect_aha(flat, 3, 0.2).has_value());
  REQUIRE_FALSE(detect_aha(gap, 3, 0.5).has_value());

  // Divergence too close to the end to fit a window.
  std::vector<double> late(20, 0.0);
  late[18] = late[19] = 0.4;
  REQUIRE_FALSE(detect_aha(late, 3, 0.2).has_value());

  REQUIRE_THROWS_AS(detect_aha(std::vector<double>{0.1}, 3, 0.2), ContractError);
}

TEST_CASE("trajectory records use retained steps with fallback") {
  Trajectory traj;
  traj.think_tokens = {10, Vocabulary::kStep, 12};
  traj.hidden_states = Tensor<float>({3, 2}, {1, 2, 3, 4, 5, 6});
  auto batch = trajectory_records(traj, 1);
  REQUIRE(batch.has_value());
  REQUIRE(batch->count() == 1);  // the single retained step at index 1
  REQUIRE(batch->features.at(0, 0) == 3.0f);

  Trajectory no_steps;
  no_steps.think_tokens = {10, 12};
  no_steps.hidden_states = Tensor<float>({2, 2}, {1, 2, 3, 4});
  auto fb = trajectory_records(no_steps, 0);
  REQUIRE(fb.has_value());
  REQUIRE(fb->features.at(0, 1) == 4.0f);  // last think token row

  Trajectory empty;
  empty.hidden_states = Tensor<float>({0, 2});
  REQUIRE_FALSE(trajectory_records(empty, 1).has_value());
}

TEST_CASE("head training separates a separable corpus and the gap grows") {
  // Correct trajectories live at +mu, incorrect at -mu, with noise.
  RngState rng(31);
  const int d = 8;
  std::vector<TrajFeatures> corpus;
  for (int i = 0; i < 200; ++i) {
    TrajFeatures tf;
    tf.y = (i % 2 == 0) ? 1 : 0;
    const int steps = 1 + static_cast<int>(rng.below(3));
    tf.step_features = Tensor<float>::randn({steps, d}, rng, 0.5f);
    for (auto& v : tf.step_features.data) v += (tf.y == 1) ? 1.0f : -1.0f;
    corpus.push_back(std::move(tf));
  }
  SprmHead<float> head(d, RngState(77));
  HeadTrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_trajectories = 32;
  cfg.seed = 5;
  const auto result = train_head_on_corpus(head, corpus, cfg);
  REQUIRE(result.final_gap > 0.5);
  REQUIRE(result.aha_step.has_value());

  // Statistically increasing gap: rank correlation with the step index.
  std::vector<double> steps_axis(result.trace.gap.size());
  for (size_t i = 0; i < steps_axis.size(); ++i) steps_axis[i] = static_cast<double>(i);
  REQUIRE(stats::spearman(steps_axis, result.trace.gap) > 0.8);
}

TEST_CASE("joint training loop runs deterministically") {
  Vocabulary vocab;
  TrainLoopConfig cfg;
  cfg.steps = 3;
  cfg.group_size = 4;
  cfg.groups_per_step = 1;
  cfg.seed = 11;
  cfg.sampling.max_think_tokens = 24;
  cfg.collect_rollouts = true;

  auto run = [&](std::vector<float>* final_embed) {
    PolicyParams<float> policy(tiny_policy_config(), RngState(1));
    SprmHead<float> head(policy.cfg.d_model, RngState(2));
    auto result = train_reflective(policy, head, vocab, cfg);
    *final_embed = policy.tok_embed.value.data;
    return result;
  };
  std::vector<float> embed_a, embed_b;
  const auto ra = run(&embed_a);
  const auto rb = run(&embed_b);
  REQUIRE(embed_a == embed_b);
  REQUIRE(ra.log.size() == 3);
  REQUIRE(ra.rollouts.size() == rb.rollouts.size());
  for (size_t i = 0; i < ra.log.size(); ++i) {
    REQUIRE(ra.log[i].spr_loss == rb.log[i].spr_loss);
    REQUIRE(ra.log[i].pass_rate == rb.log[i].pass_rate);
  }
}

TEST_CASE("freeze_policy leaves the policy untouched while the head moves") {
  Vocabulary vocab;
  PolicyParams<float> policy(tiny_policy_config(), RngState(1));
  SprmHead<float> head(policy.cfg.d_model, RngState(2));
  const auto before = policy.tok_embed.value.data;
  const auto head_before = head.w1.value.data;
  TrainLoopConfig cfg;
  cfg.steps = 2;
  cfg.group_size = 4;
  cfg.freeze_policy = true;
  cfg.seed = 3;
  cfg.sampling.max_think_tokens = 24;
  // The ablation loss keeps every weight at 1, so the head must move even on
  // a cold start (the spr kind can legitimately zero out a one-class batch).
  cfg.loss_kind = SprLossKind::bce;
  train_reflective(policy, head, vocab, cfg);
  REQUIRE(policy.tok_embed.value.data == before);
  REQUIRE(head.w1.value.data != head_before);
}

TEST_CASE("backbone backprop flag moves policy weights via the head loss") {
  Vocabulary vocab;
  PolicyParams<float> policy(tiny_policy_config(), RngState(1));
  SprmHead<float> head(policy.cfg.d_model, RngState(2));
  const auto before = policy.blocks[0].wq.value.data;
  TrainLoopConfig cfg;
  cfg.steps = 2;
  cfg.group_size = 4;
  cfg.freeze_policy = true;  // GRPO off: any policy movement comes from the head loss
  cfg.sprm_backprop_backbone = true;
  cfg.seed = 3;
  cfg.sampling.max_think_tokens = 24;
  cfg.loss_kind = SprLossKind::bce;
  train_reflective(policy, head, vocab, cfg);
  REQUIRE(policy.blocks[0].wq.value.data == before);  // frozen policy stays frozen

  PolicyParams<float> policy2(tiny_policy_config(), RngState(1));
  SprmHead<float> head2(policy2.cfg.d_model, RngState(2));
  cfg.freeze_policy = false;
  cfg.lr_policy = 1e-3f;
  train_reflective(policy2, head2, vocab, cfg);
  REQUIRE(policy2.blocks[0].wq.value.data != before);
}

TEST_CASE("pretraining reduces the loss") {
  Vocabulary vocab;
  PolicyConfig pc = tiny_policy_config();
  PolicyParams<float> policy(pc, RngState(13));
  PretrainConfig cfg;
  cfg.steps = 80;
  cfg.batch_size = 4;
  cfg.n_ops_min = 1;
  cfg.n_ops_max = 1;
  cfg.seed = 9;
  AdaptiveOptimizer<float> opt(cfg.lr);
  const auto result = pretrain_policy(policy, vocab, cfg, opt);
  const auto& l = result.losses;
  double head_mean = 0, tail_mean = 0;
  for (int i = 0; i < 10; ++i) {
    head_mean += l[static_cast<size_t>(i)];
    tail_mean += l[l.size() - 1 - static_cast<size_t>(i)];
  }
  REQUIRE(tail_mean < head_mean * 0.7);
}
