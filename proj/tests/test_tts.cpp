#include <catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "rgm/tts.hpp"

using namespace rgm;

namespace {

struct Fixture {
  Vocabulary vocab;
  PolicyParams<float> policy;
  SprmHead<float> head;
  TtsContext ctx;
  std::vector<int> query;

  Fixture() : policy(make_config(), RngState(6)), head(32, RngState(7)) {
    ctx.policy = &policy;
    ctx.head = &head;
    ctx.vocab = &vocab;
    ctx.sampling.temperature = 1.0f;
    ctx.sampling.max_think_tokens = 20;
    ctx.sampling.max_answer_tokens = 8;
    query = vocab.encode("Start with 3. Add 4. What is the result?");
  }

  static PolicyConfig make_config() {
    PolicyConfig cfg;
    cfg.vocab_size = 100;
    cfg.d_model = 32;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.max_context = 160;
    return cfg;
  }
};

}  // namespace

TEST_CASE("effort map defaults") {
  EffortMap efforts;
  REQUIRE(efforts.k_for(EffortLevel::low) == 2);
  REQUIRE(efforts.k_for(EffortLevel::medium) == 8);
  REQUIRE(efforts.k_for(EffortLevel::high) == 32);
  REQUIRE(effort_from_string("medium") == EffortLevel::medium);
  REQUIRE_FALSE(effort_from_string("extreme").has_value());
}

TEST_CASE("compute budget arithmetic") {
  ComputeBudget b;
  b.param_count = 1000;
  REQUIRE(b.c() == 0);
  b.add_tokens(100);
  b.add_tokens(100);
  b.add_tokens(20);
  REQUIRE(b.tokens_generated == 220);
  REQUIRE(b.c() == 220000);
  REQUIRE_THROWS_AS(b.add_tokens(-1), ContractError);
}

TEST_CASE("basic inference is deterministic and counts only answer tokens") {
  Fixture f;
  f.ctx.sampling.temperature = 0.0f;
  const auto a = infer_basic(f.ctx, f.query, RngState(1));
  const auto b = infer_basic(f.ctx, f.query, RngState(2));  // greedy: seed irrelevant
  REQUIRE(a.traj.answer_tokens == b.traj.answer_tokens);
  REQUIRE(a.traj.think_tokens.empty());
  const int sampled = static_cast<int>(a.traj.answer_tokens.size()) + (a.traj.answer_ended ? 1 : 0);
  REQUIRE(a.budget.tokens_generated == sampled);
  REQUIRE(a.budget.c() == a.budget.param_count * sampled);
}

TEST_CASE("internal inference is deterministic at temperature zero") {
  Fixture f;
  f.ctx.sampling.temperature = 0.0f;
  const auto a = infer_internal(f.ctx, f.query, RngState(3));
  const auto b = infer_internal(f.ctx, f.query, RngState(4));
  REQUIRE(a.traj.think_tokens == b.traj.think_tokens);
  REQUIRE(a.traj.answer_tokens == b.traj.answer_tokens);
  const int sampled = a.traj.sampled_token_count();
  REQUIRE(a.budget.tokens_generated == sampled);
}

TEST_CASE("best-of-one reduces to internal inference exactly") {
  Fixture f;
  for (uint64_t seed = 0; seed < 4; ++seed) {
    const auto internal = infer_internal(f.ctx, f.query, RngState(seed));
    const auto bon = infer_best_of_n(f.ctx, f.query, 1, RngState(seed));
    REQUIRE(bon.chosen_index == 0);
    REQUIRE(bon.traj.think_tokens == internal.traj.think_tokens);
    REQUIRE(bon.traj.answer_tokens == internal.traj.answer_tokens);
    REQUIRE(bon.traj.logprobs == internal.traj.logprobs);
    REQUIRE(bon.budget.tokens_generated == internal.budget.tokens_generated);
  }
}

TEST_CASE("argmax selection breaks ties toward the lowest index") {
  std::vector<ScoredCandidate> cands(3);
  auto set_score = [&](int i, double s) {
    TrajectoryScore ts;
    ts.final_score = s;
    cands[static_cast<size_t>(i)].score = ts;
  };
  set_score(0, 0.2);
  set_score(1, 0.9);
  set_score(2, 0.9);
  REQUIRE(pick_best(cands) == 1);

  std::vector<ScoredCandidate> single(1);
  set_score(0, 0.2);
  REQUIRE(pick_best({cands.begin(), cands.begin() + 1}) == 0);

  std::vector<ScoredCandidate> none(2);
  REQUIRE(pick_best(none) == -1);
}

TEST_CASE("selection is invariant under strictly increasing transforms") {
  RngState rng(9);
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 2 + static_cast<int>(rng.below(6));
    std::vector<ScoredCandidate> cands(static_cast<size_t>(k));
    for (auto& c : cands) {
      TrajectoryScore ts;
      ts.final_score = 0.05 + 0.9 * rng.next_unit();
      c.score = ts;
    }
    const int before = pick_best(cands);
    auto transformed = cands;
    const double a = 0.5 + 2.0 * rng.next_unit();
    for (auto& c : transformed) c.score->final_score = std::exp(a * c.score->final_score);
    REQUIRE(pick_best(transformed) == before);
    for (auto& c : transformed) c.score->final_score = std::pow(c.score->final_score, a);
    REQUIRE(pick_best(transformed) == before);
  }
}

TEST_CASE("best-of-n with a fixed seed reproduces the candidate set") {
  Fixture f;
  const auto a = infer_best_of_n(f.ctx, f.query, 4, RngState(11));
  const auto b = infer_best_of_n(f.ctx, f.query, 4, RngState(11));
  REQUIRE(a.candidates.candidates.size() == 4);
  REQUIRE(a.chosen_index == b.chosen_index);
  for (size_t i = 0; i < 4; ++i) {
    REQUIRE(a.candidates.candidates[i].traj.think_tokens ==
            b.candidates.candidates[i].traj.think_tokens);
    REQUIRE(a.candidates.candidates[i].score.has_value() ==
            b.candidates.candidates[i].score.has_value());
    if (a.candidates.candidates[i].score.has_value()) {
      REQUIRE(a.candidates.candidates[i].score->final_score ==
              b.candidates.candidates[i].score->final_score);
    }
  }
}

TEST_CASE("multi-k evaluation matches standalone runs") {
  Fixture f;
  const auto multi = infer_best_of_n_multi(f.ctx, f.query, {1, 3}, RngState(13));
  const auto k1 = infer_best_of_n(f.ctx, f.query, 1, RngState(13));
  const auto k3 = infer_best_of_n(f.ctx, f.query, 3, RngState(13));
  REQUIRE(multi.rows.size() == 2);
  REQUIRE(multi.rows[0].chosen == k1.chosen_index);
  REQUIRE(multi.rows[0].answer_text == k1.answer_text);
  REQUIRE(multi.rows[0].tokens == k1.budget.tokens_generated);
  REQUIRE(multi.rows[1].chosen == k3.chosen_index);
  REQUIRE(multi.rows[1].answer_text == k3.answer_text);
  REQUIRE(multi.rows[1].tokens == k3.budget.tokens_generated);
}

TEST_CASE("budget accounting equals the per-candidate token counts") {
  Fixture f;
  const auto r = infer_best_of_n(f.ctx, f.query, 4, RngState(17));
  int64_t expect = 0;
  for (const auto& c : r.candidates.candidates) {
    expect += c.think_tokens_sampled + c.answer_tokens_sampled;
  }
  REQUIRE(r.budget.tokens_generated == expect);
}

TEST_CASE("oracle scoring answers every candidate and picks a correct one when it exists") {
  Fixture f;
  // Rigged oracle: candidates whose answer decodes to an odd length count as
  // correct. The selection must always pick a 0.9 candidate when one exists.
  OracleScorer oracle = [&](const Trajectory& t) {
    return (t.answer_tokens.size() % 2 == 1) ? 0.9 : 0.1;
  };
  const auto r = infer_best_of_n(f.ctx, f.query, 6, RngState(19), &oracle);
  bool any_high = false;
  int first_high = -1;
  for (size_t i = 0; i < r.candidates.candidates.size(); ++i) {
    const auto& c = r.candidates.candidates[i];
    REQUIRE(c.traj.has_answer);  // oracle mode answers everyone
    if (c.score->final_score > 0.5 && !any_high) {
      any_high = true;
      first_high = static_cast<int>(i);
    }
  }
  if (any_high) {
    REQUIRE(r.chosen_index == first_high);
    REQUIRE(r.candidates.candidates[static_cast<size_t>(r.chosen_index)].score->final_score == 0.9);
  }
}

TEST_CASE("mcts with zero budget is byte-identical to internal inference") {
  Fixture f;
  MctsParams params;
  params.total_token_budget = 0;
  params.tokens_per_expansion = 8;
  for (uint64_t seed = 0; seed < 3; ++seed) {
    const auto internal = infer_internal(f.ctx, f.query, RngState(seed));
    const auto m = mcts_infer(f.ctx, f.query, params, RngState(seed));
    REQUIRE_FALSE(m.stats.degenerate_budget);
    REQUIRE(m.infer.traj.think_tokens == internal.traj.think_tokens);
    REQUIRE(m.infer.traj.answer_tokens == internal.traj.answer_tokens);
    REQUIRE(m.infer.answer_text == internal.answer_text);
  }
}

TEST_CASE("mcts with a budget below one expansion degenerates and is flagged") {
  Fixture f;
  MctsParams params;
  params.total_token_budget = 4;
  params.tokens_per_expansion = 8;
  const auto internal = infer_internal(f.ctx, f.query, RngState(23));
  const auto m = mcts_infer(f.ctx, f.query, params, RngState(23));
  REQUIRE(m.stats.degenerate_budget);
  REQUIRE(m.infer.traj.think_tokens == internal.traj.think_tokens);
}

TEST_CASE("mcts searches within budget and keeps a non-decreasing best score") {
  Fixture f;
  MctsParams params;
  params.total_token_budget = 96;
  params.tokens_per_expansion = 8;
  params.branching = 4;
  const auto m = mcts_infer(f.ctx, f.query, params, RngState(29));
  REQUIRE(m.stats.search_tokens <= params.total_token_budget);
  REQUIRE(m.stats.expansions >= 1);
  REQUIRE(m.stats.nodes >= 1);
  for (size_t i = 1; i < m.stats.best_so_far.size(); ++i) {
    REQUIRE(m.stats.best_so_far[i] >= m.stats.best_so_far[i - 1]);
  }
  REQUIRE(m.infer.budget.tokens_generated >= m.stats.search_tokens);
  REQUIRE_FALSE(m.infer.answer_text.empty());
  REQUIRE(m.infer.traj.think_closed);
}

TEST_CASE("mcts with branching one degenerates to iterative extension") {
  Fixture f;
  MctsParams params;
  params.total_token_budget = 48;
  params.tokens_per_expansion = 8;
  params.branching = 1;
  const auto m = mcts_infer(f.ctx, f.query, params, RngState(31));
  // Every expansion adds exactly one child: a single path.
  REQUIRE(m.stats.nodes == m.stats.expansions);
  REQUIRE_FALSE(m.infer.answer_text.empty());
}

TEST_CASE("mcts is deterministic for a fixed seed") {
  Fixture f;
  MctsParams params;
  params.total_token_budget = 64;
  params.tokens_per_expansion = 8;
  const auto a = mcts_infer(f.ctx, f.query, params, RngState(37));
  const auto b = mcts_infer(f.ctx, f.query, params, RngState(37));
  REQUIRE(a.infer.traj.think_tokens == b.infer.traj.think_tokens);
  REQUIRE(a.infer.answer_text == b.infer.answer_text);
  REQUIRE(a.stats.nodes == b.stats.nodes);
  REQUIRE(a.stats.search_tokens == b.stats.search_tokens);
}
