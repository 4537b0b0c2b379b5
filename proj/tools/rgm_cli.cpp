// Command-line front end: pretrain / train / infer / bench-scaling.
//
// Every command is a pure function of (config, inputs, seed): reruns with the
// same arguments produce byte-identical artifacts. Outputs carry no
// timestamps, floats are printed with shortest round-trip formatting, and all
// randomness flows from the run seed through named streams.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rgm/checkpoint.hpp"
#include "rgm/config.hpp"
#include "rgm/decode.hpp"
#include "rgm/policy.hpp"
#include "rgm/stats.hpp"
#include "rgm/tasks.hpp"
#include "rgm/trainloop.hpp"
#include "rgm/training.hpp"
#include "rgm/tts.hpp"
#include "rgm/version.hpp"
#include "rgm/vocab.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitContract = 4;
constexpr int kExitInternal = 5;

void write_text(const fs::path& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw rgm::IoError("cannot open for writing: " + path.string());
  f << body;
  if (!f) throw rgm::IoError("write failed: " + path.string());
}

void prepare_out_dir(const fs::path& out, const rgm::RunConfig& config) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw rgm::IoError("cannot create output directory: " + out.string());
  write_text(out / "resolved.cfg", rgm::dump_config(config));
  write_text(out / "VERSION", std::string(rgm::kVersion) + "\n");
}

std::string fmt(double v) { return rgm::format_double(v); }

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

int cmd_pretrain(const rgm::RunConfig& config, const std::string& resume_path,
                 const fs::path& out) {
  prepare_out_dir(out, config);
  rgm::Vocabulary vocab;

  rgm::PolicyConfig pc = config.policy;
  pc.vocab_size = vocab.size();
  uint64_t start_step = 0;
  rgm::PolicyParams<float> policy(pc, rgm::RngState(config.seed));
  if (!resume_path.empty()) {
    const rgm::Checkpoint ckpt = rgm::load_checkpoint(resume_path);
    policy = rgm::policy_from_checkpoint(ckpt);
    start_step = ckpt.step;
    rgm::log_info("resuming from step " + std::to_string(start_step));
  }

  rgm::PretrainConfig pcfg;
  pcfg.steps = config.pretrain_steps;
  pcfg.batch_size = config.pretrain_batch_size;
  pcfg.lr = config.pretrain_lr;
  pcfg.n_ops_min = config.pretrain_n_ops_min;
  pcfg.n_ops_max = config.pretrain_n_ops_max;
  pcfg.tasks = config.tasks;
  pcfg.seed = config.seed;

  rgm::AdaptiveOptimizer<float> opt(pcfg.lr);
  const rgm::PretrainResult result = rgm::pretrain_policy(policy, vocab, pcfg, opt, start_step);

  std::string csv = "step,loss\n";
  for (size_t i = 0; i < result.losses.size(); ++i) {
    csv += std::to_string(start_step + i + 1) + "," + fmt(result.losses[i]) + "\n";
  }
  write_text(out / "pretrain_loss.csv", csv);

  rgm::Checkpoint ckpt = rgm::make_checkpoint(policy, start_step + result.losses.size());
  rgm::save_checkpoint((out / "checkpoint.rgm").string(), ckpt);
  rgm::log_info("pretrain done; final loss " +
                (result.losses.empty() ? std::string("n/a") : fmt(result.losses.back())));
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

std::string train_log_csv(const std::vector<rgm::TrainLogRow>& rows) {
  std::string csv =
      "step,spr_loss,bce_equivalent,mean_score_correct,mean_score_incorrect,gap,policy_loss,"
      "pass_rate\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.step) + "," + fmt(r.spr_loss) + "," + fmt(r.bce_equivalent) + "," +
           fmt(r.mean_score_correct) + "," + fmt(r.mean_score_incorrect) + "," + fmt(r.gap) + "," +
           fmt(r.policy_loss) + "," + fmt(r.pass_rate) + "\n";
  }
  return csv;
}

std::string aha_csv(const rgm::AhaTrace& trace) {
  std::string csv = "step,mean_correct,mean_incorrect,gap\n";
  for (size_t i = 0; i < trace.gap.size(); ++i) {
    csv += std::to_string(i + 1) + "," + fmt(trace.mean_correct[i]) + "," +
           fmt(trace.mean_incorrect[i]) + "," + fmt(trace.gap[i]) + "\n";
  }
  return csv;
}

int cmd_train(const rgm::RunConfig& config, const std::string& ckpt_path, const fs::path& out) {
  prepare_out_dir(out, config);
  rgm::Vocabulary vocab;
  const rgm::Checkpoint ckpt = rgm::load_checkpoint(ckpt_path);
  rgm::PolicyParams<float> policy = rgm::policy_from_checkpoint(ckpt);
  rgm::SprmHead<float> head =
      rgm::sprm_from_checkpoint(ckpt).value_or(rgm::SprmHead<float>(
          policy.cfg.d_model, rgm::RngState(config.seed).split(0x5EED)));

  std::optional<int> aha_step;
  rgm::AhaTrace trace;
  std::vector<rgm::TrainLogRow> log_rows;
  std::vector<rgm::TrajectoryRecord> rollouts;

  if (config.train_freeze_policy && !config.train_corpus.empty()) {
    // Head-only training on a fixed corpus.
    const auto records = rgm::read_corpus(config.train_corpus);
    const auto corpus = rgm::extract_corpus_features(policy, vocab, records);
    rgm::require(!corpus.empty(), "train: corpus has no scoreable records");
    double pass = 0;
    for (const auto& tf : corpus) pass += tf.y;
    pass /= static_cast<double>(corpus.size());

    rgm::HeadTrainConfig hcfg;
    hcfg.steps = config.head_steps;
    hcfg.batch_trajectories = config.head_batch_trajectories;
    hcfg.lr = config.train_lr_head;
    hcfg.kind = config.loss_kind();
    hcfg.aha_window = config.train_aha_window;
    hcfg.aha_threshold = config.train_aha_threshold;
    hcfg.seed = config.seed;
    const auto result = rgm::train_head_on_corpus(head, corpus, hcfg);
    trace = result.trace;
    aha_step = result.aha_step;
    for (size_t i = 0; i < result.losses.size(); ++i) {
      rgm::TrainLogRow row;
      row.step = static_cast<int>(i) + 1;
      row.spr_loss = result.losses[i];
      row.mean_score_correct = trace.mean_correct[i];
      row.mean_score_incorrect = trace.mean_incorrect[i];
      row.gap = trace.gap[i];
      row.pass_rate = pass;
      log_rows.push_back(row);
    }
  } else {
    rgm::TrainLoopConfig tcfg;
    tcfg.steps = config.train_steps;
    tcfg.group_size = config.train_group_size;
    tcfg.groups_per_step = config.train_groups_per_step;
    tcfg.clip_eps = config.train_clip_eps;
    tcfg.lr_policy = config.train_lr_policy;
    tcfg.lr_head = config.train_lr_head;
    tcfg.loss_kind = config.loss_kind();
    tcfg.freeze_policy = config.train_freeze_policy;
    tcfg.sprm_backprop_backbone = config.train_sprm_backprop_backbone;
    tcfg.aha_window = config.train_aha_window;
    tcfg.aha_threshold = config.train_aha_threshold;
    tcfg.n_ops_min = config.train_n_ops_min;
    tcfg.n_ops_max = config.train_n_ops_max;
    tcfg.sampling = config.sampling;
    tcfg.tasks = config.tasks;
    tcfg.seed = config.seed;
    tcfg.collect_rollouts = config.train_dump_rollouts;
    rgm::TrainResult result = rgm::train_reflective(policy, head, vocab, tcfg);
    trace = std::move(result.trace);
    aha_step = result.aha_step;
    log_rows = std::move(result.log);
    rollouts = std::move(result.rollouts);
  }

  write_text(out / "train_log.csv", train_log_csv(log_rows));
  write_text(out / "aha.csv", aha_csv(trace));
  if (!rollouts.empty()) rgm::write_corpus((out / "rollouts.jsonl").string(), rollouts);

  rgm::Checkpoint combined = rgm::make_checkpoint(policy, ckpt.step + log_rows.size());
  rgm::append_sprm(combined, head);
  rgm::save_checkpoint((out / "checkpoint.rgm").string(), combined);

  if (aha_step.has_value()) {
    std::printf("aha_step=%d\n", *aha_step + 1);  // 1-based step index
  } else {
    std::printf("aha_step=null\n");
  }
  return 0;
}

// ---------------------------------------------------------------------------
// infer / bench-scaling
// ---------------------------------------------------------------------------

struct BenchRow {
  int query_id = 0;
  std::string strategy;
  int64_t k_or_budget = 0;
  int64_t tokens = 0;
  int64_t c = 0;
  int correct = 0;
  int chosen_index = -1;
  double s_chosen = std::numeric_limits<double>::quiet_NaN();
};

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string csv = "query_id,strategy,k_or_budget,tokens,C,correct,chosen_index,S_chosen\n";
  for (const auto& r : rows) {
    csv += std::to_string(r.query_id) + "," + r.strategy + "," + std::to_string(r.k_or_budget) +
           "," + std::to_string(r.tokens) + "," + std::to_string(r.c) + "," +
           std::to_string(r.correct) + "," + std::to_string(r.chosen_index) + "," +
           fmt(r.s_chosen) + "\n";
  }
  return csv;
}

ordered_json candidate_json(const rgm::Vocabulary& vocab, const rgm::ScoredCandidate& c,
                            bool answered) {
  ordered_json j;
  j["think"] = vocab.decode(c.traj.think_tokens);
  if (answered && c.traj.has_answer) {
    j["answer"] = vocab.decode(c.traj.answer_tokens);
  } else {
    j["answer"] = nullptr;
  }
  if (c.score.has_value()) {
    j["process_scores"] = c.score->process_scores;
    j["s_final"] = c.score->final_score;
  } else {
    j["process_scores"] = nullptr;
    j["s_final"] = nullptr;
  }
  return j;
}

ordered_json single_trajectory_json(const rgm::Vocabulary& vocab, const rgm::Trajectory& traj,
                                    const rgm::SprmHead<float>* head) {
  ordered_json j;
  j["think"] = vocab.decode(traj.think_tokens);
  j["answer"] = vocab.decode(traj.answer_tokens);
  j["process_scores"] = nullptr;
  j["s_final"] = nullptr;
  if (head != nullptr) {
    const auto seg = rgm::segment_with_fallback(traj.think_tokens, rgm::Vocabulary::kStep);
    if (seg.n_steps() > 0 && traj.hidden_states.rows() ==
                                 static_cast<int>(traj.think_tokens.size())) {
      const auto score = rgm::score_trajectory(*head, traj, seg);
      j["process_scores"] = score.process_scores;
      j["s_final"] = score.final_score;
    }
  }
  return j;
}

struct StrategySpec {
  std::string name;  // basic | internal | bon | mcts
  int k = 1;
  int64_t budget = 0;
  int64_t k_or_budget() const { return name == "mcts" ? budget : k; }
};

int cmd_infer(const rgm::RunConfig& config, const std::string& ckpt_path, const fs::path& out,
              const StrategySpec& strategy, int repeats) {
  prepare_out_dir(out, config);
  rgm::Vocabulary vocab;
  const rgm::Checkpoint ckpt = rgm::load_checkpoint(ckpt_path);
  rgm::PolicyParams<float> policy = rgm::policy_from_checkpoint(ckpt);
  auto head = rgm::sprm_from_checkpoint(ckpt);
  if (strategy.name == "bon" || strategy.name == "mcts") {
    rgm::require(head.has_value(),
                 "infer: strategy '" + strategy.name + "' needs a reflective checkpoint "
                 "(SPRM head tensors missing)");
  }

  rgm::TtsContext ctx;
  ctx.policy = &policy;
  ctx.head = head.has_value() ? &*head : nullptr;
  ctx.vocab = &vocab;
  ctx.sampling = config.sampling;

  std::vector<BenchRow> rows;
  std::string trace;
  int64_t correct_sum = 0;
  int64_t token_sum = 0;
  double c_sum = 0;

  for (int r = 0; r < repeats; ++r) {
    for (int i = 0; i < config.eval_tasks; ++i) {
      const int n_ops = config.eval_n_ops_min +
                        static_cast<int>(rgm::RngState(config.eval_seed)
                                             .split(static_cast<uint64_t>(i))
                                             .below(static_cast<uint32_t>(
                                                 config.eval_n_ops_max - config.eval_n_ops_min + 1)));
      const rgm::SyntheticTask task =
          rgm::generate_task(config.tasks, n_ops, config.eval_seed + static_cast<uint64_t>(i));
      const std::vector<int> query = vocab.encode(task.query_text);
      const rgm::RngState rng = rgm::RngState(config.seed)
                                    .split(static_cast<uint64_t>(r))
                                    .split(static_cast<uint64_t>(i));

      rgm::InferResult result;
      ordered_json jq;
      jq["query_id"] = i;
      jq["repeat"] = r;
      jq["question"] = task.query_text;
      if (strategy.name == "basic") {
        result = rgm::infer_basic(ctx, query, rng);
        jq["candidates"] = ordered_json::array({single_trajectory_json(vocab, result.traj, nullptr)});
        jq["chosen"] = 0;
      } else if (strategy.name == "internal") {
        result = rgm::infer_internal(ctx, query, rng);
        jq["candidates"] = ordered_json::array(
            {single_trajectory_json(vocab, result.traj, ctx.head)});
        jq["chosen"] = 0;
      } else if (strategy.name == "bon") {
        result = rgm::infer_best_of_n(ctx, query, strategy.k, rng);
        ordered_json cands = ordered_json::array();
        for (size_t ci = 0; ci < result.candidates.candidates.size(); ++ci) {
          cands.push_back(candidate_json(vocab, result.candidates.candidates[ci],
                                         static_cast<int>(ci) == result.chosen_index));
        }
        jq["candidates"] = std::move(cands);
        jq["chosen"] = result.chosen_index;
      } else {
        rgm::MctsParams mp;
        mp.branching = config.mcts_branching;
        mp.tokens_per_expansion = config.mcts_tokens_per_expansion;
        mp.c_uct = static_cast<float>(config.mcts_c_uct);
        mp.total_token_budget = strategy.budget;
        auto m = rgm::mcts_infer(ctx, query, mp, rng);
        result = std::move(m.infer);
        jq["candidates"] = ordered_json::array(
            {single_trajectory_json(vocab, result.traj, ctx.head)});
        jq["chosen"] = 0;
        jq["search_tokens"] = m.stats.search_tokens;
      }

      const int correct = rgm::verify(task, result.answer_text);
      jq["answer"] = result.answer_text;
      jq["correct"] = correct;
      jq["tokens"] = result.budget.tokens_generated;
      jq["c"] = result.budget.c();
      trace += jq.dump() + "\n";

      BenchRow row;
      row.query_id = i;
      row.strategy = strategy.name;
      row.k_or_budget = strategy.k_or_budget();
      row.tokens = result.budget.tokens_generated;
      row.c = result.budget.c();
      row.correct = correct;
      row.chosen_index = result.chosen_index;
      row.s_chosen = result.chosen_score;
      rows.push_back(row);

      correct_sum += correct;
      token_sum += result.budget.tokens_generated;
      c_sum += static_cast<double>(result.budget.c());
    }
  }

  const double total = static_cast<double>(config.eval_tasks) * repeats;
  const double pass1 = correct_sum / total;
  std::string summary = "strategy,k_or_budget,tasks,repeats,pass1,mean_tokens,mean_C\n";
  summary += strategy.name + "," + std::to_string(strategy.k_or_budget()) + "," +
             std::to_string(config.eval_tasks) + "," + std::to_string(repeats) + "," + fmt(pass1) +
             "," + fmt(token_sum / total) + "," + fmt(c_sum / total) + "\n";

  write_text(out / "trace.jsonl", trace);
  write_text(out / "bench.csv", bench_csv(rows));
  write_text(out / "summary.csv", summary);
  std::printf("pass@1=%s over %d tasks x %d repeats\n", fmt(pass1).c_str(), config.eval_tasks,
              repeats);
  return 0;
}

int cmd_bench_scaling(const rgm::RunConfig& config, const std::string& ckpt_path,
                      const fs::path& out) {
  prepare_out_dir(out, config);
  rgm::Vocabulary vocab;
  const rgm::Checkpoint ckpt = rgm::load_checkpoint(ckpt_path);
  rgm::PolicyParams<float> policy = rgm::policy_from_checkpoint(ckpt);
  auto head = rgm::sprm_from_checkpoint(ckpt);
  rgm::require(head.has_value(), "bench-scaling: reflective checkpoint required");

  rgm::TtsContext ctx;
  ctx.policy = &policy;
  ctx.head = &*head;
  ctx.vocab = &vocab;
  ctx.sampling = config.sampling;

  const std::vector<int> ks = rgm::parse_int_list(config.scaling_ks);
  rgm::require(!ks.empty(), "bench-scaling: scaling.ks is empty");
  const std::vector<int> budgets = rgm::parse_int_list(config.scaling_mcts_budgets);

  std::vector<BenchRow> rows;
  struct Point {
    std::string strategy;
    int64_t k_or_budget;
    double accuracy, mean_tokens, mean_c;
  };
  std::vector<Point> points;

  // Shared candidate streams make the per-k evaluation identical to
  // standalone runs at a fraction of the generation cost.
  {
    std::vector<int64_t> correct(ks.size(), 0), tokens(ks.size(), 0);
    std::vector<double> cs(ks.size(), 0);
    for (int r = 0; r < config.eval_repeats; ++r) {
      for (int i = 0; i < config.eval_tasks; ++i) {
        const int n_ops = config.eval_n_ops_min +
                          static_cast<int>(rgm::RngState(config.eval_seed)
                                               .split(static_cast<uint64_t>(i))
                                               .below(static_cast<uint32_t>(
                                                   config.eval_n_ops_max - config.eval_n_ops_min + 1)));
        const rgm::SyntheticTask task =
            rgm::generate_task(config.tasks, n_ops, config.eval_seed + static_cast<uint64_t>(i));
        const std::vector<int> query = vocab.encode(task.query_text);
        const rgm::RngState rng = rgm::RngState(config.seed)
                                      .split(static_cast<uint64_t>(r))
                                      .split(static_cast<uint64_t>(i));
        const auto multi = rgm::infer_best_of_n_multi(ctx, query, ks, rng);
        for (size_t kidx = 0; kidx < ks.size(); ++kidx) {
          const auto& row = multi.rows[kidx];
          const int ok = rgm::verify(task, row.answer_text);
          const int64_t c_val = row.tokens * policy.param_count();
          correct[kidx] += ok;
          tokens[kidx] += row.tokens;
          cs[kidx] += static_cast<double>(c_val);
          BenchRow br;
          br.query_id = i;
          br.strategy = "bon";
          br.k_or_budget = row.k;
          br.tokens = row.tokens;
          br.c = c_val;
          br.correct = ok;
          br.chosen_index = row.chosen;
          br.s_chosen = row.chosen_score;
          rows.push_back(br);
        }
      }
    }
    const double total = static_cast<double>(config.eval_tasks) * config.eval_repeats;
    for (size_t kidx = 0; kidx < ks.size(); ++kidx) {
      points.push_back({"bon", ks[kidx], correct[kidx] / total, tokens[kidx] / total,
                        cs[kidx] / total});
    }
  }

  for (int budget : budgets) {
    int64_t correct = 0, tokens = 0;
    double cs = 0;
    for (int r = 0; r < config.eval_repeats; ++r) {
      for (int i = 0; i < config.eval_tasks; ++i) {
        const int n_ops = config.eval_n_ops_min +
                          static_cast<int>(rgm::RngState(config.eval_seed)
                                               .split(static_cast<uint64_t>(i))
                                               .below(static_cast<uint32_t>(
                                                   config.eval_n_ops_max - config.eval_n_ops_min + 1)));
        const rgm::SyntheticTask task =
            rgm::generate_task(config.tasks, n_ops, config.eval_seed + static_cast<uint64_t>(i));
        const std::vector<int> query = vocab.encode(task.query_text);
        const rgm::RngState rng = rgm::RngState(config.seed)
                                      .split(static_cast<uint64_t>(r))
                                      .split(static_cast<uint64_t>(i));
        rgm::MctsParams mp;
        mp.branching = config.mcts_branching;
        mp.tokens_per_expansion = config.mcts_tokens_per_expansion;
        mp.c_uct = static_cast<float>(config.mcts_c_uct);
        mp.total_token_budget = budget;
        const auto m = rgm::mcts_infer(ctx, query, mp, rng);
        const int ok = rgm::verify(task, m.infer.answer_text);
        correct += ok;
        tokens += m.infer.budget.tokens_generated;
        cs += static_cast<double>(m.infer.budget.c());
        BenchRow br;
        br.query_id = i;
        br.strategy = "mcts";
        br.k_or_budget = budget;
        br.tokens = m.infer.budget.tokens_generated;
        br.c = m.infer.budget.c();
        br.correct = ok;
        br.chosen_index = 0;
        br.s_chosen = m.infer.chosen_score;
        rows.push_back(br);
      }
    }
    const double total = static_cast<double>(config.eval_tasks) * config.eval_repeats;
    points.push_back({"mcts", budget, correct / total, tokens / total, cs / total});
  }

  std::string scaling = "strategy,k_or_budget,tokens,C,accuracy,ln_C\n";
  std::vector<double> xs, ys;
  for (const auto& p : points) {
    const double ln_c = std::log(p.mean_c);
    scaling += p.strategy + "," + std::to_string(p.k_or_budget) + "," + fmt(p.mean_tokens) + "," +
               fmt(p.mean_c) + "," + fmt(p.accuracy) + "," + fmt(ln_c) + "\n";
    xs.push_back(ln_c);
    ys.push_back(p.accuracy);
  }
  write_text(out / "scaling.csv", scaling);
  write_text(out / "bench.csv", bench_csv(rows));

  if (points.size() < 3) {
    std::printf("fit skipped: need at least 3 sweep points, have %zu\n", points.size());
  } else {
    const auto fit = rgm::stats::fit_line(xs, ys);
    const double rho = rgm::stats::spearman(xs, ys);
    std::string fit_csv = "slope,intercept,spearman,points\n";
    fit_csv += fmt(fit.slope) + "," + fmt(fit.intercept) + "," + fmt(rho) + "," +
               std::to_string(points.size()) + "\n";
    write_text(out / "fit.csv", fit_csv);
    std::printf("fit: accuracy ~ %s * ln(C) + %s, spearman=%s\n", fmt(fit.slope).c_str(),
                fmt(fit.intercept).c_str(), fmt(rho).c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy reflective generative model lab: a policy network that scores its own "
               "reasoning, with best-of-n and MCTS test-time scaling"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, out_dir = "out";
  std::optional<uint64_t> seed_override;
  std::string strategy_name = "bon", effort = "medium", loss_override;
  std::optional<int> k_override, repeats_override;
  std::optional<int64_t> budget_override;
  bool freeze_policy_flag = false;

  app.add_option("--config", config_path, "run configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed_override, "override run.seed");
  app.add_option("--out", out_dir, "output directory");

  auto* pre = app.add_subcommand("pretrain", "supervised warm-up on canonical solutions");
  std::string resume_path;
  pre->add_option("--checkpoint", resume_path, "resume from an existing checkpoint")
      ->check(CLI::ExistingFile);

  auto* trn = app.add_subcommand("train", "joint GRPO + SPR-loss training");
  trn->add_option("--checkpoint", checkpoint_path, "warm-up checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  trn->add_option("--loss", loss_override, "head loss")->check(CLI::IsMember({"spr", "bce"}));
  trn->add_flag("--freeze-policy", freeze_policy_flag, "train the SPRM head only");

  auto* inf = app.add_subcommand("infer", "answer held-out tasks with a TTS strategy");
  inf->add_option("--checkpoint", checkpoint_path, "reflective checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  inf->add_option("--strategy", strategy_name, "inference strategy")
      ->check(CLI::IsMember({"basic", "internal", "bon", "mcts"}));
  inf->add_option("--effort", effort, "reasoning effort preset")
      ->check(CLI::IsMember({"low", "medium", "high"}));
  inf->add_option("--k", k_override, "explicit candidate count (overrides --effort)");
  inf->add_option("--budget", budget_override, "MCTS token budget");
  inf->add_option("--repeats", repeats_override, "evaluation repeats (pass@1 averages over them)");

  auto* bench = app.add_subcommand("bench-scaling", "sweep k and fit accuracy vs ln(C)");
  bench->add_option("--checkpoint", checkpoint_path, "reflective checkpoint")
      ->required()
      ->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    app.exit(e);
    return kExitUsage;
  }

  try {
    rgm::RunConfig config;
    if (!config_path.empty()) rgm::load_config_file(config_path, config);
    if (seed_override.has_value()) config.seed = *seed_override;
    if (!loss_override.empty()) config.train_loss = loss_override;
    if (freeze_policy_flag) config.train_freeze_policy = true;
    config.validate();

    if (pre->parsed()) return cmd_pretrain(config, resume_path, out_dir);
    if (trn->parsed()) return cmd_train(config, checkpoint_path, out_dir);
    if (inf->parsed()) {
      StrategySpec spec;
      spec.name = strategy_name;
      const auto level = rgm::effort_from_string(effort);
      spec.k = k_override.value_or(config.efforts.k_for(level.value()));
      rgm::require(spec.k >= 1, "infer: k must be >= 1");
      spec.budget = budget_override.value_or(4096);
      return cmd_infer(config, checkpoint_path, out_dir, spec,
                       repeats_override.value_or(config.eval_repeats));
    }
    if (bench->parsed()) return cmd_bench_scaling(config, checkpoint_path, out_dir);
    return kExitUsage;
  } catch (const rgm::IoError& e) {
    std::fprintf(stderr, "rgm: i/o error: %s\n", e.what());
    return kExitIo;
  } catch (const rgm::ContractError& e) {
    std::fprintf(stderr, "rgm: %s\n", e.what());
    return kExitContract;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "rgm: internal error: %s\n", e.what());
    return kExitInternal;
  }
}
