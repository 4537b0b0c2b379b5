#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "rgm/common.hpp"
#include "rgm/decode.hpp"
#include "rgm/policy.hpp"
#include "rgm/tasks.hpp"
#include "rgm/trainloop.hpp"
#include "rgm/training.hpp"
#include "rgm/tts.hpp"

namespace rgm {

/**
 * Declarative run configuration: `key = value` lines under [section]
 * headers, '#' comments. Unknown keys are rejected by name; duplicate keys
 * are rejected too. Every run writes its fully resolved configuration next
 * to its outputs.
 */
struct RunConfig {
  // [run]
  uint64_t seed = 42;

  // [policy]
  PolicyConfig policy;

  // [sampling]
  SamplingParams sampling;

  // [tasks]
  TaskGenConfig tasks;

  // [pretrain]
  int pretrain_steps = 1500;
  int pretrain_batch_size = 8;
  float pretrain_lr = 1e-3f;
  int pretrain_n_ops_min = 1;
  int pretrain_n_ops_max = 2;

  // [train]
  int train_steps = 200;
  int train_group_size = 8;
  int train_groups_per_step = 1;
  float train_clip_eps = 0.2f;
  float train_lr_policy = 1e-4f;
  float train_lr_head = 1e-3f;
  std::string train_loss = "spr";  // spr | bce
  bool train_freeze_policy = false;
  bool train_sprm_backprop_backbone = false;
  int train_aha_window = 25;
  double train_aha_threshold = 0.2;
  int train_n_ops_min = 1;
  int train_n_ops_max = 2;
  std::string train_corpus;  // fixed corpus for --freeze-policy
  bool train_dump_rollouts = true;

  // [head_train] (freeze-policy mode)
  int head_steps = 2000;
  int head_batch_trajectories = 64;

  // [efforts]
  EffortMap efforts;

  // [mcts]
  int mcts_branching = 4;
  int mcts_tokens_per_expansion = 64;
  double mcts_c_uct = 1.0;

  // [eval]
  int eval_tasks = 200;
  int eval_repeats = 16;
  int eval_n_ops_min = 1;
  int eval_n_ops_max = 2;
  uint64_t eval_seed = 1000;

  // [scaling]
  std::string scaling_ks = "1,2,8,32";
  std::string scaling_mcts_budgets = "";

  void validate() const {
    policy.validate();
    require(train_loss == "spr" || train_loss == "bce",
            "config: train.loss must be spr or bce, got '" + train_loss + "'");
    require(sampling.temperature >= 0.0f, "config: sampling.temperature must be >= 0");
    require(sampling.top_p > 0.0f && sampling.top_p <= 1.0f,
            "config: sampling.top_p must be in (0,1]");
    require(pretrain_n_ops_min >= 1 && pretrain_n_ops_min <= pretrain_n_ops_max,
            "config: pretrain n_ops range is invalid");
    require(train_n_ops_min >= 1 && train_n_ops_min <= train_n_ops_max,
            "config: train n_ops range is invalid");
    require(eval_n_ops_min >= 1 && eval_n_ops_min <= eval_n_ops_max,
            "config: eval n_ops range is invalid");
    require(efforts.low >= 1 && efforts.medium >= 1 && efforts.high >= 1,
            "config: efforts must be >= 1");
  }

  SprLossKind loss_kind() const {
    return train_loss == "bce" ? SprLossKind::bce : SprLossKind::spr;
  }
};

namespace detail_config {

struct Entry {
  std::string name;  // "section.key"
  std::variant<int*, float*, double*, bool*, uint64_t*, std::string*> slot;
};

inline std::vector<Entry> entries(RunConfig& c) {
  return {
      {"run.seed", &c.seed},
      {"policy.d_model", &c.policy.d_model},
      {"policy.n_layers", &c.policy.n_layers},
      {"policy.n_heads", &c.policy.n_heads},
      {"policy.max_context", &c.policy.max_context},
      {"policy.dropout_p", &c.policy.dropout_p},
      {"sampling.temperature", &c.sampling.temperature},
      {"sampling.top_p", &c.sampling.top_p},
      {"sampling.max_think_tokens", &c.sampling.max_think_tokens},
      {"sampling.max_answer_tokens", &c.sampling.max_answer_tokens},
      {"tasks.value_bound", &c.tasks.value_bound},
      {"tasks.max_start", &c.tasks.max_start},
      {"tasks.max_addend", &c.tasks.max_addend},
      {"tasks.max_multiplier", &c.tasks.max_multiplier},
      {"pretrain.steps", &c.pretrain_steps},
      {"pretrain.batch_size", &c.pretrain_batch_size},
      {"pretrain.lr", &c.pretrain_lr},
      {"pretrain.n_ops_min", &c.pretrain_n_ops_min},
      {"pretrain.n_ops_max", &c.pretrain_n_ops_max},
      {"train.steps", &c.train_steps},
      {"train.group_size", &c.train_group_size},
      {"train.groups_per_step", &c.train_groups_per_step},
      {"train.clip_eps", &c.train_clip_eps},
      {"train.lr_policy", &c.train_lr_policy},
      {"train.lr_head", &c.train_lr_head},
      {"train.loss", &c.train_loss},
      {"train.freeze_policy", &c.train_freeze_policy},
      {"train.sprm_backprop_backbone", &c.train_sprm_backprop_backbone},
      {"train.aha_window", &c.train_aha_window},
      {"train.aha_threshold", &c.train_aha_threshold},
      {"train.n_ops_min", &c.train_n_ops_min},
      {"train.n_ops_max", &c.train_n_ops_max},
      {"train.corpus", &c.train_corpus},
      {"train.dump_rollouts", &c.train_dump_rollouts},
      {"head_train.steps", &c.head_steps},
      {"head_train.batch_trajectories", &c.head_batch_trajectories},
      {"efforts.low", &c.efforts.low},
      {"efforts.medium", &c.efforts.medium},
      {"efforts.high", &c.efforts.high},
      {"mcts.branching", &c.mcts_branching},
      {"mcts.tokens_per_expansion", &c.mcts_tokens_per_expansion},
      {"mcts.c_uct", &c.mcts_c_uct},
      {"eval.tasks", &c.eval_tasks},
      {"eval.repeats", &c.eval_repeats},
      {"eval.n_ops_min", &c.eval_n_ops_min},
      {"eval.n_ops_max", &c.eval_n_ops_max},
      {"eval.seed", &c.eval_seed},
      {"scaling.ks", &c.scaling_ks},
      {"scaling.mcts_budgets", &c.scaling_mcts_budgets},
  };
}

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

inline void assign(const Entry& e, const std::string& raw) {
  const std::string value = trim(raw);
  auto fail = [&](const char* type) {
    throw ContractError("config: key " + e.name + " expects " + type + ", got '" + value + "'");
  };
  std::visit(
      [&](auto* slot) {
        using P = std::remove_pointer_t<std::decay_t<decltype(slot)>>;
        if constexpr (std::is_same_v<P, std::string>) {
          *slot = value;
        } else if constexpr (std::is_same_v<P, bool>) {
          if (value == "true" || value == "1") {
            *slot = true;
          } else if (value == "false" || value == "0") {
            *slot = false;
          } else {
            fail("a boolean (true/false)");
          }
        } else {
          std::istringstream in(value);
          P parsed{};
          in >> parsed;
          if (in.fail() || !in.eof()) {
            if constexpr (std::is_integral_v<P>) {
              fail("an integer");
            } else {
              fail("a number");
            }
          }
          *slot = parsed;
        }
      },
      e.slot);
}

inline std::string render(const Entry& e) {
  return std::visit(
      [&](auto* slot) -> std::string {
        using P = std::remove_pointer_t<std::decay_t<decltype(slot)>>;
        if constexpr (std::is_same_v<P, std::string>) {
          return *slot;
        } else if constexpr (std::is_same_v<P, bool>) {
          return *slot ? "true" : "false";
        } else if constexpr (std::is_same_v<P, float>) {
          return format_float(*slot);
        } else if constexpr (std::is_same_v<P, double>) {
          return format_double(*slot);
        } else {
          return std::to_string(*slot);
        }
      },
      e.slot);
}

}  // namespace detail_config

/// Parse a config file over the defaults already present in `config`.
inline void load_config_file(const std::string& path, RunConfig& config) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open: " + path);
  auto table = detail_config::entries(config);
  std::set<std::string> seen;
  std::string line, section;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail_config::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ContractError("config: malformed section header at line " + std::to_string(line_no));
      }
      section = detail_config::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError("config: expected key = value at line " + std::to_string(line_no));
    }
    const std::string key = detail_config::trim(line.substr(0, eq));
    const std::string name = section.empty() ? key : section + "." + key;
    bool found = false;
    for (const auto& e : table) {
      if (e.name == name) {
        if (!seen.insert(name).second) {
          throw ContractError("config: duplicate key " + name);
        }
        detail_config::assign(e, line.substr(eq + 1));
        found = true;
        break;
      }
    }
    if (!found) throw ContractError("config: unknown key " + name);
  }
}

/// Fully resolved configuration, suitable for writing next to run outputs.
inline std::string dump_config(const RunConfig& config) {
  auto table = detail_config::entries(const_cast<RunConfig&>(config));
  std::string out;
  std::string section;
  for (const auto& e : table) {
    const auto dot = e.name.find('.');
    const std::string sec = e.name.substr(0, dot);
    if (sec != section) {
      if (!out.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += e.name.substr(dot + 1) + " = " + detail_config::render(e) + "\n";
  }
  return out;
}

/// Comma-separated integer list ("1,2,8,32").
inline std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    cur = detail_config::trim(cur);
    if (cur.empty()) continue;
    try {
      out.push_back(std::stoi(cur));
    } catch (const std::exception&) {
      throw ContractError("config: bad integer '" + cur + "' in list");
    }
  }
  return out;
}

}  // namespace rgm
