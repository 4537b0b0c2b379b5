#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "rgm/common.hpp"
#include "rgm/rng.hpp"

namespace rgm {

/**
 * Synthetic verifiable task: a chain of integer operations whose final value
 * is the ground truth. Difficulty is the chain length; operand ranges keep
 * the numerals short and every intermediate inside value_bound.
 */
struct TaskGenConfig {
  int value_bound = 10000;  // hard bound on every intermediate value
  int max_start = 20;       // start value drawn from [1, max_start]
  int max_addend = 20;      // add/subtract operand from [1, max_addend]
  int max_multiplier = 9;   // multiply operand from [2, max_multiplier]
};

struct SyntheticTask {
  std::string query_text;
  long long ground_truth = 0;
  int n_ops = 0;
  uint64_t seed = 0;
  std::string canonical_think;  // worked steps, ".\n\n" after each
};

/// Deterministic in (config, n_ops, seed); regenerating is exact.
inline SyntheticTask generate_task(const TaskGenConfig& cfg, int n_ops, uint64_t seed) {
  require(n_ops >= 1, "generate_task: n_ops must be >= 1");
  RngState rng(seed);
  SyntheticTask task;
  task.n_ops = n_ops;
  task.seed = seed;

  long long v = 1 + static_cast<long long>(rng.below(static_cast<uint32_t>(cfg.max_start)));
  task.query_text = "Start with " + std::to_string(v) + ".";
  for (int op = 0; op < n_ops; ++op) {
    for (int attempt = 0;; ++attempt) {
      require(attempt < 64, "generate_task: cannot keep values inside the bound");
      const uint32_t kind = rng.below(3);
      long long operand = 0, next = 0;
      if (kind == 2) {
        operand = 2 + static_cast<long long>(rng.below(static_cast<uint32_t>(cfg.max_multiplier - 1)));
        next = v * operand;
      } else {
        operand = 1 + static_cast<long long>(rng.below(static_cast<uint32_t>(cfg.max_addend)));
        next = (kind == 0) ? v + operand : v - operand;
      }
      if (std::abs(next) > cfg.value_bound) continue;
      const char* verb = (kind == 0) ? " Add " : (kind == 1) ? " Subtract " : " Multiply by ";
      const char sym = (kind == 0) ? '+' : (kind == 1) ? '-' : '*';
      task.query_text += verb + std::to_string(operand) + ".";
      task.canonical_think += std::to_string(v) + " " + sym + " " + std::to_string(operand) +
                              " = " + std::to_string(next) + ".\n\n";
      v = next;
      break;
    }
  }
  task.query_text += " What is the result?";
  task.ground_truth = v;
  return task;
}

/// Last integer in the text, or nothing when none parses.
inline std::optional<long long> parse_last_integer(const std::string& text) {
  std::optional<long long> result;
  size_t i = 0;
  while (i < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[i]))) {
      size_t start = i;
      bool negative = false;
      if (start > 0 && text[start - 1] == '-') {
        negative = true;
      }
      size_t end = i;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
      if (end - start <= 12) {
        long long value = 0;
        for (size_t j = start; j < end; ++j) value = value * 10 + (text[j] - '0');
        result = negative ? -value : value;
      }
      i = end;
    } else {
      ++i;
    }
  }
  return result;
}

/// Outcome label: 1 iff the last integer in the answer equals the ground
/// truth. Unparseable answers are 0.
inline int verify(const SyntheticTask& task, const std::string& answer_text) {
  const auto parsed = parse_last_integer(answer_text);
  return (parsed.has_value() && *parsed == task.ground_truth) ? 1 : 0;
}

// ---------------------------------------------------------------------------
// Trajectory corpus (JSONL)
// ---------------------------------------------------------------------------

/**
 * One rollout in the corpus. Fixed schema keys: seed, query, think, answer,
 * y, process_scores, s_final; scores may be null. Keys the reader does not
 * know are preserved verbatim and re-emitted on write.
 */
struct TrajectoryRecord {
  uint64_t seed = 0;
  std::string query;
  std::string think;
  std::string answer;
  int y = 0;
  std::optional<std::vector<double>> process_scores;
  std::optional<double> s_final;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

inline nlohmann::ordered_json record_to_json(const TrajectoryRecord& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["query"] = r.query;
  j["think"] = r.think;
  j["answer"] = r.answer;
  j["y"] = r.y;
  if (r.process_scores.has_value()) {
    j["process_scores"] = *r.process_scores;
  } else {
    j["process_scores"] = nullptr;
  }
  if (r.s_final.has_value()) {
    j["s_final"] = *r.s_final;
  } else {
    j["s_final"] = nullptr;
  }
  for (const auto& [key, value] : r.extra.items()) j[key] = value;
  return j;
}

inline TrajectoryRecord record_from_json(const nlohmann::ordered_json& j) {
  TrajectoryRecord r;
  r.seed = j.at("seed").get<uint64_t>();
  r.query = j.at("query").get<std::string>();
  r.think = j.at("think").get<std::string>();
  r.answer = j.at("answer").get<std::string>();
  r.y = j.at("y").get<int>();
  if (j.contains("process_scores") && !j.at("process_scores").is_null()) {
    r.process_scores = j.at("process_scores").get<std::vector<double>>();
  }
  if (j.contains("s_final") && !j.at("s_final").is_null()) {
    r.s_final = j.at("s_final").get<double>();
  }
  static const char* known[] = {"seed", "query", "think", "answer", "y", "process_scores",
                                "s_final"};
  for (const auto& [key, value] : j.items()) {
    bool is_known = false;
    for (const char* k : known) {
      if (key == k) {
        is_known = true;
        break;
      }
    }
    if (!is_known) r.extra[key] = value;
  }
  return r;
}

inline void write_corpus(const std::string& path, const std::vector<TrajectoryRecord>& records) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("corpus: cannot open for writing: " + path);
  for (const auto& r : records) {
    f << record_to_json(r).dump() << "\n";
  }
  if (!f) throw IoError("corpus: write failed: " + path);
}

/// Reads the whole file or throws; a malformed line fails with its number.
inline std::vector<TrajectoryRecord> read_corpus(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("corpus: cannot open: " + path);
  std::vector<TrajectoryRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::ordered_json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("corpus: malformed line " + std::to_string(line_no) + " in " + path + ": " +
                    e.what());
    }
  }
  return records;
}

}  // namespace rgm
