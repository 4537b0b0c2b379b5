#pragma once

#include <span>
#include <vector>

#include "rgm/common.hpp"

namespace rgm {

/**
 * Step boundaries inside a think region: the positions of retained
 * step-tokens, strictly increasing.
 */
struct StepSegmentation {
  std::vector<int> step_end_indices;
  int n_steps() const { return static_cast<int>(step_end_indices.size()); }
};

/**
 * Streaming segmenter. Feeding tokens one at a time yields exactly the
 * retained indices of the batch rules:
 *   - a step-token position is retained;
 *   - within a run of consecutive step-tokens only the first is retained;
 *   - a run that starts at position 0 is dropped entirely.
 * Copyable, so a search tree can fork the state at any prefix. Prefix
 * stability of the batch rules follows from this formulation: the decision
 * for position i never looks ahead.
 */
class SegmentationCursor {
 public:
  /// Returns true when the token just fed ends a retained step.
  bool feed(bool is_step_token) {
    const bool retained = is_step_token && !prev_was_step_ && !in_leading_run_;
    if (!is_step_token) in_leading_run_ = false;
    prev_was_step_ = is_step_token;
    position_ += 1;
    return retained;
  }

  int position() const { return position_; }

 private:
  int position_ = 0;
  bool prev_was_step_ = false;
  bool in_leading_run_ = true;
};

/// Apply the step-segmentation rules to a whole think region.
inline StepSegmentation segment(std::span<const int> think_tokens, int step_token_id) {
  StepSegmentation seg;
  SegmentationCursor cursor;
  for (size_t i = 0; i < think_tokens.size(); ++i) {
    if (cursor.feed(think_tokens[i] == step_token_id)) {
      seg.step_end_indices.push_back(static_cast<int>(i));
    }
  }
  return seg;
}

/**
 * Fallback for trajectories with no retained step-token: the whole think
 * region counts as a single step ending at its last token. An empty region
 * stays empty (unscoreable).
 */
inline StepSegmentation fallback_segment(std::span<const int> think_tokens) {
  StepSegmentation seg;
  if (!think_tokens.empty()) {
    seg.step_end_indices.push_back(static_cast<int>(think_tokens.size()) - 1);
  }
  return seg;
}

/// segment() + fallback in one call: the segmentation actually used for scoring.
inline StepSegmentation segment_with_fallback(std::span<const int> think_tokens,
                                              int step_token_id) {
  StepSegmentation seg = segment(think_tokens, step_token_id);
  if (seg.n_steps() == 0) return fallback_segment(think_tokens);
  return seg;
}

}  // namespace rgm
