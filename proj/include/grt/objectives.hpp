#pragma once

#include <optional>
#include <string>
#include <vector>

#include "grt/m4c_lite.hpp"
#include "grt/tensor.hpp"

namespace grt {

// The ten human answers of one question. Fewer than ten provided answers are
// padded by repetition and flagged.
struct AnswerSet {
  std::vector<std::string> answers;
  bool padded = false;

  static AnswerSet from(std::vector<std::string> provided);
};

// Per-step binary targets over the candidate space (vocab then OCR
// positions). A step may carry several positives when the token exists in
// the vocabulary and as OCR copies.
struct TokenTargets {
  std::size_t n_candidates = 0;
  std::vector<std::vector<double>> steps;

  std::size_t n_steps() const { return steps.size(); }
};

// Multi-token sigmoid loss: mean binary cross-entropy over the candidate
// vector of each step, averaged over the per-example steps. predictions is
// [n_steps, n_candidates] of sigmoid activations.
Tensor bce_multi_token(Tape& tape, const Tensor& predictions,
                       const TokenTargets& targets);

// Lowercases, collapses internal whitespace, trims, and strips surrounding
// punctuation.
std::string normalize_answer(const std::string& answer);

// min(matches / 3, 1) averaged over the ten leave-one-out 9-answer subsets.
double vqa_accuracy(const std::string& answer, const AnswerSet& humans);

// Builds per-step targets for the ground-truth tokens plus the final
// end-of-answer step. Returns nothing when some token has no candidate; the
// caller is expected to skip the example (warning receives the token).
std::optional<TokenTargets> build_targets(
    const std::vector<std::string>& gt_tokens, const AnswerSpace& space,
    std::string* warning = nullptr);

}  // namespace grt
