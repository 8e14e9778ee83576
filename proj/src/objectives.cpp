#include "grt/objectives.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace grt {

AnswerSet AnswerSet::from(std::vector<std::string> provided) {
  if (provided.empty()) {
    throw std::runtime_error("answer set: need at least one answer");
  }
  if (provided.size() > 10) {
    throw std::runtime_error("answer set: more than 10 answers given");
  }
  AnswerSet set;
  set.padded = provided.size() < 10;
  set.answers = std::move(provided);
  for (std::size_t i = 0; set.answers.size() < 10; ++i) {
    set.answers.push_back(set.answers[i % set.answers.size()]);
  }
  return set;
}

Tensor bce_multi_token(Tape& tape, const Tensor& predictions,
                       const TokenTargets& targets) {
  const Shape& shape = predictions.shape();
  if (shape.size() != 2 || shape[0] != targets.n_steps() ||
      shape[1] != targets.n_candidates) {
    throw std::invalid_argument(
        "bce_multi_token: predictions " + shape_to_string(shape) +
        " do not match targets (" + std::to_string(targets.n_steps()) + "," +
        std::to_string(targets.n_candidates) + ")");
  }
  std::vector<double> flat;
  flat.reserve(targets.n_steps() * targets.n_candidates);
  for (const auto& step : targets.steps) {
    flat.insert(flat.end(), step.begin(), step.end());
  }
  Tensor bce = tape.binary_cross_entropy(predictions, flat);
  return tape.scale(tape.sum(bce), 1.0 / static_cast<double>(flat.size()));
}

std::string normalize_answer(const std::string& answer) {
  std::string lowered;
  lowered.reserve(answer.size());
  for (char c : answer) {
    lowered.push_back(static_cast<char>(
        std::tolower(static_cast<unsigned char>(c))));
  }
  // collapse whitespace runs
  std::string collapsed;
  bool in_space = true;  // also trims leading whitespace
  for (char c : lowered) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!in_space) collapsed.push_back(' ');
      in_space = true;
    } else {
      collapsed.push_back(c);
      in_space = false;
    }
  }
  while (!collapsed.empty() && collapsed.back() == ' ') collapsed.pop_back();
  // strip surrounding punctuation
  std::size_t begin = 0, end = collapsed.size();
  while (begin < end &&
         std::ispunct(static_cast<unsigned char>(collapsed[begin]))) {
    ++begin;
  }
  while (end > begin &&
         std::ispunct(static_cast<unsigned char>(collapsed[end - 1]))) {
    --end;
  }
  std::string stripped = collapsed.substr(begin, end - begin);
  // punctuation removal can expose whitespace again
  while (!stripped.empty() && stripped.front() == ' ') stripped.erase(0, 1);
  while (!stripped.empty() && stripped.back() == ' ') stripped.pop_back();
  return stripped;
}

double vqa_accuracy(const std::string& answer, const AnswerSet& humans) {
  const std::string a = normalize_answer(answer);
  std::size_t matches = 0;
  for (const std::string& human : humans.answers) {
    if (normalize_answer(human) == a) ++matches;
  }
  // Averaging over the ten leave-one-out subsets in closed form: excluding a
  // matching answer leaves matches-1, excluding any other leaves matches.
  const double k = static_cast<double>(matches);
  const double when_excluded = matches == 0 ? 0.0 : std::min((k - 1.0) / 3.0, 1.0);
  const double when_kept = std::min(k / 3.0, 1.0);
  return (k * when_excluded + (10.0 - k) * when_kept) / 10.0;
}

std::optional<TokenTargets> build_targets(
    const std::vector<std::string>& gt_tokens, const AnswerSpace& space,
    std::string* warning) {
  space.validate();
  TokenTargets targets;
  targets.n_candidates = space.n_candidates();
  for (const std::string& token : gt_tokens) {
    std::vector<double> step(targets.n_candidates, 0.0);
    bool found = false;
    if (auto idx = space.vocab->find(token)) {
      step[*idx] = 1.0;
      found = true;
    }
    for (std::size_t p = 0; p < space.ocr_tokens.size(); ++p) {
      if (space.ocr_tokens[p] == token) {
        step[space.vocab->size() + p] = 1.0;
        found = true;
      }
    }
    if (!found) {
      if (warning) *warning = "token not representable: " + token;
      return std::nullopt;
    }
    targets.steps.push_back(std::move(step));
  }
  // final step: end-of-answer
  std::vector<double> eos(targets.n_candidates, 0.0);
  eos[kEosIndex] = 1.0;
  targets.steps.push_back(std::move(eos));
  return targets;
}

}  // namespace grt
