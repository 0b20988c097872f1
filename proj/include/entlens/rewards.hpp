#pragma once

// Sequence-level intrinsic rewards computed from per-step uncertainty only.
//
//   Ent     -sum_t H(p_t)
//   AvgEnt  -(1/T) sum_t H(p_t)
//   LP      -T / t_max
//   CH2     sum_t ln(sum_v p_t(v)^2)
//   CP      sum_t sum_v p_t(v)^2

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "entlens/dist_core.hpp"
#include "entlens/errors.hpp"

namespace entlens {

enum class RewardKind { Ent, AvgEnt, LP, CH2, CP };

inline constexpr std::array<RewardKind, 5> kAllRewardKinds = {
    RewardKind::Ent, RewardKind::AvgEnt, RewardKind::LP, RewardKind::CH2, RewardKind::CP};

inline constexpr std::string_view to_string(RewardKind kind) {
  switch (kind) {
    case RewardKind::Ent: return "ent";
    case RewardKind::AvgEnt: return "avgent";
    case RewardKind::LP: return "lp";
    case RewardKind::CH2: return "ch2";
    case RewardKind::CP: return "cp";
  }
  return "?";
}

inline std::optional<RewardKind> parse_reward_kind(std::string_view text) {
  for (RewardKind k : kAllRewardKinds) {
    if (to_string(k) == text) return k;
  }
  return std::nullopt;
}

inline std::string reward_kind_choices() {
  std::string out;
  for (RewardKind k : kAllRewardKinds) {
    if (!out.empty()) out += ", ";
    out += to_string(k);
  }
  return out;
}

class StepDistSequence {
 public:
  StepDistSequence() = default;

  explicit StepDistSequence(std::vector<StepStats> steps) : steps_(std::move(steps)) {
    for (std::size_t t = 0; t < steps_.size(); ++t) {
      if (!steps_[t].plausible()) {
        throw InvalidInput("StepDistSequence: invalid statistics at step " + std::to_string(t));
      }
    }
  }

  static StepDistSequence from_distributions(const std::vector<ProbVector>& dists) {
    std::vector<StepStats> steps;
    steps.reserve(dists.size());
    for (const auto& p : dists) steps.push_back(step_stats(p));
    return StepDistSequence(std::move(steps));
  }

  void push_back(const StepStats& s) {
    if (!s.plausible()) throw InvalidInput("StepDistSequence: invalid statistics");
    steps_.push_back(s);
  }

  std::size_t length() const noexcept { return steps_.size(); }
  bool empty() const noexcept { return steps_.empty(); }
  const std::vector<StepStats>& steps() const noexcept { return steps_; }

 private:
  std::vector<StepStats> steps_;
};

inline double reward(RewardKind kind, const StepDistSequence& seq, std::size_t t_max) {
  if (seq.empty()) throw InvalidInput("reward: empty step sequence");
  const std::size_t T = seq.length();
  if (t_max < T) {
    throw InvalidInput("reward: t_max " + std::to_string(t_max) + " is below sequence length " +
                       std::to_string(T));
  }
  double acc = 0.0;
  switch (kind) {
    case RewardKind::Ent:
      for (const auto& s : seq.steps()) acc -= s.shannon;
      return acc;
    case RewardKind::AvgEnt:
      for (const auto& s : seq.steps()) acc += s.shannon;
      return -acc / static_cast<double>(T);
    case RewardKind::LP:
      return -static_cast<double>(T) / static_cast<double>(t_max);
    case RewardKind::CH2:
      for (const auto& s : seq.steps()) acc += std::log(std::min(s.collision, 1.0));
      return acc;
    case RewardKind::CP:
      for (const auto& s : seq.steps()) acc += s.collision;
      return acc;
  }
  throw InvalidInput("reward: unknown kind");
}

}  // namespace entlens
