#pragma once

// Categorical distributions and the per-step uncertainty statistics
// (Shannon entropy in nats, collision mass) every reward is built from.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "entlens/errors.hpp"

namespace entlens {

inline constexpr double kProbSumTolerance = 1e-9;
// Probabilities at or below this are dropped from p*ln(p) instead of clamped up.
inline constexpr double kLogFloor = 1e-300;

class ProbVector {
 public:
  ProbVector() = default;

  // Validates: non-empty, finite, non-negative, sums to 1 within kProbSumTolerance.
  explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.empty()) throw InvalidInput("ProbVector: empty distribution");
    double sum = 0.0;
    for (std::size_t i = 0; i < probs_.size(); ++i) {
      const double p = probs_[i];
      if (!std::isfinite(p) || p < 0.0) {
        throw InvalidInput("ProbVector: entry " + std::to_string(i) +
                           " is negative or non-finite");
      }
      sum += p;
    }
    if (std::abs(sum - 1.0) > kProbSumTolerance) {
      throw InvalidInput("ProbVector: entries sum to " + std::to_string(sum));
    }
  }

  std::size_t size() const noexcept { return probs_.size(); }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::span<const double> values() const noexcept { return probs_; }
  auto begin() const noexcept { return probs_.begin(); }
  auto end() const noexcept { return probs_.end(); }

  friend bool operator==(const ProbVector&, const ProbVector&) = default;

 private:
  std::vector<double> probs_;
};

struct StepStats {
  double shannon = 0.0;    // nats
  double collision = 1.0;  // sum of p^2

  // Structural checks that do not need the vocabulary size.
  bool plausible() const noexcept {
    return std::isfinite(shannon) && std::isfinite(collision) && shannon >= 0.0 &&
           collision > 0.0 && collision <= 1.0 + kProbSumTolerance;
  }

  friend bool operator==(const StepStats&, const StepStats&) = default;
};

// probs[v] proportional to exp(logits[v] / temperature).
inline ProbVector from_logits(std::span<const double> logits, double temperature = 1.0) {
  if (logits.empty()) throw InvalidInput("from_logits: empty logits");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw InvalidInput("from_logits: temperature must be positive and finite");
  }
  double hi = -INFINITY;
  for (double z : logits) {
    if (!std::isfinite(z)) throw InvalidInput("from_logits: non-finite logit");
    hi = std::max(hi, z);
  }
  std::vector<double> probs(logits.size());
  double total = 0.0;
  for (std::size_t v = 0; v < logits.size(); ++v) {
    probs[v] = std::exp((logits[v] - hi) / temperature);
    total += probs[v];
  }
  for (double& p : probs) p /= total;
  return ProbVector(std::move(probs));
}

inline double shannon_entropy(const ProbVector& p) {
  double h = 0.0;
  for (double x : p) {
    if (x > kLogFloor) h -= x * std::log(x);
  }
  // Rounding can leave -0.0 or a few ulps below zero for one-hot inputs.
  return std::max(h, 0.0);
}

inline double collision_mass(const ProbVector& p) {
  double s = 0.0;
  for (double x : p) s += x * x;
  return s;
}

inline StepStats step_stats(const ProbVector& p) {
  return StepStats{shannon_entropy(p), collision_mass(p)};
}

}  // namespace entlens
