#pragma once

// Group-relative advantages and the clipped surrogate objective. There is no
// critic, no reference policy and no KL penalty anywhere in this module.
//
// Aggregation is seq-mean-token-mean: each sequence contributes the mean of
// its per-token clipped terms, and the objective is the mean over sequences.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "entlens/errors.hpp"
#include "entlens/policy.hpp"

namespace entlens {

inline constexpr double kDefaultEpsStd = 1e-6;
inline constexpr double kDefaultEpsClip = 0.2;

struct RolloutGroup {
  std::vector<double> rewards;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<std::vector<double>> new_logprobs;
  // Per-token policy contexts and sampled token ids. Only needed for the
  // analytic policy gradient; may be left empty otherwise.
  std::vector<std::vector<std::size_t>> contexts;
  std::vector<std::vector<std::size_t>> tokens;

  std::size_t size() const noexcept { return rewards.size(); }

  void validate() const {
    const std::size_t G = rewards.size();
    if (G < 2) throw InvalidInput("RolloutGroup: group size must be at least 2");
    if (old_logprobs.size() != G || new_logprobs.size() != G) {
      throw InvalidInput("RolloutGroup: log-probability tables do not match group size");
    }
    for (std::size_t i = 0; i < G; ++i) {
      if (old_logprobs[i].size() != new_logprobs[i].size()) {
        throw InvalidInput("RolloutGroup: sequence " + std::to_string(i) +
                           " has mismatched old/new lengths");
      }
      if (old_logprobs[i].empty()) {
        throw InvalidInput("RolloutGroup: sequence " + std::to_string(i) + " is empty");
      }
      for (std::size_t t = 0; t < old_logprobs[i].size(); ++t) {
        for (double lp : {old_logprobs[i][t], new_logprobs[i][t]}) {
          if (!std::isfinite(lp) || lp > 0.0) {
            throw InvalidInput("RolloutGroup: log-probability must be finite and <= 0");
          }
        }
      }
    }
    if (!contexts.empty() || !tokens.empty()) {
      if (contexts.size() != G || tokens.size() != G) {
        throw InvalidInput("RolloutGroup: context/token tables do not match group size");
      }
      for (std::size_t i = 0; i < G; ++i) {
        if (contexts[i].size() != old_logprobs[i].size() ||
            tokens[i].size() != old_logprobs[i].size()) {
          throw InvalidInput("RolloutGroup: sequence " + std::to_string(i) +
                             " context/token length mismatch");
        }
      }
    }
  }
};

struct AdvantageSet {
  std::vector<double> advantages;
  double mean_reward = 0.0;
  double std_reward = 0.0;
};

// A_i = (r_i - mean) / (population_std + eps_std).
inline AdvantageSet group_advantages(std::span<const double> rewards,
                                     double eps_std = kDefaultEpsStd) {
  const std::size_t G = rewards.size();
  if (G < 2) throw InvalidInput("group_advantages: need at least 2 rewards");
  if (eps_std < 0.0) throw InvalidInput("group_advantages: eps_std must be non-negative");
  AdvantageSet out;
  double mean = 0.0;
  for (double r : rewards) {
    if (!std::isfinite(r)) throw InvalidInput("group_advantages: non-finite reward");
    mean += r;
  }
  mean /= static_cast<double>(G);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(G);
  out.mean_reward = mean;
  out.std_reward = std::sqrt(var);
  out.advantages.resize(G, 0.0);
  const double denom = out.std_reward + eps_std;
  // Exactly equal rewards give all-zero advantages even when eps_std is 0.
  if (out.std_reward > 0.0) {
    for (std::size_t i = 0; i < G; ++i) out.advantages[i] = (rewards[i] - mean) / denom;
  }
  return out;
}

inline double clip_ratio(double ratio, double eps_clip) {
  return std::clamp(ratio, 1.0 - eps_clip, 1.0 + eps_clip);
}

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)
inline double clipped_term(double ratio, double advantage, double eps_clip = kDefaultEpsClip) {
  return std::min(ratio * advantage, clip_ratio(ratio, eps_clip) * advantage);
}

inline double grpo_objective(const RolloutGroup& group, const AdvantageSet& adv,
                             double eps_clip = kDefaultEpsClip) {
  group.validate();
  if (adv.advantages.size() != group.size()) {
    throw InvalidInput("grpo_objective: advantage count does not match group size");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < group.size(); ++i) {
    const auto& old_lp = group.old_logprobs[i];
    const auto& new_lp = group.new_logprobs[i];
    double seq = 0.0;
    for (std::size_t t = 0; t < old_lp.size(); ++t) {
      seq += clipped_term(std::exp(new_lp[t] - old_lp[t]), adv.advantages[i], eps_clip);
    }
    total += seq / static_cast<double>(old_lp.size());
  }
  return total / static_cast<double>(group.size());
}

// Analytic gradient of grpo_objective with respect to every logit of `policy`,
// where new_logprobs are log pi(token | context) at `temperature`. Tokens whose
// clipped branch is the active minimum contribute nothing.
inline LogitTable softmax_policy_gradient(const RolloutGroup& group, const AdvantageSet& adv,
                                          const ToyPolicy& policy, double temperature = 1.0,
                                          double eps_clip = kDefaultEpsClip) {
  group.validate();
  if (group.contexts.size() != group.size()) {
    throw InvalidInput("softmax_policy_gradient: group carries no contexts/tokens");
  }
  if (adv.advantages.size() != group.size()) {
    throw InvalidInput("softmax_policy_gradient: advantage count does not match group size");
  }
  const std::size_t V = policy.vocab_size();
  LogitTable grad(policy.context_count(), V, 0.0);
  const double G = static_cast<double>(group.size());

  // Softmax rows are reused across tokens; computed lazily per context.
  std::vector<std::vector<double>> row_cache(policy.context_count());

  for (std::size_t i = 0; i < group.size(); ++i) {
    const double A = adv.advantages[i];
    if (A == 0.0) continue;
    const auto& ctxs = group.contexts[i];
    const auto& toks = group.tokens[i];
    const double Ti = static_cast<double>(ctxs.size());
    for (std::size_t t = 0; t < ctxs.size(); ++t) {
      const std::size_t ctx = ctxs[t];
      const std::size_t tok = toks[t];
      if (ctx >= policy.context_count()) {
        throw InvalidInput("softmax_policy_gradient: context " + std::to_string(ctx) +
                           " out of range");
      }
      if (tok >= V) {
        throw InvalidInput("softmax_policy_gradient: token " + std::to_string(tok) +
                           " out of range");
      }
      const double ratio = std::exp(group.new_logprobs[i][t] - group.old_logprobs[i][t]);
      if (clip_ratio(ratio, eps_clip) * A < ratio * A) continue;  // clipped branch active
      auto& p = row_cache[ctx];
      if (p.empty()) {
        const ProbVector dist = policy.distribution(ctx, temperature);
        p.assign(dist.begin(), dist.end());
      }
      const double scale = A * ratio / (G * Ti * temperature);
      auto row = grad.row(ctx);
      for (std::size_t v = 0; v < V; ++v) {
        row[v] += scale * ((v == tok ? 1.0 : 0.0) - p[v]);
      }
    }
  }
  return grad;
}

}  // namespace entlens
