#pragma once

// Desk-scale training bed: a tabular softmax policy trained with GRPO under an
// intrinsic reward, logging token entropy traces at fixed checkpoints in the
// same JSONL schema external trainers produce.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "entlens/dist_core.hpp"
#include "entlens/errors.hpp"
#include "entlens/grpo.hpp"
#include "entlens/policy.hpp"
#include "entlens/rewards.hpp"
#include "entlens/seeding.hpp"
#include "entlens/trace_ingest.hpp"

namespace entlens {

struct ToyPrompt {
  std::string id;
  std::size_t start_token = 0;
  std::vector<std::size_t> target;  // preferred continuation; empty when absent
};

struct ToyTask {
  std::vector<ToyPrompt> prompts;
  std::size_t t_max = 64;

  bool has_targets() const {
    return !prompts.empty() && std::all_of(prompts.begin(), prompts.end(),
                                           [](const ToyPrompt& p) { return !p.target.empty(); });
  }

  void validate() const {
    if (prompts.empty()) throw InvalidInput("ToyTask: no prompts");
    if (t_max < 2) throw InvalidInput("ToyTask: t_max must be >= 2");
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      for (std::size_t j = i + 1; j < prompts.size(); ++j) {
        if (prompts[i].id == prompts[j].id) throw InvalidInput("ToyTask: duplicate prompt id");
      }
    }
  }
};

// Shape of the default synthetic problem.
struct ToySetup {
  std::size_t vocab = 32;
  std::size_t prompts = 8;
  std::size_t t_max = 64;
  std::size_t target_len = 3;
  ContextMode context_mode = ContextMode::Bigram;
  double init_scale = 1.0;  // std-dev of the initial non-EOS logits
  double eos_bias = 1.25;   // initial EOS logit in every context
};

struct TrainConfig {
  RewardKind reward_kind = RewardKind::Ent;
  std::size_t group_size = 16;
  double eps_clip = kDefaultEpsClip;
  double eps_std = kDefaultEpsStd;
  double learning_rate = 1e-2;
  double temperature = 0.6;
  std::size_t eval_every = 5;
  std::size_t eval_samples = 16;
  std::size_t max_steps = 200;
  std::uint64_t seed = 7;

  void validate() const {
    if (group_size < 2) throw InvalidInput("TrainConfig: group_size must be >= 2");
    if (!(eps_clip > 0.0 && eps_clip < 1.0)) throw InvalidInput("TrainConfig: eps_clip in (0,1)");
    if (!(eps_std > 0.0)) throw InvalidInput("TrainConfig: eps_std must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidInput("TrainConfig: learning_rate must be >= 0");
    }
    if (!(temperature > 0.0)) throw InvalidInput("TrainConfig: temperature must be positive");
    if (eval_every < 1) throw InvalidInput("TrainConfig: eval_every must be >= 1");
    if (eval_samples < 1) throw InvalidInput("TrainConfig: eval_samples must be >= 1");
  }
};

inline std::string token_name(std::size_t token, std::size_t vocab) {
  return token + 1 == vocab ? std::string("<eos>") : "tok" + std::to_string(token);
}

// ---------------------------------------------------------------------------
// Rollouts

struct Rollout {
  std::vector<std::size_t> tokens;
  std::vector<std::size_t> contexts;
  std::vector<ProbVector> dists;
  std::vector<double> logprobs;

  std::size_t length() const noexcept { return tokens.size(); }
  StepDistSequence stats() const { return StepDistSequence::from_distributions(dists); }
};

inline std::size_t sample_index(const ProbVector& p, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t v = 0; v < p.size(); ++v) {
    if (p[v] <= 0.0) continue;
    acc += p[v];
    last_positive = v;
    if (u < acc) return v;
  }
  return last_positive;  // rounding left u above the running sum
}

// Samples until EOS or t_max tokens.
inline Rollout rollout(const ToyPolicy& policy, std::size_t start_token, std::size_t t_max,
                       double temperature, Rng& rng) {
  if (t_max < 1) throw InvalidInput("rollout: t_max must be >= 1");
  Rollout r;
  std::size_t prev = start_token;
  for (std::size_t pos = 0; pos < t_max; ++pos) {
    const std::size_t ctx = policy.context_for(pos, prev);
    ProbVector dist = policy.distribution(ctx, temperature);
    const std::size_t tok = sample_index(dist, rng);
    r.tokens.push_back(tok);
    r.contexts.push_back(ctx);
    r.logprobs.push_back(std::log(dist[tok]));
    r.dists.push_back(std::move(dist));
    if (tok == policy.eos()) break;
    prev = tok;
  }
  return r;
}

inline Rollout rollout(const ToyPolicy& policy, std::size_t start_token, std::size_t t_max,
                       double temperature, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return rollout(policy, start_token, t_max, temperature, rng);
}

// log pi(tokens[t] | contexts[t]) under `policy`; used to re-score rollouts.
inline std::vector<double> sequence_logprobs(const ToyPolicy& policy,
                                             const std::vector<std::size_t>& contexts,
                                             const std::vector<std::size_t>& tokens,
                                             double temperature) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    out.push_back(std::log(policy.distribution(contexts[t], temperature)[tokens[t]]));
  }
  return out;
}

inline bool matches_target(const Rollout& r, const std::vector<std::size_t>& target) {
  if (target.empty() || r.tokens.size() < target.size()) return false;
  return std::equal(target.begin(), target.end(), r.tokens.begin());
}

// Fraction of target positions reproduced position-by-position.
inline double target_overlap(const Rollout& r, const std::vector<std::size_t>& target) {
  if (target.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < target.size() && i < r.tokens.size(); ++i) {
    if (r.tokens[i] == target[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(target.size());
}

// ---------------------------------------------------------------------------
// Problem construction

struct ToyProblem {
  ToyTask task;
  ToyPolicy initial_policy;
};

// Most likely non-EOS chain from `start`, `len` tokens long.
inline std::vector<std::size_t> greedy_chain(const ToyPolicy& policy, std::size_t start,
                                             std::size_t len) {
  std::vector<std::size_t> chain;
  std::size_t prev = start;
  for (std::size_t pos = 0; pos < len; ++pos) {
    const auto row = policy.logits().row(policy.context_for(pos, prev));
    std::size_t best = 0;
    for (std::size_t v = 1; v < policy.eos(); ++v) {
      if (row[v] > row[best]) best = v;
    }
    chain.push_back(best);
    prev = best;
  }
  return chain;
}

// Random initial logits, a shared EOS bias, and prompts whose targets are the
// initial policy's own greedy chains (the "latent" answer certainty can find).
inline ToyProblem make_toy_problem(const ToySetup& setup, std::uint64_t seed) {
  if (setup.vocab < 3) throw InvalidInput("ToySetup: vocab must be >= 3");
  if (setup.prompts < 1 || setup.prompts >= setup.vocab) {
    throw InvalidInput("ToySetup: prompts must be in [1, vocab - 1)");
  }
  ToyPolicy policy(setup.vocab, setup.context_mode, setup.t_max);
  Rng rng(derive_seed(seed, "init"));
  for (std::size_t c = 0; c < policy.context_count(); ++c) {
    auto row = policy.logits().row(c);
    for (std::size_t v = 0; v < setup.vocab; ++v) {
      row[v] = v == policy.eos() ? setup.eos_bias : setup.init_scale * rng.normal();
    }
  }
  ToyTask task;
  task.t_max = setup.t_max;
  for (std::size_t k = 0; k < setup.prompts; ++k) {
    ToyPrompt p;
    p.id = "p" + std::to_string(k);
    p.start_token = k;
    p.target = greedy_chain(policy, k, setup.target_len);
    task.prompts.push_back(std::move(p));
  }
  task.validate();
  return {std::move(task), std::move(policy)};
}

// ---------------------------------------------------------------------------
// Training

struct CheckpointSummary {
  long step = 0;
  double mean_entropy = 0.0;  // pooled over every generated step
  double mean_length = 0.0;
  double mean_reward = 0.0;   // configured reward on the evaluation responses
  double accuracy = 0.0;      // mean positional overlap with the prompt targets
  double match_rate = 0.0;    // fraction of responses starting with the full target
};

struct TrainResult {
  std::vector<TraceRecord> records;
  std::vector<CheckpointSummary> checkpoints;
  ToyPolicy final_policy;
  double mean_train_reward_first = 0.0;
  double mean_train_reward_last = 0.0;
  // Largest |Ent - T * AvgEnt| / max(1, |Ent|) over all training rollouts.
  double reward_identity_error = 0.0;

  std::vector<AccuracyPoint> accuracy_curve() const {
    std::vector<AccuracyPoint> out;
    for (const auto& c : checkpoints) out.push_back({c.step, c.accuracy});
    return out;
  }
};

namespace detail {

class AdamAscent {
 public:
  AdamAscent(std::size_t n, double lr) : lr_(lr), m_(n, 0.0), v_(n, 0.0) {}

  void step(std::span<double> params, std::span<const double> grad) {
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = kBeta1 * m_[i] + (1.0 - kBeta1) * grad[i];
      v_[i] = kBeta2 * v_[i] + (1.0 - kBeta2) * grad[i] * grad[i];
      const double mhat = m_[i] / bc1;
      const double vhat = v_[i] / bc2;
      params[i] += lr_ * mhat / (std::sqrt(vhat) + kEps);
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  double lr_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

enum class RewardSource { Intrinsic, TargetMatch };

inline CheckpointSummary evaluate(const ToyTask& task, const ToyPolicy& policy,
                                  const TrainConfig& cfg, RewardSource source, long step,
                                  std::vector<TraceRecord>& records) {
  // Same seed at every checkpoint so anchors stay comparable over training.
  Rng rng(derive_seed(cfg.seed, "eval"));
  CheckpointSummary s;
  s.step = step;
  double entropy_sum = 0.0;
  std::size_t step_count = 0;
  std::size_t responses = 0;
  for (const auto& prompt : task.prompts) {
    std::map<std::size_t, std::vector<double>> per_token;
    for (std::size_t k = 0; k < cfg.eval_samples; ++k) {
      const Rollout r = rollout(policy, prompt.start_token, task.t_max, cfg.temperature, rng);
      const StepDistSequence stats = r.stats();
      for (std::size_t t = 0; t < r.length(); ++t) {
        per_token[r.tokens[t]].push_back(stats.steps()[t].shannon);
        entropy_sum += stats.steps()[t].shannon;
      }
      step_count += r.length();
      s.mean_length += static_cast<double>(r.length());
      s.mean_reward += source == RewardSource::TargetMatch
                           ? (matches_target(r, prompt.target) ? 1.0 : 0.0)
                           : reward(cfg.reward_kind, stats, task.t_max);
      s.accuracy += target_overlap(r, prompt.target);
      s.match_rate += matches_target(r, prompt.target) ? 1.0 : 0.0;
      ++responses;
    }
    for (const auto& [tok, hs] : per_token) {
      double sum = 0.0;
      for (double h : hs) sum += h;
      records.push_back({step, prompt.id, token_name(tok, policy.vocab_size()),
                         sum / static_cast<double>(hs.size())});
    }
  }
  const double n = static_cast<double>(responses);
  s.mean_entropy = step_count ? entropy_sum / static_cast<double>(step_count) : 0.0;
  s.mean_length /= n;
  s.mean_reward /= n;
  s.accuracy /= n;
  s.match_rate /= n;
  return s;
}

inline TrainResult run_training(const ToyTask& task, const ToyPolicy& initial,
                                const TrainConfig& cfg, RewardSource source) {
  task.validate();
  cfg.validate();
  if (!initial.finite()) throw InvalidInput("train: initial policy has non-finite logits");
  if (source == RewardSource::TargetMatch && !task.has_targets()) {
    throw InvalidInput("supervised_baseline_train: task has no target structure");
  }

  TrainResult result;
  ToyPolicy policy = initial;
  AdamAscent optimizer(policy.logits().flat().size(), cfg.learning_rate);
  Rng rng(derive_seed(cfg.seed, "train"));

  for (std::size_t step = 0;; ++step) {
    if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
      result.checkpoints.push_back(
          evaluate(task, policy, cfg, source, static_cast<long>(step), result.records));
    }
    if (step == cfg.max_steps) break;

    LogitTable grad(policy.context_count(), policy.vocab_size(), 0.0);
    double reward_sum = 0.0;
    for (const auto& prompt : task.prompts) {
      RolloutGroup group;
      for (std::size_t g = 0; g < cfg.group_size; ++g) {
        Rollout r = rollout(policy, prompt.start_token, task.t_max, cfg.temperature, rng);
        const StepDistSequence stats = r.stats();
        double value = 0.0;
        if (source == RewardSource::TargetMatch) {
          value = matches_target(r, prompt.target) ? 1.0 : 0.0;
        } else {
          value = reward(cfg.reward_kind, stats, task.t_max);
          const double ent = reward(RewardKind::Ent, stats, task.t_max);
          const double avg = reward(RewardKind::AvgEnt, stats, task.t_max);
          const double err = std::abs(ent - static_cast<double>(stats.length()) * avg) /
                             std::max(1.0, std::abs(ent));
          result.reward_identity_error = std::max(result.reward_identity_error, err);
        }
        reward_sum += value;
        group.rewards.push_back(value);
        group.old_logprobs.push_back(r.logprobs);
        group.new_logprobs.push_back(std::move(r.logprobs));
        group.contexts.push_back(std::move(r.contexts));
        group.tokens.push_back(std::move(r.tokens));
      }
      const AdvantageSet adv = group_advantages(group.rewards, cfg.eps_std);
      const LogitTable g =
          softmax_policy_gradient(group, adv, policy, cfg.temperature, cfg.eps_clip);
      auto acc = grad.flat();
      auto add = g.flat();
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += add[i];
    }
    // Objective is the mean over prompts.
    const double inv = 1.0 / static_cast<double>(task.prompts.size());
    for (double& x : grad.flat()) x *= inv;
    optimizer.step(policy.logits().flat(), grad.flat());

    const double mean_reward =
        reward_sum / static_cast<double>(task.prompts.size() * cfg.group_size);
    if (step == 0) result.mean_train_reward_first = mean_reward;
    result.mean_train_reward_last = mean_reward;
  }
  result.final_policy = std::move(policy);
  return result;
}

}  // namespace detail

inline TrainResult train(const ToyTask& task, const ToyPolicy& initial, const TrainConfig& cfg) {
  return detail::run_training(task, initial, cfg, detail::RewardSource::Intrinsic);
}

// Supervised stand-in: reward 1 when a rollout starts with the prompt's target.
inline TrainResult supervised_baseline_train(const ToyTask& task, const ToyPolicy& initial,
                                             const TrainConfig& cfg) {
  return detail::run_training(task, initial, cfg, detail::RewardSource::TargetMatch);
}

}  // namespace entlens
