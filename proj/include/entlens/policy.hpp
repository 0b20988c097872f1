#pragma once

// Tabular softmax policy: one row of logits per context. In bigram mode the
// context is the previously emitted token (or the prompt's start token); in
// positional mode it is the generation position.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entlens/dist_core.hpp"
#include "entlens/errors.hpp"

namespace entlens {

enum class ContextMode { Bigram, Positional };

inline std::string_view to_string(ContextMode m) {
  return m == ContextMode::Bigram ? "bigram" : "positional";
}

inline std::optional<ContextMode> parse_context_mode(std::string_view s) {
  if (s == "bigram") return ContextMode::Bigram;
  if (s == "positional") return ContextMode::Positional;
  return std::nullopt;
}

// Dense row-major (context, token) table of doubles.
class LogitTable {
 public:
  LogitTable() = default;
  LogitTable(std::size_t contexts, std::size_t vocab, double fill = 0.0)
      : contexts_(contexts), vocab_(vocab), data_(contexts * vocab, fill) {}

  std::size_t contexts() const noexcept { return contexts_; }
  std::size_t vocab() const noexcept { return vocab_; }

  double& at(std::size_t ctx, std::size_t tok) { return data_[ctx * vocab_ + tok]; }
  double at(std::size_t ctx, std::size_t tok) const { return data_[ctx * vocab_ + tok]; }

  std::span<double> row(std::size_t ctx) { return {data_.data() + ctx * vocab_, vocab_}; }
  std::span<const double> row(std::size_t ctx) const {
    return {data_.data() + ctx * vocab_, vocab_};
  }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }

  friend bool operator==(const LogitTable&, const LogitTable&) = default;

 private:
  std::size_t contexts_ = 0;
  std::size_t vocab_ = 0;
  std::vector<double> data_;
};

class ToyPolicy {
 public:
  ToyPolicy() = default;

  // Context count is vocab for bigram mode, t_max for positional mode.
  ToyPolicy(std::size_t vocab, ContextMode mode, std::size_t t_max)
      : mode_(mode), logits_(mode == ContextMode::Bigram ? vocab : t_max, vocab) {
    if (vocab < 2) throw InvalidInput("ToyPolicy: vocabulary needs at least 2 tokens");
    if (mode == ContextMode::Positional && t_max < 1) {
      throw InvalidInput("ToyPolicy: positional mode needs t_max >= 1");
    }
  }

  std::size_t vocab_size() const noexcept { return logits_.vocab(); }
  std::size_t context_count() const noexcept { return logits_.contexts(); }
  std::size_t eos() const noexcept { return logits_.vocab() - 1; }
  ContextMode mode() const noexcept { return mode_; }

  LogitTable& logits() noexcept { return logits_; }
  const LogitTable& logits() const noexcept { return logits_; }

  // Context for generating position `pos` given the previous token.
  std::size_t context_for(std::size_t pos, std::size_t previous_token) const {
    const std::size_t ctx = mode_ == ContextMode::Bigram ? previous_token : pos;
    if (ctx >= context_count()) {
      throw InvalidInput("ToyPolicy: context " + std::to_string(ctx) + " out of range");
    }
    return ctx;
  }

  ProbVector distribution(std::size_t ctx, double temperature) const {
    if (ctx >= context_count()) {
      throw InvalidInput("ToyPolicy: context " + std::to_string(ctx) + " out of range");
    }
    return from_logits(logits_.row(ctx), temperature);
  }

  bool finite() const {
    for (double z : logits_.flat()) {
      if (!std::isfinite(z)) return false;
    }
    return true;
  }

  friend bool operator==(const ToyPolicy&, const ToyPolicy&) = default;

 private:
  ContextMode mode_ = ContextMode::Bigram;
  LogitTable logits_;
};

}  // namespace entlens
