#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace entlens {

// Precondition violated by caller-supplied data.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A lookup that is well-formed but has no answer (e.g. no collapse step).
class NotFound : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A checkpoint lacks records for one or more semantic clusters.
class MissingCluster : public std::runtime_error {
 public:
  MissingCluster(long step, std::vector<int> clusters)
      : std::runtime_error(describe(step, clusters)),
        step_(step),
        clusters_(std::move(clusters)) {}

  long step() const noexcept { return step_; }
  const std::vector<int>& clusters() const noexcept { return clusters_; }

 private:
  static std::string describe(long step, const std::vector<int>& clusters) {
    std::string msg = "no records for cluster(s)";
    for (int c : clusters) msg += " " + std::to_string(c);
    msg += " at step " + std::to_string(step);
    return msg;
  }

  long step_;
  std::vector<int> clusters_;
};

}  // namespace entlens
