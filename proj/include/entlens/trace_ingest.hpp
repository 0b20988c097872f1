#pragma once

// Token-level entropy trajectories from checkpoint logs.
//
// Records are keyed by (prompt_id, token string). Each anchor becomes a series
// of (step, entropy) points, truncated at the effective convergence point,
// filtered to anchors with at least two points, and placed on a normalized
// time axis t_hat = step / convergence_step.

#include <algorithm>
#include <cmath>
#include <compare>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "entlens/errors.hpp"

namespace entlens {

struct TraceRecord {
  long step = 0;
  std::string prompt_id;
  std::string token;
  double entropy = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Anchor {
  std::string prompt_id;
  std::string token;

  auto operator<=>(const Anchor&) const = default;
  bool operator==(const Anchor&) const = default;
};

inline std::string to_string(const Anchor& a) { return a.prompt_id + "/" + a.token; }

struct RawPoint {
  long step = 0;
  double entropy = 0.0;
  friend bool operator==(const RawPoint&, const RawPoint&) = default;
};

struct AnchorSeries {
  std::vector<RawPoint> points;  // sorted by step, one per step
  std::size_t occurrences = 0;   // records folded into this anchor
  friend bool operator==(const AnchorSeries&, const AnchorSeries&) = default;
};

using RawTrajectories = std::map<Anchor, AnchorSeries>;

struct LineError {
  std::size_t line = 0;
  std::string message;
};

struct ParsedTrace {
  std::vector<TraceRecord> records;
  std::vector<LineError> errors;
};

// ---------------------------------------------------------------------------
// JSONL: {"step": int, "prompt_id": str, "token": str, "entropy": float}

inline nlohmann::ordered_json to_json(const TraceRecord& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["prompt_id"] = r.prompt_id;
  j["token"] = r.token;
  j["entropy"] = r.entropy;
  return j;
}

inline TraceRecord parse_trace_record(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InvalidInput("record is not a JSON object");
  for (const char* key : {"step", "prompt_id", "token", "entropy"}) {
    if (!j.contains(key)) throw InvalidInput(std::string("missing field '") + key + "'");
  }
  if (!j["step"].is_number_integer()) throw InvalidInput("'step' must be an integer");
  if (!j["prompt_id"].is_string()) throw InvalidInput("'prompt_id' must be a string");
  if (!j["token"].is_string()) throw InvalidInput("'token' must be a string");
  if (!j["entropy"].is_number()) throw InvalidInput("'entropy' must be a number");

  TraceRecord r;
  r.step = j["step"].get<long>();
  r.prompt_id = j["prompt_id"].get<std::string>();
  r.token = j["token"].get<std::string>();
  r.entropy = j["entropy"].get<double>();
  if (r.step < 0) throw InvalidInput("'step' must be >= 0");
  if (r.token.empty()) throw InvalidInput("'token' must be non-empty");
  if (!std::isfinite(r.entropy) || r.entropy < 0.0) {
    throw InvalidInput("'entropy' must be finite and >= 0");
  }
  return r;
}

// Malformed lines are reported with their 1-based line number and skipped.
inline ParsedTrace read_trace_jsonl(std::istream& in) {
  ParsedTrace out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.records.push_back(parse_trace_record(line));
    } catch (const InvalidInput& e) {
      out.errors.push_back({line_no, e.what()});
    }
  }
  return out;
}

struct AccuracyPoint {
  long step = 0;
  double accuracy = 0.0;
  friend bool operator==(const AccuracyPoint&, const AccuracyPoint&) = default;
};

inline nlohmann::ordered_json to_json(const AccuracyPoint& a) {
  nlohmann::ordered_json j;
  j["step"] = a.step;
  j["accuracy"] = a.accuracy;
  return j;
}

struct ParsedAccuracy {
  std::vector<AccuracyPoint> curve;
  std::vector<LineError> errors;
};

inline ParsedAccuracy read_accuracy_jsonl(std::istream& in) {
  ParsedAccuracy out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (!j.is_object() || !j.contains("step") || !j.contains("accuracy") ||
          !j["step"].is_number_integer() || !j["accuracy"].is_number()) {
        throw InvalidInput("expected {\"step\": int, \"accuracy\": float}");
      }
      out.curve.push_back({j["step"].get<long>(), j["accuracy"].get<double>()});
    } catch (const nlohmann::json::exception& e) {
      out.errors.push_back({line_no, e.what()});
    } catch (const InvalidInput& e) {
      out.errors.push_back({line_no, e.what()});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

// Groups records by anchor; repeated (anchor, step) entries collapse to their
// arithmetic mean. The result does not depend on record order.
inline RawTrajectories build_trajectories(std::span<const TraceRecord> records) {
  std::map<Anchor, std::map<long, std::vector<double>>> buckets;
  for (const auto& r : records) {
    buckets[Anchor{r.prompt_id, r.token}][r.step].push_back(r.entropy);
  }
  RawTrajectories out;
  for (auto& [anchor, by_step] : buckets) {
    AnchorSeries series;
    for (auto& [step, values] : by_step) {
      std::sort(values.begin(), values.end());
      double sum = 0.0;
      for (double v : values) sum += v;
      series.points.push_back({step, sum / static_cast<double>(values.size())});
      series.occurrences += values.size();
    }
    out.emplace(anchor, std::move(series));
  }
  return out;
}

enum class ConvergenceMode { PeakAccuracy, PlateauOnset, Collapse };

inline std::string_view to_string(ConvergenceMode m) {
  switch (m) {
    case ConvergenceMode::PeakAccuracy: return "peak";
    case ConvergenceMode::PlateauOnset: return "plateau";
    case ConvergenceMode::Collapse: return "collapse";
  }
  return "?";
}

inline std::optional<ConvergenceMode> parse_convergence_mode(std::string_view s) {
  if (s == "peak" || s == "peak_accuracy") return ConvergenceMode::PeakAccuracy;
  if (s == "plateau" || s == "plateau_onset") return ConvergenceMode::PlateauOnset;
  if (s == "collapse") return ConvergenceMode::Collapse;
  return std::nullopt;
}

struct ConvergenceSpec {
  ConvergenceMode mode = ConvergenceMode::PeakAccuracy;
  std::vector<AccuracyPoint> accuracy_curve;
  std::optional<long> explicit_step;
  std::size_t plateau_window = 3;
  double plateau_delta = 0.02;
};

inline long effective_convergence_point(const ConvergenceSpec& spec) {
  if (spec.explicit_step) return *spec.explicit_step;
  if (spec.accuracy_curve.empty()) {
    throw InvalidInput("effective_convergence_point: empty accuracy curve");
  }
  auto curve = spec.accuracy_curve;
  std::stable_sort(curve.begin(), curve.end(),
                   [](const AccuracyPoint& a, const AccuracyPoint& b) { return a.step < b.step; });

  switch (spec.mode) {
    case ConvergenceMode::PeakAccuracy: {
      auto best = curve.begin();
      for (auto it = curve.begin(); it != curve.end(); ++it) {
        if (it->accuracy > best->accuracy) best = it;
      }
      return best->step;
    }
    case ConvergenceMode::Collapse: {
      // First zero after which accuracy never rises above zero again.
      std::optional<long> candidate;
      for (const auto& p : curve) {
        if (p.accuracy > 0.0) {
          candidate.reset();
        } else if (!candidate) {
          candidate = p.step;
        }
      }
      if (!candidate) throw NotFound("effective_convergence_point: accuracy never collapses to 0");
      return *candidate;
    }
    case ConvergenceMode::PlateauOnset: {
      if (spec.plateau_window == 0) throw InvalidInput("plateau window must be >= 1");
      for (std::size_t i = 0; i + 1 < curve.size(); ++i) {
        const std::size_t end = std::min(curve.size(), i + 1 + spec.plateau_window);
        double ahead = -INFINITY;
        for (std::size_t j = i + 1; j < end; ++j) ahead = std::max(ahead, curve[j].accuracy);
        if (ahead - curve[i].accuracy <= spec.plateau_delta) return curve[i].step;
      }
      // Still rising at the end of the run: the plateau begins at the last checkpoint.
      return curve.back().step;
    }
  }
  throw InvalidInput("effective_convergence_point: unknown mode");
}

struct TrajectoryPoint {
  double t_hat = 0.0;
  double entropy = 0.0;
  long step = 0;
  friend bool operator==(const TrajectoryPoint&, const TrajectoryPoint&) = default;
};

struct EntropyTrajectory {
  Anchor anchor;
  std::vector<TrajectoryPoint> points;
  std::size_t occurrences = 0;

  std::vector<double> values() const {
    std::vector<double> v;
    v.reserve(points.size());
    for (const auto& p : points) v.push_back(p.entropy);
    return v;
  }

  friend bool operator==(const EntropyTrajectory&, const EntropyTrajectory&) = default;
};

inline std::vector<EntropyTrajectory> filter_and_normalize(const RawTrajectories& raw,
                                                           long convergence_step) {
  if (convergence_step <= 0) {
    throw InvalidInput("filter_and_normalize: convergence step must be positive");
  }
  const double denom = static_cast<double>(convergence_step);
  std::vector<EntropyTrajectory> out;
  for (const auto& [anchor, series] : raw) {
    EntropyTrajectory traj;
    traj.anchor = anchor;
    traj.occurrences = series.occurrences;
    for (const auto& p : series.points) {
      if (p.step <= 0 || p.step > convergence_step) continue;  // keeps t_hat in (0, 1]
      traj.points.push_back({static_cast<double>(p.step) / denom, p.entropy, p.step});
    }
    if (traj.points.size() < 2) continue;
    out.push_back(std::move(traj));
  }
  return out;
}

// Re-running the filter on already-normalized trajectories must be a no-op.
inline std::vector<EntropyTrajectory> refilter(const std::vector<EntropyTrajectory>& trajs,
                                               long convergence_step) {
  RawTrajectories raw;
  for (const auto& t : trajs) {
    AnchorSeries s;
    s.occurrences = t.occurrences;
    for (const auto& p : t.points) s.points.push_back({p.step, p.entropy});
    raw.emplace(t.anchor, std::move(s));
  }
  return filter_and_normalize(raw, convergence_step);
}

}  // namespace entlens
