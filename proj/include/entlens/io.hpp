#pragma once
// JSON/CSV artifacts exchanged between the pipeline stages.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlens/errors.hpp"
#include "entlens/phase_geom.hpp"
#include "entlens/toy_lab.hpp"
#include "entlens/trace_ingest.hpp"
#include "entlens/ts_cluster.hpp"

#ifndef ENTLENS_VERSION
#define ENTLENS_VERSION "0.0.0"
#endif

namespace entlens::io {

using ojson = nlohmann::ordered_json;

inline constexpr const char* kToolName = "entlens";
inline constexpr const char* kVersion = ENTLENS_VERSION;

// ---------------------------------------------------------------------------
// Files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_json(const std::filesystem::path& path, const ojson& j) {
  write_text(path, j.dump(2) + "\n");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
}

// Header shared by every artifact: tool, version and the resolved config.
inline ojson artifact_header(const char* kind, const ojson& config) {
  ojson j;
  j["tool"] = kToolName;
  j["version"] = kVersion;
  j["artifact"] = kind;
  j["config"] = config;
  return j;
}

inline void expect_artifact(const nlohmann::json& j, const char* kind,
                            const std::filesystem::path& path) {
  if (!j.is_object() || j.value("artifact", std::string()) != kind) {
    throw InvalidInput(path.string() + ": not a " + std::string(kind) + " artifact");
  }
}

// ---------------------------------------------------------------------------
// Traces

inline std::string to_jsonl(const std::vector<TraceRecord>& records) {
  std::string out;
  for (const auto& r : records) out += to_json(r).dump() + "\n";
  return out;
}

inline std::string to_jsonl(const std::vector<AccuracyPoint>& curve) {
  std::string out;
  for (const auto& a : curve) out += to_json(a).dump() + "\n";
  return out;
}

inline ParsedTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_trace_jsonl(in);
}

inline ParsedAccuracy load_accuracy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_accuracy_jsonl(in);
}

inline ojson to_json(const CheckpointSummary& c) {
  ojson j;
  j["step"] = c.step;
  j["mean_entropy"] = c.mean_entropy;
  j["mean_length"] = c.mean_length;
  j["mean_reward"] = c.mean_reward;
  j["accuracy"] = c.accuracy;
  j["match_rate"] = c.match_rate;
  return j;
}

inline ojson run_summary(const TrainResult& r, const ojson& config) {
  ojson j = artifact_header("run_summary", config);
  ojson cps = ojson::array();
  for (const auto& c : r.checkpoints) cps.push_back(to_json(c));
  j["checkpoints"] = cps;
  if (!r.checkpoints.empty()) {
    j["initial_mean_entropy"] = r.checkpoints.front().mean_entropy;
    j["final_mean_entropy"] = r.checkpoints.back().mean_entropy;
    j["initial_mean_length"] = r.checkpoints.front().mean_length;
    j["final_mean_length"] = r.checkpoints.back().mean_length;
  }
  j["mean_train_reward_first"] = r.mean_train_reward_first;
  j["mean_train_reward_last"] = r.mean_train_reward_last;
  j["reward_identity_error"] = r.reward_identity_error;
  j["record_count"] = r.records.size();
  return j;
}

// ---------------------------------------------------------------------------
// Trajectories

struct TrajectorySet {
  long convergence_step = 0;
  std::string convergence_source;  // mode name or "explicit"
  std::string method;
  std::size_t line_errors = 0;
  std::vector<EntropyTrajectory> trajectories;
};

inline ojson to_json(const TrajectorySet& s, const ojson& config) {
  ojson j = artifact_header("trajectories", config);
  j["method"] = s.method;
  j["convergence_step"] = s.convergence_step;
  j["convergence_source"] = s.convergence_source;
  j["line_errors"] = s.line_errors;
  ojson arr = ojson::array();
  for (const auto& t : s.trajectories) {
    ojson tj;
    tj["prompt_id"] = t.anchor.prompt_id;
    tj["token"] = t.anchor.token;
    tj["occurrences"] = t.occurrences;
    ojson pts = ojson::array();
    for (const auto& p : t.points) pts.push_back({{"step", p.step}, {"t_hat", p.t_hat}, {"entropy", p.entropy}});
    tj["points"] = pts;
    arr.push_back(tj);
  }
  j["trajectories"] = arr;
  return j;
}

inline TrajectorySet trajectories_from_json(const nlohmann::json& j,
                                            const std::filesystem::path& path) {
  expect_artifact(j, "trajectories", path);
  TrajectorySet s;
  try {
    s.method = j.at("method").get<std::string>();
    s.convergence_step = j.at("convergence_step").get<long>();
    s.convergence_source = j.at("convergence_source").get<std::string>();
    s.line_errors = j.at("line_errors").get<std::size_t>();
    for (const auto& tj : j.at("trajectories")) {
      EntropyTrajectory t;
      t.anchor = {tj.at("prompt_id").get<std::string>(), tj.at("token").get<std::string>()};
      t.occurrences = tj.at("occurrences").get<std::size_t>();
      for (const auto& pj : tj.at("points")) {
        t.points.push_back({pj.at("t_hat").get<double>(), pj.at("entropy").get<double>(),
                            pj.at("step").get<long>()});
      }
      s.trajectories.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return s;
}

// ---------------------------------------------------------------------------
// Cluster model

struct ModelArtifact {
  ClusterModel model;
  std::string method;
  long convergence_step = 0;
};

inline ojson to_json(const ClusterModel& m, const std::vector<EntropyTrajectory>& trajs,
                     const std::string& method, long convergence_step, double core_fraction,
                     std::size_t top_limit, const ojson& config) {
  ojson j = artifact_header("model", config);
  j["method"] = method;
  j["convergence_step"] = convergence_step;
  j["k"] = m.k;
  j["inertia"] = m.inertia;
  j["iterations"] = m.iterations;
  j["reseeds"] = m.reseeds;
  j["inertia_history"] = m.inertia_history;

  std::vector<std::string> roles(m.k, "");
  bool tie = false;
  if (m.k == 3) {
    const auto lab = order_clusters(m);
    tie = lab.tie;
    for (std::size_t c = 0; c < 3; ++c) roles[c] = std::string(to_string(lab.role_of_cluster[c]));
  }
  j["label_tie"] = tie;
  const auto core = core_samples(m, trajs, core_fraction);
  ojson clusters = ojson::array();
  for (std::size_t c = 0; c < m.k; ++c) {
    ojson cj;
    cj["index"] = c;
    cj["label"] = roles[c];
    cj["size"] = m.cluster_size(c);
    cj["centroid_mean"] = m.centroid_mean(c);
    cj["centroid"] = m.centroids[c];
    ojson tops = ojson::array();
    for (const auto& t : top_tokens(core.at(static_cast<int>(c)), top_limit)) {
      tops.push_back({{"token", t.token}, {"count", t.count}});
    }
    cj["top_tokens"] = tops;
    clusters.push_back(cj);
  }
  j["clusters"] = clusters;
  ojson assign = ojson::array();
  for (std::size_t i = 0; i < m.anchors.size(); ++i) {
    assign.push_back({{"prompt_id", m.anchors[i].prompt_id},
                      {"token", m.anchors[i].token},
                      {"cluster", m.assignments[i]},
                      {"distance", m.distances[i]}});
  }
  j["assignments"] = assign;
  return j;
}

inline ModelArtifact model_from_json(const nlohmann::json& j, const std::filesystem::path& path) {
  expect_artifact(j, "model", path);
  ModelArtifact a;
  try {
    a.method = j.at("method").get<std::string>();
    a.convergence_step = j.at("convergence_step").get<long>();
    auto& m = a.model;
    m.k = j.at("k").get<std::size_t>();
    m.inertia = j.at("inertia").get<double>();
    m.iterations = j.at("iterations").get<std::size_t>();
    m.reseeds = j.at("reseeds").get<std::size_t>();
    m.inertia_history = j.at("inertia_history").get<std::vector<double>>();
    for (const auto& cj : j.at("clusters")) m.centroids.push_back(cj.at("centroid").get<std::vector<double>>());
    for (const auto& aj : j.at("assignments")) {
      m.anchors.push_back({aj.at("prompt_id").get<std::string>(), aj.at("token").get<std::string>()});
      const int c = aj.at("cluster").get<int>();
      if (c < 0 || static_cast<std::size_t>(c) >= m.k) throw InvalidInput("cluster index out of range");
      m.assignments.push_back(c);
      m.distances.push_back(aj.at("distance").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  if (a.model.centroids.size() != a.model.k) throw InvalidInput(path.string() + ": centroid count differs from k");
  return a;
}

// ---------------------------------------------------------------------------
// Phase space and hull

inline ojson axes_json() { return ojson::array({"execution", "logic", "thinking"}); }

inline ojson to_json(const PhaseTrajectory& t, const ojson& config) {
  ojson j = artifact_header("phase", config);
  j["method"] = t.method_name;
  j["convergence_step"] = t.convergence_step;
  j["per_prompt"] = t.per_prompt;
  j["axes"] = axes_json();
  ojson pts = ojson::array();
  for (const auto& p : t.points) {
    ojson pj;
    pj["step"] = p.step;
    if (t.per_prompt) pj["prompt_id"] = p.prompt_id;
    pj["exec"] = p.coords.x;
    pj["logic"] = p.coords.y;
    pj["think"] = p.coords.z;
    pj["imputed"] = p.imputed;
    pts.push_back(pj);
  }
  j["points"] = pts;
  j["skipped_steps"] = t.skipped_steps;
  return j;
}

inline PhaseTrajectory phase_from_json(const nlohmann::json& j, const std::filesystem::path& path) {
  expect_artifact(j, "phase", path);
  PhaseTrajectory t;
  try {
    t.method_name = j.at("method").get<std::string>();
    t.convergence_step = j.at("convergence_step").get<long>();
    t.per_prompt = j.at("per_prompt").get<bool>();
    for (const auto& pj : j.at("points")) {
      PhasePoint p;
      p.step = pj.at("step").get<long>();
      if (t.per_prompt) p.prompt_id = pj.at("prompt_id").get<std::string>();
      p.coords = {pj.at("exec").get<double>(), pj.at("logic").get<double>(), pj.at("think").get<double>()};
      p.imputed = pj.at("imputed").get<bool>();
      t.points.push_back(std::move(p));
    }
    t.skipped_steps = j.at("skipped_steps").get<std::vector<long>>();
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(path.string() + ": " + e.what());
  }
  return t;
}

inline std::string csv_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// step,exec,logic,think; per-prompt output appends a prompt_id column.
inline std::string phase_csv(const PhaseTrajectory& t) {
  std::string out = t.per_prompt ? "step,exec,logic,think,prompt_id\n" : "step,exec,logic,think\n";
  for (const auto& p : t.points) {
    out += std::to_string(p.step) + "," + csv_number(p.coords.x) + "," + csv_number(p.coords.y) +
           "," + csv_number(p.coords.z);
    if (t.per_prompt) out += "," + p.prompt_id;
    out += "\n";
  }
  return out;
}

inline std::string hull_csv(const HullReport& r) {
  std::string out = "step,exec,logic,think\n";
  for (std::size_t i = 0; i < r.vertices.size(); ++i) {
    out += std::to_string(r.vertex_steps[i]) + "," + csv_number(r.vertices[i].x) + "," +
           csv_number(r.vertices[i].y) + "," + csv_number(r.vertices[i].z) + "\n";
  }
  return out;
}

inline ojson to_json(const HullReport& r, const ojson& config) {
  ojson j = artifact_header("hull_report", config);
  j["method"] = r.method_name;
  j["convergence_step"] = r.convergence_step;
  j["axes"] = axes_json();
  j["volume"] = r.volume;
  j["volume_units"] = "nats^3";
  j["diagnosis"] = std::string(to_string(r.diagnosis));
  j["thresholds"] = {{"v_low", r.thresholds.v_low}, {"v_high", r.thresholds.v_high}};
  j["degenerate"] = r.degenerate;
  j["point_count"] = r.point_count;
  j["vertex_count"] = r.vertex_count;
  ojson verts = ojson::array();
  for (std::size_t i = 0; i < r.vertices.size(); ++i) {
    verts.push_back({{"step", r.vertex_steps[i]},
                     {"exec", r.vertices[i].x},
                     {"logic", r.vertices[i].y},
                     {"think", r.vertices[i].z}});
  }
  j["vertices"] = verts;
  return j;
}

}  // namespace entlens::io
