#pragma once
// Stage runners behind the command line: toy-train, ingest, cluster, project,
// hull and the chained pipeline. Every stage reads and writes files so the
// stages can also be run one at a time.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "entlens/errors.hpp"
#include "entlens/io.hpp"
#include "entlens/phase_geom.hpp"
#include "entlens/seeding.hpp"
#include "entlens/toy_lab.hpp"
#include "entlens/trace_ingest.hpp"
#include "entlens/ts_cluster.hpp"

namespace entlens {

namespace fs = std::filesystem;

// Raised for malformed configs: unknown keys, wrong types, bad enum strings.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Wraps any failure inside a stage with the stage name.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& cause)
      : std::runtime_error("stage " + stage + ": " + cause), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct PipelineConfig {
  std::uint64_t seed = 7;
  std::string method;  // empty: "toy-<reward>" for toy runs, "trace" otherwise
  std::string out_dir = "out";

  // toy
  ToySetup setup;
  TrainConfig train;
  bool supervised = false;

  // ingest
  std::string records;   // empty in the pipeline: train a toy run first
  std::string accuracy;
  ConvergenceMode mode = ConvergenceMode::PeakAccuracy;
  std::optional<long> convergence_step;
  std::size_t plateau_window = 3;
  double plateau_delta = 0.02;

  // cluster
  std::string trajectories;
  std::size_t k = 3;
  double gamma = 0.1;
  std::size_t resample_len = 32;
  std::size_t max_iter = 50;
  double core_fraction = 0.3;
  std::size_t top_tokens = 10;

  // project
  std::string model;
  bool per_prompt = false;

  // hull
  std::string phase;
  VolumeThresholds thresholds;

  std::string resolved_method() const {
    if (!method.empty()) return method;
    if (!records.empty()) return "trace";
    return supervised ? "toy-supervised" : "toy-" + std::string(to_string(train.reward_kind));
  }

  std::uint64_t cluster_seed() const { return derive_seed(seed, "cluster"); }
};

inline nlohmann::ordered_json to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["method"] = c.method;
  j["out_dir"] = c.out_dir;
  j["toy"] = {
      {"reward", std::string(to_string(c.train.reward_kind))},
      {"supervised", c.supervised},
      {"steps", c.train.max_steps},
      {"group_size", c.train.group_size},
      {"learning_rate", c.train.learning_rate},
      {"temperature", c.train.temperature},
      {"eps_clip", c.train.eps_clip},
      {"eps_std", c.train.eps_std},
      {"eval_every", c.train.eval_every},
      {"eval_samples", c.train.eval_samples},
      {"vocab", c.setup.vocab},
      {"prompts", c.setup.prompts},
      {"t_max", c.setup.t_max},
      {"target_len", c.setup.target_len},
      {"context", std::string(to_string(c.setup.context_mode))},
      {"init_scale", c.setup.init_scale},
      {"eos_bias", c.setup.eos_bias},
  };
  nlohmann::ordered_json conv = nullptr;
  if (c.convergence_step) conv = *c.convergence_step;
  j["ingest"] = {
      {"records", c.records},
      {"accuracy", c.accuracy},
      {"mode", std::string(to_string(c.mode))},
      {"convergence_step", conv},
      {"plateau_window", c.plateau_window},
      {"plateau_delta", c.plateau_delta},
  };
  j["cluster"] = {
      {"trajectories", c.trajectories},
      {"k", c.k},
      {"gamma", c.gamma},
      {"resample_len", c.resample_len},
      {"max_iter", c.max_iter},
      {"core_fraction", c.core_fraction},
      {"top_tokens", c.top_tokens},
  };
  j["project"] = {{"model", c.model}, {"per_prompt", c.per_prompt}};
  j["hull"] = {{"phase", c.phase}, {"v_low", c.thresholds.v_low}, {"v_high", c.thresholds.v_high}};
  return j;
}

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& given, const nlohmann::ordered_json& known,
                                const std::string& where) {
  if (!given.is_object()) throw ConfigError("config" + where + ": expected an object");
  for (const auto& [key, value] : given.items()) {
    const std::string path = where + "." + key;
    if (!known.contains(key)) throw ConfigError("unknown config key '" + path.substr(1) + "'");
    if (known.at(key).is_object()) reject_unknown_keys(value, known.at(key), path);
  }
}

template <typename T>
void read(const nlohmann::json& section, const char* key, T& out, const std::string& where) {
  try {
    out = section.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace detail

// Applies a JSON document on top of defaults. Unknown keys are rejected.
inline PipelineConfig config_from_json(const nlohmann::json& patch) {
  const auto defaults = to_json(PipelineConfig{});
  detail::reject_unknown_keys(patch, defaults, "");
  nlohmann::json merged = defaults;
  merged.merge_patch(patch);
  // merge_patch treats null as "delete"; the override keeps its slot.
  if (!merged["ingest"].contains("convergence_step")) merged["ingest"]["convergence_step"] = nullptr;

  PipelineConfig c;
  using detail::read;
  read(merged, "seed", c.seed, "");
  read(merged, "method", c.method, "");
  read(merged, "out_dir", c.out_dir, "");

  const auto& toy = merged["toy"];
  std::string reward, context;
  read(toy, "reward", reward, "toy");
  const auto rk = parse_reward_kind(reward);
  if (!rk) throw ConfigError("unknown reward '" + reward + "' (valid: " + reward_kind_choices() + ")");
  c.train.reward_kind = *rk;
  read(toy, "supervised", c.supervised, "toy");
  read(toy, "steps", c.train.max_steps, "toy");
  read(toy, "group_size", c.train.group_size, "toy");
  read(toy, "learning_rate", c.train.learning_rate, "toy");
  read(toy, "temperature", c.train.temperature, "toy");
  read(toy, "eps_clip", c.train.eps_clip, "toy");
  read(toy, "eps_std", c.train.eps_std, "toy");
  read(toy, "eval_every", c.train.eval_every, "toy");
  read(toy, "eval_samples", c.train.eval_samples, "toy");
  read(toy, "vocab", c.setup.vocab, "toy");
  read(toy, "prompts", c.setup.prompts, "toy");
  read(toy, "t_max", c.setup.t_max, "toy");
  read(toy, "target_len", c.setup.target_len, "toy");
  read(toy, "context", context, "toy");
  const auto cm = parse_context_mode(context);
  if (!cm) throw ConfigError("unknown context mode '" + context + "' (valid: bigram, positional)");
  c.setup.context_mode = *cm;
  read(toy, "init_scale", c.setup.init_scale, "toy");
  read(toy, "eos_bias", c.setup.eos_bias, "toy");
  c.train.seed = c.seed;

  const auto& ing = merged["ingest"];
  std::string mode;
  read(ing, "records", c.records, "ingest");
  read(ing, "accuracy", c.accuracy, "ingest");
  read(ing, "mode", mode, "ingest");
  const auto m = parse_convergence_mode(mode);
  if (!m) throw ConfigError("unknown convergence mode '" + mode + "' (valid: peak, plateau, collapse)");
  c.mode = *m;
  if (!ing["convergence_step"].is_null()) {
    long step = 0;
    read(ing, "convergence_step", step, "ingest");
    c.convergence_step = step;
  }
  read(ing, "plateau_window", c.plateau_window, "ingest");
  read(ing, "plateau_delta", c.plateau_delta, "ingest");

  const auto& cl = merged["cluster"];
  read(cl, "trajectories", c.trajectories, "cluster");
  read(cl, "k", c.k, "cluster");
  read(cl, "gamma", c.gamma, "cluster");
  read(cl, "resample_len", c.resample_len, "cluster");
  read(cl, "max_iter", c.max_iter, "cluster");
  read(cl, "core_fraction", c.core_fraction, "cluster");
  read(cl, "top_tokens", c.top_tokens, "cluster");

  read(merged["project"], "model", c.model, "project");
  read(merged["project"], "per_prompt", c.per_prompt, "project");
  read(merged["hull"], "phase", c.phase, "hull");
  read(merged["hull"], "v_low", c.thresholds.v_low, "hull");
  read(merged["hull"], "v_high", c.thresholds.v_high, "hull");
  return c;
}

inline PipelineConfig load_config(const fs::path& path, const nlohmann::json& flag_patch = {}) {
  nlohmann::json file;
  try {
    file = nlohmann::json::parse(io::read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const std::runtime_error& e) {
    throw ConfigError(e.what());
  }
  detail::reject_unknown_keys(file, to_json(PipelineConfig{}), "");
  if (!flag_patch.is_null()) file.merge_patch(flag_patch);
  return config_from_json(file);
}

// ---------------------------------------------------------------------------
// Stages

struct ToyRun {
  TrainResult result;
  fs::path trace_path;
  fs::path accuracy_path;
};

inline ToyRun stage_toy_train(const PipelineConfig& cfg, const fs::path& out_dir) {
  try {
    const auto problem = make_toy_problem(cfg.setup, cfg.seed);
    ToyRun run;
    run.result = cfg.supervised ? supervised_baseline_train(problem.task, problem.initial_policy, cfg.train)
                                : train(problem.task, problem.initial_policy, cfg.train);
    run.trace_path = out_dir / "trace.jsonl";
    run.accuracy_path = out_dir / "accuracy.jsonl";
    io::write_text(run.trace_path, io::to_jsonl(run.result.records));
    io::write_text(run.accuracy_path, io::to_jsonl(run.result.accuracy_curve()));
    io::write_json(out_dir / "run_summary.json", io::run_summary(run.result, to_json(cfg)));
    return run;
  } catch (const std::exception& e) {
    throw StageError("toy-train", e.what());
  }
}

struct IngestResult {
  io::TrajectorySet set;
  std::vector<TraceRecord> records;
};

inline IngestResult stage_ingest(const PipelineConfig& cfg, const fs::path& records_path,
                                 const fs::path& accuracy_path, const fs::path& out,
                                 std::vector<LineError>* line_errors = nullptr) {
  try {
    auto parsed = io::load_trace(records_path);
    if (line_errors) *line_errors = parsed.errors;
    ConvergenceSpec spec;
    spec.mode = cfg.mode;
    spec.explicit_step = cfg.convergence_step;
    spec.plateau_window = cfg.plateau_window;
    spec.plateau_delta = cfg.plateau_delta;
    if (!cfg.convergence_step) {
      if (accuracy_path.empty()) {
        throw InvalidInput("an accuracy curve or an explicit convergence step is required");
      }
      const auto acc = io::load_accuracy(accuracy_path);
      if (!acc.errors.empty()) {
        throw InvalidInput(accuracy_path.string() + " line " + std::to_string(acc.errors.front().line) +
                           ": " + acc.errors.front().message);
      }
      // The step-0 checkpoint is the untrained policy and never a convergence point.
      for (const auto& a : acc.curve) {
        if (a.step > 0) spec.accuracy_curve.push_back(a);
      }
      if (spec.accuracy_curve.empty()) throw InvalidInput("accuracy curve has no checkpoint after step 0");
    }
    const long conv = effective_convergence_point(spec);
    if (conv <= 0) {
      throw InvalidInput("convergence step resolved to " + std::to_string(conv) +
                         "; pass an explicit positive convergence step");
    }
    IngestResult r;
    r.set.convergence_step = conv;
    r.set.convergence_source = cfg.convergence_step ? "explicit" : std::string(to_string(cfg.mode));
    r.set.method = cfg.resolved_method();
    r.set.line_errors = parsed.errors.size();
    r.set.trajectories = filter_and_normalize(build_trajectories(parsed.records), conv);
    if (r.set.trajectories.empty()) throw InvalidInput("no trajectories of length ≥ 2");
    r.records = std::move(parsed.records);
    io::write_json(out, io::to_json(r.set, to_json(cfg)));
    return r;
  } catch (const std::exception& e) {
    throw StageError("ingest", e.what());
  }
}

inline KMeansOptions kmeans_options(const PipelineConfig& cfg) {
  KMeansOptions opt;
  opt.k = cfg.k;
  opt.dtw.gamma = cfg.gamma;
  opt.resample_len = cfg.resample_len;
  opt.max_iter = cfg.max_iter;
  opt.seed = cfg.cluster_seed();
  return opt;
}

inline io::ModelArtifact stage_cluster(const PipelineConfig& cfg, const io::TrajectorySet& set,
                                       const fs::path& out) {
  try {
    io::ModelArtifact art;
    art.model = ts_kmeans(set.trajectories, kmeans_options(cfg));
    art.method = set.method;
    art.convergence_step = set.convergence_step;
    io::write_json(out, io::to_json(art.model, set.trajectories, set.method, set.convergence_step,
                                    cfg.core_fraction, cfg.top_tokens, to_json(cfg)));
    return art;
  } catch (const std::exception& e) {
    throw StageError("cluster", e.what());
  }
}

inline PhaseTrajectory stage_project(const PipelineConfig& cfg, const std::vector<TraceRecord>& records,
                                     const io::ModelArtifact& art, const fs::path& out) {
  try {
    const auto labels = order_clusters(art.model);
    auto traj = project_run(records, art.model, labels, art.convergence_step, art.method, cfg.per_prompt);
    if (traj.points.empty()) throw InvalidInput("no checkpoint covers all three clusters");
    io::write_json(out, io::to_json(traj, to_json(cfg)));
    io::write_text(fs::path(out).replace_extension(".csv"), io::phase_csv(traj));
    return traj;
  } catch (const std::exception& e) {
    throw StageError("project", e.what());
  }
}

inline HullReport stage_hull(const PipelineConfig& cfg, const PhaseTrajectory& traj, const fs::path& out) {
  try {
    const auto rep = hull_report(traj, cfg.thresholds);
    io::write_json(out, io::to_json(rep, to_json(cfg)));
    io::write_text(fs::path(out).replace_extension(".csv"), io::hull_csv(rep));
    return rep;
  } catch (const std::exception& e) {
    throw StageError("hull", e.what());
  }
}

// ---------------------------------------------------------------------------
// Report

namespace detail {

inline std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace detail

// Markdown summary. Holds no paths or timestamps, so equal configs give equal bytes.
inline std::string render_report(const PipelineConfig& cfg, const io::TrajectorySet& set,
                                 const io::ModelArtifact& art, const PhaseTrajectory& phase,
                                 const HullReport& hull, const TrainResult* toy) {
  using detail::fmt;
  std::string md;
  md += "# entlens report: " + set.method + "\n\n";
  md += "- tool version: " + std::string(io::kVersion) + "\n";
  md += "- seed: " + std::to_string(cfg.seed) + "\n";
  if (toy) {
    md += "- reward: " + (cfg.supervised ? std::string("supervised (target match)")
                                         : std::string(to_string(cfg.train.reward_kind))) + "\n";
    md += "- training steps: " + std::to_string(cfg.train.max_steps) + "\n";
  }
  md += "- convergence step: " + std::to_string(set.convergence_step) + " (" + set.convergence_source + ")\n";
  md += "- trajectories: " + std::to_string(set.trajectories.size()) + "\n";
  if (set.line_errors) md += "- malformed trace lines skipped: " + std::to_string(set.line_errors) + "\n";

  if (toy && !toy->checkpoints.empty()) {
    const auto& a = toy->checkpoints.front();
    const auto& b = toy->checkpoints.back();
    md += "\n## Training\n\n";
    md += "| checkpoint | mean entropy | mean length | accuracy | match rate |\n";
    md += "|---|---|---|---|---|\n";
    for (const auto* c : {&a, &b}) {
      md += "| " + std::to_string(c->step) + " | " + fmt("%.4f", c->mean_entropy) + " | " +
            fmt("%.2f", c->mean_length) + " | " + fmt("%.4f", c->accuracy) + " | " +
            fmt("%.4f", c->match_rate) + " |\n";
    }
  }

  md += "\n## Clusters\n\n";
  md += "| label | cluster | size | centroid mean |\n|---|---|---|---|\n";
  const auto labels = order_clusters(art.model);
  for (std::size_t r = 0; r < 3; ++r) {
    const auto role = static_cast<SemanticRole>(r);
    const auto c = static_cast<std::size_t>(labels.cluster(role));
    md += "| " + std::string(to_string(role)) + " | " + std::to_string(c) + " | " +
          std::to_string(art.model.cluster_size(c)) + " | " + fmt("%.4f", art.model.centroid_mean(c)) + " |\n";
  }
  if (labels.tie) md += "\nTwo centroid means are equal; labels were assigned by cluster index.\n";
  md += "\nInertia " + fmt("%.6g", art.model.inertia) + " after " + std::to_string(art.model.iterations) +
        " iterations.\n";

  std::size_t imputed = 0;
  for (const auto& p : phase.points) imputed += p.imputed;
  md += "\n## Phase space\n\n";
  md += "- points: " + std::to_string(phase.points.size()) + (phase.per_prompt ? " (per prompt)" : "") + "\n";
  md += "- imputed points: " + std::to_string(imputed) + "\n";
  md += "- skipped checkpoints: " + std::to_string(phase.skipped_steps.size()) + "\n";

  md += "\n## Hull\n\n";
  md += "- volume: " + fmt("%.6g", hull.volume) + " nats^3" + (hull.degenerate ? " (degenerate)" : "") + "\n";
  md += "- vertices: " + std::to_string(hull.vertex_count) + " of " + std::to_string(hull.point_count) + " points\n";
  md += "- thresholds: v_low " + fmt("%g", hull.thresholds.v_low) + ", v_high " + fmt("%g", hull.thresholds.v_high) + "\n";
  md += "- diagnosis: **" + std::string(to_string(hull.diagnosis)) + "**\n";
  return md;
}

struct PipelineResult {
  std::optional<TrainResult> toy;
  io::TrajectorySet trajectories;
  io::ModelArtifact model;
  PhaseTrajectory phase;
  HullReport hull;
  std::string report;
};

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
  const fs::path out_dir = cfg.out_dir;
  PipelineResult res;
  fs::path records = cfg.records;
  fs::path accuracy = cfg.accuracy;
  if (records.empty()) {
    auto run = stage_toy_train(cfg, out_dir);
    records = run.trace_path;
    accuracy = run.accuracy_path;
    res.toy = std::move(run.result);
  }
  auto ing = stage_ingest(cfg, records, accuracy, out_dir / "trajectories.json");
  res.trajectories = ing.set;
  res.model = stage_cluster(cfg, ing.set, out_dir / "model.json");
  res.phase = stage_project(cfg, ing.records, res.model, out_dir / "phase.json");
  res.hull = stage_hull(cfg, res.phase, out_dir / "hull_report.json");
  res.report = render_report(cfg, res.trajectories, res.model, res.phase, res.hull,
                             res.toy ? &*res.toy : nullptr);
  try {
    io::write_text(out_dir / "report.md", res.report);
  } catch (const std::exception& e) {
    throw StageError("report", e.what());
  }
  return res;
}

}  // namespace entlens
