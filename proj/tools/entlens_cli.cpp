// entlens command line: toy-train, ingest, cluster, project, hull, pipeline.
// Exit codes: 0 ok, 1 runtime error, 2 usage error.

#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "entlens/pipeline.hpp"

using namespace entlens;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

// Options that map onto config keys. Only flags given on the command line
// end up in the patch, so a --config file keeps the rest.
class Overrides {
 public:
  template <typename T>
  CLI::Option* add(CLI::App* app, const std::string& flag, const std::string& pointer,
                   const std::string& help) {
    auto value = std::make_shared<T>();
    CLI::Option* opt = app->add_option(flag, *value, help);
    appliers_.push_back([app, opt, value, pointer](json& patch) {
      if (app->parsed() && opt->count() > 0) patch[json::json_pointer(pointer)] = *value;
    });
    return opt;
  }

  CLI::Option* flag(CLI::App* app, const std::string& flag, const std::string& pointer,
                    const std::string& help) {
    CLI::Option* opt = app->add_flag(flag, help);
    appliers_.push_back([app, opt, pointer](json& patch) {
      if (app->parsed() && opt->count() > 0) patch[json::json_pointer(pointer)] = true;
    });
    return opt;
  }

  json patch() const {
    json p = json::object();
    for (const auto& f : appliers_) f(p);
    return p;
  }

 private:
  std::vector<std::function<void(json&)>> appliers_;
};

std::vector<std::string> reward_names() {
  std::vector<std::string> out;
  for (auto k : kAllRewardKinds) out.emplace_back(to_string(k));
  return out;
}

void add_common(CLI::App* app, Overrides& ov, std::string& config_path) {
  app->add_option("--config", config_path, "JSON config file; flags override its values")
      ->check(CLI::ExistingFile);
  ov.add<std::uint64_t>(app, "--seed", "/seed", "top-level seed");
}

void add_toy(CLI::App* app, Overrides& ov) {
  ov.add<std::string>(app, "--reward", "/toy/reward", "intrinsic reward")
      ->check(CLI::IsMember(reward_names()));
  ov.flag(app, "--supervised", "/toy/supervised", "train on target match instead of an intrinsic reward");
  ov.add<std::size_t>(app, "--steps", "/toy/steps", "training steps");
  ov.add<std::size_t>(app, "--group-size", "/toy/group_size", "rollouts per prompt");
  ov.add<double>(app, "--lr", "/toy/learning_rate", "learning rate");
  ov.add<double>(app, "--temperature", "/toy/temperature", "sampling temperature");
  ov.add<std::size_t>(app, "--eval-every", "/toy/eval_every", "checkpoint interval");
  ov.add<std::size_t>(app, "--eval-samples", "/toy/eval_samples", "evaluation responses per prompt");
  ov.add<std::size_t>(app, "--vocab", "/toy/vocab", "vocabulary size (last id is EOS)");
  ov.add<std::size_t>(app, "--prompts", "/toy/prompts", "number of prompts");
  ov.add<std::size_t>(app, "--t-max", "/toy/t_max", "maximum response length");
  ov.add<std::string>(app, "--context", "/toy/context", "policy context")
      ->check(CLI::IsMember({"bigram", "positional"}));
}

void add_ingest(CLI::App* app, Overrides& ov) {
  ov.add<std::string>(app, "--records", "/ingest/records", "trace JSONL");
  ov.add<std::string>(app, "--accuracy", "/ingest/accuracy", "accuracy JSONL");
  ov.add<std::string>(app, "--mode", "/ingest/mode", "convergence rule")
      ->check(CLI::IsMember({"peak", "plateau", "collapse"}));
  ov.add<long>(app, "--convergence-step", "/ingest/convergence_step", "explicit convergence step");
  ov.add<std::size_t>(app, "--plateau-window", "/ingest/plateau_window", "plateau window (checkpoints)");
  ov.add<double>(app, "--plateau-delta", "/ingest/plateau_delta", "plateau tolerance");
  ov.add<std::string>(app, "--method", "/method", "method name used in reports");
}

void add_cluster(CLI::App* app, Overrides& ov) {
  ov.add<std::size_t>(app, "--k", "/cluster/k", "number of clusters");
  ov.add<double>(app, "--gamma", "/cluster/gamma", "soft-DTW smoothing (0 = hard DTW)");
  ov.add<std::size_t>(app, "--resample-len", "/cluster/resample_len", "centroid length");
  ov.add<std::size_t>(app, "--max-iter", "/cluster/max_iter", "k-means iteration cap");
  ov.add<double>(app, "--core-fraction", "/cluster/core_fraction", "core-sample fraction per cluster");
  ov.add<std::size_t>(app, "--top-tokens", "/cluster/top_tokens", "tokens listed per cluster");
}

void add_hull(CLI::App* app, Overrides& ov) {
  ov.add<double>(app, "--v-low", "/hull/v_low", "stagnation threshold");
  ov.add<double>(app, "--v-high", "/hull/v_high", "explosion threshold");
}

void warn_lines(const std::string& path, const std::vector<LineError>& errors) {
  for (const auto& e : errors) std::cerr << "warning: " << path << ":" << e.line << ": " << e.message << "\n";
  if (!errors.empty()) std::cerr << "warning: " << errors.size() << " malformed line(s) skipped\n";
}

std::vector<TraceRecord> load_records(const std::string& path, const char* stage) {
  if (path.empty()) throw StageError(stage, "--records is required");
  try {
    auto parsed = io::load_trace(path);
    warn_lines(path, parsed.errors);
    return std::move(parsed.records);
  } catch (const std::exception& e) {
    throw StageError(stage, e.what());
  }
}

std::string require(const std::string& value, const char* flag) {
  if (value.empty()) throw ConfigError(std::string(flag) + " is required");
  return value;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-trajectory diagnostics for intrinsic-reward RL"};
  app.set_version_flag("--version", std::string(io::kVersion));
  app.require_subcommand(1);

  Overrides ov;
  std::string config_path;
  std::string out;

  auto* toy = app.add_subcommand("toy-train", "train the toy policy and write trace.jsonl, accuracy.jsonl, run_summary.json");
  add_common(toy, ov, config_path);
  add_toy(toy, ov);
  ov.add<std::string>(toy, "--out-dir", "/out_dir", "output directory");

  auto* ingest = app.add_subcommand("ingest", "build entropy trajectories from a trace");
  add_common(ingest, ov, config_path);
  add_ingest(ingest, ov);
  ingest->add_option("--out", out, "output file")->default_val("trajectories.json");

  auto* cluster = app.add_subcommand("cluster", "soft-DTW k-means over trajectories");
  add_common(cluster, ov, config_path);
  ov.add<std::string>(cluster, "--trajectories", "/cluster/trajectories", "trajectories.json");
  add_cluster(cluster, ov);
  cluster->add_option("--out", out, "output file")->default_val("model.json");

  auto* project = app.add_subcommand("project", "project checkpoints into the 3D phase space");
  add_common(project, ov, config_path);
  ov.add<std::string>(project, "--records", "/ingest/records", "trace JSONL");
  ov.add<std::string>(project, "--model", "/project/model", "model.json");
  ov.flag(project, "--per-prompt", "/project/per_prompt", "one point per (prompt, checkpoint)");
  project->add_option("--out", out, "output file (a .csv twin is written next to it)")->default_val("phase.json");

  auto* hull = app.add_subcommand("hull", "convex-hull volume and diagnosis");
  add_common(hull, ov, config_path);
  ov.add<std::string>(hull, "--phase", "/hull/phase", "phase.json");
  add_hull(hull, ov);
  hull->add_option("--out", out, "output file (a .csv twin is written next to it)")->default_val("hull_report.json");

  auto* pipeline = app.add_subcommand("pipeline", "toy-train (unless --records is given), ingest, cluster, project, hull, report.md");
  add_common(pipeline, ov, config_path);
  add_toy(pipeline, ov);
  add_ingest(pipeline, ov);
  add_cluster(pipeline, ov);
  ov.flag(pipeline, "--per-prompt", "/project/per_prompt", "one point per (prompt, checkpoint)");
  add_hull(pipeline, ov);
  ov.add<std::string>(pipeline, "--out-dir", "/out_dir", "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  PipelineConfig cfg;
  try {
    const json patch = ov.patch();
    cfg = config_path.empty() ? config_from_json(patch) : load_config(config_path, patch);
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }

  try {
    if (toy->parsed()) {
      const auto run = stage_toy_train(cfg, cfg.out_dir);
      const auto& cps = run.result.checkpoints;
      std::cout << "wrote " << run.trace_path.string() << " (" << run.result.records.size()
                << " records, " << cps.size() << " checkpoints)\n";
    } else if (ingest->parsed()) {
      std::vector<LineError> errors;
      const auto r = stage_ingest(cfg, require(cfg.records, "--records"), cfg.accuracy, out, &errors);
      warn_lines(cfg.records, errors);
      std::cout << "wrote " << out << " (" << r.set.trajectories.size()
                << " trajectories, convergence step " << r.set.convergence_step << ")\n";
    } else if (cluster->parsed()) {
      const std::string path = require(cfg.trajectories, "--trajectories");
      io::TrajectorySet set;
      try {
        set = io::trajectories_from_json(io::read_json(path), path);
      } catch (const std::exception& e) {
        throw StageError("cluster", e.what());
      }
      const auto art = stage_cluster(cfg, set, out);
      std::cout << "wrote " << out << " (k=" << art.model.k << ", inertia " << art.model.inertia << ")\n";
    } else if (project->parsed()) {
      const std::string model_path = require(cfg.model, "--model");
      const auto records = load_records(require(cfg.records, "--records"), "project");
      io::ModelArtifact art;
      try {
        art = io::model_from_json(io::read_json(model_path), model_path);
      } catch (const std::exception& e) {
        throw StageError("project", e.what());
      }
      const auto traj = stage_project(cfg, records, art, out);
      std::cout << "wrote " << out << " (" << traj.points.size() << " points)\n";
    } else if (hull->parsed()) {
      const std::string path = require(cfg.phase, "--phase");
      PhaseTrajectory traj;
      try {
        traj = io::phase_from_json(io::read_json(path), path);
      } catch (const std::exception& e) {
        throw StageError("hull", e.what());
      }
      const auto rep = stage_hull(cfg, traj, out);
      std::cout << "volume " << rep.volume << " -> " << to_string(rep.diagnosis) << "\n";
    } else if (pipeline->parsed()) {
      const auto res = run_pipeline(cfg);
      std::cout << "wrote " << (fs::path(cfg.out_dir) / "report.md").string() << ": volume " << res.hull.volume
                << " -> " << to_string(res.hull.diagnosis) << "\n";
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kOk;
}
