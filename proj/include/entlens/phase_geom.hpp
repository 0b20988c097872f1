#pragma once

// Phase-space geometry: per-checkpoint mean entropy of the Execution, Logic
// and Thinking clusters as 3D points, their convex hull volume, and the
// volume-based run diagnosis. Axis order is always (Execution, Logic, Thinking).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "entlens/errors.hpp"
#include "entlens/trace_ingest.hpp"
#include "entlens/ts_cluster.hpp"

namespace entlens {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

// ---------------------------------------------------------------------------
// Projection

struct PhasePoint {
  long step = 0;
  Vec3 coords;  // (execution, logic, thinking) mean entropies, nats
  bool imputed = false;
  std::string prompt_id;  // set only for per-prompt projections
};

struct PhaseTrajectory {
  std::string method_name;
  long convergence_step = 0;
  bool per_prompt = false;
  std::vector<PhasePoint> points;
  std::vector<long> skipped_steps;  // missing clusters and nothing to carry forward
};

// Mean entropy per semantic cluster over the records of a single checkpoint.
// Records whose anchor was not clustered are ignored.
inline PhasePoint project(std::span<const TraceRecord> records_at_step,
                          const SemanticLabeling& labeling,
                          const std::map<Anchor, int>& assignments) {
  std::array<double, 3> sum{};
  std::array<std::size_t, 3> count{};
  std::optional<long> step;
  for (const auto& r : records_at_step) {
    if (step && *step != r.step) throw InvalidInput("project: records span several steps");
    step = r.step;
    const auto it = assignments.find(Anchor{r.prompt_id, r.token});
    if (it == assignments.end()) continue;
    const auto role = static_cast<std::size_t>(
        labeling.role_of_cluster.at(static_cast<std::size_t>(it->second)));
    sum[role] += r.entropy;
    ++count[role];
  }
  std::vector<int> missing;
  for (std::size_t role = 0; role < 3; ++role) {
    if (count[role] == 0) missing.push_back(labeling.cluster_of_role[role]);
  }
  if (!missing.empty()) throw MissingCluster(step.value_or(-1), std::move(missing));
  PhasePoint p;
  p.step = *step;
  p.coords = {sum[0] / static_cast<double>(count[0]), sum[1] / static_cast<double>(count[1]),
              sum[2] / static_cast<double>(count[2])};
  return p;
}

namespace detail {

inline void project_series(const std::map<long, std::vector<TraceRecord>>& by_step,
                           const SemanticLabeling& labeling,
                           const std::map<Anchor, int>& assignments, const std::string& prompt,
                           PhaseTrajectory& out) {
  std::optional<Vec3> last;
  for (const auto& [step, recs] : by_step) {
    try {
      PhasePoint p = project(recs, labeling, assignments);
      p.prompt_id = prompt;
      last = p.coords;
      out.points.push_back(std::move(p));
    } catch (const MissingCluster&) {
      if (last) {
        out.points.push_back({step, *last, true, prompt});
      } else {
        out.skipped_steps.push_back(step);
      }
    }
  }
}

}  // namespace detail

// One point per checkpoint up to the convergence step (or one per
// (prompt, checkpoint) when per_prompt is set). Checkpoints missing a cluster
// repeat the previous point and are marked imputed.
inline PhaseTrajectory project_run(std::span<const TraceRecord> records,
                                   const ClusterModel& model, const SemanticLabeling& labeling,
                                   long convergence_step, std::string method_name,
                                   bool per_prompt = false) {
  PhaseTrajectory out;
  out.method_name = std::move(method_name);
  out.convergence_step = convergence_step;
  out.per_prompt = per_prompt;
  const auto assignments = model.assignment_map();

  std::map<std::string, std::map<long, std::vector<TraceRecord>>> grouped;
  for (const auto& r : records) {
    if (r.step > convergence_step) continue;
    grouped[per_prompt ? r.prompt_id : std::string()][r.step].push_back(r);
  }
  for (const auto& [prompt, by_step] : grouped) {
    detail::project_series(by_step, labeling, assignments, prompt, out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convex hull (incremental quickhull)

struct HullFacet {
  std::array<std::size_t, 3> v{};  // indices into the input, counter-clockwise from outside
  Vec3 normal;                     // unit, outward
  double offset = 0.0;             // dot(normal, x) == offset on the plane
};

struct ConvexHull {
  double volume = 0.0;
  bool degenerate = false;
  std::vector<std::size_t> vertices;  // sorted input indices
  std::vector<HullFacet> facets;
};

namespace detail {

class QuickHull {
 public:
  explicit QuickHull(std::span<const Vec3> pts) : pts_(pts) {}

  ConvexHull run() {
    ConvexHull out;
    if (pts_.size() < 4 || !initial_simplex()) {
      out.degenerate = true;
      return out;
    }
    for (;;) {
      std::size_t fi = faces_.size();
      for (std::size_t i = 0; i < faces_.size(); ++i) {
        if (faces_[i].alive && !faces_[i].outside.empty()) {
          fi = i;
          break;
        }
      }
      if (fi == faces_.size()) break;
      add_point(fi);
    }
    long double vol = 0.0L;
    std::set<std::size_t> verts;
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      const Vec3 a = pts_[f.v[0]] - interior_;
      const Vec3 b = pts_[f.v[1]] - interior_;
      const Vec3 c = pts_[f.v[2]] - interior_;
      vol += static_cast<long double>(dot(a, cross(b, c)));
      verts.insert(f.v.begin(), f.v.end());
      out.facets.push_back({f.v, f.normal, f.offset});
    }
    out.volume = static_cast<double>(vol / 6.0L);
    out.vertices.assign(verts.begin(), verts.end());
    return out;
  }

 private:
  struct Face {
    std::array<std::size_t, 3> v{};
    Vec3 normal;
    double offset = 0.0;
    bool alive = true;
    std::vector<std::size_t> outside;
  };

  double dist(const Face& f, const Vec3& p) const { return dot(f.normal, p) - f.offset; }

  void make_face(std::size_t a, std::size_t b, std::size_t c) {
    Face f;
    f.v = {a, b, c};
    Vec3 n = cross(pts_[b] - pts_[a], pts_[c] - pts_[a]);
    const double len = norm(n);
    n = n * (1.0 / len);
    f.normal = n;
    f.offset = dot(n, pts_[a]);
    if (dist(f, interior_) > 0.0) {  // orient outward
      std::swap(f.v[1], f.v[2]);
      f.normal = n * -1.0;
      f.offset = -f.offset;
    }
    faces_.push_back(std::move(f));
  }

  bool initial_simplex() {
    Vec3 lo = pts_[0], hi = pts_[0];
    std::array<std::size_t, 6> ext{};
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      for (std::size_t ax = 0; ax < 3; ++ax) {
        if (pts_[i][ax] < pts_[ext[2 * ax]][ax]) ext[2 * ax] = i;
        if (pts_[i][ax] > pts_[ext[2 * ax + 1]][ax]) ext[2 * ax + 1] = i;
      }
      lo = {std::min(lo.x, pts_[i].x), std::min(lo.y, pts_[i].y), std::min(lo.z, pts_[i].z)};
      hi = {std::max(hi.x, pts_[i].x), std::max(hi.y, pts_[i].y), std::max(hi.z, pts_[i].z)};
    }
    const double scale = std::max({hi.x - lo.x, hi.y - lo.y, hi.z - lo.z});
    if (!(scale > 0.0)) return false;
    eps_ = 1e-11 * scale;

    std::size_t a = ext[0], b = ext[1];
    double best = -1.0;
    for (std::size_t i = 0; i < 6; ++i) {
      for (std::size_t j = i + 1; j < 6; ++j) {
        const double d = norm(pts_[ext[i]] - pts_[ext[j]]);
        if (d > best) {
          best = d;
          a = ext[i];
          b = ext[j];
        }
      }
    }
    const Vec3 ab = pts_[b] - pts_[a];
    std::size_t c = a;
    best = 0.0;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      const double d = norm(cross(pts_[i] - pts_[a], ab)) / norm(ab);
      if (d > best) {
        best = d;
        c = i;
      }
    }
    if (best <= eps_) return false;
    const Vec3 n = cross(ab, pts_[c] - pts_[a]);
    const double nlen = norm(n);
    std::size_t d = a;
    best = 0.0;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      const double h = std::abs(dot(n, pts_[i] - pts_[a])) / nlen;
      if (h > best) {
        best = h;
        d = i;
      }
    }
    if (best <= eps_) return false;

    interior_ = (pts_[a] + pts_[b] + pts_[c] + pts_[d]) * 0.25;
    make_face(a, b, c);
    make_face(a, b, d);
    make_face(a, c, d);
    make_face(b, c, d);
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      if (i == a || i == b || i == c || i == d) continue;
      assign_outside(i, 0, faces_.size());
    }
    return true;
  }

  void assign_outside(std::size_t p, std::size_t first_face, std::size_t end_face) {
    for (std::size_t f = first_face; f < end_face; ++f) {
      if (faces_[f].alive && dist(faces_[f], pts_[p]) > eps_) {
        faces_[f].outside.push_back(p);
        return;
      }
    }
  }

  void add_point(std::size_t fi) {
    std::size_t eye = faces_[fi].outside.front();
    double far = -1.0;
    for (std::size_t p : faces_[fi].outside) {
      const double d = dist(faces_[fi], pts_[p]);
      if (d > far) {
        far = d;
        eye = p;
      }
    }
    std::vector<std::size_t> visible;
    for (std::size_t i = 0; i < faces_.size(); ++i) {
      if (faces_[i].alive && dist(faces_[i], pts_[eye]) > eps_) visible.push_back(i);
    }
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i : visible) {
      const auto& v = faces_[i].v;
      for (std::size_t e = 0; e < 3; ++e) edges.insert({v[e], v[(e + 1) % 3]});
    }
    std::vector<std::size_t> orphans;
    for (std::size_t i : visible) {
      faces_[i].alive = false;
      for (std::size_t p : faces_[i].outside) {
        if (p != eye) orphans.push_back(p);
      }
      faces_[i].outside.clear();
    }
    const std::size_t first_new = faces_.size();
    for (const auto& [a, b] : edges) {
      if (edges.count({b, a})) continue;  // interior edge of the visible region
      Face f;
      f.v = {a, b, eye};
      Vec3 n = cross(pts_[b] - pts_[a], pts_[eye] - pts_[a]);
      n = n * (1.0 / norm(n));
      f.normal = n;
      f.offset = dot(n, pts_[a]);
      faces_.push_back(std::move(f));
    }
    std::sort(orphans.begin(), orphans.end());
    for (std::size_t p : orphans) assign_outside(p, first_new, faces_.size());
  }

  std::span<const Vec3> pts_;
  std::vector<Face> faces_;
  Vec3 interior_;
  double eps_ = 0.0;
};

}  // namespace detail

inline ConvexHull convex_hull(std::span<const Vec3> points) {
  if (points.empty()) throw InvalidInput("convex_hull: no points");
  for (const auto& p : points) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
      throw InvalidInput("convex_hull: non-finite coordinate");
    }
  }
  return detail::QuickHull(points).run();
}

inline double convex_hull_volume(std::span<const Vec3> points) {
  return convex_hull(points).volume;
}

// ---------------------------------------------------------------------------
// Diagnosis

enum class Diagnosis { StrongConstraints, ExplorationStagnation, ManifoldExplosion };

inline std::string_view to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::StrongConstraints: return "StrongConstraints";
    case Diagnosis::ExplorationStagnation: return "ExplorationStagnation";
    case Diagnosis::ManifoldExplosion: return "ManifoldExplosion";
  }
  return "?";
}

struct VolumeThresholds {
  double v_low = 0.05;
  double v_high = 4.0;
};

inline Diagnosis diagnose(double volume, const VolumeThresholds& th = {}) {
  if (!(th.v_low < th.v_high)) throw InvalidInput("diagnose: v_low must be below v_high");
  if (volume < th.v_low) return Diagnosis::ExplorationStagnation;
  if (volume > th.v_high) return Diagnosis::ManifoldExplosion;
  return Diagnosis::StrongConstraints;
}

struct HullReport {
  std::string method_name;
  long convergence_step = 0;
  double volume = 0.0;
  std::size_t vertex_count = 0;
  std::vector<Vec3> vertices;
  std::vector<long> vertex_steps;
  bool degenerate = false;
  Diagnosis diagnosis = Diagnosis::ExplorationStagnation;
  VolumeThresholds thresholds;
  std::size_t point_count = 0;  // non-imputed points entering the hull
};

// Imputed points never become hull vertices.
inline HullReport hull_report(const PhaseTrajectory& traj, const VolumeThresholds& th = {}) {
  HullReport rep;
  rep.method_name = traj.method_name;
  rep.convergence_step = traj.convergence_step;
  rep.thresholds = th;
  std::vector<Vec3> pts;
  std::vector<long> steps;
  for (const auto& p : traj.points) {
    if (p.imputed) continue;
    pts.push_back(p.coords);
    steps.push_back(p.step);
  }
  rep.point_count = pts.size();
  if (pts.empty()) throw InvalidInput("hull_report: phase trajectory has no measured points");
  const ConvexHull hull = convex_hull(pts);
  rep.volume = hull.volume;
  rep.degenerate = hull.degenerate;
  for (std::size_t i : hull.vertices) {
    rep.vertices.push_back(pts[i]);
    rep.vertex_steps.push_back(steps[i]);
  }
  rep.vertex_count = rep.vertices.size();
  rep.diagnosis = diagnose(rep.volume, th);
  return rep;
}

}  // namespace entlens
