#pragma once

// Soft-DTW and time-series k-means over variable-length entropy trajectories.
//
// soft_dtw uses the recursion
//   r(i, j) = (x_i - y_j)^2 + softmin_gamma(r(i-1, j-1), r(i-1, j), r(i, j-1))
//   softmin_gamma(a, b, c) = -gamma * ln(e^{-a/gamma} + e^{-b/gamma} + e^{-c/gamma})
// and degenerates to classical DTW (hard min) when gamma == 0.
//
// K-means assigns raw trajectories to centroids by soft-DTW. Centroids live on
// a fixed grid of L samples and are updated as the mean of the members'
// resampled curves; an update that would raise a cluster's total distance is
// rejected, which keeps inertia non-increasing between iterations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "entlens/errors.hpp"
#include "entlens/seeding.hpp"
#include "entlens/trace_ingest.hpp"

namespace entlens {

struct SoftDtwParams {
  double gamma = 0.1;
};

namespace detail {

template <typename T>
T softmin3(T a, T b, T c, T gamma) {
  const T lo = std::min({a, b, c});
  if (gamma == T(0) || !std::isfinite(lo)) return lo;
  T s = T(0);
  for (T v : {a, b, c}) {
    if (std::isfinite(v)) s += std::exp(-(v - lo) / gamma);
  }
  return lo - gamma * std::log(s);
}

}  // namespace detail

template <typename T>
T soft_dtw(std::span<const T> x, std::span<const T> y, T gamma) {
  if (x.empty() || y.empty()) throw InvalidInput("soft_dtw: empty sequence");
  if (gamma < T(0) || !std::isfinite(gamma)) throw InvalidInput("soft_dtw: gamma must be >= 0");
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  const T inf = std::numeric_limits<T>::infinity();
  // Two rolling rows of the (n+1) x (m+1) table.
  std::vector<T> prev(m + 1, inf), cur(m + 1, inf);
  prev[0] = T(0);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = inf;
    for (std::size_t j = 1; j <= m; ++j) {
      const T d = (x[i - 1] - y[j - 1]) * (x[i - 1] - y[j - 1]);
      cur[j] = d + detail::softmin3(prev[j - 1], prev[j], cur[j - 1], gamma);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

inline double soft_dtw(std::span<const double> x, std::span<const double> y,
                       const SoftDtwParams& params) {
  return soft_dtw<double>(x, y, params.gamma);
}

// Linear interpolation onto L equally spaced times over [min t_hat, max t_hat].
inline std::vector<double> resample(const EntropyTrajectory& traj, std::size_t L) {
  if (L < 2) throw InvalidInput("resample: L must be >= 2");
  if (traj.points.empty()) throw InvalidInput("resample: empty trajectory");
  const auto& pts = traj.points;
  std::vector<double> out(L, pts.front().entropy);
  if (pts.size() == 1) return out;
  const double t0 = pts.front().t_hat;
  const double t1 = pts.back().t_hat;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < L; ++i) {
    const double t = i + 1 == L ? t1 : t0 + (t1 - t0) * static_cast<double>(i) /
                                                static_cast<double>(L - 1);
    while (seg + 2 < pts.size() && pts[seg + 1].t_hat <= t) ++seg;
    const auto& a = pts[seg];
    const auto& b = pts[seg + 1];
    const double span = b.t_hat - a.t_hat;
    if (t <= a.t_hat || span <= 0.0) {
      out[i] = a.entropy;
    } else if (t >= b.t_hat) {
      out[i] = b.entropy;
    } else {
      const double w = (t - a.t_hat) / span;
      out[i] = a.entropy + w * (b.entropy - a.entropy);
    }
  }
  return out;
}

struct ClusterModel {
  std::size_t k = 0;
  std::vector<std::vector<double>> centroids;
  std::vector<Anchor> anchors;      // same order as the fitted trajectories
  std::vector<int> assignments;     // cluster per trajectory
  std::vector<double> distances;    // soft-DTW to the assigned centroid
  double inertia = 0.0;
  std::vector<double> inertia_history;  // after every assignment sweep
  std::size_t iterations = 0;
  std::size_t reseeds = 0;

  std::map<Anchor, int> assignment_map() const {
    std::map<Anchor, int> out;
    for (std::size_t i = 0; i < anchors.size(); ++i) out.emplace(anchors[i], assignments[i]);
    return out;
  }

  double centroid_mean(std::size_t c) const {
    const auto& v = centroids.at(c);
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  }

  std::size_t cluster_size(std::size_t c) const {
    return static_cast<std::size_t>(
        std::count(assignments.begin(), assignments.end(), static_cast<int>(c)));
  }

  friend bool operator==(const ClusterModel&, const ClusterModel&) = default;
};

struct KMeansOptions {
  std::size_t k = 3;
  SoftDtwParams dtw;
  std::size_t resample_len = 32;
  std::size_t max_iter = 50;
  std::uint64_t seed = 7;
};

namespace detail {

struct Sweep {
  std::vector<int> assign;
  std::vector<double> dist;
  double inertia = 0.0;
};

inline Sweep assign_all(const std::vector<std::vector<double>>& raw,
                        const std::vector<std::vector<double>>& centroids,
                        const SoftDtwParams& p) {
  Sweep s;
  s.assign.resize(raw.size());
  s.dist.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = 0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = soft_dtw(raw[i], centroids[c], p);
      if (d < best) {
        best = d;
        arg = static_cast<int>(c);
      }
    }
    s.assign[i] = arg;
    s.dist[i] = best;
  }
  return s;
}

// Every empty cluster takes over the worst-fitting trajectory of a cluster
// that can spare one (ties to the lowest index).
inline std::size_t repair_empty(Sweep& s, const std::vector<std::vector<double>>& raw,
                                const std::vector<std::vector<double>>& resampled,
                                std::vector<std::vector<double>>& centroids,
                                const SoftDtwParams& p) {
  std::size_t repaired = 0;
  for (std::size_t c = 0; c < centroids.size(); ++c) {
    std::vector<std::size_t> sizes(centroids.size(), 0);
    for (int a : s.assign) ++sizes[static_cast<std::size_t>(a)];
    if (sizes[c] > 0) continue;
    std::size_t far = raw.size();
    for (std::size_t i = 0; i < raw.size(); ++i) {
      if (sizes[static_cast<std::size_t>(s.assign[i])] < 2) continue;
      if (far == raw.size() || s.dist[i] > s.dist[far]) far = i;
    }
    if (far == raw.size()) break;  // cannot happen when n >= k
    centroids[c] = resampled[far];
    s.assign[far] = static_cast<int>(c);
    s.dist[far] = soft_dtw(raw[far], centroids[c], p);
    ++repaired;
  }
  s.inertia = std::accumulate(s.dist.begin(), s.dist.end(), 0.0);
  return repaired;
}

}  // namespace detail

inline ClusterModel ts_kmeans(const std::vector<EntropyTrajectory>& trajs,
                              const KMeansOptions& opt) {
  const std::size_t n = trajs.size();
  const std::size_t k = opt.k;
  if (k < 1) throw InvalidInput("ts_kmeans: k must be >= 1");
  if (n < k) {
    throw InvalidInput("ts_kmeans: " + std::to_string(n) + " trajectories for k = " +
                       std::to_string(k));
  }
  const SoftDtwParams& p = opt.dtw;

  std::vector<std::vector<double>> raw, resampled;
  raw.reserve(n);
  resampled.reserve(n);
  for (const auto& t : trajs) {
    raw.push_back(t.values());
    resampled.push_back(resample(t, opt.resample_len));
  }

  // k-means++ seeding on the resampled curves.
  Rng rng(opt.seed);
  std::vector<std::vector<double>> centroids;
  std::vector<bool> taken(n, false);
  std::size_t first = static_cast<std::size_t>(rng.below(n));
  centroids.push_back(resampled[first]);
  taken[first] = true;
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = std::max(0.0, soft_dtw(resampled[i], centroids.back(), p));
      nearest[i] = std::min(nearest[i], d);
      if (!taken[i]) total += nearest[i] * nearest[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (taken[i]) continue;
        acc += nearest[i] * nearest[i];
        if (u < acc) {
          pick = i;
          break;
        }
      }
      if (pick == n) {
        for (std::size_t i = n; i-- > 0;) {
          if (!taken[i] && nearest[i] > 0.0) {
            pick = i;
            break;
          }
        }
      }
    } else {
      for (std::size_t i = 0; i < n && pick == n; ++i) {
        if (!taken[i]) pick = i;
      }
    }
    taken[pick] = true;
    centroids.push_back(resampled[pick]);
  }

  ClusterModel model;
  model.k = k;
  detail::Sweep sweep = detail::assign_all(raw, centroids, p);
  model.reseeds += detail::repair_empty(sweep, raw, resampled, centroids, p);
  model.inertia_history.push_back(sweep.inertia);

  for (std::size_t it = 0; it < opt.max_iter; ++it) {
    model.iterations = it + 1;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> mean(opt.resample_len, 0.0);
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sweep.assign[i] != static_cast<int>(c)) continue;
        for (std::size_t j = 0; j < mean.size(); ++j) mean[j] += resampled[i][j];
        ++count;
      }
      if (count == 0) continue;
      for (double& v : mean) v /= static_cast<double>(count);
      double before = 0.0, after = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (sweep.assign[i] != static_cast<int>(c)) continue;
        before += sweep.dist[i];
        after += soft_dtw(raw[i], mean, p);
      }
      if (after <= before) centroids[c] = std::move(mean);
    }
    detail::Sweep next = detail::assign_all(raw, centroids, p);
    model.reseeds += detail::repair_empty(next, raw, resampled, centroids, p);
    model.inertia_history.push_back(next.inertia);
    const bool stable = next.assign == sweep.assign;
    sweep = std::move(next);
    if (stable) break;
  }

  model.centroids = std::move(centroids);
  model.assignments = std::move(sweep.assign);
  model.distances = std::move(sweep.dist);
  model.inertia = sweep.inertia;
  for (const auto& t : trajs) model.anchors.push_back(t.anchor);
  return model;
}

// ---------------------------------------------------------------------------
// Semantic labels

enum class SemanticRole { Execution, Logic, Thinking };

inline std::string_view to_string(SemanticRole r) {
  switch (r) {
    case SemanticRole::Execution: return "Execution";
    case SemanticRole::Logic: return "Logic";
    case SemanticRole::Thinking: return "Thinking";
  }
  return "?";
}

struct SemanticLabeling {
  std::array<SemanticRole, 3> role_of_cluster{};
  std::array<int, 3> cluster_of_role{};  // indexed by SemanticRole
  bool tie = false;  // two centroid means compared equal; broken by cluster index

  int cluster(SemanticRole r) const { return cluster_of_role[static_cast<std::size_t>(r)]; }
};

// Clusters ranked by centroid mean (ascending), ties by index.
inline std::vector<int> rank_clusters(const ClusterModel& model, bool* tie = nullptr) {
  std::vector<int> order(model.k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return model.centroid_mean(static_cast<std::size_t>(a)) <
           model.centroid_mean(static_cast<std::size_t>(b));
  });
  if (tie) {
    *tie = false;
    for (std::size_t i = 1; i < order.size(); ++i) {
      if (model.centroid_mean(static_cast<std::size_t>(order[i - 1])) ==
          model.centroid_mean(static_cast<std::size_t>(order[i]))) {
        *tie = true;
      }
    }
  }
  return order;
}

inline SemanticLabeling order_clusters(const ClusterModel& model) {
  if (model.k != 3 || model.centroids.size() != 3) {
    throw InvalidInput("order_clusters: semantic labels need exactly 3 clusters");
  }
  SemanticLabeling out;
  const auto order = rank_clusters(model, &out.tie);
  for (std::size_t rank = 0; rank < 3; ++rank) {
    const auto role = static_cast<SemanticRole>(rank);
    out.cluster_of_role[rank] = order[rank];
    out.role_of_cluster[static_cast<std::size_t>(order[rank])] = role;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Core samples

struct CoreSample {
  Anchor anchor;
  double distance = 0.0;
  std::size_t occurrences = 0;
};

// Per cluster: the ceil(fraction * n) members closest to the centroid, then
// ranked by how often the anchor occurs in the trace.
inline std::map<int, std::vector<CoreSample>> core_samples(
    const ClusterModel& model, const std::vector<EntropyTrajectory>& trajs, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw InvalidInput("core_samples: fraction must be in (0, 1]");
  }
  if (trajs.size() != model.assignments.size()) {
    throw InvalidInput("core_samples: trajectories do not match the model");
  }
  std::map<int, std::vector<CoreSample>> out;
  for (std::size_t c = 0; c < model.k; ++c) {
    std::vector<CoreSample> members;
    for (std::size_t i = 0; i < trajs.size(); ++i) {
      if (model.assignments[i] != static_cast<int>(c)) continue;
      members.push_back({trajs[i].anchor, model.distances[i], trajs[i].occurrences});
    }
    std::stable_sort(members.begin(), members.end(), [](const CoreSample& a, const CoreSample& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.anchor < b.anchor);
    });
    const auto keep = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(members.size()) - 1e-12));
    members.resize(std::min(keep, members.size()));
    std::stable_sort(members.begin(), members.end(), [](const CoreSample& a, const CoreSample& b) {
      return a.occurrences > b.occurrences;
    });
    out.emplace(static_cast<int>(c), std::move(members));
  }
  return out;
}

struct TokenCount {
  std::string token;
  std::size_t count = 0;
};

// Token strings of a core-sample list, summed over prompts, most frequent first.
inline std::vector<TokenCount> top_tokens(const std::vector<CoreSample>& core, std::size_t limit) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : core) counts[s.anchor.token] += s.occurrences;
  std::vector<TokenCount> out;
  for (const auto& [tok, n] : counts) out.push_back({tok, n});
  std::stable_sort(out.begin(), out.end(),
                   [](const TokenCount& a, const TokenCount& b) { return a.count > b.count; });
  if (out.size() > limit) out.resize(limit);
  return out;
}

}  // namespace entlens
