#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "maa/geometry.hpp"

// Structure topology discovery: which keypoints move rigidly together across a
// corpus of driving videos, and the weighted graph that results.

namespace maa::topology {

struct KeypointTrajectory {
  std::vector<KeypointSet> frames;
  std::string video_id;
};

// Mean absolute deviation of pairwise keypoint distances over all pooled frames.
struct DiversityMatrix {
  int K = 0;
  std::vector<double> v;  // K*K, row-major, symmetric, zero diagonal
  long frame_count = 0;

  double operator()(int i, int j) const { return v[static_cast<std::size_t>(i) * K + j]; }
  double& operator()(int i, int j) { return v[static_cast<std::size_t>(i) * K + j]; }

  std::vector<double> upper_triangle() const {
    std::vector<double> out;
    for (int i = 0; i < K; ++i)
      for (int j = i + 1; j < K; ++j) out.push_back((*this)(i, j));
    return out;
  }
};

inline DiversityMatrix distance_diversity(std::span<const KeypointTrajectory> trajectories) {
  require(!trajectories.empty(), "distance_diversity: need at least one trajectory");
  const int k = trajectories[0].frames.empty() ? 0 : trajectories[0].frames[0].size();
  long total = 0;
  for (const auto& tr : trajectories) {
    require(tr.frames.size() >= 2, "distance_diversity: trajectory '" + tr.video_id + "' has fewer than 2 frames");
    for (const auto& f : tr.frames) {
      require(f.size() == k, "distance_diversity: keypoint count differs across trajectories");
      require(f.all_finite(), "distance_diversity: non-finite keypoint in '" + tr.video_id + "'");
    }
    total += static_cast<long>(tr.frames.size());
  }
  require(k >= 2, "distance_diversity: need K >= 2");

  const std::size_t kk = static_cast<std::size_t>(k) * k;
  std::vector<double> mean(kk, 0.0);
  for (const auto& tr : trajectories)
    for (const auto& f : tr.frames)
      for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j) mean[static_cast<std::size_t>(i) * k + j] += distance(f[i], f[j]);
  for (auto& m : mean) m /= static_cast<double>(total);

  DiversityMatrix out{k, std::vector<double>(kk, 0.0), total};
  for (const auto& tr : trajectories)
    for (const auto& f : tr.frames)
      for (int i = 0; i < k; ++i)
        for (int j = i + 1; j < k; ++j)
          out(i, j) += std::abs(distance(f[i], f[j]) - mean[static_cast<std::size_t>(i) * k + j]);
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      out(i, j) /= static_cast<double>(total);
      out(j, i) = out(i, j);
    }
  return out;
}

struct Threshold {
  double eta = 0.0;
  bool degenerate = false;  // all diversities zero, or the percentile landed on zero
};

// Linear interpolation between closest ranks.
inline double percentile(std::vector<double> vals, double p) {
  require(!vals.empty(), "percentile: empty sample");
  require(p >= 0.0 && p <= 100.0, "percentile: p must lie in [0, 100]");
  std::sort(vals.begin(), vals.end());
  const double pos = p / 100.0 * static_cast<double>(vals.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, vals.size() - 1);
  return vals[lo] + (pos - static_cast<double>(lo)) * (vals[hi] - vals[lo]);
}

// Percentile of the off-diagonal diversities.
inline Threshold select_threshold(const DiversityMatrix& v, double percentile) {
  require(v.K >= 2, "select_threshold: need K >= 2");
  require(percentile > 0.0 && percentile < 100.0, "select_threshold: percentile must lie in (0, 100)");
  auto vals = v.upper_triangle();
  std::sort(vals.begin(), vals.end());
  const double eta = topology::percentile(vals, percentile);
  if (eta > 0.0) return {eta, false};
  // Everything at or below the percentile is rigid: admit exactly the zero pairs.
  auto first_positive = std::find_if(vals.begin(), vals.end(), [](double x) { return x > 0.0; });
  if (first_positive == vals.end()) return {std::numeric_limits<double>::denorm_min(), true};
  return {*first_positive, true};
}

// (v - eta)^2 / eta^2 below the threshold, zero otherwise. Written as a squared
// ratio so tiny eta does not underflow.
inline double edge_value(double v, double eta) {
  require(v >= 0.0 && eta > 0.0, "edge_value: need v >= 0 and eta > 0");
  if (v >= eta) return 0.0;
  const double r = (v - eta) / eta;
  return r * r;
}

struct Edge {
  int i = 0;  // i < j
  int j = 0;
  double weight = 0.0;
};

struct TopologyGraph {
  int K = 0;
  double eta = 0.0;
  std::vector<int> structured;
  std::vector<int> unstructured;
  std::vector<Edge> edges;  // sorted by (i, j)

  double edge(int a, int b) const {
    if (a > b) std::swap(a, b);
    for (const auto& e : edges)
      if (e.i == a && e.j == b) return e.weight;
    return 0.0;
  }

  std::vector<int> neighbors(int v) const {
    std::vector<int> out;
    for (const auto& e : edges) {
      if (e.i == v) out.push_back(e.j);
      if (e.j == v) out.push_back(e.i);
    }
    std::sort(out.begin(), out.end());
    return out;
  }
};

inline TopologyGraph build_topology(const DiversityMatrix& v, double eta) {
  require(eta > 0.0, "build_topology: eta must be positive");
  require(v.K >= 1 && v.v.size() == static_cast<std::size_t>(v.K) * v.K, "build_topology: malformed diversity matrix");
  const int k = v.K;
  std::vector<Edge> all;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double e = edge_value(v(i, j), eta);
      if (e > 0.0) all.push_back({i, j, e});
    }

  std::vector<int> parent(static_cast<std::size_t>(k));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) x = parent[static_cast<std::size_t>(x)];
    return x;
  };
  for (const auto& e : all) {
    const int a = find(e.i), b = find(e.j);
    if (a != b) parent[static_cast<std::size_t>(std::max(a, b))] = std::min(a, b);
  }

  struct Component {
    int root = 0, size = 0, min_index = 0;
    double weight = 0.0;
  };
  std::vector<Component> comps;
  std::vector<int> comp_of(static_cast<std::size_t>(k), -1);
  for (int i = 0; i < k; ++i) {
    const int r = find(i);
    if (comp_of[static_cast<std::size_t>(r)] < 0) {
      comp_of[static_cast<std::size_t>(r)] = static_cast<int>(comps.size());
      comps.push_back({r, 0, i, 0.0});
    }
    ++comps[static_cast<std::size_t>(comp_of[static_cast<std::size_t>(r)])].size;
  }
  for (const auto& e : all) comps[static_cast<std::size_t>(comp_of[static_cast<std::size_t>(find(e.i))])].weight += e.weight;

  const auto best = std::min_element(comps.begin(), comps.end(), [](const Component& a, const Component& b) {
    if (a.size != b.size) return a.size > b.size;
    if (a.weight != b.weight) return a.weight > b.weight;
    return a.min_index < b.min_index;
  });

  TopologyGraph g;
  g.K = k;
  g.eta = eta;
  const bool has_structure = best->size >= 2;
  for (int i = 0; i < k; ++i) {
    if (has_structure && find(i) == best->root)
      g.structured.push_back(i);
    else
      g.unstructured.push_back(i);
  }
  if (has_structure)
    for (const auto& e : all)
      if (find(e.i) == best->root) g.edges.push_back(e);
  return g;
}

struct StructuredTriplet {
  int vertex = 0;
  int arm_a = 0;  // arm_a < arm_b
  int arm_b = 0;
  double gamma = 0.0;
};

// Every pair of distinct neighbours around every structured vertex.
inline std::vector<StructuredTriplet> enumerate_structured_triplets(const TopologyGraph& g) {
  std::vector<StructuredTriplet> out;
  for (int i : g.structured) {
    const auto nb = g.neighbors(i);
    for (std::size_t a = 0; a < nb.size(); ++a)
      for (std::size_t b = a + 1; b < nb.size(); ++b)
        out.push_back({i, nb[a], nb[b], g.edge(i, nb[a]) * g.edge(i, nb[b])});
  }
  return out;
}

inline nlohmann::json to_json(const TopologyGraph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& e : g.edges) edges.push_back({e.i, e.j, e.weight});
  return {{"eta", g.eta}, {"structured", g.structured}, {"edges", edges}, {"unstructured", g.unstructured}, {"K", g.K}};
}

inline TopologyGraph topology_from_json(const nlohmann::json& j) {
  TopologyGraph g;
  try {
    g.K = j.at("K").get<int>();
    g.eta = j.at("eta").get<double>();
    g.structured = j.at("structured").get<std::vector<int>>();
    g.unstructured = j.at("unstructured").get<std::vector<int>>();
    for (const auto& e : j.at("edges")) {
      Edge edge{e.at(0).get<int>(), e.at(1).get<int>(), e.at(2).get<double>()};
      if (edge.i > edge.j) std::swap(edge.i, edge.j);
      g.edges.push_back(edge);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("topology JSON: ") + ex.what());
  }
  std::vector<int> seen(static_cast<std::size_t>(std::max(g.K, 0)), 0);
  for (int i : g.structured) {
    require(i >= 0 && i < g.K, "topology JSON: structured index out of range");
    ++seen[static_cast<std::size_t>(i)];
  }
  for (int i : g.unstructured) {
    require(i >= 0 && i < g.K, "topology JSON: unstructured index out of range");
    ++seen[static_cast<std::size_t>(i)];
  }
  for (int c : seen) require(c == 1, "topology JSON: structured/unstructured do not partition 0..K-1");
  for (const auto& e : g.edges) {
    require(e.i != e.j && e.i >= 0 && e.j < g.K, "topology JSON: bad edge endpoints");
    require(e.weight > 0.0 && e.weight <= 1.0, "topology JSON: edge weight outside (0, 1]");
  }
  std::sort(g.edges.begin(), g.edges.end(), [](const Edge& a, const Edge& b) { return std::tie(a.i, a.j) < std::tie(b.i, b.j); });
  return g;
}

}  // namespace maa::topology
