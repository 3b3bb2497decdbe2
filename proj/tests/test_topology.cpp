#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <set>

#include "maa/synthdata.hpp"
#include "maa/topology.hpp"

using namespace maa;
using namespace maa::topology;

namespace {

KeypointTrajectory traj(std::vector<std::vector<Point2>> frames, std::string id = "t") {
  KeypointTrajectory t;
  t.video_id = std::move(id);
  for (auto& f : frames) t.frames.push_back(KeypointSet{std::move(f)});
  return t;
}

DiversityMatrix matrix_from(int k, const std::vector<double>& upper) {
  DiversityMatrix m{k, std::vector<double>(static_cast<std::size_t>(k) * k, 0.0), 2};
  std::size_t n = 0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) m(i, j) = m(j, i) = upper[n++];
  return m;
}

// Ground-truth joint trajectories of rendered source-domain clips.
std::vector<KeypointTrajectory> stick_figure_corpus(int videos, int frames, std::uint64_t seed) {
  std::vector<KeypointTrajectory> out;
  for (int i = 0; i < videos; ++i) {
    const auto v = synth::make_video("v" + std::to_string(i), synth::Domain::Source, synth::mix_seed(seed, i), frames,
                                     false, synth::kDefaultSize);
    KeypointTrajectory t;
    t.video_id = v.id;
    for (const auto& j : v.joints) t.frames.push_back(synth::joints_to_keypoints(j, synth::kDefaultSize));
    out.push_back(std::move(t));
  }
  return out;
}

// Straight transcription of the pooled mean-absolute-deviation definition.
std::vector<std::vector<double>> diversity_oracle(const std::vector<KeypointTrajectory>& ts) {
  const int k = ts[0].frames[0].size();
  std::vector<std::vector<double>> v(k, std::vector<double>(k, 0.0));
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      if (i == j) continue;
      std::vector<double> d;
      for (const auto& t : ts)
        for (const auto& f : t.frames) d.push_back(std::hypot(f[i].x - f[j].x, f[i].y - f[j].y));
      double mean = 0;
      for (double x : d) mean += x;
      mean /= static_cast<double>(d.size());
      for (double x : d) v[i][j] += std::abs(x - mean);
      v[i][j] /= static_cast<double>(d.size());
    }
  return v;
}

std::set<std::pair<int, int>> bone_set() {
  std::set<std::pair<int, int>> s;
  for (const auto& b : synth::kSkeleton) s.insert({std::min(b.parent, b.child), std::max(b.parent, b.child)});
  return s;
}

std::set<std::pair<int, int>> edge_set(const TopologyGraph& g) {
  std::set<std::pair<int, int>> s;
  for (const auto& e : g.edges) s.insert({e.i, e.j});
  return s;
}

}  // namespace

TEST(DistanceDiversity, RigidMotionHasZeroDiversity) {
  auto t = traj({{{0, 0}, {1, 0}, {0, 2}}, {{0.5, 0.5}, {1.5, 0.5}, {0.5, 2.5}}, {{-1, 3}, {0, 3}, {-1, 5}}});
  const auto v = distance_diversity(std::span<const KeypointTrajectory>(&t, 1));
  for (double x : v.v) EXPECT_NEAR(x, 0.0, 1e-12);
  EXPECT_EQ(v.frame_count, 3);
}

TEST(DistanceDiversity, TwoFrameHandExample) {
  auto t = traj({{{0, 0}, {1, 0}, {5, 5}}, {{0, 0}, {3, 0}, {5, 5}}});
  const auto v = distance_diversity(std::span<const KeypointTrajectory>(&t, 1));
  EXPECT_NEAR(v(0, 1), 1.0, 1e-12);
  EXPECT_NEAR(v(1, 0), 1.0, 1e-12);
  EXPECT_EQ(v(0, 0), 0.0);
}

TEST(DistanceDiversity, RejectsBadInput) {
  std::vector<KeypointTrajectory> mixed = {traj({{{0, 0}, {1, 0}}, {{0, 0}, {1, 1}}}),
                                           traj({{{0, 0}, {1, 0}, {2, 2}}, {{0, 0}, {1, 1}, {2, 2}}})};
  EXPECT_THROW(distance_diversity(mixed), InputError);
  auto nan = traj({{{0, 0}, {std::nan(""), 0}}, {{0, 0}, {1, 1}}});
  EXPECT_THROW(distance_diversity(std::span<const KeypointTrajectory>(&nan, 1)), InputError);
  auto single = traj({{{0, 0}, {1, 0}}});
  EXPECT_THROW(distance_diversity(std::span<const KeypointTrajectory>(&single, 1)), InputError);
}

TEST(DistanceDiversity, TranslationRotationInvariantScaleLinear) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<KeypointTrajectory> base, moved, scaled;
  for (int v = 0; v < 3; ++v) {
    std::vector<std::vector<Point2>> a, b, c;
    for (int f = 0; f < 6; ++f) {
      const double th = u(rng) * std::numbers::pi, tx = u(rng), ty = u(rng);
      std::vector<Point2> fa, fb, fc;
      for (int k = 0; k < 5; ++k) {
        const Point2 p{u(rng), u(rng)};
        fa.push_back(p);
        fb.push_back({std::cos(th) * p.x - std::sin(th) * p.y + tx, std::sin(th) * p.x + std::cos(th) * p.y + ty});
        fc.push_back({2.5 * p.x, 2.5 * p.y});
      }
      a.push_back(fa);
      b.push_back(fb);
      c.push_back(fc);
    }
    base.push_back(traj(a));
    moved.push_back(traj(b));
    scaled.push_back(traj(c));
  }
  const auto va = distance_diversity(base), vb = distance_diversity(moved), vc = distance_diversity(scaled);
  for (std::size_t i = 0; i < va.v.size(); ++i) {
    EXPECT_NEAR(va.v[i], vb.v[i], 1e-12);
    EXPECT_NEAR(2.5 * va.v[i], vc.v[i], 1e-12);
  }
}

TEST(DistanceDiversity, MatchesPooledOracleOnStickFigures) {
  const auto corpus = stick_figure_corpus(10, 60, 77);
  const auto v = distance_diversity(corpus);
  const auto o = diversity_oracle(corpus);
  for (int i = 0; i < v.K; ++i)
    for (int j = 0; j < v.K; ++j) EXPECT_NEAR(v(i, j), o[i][j], 1e-12) << i << "," << j;
}

TEST(DistanceDiversity, BonesAreStrictlyMoreRigidThanOtherPairs) {
  const auto v = distance_diversity(stick_figure_corpus(10, 60, 77));
  const auto bones = bone_set();
  double worst_bone = 0, best_other = std::numeric_limits<double>::infinity();
  for (int i = 0; i < v.K; ++i)
    for (int j = i + 1; j < v.K; ++j) {
      if (bones.count({i, j}))
        worst_bone = std::max(worst_bone, v(i, j));
      else
        best_other = std::min(best_other, v(i, j));
    }
  EXPECT_LT(worst_bone, best_other);
}

TEST(SelectThreshold, LinearInterpolation) {
  EXPECT_NEAR(percentile({4, 1, 3, 2}, 25), 1.75, 1e-12);
  auto m = matrix_from(4, {6, 1, 5, 2, 4, 3});
  EXPECT_NEAR(select_threshold(m, 25).eta, 2.25, 1e-12);
  EXPECT_NEAR(select_threshold(m, 50).eta, 3.5, 1e-12);
}

TEST(SelectThreshold, ConstantDistribution) {
  auto m = matrix_from(4, std::vector<double>(6, 0.7));
  for (double p : {1.0, 20.0, 50.0, 99.0}) {
    const auto t = select_threshold(m, p);
    EXPECT_NEAR(t.eta, 0.7, 1e-15);
    EXPECT_FALSE(t.degenerate);
  }
}

TEST(SelectThreshold, AllZeroIsDegenerate) {
  auto m = matrix_from(3, {0, 0, 0});
  const auto t = select_threshold(m, 20);
  EXPECT_TRUE(t.degenerate);
  EXPECT_GT(t.eta, 0.0);
  EXPECT_EQ(build_topology(m, t.eta).structured.size(), 3u);
}

TEST(SelectThreshold, RejectsBadArguments) {
  auto m = matrix_from(3, {1, 2, 3});
  EXPECT_THROW(select_threshold(m, 0), InputError);
  EXPECT_THROW(select_threshold(m, 100), InputError);
  DiversityMatrix tiny{1, {0.0}, 2};
  EXPECT_THROW(select_threshold(tiny, 20), InputError);
}

TEST(EdgeValue, SpotValues) {
  for (double eta : {0.01, 1.0, 3.7}) {
    EXPECT_NEAR(edge_value(0.0, eta), 1.0, 1e-12);
    EXPECT_NEAR(edge_value(eta / 2, eta), 0.25, 1e-12);
    EXPECT_EQ(edge_value(eta, eta), 0.0);
    EXPECT_EQ(edge_value(2 * eta, eta), 0.0);
  }
  EXPECT_THROW(edge_value(-1.0, 1.0), InputError);
  EXPECT_THROW(edge_value(1.0, 0.0), InputError);
}

TEST(EdgeValue, MonotoneAndBounded) {
  double prev = 2.0;
  for (int i = 0; i <= 1000; ++i) {
    const double v = edge_value(i * 0.0015, 1.2);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(BuildTopology, ChainPlusIsolated) {
  // v small on (0,1), (1,2); large elsewhere.
  DiversityMatrix m{5, std::vector<double>(25, 10.0), 2};
  for (int i = 0; i < 5; ++i) m(i, i) = 0;
  m(0, 1) = m(1, 0) = 0.1;
  m(1, 2) = m(2, 1) = 0.2;
  const auto g = build_topology(m, 1.0);
  EXPECT_EQ(g.structured, (std::vector<int>{0, 1, 2}));
  EXPECT_EQ(g.unstructured, (std::vector<int>{3, 4}));
  ASSERT_EQ(g.edges.size(), 2u);
  EXPECT_NEAR(g.edge(0, 1), 0.81, 1e-12);
  EXPECT_NEAR(g.edge(2, 1), 0.64, 1e-12);
}

TEST(BuildTopology, LargerComponentWins) {
  DiversityMatrix m{5, std::vector<double>(25, 10.0), 2};
  for (int i = 0; i < 5; ++i) m(i, i) = 0;
  m(0, 1) = m(1, 0) = 0.0;
  m(2, 3) = m(3, 2) = 0.5;
  m(3, 4) = m(4, 3) = 0.5;
  const auto g = build_topology(m, 1.0);
  EXPECT_EQ(g.structured, (std::vector<int>{2, 3, 4}));
  EXPECT_EQ(g.unstructured, (std::vector<int>{0, 1}));
}

TEST(BuildTopology, TiesBreakByWeightThenIndex) {
  DiversityMatrix m{4, std::vector<double>(16, 10.0), 2};
  for (int i = 0; i < 4; ++i) m(i, i) = 0;
  m(0, 1) = m(1, 0) = 0.5;
  m(2, 3) = m(3, 2) = 0.1;
  EXPECT_EQ(build_topology(m, 1.0).structured, (std::vector<int>{2, 3}));
  m(2, 3) = m(3, 2) = 0.5;
  EXPECT_EQ(build_topology(m, 1.0).structured, (std::vector<int>{0, 1}));
}

TEST(BuildTopology, NoEdgesMeansNoStructure) {
  DiversityMatrix m{3, std::vector<double>(9, 10.0), 2};
  for (int i = 0; i < 3; ++i) m(i, i) = 0;
  const auto g = build_topology(m, 1.0);
  EXPECT_TRUE(g.structured.empty());
  EXPECT_EQ(g.unstructured, (std::vector<int>{0, 1, 2}));
  EXPECT_TRUE(g.edges.empty());
}

// Exhaustive reference: BFS components, then explicit comparison of every pair.
TEST(BuildTopology, MatchesExhaustiveComponentSearch) {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const int k = 2 + static_cast<int>(rng() % 7);
    DiversityMatrix m{k, std::vector<double>(static_cast<std::size_t>(k) * k, 0.0), 2};
    std::uniform_int_distribution<int> q(0, 5);
    for (int i = 0; i < k; ++i)
      for (int j = i + 1; j < k; ++j) m(i, j) = m(j, i) = q(rng) * 0.25;  // coarse values force ties
    const double eta = 0.6;
    std::vector<std::vector<int>> adj(k);
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < k; ++j)
        if (i != j && m(i, j) < eta) adj[i].push_back(j);
    std::vector<int> comp(k, -1);
    std::vector<std::vector<int>> comps;
    for (int s = 0; s < k; ++s) {
      if (comp[s] >= 0) continue;
      std::vector<int> members, stack{s};
      comp[s] = static_cast<int>(comps.size());
      while (!stack.empty()) {
        const int x = stack.back();
        stack.pop_back();
        members.push_back(x);
        for (int y : adj[x])
          if (comp[y] < 0) {
            comp[y] = comp[s];
            stack.push_back(y);
          }
      }
      std::sort(members.begin(), members.end());
      comps.push_back(members);
    }
    auto weight = [&](const std::vector<int>& c) {
      double w = 0;
      for (int a : c)
        for (int b : c)
          if (a < b && m(a, b) < eta) w += (m(a, b) - eta) * (m(a, b) - eta) / (eta * eta);
      return w;
    };
    std::size_t best = 0;
    for (std::size_t c = 1; c < comps.size(); ++c) {
      const auto& a = comps[c];
      const auto& b = comps[best];
      if (a.size() > b.size() || (a.size() == b.size() && (weight(a) > weight(b) || (weight(a) == weight(b) && a[0] < b[0]))))
        best = c;
    }
    const auto g = build_topology(m, eta);
    const std::vector<int> expect = comps[best].size() >= 2 ? comps[best] : std::vector<int>{};
    ASSERT_EQ(g.structured, expect) << "trial " << trial;
    std::vector<int> all = g.structured;
    all.insert(all.end(), g.unstructured.begin(), g.unstructured.end());
    std::sort(all.begin(), all.end());
    for (int i = 0; i < k; ++i) ASSERT_EQ(all[i], i);
    for (const auto& e : g.edges) {
      EXPECT_GT(e.weight, 0.0);
      EXPECT_LE(e.weight, 1.0);
      EXPECT_EQ(comp[e.i], static_cast<int>(best));
    }
  }
}

TEST(StickFigure, DefaultPercentileRecoversTheNineBones) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto corpus = stick_figure_corpus(10, 60, 2024);
  const auto v = distance_diversity(corpus);
  const auto th = select_threshold(v, 20.0);
  const auto g = build_topology(v, th.eta);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_FALSE(th.degenerate);
  EXPECT_EQ(g.structured.size(), 10u);
  EXPECT_TRUE(g.unstructured.empty());
  EXPECT_EQ(edge_set(g), bone_set());
  EXPECT_LT(secs, 10.0);
}

TEST(StickFigure, QuarterPercentileAdmitsExtraPairs) {
  const auto v = distance_diversity(stick_figure_corpus(10, 60, 2024));
  const auto g = build_topology(v, select_threshold(v, 25.0).eta);
  EXPECT_EQ(g.edges.size(), 11u);
  for (const auto& b : bone_set()) EXPECT_GT(g.edge(b.first, b.second), 0.0);
}

TEST(Triplets, PathAndStar) {
  TopologyGraph path{3, 1.0, {0, 1, 2}, {}, {{0, 1, 0.5}, {1, 2, 0.4}}};
  const auto tp = enumerate_structured_triplets(path);
  ASSERT_EQ(tp.size(), 1u);
  EXPECT_EQ(tp[0].vertex, 1);
  EXPECT_EQ(tp[0].arm_a, 0);
  EXPECT_EQ(tp[0].arm_b, 2);
  EXPECT_NEAR(tp[0].gamma, 0.2, 1e-15);

  TopologyGraph star{4, 1.0, {0, 1, 2, 3}, {}, {{0, 1, 1.0}, {0, 2, 1.0}, {0, 3, 1.0}}};
  const auto ts = enumerate_structured_triplets(star);
  ASSERT_EQ(ts.size(), 3u);
  for (const auto& t : ts) EXPECT_EQ(t.vertex, 0);
}

TEST(Triplets, SkeletonCountMatchesDegreeFormula) {
  TopologyGraph g;
  g.K = synth::kJoints;
  g.eta = 1.0;
  for (int i = 0; i < g.K; ++i) g.structured.push_back(i);
  for (const auto& b : bone_set()) g.edges.push_back({b.first, b.second, 0.5});
  std::vector<int> deg(g.K, 0);
  for (const auto& e : g.edges) ++deg[e.i], ++deg[e.j];
  std::size_t brute = 0;
  for (int i = 0; i < g.K; ++i)
    for (int a = 0; a < g.K; ++a)
      for (int b = a + 1; b < g.K; ++b)
        if (a != i && b != i && g.edge(i, a) > 0 && g.edge(i, b) > 0) ++brute;
  std::size_t formula = 0;
  for (int d : deg) formula += static_cast<std::size_t>(d * (d - 1) / 2);
  const auto ts = enumerate_structured_triplets(g);
  EXPECT_EQ(ts.size(), brute);
  EXPECT_EQ(ts.size(), formula);
  EXPECT_EQ(ts.size(), 10u);
  for (std::size_t i = 1; i < ts.size(); ++i)
    EXPECT_TRUE(std::tie(ts[i - 1].vertex, ts[i - 1].arm_a, ts[i - 1].arm_b) <
                std::tie(ts[i].vertex, ts[i].arm_a, ts[i].arm_b));
}

TEST(TopologyJson, RoundTripAndValidation) {
  TopologyGraph g{4, 0.3, {0, 1, 2}, {3}, {{0, 1, 0.5}, {1, 2, 0.25}}};
  const auto j = to_json(g);
  const auto back = topology_from_json(j);
  EXPECT_EQ(back.K, 4);
  EXPECT_EQ(back.structured, g.structured);
  EXPECT_EQ(back.unstructured, g.unstructured);
  ASSERT_EQ(back.edges.size(), 2u);
  EXPECT_EQ(back.edges[1].weight, 0.25);
  auto bad = j;
  bad["unstructured"] = nlohmann::json::array();
  EXPECT_THROW(topology_from_json(bad), InputError);
  bad = j;
  bad.erase("eta");
  EXPECT_THROW(topology_from_json(bad), InputError);
}
