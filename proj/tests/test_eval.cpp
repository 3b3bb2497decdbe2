#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <numbers>
#include <numeric>
#include <random>

#include "maa/eval.hpp"

using namespace maa;
using namespace maa::eval;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("maa_eval_" + name);
  std::filesystem::remove_all(p);
  return p;
}

double assignment_cost(const std::vector<std::vector<double>>& c, const std::vector<int>& a) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += c[i][static_cast<std::size_t>(a[i])];
  return s;
}

Image solid(int size, synth::Rgb c) {
  Image img(size, size, 0.0f);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int ch = 0; ch < 3; ++ch) img(y, x, ch) = c[ch];
  return img;
}

EvalReport make_report(const std::string& name, double pose, double palette) {
  EvalReport r;
  r.configuration = name;
  r.pose_angle_mae = pose;
  r.appearance_palette_distance = palette;
  return r;
}

synth::Dataset small_dataset() {
  synth::DatasetConfig c;
  c.source_videos = 1;
  c.frames_per_video = 2;
  c.target_images = 1;
  c.test_source_videos = 2;
  c.test_frames_per_video = 5;
  c.test_target_images = 3;
  c.seed = 4;
  return synth::make_dataset(c);
}

}  // namespace

TEST(Hungarian, MatchesBruteForce) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 10);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 1 + trial % 7;
    std::vector<std::vector<double>> c(n, std::vector<double>(n));
    for (auto& r : c)
      for (auto& v : r) v = trial % 3 == 0 ? std::round(u(rng)) : u(rng);
    const auto a = hungarian(c);
    std::vector<int> seen = a;
    std::sort(seen.begin(), seen.end());
    std::vector<int> ident(n);
    std::iota(ident.begin(), ident.end(), 0);
    ASSERT_EQ(seen, ident);
    double best = std::numeric_limits<double>::infinity();
    std::vector<int> perm = ident;
    do best = std::min(best, assignment_cost(c, perm));
    while (std::next_permutation(perm.begin(), perm.end()));
    EXPECT_NEAR(assignment_cost(c, a), best, 1e-9);
  }
  EXPECT_THROW(hungarian({{1, 2}, {3}}), InputError);
}

TEST(EdgeRecovery, PerfectKeypointsRecoverTheSkeleton) {
  const auto bones = skeleton_bones();
  ASSERT_EQ(bones.size(), 9u);
  std::vector<Point2> joints;
  for (int j = 0; j < synth::kJoints; ++j) joints.push_back({std::cos(j * 1.3), std::sin(j * 0.7) + 0.1 * j});
  // Keypoints are a shuffled copy of the joints.
  const std::vector<int> perm = {4, 9, 0, 7, 2, 5, 8, 1, 3, 6};
  std::vector<Point2> kp(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) kp[k] = joints[static_cast<std::size_t>(perm[k])];
  topology::TopologyGraph g;
  g.K = 10;
  auto index_of = [&](int joint) { return static_cast<int>(std::find(perm.begin(), perm.end(), joint) - perm.begin()); };
  for (const auto& [a, b] : bones) g.edges.push_back({index_of(a), index_of(b), 0.1});
  auto r = edge_recovery(g, kp, joints, bones);
  EXPECT_EQ(r.precision, 1.0);
  EXPECT_EQ(r.recall, 1.0);
  for (std::size_t k = 0; k < perm.size(); ++k) EXPECT_EQ(r.assignment[k], perm[k]);
  g.edges.resize(6);
  g.edges.push_back({index_of(0), index_of(9), 0.1});
  r = edge_recovery(g, kp, joints, bones);
  EXPECT_NEAR(r.recall, 6.0 / 9.0, 1e-15);
  EXPECT_NEAR(r.precision, 6.0 / 7.0, 1e-15);
}

TEST(AngleError, WrapsAroundTheCircle) {
  constexpr double pi = std::numbers::pi;
  EXPECT_NEAR(angle_error(0.1, -0.2), 0.3, 1e-15);
  EXPECT_NEAR(angle_error(pi - 0.05, -pi + 0.05), 0.1, 1e-12);
  EXPECT_NEAR(angle_error(0.0, 4 * pi + 0.25), 0.25, 1e-12);
  EXPECT_NEAR(angle_error(0.0, pi), pi, 1e-15);
}

TEST(Palette, HistogramAndChiSquare) {
  const Image red = solid(8, {0.9f, 0.1f, 0.1f}), blue = solid(8, {0.1f, 0.1f, 0.9f});
  const auto hr = color_histogram(red), hb = color_histogram(blue);
  EXPECT_DOUBLE_EQ(std::accumulate(hr.begin(), hr.end(), 0.0), 1.0);
  EXPECT_EQ(hr[3 * 16 + 0 * 4 + 0], 1.0);
  EXPECT_EQ(chi_square(hr, hr), 0.0);
  EXPECT_DOUBLE_EQ(chi_square(hr, hb), 1.0);
  // Half red, half blue against pure red: 0.5 * (0.25/1.5 + 0.25/0.5).
  Image half = red;
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) half(y, x, c) = blue(y, x, c);
  EXPECT_NEAR(chi_square(color_histogram(half), hr), 0.5 * (0.25 / 1.5 + 0.25 / 0.5), 1e-15);
  EXPECT_DOUBLE_EQ(chi_square(hr, color_histogram(half)), chi_square(color_histogram(half), hr));
  EXPECT_THROW(chi_square({1.0}, {0.5, 0.5}), InputError);
}

TEST(Palette, SelfDistanceIsZeroAndDisjointIsOne) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(64, 64, 0.0f);
  for (auto& v : img.pixels) v = u(rng);
  const KeypointSet kp{{{0.1, -0.3}, {0.7, 0.7}, {-0.9, 0.2}}};
  EXPECT_EQ(palette_distance(img, kp, img, kp, 16), 0.0);
  const Image red = solid(64, {0.9f, 0.1f, 0.1f}), blue = solid(64, {0.1f, 0.1f, 0.9f});
  EXPECT_DOUBLE_EQ(palette_distance(red, kp, blue, kp, 16), 1.0);
  EXPECT_THROW(palette_distance(red, kp, blue, KeypointSet{{{0, 0}}}, 16), InputError);
}

TEST(Report, AggregatesSeedsInCanonicalOrder) {
  std::vector<EvalReport> reports = {make_report("baseline", 0.9, 0.5), make_report("full", 0.2, 0.1),
                                     make_report("no-sima", 0.5, 0.2),  make_report("full", 0.4, 0.3),
                                     make_report("zeta", 1.0, 1.0),     make_report("alpha", 1.0, 1.0),
                                     make_report("no-cyc", 0.3, 0.3)};
  const auto rows = aggregate(reports);
  std::vector<std::string> names;
  for (const auto& r : rows) names.push_back(r.configuration);
  EXPECT_EQ(names, (std::vector<std::string>{"full", "no-cyc", "no-sima", "baseline", "alpha", "zeta"}));
  EXPECT_EQ(rows[0].runs, 2);
  EXPECT_NEAR(rows[0].pose_angle_mae, 0.3, 1e-15);
  EXPECT_NEAR(rows[0].appearance_palette_distance, 0.2, 1e-15);
  std::mt19937_64 rng(3);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(reports.begin(), reports.end(), rng);
    const auto again = aggregate(reports);
    ASSERT_EQ(again.size(), rows.size());
    for (std::size_t k = 0; k < rows.size(); ++k) {
      EXPECT_EQ(again[k].configuration, rows[k].configuration);
      EXPECT_EQ(again[k].runs, rows[k].runs);
      EXPECT_NEAR(again[k].pose_angle_mae, rows[k].pose_angle_mae, 1e-15);
    }
  }
  EXPECT_THROW(aggregate({}), InputError);
}

TEST(Report, CsvRoundTripIsExact) {
  const auto rows = aggregate({make_report("full", 0.1234567890123, 1.0 / 3.0), make_report("no-sgac", 2e-9, 0.7)});
  const auto back = parse_csv_table(csv_table(rows));
  ASSERT_EQ(back.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(back[i].configuration, rows[i].configuration);
    EXPECT_EQ(back[i].runs, rows[i].runs);
    EXPECT_EQ(back[i].pose_angle_mae, rows[i].pose_angle_mae);
    EXPECT_EQ(back[i].appearance_palette_distance, rows[i].appearance_palette_distance);
  }
  EXPECT_THROW(parse_csv_table("bad,header\n"), InputError);
  const auto md = markdown_table(rows);
  EXPECT_NE(md.find("| full | 1 | 0.1235 | 0.3333 |"), std::string::npos) << md;
}

TEST(Report, JsonRoundTripAndSchemaCheck) {
  EvalReport r = make_report("no-cyc", 0.25, 0.125);
  r.checkpoint = "runs/x";
  r.per_video.push_back({"test_000", "test_001", 0.5, 0.25, 40});
  r.config = {{"seed", 3}};
  const auto back = report_from_json(to_json(r));
  EXPECT_EQ(to_json(back), to_json(r));
  auto j = to_json(r);
  j["schema_version"] = 2;
  EXPECT_THROW(report_from_json(j), InputError);
  j.erase("schema_version");
  EXPECT_THROW(report_from_json(j), InputError);
  j = to_json(r);
  j.erase("pose_angle_mae");
  EXPECT_THROW(report_from_json(j), InputError);
}

TEST(Report, WritesTableCsvAndChart) {
  const auto dir = temp_dir("report");
  write_report({make_report("full", 0.2, 0.1), make_report("baseline", 0.4, 0.3)}, dir);
  for (const char* f : {"report.md", "report.csv", "report.png"}) EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  const Image chart = read_png(dir / "report.png");
  EXPECT_EQ(chart.width, 2 * (2 * 28 + 16) + 16);
  EXPECT_EQ(chart.height, 180);
  std::filesystem::remove_all(dir);
}

TEST(Evaluate, RefusesAnUnconvergedOracle) {
  const auto d = small_dataset();
  MotionTransferModel<float> model(ModelConfig{}, 1);
  PoseOracle oracle(64, 2);
  EXPECT_FALSE(oracle.gate_passed());
  try {
    evaluate(model, oracle, d, "full", "ckpt");
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("oracle not converged"), std::string::npos);
  }
  oracle.validation_mae = 0.1000001;
  EXPECT_THROW(evaluate(model, oracle, d, "full", "ckpt"), NumericError);
  oracle.validation_mae = 0.1;
  const auto rep = evaluate(model, oracle, d, "full", "ckpt", {16, 4, 3});
  ASSERT_EQ(rep.per_video.size(), 3u);
  EXPECT_EQ(rep.per_video[2].target_id, d.target_test[2].id);
  EXPECT_EQ(rep.per_video[2].video_id, d.source_test[0].id);
  EXPECT_EQ(rep.per_video[0].frames, 3);
  EXPECT_TRUE(std::isfinite(rep.pose_angle_mae));
  EXPECT_GE(rep.appearance_palette_distance, 0.0);
  EXPECT_LE(rep.appearance_palette_distance, 1.0);
}

TEST(Animate, OneQuantizedFramePerDrivingFrame) {
  const auto d = small_dataset();
  MotionTransferModel<float> model(ModelConfig{}, 3);
  const auto& drv = d.source_test[0].frames;
  const auto a = animate(model, d.target_test[0].frames[0], drv, 2);
  const auto b = animate(model, d.target_test[0].frames[0], drv, 2);
  ASSERT_EQ(a.size(), drv.size());
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].pixels, b[t].pixels);
    for (float v : a[t].pixels) ASSERT_EQ(v, std::round(v * 255.0f) / 255.0f);
  }
  // Chunking only changes the batch split.
  const auto c = animate(model, d.target_test[0].frames[0], drv, 8);
  for (std::size_t t = 0; t < a.size(); ++t)
    for (std::size_t i = 0; i < a[t].pixels.size(); ++i) ASSERT_NEAR(a[t].pixels[i], c[t].pixels[i], 1.5 / 255);
  const Image grid = comparison_grid(d.target_test[0].frames[0], drv, a);
  EXPECT_EQ(grid.height, 2 * 64 + 6);
  EXPECT_EQ(grid.width, 6 * 64 + 7 * 2);
  EXPECT_THROW(animate(model, d.target_test[0].frames[0], {}), InputError);
}

TEST(Oracle, SaveLoadKeepsPredictionsAndGate) {
  const auto dir = temp_dir("oracle");
  PoseOracle o(64, 5);
  o.validation_mae = 0.05;
  o.save(dir);
  const auto back = PoseOracle::load(dir);
  EXPECT_TRUE(back->gate_passed());
  std::vector<Image> imgs;
  for (int i = 0; i < 3; ++i) imgs.push_back(oracle_sample(1, i, 64).image);
  EXPECT_EQ(back->predict(imgs), o.predict(imgs));
  EXPECT_THROW(PoseOracle::load(temp_dir("nothing")), IoError);
  std::filesystem::remove_all(dir);
}

TEST(Oracle, SamplesAreDeterministicAndLabeled) {
  const auto a = oracle_sample(7, 11, 64), b = oracle_sample(7, 11, 64), c = oracle_sample(7, 12, 64);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  EXPECT_EQ(a.angles, b.angles);
  EXPECT_NE(a.angles, c.angles);
  for (int j = 0; j < synth::kAngles; ++j) {
    EXPECT_GE(a.angles[j], synth::kArticulation[j].lo);
    EXPECT_LE(a.angles[j], synth::kArticulation[j].hi);
  }
}

TEST(Oracle, ShortTrainingReducesError) {
  OracleConfig cfg;
  cfg.train_images = 64;
  cfg.val_images = 16;
  cfg.iterations = 60;
  cfg.batch_size = 8;
  PoseOracle o(64, 9);
  const double before = oracle_mae_on(o, synth::mix_seed(cfg.seed, 101), 0, 64, 64);
  const auto r = train_pose_oracle(o, cfg);
  EXPECT_LT(r.train_mae, before);
  EXPECT_EQ(o.validation_mae, r.val_mae);
  EXPECT_EQ(r.passed, r.val_mae <= 0.1);
}

TEST(Oracle, PermutingTheBatchPermutesOutputs) {
  PoseOracle o(64, 6);
  std::vector<Image> imgs;
  for (int i = 0; i < 5; ++i) imgs.push_back(oracle_sample(2, i, 64).image);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  std::vector<Image> shuffled;
  for (int i : perm) shuffled.push_back(imgs[static_cast<std::size_t>(i)]);
  const auto a = o.predict(imgs), b = o.predict(shuffled);
  ASSERT_EQ(a.size(), 5u);
  ASSERT_EQ(a[0].size(), 8u);
  for (std::size_t k = 0; k < perm.size(); ++k)
    for (int j = 0; j < synth::kAngles; ++j) EXPECT_NEAR(b[k][j], a[static_cast<std::size_t>(perm[k])][j], 1e-6);
}
