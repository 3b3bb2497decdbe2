#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "maa/trainer.hpp"

// Oracle-based evaluation: a pose regressor trained on target-domain renders,
// keypoint-anchored palette distance, ablation reports, and animation output.

namespace maa::eval {

inline constexpr int kReportSchemaVersion = 1;

// ---------------------------------------------------------------- pose oracle

struct OracleConfig {
  int image_size = 64;
  int train_images = 6000;
  int val_images = 500;
  int iterations = 4000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double gate_mae = 0.1;
  std::uint64_t seed = 0;
  friend bool operator==(const OracleConfig&, const OracleConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(OracleConfig, image_size, train_images, val_images, iterations,
                                                batch_size, learning_rate, gate_mae, seed)

// Wrapped absolute angle difference in [0, pi].
inline double angle_error(double a, double b) {
  double d = std::fmod(std::abs(a - b), 2 * std::numbers::pi);
  return d > std::numbers::pi ? 2 * std::numbers::pi - d : d;
}

// Convolutional regressor from a target-styled image to the 8 joint angles.
class PoseOracle {
 public:
  explicit PoseOracle(int image_size = 64, std::uint64_t seed = 0) : image_size_(image_size) {
    require(image_size % 16 == 0, "pose oracle: image size must be a multiple of 16");
    nn::Rng rng(seed);
    const int ch[] = {16, 32, 64, 64};
    int in = 3;
    for (int l = 0; l < 4; ++l) {
      blocks_.emplace_back(params_, "oracle.block" + std::to_string(l), in, ch[l], rng);
      in = ch[l];
    }
    features_ = in * (image_size / 16) * (image_size / 16);
    hidden_ = nn::Linear<float>(params_, "oracle.hidden", features_, 128, rng);
    out_ = nn::Linear<float>(params_, "oracle.out", 128, synth::kAngles, rng);
  }

  PoseOracle(const PoseOracle&) = delete;
  PoseOracle& operator=(const PoseOracle&) = delete;

  int image_size() const { return image_size_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }

  // Normalized outputs: (angle - mid) / half_span per joint, shape (N, 8).
  Var<float> forward(const Var<float>& imgs) const {
    require_shape(imgs.shape(), {imgs.dim(0), 3, image_size_, image_size_}, "pose oracle input");
    Var<float> y = imgs;
    for (const auto& b : blocks_) y = b(y);
    return out_(ad::leaky_relu(hidden_(ad::reshape(y, {imgs.dim(0), features_}))));
  }

  std::vector<std::array<double, synth::kAngles>> predict(const std::vector<Image>& imgs, int chunk = 64) const {
    std::vector<std::array<double, synth::kAngles>> out;
    for (std::size_t s = 0; s < imgs.size(); s += static_cast<std::size_t>(chunk)) {
      const std::size_t e = std::min(imgs.size(), s + static_cast<std::size_t>(chunk));
      const std::vector<Image> part(imgs.begin() + static_cast<long>(s), imgs.begin() + static_cast<long>(e));
      const auto y = forward(image_batch(part)).value();
      for (std::size_t i = 0; i < part.size(); ++i) {
        std::array<double, synth::kAngles> a{};
        for (int j = 0; j < synth::kAngles; ++j)
          a[j] = synth::kArticulation[j].mid() +
                 synth::kArticulation[j].span() / 2 * static_cast<double>(y[i * synth::kAngles + j]);
        out.push_back(a);
      }
    }
    return out;
  }

  // Held-out MAE recorded at training time; evaluation refuses an oracle above the gate.
  double validation_mae = std::numeric_limits<double>::infinity();
  double gate_mae = 0.1;
  bool gate_passed() const { return validation_mae <= gate_mae; }

  void save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    std::vector<const Tensor<float>*> ts;
    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, v] : params_.items()) {
      ts.push_back(&v.value());
      table.push_back({{"name", name}, {"shape", v.value().shape()}, {"offset", offset}});
      offset += v.value().size();
    }
    write_weights(dir / "weights.bin", ts);
    nlohmann::json m = {{"format_version", 1},   {"kind", "pose_oracle"},        {"image_size", image_size_},
                        {"tensors", table},      {"validation_mae", validation_mae}, {"gate_mae", gate_mae}};
    synth::write_text_atomic(dir / "manifest.json", m.dump(1));
  }

  static std::unique_ptr<PoseOracle> load(const std::filesystem::path& dir) {
    const Checkpoint c = load_checkpoint(dir);
    if (c.manifest.value("kind", std::string()) != "pose_oracle")
      throw IoError("not a pose oracle checkpoint: " + dir.string());
    auto o = std::make_unique<PoseOracle>(c.manifest.at("image_size").get<int>());
    std::vector<std::pair<std::string, Tensor<float>*>> targets;
    for (const auto& [name, v] : o->params_.items())
      targets.emplace_back(name, &const_cast<Var<float>&>(v).mutable_value());
    restore_tensors(c, targets);
    o->validation_mae = c.manifest.at("validation_mae").get<double>();
    o->gate_mae = c.manifest.at("gate_mae").get<double>();
    return o;
  }

 private:
  int image_size_;
  int features_ = 0;
  nn::ParameterSet<float> params_;
  std::vector<nn::DownBlock<float>> blocks_;
  nn::Linear<float> hidden_, out_;
};

struct LabeledRender {
  Image image;
  std::array<double, synth::kAngles> angles{};
};

// Target-domain render number `index` of a deterministic labeled stream.
inline LabeledRender oracle_sample(std::uint64_t seed, std::uint64_t index, int size) {
  const auto s = synth::mix_seed(seed, index);
  const auto c = synth::make_character(synth::Domain::Target, s);
  auto pose = synth::sample_pose(s);
  pose.root = synth::base_root(c, size) + pose.root;
  return {synth::render(c, pose, size), pose.angles};
}

inline double mean_angle_error(const std::vector<std::array<double, synth::kAngles>>& pred,
                               const std::vector<std::array<double, synth::kAngles>>& truth) {
  require(pred.size() == truth.size() && !pred.empty(), "mean_angle_error: size mismatch");
  double acc = 0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    for (int j = 0; j < synth::kAngles; ++j) acc += angle_error(pred[i][j], truth[i][j]);
  return acc / static_cast<double>(pred.size() * synth::kAngles);
}

struct OracleTrainingReport {
  double train_mae = 0.0;  // on a fixed subset of the training stream
  double val_mae = 0.0;
  bool passed = false;
};

inline double oracle_mae_on(const PoseOracle& o, std::uint64_t seed, std::uint64_t first, int count, int size) {
  std::vector<Image> imgs;
  std::vector<std::array<double, synth::kAngles>> truth;
  for (int i = 0; i < count; ++i) {
    auto r = oracle_sample(seed, first + static_cast<std::uint64_t>(i), size);
    imgs.push_back(std::move(r.image));
    truth.push_back(r.angles);
  }
  return mean_angle_error(o.predict(imgs), truth);
}

// Trains on renders [0, train_images) and validates on the disjoint block after it.
inline OracleTrainingReport train_pose_oracle(PoseOracle& oracle, const OracleConfig& cfg) {
  require(cfg.train_images >= 1 && cfg.val_images >= 1 && cfg.batch_size >= 1, "oracle config: sizes must be positive");
  const std::uint64_t data_seed = synth::mix_seed(cfg.seed, 101);
  std::mt19937_64 rng(synth::mix_seed(cfg.seed, 102));
  std::uniform_int_distribution<int> pick(0, cfg.train_images - 1);
  nn::Adam<float> opt(oracle.params().vars(), {cfg.learning_rate, 0.9, 0.999, 1e-8});
  std::vector<LabeledRender> cache(static_cast<std::size_t>(cfg.train_images));
  std::vector<bool> ready(cache.size(), false);
  for (int it = 0; it < cfg.iterations; ++it) {
    std::vector<Image> imgs;
    Tensor<float> target({cfg.batch_size, synth::kAngles});
    for (int b = 0; b < cfg.batch_size; ++b) {
      const auto idx = static_cast<std::size_t>(pick(rng));
      if (!ready[idx]) {
        cache[idx] = oracle_sample(data_seed, idx, cfg.image_size);
        ready[idx] = true;
      }
      imgs.push_back(cache[idx].image);
      for (int j = 0; j < synth::kAngles; ++j)
        target[static_cast<std::size_t>(b) * synth::kAngles + j] = static_cast<float>(
            (cache[idx].angles[j] - synth::kArticulation[j].mid()) / (synth::kArticulation[j].span() / 2));
    }
    const auto loss = ad::mean_abs_diff(oracle.forward(image_batch(imgs)), Var<float>::constant(target));
    if (!std::isfinite(loss.item())) throw NumericError("pose oracle loss became non-finite at step " + std::to_string(it));
    opt.zero_grad();
    ad::backward(loss);
    opt.step();
  }
  OracleTrainingReport r;
  r.train_mae = oracle_mae_on(oracle, data_seed, 0, std::min(cfg.train_images, 500), cfg.image_size);
  r.val_mae = oracle_mae_on(oracle, data_seed, static_cast<std::uint64_t>(cfg.train_images), cfg.val_images,
                            cfg.image_size);
  oracle.validation_mae = r.val_mae;
  oracle.gate_mae = cfg.gate_mae;
  r.passed = oracle.gate_passed();
  return r;
}

// ---------------------------------------------------------------- palette distance

// Joint RGB histogram with `bins` levels per channel, normalized to sum 1.
inline std::vector<double> color_histogram(const Image& img, int bins = 4) {
  std::vector<double> h(static_cast<std::size_t>(bins * bins * bins), 0.0);
  const std::size_t n = static_cast<std::size_t>(img.height) * img.width;
  for (std::size_t p = 0; p < n; ++p) {
    int idx = 0;
    for (int c = 0; c < 3; ++c) {
      const int b = std::clamp(static_cast<int>(img.pixels[p * 3 + c] * bins), 0, bins - 1);
      idx = idx * bins + b;
    }
    h[static_cast<std::size_t>(idx)] += 1.0;
  }
  for (auto& v : h) v /= static_cast<double>(n);
  return h;
}

// 0.5 * sum (a - b)^2 / (a + b), in [0, 1] for normalized histograms.
inline double chi_square(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), "chi_square: histogram sizes differ");
  double d = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] + b[i] > 0) d += (a[i] - b[i]) * (a[i] - b[i]) / (a[i] + b[i]);
  return 0.5 * d;
}

// Mean chi-square distance between patch k of `a` (at kp_a[k]) and patch k of `b`.
inline double palette_distance(const Image& a, const KeypointSet& kp_a, const Image& b, const KeypointSet& kp_b,
                               int patch, int bins = 4) {
  require(kp_a.size() == kp_b.size() && kp_a.size() > 0, "palette_distance: keypoint sets differ");
  const auto pa = sgac::extract_patches(image_batch({a}), to_tensor<float>({kp_a}), patch).value();
  const auto pb = sgac::extract_patches(image_batch({b}), to_tensor<float>({kp_b}), patch).value();
  const auto ia = tensor_to_images(pa), ib = tensor_to_images(pb);
  double acc = 0;
  for (std::size_t k = 0; k < ia.size(); ++k) acc += chi_square(color_histogram(ia[k], bins), color_histogram(ib[k], bins));
  return acc / static_cast<double>(ia.size());
}

// ---------------------------------------------------------------- animation

// One synthesized frame per driving frame, source keypoints detected once.
inline std::vector<Image> animate(const MotionTransferModel<float>& model, const Image& source,
                                  const std::vector<Image>& driving, int chunk = 8) {
  require(!driving.empty(), "animate: no driving frames");
  const Var<float> src1 = image_batch({source});
  const Motion<float> src_motion = model.detect(src1);
  std::vector<Image> out;
  for (std::size_t s = 0; s < driving.size(); s += static_cast<std::size_t>(chunk)) {
    const std::size_t e = std::min(driving.size(), s + static_cast<std::size_t>(chunk));
    const std::vector<Image> part(driving.begin() + static_cast<long>(s), driving.begin() + static_cast<long>(e));
    const int n = static_cast<int>(part.size());
    std::vector<Image> srcs(part.size(), source);
    // Repeat the source motion across the chunk.
    Tensor<float> kp({n, src_motion.kp.dim(1), 2}), jac({n, src_motion.kp.dim(1), 4});
    Tensor<float> prob({n, src_motion.prob.dim(1), src_motion.prob.dim(2), src_motion.prob.dim(3)});
    for (int i = 0; i < n; ++i) {
      std::copy(src_motion.kp.value().vec().begin(), src_motion.kp.value().vec().end(), kp.data() + i * src_motion.kp.value().size());
      std::copy(src_motion.jac.value().vec().begin(), src_motion.jac.value().vec().end(), jac.data() + i * src_motion.jac.value().size());
      std::copy(src_motion.prob.value().vec().begin(), src_motion.prob.value().vec().end(), prob.data() + i * src_motion.prob.value().size());
    }
    const Motion<float> sm{Var<float>::constant(kp), Var<float>::constant(jac), Var<float>::constant(prob)};
    const auto r = model.transfer(image_batch(srcs), sm, model.detect(image_batch(part)));
    for (auto& img : tensor_to_images(r.image.value())) out.push_back(quantize8(img));
  }
  return out;
}

// Top row: blank cell then driving frames. Bottom row: source then synthesized frames.
inline Image comparison_grid(const Image& source, const std::vector<Image>& driving, const std::vector<Image>& synth,
                             int gap = 2) {
  require(driving.size() == synth.size() && !driving.empty(), "comparison_grid: frame counts differ");
  const int s = source.height;
  const int cols = static_cast<int>(driving.size()) + 1;
  Image grid(2 * s + 3 * gap, cols * s + (cols + 1) * gap, 1.0f);
  auto blit = [&](const Image& img, int row, int col) {
    const int oy = gap + row * (s + gap), ox = gap + col * (s + gap);
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        for (int c = 0; c < 3; ++c) grid(oy + y, ox + x, c) = img(y, x, c);
  };
  for (std::size_t i = 0; i < driving.size(); ++i) {
    blit(driving[i], 0, static_cast<int>(i) + 1);
    blit(synth[i], 1, static_cast<int>(i) + 1);
  }
  blit(source, 1, 0);
  return grid;
}

// ---------------------------------------------------------------- evaluation

struct PairResult {
  std::string target_id;
  std::string video_id;
  double pose_angle_mae = 0.0;
  double appearance_palette_distance = 0.0;
  int frames = 0;
};

struct EvalReport {
  int schema_version = kReportSchemaVersion;
  std::string configuration;
  std::string checkpoint;
  double pose_angle_mae = 0.0;
  double appearance_palette_distance = 0.0;
  std::vector<PairResult> per_video;
  nlohmann::json config;
};

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json pv = nlohmann::json::array();
  for (const auto& p : r.per_video)
    pv.push_back({{"target_id", p.target_id},
                  {"video_id", p.video_id},
                  {"pose_angle_mae", p.pose_angle_mae},
                  {"appearance_palette_distance", p.appearance_palette_distance},
                  {"frames", p.frames}});
  return {{"schema_version", r.schema_version},
          {"configuration", r.configuration},
          {"checkpoint", r.checkpoint},
          {"pose_angle_mae", r.pose_angle_mae},
          {"appearance_palette_distance", r.appearance_palette_distance},
          {"per_video", pv},
          {"config", r.config}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  const int version = j.value("schema_version", -1);
  if (version != kReportSchemaVersion)
    throw InputError("unsupported evaluation report schema_version " + std::to_string(version) + " (expected " +
                     std::to_string(kReportSchemaVersion) + ")");
  EvalReport r;
  try {
    r.configuration = j.at("configuration").get<std::string>();
    r.checkpoint = j.value("checkpoint", std::string());
    r.pose_angle_mae = j.at("pose_angle_mae").get<double>();
    r.appearance_palette_distance = j.at("appearance_palette_distance").get<double>();
    r.config = j.value("config", nlohmann::json());
    for (const auto& p : j.value("per_video", nlohmann::json::array()))
      r.per_video.push_back({p.at("target_id").get<std::string>(), p.at("video_id").get<std::string>(),
                             p.at("pose_angle_mae").get<double>(), p.at("appearance_palette_distance").get<double>(),
                             p.value("frames", 0)});
  } catch (const nlohmann::json::exception& ex) {
    throw InputError(std::string("malformed evaluation report: ") + ex.what());
  }
  return r;
}

struct EvalOptions {
  int patch_size = 16;
  int bins = 4;
  int max_frames = 40;  // per driving video
};

// Test pairs: target test image i driven by source test video i mod n.
inline std::vector<std::pair<const synth::VideoRecord*, const synth::VideoRecord*>> test_pairs(const synth::Dataset& d) {
  require(!d.target_test.empty() && !d.source_test.empty(), "evaluation needs test_ target images and source videos");
  std::vector<std::pair<const synth::VideoRecord*, const synth::VideoRecord*>> out;
  for (std::size_t i = 0; i < d.target_test.size(); ++i)
    out.emplace_back(&d.target_test[i], &d.source_test[i % d.source_test.size()]);
  return out;
}

inline std::vector<std::array<double, synth::kAngles>> driving_angles(const synth::VideoRecord& v, int frames) {
  std::vector<std::array<double, synth::kAngles>> out;
  for (int t = 0; t < frames; ++t) out.push_back(v.poses[static_cast<std::size_t>(t)].angles);
  return out;
}

inline EvalReport evaluate(const MotionTransferModel<float>& model, const PoseOracle& oracle, const synth::Dataset& d,
                           const std::string& configuration, const std::string& checkpoint,
                           const EvalOptions& opt = {}) {
  if (!oracle.gate_passed())
    throw NumericError("oracle not converged: held-out MAE " + std::to_string(oracle.validation_mae) +
                       " rad exceeds the gate of " + std::to_string(oracle.gate_mae) + " rad");
  EvalReport rep;
  rep.configuration = configuration;
  rep.checkpoint = checkpoint;
  double pose_sum = 0, pal_sum = 0;
  for (const auto& [target, video] : test_pairs(d)) {
    const int frames = std::min(video->length(), opt.max_frames);
    const std::vector<Image> drv(video->frames.begin(), video->frames.begin() + frames);
    const Image& src = target->frames.at(0);
    const auto synth = animate(model, src, drv);
    PairResult p{target->id, video->id, 0, 0, frames};
    p.pose_angle_mae = mean_angle_error(oracle.predict(synth), driving_angles(*video, frames));
    const auto src_kp = keypoint_sets(model.detect(image_batch({src})).kp.value())[0];
    const auto synth_kp = keypoint_sets(model.detect(image_batch(synth)).kp.value());
    for (int t = 0; t < frames; ++t)
      p.appearance_palette_distance +=
          palette_distance(synth[static_cast<std::size_t>(t)], synth_kp[static_cast<std::size_t>(t)], src, src_kp,
                           opt.patch_size, opt.bins);
    p.appearance_palette_distance /= frames;
    pose_sum += p.pose_angle_mae;
    pal_sum += p.appearance_palette_distance;
    rep.per_video.push_back(p);
  }
  rep.pose_angle_mae = pose_sum / static_cast<double>(rep.per_video.size());
  rep.appearance_palette_distance = pal_sum / static_cast<double>(rep.per_video.size());
  return rep;
}

// Oracle error on ground-truth renders of each target character in the driving poses.
inline double ideal_pose_floor(const PoseOracle& oracle, const synth::Dataset& d, const EvalOptions& opt = {}) {
  double acc = 0;
  int n = 0;
  for (const auto& [target, video] : test_pairs(d)) {
    const int frames = std::min(video->length(), opt.max_frames);
    const Point2 tbase = synth::base_root(target->character, d.config.image_size);
    const Point2 sbase = synth::base_root(video->character, d.config.image_size);
    std::vector<Image> imgs;
    for (int t = 0; t < frames; ++t) {
      auto pose = video->poses[static_cast<std::size_t>(t)];
      pose.root = tbase + (pose.root - sbase);
      imgs.push_back(synth::render(target->character, pose, d.config.image_size));
    }
    acc += mean_angle_error(oracle.predict(imgs), driving_angles(*video, frames));
    ++n;
  }
  return acc / n;
}

// ---------------------------------------------------------------- report

struct ReportRow {
  std::string configuration;
  int runs = 0;
  double pose_angle_mae = 0.0;
  double appearance_palette_distance = 0.0;
};

inline int configuration_rank(const std::string& name) {
  static const std::vector<std::string> order = {"full", "no-cyc", "no-sima", "no-sgac", "baseline"};
  const auto it = std::find(order.begin(), order.end(), name);
  return it == order.end() ? static_cast<int>(order.size()) : static_cast<int>(it - order.begin());
}

// Seed runs of one configuration are averaged into a single row.
inline std::vector<ReportRow> aggregate(const std::vector<EvalReport>& reports) {
  require(!reports.empty(), "report: need at least one evaluation report");
  std::map<std::string, ReportRow> rows;
  for (const auto& r : reports) {
    auto& row = rows[r.configuration];
    row.configuration = r.configuration;
    ++row.runs;
    row.pose_angle_mae += r.pose_angle_mae;
    row.appearance_palette_distance += r.appearance_palette_distance;
  }
  std::vector<ReportRow> out;
  for (auto& [name, row] : rows) {
    row.pose_angle_mae /= row.runs;
    row.appearance_palette_distance /= row.runs;
    out.push_back(row);
  }
  std::stable_sort(out.begin(), out.end(), [](const ReportRow& a, const ReportRow& b) {
    const int ra = configuration_rank(a.configuration), rb = configuration_rank(b.configuration);
    return ra != rb ? ra < rb : a.configuration < b.configuration;
  });
  return out;
}

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline std::string markdown_table(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "| configuration | runs | pose MAE (rad) | palette distance |\n|---|---|---|---|\n";
  for (const auto& r : rows)
    os << "| " << r.configuration << " | " << r.runs << " | " << std::fixed << std::setprecision(4) << r.pose_angle_mae
       << " | " << r.appearance_palette_distance << " |\n";
  return os.str();
}

inline std::string csv_table(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  os << "configuration,runs,pose_angle_mae,appearance_palette_distance\n";
  for (const auto& r : rows)
    os << r.configuration << ',' << r.runs << ',' << format_number(r.pose_angle_mae) << ','
       << format_number(r.appearance_palette_distance) << '\n';
  return os.str();
}

inline std::vector<ReportRow> parse_csv_table(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != "configuration,runs,pose_angle_mae,appearance_palette_distance") throw InputError("unexpected CSV header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string f[4];
    for (auto& s : f)
      if (!std::getline(ls, s, ',')) throw InputError("malformed CSV row: " + line);
    rows.push_back({f[0], std::stoi(f[1]), std::stod(f[2]), std::stod(f[3])});
  }
  return rows;
}

// Two side-by-side bar groups (pose MAE, palette distance), one colored bar per row,
// each group scaled to its own maximum.
inline Image bar_chart(const std::vector<ReportRow>& rows, int bar_width = 24, int height = 160) {
  static const std::array<synth::Rgb, 6> kColors = {{{0.12f, 0.47f, 0.71f},
                                              {1.0f, 0.5f, 0.05f},
                                              {0.17f, 0.63f, 0.17f},
                                              {0.84f, 0.15f, 0.16f},
                                              {0.58f, 0.4f, 0.74f},
                                              {0.55f, 0.34f, 0.29f}}};
  const int n = static_cast<int>(rows.size());
  const int group = n * (bar_width + 4) + 16;
  Image img(height + 20, 2 * group + 16, 1.0f);
  for (int g = 0; g < 2; ++g) {
    double mx = 0;
    for (const auto& r : rows) mx = std::max(mx, g == 0 ? r.pose_angle_mae : r.appearance_palette_distance);
    const int x0 = 8 + g * group;
    for (int x = x0; x < x0 + group - 8; ++x)
      for (int c = 0; c < 3; ++c) img(height + 10, x, c) = 0.0f;
    for (int i = 0; i < n; ++i) {
      const double v = g == 0 ? rows[static_cast<std::size_t>(i)].pose_angle_mae
                              : rows[static_cast<std::size_t>(i)].appearance_palette_distance;
      const int bh = mx > 0 ? static_cast<int>(std::lround(v / mx * (height - 10))) : 0;
      const auto& col = kColors[static_cast<std::size_t>(i) % kColors.size()];
      for (int y = height + 10 - bh; y < height + 10; ++y)
        for (int x = x0 + 4 + i * (bar_width + 4); x < x0 + 4 + i * (bar_width + 4) + bar_width; ++x)
          for (int c = 0; c < 3; ++c) img(y, x, c) = col[c];
    }
  }
  return img;
}

inline void write_report(const std::vector<EvalReport>& reports, const std::filesystem::path& dir) {
  const auto rows = aggregate(reports);
  std::filesystem::create_directories(dir);
  synth::write_text_atomic(dir / "report.md", markdown_table(rows));
  synth::write_text_atomic(dir / "report.csv", csv_table(rows));
  write_png(dir / "report.png", bar_chart(rows));
}

// ---------------------------------------------------------------- matching

// Minimum-cost perfect matching on a square cost matrix (shortest augmenting
// paths with potentials). Returns assignment[row] = column.
inline std::vector<int> hungarian(const std::vector<std::vector<double>>& cost) {
  const int n = static_cast<int>(cost.size());
  for (const auto& r : cost) require(static_cast<int>(r.size()) == n, "hungarian: cost matrix must be square");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0), v(n + 1, 0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(n, -1);
  for (int j = 1; j <= n; ++j)
    if (p[j] > 0) assignment[p[j] - 1] = j - 1;
  return assignment;
}

struct EdgeRecovery {
  double precision = 0.0;
  double recall = 0.0;
  std::vector<int> assignment;  // keypoint -> joint
};

// Matches keypoints to joints by mean position, then scores the discovered edges
// against the bone list.
inline EdgeRecovery edge_recovery(const topology::TopologyGraph& g, const std::vector<Point2>& kp_means,
                                  const std::vector<Point2>& joint_means, const std::vector<std::pair<int, int>>& bones) {
  require(kp_means.size() == joint_means.size(), "edge_recovery: keypoint and joint counts differ");
  std::vector<std::vector<double>> cost(kp_means.size(), std::vector<double>(joint_means.size()));
  for (std::size_t i = 0; i < kp_means.size(); ++i)
    for (std::size_t j = 0; j < joint_means.size(); ++j) cost[i][j] = distance(kp_means[i], joint_means[j]);
  EdgeRecovery r;
  r.assignment = hungarian(cost);
  auto is_bone = [&](int a, int b) {
    for (const auto& [p, q] : bones)
      if ((p == a && q == b) || (p == b && q == a)) return true;
    return false;
  };
  int hit = 0;
  for (const auto& e : g.edges)
    if (is_bone(r.assignment[static_cast<std::size_t>(e.i)], r.assignment[static_cast<std::size_t>(e.j)])) ++hit;
  r.precision = g.edges.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(g.edges.size());
  r.recall = bones.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(bones.size());
  return r;
}

inline std::vector<std::pair<int, int>> skeleton_bones() {
  std::vector<std::pair<int, int>> out;
  for (const auto& b : synth::kSkeleton) out.emplace_back(b.parent, b.child);
  return out;
}

}  // namespace maa::eval
