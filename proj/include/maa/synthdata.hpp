#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "maa/geometry.hpp"
#include "maa/image.hpp"

// Two-domain articulated stick-figure renderer with ground-truth kinematics.
//
// Joints:  0 pelvis, 1 neck, 2 L elbow, 3 L hand, 4 R elbow, 5 R hand,
//          6 L knee, 7 L foot, 8 R knee, 9 R foot
// Bones:   torso, L upper arm, L forearm, R upper arm, R forearm,
//          L thigh, L shin, R thigh, R shin
// Angles:  L shoulder, L elbow, R shoulder, R elbow, L hip, L knee, R hip, R knee
//
// A segment direction angle phi maps to (sin phi, cos phi) in image coordinates
// (y down), so phi = 0 hangs straight down. The torso is always upright.

namespace maa::synth {

inline constexpr int kJoints = 10;
inline constexpr int kBones = 9;
inline constexpr int kAngles = 8;

struct Bone {
  int parent;
  int child;
};

inline constexpr std::array<Bone, kBones> kSkeleton = {
    {{0, 1}, {1, 2}, {2, 3}, {1, 4}, {4, 5}, {0, 6}, {6, 7}, {0, 8}, {8, 9}}};

inline constexpr std::array<const char*, kJoints> kJointNames = {
    "pelvis", "neck", "l_elbow", "l_hand", "r_elbow", "r_hand", "l_knee", "l_foot", "r_knee", "r_foot"};

inline constexpr std::array<const char*, kAngles> kAngleNames = {"l_shoulder", "l_elbow", "r_shoulder", "r_elbow",
                                                                 "l_hip",      "l_knee",  "r_hip",      "r_knee"};

struct AngleRange {
  double lo;
  double hi;
  double span() const { return hi - lo; }
  double mid() const { return 0.5 * (lo + hi); }
};

inline constexpr std::array<AngleRange, kAngles> kArticulation = {{{0.15, 2.6},
                                                                   {-0.2, 1.8},
                                                                   {-2.6, -0.15},
                                                                   {-1.8, 0.2},
                                                                   {0.0, 0.9},
                                                                   {-1.2, 0.2},
                                                                   {-0.9, 0.0},
                                                                   {-0.2, 1.2}}};

inline constexpr float kBackground = 0.5f;
inline constexpr int kDefaultSize = 64;

enum class Domain { Source, Target };

inline const char* domain_name(Domain d) { return d == Domain::Source ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::Source;
  if (s == "target") return Domain::Target;
  throw InputError("unknown domain: " + s);
}

using Rgb = std::array<float, 3>;

struct CharacterSpec {
  std::array<double, kBones> bone_lengths{};
  std::array<double, kBones> bone_widths{};
  std::array<Rgb, kBones> segment_colors{};
  double head_radius = 3.0;
  Domain domain = Domain::Source;
  friend bool operator==(const CharacterSpec&, const CharacterSpec&) = default;
};

struct PoseFrame {
  std::array<double, kAngles> angles{};
  Point2 root;  // pelvis, pixel coordinates
};

struct PoseSequence {
  std::vector<PoseFrame> frames;
  std::uint64_t seed = 0;
};

using Joints = std::array<Point2, kJoints>;

// SplitMix64 step; derives independent child seeds from a parent seed.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b = 0) {
  std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

namespace detail {

// Per-bone base length for a source character; target ranges start 1.4x above.
inline constexpr std::array<double, kBones> kBaseLength = {10.0, 6.5, 5.5, 6.5, 5.5, 8.0, 7.5, 8.0, 7.5};
inline constexpr std::array<Rgb, kBones> kBaseHue = {{{0.2f, 0.4f, 1.0f},
                                                      {1.0f, 0.2f, 0.2f},
                                                      {1.0f, 0.5f, 0.3f},
                                                      {0.2f, 1.0f, 0.2f},
                                                      {0.4f, 1.0f, 0.6f},
                                                      {1.0f, 0.85f, 0.1f},
                                                      {1.0f, 0.6f, 0.0f},
                                                      {0.7f, 0.2f, 1.0f},
                                                      {1.0f, 0.3f, 0.9f}}};

inline Point2 direction(double phi) { return {std::sin(phi), std::cos(phi)}; }

inline double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

}  // namespace detail

// Source: lengths in [1.0, 1.1] x base, thick, dark palette.
// Target: lengths in [1.4, 1.54] x base, slim, bright palette.
inline CharacterSpec make_character(Domain domain, std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, domain == Domain::Source ? 11 : 23));
  CharacterSpec c;
  c.domain = domain;
  const bool src = domain == Domain::Source;
  const double scale = detail::uniform(rng, src ? 1.0 : 1.4, src ? 1.1 : 1.54);
  for (int b = 0; b < kBones; ++b) {
    const double jitter = detail::uniform(rng, -0.02, 0.02);
    c.bone_lengths[b] = detail::kBaseLength[b] * std::clamp(scale + jitter, src ? 1.0 : 1.4, src ? 1.1 : 1.54);
    c.bone_widths[b] = src ? detail::uniform(rng, 3.0, 3.5) : detail::uniform(rng, 1.8, 2.2);
    const double v = src ? detail::uniform(rng, 0.2, 0.35) : detail::uniform(rng, 0.85, 1.0);
    for (int ch = 0; ch < 3; ++ch) {
      const double base = detail::kBaseHue[b][ch];
      const double col = src ? 0.05 + base * v : 0.35 + 0.65 * base * v;
      c.segment_colors[b][ch] = static_cast<float>(std::clamp(col + detail::uniform(rng, -0.03, 0.03), 0.0, 1.0));
    }
  }
  c.head_radius = src ? detail::uniform(rng, 3.0, 3.3) : detail::uniform(rng, 2.6, 2.9);
  return c;
}

inline Joints forward_kinematics(const CharacterSpec& c, const PoseFrame& f) {
  using detail::direction;
  const auto& L = c.bone_lengths;
  const auto& a = f.angles;
  Joints j;
  j[0] = f.root;
  j[1] = j[0] + L[0] * direction(std::numbers::pi);
  j[2] = j[1] + L[1] * direction(a[0]);
  j[3] = j[2] + L[2] * direction(a[0] + a[1]);
  j[4] = j[1] + L[3] * direction(a[2]);
  j[5] = j[4] + L[4] * direction(a[2] + a[3]);
  j[6] = j[0] + L[5] * direction(a[4]);
  j[7] = j[6] + L[6] * direction(a[4] + a[5]);
  j[8] = j[0] + L[7] * direction(a[6]);
  j[9] = j[8] + L[8] * direction(a[6] + a[7]);
  return j;
}

inline Point2 head_center(const CharacterSpec& c, const Joints& j) {
  return j[1] + (1.1 * c.head_radius) * detail::direction(std::numbers::pi);
}

struct Extent {
  double left, right, up, down;  // maximal reach from the pelvis, widths included
};

// Worst-case reach over a dense grid of the articulation box.
inline Extent pose_extent(const CharacterSpec& c) {
  Extent e{0, 0, 0, 0};
  constexpr int kSteps = 13;
  auto grow = [&](Point2 p, double r) {
    e.left = std::max(e.left, -(p.x - r));
    e.right = std::max(e.right, p.x + r);
    e.up = std::max(e.up, -(p.y - r));
    e.down = std::max(e.down, p.y + r);
  };
  auto sample = [](int joint, int i) {
    return kArticulation[joint].lo + kArticulation[joint].span() * i / (kSteps - 1);
  };
  PoseFrame f;
  for (int i = 0; i < kSteps; ++i)
    for (int k = 0; k < kSteps; ++k) {
      for (int limb = 0; limb < 4; ++limb) f.angles[limb * 2] = sample(limb * 2, i), f.angles[limb * 2 + 1] = sample(limb * 2 + 1, k);
      const Joints j = forward_kinematics(c, f);
      for (int b = 0; b < kBones; ++b) {
        grow(j[kSkeleton[b].parent], c.bone_widths[b] / 2);
        grow(j[kSkeleton[b].child], c.bone_widths[b] / 2);
      }
      grow(head_center(c, j), c.head_radius);
    }
  return e;
}

inline constexpr double kDriftX = 2.0;
inline constexpr double kDriftY = 1.0;

// Pelvis position that centres the worst-case bounding box in the frame.
inline Point2 base_root(const CharacterSpec& c, int size) {
  const Extent e = pose_extent(c);
  const double cx = (size - 1) / 2.0, cy = (size - 1) / 2.0;
  return {cx + (e.left - e.right) / 2.0, cy + (e.up - e.down) / 2.0};
}

inline bool fits_in_frame(const CharacterSpec& c, int size) {
  const Extent e = pose_extent(c);
  const Point2 r = base_root(c, size);
  constexpr double kMargin = 1.0;  // anti-aliasing fringe
  return r.x - e.left - kDriftX - kMargin >= 0 && r.x + e.right + kDriftX + kMargin <= size - 1 &&
         r.y - e.up - kDriftY - kMargin >= 0 && r.y + e.down + kDriftY + kMargin <= size - 1;
}

// Root offsets are relative to base_root; the caller adds the base.
// Each joint follows mid + half_span * (a1 sin(w1 t + p1) + a2 sin(w2 t + p2)).
inline PoseSequence sample_motion(std::uint64_t seed, int length) {
  require(length >= 2, "sample_motion: length must be >= 2");
  std::mt19937_64 rng(mix_seed(seed, 37));
  constexpr double kMaxStep = 0.19;  // rad per frame, under the 0.2 contract
  constexpr double a1 = 0.85, a2 = 0.10;
  PoseSequence seq;
  seq.seed = seed;
  seq.frames.resize(static_cast<std::size_t>(length));
  for (int j = 0; j < kAngles; ++j) {
    const double half = kArticulation[j].span() / 2;
    const double w_max = std::min(0.25, kMaxStep / (half * (a1 + 2 * a2)));
    const double w1 = detail::uniform(rng, 0.8, 1.0) * w_max;
    const double w2 = detail::uniform(rng, 1.0, 2.0) * w1;
    const double p1 = detail::uniform(rng, 0, 2 * std::numbers::pi);
    const double p2 = detail::uniform(rng, 0, 2 * std::numbers::pi);
    for (int t = 0; t < length; ++t)
      seq.frames[static_cast<std::size_t>(t)].angles[j] =
          kArticulation[j].mid() + half * (a1 * std::sin(w1 * t + p1) + a2 * std::sin(w2 * t + p2));
  }
  const double wx = detail::uniform(rng, 0.03, 0.06), wy = detail::uniform(rng, 0.03, 0.06);
  const double px = detail::uniform(rng, 0, 2 * std::numbers::pi), py = detail::uniform(rng, 0, 2 * std::numbers::pi);
  for (int t = 0; t < length; ++t)
    seq.frames[static_cast<std::size_t>(t)].root = {kDriftX * std::sin(wx * t + px), kDriftY * std::sin(wy * t + py)};
  return seq;
}

// Single pose drawn uniformly from the articulation box.
inline PoseFrame sample_pose(std::uint64_t seed) {
  std::mt19937_64 rng(mix_seed(seed, 41));
  PoseFrame f;
  for (int j = 0; j < kAngles; ++j) f.angles[j] = detail::uniform(rng, kArticulation[j].lo, kArticulation[j].hi);
  f.root = {detail::uniform(rng, -kDriftX, kDriftX), detail::uniform(rng, -kDriftY, kDriftY)};
  return f;
}

namespace detail {

inline double segment_distance(Point2 p, Point2 a, Point2 b) {
  const Point2 ab = b - a, ap = p - a;
  const double len2 = ab.x * ab.x + ab.y * ab.y;
  const double t = len2 > 0 ? std::clamp((ap.x * ab.x + ap.y * ab.y) / len2, 0.0, 1.0) : 0.0;
  return distance(p, a + t * ab);
}

}  // namespace detail

// Anti-aliased capsules painted legs, torso, head, arms. `frame.root` is the
// absolute pelvis position in pixels.
inline Image render(const CharacterSpec& c, const PoseFrame& frame, int size = kDefaultSize) {
  const Joints j = forward_kinematics(c, frame);
  const Point2 head = head_center(c, j);
  struct Shape {
    Point2 a, b;
    double radius;
    Rgb color;
  };
  std::vector<Shape> shapes;
  for (int b : {5, 6, 7, 8, 0})
    shapes.push_back({j[kSkeleton[b].parent], j[kSkeleton[b].child], c.bone_widths[b] / 2, c.segment_colors[b]});
  shapes.push_back({head, head, c.head_radius, c.segment_colors[0]});
  for (int b : {1, 2, 3, 4})
    shapes.push_back({j[kSkeleton[b].parent], j[kSkeleton[b].child], c.bone_widths[b] / 2, c.segment_colors[b]});

  Image img(size, size, kBackground);
  for (const auto& s : shapes) {
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.x, s.b.x) - s.radius - 1)));
    const int x1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(s.a.x, s.b.x) + s.radius + 1)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.a.y, s.b.y) - s.radius - 1)));
    const int y1 = std::min(size - 1, static_cast<int>(std::ceil(std::max(s.a.y, s.b.y) + s.radius + 1)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d = detail::segment_distance({static_cast<double>(x), static_cast<double>(y)}, s.a, s.b);
        const float alpha = static_cast<float>(std::clamp(0.5 - (d - s.radius), 0.0, 1.0));
        if (alpha <= 0.0f) continue;
        for (int ch = 0; ch < 3; ++ch) img(y, x, ch) = alpha * s.color[ch] + (1.0f - alpha) * img(y, x, ch);
      }
  }
  return quantize8(img);
}

// ---------------------------------------------------------------- dataset

struct DatasetConfig {
  int image_size = kDefaultSize;
  int source_videos = 20;
  int frames_per_video = 60;
  int target_images = 50;
  int test_source_videos = 4;
  int test_frames_per_video = 40;
  int test_target_images = 10;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const DatasetConfig& c) {
  return {{"image_size", c.image_size},
          {"source_videos", c.source_videos},
          {"frames_per_video", c.frames_per_video},
          {"target_images", c.target_images},
          {"test_source_videos", c.test_source_videos},
          {"test_frames_per_video", c.test_frames_per_video},
          {"test_target_images", c.test_target_images},
          {"seed", c.seed}};
}

inline DatasetConfig dataset_config_from_json(const nlohmann::json& j) {
  DatasetConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.source_videos = j.value("source_videos", c.source_videos);
  c.frames_per_video = j.value("frames_per_video", c.frames_per_video);
  c.target_images = j.value("target_images", c.target_images);
  c.test_source_videos = j.value("test_source_videos", c.test_source_videos);
  c.test_frames_per_video = j.value("test_frames_per_video", c.test_frames_per_video);
  c.test_target_images = j.value("test_target_images", c.test_target_images);
  c.seed = j.value("seed", c.seed);
  return c;
}

inline nlohmann::json to_json(const CharacterSpec& c) {
  nlohmann::json colors = nlohmann::json::array();
  for (const auto& rgb : c.segment_colors) colors.push_back({rgb[0], rgb[1], rgb[2]});
  return {{"bone_lengths", c.bone_lengths},
          {"bone_widths", c.bone_widths},
          {"segment_colors", colors},
          {"head_radius", c.head_radius},
          {"domain", domain_name(c.domain)}};
}

inline CharacterSpec character_from_json(const nlohmann::json& j) {
  CharacterSpec c;
  c.bone_lengths = j.at("bone_lengths").get<std::array<double, kBones>>();
  c.bone_widths = j.at("bone_widths").get<std::array<double, kBones>>();
  const auto& colors = j.at("segment_colors");
  require(colors.size() == kBones, "character JSON: expected 9 segment colors");
  for (int b = 0; b < kBones; ++b) c.segment_colors[b] = colors.at(b).get<Rgb>();
  c.head_radius = j.at("head_radius").get<double>();
  c.domain = parse_domain(j.at("domain").get<std::string>());
  return c;
}

// One rendered clip (a single frame for still images) plus its ground truth.
struct VideoRecord {
  std::string id;
  Domain domain = Domain::Source;
  CharacterSpec character;
  std::vector<PoseFrame> poses;  // absolute roots
  std::vector<Joints> joints;
  std::uint64_t seed = 0;
  std::vector<Image> frames;

  int length() const { return static_cast<int>(poses.size()); }
};

inline nlohmann::json meta_json(const VideoRecord& v) {
  nlohmann::json angles = nlohmann::json::array(), joints = nlohmann::json::array(), adjacency = nlohmann::json::array();
  for (const auto& p : v.poses) angles.push_back(p.angles);
  for (const auto& js : v.joints) {
    nlohmann::json frame = nlohmann::json::array();
    for (const auto& q : js) frame.push_back({q.x, q.y});
    joints.push_back(frame);
  }
  for (const auto& b : kSkeleton) adjacency.push_back({b.parent, b.child});
  return {{"angles", angles},       {"joints_px", joints},          {"adjacency", adjacency},
          {"character", to_json(v.character)}, {"seed", v.seed}, {"domain", domain_name(v.domain)},
          {"id", v.id}};
}

inline VideoRecord make_video(const std::string& id, Domain domain, std::uint64_t seed, int length, bool still,
                              int size) {
  VideoRecord v;
  v.id = id;
  v.domain = domain;
  v.seed = seed;
  v.character = make_character(domain, seed);
  const Point2 base = base_root(v.character, size);
  if (still) {
    PoseFrame f = sample_pose(seed);
    f.root = base + f.root;
    v.poses.push_back(f);
  } else {
    for (auto f : sample_motion(seed, length).frames) {
      f.root = base + f.root;
      v.poses.push_back(f);
    }
  }
  for (const auto& p : v.poses) {
    v.joints.push_back(forward_kinematics(v.character, p));
    v.frames.push_back(render(v.character, p, size));
  }
  return v;
}

inline std::string frame_name(int t) {
  std::ostringstream os;
  os << "frame_" << std::setw(5) << std::setfill('0') << t << ".png";
  return os.str();
}

inline std::string clip_id(const char* split, int i) {
  std::ostringstream os;
  os << split << '_' << std::setw(3) << std::setfill('0') << i;
  return os.str();
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    out << text;
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

inline void write_video(const std::filesystem::path& dir, const VideoRecord& v) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (int t = 0; t < v.length(); ++t) write_png(dir / frame_name(t), v.frames[static_cast<std::size_t>(t)]);
  write_text_atomic(dir / "meta.json", meta_json(v).dump(1));
}

struct Dataset {
  DatasetConfig config;
  std::vector<VideoRecord> source_train, source_test, target_train, target_test;
};

// Renders every split in memory; render_dataset writes the same clips to disk.
inline Dataset make_dataset(const DatasetConfig& cfg) {
  struct Split {
    std::vector<VideoRecord> Dataset::*member;
    Domain domain;
    const char* name;
    int count;
    int frames;
    bool still;
    std::uint64_t tag;
  };
  const Split splits[] = {{&Dataset::source_train, Domain::Source, "train", cfg.source_videos, cfg.frames_per_video, false, 1},
                          {&Dataset::source_test, Domain::Source, "test", cfg.test_source_videos, cfg.test_frames_per_video, false, 2},
                          {&Dataset::target_train, Domain::Target, "train", cfg.target_images, 1, true, 3},
                          {&Dataset::target_test, Domain::Target, "test", cfg.test_target_images, 1, true, 4}};
  Dataset d;
  d.config = cfg;
  for (const auto& s : splits)
    for (int i = 0; i < s.count; ++i) {
      const auto seed = mix_seed(mix_seed(cfg.seed, s.tag), static_cast<std::uint64_t>(i));
      (d.*s.member).push_back(make_video(clip_id(s.name, i), s.domain, seed, s.frames, s.still, cfg.image_size));
    }
  return d;
}

// Layout: root/{source|target}/{train|test}_NNN/frame_NNNNN.png + meta.json
inline void render_dataset(const std::filesystem::path& root, const DatasetConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(root, ec);
  if (ec) throw IoError("cannot create dataset root " + root.string() + ": " + ec.message());
  const Dataset d = make_dataset(cfg);
  for (const auto* split : {&d.source_train, &d.source_test, &d.target_train, &d.target_test})
    for (const auto& v : *split) write_video(root / domain_name(v.domain) / v.id, v);
  write_text_atomic(root / "dataset.json", to_json(cfg).dump(1));
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

inline VideoRecord load_video(const std::filesystem::path& dir, bool with_frames = true) {
  const auto meta = read_json(dir / "meta.json");
  VideoRecord v;
  v.id = meta.value("id", dir.filename().string());
  v.domain = parse_domain(meta.at("domain").get<std::string>());
  v.seed = meta.at("seed").get<std::uint64_t>();
  v.character = character_from_json(meta.at("character"));
  const auto& angles = meta.at("angles");
  const auto& joints = meta.at("joints_px");
  require(angles.size() == joints.size(), "meta.json: angles and joints_px differ in length");
  for (std::size_t t = 0; t < angles.size(); ++t) {
    PoseFrame f;
    f.angles = angles[t].get<std::array<double, kAngles>>();
    Joints js;
    for (int q = 0; q < kJoints; ++q) js[q] = {joints[t][q][0].get<double>(), joints[t][q][1].get<double>()};
    f.root = js[0];
    v.poses.push_back(f);
    v.joints.push_back(js);
  }
  if (with_frames)
    for (int t = 0; t < v.length(); ++t) v.frames.push_back(read_png(dir / frame_name(t)));
  return v;
}

inline std::vector<VideoRecord> load_split(const std::filesystem::path& dir, const std::string& prefix) {
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(dir))
    for (const auto& e : std::filesystem::directory_iterator(dir))
      if (e.is_directory() && e.path().filename().string().rfind(prefix, 0) == 0) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  std::vector<VideoRecord> out;
  for (const auto& d : dirs) out.push_back(load_video(d));
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& root) {
  if (!std::filesystem::exists(root / "dataset.json")) throw IoError("no dataset.json under " + root.string());
  Dataset d;
  d.config = dataset_config_from_json(read_json(root / "dataset.json"));
  d.source_train = load_split(root / "source", "train_");
  d.source_test = load_split(root / "source", "test_");
  d.target_train = load_split(root / "target", "train_");
  d.target_test = load_split(root / "target", "test_");
  if (d.source_train.empty()) throw IoError("dataset has no source training videos: " + root.string());
  return d;
}

// Joint pixel positions -> normalized keypoints.
inline KeypointSet joints_to_keypoints(const Joints& j, int size) {
  KeypointSet k;
  for (const auto& p : j) k.points.push_back({to_normalized(p.x, size), to_normalized(p.y, size)});
  return k;
}

}  // namespace maa::synth
