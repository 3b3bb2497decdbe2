#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "maa/model.hpp"
#include "maa/optim.hpp"
#include "maa/sgac.hpp"
#include "maa/sima.hpp"
#include "maa/synthdata.hpp"
#include "maa/topology.hpp"

// Three-stage training: same-domain pretraining, topology discovery, and
// cross-domain adaptation with cyclic reconstruction, angle regularization and
// the patch-adversarial appearance term. Also owns the checkpoint format.

namespace maa {

struct TrainingConfig {
  std::string name = "full";
  std::string data_root = "data";
  ModelConfig model;
  double eta_percentile = 20.0;
  double lambda_ma = 10.0;
  double lambda_ac = 1.0;
  int patch_size = 16;
  double learning_rate = 2e-4;
  int batch_size = 4;
  int pretrain_iterations = 2000;
  int adapt_iterations = 2000;
  bool cyclic = true;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    require(eta_percentile > 0 && eta_percentile < 100, "config: eta_percentile must lie in (0, 100)");
    require(lambda_ma >= 0 && lambda_ac >= 0, "config: lambda values must be >= 0");
    require(patch_size >= 4 && patch_size <= model.image_size, "config: patch_size must lie in [4, image_size]");
    require(learning_rate > 0 && batch_size >= 1, "config: learning_rate and batch_size must be positive");
    require(pretrain_iterations >= 0 && adapt_iterations >= 0, "config: iteration counts must be >= 0");
  }

  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainingConfig, name, data_root, model, eta_percentile, lambda_ma,
                                                lambda_ac, patch_size, learning_rate, batch_size, pretrain_iterations,
                                                adapt_iterations, cyclic, seed)

// Ablation presets keyed by configuration name.
inline TrainingConfig ablation_config(TrainingConfig base, const std::string& name) {
  base.name = name;
  if (name == "full") return base;
  if (name == "no-cyc") {
    base.cyclic = false;
  } else if (name == "no-sima") {
    base.lambda_ma = 0.0;
  } else if (name == "no-sgac") {
    base.lambda_ac = 0.0;
  } else if (name == "baseline") {
    base.cyclic = false;
    base.lambda_ma = 0.0;
    base.lambda_ac = 0.0;
  } else {
    throw InputError("unknown ablation configuration: " + name);
  }
  return base;
}

enum class Stage { Pretrain, Adapt };

inline const char* stage_name(Stage s) { return s == Stage::Pretrain ? "pretrain" : "adapt"; }

inline Stage parse_stage(const std::string& s) {
  if (s == "pretrain") return Stage::Pretrain;
  if (s == "adapt") return Stage::Adapt;
  throw InputError("unknown stage: " + s);
}

struct PairBatch {
  std::vector<Image> source;
  std::vector<Image> driving;
  std::vector<std::string> ids;
};

// One cross-domain step: a target-domain still, two distinct frames of one
// source-domain video, and a fresh same-domain pair for L_r.
struct InstanceBatch {
  std::vector<Image> source;
  std::vector<Image> driving_i;
  std::vector<Image> driving_j;
  PairBatch recon;
  std::vector<std::string> ids;
};

struct LossBreakdown {
  double L_r = 0.0;
  double L_c = 0.0;
  double L_ma = 0.0;
  double L_ac_G = 0.0;
  double L_ac_D = 0.0;
  double total = 0.0;

  bool all_finite() const {
    return std::isfinite(L_r) && std::isfinite(L_c) && std::isfinite(L_ma) && std::isfinite(L_ac_G) &&
           std::isfinite(L_ac_D) && std::isfinite(total);
  }
};

inline nlohmann::json to_json(const LossBreakdown& b) {
  return {{"L_r", b.L_r}, {"L_c", b.L_c}, {"L_ma", b.L_ma}, {"L_ac_G", b.L_ac_G}, {"L_ac_D", b.L_ac_D}, {"total", b.total}};
}

template <typename T>
struct CyclicOutputs {
  TransferResult<T> first;   // I_p = B(source, driving_i)
  Motion<T> synth_motion;    // keypoints detected on I_p
  TransferResult<T> second;  // I_c = B(driving_j, I_p)
  Var<T> I_p() const { return first.image; }
  Var<T> I_c() const { return second.image; }
};

// Both passes run through the same model object, so they share one parameter set.
template <typename T>
CyclicOutputs<T> cyclic_forward(const MotionTransferModel<T>& model, const Var<T>& source, const Var<T>& driving_i,
                                const Var<T>& driving_j) {
  CyclicOutputs<T> out;
  out.first = model.forward(source, driving_i);
  out.synth_motion = model.detect(out.first.image);
  out.second = model.transfer(driving_j, model.detect(driving_j), out.synth_motion);
  return out;
}

// Graph of one adaptation objective before any parameter update.
struct StepObjective {
  Var<float> L_r, L_c, L_ma, L_G, total;
  std::optional<CyclicOutputs<float>> cyclic;
  Var<float> I_p;
  Tensor<float> source_kp, synth_kp;
};

inline Var<float> image_batch(const std::vector<Image>& imgs) { return Var<float>::constant(images_to_tensor<float>(imgs)); }

inline float scalar_or_zero(const Var<float>& v) { return v.defined() ? v.item() : 0.0f; }

// Per-keypoint trajectories of the detector over a set of videos.
inline std::vector<topology::KeypointTrajectory> detect_trajectories(const MotionTransferModel<float>& model,
                                                                     const std::vector<synth::VideoRecord>& videos,
                                                                     int chunk = 20) {
  std::vector<topology::KeypointTrajectory> out;
  for (const auto& v : videos) {
    topology::KeypointTrajectory tr;
    tr.video_id = v.id;
    for (std::size_t s = 0; s < v.frames.size(); s += static_cast<std::size_t>(chunk)) {
      const std::size_t e = std::min(v.frames.size(), s + static_cast<std::size_t>(chunk));
      const std::vector<Image> part(v.frames.begin() + static_cast<long>(s), v.frames.begin() + static_cast<long>(e));
      for (auto& k : keypoint_sets(model.detect(image_batch(part)).kp.value())) tr.frames.push_back(std::move(k));
    }
    out.push_back(std::move(tr));
  }
  return out;
}

struct DiscoveryResult {
  topology::TopologyGraph graph;
  topology::DiversityMatrix diversity;
  topology::Threshold threshold;
};

inline DiscoveryResult discover_topology(std::span<const topology::KeypointTrajectory> trajectories,
                                         double percentile) {
  DiscoveryResult r;
  r.diversity = topology::distance_diversity(trajectories);
  r.threshold = topology::select_threshold(r.diversity, percentile);
  r.graph = topology::build_topology(r.diversity, r.threshold.eta);
  return r;
}

// ---------------------------------------------------------------- checkpoint I/O

inline constexpr std::uint32_t kWeightsVersion = 1;
inline constexpr char kWeightsMagic[4] = {'M', 'A', 'A', 'W'};

struct TensorEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;  // in floats
};

inline void write_weights(const std::filesystem::path& path, const std::vector<const Tensor<float>*>& tensors) {
  static_assert(std::endian::native == std::endian::little, "weights.bin is little-endian");
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp);
    std::uint64_t count = 0;
    for (const auto* t : tensors) count += t->size();
    out.write(kWeightsMagic, 4);
    out.write(reinterpret_cast<const char*>(&kWeightsVersion), sizeof kWeightsVersion);
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    for (const auto* t : tensors)
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp + " to " + path.string() + ": " + ec.message());
}

inline std::vector<float> read_weights(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open weights file " + path.string());
  char magic[4];
  std::uint32_t version = 0;
  std::uint64_t count = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), sizeof version);
  in.read(reinterpret_cast<char*>(&count), sizeof count);
  if (!in || std::memcmp(magic, kWeightsMagic, 4) != 0) throw IoError("not a weights file: " + path.string());
  if (version != kWeightsVersion)
    throw IoError("unsupported weights version " + std::to_string(version) + " in " + path.string());
  std::vector<float> data(count);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IoError("weights file truncated: " + path.string());
  if (in.peek() != std::char_traits<char>::eof()) throw IoError("trailing bytes in weights file: " + path.string());
  return data;
}

// Loaded checkpoint contents before they are bound to a model.
struct Checkpoint {
  nlohmann::json manifest;
  std::vector<TensorEntry> entries;
  std::vector<float> data;

  const TensorEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("checkpoint directory not found: " + dir.string());
  Checkpoint c;
  c.manifest = synth::read_json(dir / "manifest.json");
  try {
    for (const auto& e : c.manifest.at("tensors"))
      c.entries.push_back({e.at("name").get<std::string>(), e.at("shape").get<std::vector<int>>(),
                           e.at("offset").get<std::size_t>()});
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed checkpoint manifest in " + dir.string() + ": " + ex.what());
  }
  c.data = read_weights(dir / "weights.bin");
  std::size_t expected = 0;
  for (const auto& e : c.entries) {
    if (e.offset != expected)
      throw IoError("checkpoint tensor table is not contiguous at " + e.name + " in " + dir.string());
    expected += Tensor<float>::count(e.shape);
  }
  if (expected != c.data.size())
    throw IoError("checkpoint " + dir.string() + ": manifest declares " + std::to_string(expected) +
                  " values, weights.bin holds " + std::to_string(c.data.size()));
  return c;
}

// Copies the named tensors out of a checkpoint. Every mismatch is collected so the
// error reads as a diff between the manifest and the model.
inline void restore_tensors(const Checkpoint& c, const std::vector<std::pair<std::string, Tensor<float>*>>& targets) {
  std::vector<std::string> diff;
  for (const auto& [name, t] : targets) {
    const TensorEntry* e = c.find(name);
    if (!e)
      diff.push_back("- " + name + " " + Tensor<float>::shape_string(t->shape()) + " (missing from checkpoint)");
    else if (e->shape != t->shape())
      diff.push_back("~ " + name + " model " + Tensor<float>::shape_string(t->shape()) + " vs checkpoint " +
                     Tensor<float>::shape_string(e->shape));
  }
  if (!diff.empty()) {
    std::string msg = "checkpoint does not match the model:";
    for (const auto& d : diff) msg += "\n  " + d;
    throw IoError(msg);
  }
  for (const auto& [name, t] : targets) {
    const TensorEntry* e = c.find(name);
    std::copy_n(c.data.begin() + static_cast<long>(e->offset), t->size(), t->data());
  }
}

inline std::string config_diff(const nlohmann::json& expected, const nlohmann::json& got) {
  std::string out;
  for (const auto& op : nlohmann::json::diff(expected, got))
    out += "\n  " + op.value("op", std::string()) + " " + op.value("path", std::string()) +
           (op.contains("value") ? " = " + op["value"].dump() : std::string());
  return out;
}

// ---------------------------------------------------------------- trainer

class Trainer {
 public:
  Trainer(const TrainingConfig& cfg, const synth::Dataset& data)
      : cfg_(cfg),
        data_(&data),
        model_(cfg.model, synth::mix_seed(cfg.seed, 1)),
        perceptual_(cfg.model),
        disc_(cfg.patch_size, synth::mix_seed(cfg.seed, 2)),
        sampler_(synth::mix_seed(cfg.seed, 3)) {
    cfg.validate();
    require(data.config.image_size == cfg.model.image_size, "dataset image size does not match the model config");
    require(!data.source_train.empty(), "training needs source-domain videos");
    for (const auto& v : data.source_train) require(v.length() >= 2, "source video " + v.id + " has fewer than 2 frames");
    reset_optimizers();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  const TrainingConfig& config() const { return cfg_; }
  MotionTransferModel<float>& model() { return model_; }
  const MotionTransferModel<float>& model() const { return model_; }
  const PerceptualLoss<float>& perceptual() const { return perceptual_; }
  sgac::Discriminator<float>& discriminator() { return disc_; }
  Stage stage() const { return stage_; }
  long iteration() const { return iteration_; }
  const std::optional<topology::TopologyGraph>& topology() const { return topology_; }
  const std::vector<nlohmann::json>& history() const { return history_; }

  void set_log(const std::filesystem::path& path) { log_path_ = path; }
  void set_dump_dir(const std::filesystem::path& dir) { dump_dir_ = dir; }

  // Switches to adaptation: fixed topology, fresh discriminator and optimizers.
  void begin_adaptation(const topology::TopologyGraph& g) {
    require(g.K == cfg_.model.num_kp, "topology K does not match the model");
    topology_ = g;
    stage_ = Stage::Adapt;
    iteration_ = 0;
    sampler_.seed(synth::mix_seed(cfg_.seed, 4));
    reset_optimizers();
  }

  // -------------------------------------------------------------- sampling

  PairBatch sample_pair_batch() {
    PairBatch b;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const auto& v = data_->source_train[uniform_index(data_->source_train.size())];
      const auto [fi, fj] = distinct_frames(v.length());
      b.source.push_back(v.frames[fi]);
      b.driving.push_back(v.frames[fj]);
      b.ids.push_back(v.id + ":" + std::to_string(fi) + "->" + std::to_string(fj));
    }
    return b;
  }

  InstanceBatch sample_instance_batch() {
    require(!data_->target_train.empty(), "adaptation needs target-domain images");
    InstanceBatch b;
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const auto& t = data_->target_train[uniform_index(data_->target_train.size())];
      const auto& v = data_->source_train[uniform_index(data_->source_train.size())];
      const auto [fi, fj] = distinct_frames(v.length());
      b.source.push_back(t.frames.at(0));
      b.driving_i.push_back(v.frames[fi]);
      b.driving_j.push_back(v.frames[fj]);
      b.ids.push_back(t.id + "|" + v.id + ":" + std::to_string(fi) + "," + std::to_string(fj));
    }
    b.recon = sample_pair_batch();
    return b;
  }

  // -------------------------------------------------------------- steps

  double pretrain_step(const PairBatch& b) {
    const Var<float> drv = image_batch(b.driving);
    const Var<float> loss = perceptual_(model_.forward(image_batch(b.source), drv).image, drv);
    LossBreakdown br;
    br.L_r = br.total = loss.item();
    guard(br, b.source, b.driving, b.ids);
    opt_b_.zero_grad();
    ad::backward(loss);
    opt_b_.step();
    return br.L_r;
  }

  // Objective graph for one batch; `update_discriminator` runs the D step in
  // between, as training does.
  StepObjective build_objective(const InstanceBatch& b, LossBreakdown& br, bool update_discriminator) {
    StepObjective o;
    const Var<float> src = image_batch(b.source), di = image_batch(b.driving_i), dj = image_batch(b.driving_j);
    const Var<float> rd = image_batch(b.recon.driving);
    o.L_r = perceptual_(model_.forward(image_batch(b.recon.source), rd).image, rd);

    const bool need_synth = cfg_.cyclic || cfg_.lambda_ma > 0 || cfg_.lambda_ac > 0;
    Motion<float> src_motion, drv_motion, synth_motion;
    if (cfg_.cyclic) {
      o.cyclic = cyclic_forward(model_, src, di, dj);
      o.I_p = o.cyclic->I_p();
      src_motion = o.cyclic->first.source;
      drv_motion = o.cyclic->first.driving;
      synth_motion = o.cyclic->synth_motion;
      o.L_c = perceptual_(o.cyclic->I_c(), di);
    } else {
      o.L_c = perceptual_(model_.forward(dj, di).image, di);
      if (need_synth) {
        const auto first = model_.forward(src, di);
        o.I_p = first.image;
        src_motion = first.source;
        drv_motion = first.driving;
        if (cfg_.lambda_ma > 0 || cfg_.lambda_ac > 0) synth_motion = model_.detect(o.I_p);
      }
    }
    o.total = ad::add(o.L_r, o.L_c);

    if (cfg_.lambda_ma > 0) {
      o.L_ma = sima::motion_adaptation_loss(*topology_, drv_motion.kp, synth_motion.kp).total;
      o.total = ad::add(o.total, ad::scale(o.L_ma, static_cast<float>(cfg_.lambda_ma)));
    }
    if (cfg_.lambda_ac > 0) {
      o.source_kp = src_motion.kp.value();
      o.synth_kp = synth_motion.kp.value();
      const auto ac = sgac::appearance_losses(disc_, src, o.I_p, o.source_kp, o.synth_kp);
      br.L_ac_D = ac.discriminator.item();
      if (update_discriminator) {
        const auto before = model_.params().checksum();
        opt_d_.zero_grad();
        ad::backward(ac.discriminator);
        if (std::isfinite(br.L_ac_D)) opt_d_.step();
        if (model_.params().checksum() != before) throw NumericError("discriminator update modified the generator");
      }
      o.L_G = sgac::generator_loss(disc_, o.I_p, o.synth_kp);
      o.total = ad::add(o.total, ad::scale(o.L_G, static_cast<float>(cfg_.lambda_ac)));
    }
    br.L_r = o.L_r.item();
    br.L_c = o.L_c.item();
    br.L_ma = scalar_or_zero(o.L_ma);
    br.L_ac_G = scalar_or_zero(o.L_G);
    br.total = o.total.item();
    return o;
  }

  LossBreakdown maa_train_step(const InstanceBatch& b) {
    require(topology_.has_value(), "adaptation step needs a topology");
    LossBreakdown br;
    StepObjective o = build_objective(b, br, true);
    if (o.I_p.defined() && !o.I_p.value().all_finite()) br.total = std::nan("");
    guard(br, b.source, b.driving_i, b.ids);
    const auto before = disc_.params().checksum();
    opt_b_.zero_grad();
    ad::backward(o.total);
    opt_b_.step();
    if (disc_.params().checksum() != before) throw NumericError("generator update modified the discriminator");
    return br;
  }

  // Samples a batch for the current stage, takes one step, and logs it.
  LossBreakdown train_iteration() {
    LossBreakdown br;
    if (stage_ == Stage::Pretrain) {
      br.L_r = br.total = pretrain_step(sample_pair_batch());
    } else {
      br = maa_train_step(sample_instance_batch());
    }
    ++iteration_;
    nlohmann::json row = to_json(br);
    row["stage"] = stage_name(stage_);
    row["iteration"] = iteration_;
    history_.push_back(row);
    if (!log_path_.empty()) {
      std::ofstream out(log_path_, std::ios::app);
      if (!out) throw IoError("cannot append to log " + log_path_.string());
      out << row.dump() << '\n';
    }
    return br;
  }

  void run(long iterations) {
    for (long i = 0; i < iterations; ++i) train_iteration();
  }

  // -------------------------------------------------------------- persistence

  nlohmann::json manifest() const {
    nlohmann::json m;
    m["format_version"] = 1;
    m["config"] = cfg_;
    m["stage"] = stage_name(stage_);
    m["iteration"] = iteration_;
    m["seed"] = cfg_.seed;
    m["history"] = history_;
    std::ostringstream rng;
    rng << sampler_;
    m["rng_state"] = rng.str();
    m["adam_steps"] = {{"B", opt_b_.steps()}, {"D", opt_d_.steps()}};
    m["topology"] = topology_ ? topology::to_json(*topology_) : nlohmann::json();
    nlohmann::json table = nlohmann::json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : tensor_table()) {
      table.push_back({{"name", name}, {"shape", t->shape()}, {"offset", offset}});
      offset += t->size();
    }
    m["tensors"] = table;
    return m;
  }

  void save(const std::filesystem::path& dir) const {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create checkpoint directory " + dir.string() + ": " + ec.message());
    std::vector<const Tensor<float>*> tensors;
    for (const auto& [name, t] : tensor_table()) tensors.push_back(t);
    write_weights(dir / "weights.bin", tensors);
    synth::write_text_atomic(dir / "manifest.json", manifest().dump(1));
  }

  // Restores every piece of training state saved by `save`.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& dir, const synth::Dataset& data) {
    const Checkpoint c = load_checkpoint(dir);
    TrainingConfig cfg;
    try {
      cfg = c.manifest.at("config").get<TrainingConfig>();
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("checkpoint manifest has no usable config: " + std::string(ex.what()));
    }
    auto t = std::make_unique<Trainer>(cfg, data);
    t->restore(c);
    return t;
  }

  // Starts adaptation from pretrained generator-side weights only.
  static std::unique_ptr<Trainer> from_pretrained(const std::filesystem::path& dir, const TrainingConfig& cfg,
                                                  const synth::Dataset& data,
                                                  const std::optional<topology::TopologyGraph>& g = std::nullopt) {
    const Checkpoint c = load_checkpoint(dir);
    const nlohmann::json want = cfg.model;
    const nlohmann::json have = c.manifest.at("config").at("model");
    if (want != have) throw IoError("pretrained checkpoint model config differs:" + config_diff(want, have));
    auto t = std::make_unique<Trainer>(cfg, data);
    std::vector<std::pair<std::string, Tensor<float>*>> targets;
    for (const auto& [name, v] : t->model_.params().items())
      targets.emplace_back("B/" + name, &const_cast<Var<float>&>(v).mutable_value());
    restore_tensors(c, targets);
    auto topo = g;
    if (!topo && !c.manifest.at("topology").is_null()) topo = topology::topology_from_json(c.manifest.at("topology"));
    if (!topo) throw IoError("no topology available: run discovery on " + dir.string() + " first");
    t->begin_adaptation(*topo);
    return t;
  }

  void set_topology(const topology::TopologyGraph& g) { topology_ = g; }

 private:
  void reset_optimizers() {
    const nn::AdamOptions opts{cfg_.learning_rate, 0.9, 0.999, 1e-8};
    opt_b_ = nn::Adam<float>(model_.params().vars(), opts);
    opt_d_ = nn::Adam<float>(disc_.params().vars(), opts);
  }

  std::size_t uniform_index(std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(sampler_);
  }

  std::pair<std::size_t, std::size_t> distinct_frames(int length) {
    const std::size_t n = static_cast<std::size_t>(length);
    const std::size_t i = uniform_index(n);
    std::size_t j = uniform_index(n - 1);
    if (j >= i) ++j;
    return {i, j};
  }

  std::vector<std::pair<std::string, const Tensor<float>*>> tensor_table() const {
    std::vector<std::pair<std::string, const Tensor<float>*>> out;
    auto add_set = [&](const std::string& prefix, const auto& items) {
      for (const auto& [name, v] : items) out.emplace_back(prefix + name, &v.value());
    };
    auto add_moments = [&](const std::string& prefix, const auto& items, const std::vector<Tensor<float>>& m) {
      for (std::size_t i = 0; i < items.size(); ++i) out.emplace_back(prefix + items[i].first, &m[i]);
    };
    auto& ob = const_cast<nn::Adam<float>&>(opt_b_);
    auto& od = const_cast<nn::Adam<float>&>(opt_d_);
    add_set("B/", model_.params().items());
    add_set("D/", disc_.params().items());
    add_moments("adamB.m/", model_.params().items(), ob.first_moments());
    add_moments("adamB.v/", model_.params().items(), ob.second_moments());
    add_moments("adamD.m/", disc_.params().items(), od.first_moments());
    add_moments("adamD.v/", disc_.params().items(), od.second_moments());
    return out;
  }

  void restore(const Checkpoint& c) {
    std::vector<std::pair<std::string, Tensor<float>*>> targets;
    for (const auto& [name, t] : tensor_table()) targets.emplace_back(name, const_cast<Tensor<float>*>(t));
    restore_tensors(c, targets);
    const auto& m = c.manifest;
    try {
      stage_ = parse_stage(m.at("stage").get<std::string>());
      iteration_ = m.at("iteration").get<long>();
      history_ = m.at("history").get<std::vector<nlohmann::json>>();
      std::istringstream rng(m.at("rng_state").get<std::string>());
      rng >> sampler_;
      if (!rng) throw IoError("checkpoint RNG state is unreadable");
      opt_b_.set_steps(m.at("adam_steps").at("B").get<long>());
      opt_d_.set_steps(m.at("adam_steps").at("D").get<long>());
      if (!m.at("topology").is_null()) topology_ = topology::topology_from_json(m.at("topology"));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError("malformed checkpoint manifest: " + std::string(ex.what()));
    }
  }

  // Aborts on a non-finite loss, leaving the offending batch on disk.
  void guard(const LossBreakdown& br, const std::vector<Image>& a, const std::vector<Image>& b,
             const std::vector<std::string>& ids) const {
    if (br.all_finite()) return;
    std::string where;
    if (!dump_dir_.empty()) {
      const auto dir = dump_dir_ / ("nonfinite_" + std::string(stage_name(stage_)) + "_" + std::to_string(iteration_));
      std::filesystem::create_directories(dir);
      for (std::size_t i = 0; i < a.size(); ++i) {
        write_png(dir / ("source_" + std::to_string(i) + ".png"), a[i]);
        write_png(dir / ("driving_" + std::to_string(i) + ".png"), b[i]);
      }
      nlohmann::json info = to_json(br);
      info["ids"] = ids;
      info["iteration"] = iteration_;
      synth::write_text_atomic(dir / "batch.json", info.dump(1));
      where = "; batch written to " + dir.string();
    }
    throw NumericError("non-finite loss at " + std::string(stage_name(stage_)) + " iteration " +
                       std::to_string(iteration_) + ": " + to_json(br).dump() + where);
  }

  TrainingConfig cfg_;
  const synth::Dataset* data_;
  MotionTransferModel<float> model_;
  PerceptualLoss<float> perceptual_;
  sgac::Discriminator<float> disc_;
  nn::Adam<float> opt_b_, opt_d_;
  std::mt19937_64 sampler_;
  Stage stage_ = Stage::Pretrain;
  long iteration_ = 0;
  std::optional<topology::TopologyGraph> topology_;
  std::vector<nlohmann::json> history_;
  std::filesystem::path log_path_;
  std::filesystem::path dump_dir_;
};

// Model-only view of a checkpoint, for inference.
inline std::unique_ptr<MotionTransferModel<float>> load_model(const std::filesystem::path& dir) {
  const Checkpoint c = load_checkpoint(dir);
  ModelConfig mc;
  try {
    mc = c.manifest.at("config").at("model").get<ModelConfig>();
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("checkpoint manifest has no model config: " + std::string(ex.what()));
  }
  auto m = std::make_unique<MotionTransferModel<float>>(mc);
  std::vector<std::pair<std::string, Tensor<float>*>> targets;
  for (const auto& [name, v] : m->params().items())
    targets.emplace_back("B/" + name, &const_cast<Var<float>&>(v).mutable_value());
  restore_tensors(c, targets);
  return m;
}

}  // namespace maa
