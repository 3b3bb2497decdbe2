// maa: data generation, training, topology discovery, animation and evaluation.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "maa/config.hpp"

namespace fs = std::filesystem;
using namespace maa;

namespace {

struct Globals {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  fs::path out;
};

RunConfig resolve(const Globals& g) {
  RunConfig c = load_run_config(g.config);
  if (g.seed) c.set_seed(*g.seed);
  return c;
}

fs::path require_out(const Globals& g) {
  if (g.out.empty()) throw InputError("--out is required");
  return g.out;
}

void print_losses(const std::string& tag, const Trainer& t) {
  std::cout << tag << " iteration " << t.iteration() << ' ' << t.history().back().dump() << '\n';
}

void train_loop(Trainer& t, long target, long save_every, const fs::path& out) {
  while (t.iteration() < target) {
    t.train_iteration();
    if (t.iteration() % 100 == 0 || t.iteration() == target) print_losses(stage_name(t.stage()), t);
    if (save_every > 0 && t.iteration() % save_every == 0) t.save(out);
  }
  t.save(out);
}

std::vector<Image> read_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("driving video directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG frames in " + dir.string());
  std::vector<Image> frames;
  for (const auto& f : files) frames.push_back(read_png(f));
  return frames;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cross-domain motion transfer on synthetic articulated characters"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for data, training and the oracle");
  app.add_option("--out", g.out, "Output path");

  auto* gen = app.add_subcommand("gen-data", "Render the synthetic two-domain dataset");

  auto* pre = app.add_subcommand("pretrain", "Single-domain training on source videos");
  fs::path data;
  std::optional<long> iterations;
  std::optional<fs::path> resume;
  long save_every = 0;
  pre->add_option("--data", data, "Dataset root")->required();
  pre->add_option("--iterations", iterations, "Total iterations for this stage");
  pre->add_option("--resume", resume, "Continue from a pretraining checkpoint");
  pre->add_option("--save-every", save_every, "Checkpoint interval (0 = end only)");

  auto* disc = app.add_subcommand("discover", "Discover the keypoint topology of a pretrained model");
  fs::path checkpoint;
  disc->add_option("--checkpoint", checkpoint, "Pretrained checkpoint")->required();
  disc->add_option("--data", data, "Dataset root")->required();

  auto* adapt = app.add_subcommand("adapt", "Cross-domain adaptation from a pretrained checkpoint");
  fs::path pretrained;
  std::optional<fs::path> topology_file;
  bool no_cyc = false, no_sima = false, no_sgac = false, baseline = false;
  adapt->add_option("--pretrained", pretrained, "Pretrained checkpoint");
  adapt->add_option("--topology", topology_file, "Topology JSON (defaults to the one in the checkpoint)");
  adapt->add_option("--data", data, "Dataset root")->required();
  adapt->add_option("--iterations", iterations, "Total iterations for this stage");
  adapt->add_option("--resume", resume, "Continue from an adaptation checkpoint");
  adapt->add_option("--save-every", save_every, "Checkpoint interval (0 = end only)");
  adapt->add_flag("--no-cyc", no_cyc, "Direct driving reconstruction instead of the cycle");
  adapt->add_flag("--no-sima", no_sima, "Drop the angle regularizer");
  adapt->add_flag("--no-sgac", no_sgac, "Drop the patch-adversarial term");
  adapt->add_flag("--baseline", baseline, "All three ablations at once");

  auto* anim = app.add_subcommand("animate", "Animate a still image with a driving video");
  fs::path source_png, driving_dir;
  anim->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  anim->add_option("--source", source_png, "Source image")->required()->check(CLI::ExistingFile);
  anim->add_option("--driving", driving_dir, "Directory of driving PNG frames")->required();

  auto* oracle_cmd = app.add_subcommand("train-oracle", "Train the pose oracle on labeled target renders");
  oracle_cmd->add_option("--iterations", iterations, "Training iterations");

  auto* ev = app.add_subcommand("evaluate", "Score a checkpoint with the pose oracle and palette distance");
  fs::path oracle_dir;
  std::string configuration;
  ev->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
  ev->add_option("--oracle", oracle_dir, "Pose oracle directory")->required();
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--configuration", configuration, "Row name (defaults to the checkpoint's configuration)");

  auto* rep = app.add_subcommand("report", "Aggregate evaluation reports into a table and chart");
  std::vector<fs::path> inputs;
  rep->add_option("reports", inputs, "Evaluation report JSON files")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  flush_denormals();

  try {
    RunConfig cfg = resolve(g);
    const auto t0 = std::chrono::steady_clock::now();

    if (gen->parsed()) {
      const auto out = require_out(g);
      synth::render_dataset(out, cfg.data);
      std::cout << "dataset written to " << out << '\n';

    } else if (pre->parsed()) {
      const auto out = require_out(g);
      const auto d = synth::load_dataset(data);
      cfg.training.data_root = data.string();
      if (iterations) cfg.training.pretrain_iterations = static_cast<int>(*iterations);
      std::unique_ptr<Trainer> t = resume ? Trainer::resume(*resume, d) : std::make_unique<Trainer>(cfg.training, d);
      if (t->stage() != Stage::Pretrain) throw InputError("--resume checkpoint is not a pretraining checkpoint");
      fs::create_directories(out);
      t->set_log(out / "train.jsonl");
      t->set_dump_dir(out);
      train_loop(*t, iterations ? *iterations : t->config().pretrain_iterations, save_every, out);

    } else if (disc->parsed()) {
      const auto out = require_out(g);
      const auto model = load_model(checkpoint);
      const auto d = synth::load_dataset(data);
      const auto ckpt_cfg = load_checkpoint(checkpoint).manifest.at("config").get<TrainingConfig>();
      const double pct = g.config ? cfg.training.eta_percentile : ckpt_cfg.eta_percentile;
      const auto traj = detect_trajectories(*model, d.source_train);
      const auto r = discover_topology(traj, pct);
      fs::create_directories(out);
      synth::write_text_atomic(out / "topology.json", topology::to_json(r.graph).dump(1));
      std::cout << "eta " << r.graph.eta << ", " << r.graph.edges.size() << " edges, " << r.graph.structured.size()
                << " structured, " << r.graph.unstructured.size() << " unstructured\n";

    } else if (adapt->parsed()) {
      const auto out = require_out(g);
      const auto d = synth::load_dataset(data);
      std::optional<topology::TopologyGraph> topo;
      if (topology_file) topo = topology::topology_from_json(synth::read_json(*topology_file));
      std::unique_ptr<Trainer> t;
      if (resume) {
        t = Trainer::resume(*resume, d);
        if (t->stage() != Stage::Adapt) throw InputError("--resume checkpoint is not an adaptation checkpoint");
      } else {
        if (pretrained.empty()) throw InputError("adapt needs --pretrained or --resume");
        TrainingConfig tc = cfg.training;
        if (baseline) {
          tc = ablation_config(tc, "baseline");
        } else {
          std::string name;
          for (auto [on, flag] : {std::pair{no_cyc, "no-cyc"}, {no_sima, "no-sima"}, {no_sgac, "no-sgac"}})
            if (on) {
              tc = ablation_config(tc, flag);
              name += (name.empty() ? "" : "+") + std::string(flag);
            }
          tc.name = name.empty() ? "full" : name;
        }
        if (!g.config) tc.model = load_checkpoint(pretrained).manifest.at("config").at("model").get<ModelConfig>();
        tc.data_root = data.string();
        if (iterations) tc.adapt_iterations = static_cast<int>(*iterations);
        t = Trainer::from_pretrained(pretrained, tc, d, topo);
      }
      fs::create_directories(out);
      t->set_log(out / "train.jsonl");
      t->set_dump_dir(out);
      std::cout << "configuration " << t->config().name << '\n';
      train_loop(*t, iterations ? *iterations : t->config().adapt_iterations, save_every, out);

    } else if (anim->parsed()) {
      const auto out = require_out(g);
      const auto model = load_model(checkpoint);
      const Image source = read_png(source_png);
      const auto driving = read_frames(driving_dir);
      const auto frames = eval::animate(*model, source, driving);
      fs::create_directories(out);
      for (std::size_t t = 0; t < frames.size(); ++t) write_png(out / synth::frame_name(static_cast<int>(t)), frames[t]);
      write_png(out / "grid.png", eval::comparison_grid(source, driving, frames));
      std::cout << frames.size() << " frames written to " << out << '\n';

    } else if (oracle_cmd->parsed()) {
      const auto out = require_out(g);
      if (iterations) cfg.oracle.iterations = static_cast<int>(*iterations);
      eval::PoseOracle oracle(cfg.oracle.image_size, synth::mix_seed(cfg.oracle.seed, 100));
      const auto r = eval::train_pose_oracle(oracle, cfg.oracle);
      oracle.save(out);
      std::cout << "oracle train MAE " << r.train_mae << " rad, held-out MAE " << r.val_mae << " rad\n";
      if (!r.passed)
        throw NumericError("oracle not converged: held-out MAE " + std::to_string(r.val_mae) + " rad exceeds " +
                           std::to_string(cfg.oracle.gate_mae) + " rad");

    } else if (ev->parsed()) {
      const auto out = require_out(g);
      const auto oracle = eval::PoseOracle::load(oracle_dir);
      const auto model = load_model(checkpoint);
      const auto d = synth::load_dataset(data);
      const auto manifest = load_checkpoint(checkpoint).manifest;
      if (configuration.empty()) configuration = manifest.at("config").value("name", std::string("full"));
      auto report = eval::evaluate(*model, *oracle, d, configuration, checkpoint.string(), cfg.evaluation);
      report.config = manifest.at("config");
      if (out.has_parent_path()) fs::create_directories(out.parent_path());
      synth::write_text_atomic(out, eval::to_json(report).dump(1));
      std::cout << configuration << ": pose MAE " << report.pose_angle_mae << " rad, palette distance "
                << report.appearance_palette_distance << '\n';

    } else if (rep->parsed()) {
      const auto out = require_out(g);
      std::vector<eval::EvalReport> reports;
      for (const auto& p : inputs) reports.push_back(eval::report_from_json(synth::read_json(p)));
      eval::write_report(reports, out);
      std::cout << eval::markdown_table(eval::aggregate(reports));
    }

    std::cerr << "done in " << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << " s\n";
    return 0;
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
