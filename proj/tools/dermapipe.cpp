// dermapipe: command-line entry point for the severity pipeline.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "dermapipe/dataset.hpp"
#include "dermapipe/error.hpp"
#include "dermapipe/experiment.hpp"
#include "dermapipe/featurestore.hpp"
#include "dermapipe/log.hpp"
#include "dermapipe/metrics.hpp"
#include "dermapipe/mlp.hpp"
#include "dermapipe/segmentation.hpp"

namespace fs = std::filesystem;
using namespace dermapipe;

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> k;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::string> out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--k", k, "Number of segmentation prompts");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--lr", lr, "Adam learning rate");
    cmd->add_option("--out", out, "Output directory");
  }

  void apply(ExperimentConfig& c) const {
    if (seed) {
      c.splits.seed = *seed;
      c.train.seed = *seed;
    }
    if (k) c.k = *k;
    if (epochs) c.train.epochs = *epochs;
    if (lr) c.train.adam.learning_rate = *lr;
    if (out) c.out_dir = *out;
  }
};

ExperimentConfig base_config(const std::string& config_path, const Overrides& overrides) {
  ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_config(config_path);
  overrides.apply(c);
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << text;
}

std::unique_ptr<SegmenterBackend> make_backend(const std::string& spec, const Manifest& manifest, int timeout_s) {
  if (spec == "oracle") return std::make_unique<OracleBackend>(manifest);
  if (spec == "trivial") return std::make_unique<TrivialBackend>();
  return std::make_unique<ProcessBackend>(spec, std::chrono::seconds(timeout_s));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Eczema severity pipeline: prompt retrieval, segmentation orchestration, MLP training and evaluation"};
  app.require_subcommand(1);

  // split
  auto* split_cmd = app.add_subcommand("split", "Generate seeded train/validation splits");
  std::string manifest_path, config_path;
  SplitOptions split_opts;
  std::string out_dir;
  split_cmd->add_option("--manifest", manifest_path, "Manifest (JSON lines)")->required();
  split_cmd->add_option("--n-splits", split_opts.n_splits, "Number of splits")->capture_default_str();
  split_cmd->add_option("--ratio", split_opts.train_ratio, "Training share")->capture_default_str();
  split_cmd->add_option("--seed", split_opts.seed, "Random seed")->capture_default_str();
  split_cmd->add_flag("--stratified", split_opts.stratified, "Shuffle within each class");
  split_cmd->add_option("--out", out_dir, "Output directory")->required();

  // segment
  auto* seg_cmd = app.add_subcommand("segment", "Retrieve prompts and run a segmentation backend over a manifest");
  std::string features_path, backend_spec, split_path;
  SegmentationBatchOptions seg_opts;
  seg_opts.jobs = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  int timeout_s = 120;
  seg_cmd->add_option("--manifest", manifest_path, "Manifest (JSON lines)")->required();
  seg_cmd->add_option("--features", features_path, "Whole-image feature file used for retrieval")->required();
  seg_cmd->add_option("--backend", backend_spec, "Backend command, or 'oracle' / 'trivial'")->required();
  seg_cmd->add_option("--k", seg_opts.k, "Prompts per image")->capture_default_str();
  seg_cmd->add_option("--jobs", seg_opts.jobs, "Concurrent backend invocations");
  seg_cmd->add_flag("--force", seg_opts.force, "Recompute cached masks");
  seg_cmd->add_option("--split", split_path, "Restrict prompt candidates to this split's training ids");
  seg_cmd->add_option("--timeout", timeout_s, "Per-job timeout in seconds")->capture_default_str();
  seg_cmd->add_option("--out", out_dir, "Mask output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the severity head on one split");
  Overrides train_over;
  train_cmd->add_option("--config", config_path, "Experiment config (JSON) for training hyperparameters");
  train_cmd->add_option("--manifest", manifest_path, "Manifest (JSON lines)")->required();
  train_cmd->add_option("--features", features_path, "Feature file")->required();
  train_cmd->add_option("--split", split_path, "Split document")->required();
  train_over.attach(train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a trained head on a split's validation ids");
  std::string model_path;
  eval_cmd->add_option("--manifest", manifest_path, "Manifest (JSON lines)")->required();
  eval_cmd->add_option("--features", features_path, "Feature file")->required();
  eval_cmd->add_option("--split", split_path, "Split document")->required();
  eval_cmd->add_option("--model", model_path, "Trained head")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory for metrics.json / metrics.csv");

  // experiment
  auto* exp_cmd = app.add_subcommand("experiment", "Run a full experiment protocol");
  std::string exp_mode;
  Overrides exp_over;
  exp_cmd->add_option("mode", exp_mode, "cv | ablation | sweep")->required()->check(CLI::IsMember({"cv", "ablation", "sweep"}));
  exp_cmd->add_option("--config", config_path, "Experiment config (JSON)")->required();
  exp_over.attach(exp_cmd);

  // report
  auto* report_cmd = app.add_subcommand("report", "Render summary.md (and sweep.csv) from an experiment directory");
  std::string report_dir;
  report_cmd->add_option("dir", report_dir, "Experiment directory");
  report_cmd->add_option("--out", report_dir, "Experiment directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (split_cmd->parsed()) {
      const auto manifest = load_manifest(manifest_path);
      fs::create_directories(out_dir);
      for (const auto& s : make_splits(manifest, split_opts)) {
        const auto path = fs::path(out_dir) / ("split_" + std::to_string(s.split_index) + ".json");
        write_split(s, path);
        std::cout << path.string() << '\n';
      }
    } else if (seg_cmd->parsed()) {
      const auto manifest = load_manifest(manifest_path);
      const auto features = read_feature_file(features_path);
      if (!split_path.empty()) seg_opts.pool = read_split(split_path).train_ids;
      seg_opts.out_dir = out_dir;
      const auto backend = make_backend(backend_spec, manifest, timeout_s);
      const auto index = run_segmentation_batch(manifest, features, *backend, seg_opts);
      std::cout << index.masks.size() << " masks, " << index.failures.size() << " failures, "
                << index.backend_calls << " backend calls\n";
      // Per-record failures fall back; a backend that never succeeds is broken.
      if (index.masks.empty() && !index.failures.empty()) {
        fail(Errc::BackendFailure, "every segmentation job failed, e.g. " + index.failures.begin()->second);
      }
    } else if (train_cmd->parsed()) {
      auto cfg = base_config(config_path, train_over);
      if (!train_over.out) fail(Errc::ConfigError, "--out is required");
      const auto manifest = load_manifest(manifest_path);
      const auto features = read_feature_file(features_path);
      const auto split = read_split(split_path);
      auto tc = cfg.train;
      tc.seed = train_over.seed ? *train_over.seed : training_seed(cfg.splits.seed, split.split_index, split.fraction);
      const auto result = train(features, split, manifest.labels(), tc);
      fs::create_directories(cfg.out_dir);
      write_model(result.params, cfg.out_dir / "model.ddxm");
      write_text(cfg.out_dir / "train_log.csv", training_log_csv(result.log));
      if (!result.log.empty()) {
        std::cout << "final train loss " << result.log.back().train_loss << ", val weighted F1 "
                  << result.log.back().val_weighted_f1 << '\n';
      }
    } else if (eval_cmd->parsed()) {
      const auto manifest = load_manifest(manifest_path);
      const auto features = read_feature_file(features_path);
      const auto split = read_split(split_path);
      const auto params = read_model(model_path);
      const auto x = gather_features(features, split.val_ids);
      const auto y = gather_labels(manifest.labels(), split.val_ids);
      const auto report = make_report(y, predict(params, x));
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "metrics.json", to_json(report).dump(2) + "\n");
        write_text(fs::path(out_dir) / "metrics.csv", csv_header() + "\n" + csv_row(report) + "\n");
      }
      std::cout << "weighted F1 " << report.weighted_f1 << " over " << report.n_samples << " samples\n";
    } else if (exp_cmd->parsed()) {
      auto cfg = base_config(config_path, exp_over);
      cfg.mode = parse_mode(exp_mode);
      run_experiment(cfg);
      std::ifstream summary(cfg.out_dir / "summary.md");
      std::cout << summary.rdbuf();
    } else if (report_cmd->parsed()) {
      if (report_dir.empty()) fail(Errc::ConfigError, "experiment directory is required");
      std::cout << render_report(report_dir).markdown;
    }
  } catch (const Error& e) {
    logger().error("{}", e.what());
    return exit_code(e.code());
  } catch (const std::exception& e) {
    logger().error("{}", e.what());
    return 3;
  }
  return 0;
}
