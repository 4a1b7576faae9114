#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dermapipe/dataset.hpp"
#include "dermapipe/featurestore.hpp"
#include "dermapipe/metrics.hpp"
#include "dermapipe/mlp.hpp"

namespace dermapipe {

enum class ExperimentMode { Cv, Ablation, FractionSweep };

std::string_view mode_name(ExperimentMode mode) noexcept;
/// Accepts cv, ablation, sweep (or fraction_sweep). Throws ConfigError.
ExperimentMode parse_mode(std::string_view s);

struct ExperimentConfig {
  std::filesystem::path manifest;
  std::filesystem::path features_masked;
  std::optional<std::filesystem::path> features_whole;
  SplitOptions splits;
  TrainConfig train;
  int k = 2;
  ExperimentMode mode = ExperimentMode::Cv;
  std::vector<double> fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::filesystem::path out_dir;
};

/// Relative paths inside the document resolve against base_dir.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const ExperimentConfig& config);

/// Checks files and ranges before any work starts. Throws ConfigError.
void validate(const ExperimentConfig& config);

/// Seed for one training run; depends only on its position in the experiment.
std::uint64_t training_seed(std::uint64_t seed, int split_index, double fraction);

struct SplitOutcome {
  int split_index = 0;
  double fraction = 1.0;
  std::uint64_t split_hash = 0;
  std::uint64_t train_seed = 0;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  MetricsReport metrics;
  std::vector<EpochLog> log;
};

struct ArmReport {
  std::string name;
  Masking masking = Masking::Unknown;
  double fraction = 1.0;
  std::vector<SplitOutcome> splits;
  MeanStd weighted_f1;
};

struct ExperimentReport {
  ExperimentMode mode = ExperimentMode::Cv;
  /// cv: one arm; ablation: masked then whole_image; sweep: one per fraction.
  std::vector<ArmReport> arms;
};

nlohmann::json to_json(const ExperimentReport& report);

/// Trains and evaluates one arm over the given splits after subsampling each
/// training fold to `fraction`.
ArmReport evaluate_arm(const std::string& name, const Manifest& manifest, const FeatureStore& features,
                       std::span<const SplitSpec> splits, double fraction, const ExperimentConfig& config);

/// Each run validates the config, writes config.lock.json, the splits,
/// per-run training logs, report.json and summary.md into config.out_dir.
ExperimentReport run_cv(const ExperimentConfig& config);
ExperimentReport run_ablation(const ExperimentConfig& config);
ExperimentReport run_fraction_sweep(const ExperimentConfig& config);
ExperimentReport run_experiment(const ExperimentConfig& config);

struct RenderedReport {
  std::string markdown;
  /// fraction,mean,std rows for sweep reports; empty otherwise.
  std::string plot_csv;
};

/// Reads report.json from an experiment directory and writes summary.md (and
/// sweep.csv for sweeps). Throws MissingReport.
RenderedReport render_report(const std::filesystem::path& experiment_dir);

}  // namespace dermapipe
