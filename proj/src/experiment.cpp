#include "dermapipe/experiment.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "dermapipe/error.hpp"
#include "dermapipe/log.hpp"
#include "format.hpp"

namespace dermapipe {
namespace fs = std::filesystem;

std::string_view mode_name(ExperimentMode mode) noexcept {
  switch (mode) {
    case ExperimentMode::Cv: return "cv";
    case ExperimentMode::Ablation: return "ablation";
    case ExperimentMode::FractionSweep: return "sweep";
  }
  return "cv";
}

ExperimentMode parse_mode(std::string_view s) {
  if (s == "cv") return ExperimentMode::Cv;
  if (s == "ablation") return ExperimentMode::Ablation;
  if (s == "sweep" || s == "fraction_sweep") return ExperimentMode::FractionSweep;
  fail(Errc::ConfigError, "unknown experiment mode '" + std::string(s) + "'");
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_relative() && !base.empty() ? base / path : path;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path.string());
  out << text;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

ExperimentConfig config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  ExperimentConfig c;
  try {
    if (!j.is_object()) fail(Errc::ConfigError, "config must be a JSON object");
    if (j.contains("manifest")) c.manifest = resolve(base_dir, j.at("manifest").get<std::string>());
    if (j.contains("features_masked")) c.features_masked = resolve(base_dir, j.at("features_masked").get<std::string>());
    if (j.contains("features_whole") && !j.at("features_whole").is_null()) {
      c.features_whole = resolve(base_dir, j.at("features_whole").get<std::string>());
    }
    c.splits.n_splits = j.value("n_splits", c.splits.n_splits);
    c.splits.train_ratio = j.value("train_ratio", c.splits.train_ratio);
    c.splits.seed = j.value("seed", c.splits.seed);
    c.splits.stratified = j.value("stratified", c.splits.stratified);
    c.k = j.value("k", c.k);
    if (j.contains("mode")) c.mode = parse_mode(j.at("mode").get<std::string>());
    if (j.contains("fractions")) c.fractions = j.at("fractions").get<std::vector<double>>();
    if (j.contains("out")) c.out_dir = resolve(base_dir, j.at("out").get<std::string>());
    if (j.contains("train")) {
      const auto& t = j.at("train");
      auto& tc = c.train;
      tc.adam.learning_rate = t.value("learning_rate", tc.adam.learning_rate);
      tc.adam.beta1 = t.value("beta1", tc.adam.beta1);
      tc.adam.beta2 = t.value("beta2", tc.adam.beta2);
      tc.adam.epsilon = t.value("epsilon", tc.adam.epsilon);
      tc.adam.weight_decay = t.value("weight_decay", tc.adam.weight_decay);
      tc.epochs = t.value("epochs", tc.epochs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.dropout = t.value("dropout", tc.dropout);
      tc.hidden = t.value("hidden", tc.hidden);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::ConfigError, e.what());
  }
  c.train.seed = c.splits.seed;
  return c;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(Errc::ConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

nlohmann::json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  return {{"manifest", c.manifest.string()},
          {"features_masked", c.features_masked.string()},
          {"features_whole", c.features_whole ? nlohmann::json(c.features_whole->string()) : nlohmann::json()},
          {"n_splits", c.splits.n_splits},
          {"train_ratio", c.splits.train_ratio},
          {"seed", c.splits.seed},
          {"stratified", c.splits.stratified},
          {"k", c.k},
          {"mode", std::string(mode_name(c.mode))},
          {"fractions", c.fractions},
          {"out", c.out_dir.string()},
          {"train",
           {{"learning_rate", t.adam.learning_rate},
            {"beta1", t.adam.beta1},
            {"beta2", t.adam.beta2},
            {"epsilon", t.adam.epsilon},
            {"weight_decay", t.adam.weight_decay},
            {"epochs", t.epochs},
            {"batch_size", t.batch_size},
            {"dropout", t.dropout},
            {"hidden", t.hidden}}}};
}

void validate(const ExperimentConfig& c) {
  auto require_file = [](const fs::path& p, const char* what) {
    if (p.empty()) fail(Errc::ConfigError, std::string(what) + " is not set");
    if (!fs::is_regular_file(p)) fail(Errc::ConfigError, std::string(what) + " not found: " + p.string());
  };
  require_file(c.manifest, "manifest");
  require_file(c.features_masked, "features_masked");
  if (c.mode == ExperimentMode::Ablation) {
    if (!c.features_whole) fail(Errc::ConfigError, "ablation needs features_whole");
    require_file(*c.features_whole, "features_whole");
  }
  if (c.out_dir.empty()) fail(Errc::ConfigError, "output directory is not set");
  if (c.splits.n_splits < 1) fail(Errc::ConfigError, "n_splits must be >= 1");
  if (!(c.splits.train_ratio > 0.0 && c.splits.train_ratio < 1.0)) fail(Errc::ConfigError, "train_ratio must lie in (0,1)");
  if (c.k < 1) fail(Errc::ConfigError, "k must be >= 1");
  if (c.mode == ExperimentMode::FractionSweep && c.fractions.empty()) fail(Errc::ConfigError, "fractions is empty");
  for (double f : c.fractions) {
    if (!(f > 0.0 && f <= 1.0)) fail(Errc::ConfigError, "fraction " + std::to_string(f) + " not in (0,1]");
  }
  c.train.validate();
}

std::uint64_t training_seed(std::uint64_t seed, int split_index, double fraction) {
  return derive_seed(seed, static_cast<std::uint64_t>(split_index), std::bit_cast<std::uint64_t>(fraction));
}

ArmReport evaluate_arm(const std::string& name, const Manifest& manifest, const FeatureStore& features,
                       std::span<const SplitSpec> splits, double fraction, const ExperimentConfig& config) {
  ArmReport arm;
  arm.name = name;
  arm.masking = features.provenance().masking;
  arm.fraction = fraction;
  const auto labels = manifest.labels();
  for (const auto& full : splits) {
    const SplitSpec split = subsample_train(full, fraction, config.splits.seed);
    TrainConfig tc = config.train;
    tc.seed = training_seed(config.splits.seed, split.split_index, fraction);
    logger().info("{}: split {} fraction {} ({} train / {} val)", name, split.split_index, fraction,
                  split.train_ids.size(), split.val_ids.size());
    auto trained = train(features, split, labels, tc);

    SplitOutcome out;
    out.split_index = split.split_index;
    out.fraction = fraction;
    out.split_hash = split_hash(split);
    out.train_seed = tc.seed;
    out.n_train = split.train_ids.size();
    out.n_val = split.val_ids.size();
    const auto x_val = gather_features(features, split.val_ids);
    const auto y_val = gather_labels(labels, split.val_ids);
    out.metrics = make_report(y_val, predict(trained.params, x_val));
    out.log = std::move(trained.log);
    arm.splits.push_back(std::move(out));
  }
  std::vector<MetricsReport> reports;
  for (const auto& s : arm.splits) reports.push_back(s.metrics);
  arm.weighted_f1 = aggregate_splits(reports);
  return arm;
}

nlohmann::json to_json(const ExperimentReport& report) {
  nlohmann::json arms = nlohmann::json::array();
  for (const auto& arm : report.arms) {
    nlohmann::json splits = nlohmann::json::array();
    for (const auto& s : arm.splits) {
      std::ostringstream hash;
      hash << std::hex << std::setw(16) << std::setfill('0') << s.split_hash;
      splits.push_back({{"split_index", s.split_index},
                        {"fraction", s.fraction},
                        {"split_hash", hash.str()},
                        {"train_seed", s.train_seed},
                        {"n_train", s.n_train},
                        {"n_val", s.n_val},
                        {"metrics", to_json(s.metrics)}});
    }
    arms.push_back({{"name", arm.name},
                    {"masking", std::string(masking_name(arm.masking))},
                    {"fraction", arm.fraction},
                    {"weighted_f1_mean", arm.weighted_f1.mean},
                    {"weighted_f1_std", arm.weighted_f1.std},
                    {"splits", std::move(splits)}});
  }
  return {{"kind", std::string(mode_name(report.mode))}, {"arms", std::move(arms)}};
}

namespace {

struct Prepared {
  Manifest manifest;
  std::vector<SplitSpec> splits;
};

FeatureStore load_arm_features(const fs::path& path, const Manifest& manifest, Masking expected) {
  FeatureStore store = read_feature_file(path);
  const Masking tag = store.provenance().masking;
  if (tag != Masking::Unknown && tag != expected) {
    fail(Errc::ProvenanceMismatch, path.string() + " is tagged " + std::string(masking_name(tag)) + " but was given as " +
                                       std::string(masking_name(expected)) + " features");
  }
  if (tag == Masking::Unknown) logger().info("{} has no masking tag; assuming {}", path.string(), masking_name(expected));
  for (const auto& r : manifest.records()) {
    if (!store.contains(r.id)) fail(Errc::MissingFeature, r.id + " in " + path.string());
  }
  if (store.provenance().masking == Masking::Unknown) {
    auto p = store.provenance();
    p.masking = expected;
    store.set_provenance(p);
  }
  return store;
}

Prepared prepare(const ExperimentConfig& config) {
  validate(config);
  fs::create_directories(config.out_dir / "splits");
  fs::create_directories(config.out_dir / "logs");
  write_text(config.out_dir / "config.lock.json", to_json(config).dump(2) + "\n");

  Prepared p;
  p.manifest = load_manifest(config.manifest);
  p.splits = make_splits(p.manifest, config.splits);
  for (const auto& s : p.splits) {
    write_split(s, config.out_dir / "splits" / ("split_" + std::to_string(s.split_index) + ".json"));
  }
  return p;
}

std::string fraction_tag(double f) {
  std::ostringstream os;
  os << std::setprecision(6) << f;
  return os.str();
}

void finish(const ExperimentConfig& config, const ExperimentReport& report) {
  for (const auto& arm : report.arms) {
    for (const auto& s : arm.splits) {
      const auto name = arm.name + "_split" + std::to_string(s.split_index) + "_f" + fraction_tag(s.fraction) + ".csv";
      write_text(config.out_dir / "logs" / name, training_log_csv(s.log));
    }
  }
  write_text(config.out_dir / "report.json", to_json(report).dump(2) + "\n");
  render_report(config.out_dir);
}

}  // namespace

ExperimentReport run_cv(const ExperimentConfig& config) {
  ExperimentConfig checked = config;
  checked.mode = ExperimentMode::Cv;
  auto prepared = prepare(checked);
  const auto features = load_arm_features(config.features_masked, prepared.manifest, Masking::Masked);
  ExperimentReport report;
  report.mode = ExperimentMode::Cv;
  report.arms.push_back(evaluate_arm("masked", prepared.manifest, features, prepared.splits, 1.0, config));
  finish(config, report);
  return report;
}

ExperimentReport run_ablation(const ExperimentConfig& config) {
  ExperimentConfig checked = config;
  checked.mode = ExperimentMode::Ablation;
  auto prepared = prepare(checked);
  const auto masked = load_arm_features(config.features_masked, prepared.manifest, Masking::Masked);
  const auto whole = load_arm_features(*config.features_whole, prepared.manifest, Masking::WholeImage);
  if (masked.dim() != whole.dim()) logger().info("ablation arms differ in feature dim ({} vs {})", masked.dim(), whole.dim());

  ExperimentReport report;
  report.mode = ExperimentMode::Ablation;
  report.arms.push_back(evaluate_arm("masked", prepared.manifest, masked, prepared.splits, 1.0, config));
  report.arms.push_back(evaluate_arm("whole_image", prepared.manifest, whole, prepared.splits, 1.0, config));
  const auto& a = report.arms[0].splits;
  const auto& b = report.arms[1].splits;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].split_hash != b[i].split_hash) fail(Errc::ConfigError, "ablation arms saw different splits");
  }
  finish(config, report);
  return report;
}

ExperimentReport run_fraction_sweep(const ExperimentConfig& config) {
  ExperimentConfig checked = config;
  checked.mode = ExperimentMode::FractionSweep;
  auto prepared = prepare(checked);
  const auto features = load_arm_features(config.features_masked, prepared.manifest, Masking::Masked);

  std::vector<double> fractions = config.fractions;
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());

  ExperimentReport report;
  report.mode = ExperimentMode::FractionSweep;
  for (double f : fractions) {
    report.arms.push_back(evaluate_arm("fraction_" + fraction_tag(f), prepared.manifest, features, prepared.splits, f, config));
  }
  finish(config, report);
  return report;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  switch (config.mode) {
    case ExperimentMode::Cv: return run_cv(config);
    case ExperimentMode::Ablation: return run_ablation(config);
    case ExperimentMode::FractionSweep: return run_fraction_sweep(config);
  }
  return run_cv(config);
}

RenderedReport render_report(const fs::path& experiment_dir) {
  const fs::path path = experiment_dir / "report.json";
  std::ifstream in(path);
  if (!in) fail(Errc::MissingReport, path.string());

  RenderedReport out;
  try {
    const auto j = nlohmann::json::parse(in);
    const auto kind = j.at("kind").get<std::string>();
    const auto& arms = j.at("arms");
    std::ostringstream md;
    std::ostringstream csv;

    auto cell = [](const nlohmann::json& arm) {
      return fixed(arm.at("weighted_f1_mean").get<double>()) + " ± " + fixed(arm.at("weighted_f1_std").get<double>());
    };

    if (kind == "cv") {
      md << "| Method | Weighted F1 |\n|---|---|\n";
      for (const auto& arm : arms) md << "| " << arm.at("name").get<std::string>() << " features | " << cell(arm) << " |\n";
    } else if (kind == "ablation") {
      md << "| Method | Weighted F1 |\n|---|---|\n";
      for (const auto& arm : arms) {
        const auto masking = arm.at("masking").get<std::string>();
        const char* label = masking == "whole_image" ? "without segmentation (whole image)" : "with segmentation (masked)";
        md << "| " << label << " | " << cell(arm) << " |\n";
      }
    } else if (kind == "sweep") {
      std::vector<std::tuple<double, double, double>> rows;
      for (const auto& arm : arms) {
        rows.emplace_back(arm.at("fraction").get<double>(), arm.at("weighted_f1_mean").get<double>(),
                          arm.at("weighted_f1_std").get<double>());
      }
      std::sort(rows.begin(), rows.end());
      md << "| Training fraction | Weighted F1 |\n|---|---|\n";
      csv << "fraction,mean,std\n";
      for (const auto& [f, mean, sd] : rows) {
        md << "| " << fixed(100.0 * f, 0) << "% | " << fixed(mean) << " ± " << fixed(sd) << " |\n";
        csv << detail::shortest(f) << ',' << detail::shortest(mean) << ',' << detail::shortest(sd) << '\n';
      }
    } else {
      fail(Errc::MissingReport, path.string() + ": unknown report kind '" + kind + "'");
    }
    out.markdown = md.str();
    out.plot_csv = csv.str();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::MissingReport, path.string() + ": " + e.what());
  }

  write_text(experiment_dir / "summary.md", out.markdown);
  if (!out.plot_csv.empty()) write_text(experiment_dir / "sweep.csv", out.plot_csv);
  return out;
}

}  // namespace dermapipe
