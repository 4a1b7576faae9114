#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "dermapipe/experiment.hpp"
#include "support/expect.hpp"
#include "support/synthetic.hpp"

using namespace dermapipe;
using dermapipe::testing::error_code_of;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A small, quick dataset: mechanics matter here, accuracy is covered elsewhere.
testing::BlobOptions small_blobs() {
  testing::BlobOptions o;
  o.n = 60;
  o.dim = 24;
  return o;
}

ExperimentConfig small_config(const testing::SyntheticFiles& files, const fs::path& out) {
  ExperimentConfig c;
  c.manifest = files.manifest;
  c.features_masked = files.features_masked;
  c.features_whole = files.features_whole;
  c.splits = {3, 0.8, 11, false};
  c.train.epochs = 5;
  c.train.hidden = 16;
  c.out_dir = out;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("'") + DERMAPIPE_CLI_PATH + "' " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("config documents") {
  const auto dir = testing::scratch_dir("exp_config");
  std::ofstream(dir / "c.json") << R"({
    "manifest": "data/manifest.jsonl",
    "features_masked": "/abs/masked.ddxf",
    "n_splits": 4, "seed": 9, "k": 3, "mode": "sweep",
    "fractions": [0.5, 1.0],
    "out": "runs/x",
    "train": {"learning_rate": 0.001, "epochs": 7, "hidden": 32}
  })";
  const auto c = load_config(dir / "c.json");
  CHECK(c.manifest == dir / "data/manifest.jsonl");
  CHECK(c.features_masked == "/abs/masked.ddxf");
  CHECK_FALSE(c.features_whole.has_value());
  CHECK(c.splits.n_splits == 4);
  CHECK(c.splits.seed == 9);
  CHECK(c.splits.train_ratio == 0.8);
  CHECK(c.k == 3);
  CHECK(c.mode == ExperimentMode::FractionSweep);
  CHECK(c.fractions == std::vector{0.5, 1.0});
  CHECK(c.out_dir == dir / "runs/x");
  CHECK(c.train.adam.learning_rate == 0.001);
  CHECK(c.train.epochs == 7);
  CHECK(c.train.hidden == 32);
  CHECK(c.train.batch_size == 16);
  CHECK(c.train.dropout == 0.3);

  const auto again = config_from_json(to_json(c));
  CHECK(to_json(again) == to_json(c));

  std::ofstream(dir / "bad.json") << "{ nope";
  CHECK(error_code_of([&] { load_config(dir / "bad.json"); }) == Errc::ConfigError);
  std::ofstream(dir / "mode.json") << R"({"mode": "grid"})";
  CHECK(error_code_of([&] { load_config(dir / "mode.json"); }) == Errc::ConfigError);
  std::ofstream(dir / "type.json") << R"({"n_splits": "five"})";
  CHECK(error_code_of([&] { load_config(dir / "type.json"); }) == Errc::ConfigError);
  CHECK(error_code_of([&] { load_config(dir / "absent.json"); }) == Errc::ConfigError);
}

TEST_CASE("validation fails fast") {
  const auto dir = testing::scratch_dir("exp_validate");
  const auto files = testing::write_synthetic(dir / "data", small_blobs());
  auto c = small_config(files, dir / "out");
  validate(c);

  SUBCASE("missing feature file, before anything is written") {
    c.features_masked = dir / "nowhere.ddxf";
    CHECK(error_code_of([&] { run_cv(c); }) == Errc::ConfigError);
    CHECK_FALSE(fs::exists(c.out_dir));
  }
  SUBCASE("ablation without whole-image features") {
    c.features_whole.reset();
    c.mode = ExperimentMode::Ablation;
    CHECK(error_code_of([&] { validate(c); }) == Errc::ConfigError);
  }
  SUBCASE("fractions out of range") {
    c.fractions = {0.0, 0.5};
    CHECK(error_code_of([&] { validate(c); }) == Errc::ConfigError);
    c.fractions = {1.2};
    CHECK(error_code_of([&] { validate(c); }) == Errc::ConfigError);
  }
  SUBCASE("bad training parameters") {
    c.train.dropout = 1.5;
    CHECK(error_code_of([&] { validate(c); }) == Errc::ConfigError);
  }
  SUBCASE("bad split parameters") {
    c.splits.train_ratio = 1.0;
    CHECK(error_code_of([&] { validate(c); }) == Errc::ConfigError);
  }
}

TEST_CASE("training seeds depend only on position") {
  CHECK(training_seed(1, 0, 1.0) == training_seed(1, 0, 1.0));
  CHECK(training_seed(1, 0, 1.0) != training_seed(1, 1, 1.0));
  CHECK(training_seed(1, 0, 1.0) != training_seed(1, 0, 0.2));
  CHECK(training_seed(1, 0, 1.0) != training_seed(2, 0, 1.0));
}

TEST_CASE("cross-validation run") {
  const auto dir = testing::scratch_dir("exp_cv");
  const auto files = testing::write_synthetic(dir / "data", small_blobs());
  const auto c = small_config(files, dir / "a");
  const auto report = run_cv(c);

  REQUIRE(report.arms.size() == 1);
  const auto& arm = report.arms[0];
  CHECK(arm.splits.size() == 3);
  CHECK(arm.masking == Masking::Masked);
  for (const auto& s : arm.splits) {
    CHECK(s.n_train == 48);
    CHECK(s.n_val == 12);
    CHECK(s.metrics.n_samples == 12);
    CHECK(s.log.size() == 5);
  }

  for (const char* f : {"config.lock.json", "report.json", "summary.md", "splits/split_0.json", "splits/split_2.json",
                        "logs/masked_split1_f1.csv"}) {
    CHECK_MESSAGE(fs::exists(c.out_dir / f), f);
  }
  CHECK_FALSE(fs::exists(c.out_dir / "sweep.csv"));
  const auto lock = nlohmann::json::parse(slurp(c.out_dir / "config.lock.json"));
  CHECK(lock.at("mode") == "cv");
  CHECK(lock.at("seed") == 11);

  const auto j = nlohmann::json::parse(slurp(c.out_dir / "report.json"));
  CHECK(j.at("kind") == "cv");
  CHECK(j.at("arms")[0].at("splits").size() == 3);
  CHECK(j.at("arms")[0].at("weighted_f1_mean") == arm.weighted_f1.mean);

  // Splits on disk are the ones the run used.
  const auto manifest = load_manifest(c.manifest);
  const auto splits = make_splits(manifest, c.splits);
  for (std::size_t i = 0; i < splits.size(); ++i) {
    CHECK(read_split(c.out_dir / "splits" / ("split_" + std::to_string(i) + ".json")) == splits[i]);
    CHECK(arm.splits[i].split_hash == split_hash(splits[i]));
  }
}

TEST_CASE("reruns are byte-identical") {
  const auto dir = testing::scratch_dir("exp_determinism");
  const auto files = testing::write_synthetic(dir / "data", small_blobs());
  auto c = small_config(files, dir / "run");
  c.mode = ExperimentMode::Ablation;
  run_experiment(c);
  const auto first_report = slurp(c.out_dir / "report.json");
  const auto first_summary = slurp(c.out_dir / "summary.md");
  const auto first_log = slurp(c.out_dir / "logs" / "whole_image_split2_f1.csv");
  fs::remove_all(c.out_dir);
  run_experiment(c);
  CHECK(slurp(c.out_dir / "report.json") == first_report);
  CHECK(slurp(c.out_dir / "summary.md") == first_summary);
  CHECK(slurp(c.out_dir / "logs" / "whole_image_split2_f1.csv") == first_log);

  c.splits.seed = 12;
  c.out_dir = dir / "other";
  run_experiment(c);
  CHECK(slurp(c.out_dir / "report.json") != first_report);
}

TEST_CASE("ablation") {
  const auto dir = testing::scratch_dir("exp_ablation");
  const auto files = testing::write_synthetic(dir / "data", small_blobs());

  SUBCASE("identical untagged files give identical rows") {
    const auto plain = read_feature_file(files.features_masked);
    write_feature_file(plain, dir / "plain.ddxf", false);
    auto c = small_config(files, dir / "same");
    c.features_masked = dir / "plain.ddxf";
    c.features_whole = dir / "plain.ddxf";
    const auto r = run_ablation(c);
    REQUIRE(r.arms.size() == 2);
    CHECK(r.arms[0].weighted_f1.mean == r.arms[1].weighted_f1.mean);
    CHECK(r.arms[0].weighted_f1.std == r.arms[1].weighted_f1.std);
    for (std::size_t i = 0; i < r.arms[0].splits.size(); ++i) {
      CHECK(r.arms[0].splits[i].split_hash == r.arms[1].splits[i].split_hash);
      CHECK(r.arms[0].splits[i].train_seed == r.arms[1].splits[i].train_seed);
    }
    const auto md = slurp(c.out_dir / "summary.md");
    CHECK(md.find("with segmentation") != std::string::npos);
    CHECK(md.find("without segmentation") != std::string::npos);
  }

  SUBCASE("swapped provenance tags are rejected") {
    auto c = small_config(files, dir / "swapped");
    c.features_masked = files.features_whole;
    CHECK(error_code_of([&] { run_ablation(c); }) == Errc::ProvenanceMismatch);
  }

  SUBCASE("features missing for a manifest id") {
    auto store = read_feature_file(files.features_masked);
    FeatureStore partial(store.dim(), store.provenance());
    for (std::size_t i = 1; i < store.ids().size(); ++i) partial.add(store.ids()[i], store.get_embedding(store.ids()[i]));
    write_feature_file(partial, dir / "partial.ddxf");
    auto c = small_config(files, dir / "partial");
    c.features_masked = dir / "partial.ddxf";
    CHECK(error_code_of([&] { run_cv(c); }) == Errc::MissingFeature);
  }
}

TEST_CASE("fraction sweep") {
  const auto dir = testing::scratch_dir("exp_sweep");
  const auto files = testing::write_synthetic(dir / "data", small_blobs());

  auto c = small_config(files, dir / "sweep");
  c.fractions = {1.0, 0.2, 0.2};
  const auto sweep = run_fraction_sweep(c);
  REQUIRE(sweep.arms.size() == 2);
  CHECK(sweep.arms[0].fraction == 0.2);
  CHECK(sweep.arms[1].fraction == 1.0);
  for (const auto& s : sweep.arms[0].splits) {
    CHECK(s.n_train == 10);  // round(0.2 * 48)
    CHECK(s.n_val == 12);
  }

  const auto csv = slurp(c.out_dir / "sweep.csv");
  CHECK(csv.rfind("fraction,mean,std\n0.2,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const auto cv = run_cv(small_config(files, dir / "cv"));
  CHECK(sweep.arms[1].weighted_f1.mean == cv.arms[0].weighted_f1.mean);
  CHECK(sweep.arms[1].weighted_f1.std == cv.arms[0].weighted_f1.std);
  for (std::size_t i = 0; i < cv.arms[0].splits.size(); ++i) {
    CHECK(to_json(sweep.arms[1].splits[i].metrics) == to_json(cv.arms[0].splits[i].metrics));
  }
}

TEST_CASE("render_report") {
  const auto dir = testing::scratch_dir("exp_render");

  SUBCASE("cv report becomes a one-row table") {
    std::ofstream(dir / "report.json") << R"({"kind":"cv","arms":[{"name":"masked","masking":"masked","fraction":1.0,
      "weighted_f1_mean":0.6712,"weighted_f1_std":0.0123,"splits":[]}]})";
    const auto r = render_report(dir);
    CHECK(r.markdown == "| Method | Weighted F1 |\n|---|---|\n| masked features | 0.6712 ± 0.0123 |\n");
    CHECK(r.plot_csv.empty());
    CHECK(slurp(dir / "summary.md") == r.markdown);
  }

  SUBCASE("sweep report gives a sorted five-row csv") {
    nlohmann::json arms = nlohmann::json::array();
    for (double f : {0.6, 1.0, 0.2, 0.8, 0.4}) {
      arms.push_back({{"name", "x"}, {"masking", "masked"}, {"fraction", f}, {"weighted_f1_mean", f / 2},
                      {"weighted_f1_std", 0.01}, {"splits", nlohmann::json::array()}});
    }
    std::ofstream(dir / "report.json") << nlohmann::json{{"kind", "sweep"}, {"arms", arms}}.dump();
    const auto r = render_report(dir);
    CHECK(r.plot_csv ==
          "fraction,mean,std\n0.2,0.1,0.01\n0.4,0.2,0.01\n0.6,0.3,0.01\n0.8,0.4,0.01\n1,0.5,0.01\n");
    CHECK(slurp(dir / "sweep.csv") == r.plot_csv);
    CHECK(r.markdown.find("| 20% | 0.1000 ± 0.0100 |") != std::string::npos);
  }

  SUBCASE("errors carry the path") {
    CHECK(error_code_of([&] { render_report(dir / "empty"); }) == Errc::MissingReport);
    std::ofstream(dir / "report.json") << "{\"kind\": ";
    try {
      render_report(dir);
      FAIL("expected MissingReport");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::MissingReport);
      CHECK(std::string(e.what()).find((dir / "report.json").string()) != std::string::npos);
    }
  }
}

TEST_CASE("command line") {
  const auto dir = testing::scratch_dir("exp_cli");
  testing::BlobOptions opts = small_blobs();
  opts.n = 24;
  const auto files = testing::write_synthetic(dir / "data", opts, true);
  {
    auto c = small_config(files, dir / "exp");
    std::ofstream(dir / "config.json") << to_json(c).dump(2);
  }
  const std::string data = (dir / "data").string();

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("frobnicate") == 2);
  CHECK(run_cli("experiment cv") == 2);
  CHECK(run_cli("experiment cv --config '" + (dir / "absent.json").string() + "'") == 2);

  CHECK(run_cli("split --manifest '" + files.manifest.string() + "' --n-splits 2 --seed 3 --out '" +
                (dir / "splits").string() + "'") == 0);
  CHECK(fs::exists(dir / "splits" / "split_1.json"));
  const auto split = (dir / "splits" / "split_0.json").string();

  CHECK(run_cli("segment --manifest '" + files.manifest.string() + "' --features '" + files.features_whole.string() +
                "' --backend oracle --jobs 2 --split '" + split + "' --out '" + (dir / "masks").string() + "'") == 0);
  CHECK(fs::exists(dir / "masks" / "index.json"));
  CHECK(run_cli("segment --manifest '" + files.manifest.string() + "' --features '" + files.features_whole.string() +
                "' --backend \"'" + std::string(FAKE_BACKEND_PATH) + "' echo\" --out '" + (dir / "masks_cmd").string() +
                "'") == 0);
  // A backend that never succeeds is a backend error.
  CHECK(run_cli("segment --manifest '" + files.manifest.string() + "' --features '" + files.features_whole.string() +
                "' --backend false --out '" + (dir / "masks_false").string() + "'") == 4);
  // Corrupt inputs are data errors.
  std::ofstream(dir / "junk.ddxf") << "junk";
  CHECK(run_cli("segment --manifest '" + files.manifest.string() + "' --features '" + (dir / "junk.ddxf").string() +
                "' --backend oracle --out '" + (dir / "masks2").string() + "'") == 3);

  CHECK(run_cli("train --manifest '" + files.manifest.string() + "' --features '" + files.features_masked.string() +
                "' --split '" + split + "' --epochs 3 --out '" + (dir / "model").string() + "'") == 0);
  CHECK(fs::exists(dir / "model" / "model.ddxm"));
  CHECK(fs::exists(dir / "model" / "train_log.csv"));
  CHECK(run_cli("eval --manifest '" + files.manifest.string() + "' --features '" + files.features_masked.string() +
                "' --split '" + split + "' --model '" + (dir / "model" / "model.ddxm").string() + "' --out '" +
                (dir / "metrics").string() + "'") == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "metrics" / "metrics.json")).contains("weighted_f1"));

  CHECK(run_cli("experiment sweep --config '" + (dir / "config.json").string() + "' --epochs 2 --seed 5 --out '" +
                (dir / "sweep").string() + "'") == 0);
  const auto lock = nlohmann::json::parse(slurp(dir / "sweep" / "config.lock.json"));
  CHECK(lock.at("train").at("epochs") == 2);
  CHECK(lock.at("seed") == 5);
  CHECK(fs::exists(dir / "sweep" / "sweep.csv"));
  fs::remove(dir / "sweep" / "summary.md");
  CHECK(run_cli("report '" + (dir / "sweep").string() + "'") == 0);
  CHECK(fs::exists(dir / "sweep" / "summary.md"));
  CHECK(run_cli("report '" + (dir / "nothing").string() + "'") == 3);
}
