#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "dermapipe/metrics.hpp"
#include "dermapipe/rng.hpp"
#include "support/expect.hpp"
#include "support/oracles.hpp"

using namespace dermapipe;
using dermapipe::testing::brute_force_weighted_f1;
using dermapipe::testing::error_code_of;

namespace {

std::pair<std::vector<int>, std::vector<int>> random_labels(Rng& rng, std::size_t n) {
  std::vector<int> t(n), p(n);
  // Skewed class mixes so some classes go missing from either side.
  const int t_classes = 1 + static_cast<int>(rng.uniform_index(4));
  const int p_classes = 1 + static_cast<int>(rng.uniform_index(4));
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(t_classes)));
    p[i] = rng.uniform01() < 0.5 ? t[i] : static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(p_classes)));
  }
  return {t, p};
}

}  // namespace

TEST_CASE("weighted F1 worked examples") {
  CHECK(weighted_f1(std::vector{0, 0, 1, 2}, std::vector{0, 1, 1, 2}) == 0.75);
  CHECK(weighted_f1(std::vector{0, 1, 2, 3}, std::vector{0, 1, 2, 3}) == 1.0);
  CHECK(weighted_f1(std::vector{0, 1, 2, 3, 0, 1}, std::vector{3, 3, 3, 3, 3, 3}) ==
        doctest::Approx(1.0 / 21.0).epsilon(1e-15));
  CHECK(weighted_f1(std::vector{0, 0, 0, 1, 1, 2, 3, 3, 3, 3}, std::vector{0, 1, 0, 1, 2, 2, 3, 0, 3, 1}) ==
        doctest::Approx(0.6133333333333333).epsilon(1e-15));
  // Nothing right at all.
  CHECK(weighted_f1(std::vector{0, 1}, std::vector{1, 0}) == 0.0);
}

TEST_CASE("confusion matrix and per-class scores") {
  const std::vector<int> t{0, 0, 1, 2};
  const std::vector<int> p{0, 1, 1, 2};
  const auto cm = confusion_matrix(t, p);
  CHECK(cm(0, 0) == 1);
  CHECK(cm(0, 1) == 1);
  CHECK(cm(1, 1) == 1);
  CHECK(cm(2, 2) == 1);
  CHECK(cm.sum() == 4);

  const auto s = class_scores(cm);
  CHECK(s[0].precision == 1.0);
  CHECK(s[0].recall == 0.5);
  CHECK(s[0].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(s[1].precision == 0.5);
  CHECK(s[1].recall == 1.0);
  CHECK(s[2].f1 == 1.0);
  CHECK(s[3].support == 0);
  CHECK(s[3].f1 == 0.0);

  const auto report = make_report(t, p);
  CHECK(report.n_samples == 4);
  CHECK(report.weighted_f1 == 0.75);
  CHECK(report.confusion == cm);
}

TEST_CASE("metric errors") {
  CHECK(error_code_of([] { confusion_matrix(std::vector{0, 1}, std::vector{0}); }) == Errc::LengthMismatch);
  CHECK(error_code_of([] { confusion_matrix(std::vector{0, 4}, std::vector{0, 1}); }) == Errc::InvalidLabel);
  CHECK(error_code_of([] { confusion_matrix(std::vector{0, 1}, std::vector{-1, 1}); }) == Errc::InvalidLabel);
  CHECK(error_code_of([] { weighted_f1(std::vector<int>{}, std::vector<int>{}); }) == Errc::EmptyInput);
  CHECK(error_code_of([] { weighted_f1(ConfusionMatrix::Zero()); }) == Errc::EmptyInput);
  CHECK(error_code_of([] { mean_std(std::vector<double>{}); }) == Errc::EmptyList);
}

TEST_CASE("weighted F1 against a brute-force oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto [t, p] = random_labels(rng, 1 + rng.uniform_index(200));
    const double oracle = brute_force_weighted_f1(t, p);
    const double from_matrix = weighted_f1(confusion_matrix(t, p));
    const double from_lists = weighted_f1(t, p);
    CHECK(std::abs(from_matrix - oracle) <= 1e-9);
    CHECK(std::abs(from_matrix - from_lists) <= 1e-12);
    CHECK(from_matrix >= 0.0);
    CHECK(from_matrix <= 1.0);
  }
}

TEST_CASE("weighted F1 is invariant to sample order") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    auto [t, p] = random_labels(rng, 50);
    const double before = weighted_f1(t, p);
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(std::span(idx));
    std::vector<int> t2, p2;
    for (auto i : idx) {
      t2.push_back(t[i]);
      p2.push_back(p[i]);
    }
    CHECK(weighted_f1(t2, p2) == doctest::Approx(before).epsilon(1e-12));
    CHECK(weighted_f1(t, t) == 1.0);
  }
}

TEST_CASE("aggregation") {
  const auto ms = mean_std(std::vector{0.6, 0.8});
  CHECK(ms.mean == doctest::Approx(0.7));
  CHECK(ms.std == doctest::Approx(0.1));
  const auto single = mean_std(std::vector{0.42});
  CHECK(single.mean == 0.42);
  CHECK(single.std == 0.0);

  std::vector<MetricsReport> reports(2);
  reports[0].weighted_f1 = 0.5;
  reports[1].weighted_f1 = 1.0;
  CHECK(aggregate_splits(reports).mean == 0.75);
  CHECK(aggregate_splits(reports).std == 0.25);
}

TEST_CASE("report serialization") {
  const auto report = make_report(std::vector{0, 0, 1, 2}, std::vector{0, 1, 1, 2});
  const auto j = to_json(report);
  CHECK(j.at("weighted_f1") == 0.75);
  CHECK(j.at("n_samples") == 4);
  CHECK(j.at("confusion")[0] == nlohmann::json::array({1, 1, 0, 0}));
  CHECK(j.at("per_class").size() == 4);
  CHECK(j.at("per_class")[1].at("precision") == 0.5);

  const auto header = csv_header();
  const auto row = csv_row(report);
  CHECK(header.rfind("n_samples,weighted_f1,", 0) == 0);
  CHECK(std::count(header.begin(), header.end(), ',') == std::count(row.begin(), row.end(), ','));
  CHECK(row.rfind("4,0.75,", 0) == 0);
}
