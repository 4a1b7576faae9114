#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "dermapipe/dataset.hpp"

namespace dermapipe {

/// Rows are true classes, columns predicted classes.
using ConfusionMatrix = Eigen::Matrix<std::int64_t, kNumClasses, kNumClasses>;

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
};

struct MetricsReport {
  ConfusionMatrix confusion = ConfusionMatrix::Zero();
  std::array<ClassScores, kNumClasses> per_class{};
  double weighted_f1 = 0.0;
  std::int64_t n_samples = 0;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

/// Throws LengthMismatch or InvalidLabel.
ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred);

/// Per-class scores; zero denominators yield 0.
std::array<ClassScores, kNumClasses> class_scores(const ConfusionMatrix& confusion);

/// Support-weighted mean of per-class F1. Throws EmptyInput when the matrix
/// holds no samples.
double weighted_f1(const ConfusionMatrix& confusion);

/// Same quantity computed straight from the label lists (no matrix).
double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred);

MetricsReport make_report(std::span<const int> y_true, std::span<const int> y_pred);

/// Arithmetic mean and population standard deviation. Throws EmptyList.
MeanStd mean_std(std::span<const double> values);
MeanStd aggregate_splits(std::span<const MetricsReport> reports);

nlohmann::json to_json(const MetricsReport& report);
std::string csv_header();
std::string csv_row(const MetricsReport& report);

}  // namespace dermapipe
