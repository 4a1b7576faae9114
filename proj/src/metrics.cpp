#include "dermapipe/metrics.hpp"

#include <cmath>
#include <sstream>

#include "dermapipe/error.hpp"
#include "format.hpp"

namespace dermapipe {
namespace {

void check_labels(std::span<const int> y_true, std::span<const int> y_pred) {
  if (y_true.size() != y_pred.size()) {
    fail(Errc::LengthMismatch, std::to_string(y_true.size()) + " true labels vs " + std::to_string(y_pred.size()) +
                                   " predictions");
  }
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (int v : {y_true[i], y_pred[i]}) {
      if (v < 0 || v >= kNumClasses) fail(Errc::InvalidLabel, "label " + std::to_string(v) + " at position " + std::to_string(i));
    }
  }
}

double ratio(std::int64_t num, std::int64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double f1_of(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

ConfusionMatrix confusion_matrix(std::span<const int> y_true, std::span<const int> y_pred) {
  check_labels(y_true, y_pred);
  ConfusionMatrix m = ConfusionMatrix::Zero();
  for (std::size_t i = 0; i < y_true.size(); ++i) ++m(y_true[i], y_pred[i]);
  return m;
}

std::array<ClassScores, kNumClasses> class_scores(const ConfusionMatrix& confusion) {
  std::array<ClassScores, kNumClasses> out{};
  for (int c = 0; c < kNumClasses; ++c) {
    const std::int64_t tp = confusion(c, c);
    const std::int64_t predicted = confusion.col(c).sum();
    const std::int64_t support = confusion.row(c).sum();
    auto& s = out[static_cast<std::size_t>(c)];
    s.precision = ratio(tp, predicted);
    s.recall = ratio(tp, support);
    s.f1 = f1_of(s.precision, s.recall);
    s.support = support;
  }
  return out;
}

double weighted_f1(const ConfusionMatrix& confusion) {
  const std::int64_t n = confusion.sum();
  if (n == 0) fail(Errc::EmptyInput, "weighted F1 of zero samples");
  double total = 0.0;
  for (const auto& s : class_scores(confusion)) total += static_cast<double>(s.support) * s.f1;
  return total / static_cast<double>(n);
}

double weighted_f1(std::span<const int> y_true, std::span<const int> y_pred) {
  check_labels(y_true, y_pred);
  if (y_true.empty()) fail(Errc::EmptyInput, "weighted F1 of zero samples");
  std::array<std::int64_t, kNumClasses> tp{}, fp{}, fn{};
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto t = static_cast<std::size_t>(y_true[i]);
    const auto p = static_cast<std::size_t>(y_pred[i]);
    if (t == p) {
      ++tp[t];
    } else {
      ++fp[p];
      ++fn[t];
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < tp.size(); ++c) {
    const std::int64_t support = tp[c] + fn[c];
    total += static_cast<double>(support) * f1_of(ratio(tp[c], tp[c] + fp[c]), ratio(tp[c], support));
  }
  return total / static_cast<double>(y_true.size());
}

MetricsReport make_report(std::span<const int> y_true, std::span<const int> y_pred) {
  MetricsReport r;
  r.confusion = confusion_matrix(y_true, y_pred);
  r.per_class = class_scores(r.confusion);
  r.n_samples = static_cast<std::int64_t>(y_true.size());
  r.weighted_f1 = r.n_samples == 0 ? 0.0 : weighted_f1(r.confusion);
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) fail(Errc::EmptyList, "no values to aggregate");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

MeanStd aggregate_splits(std::span<const MetricsReport> reports) {
  std::vector<double> f1;
  f1.reserve(reports.size());
  for (const auto& r : reports) f1.push_back(r.weighted_f1);
  return mean_std(f1);
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json confusion = nlohmann::json::array();
  for (int i = 0; i < kNumClasses; ++i) {
    nlohmann::json row = nlohmann::json::array();
    for (int j = 0; j < kNumClasses; ++j) row.push_back(report.confusion(i, j));
    confusion.push_back(std::move(row));
  }
  nlohmann::json per_class = nlohmann::json::array();
  for (int c = 0; c < kNumClasses; ++c) {
    const auto& s = report.per_class[static_cast<std::size_t>(c)];
    per_class.push_back(
        {{"class", c}, {"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}, {"support", s.support}});
  }
  return {{"confusion", std::move(confusion)},
          {"per_class", std::move(per_class)},
          {"weighted_f1", report.weighted_f1},
          {"n_samples", report.n_samples}};
}

std::string csv_header() {
  std::string h = "n_samples,weighted_f1";
  for (int c = 0; c < kNumClasses; ++c) {
    const auto k = std::to_string(c);
    h += ",precision_" + k + ",recall_" + k + ",f1_" + k + ",support_" + k;
  }
  return h;
}

std::string csv_row(const MetricsReport& report) {
  std::ostringstream os;
  os << report.n_samples << ',' << detail::shortest(report.weighted_f1);
  for (const auto& s : report.per_class) {
    os << ',' << detail::shortest(s.precision) << ',' << detail::shortest(s.recall) << ',' << detail::shortest(s.f1) << ','
       << s.support;
  }
  return os.str();
}

}  // namespace dermapipe
