#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace decaps {

struct Confusion {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Predicted positive iff score >= threshold; a sample is positive when its
/// label equals `positive`.
Confusion confusion(std::span<const double> scores, std::span<const std::size_t> labels, double threshold,
                    std::size_t positive = 1);

/// Counts from hard predictions.
Confusion confusion_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                     std::size_t positive = 1);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
};

/// ROC polyline from (0, 0) to (1, 1), one vertex per distinct score.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::size_t> labels,
                                std::size_t positive = 1);

/// Trapezoidal area under roc_curve; tied scores give half credit.
double auc(std::span<const double> scores, std::span<const std::size_t> labels, std::size_t positive = 1);

struct EvalReport {
  double precision = 0.0;
  double recall = 0.0;
  double specificity = 0.0;
  double accuracy = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  Confusion counts;
  std::vector<RocPoint> roc;
};

/// Ratios that would divide by zero are reported as 0.
EvalReport make_report(const Confusion& counts, std::span<const double> scores, std::span<const std::size_t> labels,
                       std::size_t positive = 1);

/// Six `name=value` lines with shortest round-trip formatting.
std::string format_report(const EvalReport& report);
void write_report(const std::filesystem::path& path, const EvalReport& report);
/// Header `fpr,tpr` then one row per ROC vertex.
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc);

}  // namespace decaps
