#include "decaps/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace decaps {

namespace {

void check_aligned(std::size_t n_scores, std::size_t n_labels) {
  if (n_scores == 0) throw std::invalid_argument("metrics need at least one sample");
  if (n_scores != n_labels) {
    throw std::invalid_argument("metrics got " + std::to_string(n_scores) + " scores and " +
                                std::to_string(n_labels) + " labels");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

}  // namespace

Confusion confusion(std::span<const double> scores, std::span<const std::size_t> labels, double threshold,
                    std::size_t positive) {
  check_aligned(scores.size(), labels.size());
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= threshold;
    const bool pos = labels[i] == positive;
    (pred ? (pos ? c.tp : c.fp) : (pos ? c.fn : c.tn))++;
  }
  return c;
}

Confusion confusion_from_predictions(std::span<const std::size_t> predicted, std::span<const std::size_t> labels,
                                     std::size_t positive) {
  check_aligned(predicted.size(), labels.size());
  Confusion c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pred = predicted[i] == positive;
    const bool pos = labels[i] == positive;
    (pred ? (pos ? c.tp : c.fp) : (pos ? c.fn : c.tn))++;
  }
  return c;
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const std::size_t> labels,
                                std::size_t positive) {
  check_aligned(scores.size(), labels.size());
  const auto P = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), positive));
  const std::size_t N = labels.size() - P;
  if (P == 0 || N == 0) throw std::invalid_argument("ROC needs both positive and negative samples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> roc{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double s = scores[order[k]];
    while (k < order.size() && scores[order[k]] == s) {
      (labels[order[k]] == positive ? tp : fp)++;
      ++k;
    }
    roc.push_back({ratio(fp, N), ratio(tp, P)});
  }
  return roc;
}

double auc(std::span<const double> scores, std::span<const std::size_t> labels, std::size_t positive) {
  const auto roc = roc_curve(scores, labels, positive);
  double area = 0.0;
  for (std::size_t i = 1; i < roc.size(); ++i) {
    area += (roc[i].fpr - roc[i - 1].fpr) * 0.5 * (roc[i].tpr + roc[i - 1].tpr);
  }
  return area;
}

EvalReport make_report(const Confusion& c, std::span<const double> scores, std::span<const std::size_t> labels,
                       std::size_t positive) {
  if (c.total() != labels.size()) throw std::invalid_argument("confusion counts do not match the sample count");
  EvalReport r;
  r.counts = c;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  r.specificity = ratio(c.tn, c.tn + c.fp);
  r.accuracy = ratio(c.tp + c.tn, c.total());
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  r.roc = roc_curve(scores, labels, positive);
  r.auc = auc(scores, labels, positive);
  return r;
}

std::string format_report(const EvalReport& r) {
  std::string s;
  s += "precision=" + format_double(r.precision) + "\n";
  s += "recall=" + format_double(r.recall) + "\n";
  s += "specificity=" + format_double(r.specificity) + "\n";
  s += "accuracy=" + format_double(r.accuracy) + "\n";
  s += "f1=" + format_double(r.f1) + "\n";
  s += "auc=" + format_double(r.auc) + "\n";
  return s;
}

void write_report(const std::filesystem::path& path, const EvalReport& report) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << format_report(report);
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> roc) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << "fpr,tpr\n";
  for (const auto& p : roc) out << format_double(p.fpr) << ',' << format_double(p.tpr) << '\n';
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

}  // namespace decaps
