#include "fedsurg/metrics.hpp"

#include <cmath>
#include <cstdlib>

#include "fedsurg/errors.hpp"

namespace fedsurg {

std::string metric_name(Metric m) { return m == Metric::F1 ? "f1" : "ec"; }

Metric parse_metric(const std::string& name) {
  if (name == "f1") return Metric::F1;
  if (name == "ec") return Metric::EC;
  throw ValidationError("unknown metric '" + name + "' (expected f1 or ec)");
}

F1Convention parse_f1_convention(const std::string& name) {
  if (name == "include-absent") return F1Convention::IncludeAbsent;
  if (name == "exclude-absent") return F1Convention::ExcludeAbsent;
  throw ValidationError("unknown F1 convention '" + name +
                        "' (expected include-absent or exclude-absent)");
}

ConfusionMatrix::ConfusionMatrix(LabelSpace labels) : labels_(labels) {
  if (labels.num_classes < 2) {
    throw ValidationError("label space needs at least 2 classes, got " +
                          std::to_string(labels.num_classes));
  }
  counts_.assign(static_cast<std::size_t>(labels.num_classes) * labels.num_classes, 0);
}

std::int64_t ConfusionMatrix::at(int truth, int pred) const {
  return counts_[static_cast<std::size_t>(truth) * num_classes() + pred];
}

void ConfusionMatrix::add(int truth, int pred, std::int64_t count) {
  const int c = num_classes();
  if (truth < 0 || truth >= c || pred < 0 || pred >= c) {
    throw ValidationError("label out of range: truth=" + std::to_string(truth) +
                          " pred=" + std::to_string(pred) + " with " + std::to_string(c) +
                          " classes");
  }
  if (count < 0) throw ValidationError("negative confusion count");
  counts_[static_cast<std::size_t>(truth) * c + pred] += count;
  total_ += count;
}

std::int64_t ConfusionMatrix::row_sum(int truth) const {
  std::int64_t s = 0;
  for (int j = 0; j < num_classes(); ++j) s += at(truth, j);
  return s;
}

std::int64_t ConfusionMatrix::col_sum(int pred) const {
  std::int64_t s = 0;
  for (int i = 0; i < num_classes(); ++i) s += at(i, pred);
  return s;
}

ConfusionMatrix build_confusion_matrix(std::span<const int> truths, std::span<const int> preds,
                                       LabelSpace labels) {
  if (truths.size() != preds.size()) {
    throw ValidationError("truths and preds differ in length: " + std::to_string(truths.size()) +
                          " vs " + std::to_string(preds.size()));
  }
  ConfusionMatrix cm(labels);
  const int c = labels.num_classes;
  for (std::size_t k = 0; k < truths.size(); ++k) {
    if (truths[k] < 0 || truths[k] >= c || preds[k] < 0 || preds[k] >= c) {
      throw ValidationError("label out of range at position " + std::to_string(k) + ": truth=" +
                            std::to_string(truths[k]) + " pred=" + std::to_string(preds[k]));
    }
    cm.add(truths[k], preds[k]);
  }
  return cm;
}

std::vector<double> per_class_f1(const ConfusionMatrix& cm, F1Convention) {
  const int c = cm.num_classes();
  std::vector<double> f1(static_cast<std::size_t>(c), 0.0);
  for (int k = 0; k < c; ++k) {
    const std::int64_t tp = cm.at(k, k);
    const std::int64_t fp = cm.col_sum(k) - tp;
    const std::int64_t fn = cm.row_sum(k) - tp;
    const std::int64_t denom = 2 * tp + fp + fn;
    f1[k] = denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return f1;
}

double macro_f1(const ConfusionMatrix& cm, F1Convention convention) {
  const int c = cm.num_classes();
  const auto f1 = per_class_f1(cm);
  if (convention == F1Convention::IncludeAbsent) {
    double sum = 0.0;
    for (double v : f1) sum += v;
    return sum / static_cast<double>(c);
  }
  // ExcludeAbsent: drop classes with no truths and no predictions.
  double sum = 0.0;
  int present = 0;
  for (int k = 0; k < c; ++k) {
    if (cm.row_sum(k) == 0 && cm.col_sum(k) == 0) continue;
    sum += f1[k];
    ++present;
  }
  return present == 0 ? 0.0 : sum / static_cast<double>(present);
}

double expected_cost(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  if (n == 0) throw ComputationError("empty confusion matrix: expected cost is undefined");
  const int c = cm.num_classes();
  const double scale = static_cast<double>(c - 1);
  double sum = 0.0;
  for (int i = 0; i < c; ++i) {
    for (int j = 0; j < c; ++j) {
      if (i == j) continue;
      sum += static_cast<double>(cm.at(i, j)) * (std::abs(i - j) / scale);
    }
  }
  return sum / static_cast<double>(n);
}

MetricReport metric_report(const ConfusionMatrix& cm, F1Convention convention) {
  MetricReport report;
  report.f1_per_class = per_class_f1(cm, convention);
  report.f1_macro = macro_f1(cm, convention);
  report.expected_cost = expected_cost(cm);
  report.support.reserve(cm.num_classes());
  for (int k = 0; k < cm.num_classes(); ++k) report.support.push_back(cm.row_sum(k));
  return report;
}

}  // namespace fedsurg
