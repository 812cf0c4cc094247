#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedsurg {

/// The set of ordinal class labels 0..C-1. The challenge grades run 0..5.
struct LabelSpace {
  int num_classes = 6;
};

enum class Metric { F1, EC };

/// Lower Expected Cost is better; higher macro-F1 is better.
inline bool lower_is_better(Metric m) { return m == Metric::EC; }

std::string metric_name(Metric m);
Metric parse_metric(const std::string& name);

/// How classes absent from both truths and predictions enter the macro
/// average. IncludeAbsent scores them 0 and keeps them in the mean;
/// ExcludeAbsent drops them from the mean.
enum class F1Convention { IncludeAbsent, ExcludeAbsent };

F1Convention parse_f1_convention(const std::string& name);

/// Square count matrix; entry (i, j) counts samples of true class i
/// predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(LabelSpace labels);

  int num_classes() const { return labels_.num_classes; }
  std::int64_t at(int truth, int pred) const;
  void add(int truth, int pred, std::int64_t count = 1);

  std::int64_t total() const { return total_; }
  std::int64_t row_sum(int truth) const;
  std::int64_t col_sum(int pred) const;

 private:
  LabelSpace labels_;
  std::vector<std::int64_t> counts_;  // row-major C*C
  std::int64_t total_ = 0;
};

struct MetricReport {
  std::vector<double> f1_per_class;
  double f1_macro = 0.0;
  double expected_cost = 0.0;
  std::vector<std::int64_t> support;  // row sums
};

/// Tallies paired label sequences into a confusion matrix. Throws
/// ValidationError on length mismatch or on an out-of-range label,
/// naming the offending position.
ConfusionMatrix build_confusion_matrix(std::span<const int> truths, std::span<const int> preds,
                                       LabelSpace labels);

std::vector<double> per_class_f1(const ConfusionMatrix& cm,
                                 F1Convention convention = F1Convention::IncludeAbsent);

double macro_f1(const ConfusionMatrix& cm,
                F1Convention convention = F1Convention::IncludeAbsent);

/// Mean linear-distance misclassification penalty |i-j|/(C-1), in [0, 1].
/// Throws ComputationError on an empty matrix.
double expected_cost(const ConfusionMatrix& cm);

MetricReport metric_report(const ConfusionMatrix& cm,
                           F1Convention convention = F1Convention::IncludeAbsent);

}  // namespace fedsurg
