#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace akhcr {

// rows = true class, columns = predicted class
struct ConfusionMatrix {
  int n_classes = 0;
  std::vector<std::int64_t> counts;
  std::int64_t total = 0;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int n)
      : n_classes(n), counts(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0) {}

  std::int64_t& at(int truth, int pred) {
    return counts[static_cast<std::size_t>(truth) * n_classes + pred];
  }
  std::int64_t at(int truth, int pred) const {
    return counts[static_cast<std::size_t>(truth) * n_classes + pred];
  }

  // associative merge so evaluation shards can be combined
  void merge(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred,
                          int n_classes);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::int64_t support = 0;
  bool degenerate = false;  // a zero denominator was replaced by 0
};

struct ClassReport {
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0.0;  // unweighted over classes with support > 0
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double accuracy = 0.0;
  std::int64_t total = 0;
};

ClassReport precision_recall_f1(const ConfusionMatrix& cm);

// report CSV: class,precision,recall,f1,support (+ macro_avg and accuracy
// rows); confusion CSV: integer grid with class-name header row/column.
// 4 decimal places, UTF-8, LF endings, byte-stable for identical inputs.
void emit_report_csv(const ClassReport& report, const ConfusionMatrix& cm,
                     const std::vector<std::string>& class_names,
                     const std::string& report_path, const std::string& confusion_path);

// fixed-notation decimal with trailing zeros kept, e.g. (0.97, 4) -> "0.9700"
std::string format_fixed(double v, int places);

}  // namespace akhcr
