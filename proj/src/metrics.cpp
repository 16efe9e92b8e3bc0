#include "akhcr/metrics.hpp"

#include <cstdio>
#include <fstream>

#include "akhcr/errors.hpp"

namespace akhcr {

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.n_classes != n_classes)
    throw ShapeError("confusion matrix merge: class counts differ");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total += other.total;
}

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& pred,
                          int n_classes) {
  if (truth.size() != pred.size())
    throw ShapeError("confusion: label vectors differ in length");
  if (n_classes < 1) throw RangeError("confusion: n_classes must be >= 1");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const int t = truth[i], p = pred[i];
    if (t < 0 || t >= n_classes || p < 0 || p >= n_classes)
      throw RangeError("confusion: label out of range at sample " + std::to_string(i));
    ++cm.at(t, p);
  }
  cm.total = static_cast<std::int64_t>(truth.size());
  return cm;
}

ClassReport precision_recall_f1(const ConfusionMatrix& cm) {
  ClassReport report;
  report.total = cm.total;
  report.per_class.resize(static_cast<std::size_t>(cm.n_classes));

  std::int64_t trace = 0;
  int represented = 0;
  for (int c = 0; c < cm.n_classes; ++c) {
    std::int64_t tp = cm.at(c, c);
    std::int64_t row = 0, col = 0;
    for (int j = 0; j < cm.n_classes; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    trace += tp;

    ClassMetrics& m = report.per_class[static_cast<std::size_t>(c)];
    m.support = row;
    if (col > 0)
      m.precision = static_cast<double>(tp) / static_cast<double>(col);
    else
      m.degenerate = true;
    if (row > 0)
      m.recall = static_cast<double>(tp) / static_cast<double>(row);
    else
      m.degenerate = true;
    if (m.precision + m.recall > 0.0)
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);

    if (m.support > 0) {
      report.macro_precision += m.precision;
      report.macro_recall += m.recall;
      report.macro_f1 += m.f1;
      ++represented;
    }
  }
  if (represented > 0) {
    report.macro_precision /= represented;
    report.macro_recall /= represented;
    report.macro_f1 /= represented;
  }
  if (cm.total > 0)
    report.accuracy = static_cast<double>(trace) / static_cast<double>(cm.total);
  return report;
}

std::string format_fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", places, v);
  return buf;
}

void emit_report_csv(const ClassReport& report, const ConfusionMatrix& cm,
                     const std::vector<std::string>& class_names,
                     const std::string& report_path, const std::string& confusion_path) {
  if (static_cast<int>(class_names.size()) != cm.n_classes ||
      report.per_class.size() != class_names.size())
    throw ShapeError("emit_report_csv: class name count mismatch");

  {
    std::ofstream out(report_path, std::ios::binary);
    if (!out) throw IoError("cannot write report CSV: " + report_path);
    out << "class,precision,recall,f1,support\n";
    for (std::size_t c = 0; c < class_names.size(); ++c) {
      const ClassMetrics& m = report.per_class[c];
      out << class_names[c] << ',' << format_fixed(m.precision, 4) << ','
          << format_fixed(m.recall, 4) << ',' << format_fixed(m.f1, 4) << ',' << m.support
          << '\n';
    }
    out << "macro_avg," << format_fixed(report.macro_precision, 4) << ','
        << format_fixed(report.macro_recall, 4) << ',' << format_fixed(report.macro_f1, 4)
        << ',' << report.total << '\n';
    out << "accuracy,,,"  << format_fixed(report.accuracy, 4) << ',' << report.total << '\n';
    if (!out) throw IoError("write failure: " + report_path);
  }

  {
    std::ofstream out(confusion_path, std::ios::binary);
    if (!out) throw IoError("cannot write confusion CSV: " + confusion_path);
    out << "class";
    for (const auto& name : class_names) out << ',' << name;
    out << '\n';
    for (int t = 0; t < cm.n_classes; ++t) {
      out << class_names[static_cast<std::size_t>(t)];
      for (int p = 0; p < cm.n_classes; ++p) out << ',' << cm.at(t, p);
      out << '\n';
    }
    if (!out) throw IoError("write failure: " + confusion_path);
  }
}

}  // namespace akhcr
