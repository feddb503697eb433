#pragma once

// Confusion matrix (rows actual, columns predicted), accuracy, per-class and
// macro precision/recall, and report rendering.

#include <algorithm>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hmresnet/error.hpp"
#include "json.hpp"

namespace hmresnet {

struct ConfusionMatrix {
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;  // [actual][predicted]

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::vector<std::string> names)
      : class_names(std::move(names)),
        counts(class_names.size(), std::vector<std::uint64_t>(class_names.size(), 0)) {}

  std::size_t classes() const { return class_names.size(); }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& r : counts) t = std::accumulate(r.begin(), r.end(), t);
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }
  std::uint64_t row_sum(std::size_t a) const {
    return std::accumulate(counts.at(a).begin(), counts.at(a).end(), std::uint64_t{0});
  }
  std::uint64_t column_sum(std::size_t p) const {
    std::uint64_t t = 0;
    for (const auto& r : counts) t += r.at(p);
    return t;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& o) {
    if (o.class_names != class_names) throw InvalidArgument("confusion matrices have different classes");
    for (std::size_t a = 0; a < counts.size(); ++a)
      for (std::size_t p = 0; p < counts.size(); ++p) counts[a][p] += o.counts[a][p];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const std::vector<std::size_t>& predictions,
                                 const std::vector<std::size_t>& labels,
                                 std::vector<std::string> class_names) {
  if (predictions.size() != labels.size())
    throw InvalidArgument("confusion: " + std::to_string(predictions.size()) + " predictions for " +
                          std::to_string(labels.size()) + " labels");
  ConfusionMatrix cm(std::move(class_names));
  const std::size_t k = cm.classes();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= k)
      throw InvalidArgument("confusion: label " + std::to_string(labels[i]) + " at index " +
                            std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    if (predictions[i] >= k)
      throw InvalidArgument("confusion: prediction " + std::to_string(predictions[i]) + " at index " +
                            std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
    ++cm.counts[labels[i]][predictions[i]];
  }
  return cm;
}

/// Classes named by their index.
inline ConfusionMatrix confusion(const std::vector<std::size_t>& predictions,
                                 const std::vector<std::size_t>& labels, std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < k; ++i) names.push_back(std::to_string(i));
  return confusion(predictions, labels, std::move(names));
}

inline double accuracy(const ConfusionMatrix& cm) {
  const auto t = cm.total();
  if (t == 0) throw InvalidArgument("accuracy of an empty confusion matrix");
  return static_cast<double>(cm.trace()) / static_cast<double>(t);
}

struct ClassMetrics {
  double precision = 0, recall = 0;
  bool precision_undefined = false;  // never predicted: reported as 0
  bool recall_undefined = false;     // never present: reported as 0
};

struct Metrics {
  double accuracy = 0;
  std::vector<ClassMetrics> per_class;
  double macro_precision = 0, macro_recall = 0;
  std::uint64_t sample_count = 0;
};

inline Metrics compute_metrics(const ConfusionMatrix& cm) {
  Metrics m;
  m.accuracy = accuracy(cm);
  m.sample_count = cm.total();
  const std::size_t k = cm.classes();
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics x;
    const auto col = cm.column_sum(c), row = cm.row_sum(c);
    const auto hit = static_cast<double>(cm.counts[c][c]);
    x.precision_undefined = col == 0;
    x.recall_undefined = row == 0;
    x.precision = col ? hit / static_cast<double>(col) : 0.0;
    x.recall = row ? hit / static_cast<double>(row) : 0.0;
    m.macro_precision += x.precision;
    m.macro_recall += x.recall;
    m.per_class.push_back(x);
  }
  m.macro_precision /= static_cast<double>(k);
  m.macro_recall /= static_cast<double>(k);
  return m;
}

enum class ReportFormat { text, json, csv };

inline ReportFormat parse_report_format(const std::string& s) {
  if (s == "text") return ReportFormat::text;
  if (s == "json") return ReportFormat::json;
  if (s == "csv") return ReportFormat::csv;
  throw InvalidArgument("unknown report format '" + s + "' (expected text, json or csv)");
}

inline constexpr int kReportSchemaVersion = 1;

inline nlohmann::json report_json(const ConfusionMatrix& cm, const Metrics& m) {
  nlohmann::json precision = nlohmann::json::array(), recall = nlohmann::json::array();
  nlohmann::json no_precision = nlohmann::json::array(), no_recall = nlohmann::json::array();
  for (std::size_t c = 0; c < m.per_class.size(); ++c) {
    precision.push_back(m.per_class[c].precision);
    recall.push_back(m.per_class[c].recall);
    if (m.per_class[c].precision_undefined) no_precision.push_back(cm.class_names[c]);
    if (m.per_class[c].recall_undefined) no_recall.push_back(cm.class_names[c]);
  }
  return {{"schema_version", kReportSchemaVersion},
          {"classes", cm.class_names},
          {"matrix", cm.counts},
          {"accuracy", m.accuracy},
          {"per_class", {{"precision", precision}, {"recall", recall}}},
          {"macro", {{"precision", m.macro_precision}, {"recall", m.macro_recall}}},
          {"zero_denominator", {{"precision", no_precision}, {"recall", no_recall}}},
          {"sample_count", m.sample_count}};
}

/// Rebuilds the matrix from a JSON report, checking shape and counts.
inline ConfusionMatrix confusion_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion)
      throw FormatError("unsupported report schema_version " + j.at("schema_version").dump());
    ConfusionMatrix cm(j.at("classes").get<std::vector<std::string>>());
    const auto rows = j.at("matrix").get<std::vector<std::vector<std::uint64_t>>>();
    if (rows.size() != cm.classes())
      throw FormatError("report matrix has " + std::to_string(rows.size()) + " rows for " +
                        std::to_string(cm.classes()) + " classes");
    for (const auto& r : rows)
      if (r.size() != cm.classes()) throw FormatError("report matrix is not square");
    cm.counts = rows;
    if (j.contains("sample_count") && j.at("sample_count").get<std::uint64_t>() != cm.total())
      throw FormatError("report sample_count disagrees with its matrix");
    return cm;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed metrics report: ") + e.what());
  }
}

namespace detail {

inline std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) q += ch == '"' ? std::string("\"\"") : std::string(1, ch);
  return q + "\"";
}

}  // namespace detail

inline std::string render_report(const ConfusionMatrix& cm, const Metrics& m, ReportFormat format) {
  std::ostringstream out;
  const std::size_t k = cm.classes();
  switch (format) {
    case ReportFormat::json:
      return report_json(cm, m).dump(2) + "\n";
    case ReportFormat::csv:
      out << "actual\\predicted";
      for (const auto& n : cm.class_names) out << "," << detail::csv_cell(n);
      out << "\n";
      for (std::size_t a = 0; a < k; ++a) {
        out << detail::csv_cell(cm.class_names[a]);
        for (auto v : cm.counts[a]) out << "," << v;
        out << "\n";
      }
      return out.str();
    case ReportFormat::text:
      break;
  }
  std::size_t name_w = 6, cell_w = 1;
  for (const auto& n : cm.class_names) name_w = std::max(name_w, n.size());
  for (const auto& r : cm.counts)
    for (auto v : r) cell_w = std::max(cell_w, std::to_string(v).size());
  cell_w = std::max<std::size_t>(cell_w, 2) + 2;
  out << "Confusion matrix (rows actual, columns predicted)\n";
  out << std::setw(static_cast<int>(name_w)) << std::left << "" << std::right;
  for (std::size_t p = 0; p < k; ++p) out << std::setw(static_cast<int>(cell_w)) << ("[" + std::to_string(p) + "]");
  out << "\n";
  for (std::size_t a = 0; a < k; ++a) {
    out << std::setw(static_cast<int>(name_w)) << std::left << cm.class_names[a] << std::right;
    for (auto v : cm.counts[a]) out << std::setw(static_cast<int>(cell_w)) << v;
    out << "  [" << a << "]\n";
  }
  out << std::fixed << std::setprecision(4);
  out << "\naccuracy " << m.accuracy << " (" << cm.trace() << "/" << m.sample_count << ")\n";
  out << std::setw(static_cast<int>(name_w)) << std::left << "class" << std::right << "  precision     recall\n";
  bool flagged = false;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& x = m.per_class[c];
    out << std::setw(static_cast<int>(name_w)) << std::left << cm.class_names[c] << std::right << "  "
        << std::setw(9) << x.precision << (x.precision_undefined ? "*" : " ") << "  " << std::setw(9)
        << x.recall << (x.recall_undefined ? "*" : " ") << "\n";
    flagged |= x.precision_undefined || x.recall_undefined;
  }
  out << std::setw(static_cast<int>(name_w)) << std::left << "macro" << std::right << "  " << std::setw(9)
      << m.macro_precision << "   " << std::setw(9) << m.macro_recall << "\n";
  if (flagged) out << "* zero denominator (class never predicted or never present); reported as 0\n";
  return out.str();
}

}  // namespace hmresnet
