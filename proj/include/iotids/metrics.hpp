#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/labels.hpp"

namespace iotids {

/// counts[actual][predicted], axes ordered DDoS, DoS, Others.
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(ClassLabel actual, ClassLabel predicted, std::uint64_t n = 1);
  std::uint64_t at(ClassLabel actual, ClassLabel predicted) const {
    return counts[index_of(actual)][index_of(predicted)];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  std::uint64_t row_total(ClassLabel actual) const;
  std::uint64_t column_total(ClassLabel predicted) const;

  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

  nlohmann::ordered_json to_json() const;
  /// Header "DDoS,DoS,Others" (predicted) then one row per actual class in the same order.
  std::string to_csv() const;
};

/// Throws std::invalid_argument on a length mismatch or empty input.
ConfusionMatrix confusion_matrix(std::span<const ClassLabel> predictions, std::span<const ClassLabel> actuals);

struct ClassMetrics {
  double precision = 0;  ///< 0 when nothing was predicted as the class
  double recall = 0;     ///< 0 when the class has no samples
  double f1 = 0;         ///< 2PR / (P + R), 0 when P + R = 0
  double accuracy = 0;   ///< one-vs-rest (TP + TN) / total
  std::uint64_t support = 0;
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class;
  double accuracy = 0;     ///< trace / total
  double weighted_f1 = 0;  ///< support-weighted mean of per-class F1
  double macro_f1 = 0;
  std::uint64_t total = 0;

  const ClassMetrics& operator[](ClassLabel c) const { return per_class[index_of(c)]; }
  nlohmann::ordered_json to_json() const;
};

/// Throws std::invalid_argument if the matrix is empty.
MetricsReport per_class_metrics(const ConfusionMatrix& matrix);

/// DDoS and DoS merged into "attack" (the positive class) against Others.
struct BinaryCollapseReport {
  std::uint64_t true_positive = 0;
  std::uint64_t false_positive = 0;
  std::uint64_t false_negative = 0;
  std::uint64_t true_negative = 0;
  double accuracy = 0;
  double precision = 0;
  double recall = 0;
  double f1 = 0;

  nlohmann::ordered_json to_json() const;
};

BinaryCollapseReport binary_collapse(const ConfusionMatrix& matrix);

struct ComparisonEntry {
  std::string method;
  double multiclass_accuracy = 0;
  double binary_accuracy = 0;

  friend bool operator==(const ComparisonEntry&, const ComparisonEntry&) = default;
};

/// "method,multiclass_accuracy,binary_accuracy" plus one row per entry, in
/// input order. Values use the shortest representation that parses back to
/// the same double. Throws ConfigError on an empty list or duplicate names.
std::string export_comparison_csv(std::span<const ComparisonEntry> entries);
nlohmann::ordered_json export_comparison_json(std::span<const ComparisonEntry> entries);
/// Inverse of export_comparison_csv. Throws DataError on malformed input.
std::vector<ComparisonEntry> parse_comparison_csv(std::string_view csv);

}  // namespace iotids
