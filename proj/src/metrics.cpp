#include "iotids/metrics.hpp"

#include <charconv>
#include <set>
#include <sstream>
#include <stdexcept>

#include <fmt/core.h>

#include "iotids/csv.hpp"
#include "iotids/error.hpp"

namespace iotids {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

void ConfusionMatrix::add(ClassLabel actual, ClassLabel predicted, std::uint64_t n) {
  counts[index_of(actual)][index_of(predicted)] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto v : row) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) n += counts[i][i];
  return n;
}

std::uint64_t ConfusionMatrix::row_total(ClassLabel actual) const {
  std::uint64_t n = 0;
  for (auto v : counts[index_of(actual)]) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::column_total(ClassLabel predicted) const {
  std::uint64_t n = 0;
  for (const auto& row : counts) n += row[index_of(predicted)];
  return n;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  for (std::size_t a = 0; a < kNumClasses; ++a)
    for (std::size_t p = 0; p < kNumClasses; ++p) counts[a][p] += other.counts[a][p];
  return *this;
}

nlohmann::ordered_json ConfusionMatrix::to_json() const {
  nlohmann::ordered_json j;
  j["axes"] = {"DDoS", "DoS", "Others"};
  j["counts"] = counts;
  return j;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream out;
  CsvWriter w(out);
  w.write_row({"DDoS", "DoS", "Others"});
  for (const auto& row : counts) w.write_row({std::to_string(row[0]), std::to_string(row[1]), std::to_string(row[2])});
  return out.str();
}

ConfusionMatrix confusion_matrix(std::span<const ClassLabel> predictions, std::span<const ClassLabel> actuals) {
  if (predictions.size() != actuals.size()) {
    throw std::invalid_argument(
        fmt::format("confusion_matrix: {} predictions but {} actual labels", predictions.size(), actuals.size()));
  }
  if (predictions.empty()) throw std::invalid_argument("confusion_matrix: no samples");
  ConfusionMatrix m;
  for (std::size_t i = 0; i < predictions.size(); ++i) m.add(actuals[i], predictions[i]);
  return m;
}

MetricsReport per_class_metrics(const ConfusionMatrix& matrix) {
  MetricsReport r;
  r.total = matrix.total();
  if (r.total == 0) throw std::invalid_argument("per_class_metrics: empty confusion matrix");
  double f1_sum = 0;
  for (ClassLabel c : kAllClasses) {
    auto& m = r.per_class[index_of(c)];
    const std::uint64_t tp = matrix.at(c, c);
    const std::uint64_t row = matrix.row_total(c);
    const std::uint64_t col = matrix.column_total(c);
    m.support = row;
    m.precision = ratio(tp, col);
    m.recall = ratio(tp, row);
    m.f1 = harmonic(m.precision, m.recall);
    m.accuracy = ratio(r.total - row - col + 2 * tp, r.total);  // TP + TN, TN = total - row - col + TP
    r.weighted_f1 += m.f1 * static_cast<double>(row);
    f1_sum += m.f1;
  }
  r.weighted_f1 /= static_cast<double>(r.total);
  r.macro_f1 = f1_sum / static_cast<double>(kNumClasses);
  r.accuracy = ratio(matrix.trace(), r.total);
  return r;
}

nlohmann::ordered_json MetricsReport::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  j["accuracy"] = accuracy;
  j["weighted_f1"] = weighted_f1;
  j["macro_f1"] = macro_f1;
  auto& classes = j["per_class"] = nlohmann::ordered_json::object();
  for (ClassLabel c : kAllClasses) {
    const auto& m = per_class[index_of(c)];
    classes[std::string(to_string(c))] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
                                          {"one_vs_rest_accuracy", m.accuracy}, {"support", m.support}};
  }
  return j;
}

BinaryCollapseReport binary_collapse(const ConfusionMatrix& m) {
  constexpr ClassLabel attack[] = {ClassLabel::DDoS, ClassLabel::DoS};
  BinaryCollapseReport r;
  for (ClassLabel a : attack) {
    for (ClassLabel p : attack) r.true_positive += m.at(a, p);
    r.false_negative += m.at(a, ClassLabel::Others);
    r.false_positive += m.at(ClassLabel::Others, a);
  }
  r.true_negative = m.at(ClassLabel::Others, ClassLabel::Others);
  const std::uint64_t total = r.true_positive + r.false_positive + r.false_negative + r.true_negative;
  r.accuracy = ratio(r.true_positive + r.true_negative, total);
  r.precision = ratio(r.true_positive, r.true_positive + r.false_positive);
  r.recall = ratio(r.true_positive, r.true_positive + r.false_negative);
  r.f1 = harmonic(r.precision, r.recall);
  return r;
}

nlohmann::ordered_json BinaryCollapseReport::to_json() const {
  return {{"positive_class", "attack"},
          {"true_positive", true_positive},
          {"false_positive", false_positive},
          {"false_negative", false_negative},
          {"true_negative", true_negative},
          {"accuracy", accuracy},
          {"precision", precision},
          {"recall", recall},
          {"f1", f1}};
}

namespace {

void check_entries(std::span<const ComparisonEntry> entries) {
  if (entries.empty()) throw ConfigError("comparison export needs at least one entry");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (!seen.insert(e.method).second) throw ConfigError(fmt::format("duplicate method name '{}'", e.method));
  }
}

}  // namespace

std::string export_comparison_csv(std::span<const ComparisonEntry> entries) {
  check_entries(entries);
  std::ostringstream out;
  CsvWriter w(out);
  w.write_row({"method", "multiclass_accuracy", "binary_accuracy"});
  for (const auto& e : entries) {
    w.write_row({e.method, fmt::format("{}", e.multiclass_accuracy), fmt::format("{}", e.binary_accuracy)});
  }
  return out.str();
}

nlohmann::ordered_json export_comparison_json(std::span<const ComparisonEntry> entries) {
  check_entries(entries);
  auto j = nlohmann::ordered_json::array();
  for (const auto& e : entries) {
    j.push_back({{"method", e.method},
                 {"multiclass_accuracy", e.multiclass_accuracy},
                 {"binary_accuracy", e.binary_accuracy}});
  }
  return j;
}

std::vector<ComparisonEntry> parse_comparison_csv(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  CsvReader reader(in);
  const auto header = reader.next();
  if (!header || header->cells != std::vector<std::string>{"method", "multiclass_accuracy", "binary_accuracy"}) {
    throw DataError("comparison CSV must start with method,multiclass_accuracy,binary_accuracy");
  }
  auto number = [](const std::string& s, std::size_t line) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) {
      throw DataError(fmt::format("line {}: '{}' is not a number", line, s));
    }
    return v;
  };
  std::vector<ComparisonEntry> out;
  while (auto row = reader.next()) {
    if (row->cells.size() != 3) throw DataError(fmt::format("line {}: expected 3 cells", row->line_number));
    out.push_back({row->cells[0], number(row->cells[1], row->line_number), number(row->cells[2], row->line_number)});
  }
  return out;
}

}  // namespace iotids
