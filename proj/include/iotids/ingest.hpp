#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/csv.hpp"
#include "iotids/labels.hpp"

namespace iotids {

inline constexpr std::size_t kFeatureCount = 16;
using FeatureVector = std::array<double, kFeatureCount>;

/// Name of the column appended to re-serialized datasets so that downstream
/// stages keep the original file order.
inline constexpr std::string_view kSeqIndexColumn = "seq_index";

struct RawRecord {
  std::vector<std::string> values;
  std::size_t line_number = 0;
  std::uint64_t seq_index = 0;
};

struct RowError {
  std::size_t line_number = 0;
  std::string message;
};

struct FlowRecord {
  FeatureVector features{};
  ClassLabel label = ClassLabel::Others;
  std::uint64_t seq_index = 0;

  friend bool operator==(const FlowRecord&, const FlowRecord&) = default;
};

/// Columns a parser must find in the header. An empty feature list means
/// "features not chosen yet"; only the label column is then required.
struct FlowSchema {
  std::vector<std::string> features;
  std::string label_column = "category";
};

/// Streaming flow-record CSV parser. Rows whose cell count differs from the
/// header are skipped and recorded in errors(); the stream continues.
class FlowCsvParser {
 public:
  /// Throws ConfigError if a schema column is missing from the header and
  /// DataError if the input has no header row.
  FlowCsvParser(std::istream& in, const FlowSchema& schema, char delimiter = ',',
                std::uint64_t first_seq_index = 0);

  const std::vector<std::string>& header() const { return header_; }
  std::optional<RawRecord> next();
  const std::vector<RowError>& errors() const { return errors_; }
  std::uint64_t next_seq_index() const { return next_seq_; }

  std::optional<std::size_t> find_column(std::string_view name) const;
  std::size_t column(std::string_view name) const;

 private:
  CsvReader reader_;
  std::vector<std::string> header_;
  std::vector<RowError> errors_;
  std::uint64_t next_seq_ = 0;
};

struct EmptyColumnReport {
  std::vector<std::string> kept;
  std::vector<std::string> dropped;
};

/// Columns with no non-blank cell in the sample are dropped. The decision
/// is sample-only: a column blank in the sample but populated later is
/// still dropped. Throws DataError if the sample is empty or every column
/// is blank.
EmptyColumnReport drop_empty_columns(std::span<const std::string> header,
                                     std::span<const RawRecord> sample);

enum class ColumnKind { Numeric, Categorical };

/// A column is numeric when every non-blank sampled cell parses as a number.
std::vector<ColumnKind> infer_column_kinds(std::size_t columns, std::span<const RawRecord> sample);

std::optional<double> parse_number(std::string_view text);

/// Integer codes for string-valued columns, assigned in first-seen order.
class CategoryEncoder {
 public:
  double encode(const std::string& value);
  const std::vector<std::string>& categories() const { return categories_; }

 private:
  std::vector<std::string> categories_;
  std::unordered_map<std::string, std::size_t> codes_;
};

/// Converts RawRecords into FlowRecords: label remapping, numeric parsing,
/// first-seen label encoding of categorical feature columns. If the header
/// carries a seq_index column its value replaces the parser's ordinal.
class FlowRecordDecoder {
 public:
  FlowRecordDecoder(std::span<const std::string> header, const FlowSchema& schema,
                    std::span<const ColumnKind> kinds);

  enum class Outcome { Record, Excluded, Malformed };

  /// Throws DataError on an unknown label.
  Outcome decode(const RawRecord& raw, FlowRecord& out, RowError* error = nullptr);

  const std::vector<std::string>& feature_names() const { return feature_names_; }
  std::span<const ColumnKind> feature_kinds() const { return feature_kinds_; }
  const CategoryEncoder& encoder(std::size_t feature) const { return encoders_[feature]; }

 private:
  std::vector<std::string> feature_names_;
  std::array<std::size_t, kFeatureCount> feature_columns_{};
  std::array<ColumnKind, kFeatureCount> feature_kinds_{};
  std::array<CategoryEncoder, kFeatureCount> encoders_;
  std::size_t label_column_ = 0;
  std::optional<std::size_t> seq_column_;
};

/// The 16 numeric columns with the largest sample variance (ties resolved by
/// header position), returned in header order. Blank-in-sample columns and
/// the excluded names never qualify. Throws ConfigError if fewer than 16
/// candidates exist.
std::vector<std::string> select_features_by_variance(std::span<const std::string> header,
                                                     std::span<const RawRecord> sample,
                                                     std::span<const ColumnKind> kinds,
                                                     std::span<const std::string> excluded);

struct SamplingPlan {
  std::array<double, kNumClasses> fractions{1.0, 1.0, 1.0};
  std::size_t block_length = 480;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Contiguous blocks of one class stream selected for keeping. The stream of
/// `total` records is cut into blocks of `block_length` (last one possibly
/// short); round(fraction * total / block_length) blocks are drawn uniformly
/// without replacement.
class BlockSelection {
 public:
  static BlockSelection choose(std::size_t total, double fraction, std::size_t block_length,
                               std::uint64_t seed);

  bool keeps(std::size_t ordinal) const;
  std::size_t kept_count() const { return kept_; }
  std::size_t total() const { return total_; }
  std::size_t block_length() const { return block_length_; }
  std::vector<std::size_t> blocks() const;
  const std::optional<std::string>& warning() const { return warning_; }

 private:
  std::size_t total_ = 0;
  std::size_t block_length_ = 1;
  std::size_t kept_ = 0;
  std::vector<bool> chosen_;
  std::optional<std::string> warning_;
};

/// Streaming form of the sub-sampler for a mixed-class stream whose per-class
/// totals are known in advance (first pass). accept() must be called once per
/// record in stream order.
class SubsampleFilter {
 public:
  SubsampleFilter(const std::array<std::size_t, kNumClasses>& class_totals, const SamplingPlan& plan);

  bool accept(ClassLabel label);
  const BlockSelection& selection(ClassLabel label) const { return selections_[index_of(label)]; }
  std::vector<std::string> warnings() const;

 private:
  std::array<BlockSelection, kNumClasses> selections_;
  std::array<std::size_t, kNumClasses> seen_{};
};

/// Keep contiguous record blocks per class; output order equals input order.
/// Deterministic for a fixed plan.seed.
std::vector<FlowRecord> subsample_preserving_sequence(std::span<const FlowRecord> records,
                                                      const SamplingPlan& plan,
                                                      std::vector<std::string>* warnings = nullptr);

struct DatasetSummary {
  std::array<std::size_t, kNumClasses> counts{};
  std::size_t total = 0;
  std::array<double, kNumClasses> percentages{};  ///< in percent, count / total * 100

  static DatasetSummary from_counts(const std::array<std::size_t, kNumClasses>& counts);
  nlohmann::ordered_json to_json() const;
};

/// Throws DataError on an empty stream.
DatasetSummary summarize(std::span<const FlowRecord> records);

struct IngestOptions {
  std::vector<std::string> features;  ///< empty: pick by variance
  std::string label_column = "category";
  SamplingPlan plan;
  std::size_t empty_scan_rows = 100000;
  bool full_scan = false;
  char delimiter = ',';
};

struct IngestResult {
  std::vector<std::string> header;
  EmptyColumnReport columns;
  std::vector<std::string> features;
  std::array<std::size_t, kNumClasses> input_counts{};
  std::size_t excluded = 0;
  std::vector<RowError> row_errors;
  std::array<std::vector<std::size_t>, kNumClasses> kept_blocks;
  DatasetSummary summary;
  std::vector<std::string> warnings;

  nlohmann::ordered_json to_json() const;
};

/// Two streaming passes over the sources (concatenated in order): the first
/// counts records per class, the second writes the kept rows (non-empty
/// columns plus a trailing seq_index column) to `sampled`, if given.
IngestResult ingest_sources(std::span<const std::filesystem::path> sources, const IngestOptions& options,
                            std::ostream* sampled);

}  // namespace iotids
