#include "iotids/ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/core.h>
#include <fmt/ranges.h>

#include "iotids/error.hpp"
#include "iotids/random.hpp"

namespace iotids {

namespace {

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parsing

FlowCsvParser::FlowCsvParser(std::istream& in, const FlowSchema& schema, char delimiter,
                             std::uint64_t first_seq_index)
    : reader_(in, delimiter), next_seq_(first_seq_index) {
  auto header = reader_.next();
  if (!header) throw DataError("input has no header row");
  header_ = std::move(header->cells);
  for (auto& name : header_) name = std::string(trim(name));

  std::vector<std::string> missing;
  for (const auto& name : schema.features) {
    if (!find_column(name)) missing.push_back(name);
  }
  if (!find_column(schema.label_column)) missing.push_back(schema.label_column);
  if (!missing.empty()) {
    throw ConfigError(fmt::format("schema column(s) missing from header: {}", fmt::join(missing, ", ")));
  }
}

std::optional<std::size_t> FlowCsvParser::find_column(std::string_view name) const {
  const auto it = std::find(header_.begin(), header_.end(), name);
  if (it == header_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - header_.begin());
}

std::size_t FlowCsvParser::column(std::string_view name) const {
  if (auto index = find_column(name)) return *index;
  throw ConfigError(fmt::format("column '{}' not found in header", name));
}

std::optional<RawRecord> FlowCsvParser::next() {
  while (auto row = reader_.next()) {
    if (row->cells.size() != header_.size()) {
      errors_.push_back({row->line_number, fmt::format("expected {} cells, found {}", header_.size(),
                                                        row->cells.size())});
      continue;
    }
    return RawRecord{std::move(row->cells), row->line_number, next_seq_++};
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Column analysis

EmptyColumnReport drop_empty_columns(std::span<const std::string> header, std::span<const RawRecord> sample) {
  if (sample.empty()) throw DataError("cannot detect empty columns on an empty sample");
  std::vector<bool> populated(header.size(), false);
  for (const auto& record : sample) {
    for (std::size_t c = 0; c < header.size() && c < record.values.size(); ++c) {
      if (!populated[c] && !is_blank(record.values[c])) populated[c] = true;
    }
  }
  EmptyColumnReport report;
  for (std::size_t c = 0; c < header.size(); ++c) {
    (populated[c] ? report.kept : report.dropped).push_back(header[c]);
  }
  if (report.kept.empty()) throw DataError("every column is empty in the sample");
  return report;
}

std::optional<double> parse_number(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::vector<ColumnKind> infer_column_kinds(std::size_t columns, std::span<const RawRecord> sample) {
  std::vector<ColumnKind> kinds(columns, ColumnKind::Numeric);
  for (const auto& record : sample) {
    for (std::size_t c = 0; c < columns && c < record.values.size(); ++c) {
      if (kinds[c] == ColumnKind::Numeric && !is_blank(record.values[c]) && !parse_number(record.values[c])) {
        kinds[c] = ColumnKind::Categorical;
      }
    }
  }
  return kinds;
}

double CategoryEncoder::encode(const std::string& value) {
  auto [it, inserted] = codes_.try_emplace(value, categories_.size());
  if (inserted) categories_.push_back(value);
  return static_cast<double>(it->second);
}

FlowRecordDecoder::FlowRecordDecoder(std::span<const std::string> header, const FlowSchema& schema,
                                     std::span<const ColumnKind> kinds)
    : feature_names_(schema.features) {
  if (schema.features.size() != kFeatureCount) {
    throw ConfigError(fmt::format("expected {} feature columns, got {}", kFeatureCount, schema.features.size()));
  }
  auto find = [&](std::string_view name) -> std::optional<std::size_t> {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const auto column = find(schema.features[f]);
    if (!column) throw ConfigError(fmt::format("feature column '{}' not found in header", schema.features[f]));
    feature_columns_[f] = *column;
    feature_kinds_[f] = *column < kinds.size() ? kinds[*column] : ColumnKind::Numeric;
  }
  const auto label = find(schema.label_column);
  if (!label) throw ConfigError(fmt::format("label column '{}' not found in header", schema.label_column));
  label_column_ = *label;
  seq_column_ = find(kSeqIndexColumn);
}

FlowRecordDecoder::Outcome FlowRecordDecoder::decode(const RawRecord& raw, FlowRecord& out, RowError* error) {
  const auto label = map_label(raw.values.at(label_column_));
  if (!label) return Outcome::Excluded;

  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const std::string& cell = raw.values[feature_columns_[f]];
    if (feature_kinds_[f] == ColumnKind::Categorical) {
      out.features[f] = encoders_[f].encode(std::string(trim(cell)));
      continue;
    }
    const auto value = parse_number(cell);
    if (!value) {
      if (error) {
        *error = {raw.line_number, fmt::format("feature '{}' is not numeric: '{}'", feature_names_[f], cell)};
      }
      return Outcome::Malformed;
    }
    out.features[f] = *value;
  }
  out.label = *label;
  out.seq_index = raw.seq_index;
  if (seq_column_) {
    std::uint64_t seq = 0;
    const std::string_view text = trim(raw.values[*seq_column_]);
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), seq);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
      if (error) *error = {raw.line_number, fmt::format("invalid seq_index '{}'", text)};
      return Outcome::Malformed;
    }
    out.seq_index = seq;
  }
  return Outcome::Record;
}

std::vector<std::string> select_features_by_variance(std::span<const std::string> header,
                                                     std::span<const RawRecord> sample,
                                                     std::span<const ColumnKind> kinds,
                                                     std::span<const std::string> excluded) {
  struct Candidate {
    std::size_t column;
    double variance;
  };
  std::vector<Candidate> candidates;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c < kinds.size() && kinds[c] != ColumnKind::Numeric) continue;
    if (std::find(excluded.begin(), excluded.end(), header[c]) != excluded.end()) continue;
    // Welford over non-blank cells.
    double mean = 0.0, m2 = 0.0;
    std::size_t n = 0;
    for (const auto& record : sample) {
      const auto value = parse_number(record.values[c]);
      if (!value) continue;
      ++n;
      const double delta = *value - mean;
      mean += delta / static_cast<double>(n);
      m2 += delta * (*value - mean);
    }
    if (n == 0) continue;
    candidates.push_back({c, m2 / static_cast<double>(n)});
  }
  if (candidates.size() < kFeatureCount) {
    throw ConfigError(fmt::format("only {} numeric candidate columns; {} features required", candidates.size(),
                                  kFeatureCount));
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const Candidate& a, const Candidate& b) { return a.variance > b.variance; });
  candidates.resize(kFeatureCount);
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) { return a.column < b.column; });
  std::vector<std::string> names;
  for (const auto& c : candidates) names.push_back(header[c.column]);
  return names;
}

// ---------------------------------------------------------------------------
// Sequence-preserving sub-sampling

void SamplingPlan::validate() const {
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (!(fractions[c] > 0.0 && fractions[c] <= 1.0)) {
      throw ConfigError(fmt::format("fractions.{} must lie in (0, 1], got {}", to_key(class_from_index(c)),
                                    fractions[c]));
    }
  }
  if (block_length == 0) throw ConfigError("block_length must be at least 1");
}

BlockSelection BlockSelection::choose(std::size_t total, double fraction, std::size_t block_length,
                                      std::uint64_t seed) {
  BlockSelection s;
  s.total_ = total;
  s.block_length_ = block_length;
  const std::size_t num_blocks = (total + block_length - 1) / block_length;
  s.chosen_.assign(num_blocks, false);
  if (num_blocks == 0) return s;

  const double wanted = std::round(fraction * static_cast<double>(total) / static_cast<double>(block_length));
  std::size_t take = static_cast<std::size_t>(std::max(1.0, wanted));
  if (fraction >= 1.0) take = num_blocks;
  if (take > num_blocks) {
    s.warning_ = fmt::format("fraction {} asks for {} blocks but only {} exist; keeping all records", fraction,
                             take, num_blocks);
    take = num_blocks;
  }

  if (take == num_blocks) {
    std::fill(s.chosen_.begin(), s.chosen_.end(), true);
  } else {
    // Partial Fisher-Yates over block indices.
    std::vector<std::size_t> order(num_blocks);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + uniform_index(rng, num_blocks - i);
      std::swap(order[i], order[j]);
      s.chosen_[order[i]] = true;
    }
  }
  for (std::size_t b = 0; b < num_blocks; ++b) {
    if (s.chosen_[b]) s.kept_ += std::min(block_length, total - b * block_length);
  }
  return s;
}

bool BlockSelection::keeps(std::size_t ordinal) const {
  const std::size_t block = ordinal / block_length_;
  return block < chosen_.size() && chosen_[block];
}

std::vector<std::size_t> BlockSelection::blocks() const {
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < chosen_.size(); ++b) {
    if (chosen_[b]) out.push_back(b);
  }
  return out;
}

SubsampleFilter::SubsampleFilter(const std::array<std::size_t, kNumClasses>& class_totals,
                                 const SamplingPlan& plan) {
  plan.validate();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    selections_[c] = BlockSelection::choose(class_totals[c], plan.fractions[c], plan.block_length,
                                            derive_seed(plan.seed, std::uint64_t{c}));
  }
}

bool SubsampleFilter::accept(ClassLabel label) {
  const std::size_t c = index_of(label);
  return selections_[c].keeps(seen_[c]++);
}

std::vector<std::string> SubsampleFilter::warnings() const {
  std::vector<std::string> out;
  for (ClassLabel c : kAllClasses) {
    if (const auto& w = selections_[index_of(c)].warning()) out.push_back(fmt::format("{}: {}", to_key(c), *w));
  }
  return out;
}

std::vector<FlowRecord> subsample_preserving_sequence(std::span<const FlowRecord> records,
                                                      const SamplingPlan& plan,
                                                      std::vector<std::string>* warnings) {
  std::array<std::size_t, kNumClasses> totals{};
  for (const auto& r : records) ++totals[index_of(r.label)];
  SubsampleFilter filter(totals, plan);
  std::vector<FlowRecord> kept;
  for (const auto& r : records) {
    if (filter.accept(r.label)) kept.push_back(r);
  }
  if (warnings) {
    auto w = filter.warnings();
    warnings->insert(warnings->end(), w.begin(), w.end());
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Summary

DatasetSummary DatasetSummary::from_counts(const std::array<std::size_t, kNumClasses>& counts) {
  DatasetSummary s;
  s.counts = counts;
  s.total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
  if (s.total == 0) throw DataError("cannot summarize an empty record stream");
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    s.percentages[c] = 100.0 * static_cast<double>(counts[c]) / static_cast<double>(s.total);
  }
  return s;
}

nlohmann::ordered_json DatasetSummary::to_json() const {
  nlohmann::ordered_json j;
  j["total"] = total;
  for (ClassLabel c : kAllClasses) {
    j["classes"][std::string(to_key(c))] = {{"records", counts[index_of(c)]},
                                            {"percentage", percentages[index_of(c)]}};
  }
  return j;
}

DatasetSummary summarize(std::span<const FlowRecord> records) {
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& r : records) ++counts[index_of(r.label)];
  return DatasetSummary::from_counts(counts);
}

// ---------------------------------------------------------------------------
// Two-pass file ingestion

namespace {

/// Streams rows of every source in order with continuous seq_index values.
template <typename Fn>
std::vector<std::string> for_each_row(std::span<const std::filesystem::path> sources, const FlowSchema& schema,
                                      char delimiter, std::vector<RowError>* errors, Fn&& fn) {
  std::vector<std::string> header;
  std::uint64_t seq = 0;
  for (const auto& path : sources) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(fmt::format("cannot open input '{}'", path.string()));
    FlowCsvParser parser(in, schema, delimiter, seq);
    if (header.empty()) {
      header = parser.header();
    } else if (parser.header() != header) {
      throw ConfigError(fmt::format("header of '{}' differs from the first input", path.string()));
    }
    while (auto record = parser.next()) {
      if (!fn(header, std::move(*record))) return header;
    }
    seq = parser.next_seq_index();
    if (errors) errors->insert(errors->end(), parser.errors().begin(), parser.errors().end());
  }
  return header;
}

}  // namespace

IngestResult ingest_sources(std::span<const std::filesystem::path> sources, const IngestOptions& options,
                            std::ostream* sampled) {
  if (sources.empty()) throw ConfigError("no input files given");
  options.plan.validate();
  if (!options.features.empty() && options.features.size() != kFeatureCount) {
    throw ConfigError(fmt::format("features must list exactly {} columns, got {}", kFeatureCount,
                                  options.features.size()));
  }
  const std::size_t sample_rows = std::max<std::size_t>(options.empty_scan_rows, 1);
  FlowSchema parse_schema{options.features, options.label_column};

  IngestResult result;

  // Pass 1: sample, column analysis, per-class totals.
  std::vector<RawRecord> sample;
  std::vector<bool> populated;
  std::optional<FlowRecordDecoder> decoder;
  std::vector<ColumnKind> kinds;

  auto setup = [&](const std::vector<std::string>& header) {
    if (sample.empty()) throw DataError("input contains no data rows");
    result.columns = drop_empty_columns(header, sample);
    kinds = infer_column_kinds(header.size(), sample);
    if (options.features.empty()) {
      std::vector<std::string> excluded = result.columns.dropped;
      excluded.push_back(options.label_column);
      excluded.emplace_back(kSeqIndexColumn);
      result.features = select_features_by_variance(header, sample, kinds, excluded);
    } else {
      result.features = options.features;
      if (!options.full_scan) {
        for (const auto& f : result.features) {
          if (std::find(result.columns.dropped.begin(), result.columns.dropped.end(), f) !=
              result.columns.dropped.end()) {
            throw ConfigError(fmt::format("feature column '{}' is empty in the scanned sample", f));
          }
        }
      }
    }
    decoder.emplace(header, FlowSchema{result.features, options.label_column}, kinds);
  };

  auto count = [&](const RawRecord& raw) {
    FlowRecord record;
    RowError error;
    switch (decoder->decode(raw, record, &error)) {
      case FlowRecordDecoder::Outcome::Record: ++result.input_counts[index_of(record.label)]; break;
      case FlowRecordDecoder::Outcome::Excluded: ++result.excluded; break;
      case FlowRecordDecoder::Outcome::Malformed: result.row_errors.push_back(error); break;
    }
  };

  result.header = for_each_row(sources, parse_schema, options.delimiter, &result.row_errors,
                               [&](const std::vector<std::string>& header, RawRecord&& raw) {
                                 if (options.full_scan) {
                                   populated.resize(header.size(), false);
                                   for (std::size_t c = 0; c < header.size(); ++c) {
                                     if (!populated[c] && !is_blank(raw.values[c])) populated[c] = true;
                                   }
                                 }
                                 if (!decoder) {
                                   sample.push_back(std::move(raw));
                                   if (sample.size() == sample_rows) {
                                     setup(header);
                                     for (const auto& s : sample) count(s);
                                   }
                                 } else {
                                   count(raw);
                                 }
                                 return true;
                               });
  if (!decoder) {
    if (result.header.empty()) throw DataError("input contains no data rows");
    setup(result.header);
    for (const auto& s : sample) count(s);
  }
  if (options.full_scan) {
    result.columns = {};
    for (std::size_t c = 0; c < result.header.size(); ++c) {
      (populated[c] ? result.columns.kept : result.columns.dropped).push_back(result.header[c]);
    }
    for (const auto& f : result.features) {
      if (std::find(result.columns.dropped.begin(), result.columns.dropped.end(), f) != result.columns.dropped.end()) {
        throw ConfigError(fmt::format("feature column '{}' is empty in every row", f));
      }
    }
  }
  std::sort(result.row_errors.begin(), result.row_errors.end(),
            [](const RowError& a, const RowError& b) { return a.line_number < b.line_number; });

  // Pass 2: keep selected blocks, write them out.
  SubsampleFilter filter(result.input_counts, options.plan);
  std::vector<std::size_t> kept_columns;
  for (std::size_t c = 0; c < result.header.size(); ++c) {
    if (std::find(result.columns.kept.begin(), result.columns.kept.end(), result.header[c]) !=
        result.columns.kept.end()) {
      kept_columns.push_back(c);
    }
  }
  std::optional<CsvWriter> writer;
  if (sampled) {
    writer.emplace(*sampled, options.delimiter);
    std::vector<std::string> out_header;
    for (std::size_t c : kept_columns) out_header.push_back(result.header[c]);
    out_header.emplace_back(kSeqIndexColumn);
    writer->write_row(out_header);
  }
  FlowRecordDecoder second(result.header, FlowSchema{result.features, options.label_column}, kinds);
  std::array<std::size_t, kNumClasses> kept{};
  std::vector<std::string> cells;
  for_each_row(sources, FlowSchema{{}, options.label_column}, options.delimiter, nullptr,
               [&](const std::vector<std::string>&, RawRecord&& raw) {
                 FlowRecord record;
                 if (second.decode(raw, record) != FlowRecordDecoder::Outcome::Record) return true;
                 if (!filter.accept(record.label)) return true;
                 ++kept[index_of(record.label)];
                 if (writer) {
                   cells.clear();
                   for (std::size_t c : kept_columns) cells.push_back(raw.values[c]);
                   cells.push_back(std::to_string(record.seq_index));
                   writer->write_row(cells);
                 }
                 return true;
               });

  for (ClassLabel c : kAllClasses) result.kept_blocks[index_of(c)] = filter.selection(c).blocks();
  result.warnings = filter.warnings();
  if (!result.row_errors.empty()) {
    result.warnings.push_back(fmt::format("{} malformed row(s) skipped; first at line {}", result.row_errors.size(),
                                          result.row_errors.front().line_number));
  }
  result.summary = DatasetSummary::from_counts(kept);
  return result;
}

nlohmann::ordered_json IngestResult::to_json() const {
  nlohmann::ordered_json j;
  j["format"] = "iotids-ingest-summary";
  j["version"] = 1;
  j["columns"] = {{"total", header.size()}, {"kept", columns.kept}, {"dropped", columns.dropped}};
  j["features"] = features;
  nlohmann::ordered_json input;
  for (ClassLabel c : kAllClasses) input[std::string(to_key(c))] = input_counts[index_of(c)];
  j["input_records"] = input;
  j["excluded_records"] = excluded;
  j["malformed_rows"] = row_errors.size();
  j["summary"] = summary.to_json();
  j["warnings"] = warnings;
  return j;
}

}  // namespace iotids
