#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/labels.hpp"
#include "iotids/random.hpp"

namespace iotids {

/// Column layout of generated files: 29 flow columns in the Bot-IoT style,
/// six of which (MAC/OUI/country fields) are always empty.
const std::vector<std::string>& synthetic_header();

/// The 16 generated numeric feature columns, in header order.
const std::vector<std::string>& synthetic_feature_columns();

enum class SynthDistribution {
  RangeDisjoint,  ///< every feature of each class in its own value band
  Overlapping,    ///< class bands overlap
};

struct SyntheticSpec {
  std::array<std::uint64_t, kNumClasses> records{12000, 10000, 8000};
  std::uint64_t theft_records = 0;  ///< extra rows labelled Theft (excluded at ingest)
  SynthDistribution distribution = SynthDistribution::RangeDisjoint;
  std::uint64_t burst_length = 480;  ///< records per single-class run
  std::uint64_t seed = 0;

  /// Throws ConfigError when a class has fewer than 48 records or the burst length is 0.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  static SyntheticSpec from_json(const nlohmann::ordered_json& j);
};

/// One generated row before formatting.
struct SyntheticRecord {
  std::uint64_t sequence = 0;  ///< 0-based position in the file
  std::string raw_label;       ///< DDoS, DoS, Normal, Reconnaissance or Theft
  std::optional<ClassLabel> label;
  std::array<double, 16> features{};  ///< values of synthetic_feature_columns(); slot 0 unused
  std::string proto;                  ///< slot 0 is this categorical column
};

/// Streams records in class bursts: the class of each burst is drawn with
/// probability proportional to its remaining records, so the stream ends
/// with every count met exactly.
class SyntheticGenerator {
 public:
  explicit SyntheticGenerator(const SyntheticSpec& spec);

  std::optional<SyntheticRecord> next();
  std::uint64_t total() const { return total_; }

 private:
  void start_burst();
  double draw(std::size_t feature, std::size_t band);

  SyntheticSpec spec_;
  Rng rng_;
  std::array<std::uint64_t, kNumClasses + 1> remaining_{};  ///< classes, then Theft
  std::uint64_t total_ = 0;
  std::uint64_t produced_ = 0;
  std::size_t burst_class_ = 0;
  std::uint64_t burst_left_ = 0;
  std::string burst_label_;
};

/// Writes the header and all rows. Deterministic for a fixed spec.
void write_synthetic_csv(std::ostream& out, const SyntheticSpec& spec);

/// Per-class record counts of the full-scale evaluation set (DDoS, DoS, Others).
inline constexpr std::array<std::uint64_t, kNumClasses> kFullScaleRecords = {4816344, 4125279, 1831182};

}  // namespace iotids
