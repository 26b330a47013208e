#include "iotids/synth.hpp"

#include <cmath>

#include <fmt/core.h>

#include "iotids/csv.hpp"
#include "iotids/error.hpp"

namespace iotids {

namespace {

struct FeatureShape {
  double scale;
  bool integer;
};

// Same order as synthetic_feature_columns(); slot 0 (proto) is categorical.
constexpr std::array<FeatureShape, 16> kShapes = {{
    {1, false},      // proto
    {60000, true},   // sport
    {60000, true},   // dport
    {1000, true},    // pkts
    {1e6, true},     // bytes
    {100, false},    // dur
    {10, false},     // mean
    {5, false},      // stddev
    {200, false},    // sum
    {5, false},      // min
    {20, false},     // max
    {500, true},     // spkts
    {500, true},     // dpkts
    {5e5, true},     // sbytes
    {5e5, true},     // dbytes
    {1e4, false},    // rate
}};

struct Band {
  double lo, hi;
};

constexpr std::array<Band, kNumClasses> kDisjointBands = {{{0.05, 0.30}, {0.37, 0.63}, {0.70, 0.95}}};
constexpr std::array<Band, kNumClasses> kOverlappingBands = {{{0.05, 0.65}, {0.20, 0.80}, {0.35, 0.95}}};

constexpr std::size_t kTheft = kNumClasses;

}  // namespace

const std::vector<std::string>& synthetic_header() {
  static const std::vector<std::string> header = {
      "pkSeqID", "stime", "flgs", "proto", "saddr", "sport", "daddr", "dport", "pkts",   "bytes",
      "state",   "dur",   "mean", "stddev", "smac", "dmac",  "sum",   "min",   "max",    "soui",
      "doui",    "sco",   "dco",  "spkts", "dpkts", "sbytes", "dbytes", "rate", "category"};
  return header;
}

const std::vector<std::string>& synthetic_feature_columns() {
  static const std::vector<std::string> columns = {"proto", "sport", "dport", "pkts",   "bytes",  "dur",
                                                   "mean",  "stddev", "sum",  "min",    "max",    "spkts",
                                                   "dpkts", "sbytes", "dbytes", "rate"};
  return columns;
}

void SyntheticSpec::validate() const {
  for (ClassLabel c : kAllClasses) {
    if (records[index_of(c)] < 48) {
      throw ConfigError(fmt::format("synthetic spec: class {} needs at least 48 records (got {})", to_string(c),
                                    records[index_of(c)]));
    }
  }
  if (burst_length == 0) throw ConfigError("synthetic spec: burst_length must be >= 1");
}

nlohmann::ordered_json SyntheticSpec::to_json() const {
  nlohmann::ordered_json counts;
  for (ClassLabel c : kAllClasses) counts[std::string(to_key(c))] = records[index_of(c)];
  return {{"records", counts},
          {"theft_records", theft_records},
          {"distribution", distribution == SynthDistribution::RangeDisjoint ? "range_disjoint" : "overlapping"},
          {"burst_length", burst_length},
          {"seed", seed}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::ordered_json& j) {
  SyntheticSpec s;
  try {
    if (j.contains("records")) {
      for (ClassLabel c : kAllClasses) {
        s.records[index_of(c)] = j["records"].value(std::string(to_key(c)), s.records[index_of(c)]);
      }
    }
    s.theft_records = j.value("theft_records", s.theft_records);
    const std::string dist = j.value("distribution", std::string("range_disjoint"));
    if (dist == "range_disjoint") {
      s.distribution = SynthDistribution::RangeDisjoint;
    } else if (dist == "overlapping") {
      s.distribution = SynthDistribution::Overlapping;
    } else {
      throw ConfigError(fmt::format("unknown synthetic distribution '{}'", dist));
    }
    s.burst_length = j.value("burst_length", s.burst_length);
    s.seed = j.value("seed", s.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("invalid synthetic spec: {}", e.what()));
  }
  s.validate();
  return s;
}

SyntheticGenerator::SyntheticGenerator(const SyntheticSpec& spec) : spec_(spec), rng_(spec.seed) {
  spec_.validate();
  for (std::size_t i = 0; i < kNumClasses; ++i) remaining_[i] = spec_.records[i];
  remaining_[kTheft] = spec_.theft_records;
  for (auto r : remaining_) total_ += r;
}

void SyntheticGenerator::start_burst() {
  std::uint64_t left = 0;
  for (auto r : remaining_) left += r;
  std::uint64_t pick = uniform_index(rng_, left);
  burst_class_ = 0;
  while (pick >= remaining_[burst_class_]) pick -= remaining_[burst_class_++];
  burst_left_ = std::min(spec_.burst_length, remaining_[burst_class_]);
  switch (burst_class_) {
    case 0: burst_label_ = "DDoS"; break;
    case 1: burst_label_ = "DoS"; break;
    case 2: burst_label_ = uniform01(rng_) < 0.5 ? "Normal" : "Reconnaissance"; break;
    default: burst_label_ = "Theft"; break;
  }
}

double SyntheticGenerator::draw(std::size_t feature, std::size_t band) {
  const auto& bands = spec_.distribution == SynthDistribution::RangeDisjoint ? kDisjointBands : kOverlappingBands;
  const auto [scale, integer] = kShapes[feature];
  const double v = uniform(rng_, bands[band].lo, bands[band].hi) * scale;
  return integer ? std::nearbyint(v) : v;
}

std::optional<SyntheticRecord> SyntheticGenerator::next() {
  if (produced_ == total_) return std::nullopt;
  if (burst_left_ == 0) start_burst();
  SyntheticRecord r;
  r.sequence = produced_++;
  r.raw_label = burst_label_;
  r.label = burst_class_ < kNumClasses ? std::optional(class_from_index(burst_class_)) : std::nullopt;
  --burst_left_;
  --remaining_[burst_class_];

  const std::size_t band = std::min(burst_class_, kNumClasses - 1);  // Theft rows look like Others
  for (std::size_t f = 1; f < kShapes.size(); ++f) r.features[f] = draw(f, band);
  if (spec_.distribution == SynthDistribution::RangeDisjoint) {
    static constexpr const char* kProto[] = {"udp", "tcp", "icmp"};
    r.proto = kProto[band];
  } else {
    r.proto = uniform01(rng_) < 0.5 ? "tcp" : "udp";
  }
  return r;
}

void write_synthetic_csv(std::ostream& out, const SyntheticSpec& spec) {
  SyntheticGenerator gen(spec);
  CsvWriter writer(out);
  writer.write_row(synthetic_header());
  static constexpr const char* kState[] = {"INT", "RST", "CON", "REQ"};
  std::vector<std::string> row(synthetic_header().size());
  auto num = [](double v, bool integer) { return integer ? fmt::format("{:.0f}", v) : fmt::format("{:.6f}", v); };
  while (auto r = gen.next()) {
    const std::size_t cls = r->label ? index_of(*r->label) : 3;
    const auto& f = r->features;
    row = {std::to_string(r->sequence + 1),
           fmt::format("{:.3f}", 1526344121.0 + static_cast<double>(r->sequence) * 0.001),
           "e",
           r->proto,
           fmt::format("192.168.100.{}", 147 + cls),
           num(f[1], true),
           "192.168.100.3",
           num(f[2], true),
           num(f[3], true),
           num(f[4], true),
           kState[cls],
           num(f[5], false),
           num(f[6], false),
           num(f[7], false),
           "",
           "",
           num(f[8], false),
           num(f[9], false),
           num(f[10], false),
           "",
           "",
           "",
           "",
           num(f[11], true),
           num(f[12], true),
           num(f[13], true),
           num(f[14], true),
           num(f[15], false),
           r->raw_label};
    writer.write_row(row);
  }
}

}  // namespace iotids
