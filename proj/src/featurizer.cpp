#include "iotids/featurizer.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <fmt/core.h>

#include "iotids/error.hpp"

namespace iotids {

nlohmann::ordered_json NormalizationStats::to_json() const {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const std::string name = f < names.size() ? names[f] : fmt::format("f{}", f);
    nlohmann::ordered_json entry = {{"min", min[f]}, {"max", max[f]}};
    if (!categories[f].empty()) entry["categories"] = categories[f];
    j[name] = entry;
  }
  return j;
}

NormalizationStats NormalizationStats::from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object() || j.size() != kFeatureCount) {
    throw DataError(fmt::format("normalization stats must map {} feature names to {{min, max}}", kFeatureCount));
  }
  NormalizationStats stats;
  std::size_t f = 0;
  for (const auto& [name, entry] : j.items()) {
    if (!entry.is_object() || !entry.contains("min") || !entry.contains("max") || !entry["min"].is_number() ||
        !entry["max"].is_number()) {
      throw DataError(fmt::format("normalization stats entry '{}' lacks numeric min/max", name));
    }
    stats.names.push_back(name);
    stats.min[f] = entry["min"].get<double>();
    stats.max[f] = entry["max"].get<double>();
    if (stats.min[f] > stats.max[f]) throw DataError(fmt::format("feature '{}' has min > max", name));
    if (entry.contains("categories")) stats.categories[f] = entry["categories"].get<std::vector<std::string>>();
    ++f;
  }
  return stats;
}

void MinMaxAccumulator::add(const FeatureVector& features) {
  if (count_ == 0) {
    min_ = features;
    max_ = features;
  } else {
    for (std::size_t f = 0; f < kFeatureCount; ++f) {
      min_[f] = std::min(min_[f], features[f]);
      max_[f] = std::max(max_[f], features[f]);
    }
  }
  ++count_;
}

void MinMaxAccumulator::merge(const MinMaxAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    min_[f] = std::min(min_[f], other.min_[f]);
    max_[f] = std::max(max_[f], other.max_[f]);
  }
  count_ += other.count_;
}

NormalizationStats MinMaxAccumulator::stats() const {
  if (count_ == 0) throw DataError("cannot fit normalization statistics on an empty stream");
  NormalizationStats s;
  s.min = min_;
  s.max = max_;
  return s;
}

NormalizationStats fit_min_max(std::span<const FlowRecord> train_records) {
  MinMaxAccumulator acc;
  for (const auto& r : train_records) acc.add(r.features);
  return acc.stats();
}

FeatureVector normalize(const FeatureVector& features, const NormalizationStats& stats) {
  FeatureVector out{};
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    const double range = stats.max[f] - stats.min[f];
    if (!(range > 0.0)) {
      out[f] = 0.0;
      continue;
    }
    out[f] = std::clamp((features[f] - stats.min[f]) / range, 0.0, 1.0);
  }
  return out;
}

std::uint8_t scale_to_byte(double value) {
  if (!(value >= 0.0 && value <= 1.0)) {
    throw std::domain_error(fmt::format("byte scaling expects a value in [0, 1], got {}", value));
  }
  // nearbyint honours the current rounding mode, which is round-half-even by default.
  return static_cast<std::uint8_t>(std::nearbyint(255.0 * value));
}

ByteRecord to_bytes(const FeatureVector& normalized) {
  ByteRecord out{};
  for (std::size_t f = 0; f < kFeatureCount; ++f) out[f] = scale_to_byte(normalized[f]);
  return out;
}

std::optional<ImageTensor> ImageBuilder::push(const ByteRecord& record, std::uint64_t seq_index) {
  if (filled_ == 0) {
    current_ = ImageTensor{};
    current_.label = label_;
    current_.first_seq_index = seq_index;
  }
  const std::size_t channel = filled_ / kImageSide;
  const std::size_t row = filled_ % kImageSide;
  for (std::size_t col = 0; col < kImageSide; ++col) {
    current_.pixels[ImageTensor::offset(row, col, channel)] = record[col];
  }
  if (++filled_ < kRecordsPerImage) return std::nullopt;
  filled_ = 0;
  ++emitted_;
  return current_;
}

ImageBuildResult build_images(std::span<const FlowRecord> normalized_stream) {
  ImageBuildResult result;
  if (normalized_stream.empty()) {
    result.warning = "empty class stream; no images built";
    return result;
  }
  const ClassLabel label = normalized_stream.front().label;
  ImageBuilder builder(label);
  for (const auto& record : normalized_stream) {
    if (record.label != label) throw DataError("build_images expects a single-class stream");
    if (auto image = builder.push(to_bytes(record.features), record.seq_index)) {
      result.images.push_back(*image);
    }
  }
  result.dropped_records = builder.pending();
  if (normalized_stream.size() < kRecordsPerImage) {
    result.warning = fmt::format("{} stream has {} records, fewer than the {} needed for one image", to_key(label),
                                 normalized_stream.size(), kRecordsPerImage);
  }
  return result;
}

bool is_supported_resolution(std::size_t side) {
  return side == 16 || side == 32 || side == 71 || side == 75;
}

namespace {

struct AxisSample {
  std::size_t lo = 0;
  std::size_t hi = 0;
  double weight = 0.0;
};

std::vector<AxisSample> axis_samples(std::size_t in, std::size_t out) {
  std::vector<AxisSample> samples(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = std::max(0.0, (static_cast<double>(o) + 0.5) * scale - 0.5);
    const auto lo = static_cast<std::size_t>(std::floor(src));
    samples[o] = {lo, std::min(lo + 1, in - 1), src - static_cast<double>(lo)};
  }
  return samples;
}

}  // namespace

ResizedImage bilinear_resize(const ImageTensor& image, std::size_t side) {
  if (!is_supported_resolution(side)) {
    throw ConfigError(fmt::format("unsupported resize target {}x{} (supported: 16, 32, 71, 75)", side, side));
  }
  ResizedImage out;
  out.side = side;
  out.label = image.label;
  out.first_seq_index = image.first_seq_index;
  out.pixels.resize(side * side * kImageChannels);

  const auto ys = axis_samples(kImageSide, side);
  const auto xs = axis_samples(kImageSide, side);
  for (std::size_t r = 0; r < side; ++r) {
    const AxisSample& y = ys[r];
    for (std::size_t c = 0; c < side; ++c) {
      const AxisSample& x = xs[c];
      for (std::size_t ch = 0; ch < kImageChannels; ++ch) {
        const double p00 = image.at(y.lo, x.lo, ch);
        const double p01 = image.at(y.lo, x.hi, ch);
        const double p10 = image.at(y.hi, x.lo, ch);
        const double p11 = image.at(y.hi, x.hi, ch);
        const double top = (1.0 - x.weight) * p00 + x.weight * p01;
        const double bottom = (1.0 - x.weight) * p10 + x.weight * p11;
        out.pixels[(r * side + c) * kImageChannels + ch] = ((1.0 - y.weight) * top + y.weight * bottom) / 255.0;
      }
    }
  }
  return out;
}

std::size_t validation_count(std::size_t images, double fraction) {
  if (images < 2) return 0;
  const auto wanted = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(images) - 1e-12));
  return std::clamp<std::size_t>(wanted, 1, images - 1);
}

}  // namespace iotids
