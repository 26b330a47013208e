#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "iotids/ingest.hpp"
#include "iotids/labels.hpp"

namespace iotids {

inline constexpr std::size_t kImageSide = 16;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kRecordsPerImage = kImageSide * kImageChannels;  // 48
inline constexpr std::size_t kImageBytes = kImageSide * kImageSide * kImageChannels;

static_assert(kImageSide == kFeatureCount, "one image column per feature");

/// Per-feature extrema fitted on the training partition.
struct NormalizationStats {
  std::vector<std::string> names;  ///< feature names, may be empty for in-memory use
  FeatureVector min{};
  FeatureVector max{};
  /// Category lists of label-encoded features (empty for numeric ones).
  std::array<std::vector<std::string>, kFeatureCount> categories;

  nlohmann::ordered_json to_json() const;
  /// Throws DataError on a malformed document or min > max.
  static NormalizationStats from_json(const nlohmann::ordered_json& j);
};

/// Mergeable min/max reduction.
class MinMaxAccumulator {
 public:
  void add(const FeatureVector& features);
  void merge(const MinMaxAccumulator& other);
  std::size_t count() const { return count_; }
  /// Throws DataError if nothing was added.
  NormalizationStats stats() const;

 private:
  std::size_t count_ = 0;
  FeatureVector min_{};
  FeatureVector max_{};
};

NormalizationStats fit_min_max(std::span<const FlowRecord> train_records);

/// (x - min) / (max - min), clamped to [0, 1]; a constant feature maps to 0.
FeatureVector normalize(const FeatureVector& features, const NormalizationStats& stats);

/// round(255 * value), ties to even. Throws std::domain_error outside [0, 1].
std::uint8_t scale_to_byte(double value);

using ByteRecord = std::array<std::uint8_t, kFeatureCount>;
ByteRecord to_bytes(const FeatureVector& normalized);

/// 16x16x3 byte image. Pixel (row, col, channel) holds feature `col` of
/// record 16 * channel + row of the image's 48-record run.
struct ImageTensor {
  std::array<std::uint8_t, kImageBytes> pixels{};
  ClassLabel label = ClassLabel::Others;
  std::uint64_t first_seq_index = 0;

  static constexpr std::size_t offset(std::size_t row, std::size_t col, std::size_t channel) {
    return (row * kImageSide + col) * kImageChannels + channel;
  }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t channel) const {
    return pixels[offset(row, col, channel)];
  }

  friend bool operator==(const ImageTensor&, const ImageTensor&) = default;
};

/// Streaming image packer for one class stream.
class ImageBuilder {
 public:
  explicit ImageBuilder(ClassLabel label) : label_(label) {}

  /// Returns a finished image every 48th record.
  std::optional<ImageTensor> push(const ByteRecord& record, std::uint64_t seq_index);

  std::size_t pending() const { return filled_; }
  std::size_t emitted() const { return emitted_; }

 private:
  ClassLabel label_;
  ImageTensor current_;
  std::size_t filled_ = 0;
  std::size_t emitted_ = 0;
};

struct ImageBuildResult {
  std::vector<ImageTensor> images;
  std::size_t dropped_records = 0;
  std::optional<std::string> warning;
};

/// Packs a single-class stream of normalized records (features in [0, 1])
/// into floor(N / 48) images; the trailing partial run is dropped.
/// Throws DataError if the stream mixes classes.
ImageBuildResult build_images(std::span<const FlowRecord> normalized_stream);

/// Square input resolutions accepted by bilinear_resize. 16 is the native
/// size (no interpolation); 32, 71 and 75 are the backbone inputs.
bool is_supported_resolution(std::size_t side);

/// Float image of side x side x 3 with values in [0, 1], HWC order.
struct ResizedImage {
  std::size_t side = 0;
  std::vector<double> pixels;
  ClassLabel label = ClassLabel::Others;
  std::uint64_t first_seq_index = 0;

  double at(std::size_t row, std::size_t col, std::size_t channel) const {
    return pixels[(row * side + col) * kImageChannels + channel];
  }
};

/// Bilinear interpolation with half-pixel centers (align_corners = false),
/// each channel independently, then divided by 255. For output index o the
/// source coordinate is s = max(0, (o + 0.5) * 16 / side - 0.5), i0 = floor(s),
/// i1 = min(i0 + 1, 15), w = s - i0, and a pixel is
/// (1 - wy) * ((1 - wx) * p00 + wx * p01) + wy * ((1 - wx) * p10 + wx * p11).
/// Throws ConfigError for an unsupported side.
ResizedImage bilinear_resize(const ImageTensor& image, std::size_t side);

/// Number of validation images for a class with `images` images: the
/// chronologically last ceil(fraction * images), clamped to [1, images - 1];
/// zero when fewer than two images exist.
std::size_t validation_count(std::size_t images, double fraction);

}  // namespace iotids
