#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <vector>

#include "iotids/featurizer.hpp"

namespace iotids {

/// On-disk image set: one file per class. Little-endian header
///   char[4] magic "IMGS" | u32 version | u32 label | u64 count |
///   u32 height | u32 width | u32 channels
/// followed by `count` contiguous HWC byte tensors. A sibling ".idx" text
/// file holds one first_seq_index per line.
struct ImageSetHeader {
  std::uint32_t version = 1;
  ClassLabel label = ClassLabel::Others;
  std::uint64_t count = 0;
  std::uint32_t height = kImageSide;
  std::uint32_t width = kImageSide;
  std::uint32_t channels = kImageChannels;
};

inline constexpr std::uint32_t kImageSetVersion = 1;
inline constexpr std::size_t kImageSetHeaderBytes = 4 + 4 + 4 + 8 + 4 + 4 + 4;

std::filesystem::path image_set_path(const std::filesystem::path& dir, ClassLabel label);
std::filesystem::path image_index_path(const std::filesystem::path& image_file);

/// Appends images one at a time; the count in the header is patched on close().
class ImageSetWriter {
 public:
  ImageSetWriter(const std::filesystem::path& path, ClassLabel label);
  ~ImageSetWriter();
  ImageSetWriter(const ImageSetWriter&) = delete;
  ImageSetWriter& operator=(const ImageSetWriter&) = delete;

  void append(const ImageTensor& image);
  void close();
  std::uint64_t count() const { return count_; }

 private:
  std::filesystem::path path_;
  ClassLabel label_;
  std::ofstream data_;
  std::ofstream index_;
  std::uint64_t count_ = 0;
  bool closed_ = false;
};

void write_image_set(const std::filesystem::path& path, ClassLabel label, std::span<const ImageTensor> images);

/// Validates magic, version, and the 16x16x3 geometry; throws DataError otherwise.
ImageSetHeader read_image_set_header(const std::filesystem::path& path);
std::vector<ImageTensor> read_image_set(const std::filesystem::path& path);

}  // namespace iotids
