#include "iotids/image_store.hpp"

#include <array>
#include <cstring>
#include <string>

#include <fmt/core.h>

#include "iotids/binary_io.hpp"
#include "iotids/error.hpp"

namespace iotids {

namespace {

constexpr std::array<char, 4> kMagic = {'I', 'M', 'G', 'S'};

void write_header(std::ostream& out, const ImageSetHeader& h) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, h.version);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(index_of(h.label)));
  put_le<std::uint64_t>(out, h.count);
  put_le<std::uint32_t>(out, h.height);
  put_le<std::uint32_t>(out, h.width);
  put_le<std::uint32_t>(out, h.channels);
}

ImageSetHeader parse_header(std::istream& in, const std::filesystem::path& path) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError(fmt::format("'{}' is not an image set (bad magic)", path.string()));
  ImageSetHeader h;
  h.version = get_le<std::uint32_t>(in, "image set header");
  if (h.version != kImageSetVersion) {
    throw DataError(fmt::format("'{}' has image set version {}, expected {}", path.string(), h.version,
                                kImageSetVersion));
  }
  h.label = class_from_index(get_le<std::uint32_t>(in, "image set header"));
  h.count = get_le<std::uint64_t>(in, "image set header");
  h.height = get_le<std::uint32_t>(in, "image set header");
  h.width = get_le<std::uint32_t>(in, "image set header");
  h.channels = get_le<std::uint32_t>(in, "image set header");
  if (h.height != kImageSide || h.width != kImageSide || h.channels != kImageChannels) {
    throw DataError(fmt::format("'{}' holds {}x{}x{} images, expected {}x{}x{}", path.string(), h.height, h.width,
                                h.channels, kImageSide, kImageSide, kImageChannels));
  }
  return h;
}

}  // namespace

std::filesystem::path image_set_path(const std::filesystem::path& dir, ClassLabel label) {
  return dir / (std::string(to_key(label)) + ".img");
}

std::filesystem::path image_index_path(const std::filesystem::path& image_file) {
  auto p = image_file;
  p.replace_extension(".idx");
  return p;
}

ImageSetWriter::ImageSetWriter(const std::filesystem::path& path, ClassLabel label)
    : path_(path), label_(label), data_(path, std::ios::binary | std::ios::trunc),
      index_(image_index_path(path), std::ios::trunc) {
  if (!data_ || !index_) throw DataError(fmt::format("cannot create image set '{}'", path.string()));
  ImageSetHeader h;
  h.label = label;
  write_header(data_, h);
}

ImageSetWriter::~ImageSetWriter() {
  if (!closed_) {
    try {
      close();
    } catch (...) {
    }
  }
}

void ImageSetWriter::append(const ImageTensor& image) {
  if (image.label != label_) throw DataError("image label differs from the image set label");
  data_.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  index_ << image.first_seq_index << '\n';
  ++count_;
}

void ImageSetWriter::close() {
  if (closed_) return;
  closed_ = true;
  data_.seekp(0);
  ImageSetHeader h;
  h.label = label_;
  h.count = count_;
  write_header(data_, h);
  data_.close();
  index_.close();
  if (!data_ || !index_) throw DataError(fmt::format("failed writing image set '{}'", path_.string()));
}

void write_image_set(const std::filesystem::path& path, ClassLabel label, std::span<const ImageTensor> images) {
  ImageSetWriter writer(path, label);
  for (const auto& image : images) writer.append(image);
  writer.close();
}

ImageSetHeader read_image_set_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open image set '{}'", path.string()));
  return parse_header(in, path);
}

std::vector<ImageTensor> read_image_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open image set '{}'", path.string()));
  const ImageSetHeader h = parse_header(in, path);
  std::ifstream index(image_index_path(path));
  if (!index) throw DataError(fmt::format("missing index file for '{}'", path.string()));

  std::vector<ImageTensor> images(h.count);
  for (auto& image : images) {
    in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!in) throw DataError(fmt::format("'{}' is truncated: header promises {} images", path.string(), h.count));
    image.label = h.label;
    if (!(index >> image.first_seq_index)) {
      throw DataError(fmt::format("index file for '{}' has fewer than {} entries", path.string(), h.count));
    }
  }
  return images;
}

}  // namespace iotids
