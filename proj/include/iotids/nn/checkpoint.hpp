#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "iotids/binary_io.hpp"
#include "iotids/nn/tensor.hpp"

namespace iotids::nn {

/// Parameter checkpoint, little-endian:
///   char[4] "NNCK" | u32 version | u32 parameter count |
///   per parameter: u32 name length | name | u32 rank | u32 dims[rank] | f32 payload
inline constexpr std::array<char, 4> kCheckpointMagic = {'N', 'N', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, const std::vector<const Parameter<Scalar>*>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError(fmt::format("cannot write checkpoint '{}'", path.string()));
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p->value.rank()));
    for (Index d : p->value.shape()) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    for (Index i = 0; i < p->value.size(); ++i) {
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(static_cast<float>(p->value[i])));
    }
  }
  if (!out) throw DataError(fmt::format("failed writing checkpoint '{}'", path.string()));
}

/// Loads values into existing parameters. Every name and shape must match
/// the model, in order; throws DataError otherwise and leaves the
/// parameters untouched.
template <typename Scalar>
void load_checkpoint(const std::filesystem::path& path, const std::vector<Parameter<Scalar>*>& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(fmt::format("cannot open checkpoint '{}'", path.string()));
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) throw DataError(fmt::format("'{}' is not a checkpoint", path.string()));
  const auto version = get_le<std::uint32_t>(in, "checkpoint");
  if (version != kCheckpointVersion) {
    throw DataError(fmt::format("checkpoint '{}' has version {}, expected {}", path.string(), version,
                                kCheckpointVersion));
  }
  const auto count = get_le<std::uint32_t>(in, "checkpoint");
  if (count != params.size()) {
    throw DataError(fmt::format("checkpoint '{}' has {} parameters, model has {}", path.string(), count,
                                params.size()));
  }
  std::vector<Vector<Scalar>> values;
  values.reserve(count);
  for (const auto* p : params) {
    const auto name_length = get_le<std::uint32_t>(in, "checkpoint");
    if (name_length > 4096) throw DataError("checkpoint parameter name too long");
    std::string name(name_length, '\0');
    in.read(name.data(), name_length);
    if (!in) throw DataError("truncated checkpoint");
    const auto rank = get_le<std::uint32_t>(in, "checkpoint");
    if (rank > 8) throw DataError(fmt::format("checkpoint parameter '{}' has rank {}", name, rank));
    Shape shape(rank);
    for (auto& d : shape) d = get_le<std::uint32_t>(in, "checkpoint");
    if (name != p->name || shape != p->value.shape()) {
      throw DataError(fmt::format("checkpoint parameter '{}' {} does not match model parameter '{}' {}", name,
                                  shape_string(shape), p->name, shape_string(p->value.shape())));
    }
    Vector<Scalar> v(p->value.size());
    for (Index i = 0; i < v.size(); ++i) {
      v[i] = static_cast<Scalar>(std::bit_cast<float>(get_le<std::uint32_t>(in, "checkpoint")));
    }
    values.push_back(std::move(v));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw DataError(fmt::format("trailing bytes in checkpoint '{}'", path.string()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i]->value.data() = std::move(values[i]);
}

}  // namespace iotids::nn
