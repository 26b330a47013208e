#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string_view>

namespace iotids {

/// Target classes after label remapping. The numeric value is the class
/// index used by the model head and the confusion-matrix axes.
enum class ClassLabel : std::uint8_t { DDoS = 0, DoS = 1, Others = 2 };

inline constexpr std::size_t kNumClasses = 3;
inline constexpr std::array<ClassLabel, kNumClasses> kAllClasses = {
    ClassLabel::DDoS, ClassLabel::DoS, ClassLabel::Others};

constexpr std::size_t index_of(ClassLabel label) { return static_cast<std::size_t>(label); }

ClassLabel class_from_index(std::size_t index);

/// Display name: "DDoS", "DoS", "Others".
std::string_view to_string(ClassLabel label);

/// Lower-case key used in file names and configuration ("ddos", "dos", "others").
std::string_view to_key(ClassLabel label);

std::optional<ClassLabel> parse_class_key(std::string_view key);

/// Map a raw source-taxonomy label onto the three target classes.
/// Normal and Reconnaissance merge into Others; Theft/Stealing yields
/// std::nullopt (record excluded). Matching is case-insensitive.
/// Throws DataError for any other label.
std::optional<ClassLabel> map_label(std::string_view raw_label);

}  // namespace iotids
