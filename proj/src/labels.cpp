#include "iotids/labels.hpp"

#include <algorithm>
#include <cctype>
#include <string>

#include <fmt/core.h>

#include "iotids/error.hpp"

namespace iotids {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

}  // namespace

ClassLabel class_from_index(std::size_t index) {
  if (index >= kNumClasses) throw DataError(fmt::format("class index {} out of range", index));
  return kAllClasses[index];
}

std::string_view to_string(ClassLabel label) {
  switch (label) {
    case ClassLabel::DDoS: return "DDoS";
    case ClassLabel::DoS: return "DoS";
    case ClassLabel::Others: return "Others";
  }
  return "?";
}

std::string_view to_key(ClassLabel label) {
  switch (label) {
    case ClassLabel::DDoS: return "ddos";
    case ClassLabel::DoS: return "dos";
    case ClassLabel::Others: return "others";
  }
  return "?";
}

std::optional<ClassLabel> parse_class_key(std::string_view key) {
  for (ClassLabel c : kAllClasses) {
    if (iequals(key, to_key(c))) return c;
  }
  return std::nullopt;
}

std::optional<ClassLabel> map_label(std::string_view raw_label) {
  const std::string_view label = trim(raw_label);
  if (iequals(label, "DDoS")) return ClassLabel::DDoS;
  if (iequals(label, "DoS")) return ClassLabel::DoS;
  if (iequals(label, "Normal") || iequals(label, "Reconnaissance")) return ClassLabel::Others;
  if (iequals(label, "Theft") || iequals(label, "Stealing")) return std::nullopt;
  throw DataError(fmt::format("unknown class label '{}'", std::string(raw_label)));
}

}  // namespace iotids
