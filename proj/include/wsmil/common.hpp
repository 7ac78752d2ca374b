#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wsmil {

enum class Label { negative = 0, positive = 1 };

inline std::string to_string(Label l) { return l == Label::positive ? "positive" : "negative"; }

inline Label parse_label(const std::string& s) {
  if (s == "positive") return Label::positive;
  if (s == "negative") return Label::negative;
  throw std::invalid_argument("unknown label '" + s + "'");
}

/// 64-bit FNV-1a; stable across platforms and runs, unlike std::hash.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// splitmix64 finalizer over (seed, tag): independent child seeds per bag/stage.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t z = seed ^ fnv1a(tag);
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace wsmil
