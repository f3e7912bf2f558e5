#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace msmil {

/// Slide-level ground truth. The SVM maps FN to -1 and PC to +1.
enum class Label : std::uint8_t { kFN = 0, kPC = 1 };

inline std::string_view to_string(Label l) { return l == Label::kFN ? "FN" : "PC"; }
std::optional<Label> parse_label(std::string_view s);

/// Patch scale, stored as the downsampling divisor (1, 2 or 4).
enum class Scale : int { kFull = 1, kHalf = 2, kQuarter = 4 };

inline constexpr std::array<Scale, 3> kScales = {Scale::kFull, Scale::kHalf,
                                                 Scale::kQuarter};
inline constexpr int divisor(Scale s) { return static_cast<int>(s); }
inline constexpr std::size_t scale_index(Scale s) {
  return s == Scale::kFull ? 0 : (s == Scale::kHalf ? 1 : 2);
}

inline constexpr int kPatchSize = 256;
inline constexpr std::size_t kFeatureDim = 512;

}  // namespace msmil
