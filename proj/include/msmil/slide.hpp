#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msmil/random.hpp"
#include "msmil/types.hpp"

namespace msmil {

/// Immutable 8-bit RGB raster addressed by (x, y), interleaved row-major.
class SlideImage {
 public:
  SlideImage(std::string id, int width, int height, std::vector<std::uint8_t> rgb,
             std::optional<Label> label = std::nullopt);

  /// Constant-color synthetic slide.
  static SlideImage solid(std::string id, int width, int height, std::uint8_t r,
                          std::uint8_t g, std::uint8_t b,
                          std::optional<Label> label = std::nullopt);

  const std::string& id() const noexcept { return id_; }
  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  const std::optional<Label>& label() const noexcept { return label_; }

  std::uint8_t at(int x, int y, int channel) const {
    return rgb_[(static_cast<std::size_t>(y) * width_ + x) * 3 + channel];
  }
  const std::vector<std::uint8_t>& rgb() const noexcept { return rgb_; }

 private:
  std::string id_;
  int width_;
  int height_;
  std::vector<std::uint8_t> rgb_;
  std::optional<Label> label_;
};

/// Reads an 8-bit RGB PNG or TIFF. The slide id defaults to the file stem.
SlideImage load_slide(const std::filesystem::path& path,
                      std::optional<Label> label = std::nullopt,
                      std::string id = {});

/// A 256x256 RGB block, interleaved row-major.
struct PatchPixels {
  std::vector<std::uint8_t> rgb =
      std::vector<std::uint8_t>(kPatchSize * kPatchSize * 3, 0);

  std::uint8_t at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * kPatchSize + x) * 3 + c];
  }
  std::uint8_t& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * kPatchSize + x) * 3 + c];
  }
  friend bool operator==(const PatchPixels&, const PatchPixels&) = default;
};

struct Point {
  std::int64_t x = 0;
  std::int64_t y = 0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Square source region at full resolution; extent = 256 * divisor(scale).
struct PatchSpec {
  std::int64_t origin_x = 0;
  std::int64_t origin_y = 0;
  std::int64_t extent = kPatchSize;
  Scale scale = Scale::kFull;

  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

/// Co-located patches at scales 1, 1/2, 1/4 (in that order).
struct PatchTriple {
  std::array<PatchSpec, 3> specs;
  std::array<PatchPixels, 3> pixels;
};

/// Uniform origin with x in [0, width-256] and y in [0, height-256].
Point sample_origin(const SlideImage& slide, Rng& rng);

/// True iff the mean green value is strictly below 190.
bool tissue_check(const PatchPixels& patch);

inline constexpr int kTissueThreshold = 190;

/// Scale-1 spec at `origin` plus centered scale-1/2 and scale-1/4 specs.
/// A lower-scale spec that crosses a slide edge is moved toward the image
/// center in steps of extent/4, per axis, until it fits; a step that would
/// cross the opposite edge stops at that edge.
std::array<PatchSpec, 3> build_multiscale_specs(Point origin, std::int64_t width,
                                                std::int64_t height);

/// Area-average resample of the spec's region to 256x256, rounding each mean
/// half-to-even. Scale-1 patches are byte copies.
PatchPixels extract_patch(const SlideImage& slide, const PatchSpec& spec);

/// Rejection-samples `n_patches` triples whose scale-1 patch passes the
/// tissue check. max_attempts = 0 selects the default 1000 * n_patches.
std::vector<PatchTriple> sample_bag(const SlideImage& slide,
                                    std::size_t n_patches, Rng& rng,
                                    std::size_t max_attempts = 0);

/// CSV rows: slide_id,patch_index,scale,origin_x,origin_y,extent.
void write_bag_manifest_header(std::ostream& out);
void write_bag_manifest_rows(std::ostream& out, const std::string& slide_id,
                             const std::vector<PatchTriple>& triples);

/// PNG per patch, named <slideid>_<patchindex>_s<1|2|4>.png.
void write_patch_dump(const std::filesystem::path& dir,
                      const std::string& slide_id,
                      const std::vector<PatchTriple>& triples);

}  // namespace msmil
