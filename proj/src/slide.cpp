#include "msmil/slide.hpp"

#include <algorithm>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "msmil/error.hpp"

namespace msmil {

std::optional<Label> parse_label(std::string_view s) {
  if (s == "FN" || s == "fn" || s == "0") return Label::kFN;
  if (s == "PC" || s == "pc" || s == "1") return Label::kPC;
  return std::nullopt;
}

SlideImage::SlideImage(std::string id, int width, int height,
                       std::vector<std::uint8_t> rgb, std::optional<Label> label)
    : id_(std::move(id)), width_(width), height_(height), rgb_(std::move(rgb)),
      label_(label) {
  if (width_ <= 0 || height_ <= 0)
    throw DimensionError("slide '" + id_ + "' has non-positive dimensions");
  if (rgb_.size() != static_cast<std::size_t>(width_) * height_ * 3)
    throw DimensionError("slide '" + id_ + "' pixel buffer size mismatch");
}

SlideImage SlideImage::solid(std::string id, int width, int height,
                             std::uint8_t r, std::uint8_t g, std::uint8_t b,
                             std::optional<Label> label) {
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
  return SlideImage(std::move(id), width, height, std::move(rgb), label);
}

SlideImage load_slide(const std::filesystem::path& path,
                      std::optional<Label> label, std::string id) {
  if (!std::ifstream(path)) throw DataError("cannot read slide '" + path.string() + "'");
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty())
    throw DataError("unsupported or corrupt raster '" + path.string() + "'");
  if (bgr.depth() != CV_8U)
    throw DataError("raster '" + path.string() + "' is not 8 bits per channel");
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  if (!rgb.isContinuous()) rgb = rgb.clone();
  std::vector<std::uint8_t> buf(rgb.datastart, rgb.dataend);
  if (id.empty()) id = path.stem().string();
  return SlideImage(std::move(id), rgb.cols, rgb.rows, std::move(buf), label);
}

Point sample_origin(const SlideImage& slide, Rng& rng) {
  if (slide.width() < kPatchSize || slide.height() < kPatchSize)
    throw DimensionError("slide '" + slide.id() + "' is smaller than 256x256");
  return {rng.between(0, slide.width() - kPatchSize),
          rng.between(0, slide.height() - kPatchSize)};
}

bool tissue_check(const PatchPixels& patch) {
  std::uint64_t green = 0;
  for (std::size_t i = 1; i < patch.rgb.size(); i += 3) green += patch.rgb[i];
  // mean < 190  <=>  sum < 190 * pixel count, exact in integers.
  return green < static_cast<std::uint64_t>(kTissueThreshold) * kPatchSize *
                     kPatchSize;
}

namespace {

std::int64_t place_on_axis(std::int64_t start, std::int64_t extent,
                           std::int64_t dim) {
  const std::int64_t step = extent / 4;
  while (start < 0 || start + extent > dim) {
    if (start < 0)
      start = std::min(start + step, dim - extent);
    else
      start = std::max(start - step, std::int64_t{0});
  }
  return start;
}

}  // namespace

std::array<PatchSpec, 3> build_multiscale_specs(Point origin, std::int64_t width,
                                                std::int64_t height) {
  const std::int64_t largest = kPatchSize * divisor(Scale::kQuarter);
  if (width < largest || height < largest)
    throw DimensionError("slide " + std::to_string(width) + "x" +
                         std::to_string(height) +
                         " cannot hold a 1024-pixel scale-1/4 region");
  if (origin.x < 0 || origin.y < 0 || origin.x + kPatchSize > width ||
      origin.y + kPatchSize > height)
    throw GeometryError("scale-1 origin (" + std::to_string(origin.x) + ", " +
                        std::to_string(origin.y) + ") lies outside the slide");

  std::array<PatchSpec, 3> specs;
  for (Scale s : kScales) {
    const std::int64_t extent = kPatchSize * divisor(s);
    const std::int64_t offset = extent / 2 - kPatchSize / 2;
    specs[scale_index(s)] = PatchSpec{
        place_on_axis(origin.x - offset, extent, width),
        place_on_axis(origin.y - offset, extent, height), extent, s};
  }
  return specs;
}

PatchPixels extract_patch(const SlideImage& slide, const PatchSpec& spec) {
  const int factor = divisor(spec.scale);
  if (spec.extent != static_cast<std::int64_t>(kPatchSize) * factor)
    throw GeometryError("patch extent " + std::to_string(spec.extent) +
                        " does not match its scale");
  if (spec.origin_x < 0 || spec.origin_y < 0 ||
      spec.origin_x + spec.extent > slide.width() ||
      spec.origin_y + spec.extent > slide.height())
    throw GeometryError("patch region at (" + std::to_string(spec.origin_x) +
                        ", " + std::to_string(spec.origin_y) + ") extent " +
                        std::to_string(spec.extent) + " is outside slide '" +
                        slide.id() + "'");

  PatchPixels out;
  const auto x0 = static_cast<int>(spec.origin_x);
  const auto y0 = static_cast<int>(spec.origin_y);
  if (factor == 1) {
    const auto row_bytes = static_cast<std::size_t>(kPatchSize) * 3;
    for (int y = 0; y < kPatchSize; ++y) {
      const auto* src = &slide.rgb()[(static_cast<std::size_t>(y0 + y) *
                                          slide.width() + x0) * 3];
      std::copy(src, src + row_bytes, &out.rgb[y * row_bytes]);
    }
    return out;
  }

  const unsigned n = static_cast<unsigned>(factor * factor);
  for (int oy = 0; oy < kPatchSize; ++oy) {
    for (int ox = 0; ox < kPatchSize; ++ox) {
      for (int c = 0; c < 3; ++c) {
        unsigned sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx)
            sum += slide.at(x0 + ox * factor + dx, y0 + oy * factor + dy, c);
        unsigned q = sum / n;
        const unsigned twice_rem = 2 * (sum % n);
        if (twice_rem > n || (twice_rem == n && (q & 1u))) ++q;
        out.at(ox, oy, c) = static_cast<std::uint8_t>(q);
      }
    }
  }
  return out;
}

std::vector<PatchTriple> sample_bag(const SlideImage& slide,
                                    std::size_t n_patches, Rng& rng,
                                    std::size_t max_attempts) {
  if (n_patches == 0) throw SizeError("sample_bag: nP must be at least 1");
  if (max_attempts == 0) max_attempts = 1000 * n_patches;
  // Validate geometry once up front so undersized slides fail fast.
  build_multiscale_specs({0, 0}, slide.width(), slide.height());

  std::vector<PatchTriple> triples;
  triples.reserve(n_patches);
  std::size_t rejections = 0;
  while (triples.size() < n_patches) {
    const Point origin = sample_origin(slide, rng);
    const auto specs = build_multiscale_specs(origin, slide.width(), slide.height());
    PatchPixels full = extract_patch(slide, specs[0]);
    if (!tissue_check(full)) {
      if (++rejections >= max_attempts)
        throw TissueScarcityError(slide.id(), rejections);
      continue;
    }
    rejections = 0;
    PatchTriple t;
    t.specs = specs;
    t.pixels[0] = std::move(full);
    t.pixels[1] = extract_patch(slide, specs[1]);
    t.pixels[2] = extract_patch(slide, specs[2]);
    triples.push_back(std::move(t));
  }
  return triples;
}

void write_bag_manifest_header(std::ostream& out) {
  out << "slide_id,patch_index,scale,origin_x,origin_y,extent\n";
}

void write_bag_manifest_rows(std::ostream& out, const std::string& slide_id,
                             const std::vector<PatchTriple>& triples) {
  for (std::size_t i = 0; i < triples.size(); ++i)
    for (const PatchSpec& s : triples[i].specs)
      out << slide_id << ',' << i << ','
          << (s.scale == Scale::kFull ? "1" : s.scale == Scale::kHalf ? "1/2" : "1/4")
          << ',' << s.origin_x << ',' << s.origin_y << ',' << s.extent << '\n';
}

void write_patch_dump(const std::filesystem::path& dir,
                      const std::string& slide_id,
                      const std::vector<PatchTriple>& triples) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < triples.size(); ++i) {
    for (std::size_t s = 0; s < 3; ++s) {
      const PatchPixels& p = triples[i].pixels[s];
      cv::Mat rgb(kPatchSize, kPatchSize, CV_8UC3,
                  const_cast<std::uint8_t*>(p.rgb.data()));
      cv::Mat bgr;
      cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
      const auto name = slide_id + "_" + std::to_string(i) + "_s" +
                        std::to_string(divisor(kScales[s])) + ".png";
      if (!cv::imwrite((dir / name).string(), bgr))
        throw DataError("failed to write patch '" + (dir / name).string() + "'");
    }
  }
}

}  // namespace msmil
