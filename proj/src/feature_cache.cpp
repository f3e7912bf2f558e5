#include <cmath>
#include <limits>

#include "msmil/binary_io.hpp"
#include "msmil/error.hpp"
#include "msmil/features.hpp"

namespace msmil {

std::string encode_cache(const std::vector<FeatureBag>& bags) {
  ByteWriter w;
  w.bytes("MSML");
  w.u16(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(bags.size()));
  for (const FeatureBag& bag : bags) {
    validate_bag(bag);
    if (bag.slide_id.size() > std::numeric_limits<std::uint16_t>::max())
      throw DataError("slide id too long for the cache format");
    w.u16(static_cast<std::uint16_t>(bag.slide_id.size()));
    w.bytes(bag.slide_id);
    w.u8(static_cast<std::uint8_t>(bag.label));
    w.u32(static_cast<std::uint32_t>(bag.n_patches()));
    for (const Matrix& m : bag.per_scale)
      for (float v : m.data()) w.f32(v);
  }
  return w.buffer();
}

std::vector<FeatureBag> decode_cache(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("MSML");
  const auto version_at = r.offset();
  if (r.u16("version") != kCacheVersion)
    throw FormatError("unsupported feature cache version", version_at);
  const std::uint32_t count = r.u32("bag count");

  std::vector<FeatureBag> bags;
  for (std::uint32_t b = 0; b < count; ++b) {
    FeatureBag bag;
    const std::uint16_t id_len = r.u16("slide id length");
    bag.slide_id = r.bytes(id_len, "slide id");
    const auto label_at = r.offset();
    const std::uint8_t label = r.u8("label");
    if (label > 1) throw FormatError("invalid label byte " + std::to_string(label), label_at);
    bag.label = static_cast<Label>(label);
    const std::uint32_t n = r.u32("patch count");
    const std::uint64_t values = static_cast<std::uint64_t>(n) * kFeatureDim;
    r.require(values * 3 * sizeof(float), "feature matrices");
    for (Matrix& m : bag.per_scale) {
      std::vector<float> data(values);
      for (float& v : data) {
        const auto at = r.offset();
        v = r.f32("feature value");
        if (!std::isfinite(v)) throw FormatError("non-finite feature value", at);
      }
      m = Matrix(n, kFeatureDim, std::move(data));
    }
    bags.push_back(std::move(bag));
  }
  if (!r.at_end()) throw FormatError("trailing bytes after last bag", r.offset());
  return bags;
}

void write_cache(const std::filesystem::path& path, const std::vector<FeatureBag>& bags) {
  write_file(path.string(), encode_cache(bags));
}

std::vector<FeatureBag> read_cache(const std::filesystem::path& path) {
  return decode_cache(read_file(path.string()));
}

}  // namespace msmil
