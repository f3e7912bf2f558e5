#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/matrix.hpp"
#include "msmil/slide.hpp"
#include "msmil/types.hpp"

namespace msmil {

/// Per-slide features: one nP x 512 matrix per scale (order 1, 1/2, 1/4).
/// Row i of every matrix comes from the same patch triple.
struct FeatureBag {
  std::string slide_id;
  Label label = Label::kFN;
  std::array<Matrix, 3> per_scale;

  std::size_t n_patches() const noexcept { return per_scale[0].rows(); }
  const Matrix& scale(Scale s) const { return per_scale[scale_index(s)]; }

  /// Same rows of every scale, in the given order.
  FeatureBag subset(std::span<const std::size_t> rows) const;

  friend bool operator==(const FeatureBag&, const FeatureBag&) = default;
};

/// Throws DimensionError unless all scales are nP x 512 with equal nP.
void validate_bag(const FeatureBag& bag);

/// Maps one 256x256 patch to a 512-d vector. Implementations are pure
/// functions of the pixels and safe to call concurrently.
class FeatureBackend {
 public:
  virtual ~FeatureBackend() = default;
  virtual std::vector<float> embed(const PatchPixels& patch) const = 0;
  virtual std::string describe() const = 0;
};

/// Runs the backend over every patch of every triple. Row order equals
/// triple order. Failures are rethrown as BackendError with the triple index.
FeatureBag extract_features(const FeatureBackend& backend,
                            const std::vector<PatchTriple>& triples,
                            std::string slide_id, Label label,
                            std::size_t threads = 1);

/// Deterministic stand-in for a CNN.
///
/// The patch is split into a grid x grid array of square cells. For each cell
/// in row-major order and each channel R, G, B it records
///   mean / 255  and  population variance / 255^2,
/// giving S = 6 * grid^2 statistics s. The output is
///   v_j = b_j + sum_i W[j][i] * s_i,   j = 0..511,
/// evaluated in double and rounded to float. b and W are drawn from
/// std::mt19937_64(seed): first the 512 entries of b, then W row by row,
/// each as 2 * ((x >> 11) * 2^-53) - 1, i.e. uniform on [-1, 1).
class TestBackend final : public FeatureBackend {
 public:
  explicit TestBackend(std::uint64_t seed, int grid = 8);

  std::vector<float> embed(const PatchPixels& patch) const override;
  std::string describe() const override;

  /// The S statistics the projection is applied to.
  std::vector<double> cell_statistics(const PatchPixels& patch) const;

  int grid() const noexcept { return grid_; }

 private:
  std::uint64_t seed_;
  int grid_;
  std::vector<double> bias_;
  std::vector<double> weights_;  // 512 x S, row-major
};

/// Graph inputs and outputs read from an ONNX model. Unknown dims are -1.
struct OnnxTensorInfo {
  std::string name;
  std::vector<std::int64_t> dims;
};
struct OnnxModelInfo {
  std::vector<OnnxTensorInfo> inputs;  // initializers excluded
  std::vector<OnnxTensorInfo> outputs;
};
OnnxModelInfo read_onnx_model_info(std::string_view model_bytes);

/// Loads an ONNX network with one 3x224x224 or 3x256x256 input and a
/// 512-wide output. Patches are scaled to [0, 1] and normalized with the
/// ImageNet channel means (0.485, 0.456, 0.406) and deviations
/// (0.229, 0.224, 0.225). 224-input models receive the patch resized by area
/// averaging. Throws ModelShapeError on any arity or width mismatch.
std::unique_ptr<FeatureBackend> load_cnn_backend(
    const std::filesystem::path& model_file);

inline constexpr std::uint16_t kCacheVersion = 1;

/// Feature cache ("MSML"): see README for the byte layout.
std::string encode_cache(const std::vector<FeatureBag>& bags);
std::vector<FeatureBag> decode_cache(std::string_view bytes);
void write_cache(const std::filesystem::path& path,
                 const std::vector<FeatureBag>& bags);
std::vector<FeatureBag> read_cache(const std::filesystem::path& path);

}  // namespace msmil
