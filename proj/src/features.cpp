#include "msmil/features.hpp"

#include <cmath>
#include <random>

#include "msmil/error.hpp"
#include "msmil/parallel.hpp"

namespace msmil {

FeatureBag FeatureBag::subset(std::span<const std::size_t> rows) const {
  FeatureBag out{slide_id, label, {}};
  for (std::size_t s = 0; s < 3; ++s) out.per_scale[s] = per_scale[s].select_rows(rows);
  return out;
}

void validate_bag(const FeatureBag& bag) {
  const std::size_t n = bag.per_scale[0].rows();
  for (std::size_t s = 0; s < 3; ++s) {
    const Matrix& m = bag.per_scale[s];
    if (m.rows() != n || (n > 0 && m.cols() != kFeatureDim))
      throw DimensionError("bag '" + bag.slide_id + "' scale " +
                           std::to_string(s) + " is " + std::to_string(m.rows()) +
                           "x" + std::to_string(m.cols()) + ", expected " +
                           std::to_string(n) + "x512");
  }
}

FeatureBag extract_features(const FeatureBackend& backend,
                            const std::vector<PatchTriple>& triples,
                            std::string slide_id, Label label,
                            std::size_t threads) {
  if (triples.empty()) throw SizeError("extract_features: no patch triples");
  FeatureBag bag{std::move(slide_id), label, {}};
  for (auto& m : bag.per_scale) m = Matrix(triples.size(), kFeatureDim);

  parallel_for(triples.size(), threads, [&](std::size_t i) {
    for (std::size_t s = 0; s < 3; ++s) {
      std::vector<float> v;
      try {
        v = backend.embed(triples[i].pixels[s]);
      } catch (const std::exception& e) {
        throw BackendError(std::string("feature backend failed: ") + e.what(), i);
      }
      if (v.size() != kFeatureDim)
        throw BackendError("backend returned " + std::to_string(v.size()) +
                               " values instead of 512", i);
      for (float x : v)
        if (!std::isfinite(x)) throw BackendError("backend returned a non-finite value", i);
      std::copy(v.begin(), v.end(), bag.per_scale[s].row(i).begin());
    }
  });
  return bag;
}

TestBackend::TestBackend(std::uint64_t seed, int grid) : seed_(seed), grid_(grid) {
  if (grid <= 0 || kPatchSize % grid != 0)
    throw std::invalid_argument("TestBackend: grid must divide 256");
  const std::size_t stats = static_cast<std::size_t>(6 * grid * grid);
  std::mt19937_64 engine(seed);
  auto draw = [&] {
    return 2.0 * (static_cast<double>(engine() >> 11) * 0x1.0p-53) - 1.0;
  };
  bias_.resize(kFeatureDim);
  for (double& b : bias_) b = draw();
  weights_.resize(kFeatureDim * stats);
  for (double& w : weights_) w = draw();
}

std::vector<double> TestBackend::cell_statistics(const PatchPixels& patch) const {
  const int cell = kPatchSize / grid_;
  const double count = static_cast<double>(cell) * cell;
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(6 * grid_ * grid_));
  for (int cy = 0; cy < grid_; ++cy) {
    for (int cx = 0; cx < grid_; ++cx) {
      for (int c = 0; c < 3; ++c) {
        std::uint64_t sum = 0, sum_sq = 0;
        for (int y = cy * cell; y < (cy + 1) * cell; ++y)
          for (int x = cx * cell; x < (cx + 1) * cell; ++x) {
            const std::uint64_t v = patch.at(x, y, c);
            sum += v;
            sum_sq += v * v;
          }
        const double mean = static_cast<double>(sum) / count;
        // Integer moments keep the variance exact up to one final rounding.
        const double var =
            (static_cast<double>(sum_sq) * count - static_cast<double>(sum) * static_cast<double>(sum)) /
            (count * count);
        stats.push_back(mean / 255.0);
        stats.push_back(var / (255.0 * 255.0));
      }
    }
  }
  return stats;
}

std::vector<float> TestBackend::embed(const PatchPixels& patch) const {
  const std::vector<double> s = cell_statistics(patch);
  std::vector<float> out(kFeatureDim);
  for (std::size_t j = 0; j < kFeatureDim; ++j) {
    double acc = bias_[j];
    const double* w = &weights_[j * s.size()];
    for (std::size_t i = 0; i < s.size(); ++i) acc += w[i] * s[i];
    out[j] = static_cast<float>(acc);
  }
  return out;
}

std::string TestBackend::describe() const {
  return "test-backend(seed=" + std::to_string(seed_) + ",grid=" + std::to_string(grid_) + ")";
}

}  // namespace msmil
