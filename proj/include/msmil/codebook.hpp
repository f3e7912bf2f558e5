#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/matrix.hpp"

namespace msmil {

struct KMeansOptions {
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  double tol = 1e-4;          // on the largest centroid displacement
  std::size_t restarts = 1;   // best inertia wins
  std::size_t threads = 1;
};

/// k centroids of dimension d (stored as 32-bit floats) plus fit metadata.
struct Codebook {
  Matrix centroids;
  std::uint64_t train_seed = 0;
  /// Sum of squared distances from each training point to the mean of its
  /// final cluster, accumulated in double precision.
  double inertia = 0.0;
  /// Inertia after each Lloyd iteration of the winning restart.
  std::vector<double> inertia_trace;

  std::size_t k() const noexcept { return centroids.rows(); }
  std::size_t dim() const noexcept { return centroids.cols(); }
};

/// Lloyd's algorithm from a k-means++ start. Empty clusters take the point
/// farthest from its own centroid. Deterministic for a given seed and
/// independent of options.threads.
Codebook fit_kmeans(const Matrix& data, std::size_t k, const KMeansOptions& options);

/// Nearest centroid by Euclidean distance; ties go to the lowest index.
std::size_t assign(const Codebook& codebook, std::span<const float> v);

std::vector<std::size_t> assign_all(const Codebook& codebook, const Matrix& rows,
                                    std::size_t threads = 1);

inline constexpr std::uint16_t kCodebookVersion = 1;

std::string encode_codebook(const Codebook& codebook);
Codebook decode_codebook(std::string_view bytes);
void write_codebook(const std::filesystem::path& path, const Codebook& codebook);
Codebook read_codebook(const std::filesystem::path& path);

}  // namespace msmil
