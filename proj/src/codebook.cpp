#include "msmil/codebook.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "msmil/binary_io.hpp"
#include "msmil/error.hpp"
#include "msmil/parallel.hpp"
#include "msmil/random.hpp"

namespace msmil {
namespace {

// Four fixed accumulators: vectorizes without reassociation flags and keeps
// the summation order independent of the build.
double squared_distance(const double* a, const double* b, std::size_t d) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  for (; i + 4 <= d; i += 4) {
    const double t0 = a[i] - b[i], t1 = a[i + 1] - b[i + 1];
    const double t2 = a[i + 2] - b[i + 2], t3 = a[i + 3] - b[i + 3];
    s0 += t0 * t0;
    s1 += t1 * t1;
    s2 += t2 * t2;
    s3 += t3 * t3;
  }
  for (; i < d; ++i) {
    const double t = a[i] - b[i];
    s0 += t * t;
  }
  return (s0 + s1) + (s2 + s3);
}

// Same summation as squared_distance, abandoned once the running total
// exceeds `bound`. Every addend is non-negative, so a partial total above the
// bound implies the full distance is above it too.
double bounded_squared_distance(const double* a, const double* b, std::size_t d,
                                double bound) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t i = 0;
  while (i + 4 <= d) {
    const std::size_t stop = std::min(d - d % 4, i + 64);
    for (; i < stop; i += 4) {
      const double t0 = a[i] - b[i], t1 = a[i + 1] - b[i + 1];
      const double t2 = a[i + 2] - b[i + 2], t3 = a[i + 3] - b[i + 3];
      s0 += t0 * t0;
      s1 += t1 * t1;
      s2 += t2 * t2;
      s3 += t3 * t3;
    }
    const double partial = (s0 + s1) + (s2 + s3);
    if (partial > bound) return partial;
  }
  for (; i < d; ++i) {
    const double t = a[i] - b[i];
    s0 += t * t;
  }
  return (s0 + s1) + (s2 + s3);
}

struct Fit {
  std::vector<double> centroids;  // k x d
  double inertia = 0.0;
  std::vector<double> trace;
};

std::vector<double> kmeans_plus_plus(const std::vector<double>& x, std::size_t n,
                                     std::size_t d, std::size_t k, Rng& rng) {
  std::vector<double> centers;
  centers.reserve(k * d);
  auto push = [&](std::size_t i) {
    centers.insert(centers.end(), x.begin() + i * d, x.begin() + (i + 1) * d);
  };
  push(static_cast<std::size_t>(rng.below(n)));
  std::vector<double> nearest(n);
  for (std::size_t i = 0; i < n; ++i)
    nearest[i] = squared_distance(&x[i * d], &centers[0], d);

  while (centers.size() < k * d) {
    double total = 0.0;
    for (double v : nearest) total += v;
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += nearest[i];
        if (acc > target && nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
      while (nearest[pick] == 0.0 && pick > 0) --pick;  // rounding at the tail
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    push(pick);
    const double* c = &centers[centers.size() - d];
    for (std::size_t i = 0; i < n; ++i)
      nearest[i] = std::min(nearest[i], squared_distance(&x[i * d], c, d));
  }
  return centers;
}

Fit lloyd(const std::vector<double>& x, std::size_t n, std::size_t d, std::size_t k,
          std::uint64_t seed, const KMeansOptions& opt) {
  Rng rng(seed);
  Fit fit;
  fit.centroids = kmeans_plus_plus(x, n, d, k, rng);

  std::vector<std::size_t> label(n);
  std::vector<double> dist(n);
  std::vector<double> means(k * d);
  std::vector<std::size_t> counts(k);

  for (std::size_t iter = 0; iter < std::max<std::size_t>(opt.max_iters, 1); ++iter) {
    parallel_for(n, opt.threads, [&](std::size_t i) {
      const double* xi = &x[i * d];
      std::size_t best = iter == 0 ? 0 : label[i];
      double best_d = squared_distance(xi, &fit.centroids[best * d], d);
      for (std::size_t j = 0; j < k; ++j) {
        if (j == best) continue;
        const double dd = bounded_squared_distance(xi, &fit.centroids[j * d], d, best_d);
        if (dd < best_d || (dd == best_d && j < best)) {
          best_d = dd;
          best = j;
        }
      }
      label[i] = best;
      dist[i] = best_d;
    });

    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) ++counts[label[i]];
    for (std::size_t j = 0; j < k; ++j) {
      if (counts[j] != 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i)
        if (counts[label[i]] > 1 && (far == n || dist[i] > dist[far])) far = i;
      --counts[label[far]];
      label[far] = j;
      dist[far] = 0.0;
      counts[j] = 1;
    }

    std::fill(means.begin(), means.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) means[label[i] * d + c] += x[i * d + c];
    for (std::size_t j = 0; j < k; ++j)
      for (std::size_t c = 0; c < d; ++c) means[j * d + c] /= static_cast<double>(counts[j]);

    parallel_for(n, opt.threads, [&](std::size_t i) {
      dist[i] = squared_distance(&x[i * d], &means[label[i] * d], d);
    });
    double inertia = 0.0;
    for (double v : dist) inertia += v;
    fit.trace.push_back(inertia);

    double shift = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      shift = std::max(shift, std::sqrt(squared_distance(&means[j * d], &fit.centroids[j * d], d)));
    fit.centroids.swap(means);
    fit.inertia = inertia;
    if (shift < opt.tol) break;
  }
  return fit;
}

}  // namespace

Codebook fit_kmeans(const Matrix& data, std::size_t k, const KMeansOptions& options) {
  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  if (k == 0) throw SizeError("k-means: k must be at least 1");
  if (n < k)
    throw SizeError("k-means: " + std::to_string(n) + " points cannot fill " +
                    std::to_string(k) + " clusters");
  std::vector<double> x(data.data().begin(), data.data().end());
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i]))
      throw DataError("k-means: non-finite value in row " + std::to_string(i / d));

  Fit best;
  for (std::size_t r = 0; r < std::max<std::size_t>(options.restarts, 1); ++r) {
    const std::uint64_t seed = r == 0 ? options.seed : derive_seed(options.seed, r);
    Fit f = lloyd(x, n, d, k, seed, options);
    if (r == 0 || f.inertia < best.inertia) best = std::move(f);
  }

  Codebook cb;
  cb.centroids = Matrix(k, d);
  for (std::size_t i = 0; i < k * d; ++i)
    cb.centroids.data()[i] = static_cast<float>(best.centroids[i]);
  cb.train_seed = options.seed;
  cb.inertia = best.inertia;
  cb.inertia_trace = std::move(best.trace);
  return cb;
}

std::size_t assign(const Codebook& codebook, std::span<const float> v) {
  if (v.size() != codebook.dim())
    throw DimensionError("vector of dimension " + std::to_string(v.size()) +
                         " does not match codebook dimension " +
                         std::to_string(codebook.dim()));
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < codebook.k(); ++j) {
    auto c = codebook.centroids.row(j);
    double s = 0.0;
    for (std::size_t i = 0; i < v.size() && s <= best_d;) {
      const std::size_t stop = std::min(v.size(), i + 32);
      for (; i < stop; ++i) {
        const double t = static_cast<double>(v[i]) - static_cast<double>(c[i]);
        s += t * t;
      }
    }
    if (s < best_d) {
      best_d = s;
      best = j;
    }
  }
  return best;
}

std::vector<std::size_t> assign_all(const Codebook& codebook, const Matrix& rows,
                                    std::size_t threads) {
  if (rows.rows() > 0 && rows.cols() != codebook.dim())
    throw DimensionError("rows of dimension " + std::to_string(rows.cols()) +
                         " do not match codebook dimension " +
                         std::to_string(codebook.dim()));
  std::vector<std::size_t> out(rows.rows());
  parallel_for(rows.rows(), threads, [&](std::size_t i) { out[i] = assign(codebook, rows.row(i)); });
  return out;
}

std::string encode_codebook(const Codebook& cb) {
  ByteWriter w;
  w.bytes("MSKB");
  w.u16(kCodebookVersion);
  w.u32(static_cast<std::uint32_t>(cb.k()));
  w.u32(static_cast<std::uint32_t>(cb.dim()));
  w.u64(cb.train_seed);
  for (float v : cb.centroids.data()) w.f32(v);
  return w.buffer();
}

Codebook decode_codebook(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("MSKB");
  const auto at = r.offset();
  if (r.u16("version") != kCodebookVersion)
    throw FormatError("unsupported codebook version", at);
  const std::uint32_t k = r.u32("k");
  const std::uint32_t d = r.u32("d");
  if (k == 0 || d == 0) throw FormatError("empty codebook", r.offset());
  Codebook cb;
  cb.train_seed = r.u64("seed");
  r.require(static_cast<std::uint64_t>(k) * d * sizeof(float), "centroids");
  std::vector<float> values(static_cast<std::size_t>(k) * d);
  for (float& v : values) {
    const auto vat = r.offset();
    v = r.f32("centroid value");
    if (!std::isfinite(v)) throw FormatError("non-finite centroid value", vat);
  }
  if (!r.at_end()) throw FormatError("trailing bytes after codebook", r.offset());
  cb.centroids = Matrix(k, d, std::move(values));
  return cb;
}

void write_codebook(const std::filesystem::path& path, const Codebook& cb) {
  write_file(path.string(), encode_codebook(cb));
}

Codebook read_codebook(const std::filesystem::path& path) {
  return decode_codebook(read_file(path.string()));
}

}  // namespace msmil
