#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/codebook.hpp"
#include "msmil/features.hpp"
#include "msmil/random.hpp"

namespace msmil {

/// Bag-of-words strategies:
///   baseline  scale-1 rows only, one 512-d codebook, width k
///   MC        per-patch concatenation (1, 1/2, 1/4), one 1536-d codebook, width k
///   MA        all 3*nP rows pooled, one 512-d codebook, width k
///   MM        one 512-d codebook per scale, concatenated counts, width 3k
enum class Method { kBaseline, kMC, kMA, kMM };

std::string_view to_string(Method m);
std::optional<Method> parse_method(std::string_view s);
inline constexpr std::array<Method, 4> kMethods = {Method::kBaseline, Method::kMC,
                                                   Method::kMA, Method::kMM};

/// Histogram width for a method at codebook size k.
inline std::size_t histogram_width(Method m, std::size_t k) {
  return m == Method::kMM ? 3 * k : k;
}

struct AggregationModel {
  Method method = Method::kBaseline;
  std::size_t k = 0;
  /// One codebook, or three keyed by scale order for MM.
  std::vector<Codebook> codebooks;
};

/// L1-normalized bag-of-words for one slide.
struct BagHistogram {
  std::string slide_id;
  Label label = Label::kFN;
  Method method = Method::kBaseline;
  std::size_t k = 0;
  std::vector<double> values;
};

/// Row-wise concatenation of the three scales: nP x 1536.
Matrix concat_scales(const FeatureBag& bag);

/// Fits the method's codebook(s) on the training bags. MM uses seeds
/// seed, seed+1, seed+2 for scales 1, 1/2, 1/4.
AggregationModel fit_aggregator(Method method, std::span<const FeatureBag> training,
                                std::size_t k, const KMeansOptions& options);

BagHistogram histogram(const AggregationModel& model, const FeatureBag& bag,
                       std::size_t threads = 1);

inline constexpr std::size_t kAug1Copies = 8;

/// Eight uniform subsamples (without replacement) of floor(0.75 * nP) patch
/// triples. Each copy keeps the same rows across scales, in ascending order.
std::vector<FeatureBag> augment_aug1(const FeatureBag& bag, Rng& rng);

/// Row indices of the Aug1 copies, drawing from `rng` exactly as augment_aug1.
std::vector<std::vector<std::size_t>> aug1_subsets(std::size_t n_patches, const std::string& slide_id,
                                                   Rng& rng);

/// The bag's histogram followed by the histograms of its 8 Aug1 copies.
/// Equal to histogram() applied to the bag and to each augment_aug1 copy,
/// with every patch assigned only once.
std::vector<BagHistogram> histograms_with_aug1(const AggregationModel& model,
                                               const FeatureBag& bag, Rng& rng,
                                               std::size_t threads = 1);

/// CSV: slide_id,label,method,k,h0..h(w-1), values with 9 significant digits.
void write_histograms_csv(std::ostream& out, std::span<const BagHistogram> hists);
std::vector<BagHistogram> read_histograms_csv(std::istream& in);

}  // namespace msmil
