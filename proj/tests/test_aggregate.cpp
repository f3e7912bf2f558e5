#include <algorithm>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "msmil/aggregate.hpp"
#include "msmil/error.hpp"

using namespace msmil;

namespace {

// Row equal to `scale` times the j-th basis vector.
std::vector<float> basis_row(std::size_t j, float scale = 100.0f) {
  std::vector<float> r(kFeatureDim, 0.0f);
  r[j] = scale;
  return r;
}

Codebook basis_codebook(std::size_t k, std::size_t d = kFeatureDim) {
  Codebook cb;
  cb.centroids = Matrix(k, d);
  for (std::size_t j = 0; j < k; ++j) cb.centroids(j, j) = 100.0f;
  return cb;
}

// A bag whose rows at every scale sit exactly on the listed basis vectors.
FeatureBag bag_from_assignments(const std::array<std::vector<std::size_t>, 3>& a) {
  FeatureBag bag;
  bag.slide_id = "s";
  for (std::size_t s = 0; s < 3; ++s) {
    bag.per_scale[s] = Matrix(0, kFeatureDim);
    for (std::size_t j : a[s]) bag.per_scale[s].append_row(basis_row(j));
  }
  return bag;
}

FeatureBag random_bag(std::size_t n, Rng& rng, const std::string& id = "r",
                      Label label = Label::kFN) {
  FeatureBag bag;
  bag.slide_id = id;
  bag.label = label;
  for (auto& m : bag.per_scale) {
    m = Matrix(n, kFeatureDim);
    for (float& v : m.data()) v = static_cast<float>(rng.normal());
  }
  return bag;
}

std::vector<double> count_oracle(const Codebook& cb, const Matrix& rows) {
  std::vector<double> h(cb.centroids.rows(), 0.0);
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    std::size_t best = 0;
    long double best_d = -1;
    for (std::size_t j = 0; j < cb.centroids.rows(); ++j) {
      long double s = 0;
      for (std::size_t c = 0; c < rows.cols(); ++c) {
        const long double t = static_cast<long double>(rows(i, c)) - cb.centroids(j, c);
        s += t * t;
      }
      if (best_d < 0 || s < best_d) {
        best_d = s;
        best = j;
      }
    }
    h[best] += 1;
  }
  return h;
}

}  // namespace

TEST_CASE("method names and widths") {
  CHECK(to_string(Method::kMM) == "MM");
  CHECK(parse_method("mc") == Method::kMC);
  CHECK(parse_method("Baseline") == Method::kBaseline);
  CHECK_FALSE(parse_method("max").has_value());
  for (std::size_t k : {32u, 64u, 128u, 256u, 512u}) {
    CHECK(histogram_width(Method::kBaseline, k) == k);
    CHECK(histogram_width(Method::kMC, k) == k);
    CHECK(histogram_width(Method::kMA, k) == k);
    CHECK(histogram_width(Method::kMM, k) == 3 * k);
  }
}

TEST_CASE("baseline histogram of assignments 0,0,1,2 with k = 3") {
  AggregationModel m{Method::kBaseline, 3, {basis_codebook(3)}};
  const FeatureBag bag = bag_from_assignments({{{0, 0, 1, 2}, {2, 2, 2, 2}, {1, 1, 1, 1}}});
  const BagHistogram h = histogram(m, bag);
  CHECK(h.values == std::vector<double>{0.5, 0.25, 0.25});
}

TEST_CASE("MA pools all three scales") {
  AggregationModel m{Method::kMA, 3, {basis_codebook(3)}};
  const FeatureBag bag = bag_from_assignments({{{0, 0}, {1, 1}, {2, 0}}});
  const BagHistogram h = histogram(m, bag);
  CHECK(h.values[0] == doctest::Approx(0.5));
  CHECK(h.values[1] == doctest::Approx(1.0 / 3));
  CHECK(h.values[2] == doctest::Approx(1.0 / 6));
}

TEST_CASE("MM with every patch in cluster 0 at each scale") {
  AggregationModel m{Method::kMM, 2, {basis_codebook(2), basis_codebook(2), basis_codebook(2)}};
  const FeatureBag bag = bag_from_assignments({{{0, 0, 0}, {0, 0, 0}, {0, 0, 0}}});
  const BagHistogram h = histogram(m, bag);
  REQUIRE(h.values.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(h.values[i] == doctest::Approx(i % 2 == 0 ? 1.0 / 3 : 0.0));
}

TEST_CASE("MC uses concatenated rows against a 1536-d codebook") {
  Codebook cb;
  cb.centroids = Matrix(2, 3 * kFeatureDim);
  cb.centroids(0, 0) = 100.0f;               // scale-1 direction
  cb.centroids(1, kFeatureDim + 5) = 100.0f;  // scale-1/2 direction
  AggregationModel m{Method::kMC, 2, {cb}};
  FeatureBag bag = bag_from_assignments({{{0, 7, 7}, {1, 5, 5}, {3, 3, 3}}});
  const Matrix cat = concat_scales(bag);
  CHECK(cat.cols() == 3 * kFeatureDim);
  CHECK(cat(1, kFeatureDim + 5) == 100.0f);
  const BagHistogram h = histogram(m, bag);
  CHECK(h.values[0] == doctest::Approx(1.0 / 3));
  CHECK(h.values[1] == doctest::Approx(2.0 / 3));
}

TEST_CASE("histograms match a brute-force oracle and sum to one") {
  Rng rng(1);
  std::vector<FeatureBag> train;
  for (int i = 0; i < 4; ++i) train.push_back(random_bag(40, rng));
  const FeatureBag probe = random_bag(30, rng);
  for (Method method : kMethods) {
    const AggregationModel m = fit_aggregator(method, train, 8, {.seed = 5});
    const BagHistogram h = histogram(m, probe, 3);
    REQUIRE(h.values.size() == histogram_width(method, 8));
    CHECK(std::accumulate(h.values.begin(), h.values.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-12));
    std::vector<double> expected;
    if (method == Method::kBaseline) {
      expected = count_oracle(m.codebooks[0], probe.per_scale[0]);
    } else if (method == Method::kMC) {
      expected = count_oracle(m.codebooks[0], concat_scales(probe));
    } else if (method == Method::kMA) {
      expected.assign(8, 0.0);
      for (const Matrix& s : probe.per_scale) {
        const auto c = count_oracle(m.codebooks[0], s);
        for (std::size_t j = 0; j < 8; ++j) expected[j] += c[j];
      }
    } else {
      for (std::size_t s = 0; s < 3; ++s) {
        const auto c = count_oracle(m.codebooks[s], probe.per_scale[s]);
        expected.insert(expected.end(), c.begin(), c.end());
      }
    }
    const double total = std::accumulate(expected.begin(), expected.end(), 0.0);
    for (std::size_t j = 0; j < expected.size(); ++j)
      CHECK(h.values[j] == doctest::Approx(expected[j] / total).epsilon(1e-12));
  }
}

TEST_CASE("histograms are invariant to patch order and patch duplication") {
  Rng rng(2);
  std::vector<FeatureBag> train = {random_bag(60, rng)};
  const FeatureBag bag = random_bag(25, rng);
  std::vector<std::size_t> perm(25);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  std::vector<std::size_t> doubled;
  for (std::size_t i = 0; i < 25; ++i) doubled.insert(doubled.end(), {i, i});
  for (Method method : kMethods) {
    const AggregationModel m = fit_aggregator(method, train, 6, {.seed = 9});
    const auto base = histogram(m, bag).values;
    const auto permuted = histogram(m, bag.subset(perm)).values;
    const auto dup = histogram(m, bag.subset(doubled)).values;
    for (std::size_t j = 0; j < base.size(); ++j) {
      CHECK(permuted[j] == doctest::Approx(base[j]).epsilon(1e-12));
      CHECK(dup[j] == doctest::Approx(base[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("MM scale-1 block is one third of the baseline histogram with the same codebook") {
  Rng rng(3);
  std::vector<FeatureBag> train = {random_bag(50, rng), random_bag(50, rng)};
  const FeatureBag bag = random_bag(20, rng);
  const AggregationModel base = fit_aggregator(Method::kBaseline, train, 5, {.seed = 11});
  const AggregationModel mm = fit_aggregator(Method::kMM, train, 5, {.seed = 11});
  CHECK(mm.codebooks[0].centroids == base.codebooks[0].centroids);
  const auto hb = histogram(base, bag).values;
  const auto hm = histogram(mm, bag).values;
  for (std::size_t j = 0; j < 5; ++j) CHECK(3 * hm[j] == doctest::Approx(hb[j]).epsilon(1e-12));
}

TEST_CASE("fit_aggregator shapes, seeds and size errors") {
  Rng rng(4);
  std::vector<FeatureBag> train = {random_bag(25, rng), random_bag(25, rng)};
  const auto mc = fit_aggregator(Method::kMC, train, 50, {.seed = 1});
  CHECK(mc.codebooks.size() == 1);
  CHECK(mc.codebooks[0].centroids.cols() == 3 * kFeatureDim);
  const auto ma = fit_aggregator(Method::kMA, train, 150, {.seed = 1});
  CHECK(ma.codebooks[0].centroids.rows() == 150);
  const auto mm = fit_aggregator(Method::kMM, train, 50, {.seed = 7});
  REQUIRE(mm.codebooks.size() == 3);
  CHECK(mm.codebooks[0].train_seed == 7);
  CHECK(mm.codebooks[1].train_seed == 8);
  CHECK(mm.codebooks[2].train_seed == 9);
  // 50 training rows cannot support 51 clusters, MA has 150 rows.
  CHECK_THROWS_AS(fit_aggregator(Method::kBaseline, train, 51, {}), SizeError);
  CHECK_THROWS_AS(fit_aggregator(Method::kMC, train, 51, {}), SizeError);
  CHECK_THROWS_AS(fit_aggregator(Method::kMM, train, 51, {}), SizeError);
  CHECK_THROWS_AS(fit_aggregator(Method::kMA, train, 151, {}), SizeError);
  try {
    fit_aggregator(Method::kMC, train, 51, {});
  } catch (const SizeError& e) {
    CHECK(std::string(e.what()).find("MC") != std::string::npos);
  }
}

TEST_CASE("Aug1 copy count, sizes, sorted distinct rows shared across scales") {
  Rng data(5);
  for (std::size_t n : {100u, 4u, 7u}) {
    FeatureBag bag = random_bag(n, data);
    // Tag each row with its index so the chosen rows are recoverable.
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t i = 0; i < n; ++i) bag.per_scale[s](i, 0) = static_cast<float>(i);
    Rng rng(6);
    const auto copies = augment_aug1(bag, rng);
    REQUIRE(copies.size() == kAug1Copies);
    for (const auto& c : copies) {
      CHECK(c.n_patches() == (3 * n) / 4);
      CHECK(c.slide_id == bag.slide_id);
      std::vector<float> idx;
      for (std::size_t i = 0; i < c.n_patches(); ++i) {
        idx.push_back(c.per_scale[0](i, 0));
        CHECK(c.per_scale[1](i, 0) == idx.back());
        CHECK(c.per_scale[2](i, 0) == idx.back());
      }
      CHECK(std::is_sorted(idx.begin(), idx.end()));
      CHECK(std::set<float>(idx.begin(), idx.end()).size() == idx.size());
    }
  }
  Rng rng(0);
  CHECK_THROWS_AS(augment_aug1(random_bag(3, data), rng), SizeError);
}

TEST_CASE("Aug1 copies are identically distributed over rows") {
  Rng data(7);
  FeatureBag bag = random_bag(8, data);
  for (std::size_t i = 0; i < 8; ++i) bag.per_scale[0](i, 0) = static_cast<float>(i);
  std::vector<double> hits(8, 0.0);
  Rng rng(8);
  const int trials = 2000;
  for (int t = 0; t < trials; ++t)
    for (const auto& c : augment_aug1(bag, rng))
      for (std::size_t i = 0; i < c.n_patches(); ++i) hits[static_cast<std::size_t>(c.per_scale[0](i, 0))] += 1;
  // Each row is kept with probability 6/8.
  const double expected = trials * kAug1Copies * 0.75;
  for (double h : hits) CHECK(std::abs(h - expected) < 5 * std::sqrt(expected * 0.25));
}

TEST_CASE("histograms_with_aug1 equals per-copy histograms of augment_aug1") {
  Rng data(9);
  std::vector<FeatureBag> train = {random_bag(40, data), random_bag(40, data)};
  const FeatureBag bag = random_bag(23, data, "slide-a", Label::kPC);
  for (Method method : kMethods) {
    const AggregationModel m = fit_aggregator(method, train, 6, {.seed = 3});
    Rng a(12), b(12);
    const auto fast = histograms_with_aug1(m, bag, a, 2);
    std::vector<BagHistogram> slow = {histogram(m, bag)};
    for (const FeatureBag& c : augment_aug1(bag, b)) slow.push_back(histogram(m, c));
    REQUIRE(fast.size() == 1 + kAug1Copies);
    REQUIRE(slow.size() == fast.size());
    for (std::size_t i = 0; i < fast.size(); ++i) {
      CHECK(fast[i].slide_id == "slide-a");
      CHECK(fast[i].label == Label::kPC);
      CHECK(fast[i].values == slow[i].values);
    }
    CHECK(a.next_u64() == b.next_u64());
  }
}

TEST_CASE("histogram CSV round trip") {
  std::vector<BagHistogram> hs = {
      {"a", Label::kPC, Method::kMM, 2, {0.125, 0.2, 0.3, 0.1, 0.275, 0.0}},
      {"b", Label::kFN, Method::kMM, 2, {1.0 / 3, 0, 1.0 / 3, 0, 1.0 / 3, 0}},
  };
  std::ostringstream out;
  write_histograms_csv(out, hs);
  const std::string text = out.str();
  CHECK(text.rfind("slide_id,label,method,k,h0,h1,h2,h3,h4,h5\n", 0) == 0);
  std::istringstream in(text);
  const auto back = read_histograms_csv(in);
  REQUIRE(back.size() == 2);
  CHECK(back[0].slide_id == "a");
  CHECK(back[0].label == Label::kPC);
  CHECK(back[1].method == Method::kMM);
  CHECK(back[1].values[0] == doctest::Approx(1.0 / 3).epsilon(1e-9));
  std::istringstream bad("slide_id,label,method,k,h0\nx,PC,baseline,2,0.5\n");
  CHECK_THROWS(read_histograms_csv(bad));
}
