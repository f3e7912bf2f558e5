#include "msmil/aggregate.hpp"

#include <algorithm>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "msmil/error.hpp"

namespace msmil {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::kBaseline: return "baseline";
    case Method::kMC: return "MC";
    case Method::kMA: return "MA";
    case Method::kMM: return "MM";
  }
  return "?";
}

std::optional<Method> parse_method(std::string_view s) {
  for (Method m : kMethods) {
    std::string a(to_string(m)), b(s);
    std::transform(a.begin(), a.end(), a.begin(), ::tolower);
    std::transform(b.begin(), b.end(), b.begin(), ::tolower);
    if (a == b) return m;
  }
  return std::nullopt;
}

Matrix concat_scales(const FeatureBag& bag) {
  const std::size_t n = bag.n_patches();
  const std::size_t d = bag.per_scale[0].cols();
  Matrix out(n, 3 * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t s = 0; s < 3; ++s) {
      auto src = bag.per_scale[s].row(i);
      std::copy(src.begin(), src.end(), out.row(i).begin() + s * d);
    }
  return out;
}

namespace {

void append_rows(Matrix& dst, const Matrix& src) {
  for (std::size_t i = 0; i < src.rows(); ++i) dst.append_row(src.row(i));
}

Codebook fit_checked(Method method, const Matrix& rows, std::size_t k,
                     const KMeansOptions& options) {
  if (rows.rows() < k)
    throw SizeError(std::string(to_string(method)) + ": " +
                    std::to_string(rows.rows()) + " training vectors for k = " +
                    std::to_string(k));
  return fit_kmeans(rows, k, options);
}

}  // namespace

AggregationModel fit_aggregator(Method method, std::span<const FeatureBag> training,
                                std::size_t k, const KMeansOptions& options) {
  if (training.empty())
    throw SizeError(std::string(to_string(method)) + ": no training bags");
  for (const auto& bag : training) validate_bag(bag);

  AggregationModel model{method, k, {}};
  switch (method) {
    case Method::kBaseline: {
      Matrix rows;
      for (const auto& bag : training) append_rows(rows, bag.scale(Scale::kFull));
      model.codebooks.push_back(fit_checked(method, rows, k, options));
      break;
    }
    case Method::kMC: {
      Matrix rows;
      for (const auto& bag : training) append_rows(rows, concat_scales(bag));
      model.codebooks.push_back(fit_checked(method, rows, k, options));
      break;
    }
    case Method::kMA: {
      Matrix rows;
      for (const auto& bag : training)
        for (const Matrix& m : bag.per_scale) append_rows(rows, m);
      model.codebooks.push_back(fit_checked(method, rows, k, options));
      break;
    }
    case Method::kMM: {
      for (std::size_t s = 0; s < 3; ++s) {
        Matrix rows;
        for (const auto& bag : training) append_rows(rows, bag.per_scale[s]);
        KMeansOptions o = options;
        o.seed = options.seed + s;
        model.codebooks.push_back(fit_checked(method, rows, k, o));
      }
      break;
    }
  }
  return model;
}

namespace {

// Histogram slots hit by each patch: slots[p * per_patch + t].
struct PatchSlots {
  std::size_t per_patch = 0;
  std::vector<std::size_t> slots;
};

PatchSlots patch_slots(const AggregationModel& model, const FeatureBag& bag,
                       std::size_t threads) {
  const std::size_t n = bag.n_patches();
  PatchSlots ps;
  auto fill = [&](const Codebook& cb, const Matrix& rows, std::size_t t, std::size_t offset) {
    const auto a = assign_all(cb, rows, threads);
    for (std::size_t p = 0; p < n; ++p) ps.slots[p * ps.per_patch + t] = offset + a[p];
  };
  switch (model.method) {
    case Method::kBaseline:
      ps.per_patch = 1;
      ps.slots.resize(n);
      fill(model.codebooks.at(0), bag.scale(Scale::kFull), 0, 0);
      break;
    case Method::kMC:
      ps.per_patch = 1;
      ps.slots.resize(n);
      fill(model.codebooks.at(0), concat_scales(bag), 0, 0);
      break;
    case Method::kMA:
      ps.per_patch = 3;
      ps.slots.resize(3 * n);
      for (std::size_t s = 0; s < 3; ++s) fill(model.codebooks.at(0), bag.per_scale[s], s, 0);
      break;
    case Method::kMM:
      ps.per_patch = 3;
      ps.slots.resize(3 * n);
      for (std::size_t s = 0; s < 3; ++s)
        fill(model.codebooks.at(s), bag.per_scale[s], s, s * model.k);
      break;
  }
  return ps;
}

template <typename PatchRange>
BagHistogram normalized(const AggregationModel& model, const FeatureBag& bag,
                        const PatchSlots& ps, const PatchRange& patches) {
  BagHistogram h{bag.slide_id, bag.label, model.method, model.k,
                 std::vector<double>(histogram_width(model.method, model.k), 0.0)};
  std::vector<std::size_t> counts(h.values.size(), 0);
  std::size_t total = 0;
  for (std::size_t p : patches)
    for (std::size_t t = 0; t < ps.per_patch; ++t) {
      ++counts[ps.slots[p * ps.per_patch + t]];
      ++total;
    }
  if (total == 0) throw SizeError("histogram of an empty bag '" + bag.slide_id + "'");
  for (std::size_t i = 0; i < counts.size(); ++i)
    h.values[i] = static_cast<double>(counts[i]) / static_cast<double>(total);
  return h;
}

std::vector<std::size_t> all_patches(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

BagHistogram histogram(const AggregationModel& model, const FeatureBag& bag,
                       std::size_t threads) {
  validate_bag(bag);
  return normalized(model, bag, patch_slots(model, bag, threads), all_patches(bag.n_patches()));
}

std::vector<std::vector<std::size_t>> aug1_subsets(std::size_t n, const std::string& slide_id,
                                                   Rng& rng) {
  if (n < 4)
    throw SizeError("Aug1 needs at least 4 patches, bag '" + slide_id + "' has " +
                    std::to_string(n));
  const std::size_t keep = (3 * n) / 4;
  std::vector<std::vector<std::size_t>> out;
  out.reserve(kAug1Copies);
  for (std::size_t c = 0; c < kAug1Copies; ++c) {
    auto idx = rng.sample_without_replacement(n, keep);
    std::sort(idx.begin(), idx.end());
    out.push_back(std::move(idx));
  }
  return out;
}

std::vector<FeatureBag> augment_aug1(const FeatureBag& bag, Rng& rng) {
  std::vector<FeatureBag> out;
  out.reserve(kAug1Copies);
  for (const auto& idx : aug1_subsets(bag.n_patches(), bag.slide_id, rng))
    out.push_back(bag.subset(idx));
  return out;
}

std::vector<BagHistogram> histograms_with_aug1(const AggregationModel& model,
                                               const FeatureBag& bag, Rng& rng,
                                               std::size_t threads) {
  validate_bag(bag);
  const auto subsets = aug1_subsets(bag.n_patches(), bag.slide_id, rng);
  const PatchSlots ps = patch_slots(model, bag, threads);
  std::vector<BagHistogram> out;
  out.reserve(1 + kAug1Copies);
  out.push_back(normalized(model, bag, ps, all_patches(bag.n_patches())));
  for (const auto& idx : subsets) out.push_back(normalized(model, bag, ps, idx));
  return out;
}

void write_histograms_csv(std::ostream& out, std::span<const BagHistogram> hists) {
  std::size_t width = 0;
  for (const auto& h : hists) width = std::max(width, h.values.size());
  out << "slide_id,label,method,k";
  for (std::size_t i = 0; i < width; ++i) out << ",h" << i;
  out << '\n';
  char buf[32];
  for (const auto& h : hists) {
    out << h.slide_id << ',' << to_string(h.label) << ',' << to_string(h.method) << ',' << h.k;
    for (double v : h.values) {
      std::snprintf(buf, sizeof buf, "%.9g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
}

std::vector<BagHistogram> read_histograms_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("slide_id,label,method,k", 0) != 0)
    throw FormatError("histogram CSV lacks the expected header", 0);
  std::vector<BagHistogram> out;
  std::uint64_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const std::uint64_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 5) throw FormatError("histogram row has too few columns", at);
    BagHistogram h;
    h.slide_id = cells[0];
    auto label = parse_label(cells[1]);
    auto method = parse_method(cells[2]);
    if (!label || !method) throw FormatError("bad label or method in histogram row", at);
    h.label = *label;
    h.method = *method;
    try {
      h.k = std::stoul(cells[3]);
      for (std::size_t i = 4; i < cells.size(); ++i) h.values.push_back(std::stod(cells[i]));
    } catch (const std::exception&) {
      throw FormatError("unparsable number in histogram row", at);
    }
    if (h.values.size() != histogram_width(h.method, h.k))
      throw FormatError("histogram width " + std::to_string(h.values.size()) +
                            " does not match method and k", at);
    out.push_back(std::move(h));
  }
  return out;
}

}  // namespace msmil
