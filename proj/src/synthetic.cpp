#include <cmath>
#include <cstdio>

#include "msmil/error.hpp"
#include "msmil/harness.hpp"

namespace msmil {
namespace {

struct ScaleModel {
  std::vector<double> basis;  // 512 x L, orthonormal columns
  std::vector<double> means;  // M x L
  std::vector<double> shifts; // M x L, unit rows
};

ScaleModel build_scale_model(const SyntheticSpec& spec, std::size_t scale) {
  const std::size_t D = kFeatureDim, L = spec.latent_dim, M = spec.components;
  Rng rng(derive_seed(spec.seed, 1000 + scale));
  ScaleModel model;
  model.basis.resize(D * L);
  for (double& v : model.basis) v = rng.normal();
  // Modified Gram-Schmidt on the columns.
  for (std::size_t c = 0; c < L; ++c) {
    for (std::size_t p = 0; p < c; ++p) {
      double dot = 0.0;
      for (std::size_t r = 0; r < D; ++r) dot += model.basis[r * L + c] * model.basis[r * L + p];
      for (std::size_t r = 0; r < D; ++r) model.basis[r * L + c] -= dot * model.basis[r * L + p];
    }
    double norm = 0.0;
    for (std::size_t r = 0; r < D; ++r) norm += model.basis[r * L + c] * model.basis[r * L + c];
    norm = std::sqrt(norm);
    for (std::size_t r = 0; r < D; ++r) model.basis[r * L + c] /= norm;
  }
  model.means.resize(M * L);
  for (double& v : model.means) v = spec.component_spread * spec.sigma * rng.normal();
  model.shifts.resize(M * L);
  for (std::size_t m = 0; m < M; ++m) {
    double norm = 0.0;
    for (std::size_t l = 0; l < L; ++l) {
      const double v = rng.normal();
      model.shifts[m * L + l] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (std::size_t l = 0; l < L; ++l) model.shifts[m * L + l] /= norm;
  }
  return model;
}

bool shifted(const SyntheticSpec& spec, std::size_t scale, Label label, std::size_t m) {
  const ScaleSignal& s = spec.scales[scale];
  if (!s.signal || label != Label::kPC) return false;
  return s.informative_components == 0 || m < s.informative_components;
}

std::vector<double> latent_mean(const SyntheticSpec& spec, const ScaleModel& model,
                                std::size_t scale, Label label, std::size_t m) {
  const std::size_t L = spec.latent_dim;
  std::vector<double> z(model.means.begin() + m * L, model.means.begin() + (m + 1) * L);
  if (shifted(spec, scale, label, m))
    for (std::size_t l = 0; l < L; ++l)
      z[l] += spec.scales[scale].separation * spec.sigma * model.shifts[m * L + l];
  return z;
}

}  // namespace

void validate_spec(const SyntheticSpec& spec) {
  if (spec.slides_per_class < 2) throw ConfigError("synthetic: need at least 2 slides per class");
  if (spec.n_patches == 0) throw ConfigError("synthetic: np must be at least 1");
  if (spec.latent_dim == 0 || spec.latent_dim > kFeatureDim)
    throw ConfigError("synthetic: latent_dim must lie in [1, 512]");
  if (spec.components == 0) throw ConfigError("synthetic: need at least one component");
  if (!(spec.sigma > 0) || spec.observation_noise < 0 || spec.component_spread < 0)
    throw ConfigError("synthetic: sigma must be positive, noise and spread non-negative");
  for (const auto& s : spec.scales)
    if (s.signal && !(s.separation >= 0)) throw ConfigError("synthetic: separation must be >= 0");
}

std::vector<std::string> synthetic_preset_names() {
  return {"scale1-signal", "all-noise", "probe-mc", "probe-mm"};
}

std::optional<SyntheticSpec> synthetic_preset(std::string_view name, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  if (name == "scale1-signal") {
    spec.scales[0] = {true, 10.0, 0};
  } else if (name == "all-noise") {
    // every scale class-independent
  } else if (name == "probe-mc") {
    spec.scales[0] = {true, 2.0, 1};
  } else if (name == "probe-mm") {
    spec.scales[0] = {true, 2.0, 1};
    spec.scales[2] = {true, 2.0, 1};
  } else {
    return std::nullopt;
  }
  return spec;
}

std::vector<double> synthetic_component_mean(const SyntheticSpec& spec, std::size_t scale,
                                             Label label, std::size_t component) {
  validate_spec(spec);
  const ScaleModel model = build_scale_model(spec, scale);
  const auto z = latent_mean(spec, model, scale, label, component);
  std::vector<double> x(kFeatureDim, 0.0);
  for (std::size_t r = 0; r < kFeatureDim; ++r)
    for (std::size_t l = 0; l < spec.latent_dim; ++l) x[r] += model.basis[r * spec.latent_dim + l] * z[l];
  return x;
}

std::vector<FeatureBag> generate_synthetic_dataset(
    const SyntheticSpec& spec, std::vector<std::array<std::vector<std::size_t>, 3>>* components) {
  validate_spec(spec);
  const std::size_t L = spec.latent_dim, M = spec.components;
  std::array<ScaleModel, 3> models;
  for (std::size_t s = 0; s < 3; ++s) models[s] = build_scale_model(spec, s);

  const std::size_t total = 2 * spec.slides_per_class;
  std::vector<FeatureBag> bags;
  bags.reserve(total);
  if (components) components->assign(total, {});
  std::vector<double> z(L);
  for (std::size_t b = 0; b < total; ++b) {
    const Label label = b < spec.slides_per_class ? Label::kFN : Label::kPC;
    const std::size_t local = b % spec.slides_per_class;
    char id[32];
    std::snprintf(id, sizeof id, "synth_%s_%03zu", label == Label::kFN ? "fn" : "pc", local);
    FeatureBag bag{id, label, {}};
    Rng rng(derive_seed(spec.seed, b));
    for (std::size_t s = 0; s < 3; ++s) {
      const ScaleModel& model = models[s];
      Matrix rows(spec.n_patches, kFeatureDim);
      for (std::size_t i = 0; i < spec.n_patches; ++i) {
        const std::size_t m = static_cast<std::size_t>(rng.below(M));
        if (components) (*components)[b][s].push_back(m);
        const auto mean = latent_mean(spec, model, s, label, m);
        for (std::size_t l = 0; l < L; ++l) z[l] = mean[l] + spec.sigma * rng.normal();
        auto out = rows.row(i);
        for (std::size_t r = 0; r < kFeatureDim; ++r) {
          double v = spec.observation_noise * rng.normal();
          for (std::size_t l = 0; l < L; ++l) v += model.basis[r * L + l] * z[l];
          out[r] = static_cast<float>(v);
        }
      }
      bag.per_scale[s] = std::move(rows);
    }
    bags.push_back(std::move(bag));
  }
  return bags;
}

}  // namespace msmil
