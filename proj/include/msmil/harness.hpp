#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/aggregate.hpp"
#include "msmil/classify.hpp"
#include "msmil/features.hpp"

namespace msmil {

enum class Classifier { kLinear, kRbf, kOptimized };
std::string_view to_string(Classifier c);
std::optional<Classifier> parse_classifier(std::string_view s);

struct ExperimentConfig {
  Method method = Method::kBaseline;
  std::size_t k = 32;
  Classifier classifier = Classifier::kLinear;
  double rbf_gamma = 1e-3;
  double C = 1.0;
  std::size_t n_patches = 100;
  std::size_t repetitions = 512;
  double train_fraction = 0.8;
  bool aug1 = true;
  std::uint64_t seed = 0;
  std::size_t kmeans_restarts = 1;
  std::size_t kmeans_max_iters = 100;
  double kmeans_tol = 1e-4;
  std::size_t threads = 1;
  /// Fill the seconds column of the results CSV with wall time. Off by
  /// default so result files are reproducible byte for byte.
  bool record_time = false;
};

/// Throws ConfigError on out-of-range fields.
void validate_config(const ExperimentConfig& config);

/// Stream ids for derive_seed(repetition_seed, stream).
enum class SeedStream : std::uint64_t { kSplit = 0, kCodebook = 1, kAug1 = 2, kInnerCv = 3, kDataset = 4 };
inline std::uint64_t stream_seed(std::uint64_t rep_seed, SeedStream s) {
  return derive_seed(rep_seed, static_cast<std::uint64_t>(s));
}

struct Split {
  std::vector<std::size_t> train;  // dataset indices, sorted
  std::vector<std::size_t> test;
};

/// Per class: round(train_fraction * class size) slides for training, clamped
/// so both sides keep at least one slide of every class.
Split stratified_split(std::span<const FeatureBag> bags, double train_fraction, Rng& rng);

/// Everything fitted on the training side of one split.
struct TrainedPipeline {
  AggregationModel aggregator;
  SvmModel svm;
  std::optional<GridSearchReport> grid;
};

/// k-means settings of a repetition, seeded from its codebook stream.
KMeansOptions codebook_options(const ExperimentConfig& config, std::uint64_t rep_seed,
                               std::size_t threads = 1);

/// Classifier training rows: one histogram per slide, followed by its 8 Aug1
/// histograms when aug1 is on. groups[i] is the slide index of row i.
struct TrainingRows {
  std::vector<BagHistogram> histograms;
  std::vector<std::size_t> groups;
};

TrainingRows training_histograms(const AggregationModel& aggregator,
                                 std::span<const FeatureBag> training, bool aug1,
                                 std::uint64_t rep_seed, std::size_t threads = 1);

struct FittedClassifier {
  SvmModel svm;
  std::optional<GridSearchReport> grid;
};

/// Trains the configured classifier on histogram rows.
FittedClassifier fit_classifier(std::span<const BagHistogram> rows,
                                std::span<const std::size_t> groups,
                                const ExperimentConfig& config, std::uint64_t rep_seed,
                                std::size_t threads = 1);

/// Fits codebooks and classifier on `training` only. When aug1 is on, each
/// slide contributes its full histogram plus 8 Aug1 histograms.
TrainedPipeline train_pipeline(std::span<const FeatureBag> training,
                               const ExperimentConfig& config, std::uint64_t rep_seed,
                               std::size_t threads = 1);

double evaluate_pipeline(const TrainedPipeline& pipeline, std::span<const FeatureBag> test,
                         std::size_t threads = 1);

struct SplitOutcome {
  double accuracy = 0.0;
  Split split;
  std::optional<GridCell> chosen;  // optimized classifier only
};

SplitOutcome run_split(std::span<const FeatureBag> bags, const ExperimentConfig& config,
                       std::uint64_t rep_seed, std::size_t threads = 1);

struct ExperimentResult {
  ExperimentConfig config;
  std::size_t n_patches = 0;
  std::vector<SplitOutcome> repetitions;
  double mean_acc = 0.0;
  double std_acc = 0.0;  // population standard deviation
  double seconds = 0.0;
};

/// Seed of repetition r: derive_seed(master, r).
inline std::uint64_t repetition_seed(std::uint64_t master, std::size_t r) {
  return derive_seed(master, r);
}

/// Produces a fresh dataset for a repetition from its dataset seed.
using DatasetSource = std::function<std::vector<FeatureBag>(std::uint64_t seed)>;

/// R repetitions over one fixed dataset.
ExperimentResult run_experiment(std::span<const FeatureBag> bags, const ExperimentConfig& config);
/// R repetitions, each on a dataset drawn from `source` with seed
/// stream_seed(rep_seed, kDataset).
ExperimentResult run_experiment(const DatasetSource& source, const ExperimentConfig& config);

/// Population mean and standard deviation.
std::pair<double, double> mean_and_std(std::span<const double> values);

// ---- synthetic data ----

struct ScaleSignal {
  bool signal = false;
  double separation = 0.0;               // class mean shift in units of sigma
  std::size_t informative_components = 0;  // 0 = all components shift
};

/// Features with low intrinsic dimension. For scale s, component m and
/// latent z ~ N(mu[s][m], sigma^2 I_L), a row is
///   x = R_s z + noise * N(0, I_512),
/// with R_s a fixed 512 x L orthonormal basis. On a "signal" scale, PC
/// slides shift informative components by separation * sigma * u[s][m]
/// (u unit vectors); "noise" scales are identical for both classes.
struct SyntheticSpec {
  std::size_t slides_per_class = 20;
  std::size_t n_patches = 50;
  std::size_t latent_dim = 8;
  std::size_t components = 4;
  double component_spread = 3.0;   // std of component means, in sigma units
  double sigma = 1.0;
  double observation_noise = 0.1;
  std::array<ScaleSignal, 3> scales{};
  std::uint64_t seed = 0;
};

void validate_spec(const SyntheticSpec& spec);

/// Presets: scale1-signal, all-noise, probe-mc, probe-mm.
std::optional<SyntheticSpec> synthetic_preset(std::string_view name, std::uint64_t seed);
std::vector<std::string> synthetic_preset_names();

/// Ambient-space mean of component m on scale s for a label.
std::vector<double> synthetic_component_mean(const SyntheticSpec& spec, std::size_t scale,
                                             Label label, std::size_t component);

/// FN slides first, then PC. `components`, when given, receives the
/// component index of every row: [bag][scale][row].
std::vector<FeatureBag> generate_synthetic_dataset(
    const SyntheticSpec& spec,
    std::vector<std::array<std::vector<std::size_t>, 3>>* components = nullptr);

// ---- reports ----

void write_results_csv(std::ostream& out, std::span<const ExperimentResult> results);
std::vector<ExperimentResult> read_results_csv(std::istream& in);
void write_repetitions_csv(std::ostream& out, const ExperimentResult& result);

/// Bar chart grouped by classifier panel, then k, then method. Bars show
/// mean accuracy from a 0.5 floor, whiskers one std, and an optional
/// horizontal baseline rule.
std::string render_report_svg(std::span<const ExperimentResult> results,
                              std::optional<double> baseline_mean);

}  // namespace msmil
