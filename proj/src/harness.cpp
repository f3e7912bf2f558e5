#include "msmil/harness.hpp"

#include <chrono>
#include <cmath>

#include "msmil/error.hpp"
#include "msmil/parallel.hpp"

namespace msmil {

std::string_view to_string(Classifier c) {
  switch (c) {
    case Classifier::kLinear: return "linear";
    case Classifier::kRbf: return "rbf";
    case Classifier::kOptimized: return "optimized";
  }
  return "?";
}

std::optional<Classifier> parse_classifier(std::string_view s) {
  for (Classifier c : {Classifier::kLinear, Classifier::kRbf, Classifier::kOptimized})
    if (s == to_string(c)) return c;
  if (s == "RBF") return Classifier::kRbf;
  return std::nullopt;
}

void validate_config(const ExperimentConfig& c) {
  if (c.k == 0) throw ConfigError("k must be at least 1");
  if (!(c.train_fraction > 0.0 && c.train_fraction < 1.0))
    throw ConfigError("train_fraction must lie in (0, 1)");
  if (c.repetitions == 0) throw ConfigError("repetitions must be at least 1");
  if (!(c.C > 0.0)) throw ConfigError("C must be positive");
  if (!(c.rbf_gamma > 0.0)) throw ConfigError("rbf_gamma must be positive");
  if (c.n_patches == 0) throw ConfigError("np must be at least 1");
  if (c.threads == 0) throw ConfigError("threads must be at least 1");
}

Split stratified_split(std::span<const FeatureBag> bags, double train_fraction, Rng& rng) {
  Split split;
  for (Label label : {Label::kFN, Label::kPC}) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < bags.size(); ++i)
      if (bags[i].label == label) members.push_back(i);
    if (members.size() < 2)
      throw SizeError("class " + std::string(to_string(label)) + " has " +
                      std::to_string(members.size()) + " slides, need at least 2");
    rng.shuffle(members);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * members.size()));
    n_train = std::clamp<std::size_t>(n_train, 1, members.size() - 1);
    split.train.insert(split.train.end(), members.begin(), members.begin() + n_train);
    split.test.insert(split.test.end(), members.begin() + n_train, members.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

KMeansOptions codebook_options(const ExperimentConfig& config, std::uint64_t rep_seed,
                               std::size_t threads) {
  KMeansOptions km;
  km.seed = stream_seed(rep_seed, SeedStream::kCodebook);
  km.max_iters = config.kmeans_max_iters;
  km.tol = config.kmeans_tol;
  km.restarts = config.kmeans_restarts;
  km.threads = threads;
  return km;
}

TrainingRows training_histograms(const AggregationModel& aggregator,
                                 std::span<const FeatureBag> training, bool aug1,
                                 std::uint64_t rep_seed, std::size_t threads) {
  TrainingRows out;
  Rng aug_rng(stream_seed(rep_seed, SeedStream::kAug1));
  for (std::size_t g = 0; g < training.size(); ++g) {
    const FeatureBag& bag = training[g];
    if (aug1) {
      for (BagHistogram& h : histograms_with_aug1(aggregator, bag, aug_rng, threads)) {
        out.histograms.push_back(std::move(h));
        out.groups.push_back(g);
      }
    } else {
      out.histograms.push_back(histogram(aggregator, bag, threads));
      out.groups.push_back(g);
    }
  }
  return out;
}

FittedClassifier fit_classifier(std::span<const BagHistogram> rows,
                                std::span<const std::size_t> groups,
                                const ExperimentConfig& config, std::uint64_t rep_seed,
                                std::size_t threads) {
  std::vector<Sample> X;
  std::vector<int> y;
  X.reserve(rows.size());
  for (const BagHistogram& h : rows) {
    X.push_back(h.values);
    y.push_back(label_sign(h.label));
  }
  FittedClassifier out;
  switch (config.classifier) {
    case Classifier::kLinear:
    case Classifier::kRbf: {
      SvmParams p;
      p.kernel = config.classifier == Classifier::kLinear ? Kernel::kLinear : Kernel::kRbf;
      p.C = config.C;
      p.gamma = config.rbf_gamma;
      out.svm = train_svm(X, y, p);
      break;
    }
    case Classifier::kOptimized: {
      Rng cv_rng(stream_seed(rep_seed, SeedStream::kInnerCv));
      auto opt = train_optimized(X, y, cv_rng, groups, threads);
      out.svm = std::move(opt.model);
      out.grid = std::move(opt.report);
      break;
    }
  }
  return out;
}

TrainedPipeline train_pipeline(std::span<const FeatureBag> training,
                               const ExperimentConfig& config, std::uint64_t rep_seed,
                               std::size_t threads) {
  TrainedPipeline out;
  out.aggregator = fit_aggregator(config.method, training, config.k,
                                  codebook_options(config, rep_seed, threads));
  const TrainingRows rows =
      training_histograms(out.aggregator, training, config.aug1, rep_seed, threads);
  FittedClassifier fitted = fit_classifier(rows.histograms, rows.groups, config, rep_seed, threads);
  out.svm = std::move(fitted.svm);
  out.grid = std::move(fitted.grid);
  return out;
}

double evaluate_pipeline(const TrainedPipeline& pipeline, std::span<const FeatureBag> test,
                         std::size_t threads) {
  if (test.empty()) throw SizeError("evaluation set is empty");
  std::size_t correct = 0;
  for (const FeatureBag& bag : test) {
    const BagHistogram h = histogram(pipeline.aggregator, bag, threads);
    if (predict(pipeline.svm, h.values).label == bag.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(test.size());
}

namespace {

std::vector<FeatureBag> pick(std::span<const FeatureBag> bags, const std::vector<std::size_t>& idx) {
  std::vector<FeatureBag> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(bags[i]);
  return out;
}

}  // namespace

SplitOutcome run_split(std::span<const FeatureBag> bags, const ExperimentConfig& config,
                       std::uint64_t rep_seed, std::size_t threads) {
  validate_config(config);
  Rng split_rng(stream_seed(rep_seed, SeedStream::kSplit));
  SplitOutcome out;
  out.split = stratified_split(bags, config.train_fraction, split_rng);
  const auto training = pick(bags, out.split.train);
  const auto test = pick(bags, out.split.test);
  const TrainedPipeline pipeline = train_pipeline(training, config, rep_seed, threads);
  if (pipeline.grid) out.chosen = pipeline.grid->chosen_cell();
  out.accuracy = evaluate_pipeline(pipeline, test, threads);
  return out;
}

std::pair<double, double> mean_and_std(std::span<const double> values) {
  if (values.empty()) return {0.0, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

namespace {

ExperimentResult run_repetitions(
    const ExperimentConfig& config, std::size_t n_patches,
    const std::function<SplitOutcome(std::size_t rep, std::uint64_t seed, std::size_t threads)>& one) {
  validate_config(config);
  const auto start = std::chrono::steady_clock::now();
  ExperimentResult result;
  result.config = config;
  result.n_patches = n_patches;
  result.repetitions.resize(config.repetitions);

  // Parallelism goes to repetitions; each repetition then runs serially.
  const std::size_t outer = std::min(config.threads, config.repetitions);
  const std::size_t inner = outer > 1 ? 1 : config.threads;
  parallel_for(config.repetitions, outer, [&](std::size_t r) {
    try {
      result.repetitions[r] = one(r, repetition_seed(config.seed, r), inner);
    } catch (const Error& e) {
      throw Error(e.kind(), "repetition " + std::to_string(r) + ": " + e.what());
    }
  });

  std::vector<double> acc;
  for (const auto& o : result.repetitions) acc.push_back(o.accuracy);
  std::tie(result.mean_acc, result.std_acc) = mean_and_std(acc);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace

ExperimentResult run_experiment(std::span<const FeatureBag> bags, const ExperimentConfig& config) {
  for (const auto& bag : bags) validate_bag(bag);
  const std::size_t n_patches = bags.empty() ? 0 : bags.front().n_patches();
  return run_repetitions(config, n_patches, [&](std::size_t, std::uint64_t seed, std::size_t threads) {
    return run_split(bags, config, seed, threads);
  });
}

ExperimentResult run_experiment(const DatasetSource& source, const ExperimentConfig& config) {
  return run_repetitions(config, config.n_patches,
                         [&](std::size_t, std::uint64_t seed, std::size_t threads) {
                           const auto bags = source(stream_seed(seed, SeedStream::kDataset));
                           return run_split(bags, config, seed, threads);
                         });
}

}  // namespace msmil
