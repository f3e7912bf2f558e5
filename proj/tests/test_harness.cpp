#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "msmil/error.hpp"
#include "msmil/harness.hpp"

using namespace msmil;

namespace {

std::vector<FeatureBag> labelled_bags(std::size_t fn, std::size_t pc) {
  std::vector<FeatureBag> bags;
  for (std::size_t i = 0; i < fn + pc; ++i) {
    FeatureBag b;
    b.slide_id = "b" + std::to_string(i);
    b.label = i < fn ? Label::kFN : Label::kPC;
    bags.push_back(std::move(b));
  }
  return bags;
}

SyntheticSpec small_spec(std::uint64_t seed, const char* preset = "scale1-signal") {
  SyntheticSpec s = *synthetic_preset(preset, seed);
  s.slides_per_class = 6;
  s.n_patches = 20;
  return s;
}

ExperimentConfig small_config(Method method) {
  ExperimentConfig c;
  c.method = method;
  c.k = 4;
  c.n_patches = 20;
  c.repetitions = 4;
  c.seed = 42;
  return c;
}

std::string results_text(const ExperimentResult& r) {
  std::ostringstream out;
  write_results_csv(out, std::span(&r, 1));
  write_repetitions_csv(out, r);
  return out.str();
}

}  // namespace

TEST_CASE("classifier names") {
  CHECK(parse_classifier("optimized") == Classifier::kOptimized);
  CHECK(parse_classifier("RBF") == Classifier::kRbf);
  CHECK(to_string(Classifier::kLinear) == "linear");
  CHECK_FALSE(parse_classifier("poly").has_value());
}

TEST_CASE("config validation") {
  ExperimentConfig c;
  CHECK_NOTHROW(validate_config(c));
  c.train_fraction = 1.0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c = {};
  c.k = 0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c = {};
  c.repetitions = 0;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
}

TEST_CASE("stratified split: per-class counts, disjoint, covering") {
  const auto bags = labelled_bags(20, 20);
  Rng rng(1);
  const Split s = stratified_split(bags, 0.8, rng);
  CHECK(s.train.size() == 32);
  CHECK(s.test.size() == 8);
  std::size_t pc_train = 0;
  for (std::size_t i : s.train) pc_train += bags[i].label == Label::kPC;
  CHECK(pc_train == 16);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 40);

  // round(0.8 * 7) = 6 and round(0.8 * 3) = 2.
  const auto uneven = labelled_bags(7, 3);
  const Split u = stratified_split(uneven, 0.8, rng);
  CHECK(u.train.size() == 8);
  // Clamping keeps one slide of each class on both sides.
  const auto tiny = labelled_bags(2, 2);
  const Split t = stratified_split(tiny, 0.99, rng);
  CHECK(t.train.size() == 2);
  CHECK(t.test.size() == 2);
  CHECK_THROWS_AS(stratified_split(labelled_bags(5, 1), 0.8, rng), SizeError);
}

TEST_CASE("repetition and stream seeds are distinct") {
  std::set<std::uint64_t> seen;
  for (std::size_t r = 0; r < 1000; ++r) {
    const std::uint64_t rep = repetition_seed(7, r);
    seen.insert(rep);
    for (std::uint64_t s = 0; s < 5; ++s) seen.insert(stream_seed(rep, static_cast<SeedStream>(s)));
  }
  CHECK(seen.size() == 6000);
  CHECK(repetition_seed(7, 0) != repetition_seed(8, 0));
}

TEST_CASE("population mean and standard deviation") {
  const std::vector<double> v = {0.5, 1.0};
  const auto [m, s] = mean_and_std(v);
  CHECK(m == 0.75);
  CHECK(s == 0.25);
  const std::vector<double> one = {0.8};
  CHECK(mean_and_std(one).second == 0.0);
}

TEST_CASE("a single repetition has zero spread") {
  const auto bags = generate_synthetic_dataset(small_spec(1));
  ExperimentConfig c = small_config(Method::kBaseline);
  c.repetitions = 1;
  const ExperimentResult r = run_experiment(bags, c);
  REQUIRE(r.repetitions.size() == 1);
  CHECK(r.std_acc == 0.0);
  CHECK(r.mean_acc == r.repetitions[0].accuracy);
  CHECK(r.n_patches == 20);
}

TEST_CASE("run_split fits only on the training side") {
  const auto bags = generate_synthetic_dataset(small_spec(2));
  const ExperimentConfig c = small_config(Method::kMM);
  const std::uint64_t rep = repetition_seed(c.seed, 0);
  const SplitOutcome a = run_split(bags, c, rep);

  // Replace every test slide with unrelated data: the split and the fitted
  // pipeline must not move.
  auto altered = bags;
  const auto other = generate_synthetic_dataset(small_spec(99, "all-noise"));
  for (std::size_t i : a.split.test) {
    const std::string id = altered[i].slide_id;
    const Label label = altered[i].label;
    altered[i] = other[i];
    altered[i].slide_id = id;
    altered[i].label = label;
  }
  const SplitOutcome b = run_split(altered, c, rep);
  CHECK(a.split.train == b.split.train);
  CHECK(a.split.test == b.split.test);

  std::vector<FeatureBag> train_a, train_b;
  for (std::size_t i : a.split.train) {
    train_a.push_back(bags[i]);
    train_b.push_back(altered[i]);
  }
  const TrainedPipeline pa = train_pipeline(train_a, c, rep);
  const TrainedPipeline pb = train_pipeline(train_b, c, rep);
  for (std::size_t s = 0; s < 3; ++s)
    CHECK(pa.aggregator.codebooks[s].centroids == pb.aggregator.codebooks[s].centroids);
  CHECK(pa.svm.coefficients == pb.svm.coefficients);

  std::vector<FeatureBag> test_a;
  for (std::size_t i : a.split.test) test_a.push_back(bags[i]);
  CHECK(evaluate_pipeline(pa, test_a) == a.accuracy);
}

TEST_CASE("Aug1 adds eight rows per training slide") {
  const auto bags = generate_synthetic_dataset(small_spec(3));
  ExperimentConfig c = small_config(Method::kBaseline);
  c.classifier = Classifier::kOptimized;
  const std::vector<FeatureBag> train(bags.begin(), bags.begin() + 8);
  const std::vector<FeatureBag> train_pc(bags.end() - 4, bags.end());
  std::vector<FeatureBag> mixed(bags.begin(), bags.begin() + 4);
  mixed.insert(mixed.end(), train_pc.begin(), train_pc.end());
  const TrainedPipeline with = train_pipeline(mixed, c, 5);
  c.aug1 = false;
  const TrainedPipeline without = train_pipeline(mixed, c, 5);
  REQUIRE(with.grid);
  REQUIRE(without.grid);
  // Groups keep slides whole: folds = min(5, minority slides) either way.
  CHECK(with.grid->folds == 4);
  CHECK(without.grid->folds == 4);
  CHECK(with.grid->cells.size() == 21);
}

TEST_CASE("experiments are deterministic and independent of thread count") {
  const auto bags = generate_synthetic_dataset(small_spec(4));
  for (Method m : kMethods) {
    ExperimentConfig c = small_config(m);
    c.threads = 1;
    const std::string one = results_text(run_experiment(bags, c));
    CHECK(one == results_text(run_experiment(bags, c)));
    c.threads = 8;
    CHECK(one == results_text(run_experiment(bags, c)));
  }
  ExperimentConfig c = small_config(Method::kMA);
  c.classifier = Classifier::kOptimized;
  c.threads = 1;
  const std::string one = results_text(run_experiment(bags, c));
  c.threads = 8;
  CHECK(one == results_text(run_experiment(bags, c)));
}

TEST_CASE("resampled-dataset experiments draw one dataset per repetition") {
  std::vector<std::uint64_t> seeds;
  const DatasetSource source = [&](std::uint64_t seed) {
    return generate_synthetic_dataset(small_spec(seed));
  };
  const ExperimentConfig c = small_config(Method::kBaseline);
  const ExperimentResult a = run_experiment(source, c);
  ExperimentConfig c8 = c;
  c8.threads = 8;
  CHECK(results_text(a) == results_text(run_experiment(source, c8)));
  const DatasetSource recording = [&](std::uint64_t seed) {
    seeds.push_back(seed);
    return generate_synthetic_dataset(small_spec(seed));
  };
  run_experiment(recording, c);
  REQUIRE(seeds.size() == 4);
  for (std::size_t r = 0; r < 4; ++r)
    CHECK(seeds[r] == stream_seed(repetition_seed(c.seed, r), SeedStream::kDataset));
}

TEST_CASE("synthetic generator: layout, determinism, labels") {
  const SyntheticSpec spec = small_spec(5);
  std::vector<std::array<std::vector<std::size_t>, 3>> comps;
  const auto bags = generate_synthetic_dataset(spec, &comps);
  REQUIRE(bags.size() == 12);
  CHECK(bags[0].slide_id == "synth_fn_000");
  CHECK(bags[0].label == Label::kFN);
  CHECK(bags[6].label == Label::kPC);
  for (const auto& b : bags) {
    CHECK_NOTHROW(validate_bag(b));
    CHECK(b.n_patches() == 20);
  }
  CHECK(comps.size() == 12);
  CHECK(generate_synthetic_dataset(spec) == bags);
  CHECK_FALSE(generate_synthetic_dataset(small_spec(6)) == bags);
  for (const auto& name : synthetic_preset_names()) CHECK(synthetic_preset(name, 0).has_value());
  CHECK_FALSE(synthetic_preset("nope", 0).has_value());
  SyntheticSpec bad = spec;
  bad.latent_dim = 0;
  CHECK_THROWS_AS(validate_spec(bad), ConfigError);
}

TEST_CASE("synthetic component sample means agree with the generating means") {
  SyntheticSpec spec = *synthetic_preset("probe-mm", 8);
  spec.slides_per_class = 10;
  spec.n_patches = 200;
  std::vector<std::array<std::vector<std::size_t>, 3>> comps;
  const auto bags = generate_synthetic_dataset(spec, &comps);
  const double per_row_var = spec.sigma * spec.sigma * static_cast<double>(spec.latent_dim) +
                             spec.observation_noise * spec.observation_noise * kFeatureDim;
  for (std::size_t s = 0; s < 3; ++s)
    for (Label label : {Label::kFN, Label::kPC})
      for (std::size_t m = 0; m < spec.components; ++m) {
        std::vector<double> sum(kFeatureDim, 0.0);
        double n = 0;
        for (std::size_t b = 0; b < bags.size(); ++b) {
          if (bags[b].label != label) continue;
          for (std::size_t i = 0; i < spec.n_patches; ++i) {
            if (comps[b][s][i] != m) continue;
            n += 1;
            for (std::size_t c = 0; c < kFeatureDim; ++c) sum[c] += bags[b].per_scale[s](i, c);
          }
        }
        REQUIRE(n > 50);
        const auto mu = synthetic_component_mean(spec, s, label, m);
        double dev2 = 0;
        for (std::size_t c = 0; c < kFeatureDim; ++c) dev2 += std::pow(sum[c] / n - mu[c], 2);
        // Squared deviation has expectation per_row_var / n.
        CHECK(dev2 <= 3.0 * per_row_var / n);
      }
}

TEST_CASE("synthetic class shifts follow the scale roles") {
  const SyntheticSpec spec = *synthetic_preset("probe-mm", 3);
  auto shift = [&](std::size_t s, std::size_t m) {
    const auto a = synthetic_component_mean(spec, s, Label::kFN, m);
    const auto b = synthetic_component_mean(spec, s, Label::kPC, m);
    double d = 0;
    for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
    return std::sqrt(d);
  };
  CHECK(shift(0, 0) == doctest::Approx(2.0 * spec.sigma).epsilon(1e-9));
  CHECK(shift(1, 0) == 0.0);
  CHECK(shift(2, 0) == doctest::Approx(2.0 * spec.sigma).epsilon(1e-9));
  for (std::size_t m = 1; m < spec.components; ++m) CHECK(shift(0, m) == 0.0);

  const SyntheticSpec noise = *synthetic_preset("all-noise", 3);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t m = 0; m < noise.components; ++m)
      CHECK(synthetic_component_mean(noise, s, Label::kFN, m) ==
            synthetic_component_mean(noise, s, Label::kPC, m));

  const SyntheticSpec sep = *synthetic_preset("scale1-signal", 3);
  for (std::size_t m = 0; m < sep.components; ++m) {
    const auto a = synthetic_component_mean(sep, 0, Label::kFN, m);
    const auto b = synthetic_component_mean(sep, 0, Label::kPC, m);
    double d = 0;
    for (std::size_t c = 0; c < a.size(); ++c) d += (a[c] - b[c]) * (a[c] - b[c]);
    CHECK(std::sqrt(d) == doctest::Approx(10.0 * sep.sigma).epsilon(1e-9));
  }
}

TEST_CASE("results CSV and SVG report") {
  ExperimentResult r;
  r.config.method = Method::kMC;
  r.config.k = 64;
  r.config.classifier = Classifier::kRbf;
  r.config.repetitions = 2;
  r.n_patches = 100;
  r.mean_acc = 0.9;
  r.std_acc = 0.05;
  std::vector<ExperimentResult> rs = {r, r, r};
  rs[1].config.method = Method::kMM;
  rs[2].config.k = 128;
  std::ostringstream out;
  write_results_csv(out, rs);
  const std::string text = out.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(text.rfind("method,k,classifier,nP,aug1,repetitions,mean_acc,std_acc,seed,seconds\n", 0) == 0);
  std::istringstream in(text);
  const auto back = read_results_csv(in);
  REQUIRE(back.size() == 3);
  CHECK(back[1].config.method == Method::kMM);
  CHECK(back[2].config.k == 128);
  CHECK(back[0].mean_acc == 0.9);
  CHECK(back[0].std_acc == 0.05);
  std::istringstream bad("method,k\n");
  CHECK_THROWS_AS(read_results_csv(bad), FormatError);

  const std::string one = render_report_svg(std::span(&r, 1), 0.875);
  auto count = [](const std::string& s, const std::string& needle) {
    std::size_t n = 0;
    for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
    return n;
  };
  CHECK(count(one, "class=\"bar\"") == 1);
  CHECK(count(one, "class=\"whisker\"") == 1);
  CHECK(count(one, "class=\"baseline\"") == 1);
  CHECK(one.find("data-value=\"0.875\"") != std::string::npos);
  CHECK(one.find("data-y-min=\"0.5\"") != std::string::npos);
  const std::string three = render_report_svg(rs, std::nullopt);
  CHECK(count(three, "class=\"bar\"") == 3);
  CHECK(count(three, "class=\"baseline\"") == 0);
}
