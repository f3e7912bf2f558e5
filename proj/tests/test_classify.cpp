#include <cmath>
#include <filesystem>
#include <sstream>

#include "doctest.h"
#include "msmil/classify.hpp"
#include "msmil/error.hpp"
#include "svm_oracle.hpp"

using namespace msmil;

namespace {

struct Problem {
  std::vector<Sample> X;
  std::vector<int> y;
};

Problem random_problem(Rng& rng, std::size_t n, std::size_t d, double shift) {
  Problem p;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = i % 2 == 0 ? 1 : -1;
    Sample x(d);
    for (double& v : x) v = rng.normal() + shift * label;
    p.X.push_back(std::move(x));
    p.y.push_back(label);
  }
  return p;
}

double model_objective(const SvmSolution& s, const Problem& p, bool rbf, double gamma) {
  return oracle::dual_objective(rbf, gamma, p.X, p.y, s.alpha);
}

}  // namespace

TEST_CASE("kernel values") {
  const Sample a = {1, 2}, b = {3, -1};
  CHECK(kernel_value(Kernel::kLinear, 0, a, b) == 1.0);
  CHECK(kernel_value(Kernel::kRbf, 0.5, a, b) == doctest::Approx(std::exp(-0.5 * 13)));
}

TEST_CASE("two points: analytic maximum-margin solution") {
  const std::vector<Sample> X = {{1.0}, {-1.0}};
  const std::vector<int> y = {1, -1};
  for (double C : {0.5, 1.0, 10.0}) {
    const SvmSolution s = train_svm_detailed(X, y, {.kernel = Kernel::kLinear, .C = C});
    CHECK(s.alpha[0] == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(s.alpha[1] == doctest::Approx(0.5).epsilon(1e-4));
    CHECK(std::abs(s.model.bias) <= 1e-4);
    // w = sum coef * x
    double w = 0;
    for (std::size_t i = 0; i < s.model.support_vectors.size(); ++i)
      w += s.model.coefficients[i] * s.model.support_vectors[i][0];
    CHECK(std::abs(w - 1.0) <= 1e-4);
    CHECK(predict(s.model, Sample{0.3}).decision == doctest::Approx(0.3).epsilon(1e-4));
  }
  // Shifted and scaled: points at 3 and 7 give w = 0.5, b = -2.5.
  const std::vector<Sample> X2 = {{7.0}, {3.0}};
  const SvmModel m = train_svm(X2, y, {.kernel = Kernel::kLinear, .C = 100});
  CHECK(predict(m, Sample{5.0}).decision == doctest::Approx(0.0).epsilon(1e-4));
  CHECK(std::abs(predict(m, Sample{7.0}).decision - 1.0) <= 1e-4);
}

TEST_CASE("decision ties resolve to PC") {
  SvmModel m;
  m.support_vectors = {{1.0}};
  m.coefficients = {1.0};
  m.bias = 0.0;
  const auto p = predict(m, Sample{0.0});
  CHECK(p.decision == 0.0);
  CHECK(p.label == Label::kPC);
  CHECK(predict(m, Sample{-1.0}).label == Label::kFN);
  CHECK_THROWS_AS(predict(m, Sample{1.0, 2.0}), DimensionError);
}

TEST_CASE("XOR is separated by the RBF kernel") {
  const std::vector<Sample> X = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
  const std::vector<int> y = {-1, -1, 1, 1};
  const SvmModel m = train_svm(X, y, {.kernel = Kernel::kRbf, .C = 32, .gamma = 1.0});
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(label_sign(predict(m, X[i]).label) == y[i]);
}

TEST_CASE("dual optimum matches exhaustive active-set search") {
  Rng rng(10);
  for (int t = 0; t < 40; ++t) {
    const bool rbf = t % 2 == 1;
    const double gamma = rbf ? 0.5 : 0.0;
    const double C = (t % 4 < 2) ? 0.5 : 4.0;
    const std::size_t n = 4 + static_cast<std::size_t>(t % 4);
    const Problem p = random_problem(rng, n, rbf ? 2 : n, 0.6);
    const SvmParams params{.kernel = rbf ? Kernel::kRbf : Kernel::kLinear, .C = C, .gamma = rbf ? gamma : 1e-3};
    const SvmSolution s = train_svm_detailed(p.X, p.y, params);
    const double best = oracle::exhaustive_dual_optimum(rbf, gamma, C, p.X, p.y);
    CHECK(model_objective(s, p, rbf, gamma) == doctest::Approx(best).epsilon(1e-6));
  }
}

TEST_CASE("KKT residuals and dual feasibility on random training sets") {
  Rng rng(11);
  for (int t = 0; t < 100; ++t) {
    const bool rbf = t % 2 == 0;
    const double gamma = rbf ? 0.1 : 0.0;
    const double C = std::pow(2.0, static_cast<double>(t % 7) - 1);
    const Problem p = random_problem(rng, 20 + static_cast<std::size_t>(t % 20), 5, 0.5);
    const SvmParams params{.kernel = rbf ? Kernel::kRbf : Kernel::kLinear, .C = C, .gamma = rbf ? gamma : 1e-3};
    const SvmSolution s = train_svm_detailed(p.X, p.y, params);
    double balance = 0.0;
    for (std::size_t i = 0; i < p.X.size(); ++i) {
      CHECK(s.alpha[i] >= 0.0);
      CHECK(s.alpha[i] <= C);
      balance += p.y[i] * s.alpha[i];
    }
    CHECK(std::abs(balance) <= 1e-9 * C * static_cast<double>(p.X.size()));
    CHECK(oracle::kkt_residual(rbf, gamma, C, p.X, p.y, s.alpha, s.model.bias) <= 1e-3);
  }
}

TEST_CASE("model decision equals the kernel expansion of the dual solution") {
  Rng rng(12);
  const Problem p = random_problem(rng, 40, 6, 0.4);
  const SvmSolution s = train_svm_detailed(p.X, p.y, {.kernel = Kernel::kRbf, .C = 2, .gamma = 0.2});
  for (int t = 0; t < 50; ++t) {
    Sample x(6);
    for (double& v : x) v = rng.normal();
    const double expected = oracle::decision(true, 0.2, p.X, p.y, s.alpha, s.model.bias, x);
    CHECK(std::abs(predict(s.model, x).decision - expected) <= 1e-9);
  }
}

TEST_CASE("duplicating every training row leaves a non-binding solution unchanged") {
  Rng rng(13);
  for (const Kernel kernel : {Kernel::kLinear, Kernel::kRbf}) {
    const Problem p = random_problem(rng, 24, 4, 3.0);
    Problem twice = p;
    twice.X.insert(twice.X.end(), p.X.begin(), p.X.end());
    twice.y.insert(twice.y.end(), p.y.begin(), p.y.end());
    const SvmParams params{.kernel = kernel, .C = 32, .gamma = 0.05};
    const SvmModel a = train_svm(p.X, p.y, params);
    const SvmModel b = train_svm(twice.X, twice.y, params);
    for (int t = 0; t < 30; ++t) {
      Sample x(4);
      for (double& v : x) v = 2 * rng.normal();
      CHECK(std::abs(predict(a, x).decision - predict(b, x).decision) <= 1e-6);
    }
  }
}

TEST_CASE("training input validation") {
  const std::vector<Sample> X = {{0.0}, {1.0}};
  CHECK_THROWS_AS(train_svm(X, std::vector<int>{1, 1}, {}), DegenerateLabelError);
  CHECK_THROWS_AS(train_svm(X, std::vector<int>{1}, {}), SizeError);
  CHECK_THROWS_AS(train_svm(X, std::vector<int>{1, 0}, {}), DataError);
  CHECK_THROWS_AS(train_svm(X, std::vector<int>{1, -1}, {.C = 0}), ConfigError);
  const std::vector<Sample> ragged = {{0.0}, {1.0, 2.0}};
  CHECK_THROWS_AS(train_svm(ragged, std::vector<int>{1, -1}, {}), DimensionError);
  const std::vector<Sample> nan = {{0.0}, {std::nan("")}};
  CHECK_THROWS_AS(train_svm(nan, std::vector<int>{1, -1}, {}), DataError);
}

TEST_CASE("iteration cap raises a numerical error") {
  Rng rng(14);
  const Problem p = random_problem(rng, 60, 3, 0.1);
  SvmParams params{.kernel = Kernel::kRbf, .C = 32, .gamma = 1.0};
  params.max_iterations = 2;
  params.polish = false;
  CHECK_THROWS_AS(train_svm(p.X, p.y, params), NumericalError);
}

TEST_CASE("grid search: 21 cells in tie-break order") {
  Rng data(15);
  const Problem p = random_problem(data, 30, 3, 0.3);
  Rng rng(1);
  const OptimizedSvm o = train_optimized(p.X, p.y, rng);
  REQUIRE(o.report.cells.size() == 21);
  CHECK(o.report.folds == 5);
  for (std::size_t c = 0; c < 7; ++c) {
    CHECK(o.report.cells[c].kernel == Kernel::kLinear);
    CHECK(o.report.cells[c].C == kGridC[c]);
  }
  std::size_t rbf = 0;
  for (std::size_t c = 7; c < 21; ++c) {
    CHECK(o.report.cells[c].kernel == Kernel::kRbf);
    ++rbf;
  }
  CHECK(rbf == 14);
  // Same C: larger gamma first.
  CHECK(o.report.cells[7].gamma == 1e-3);
  CHECK(o.report.cells[8].gamma == 1e-4);
  CHECK(o.report.cells[7].C == 0.5);
  for (const GridCell& cell : o.report.cells) {
    REQUIRE(cell.fold_accuracies.size() == 5);
    double m = 0;
    for (double a : cell.fold_accuracies) m += a;
    CHECK(cell.mean_accuracy == doctest::Approx(m / 5).epsilon(1e-15));
  }
  // Chosen cell has the maximal mean, first in order among equals.
  const double best = o.report.chosen_cell().mean_accuracy;
  for (std::size_t c = 0; c < 21; ++c) {
    if (c < o.report.chosen) CHECK(o.report.cells[c].mean_accuracy < best);
    else CHECK(o.report.cells[c].mean_accuracy <= best);
  }
  std::ostringstream csv;
  write_grid_report_csv(csv, o.report);
  const std::string text = csv.str();
  CHECK(std::count(text.begin(), text.end(), '\n') == 22);
}

TEST_CASE("grid search on separable data chooses linear with the smallest C") {
  Rng data(16);
  const Problem p = random_problem(data, 40, 3, 20.0);
  Rng rng(2);
  const OptimizedSvm o = train_optimized(p.X, p.y, rng);
  CHECK(o.report.chosen == 0);
  CHECK(o.model.kernel == Kernel::kLinear);
  CHECK(o.model.C == 0.5);
}

TEST_CASE("inner folds shrink with the minority class and respect groups") {
  Rng data(17);
  Problem p = random_problem(data, 6, 2, 5.0);  // 3 per class
  Rng rng(3);
  CHECK(train_optimized(p.X, p.y, rng).report.folds == 3);

  std::vector<Sample> X;
  std::vector<int> y;
  std::vector<std::size_t> groups;
  for (std::size_t g = 0; g < 8; ++g)
    for (int copy = 0; copy < 3; ++copy) {
      const int label = g % 2 == 0 ? 1 : -1;
      X.push_back({label * 4.0 + data.normal(), data.normal()});
      y.push_back(label);
      groups.push_back(g);
    }
  Rng rng2(4);
  CHECK(train_optimized(X, y, rng2, groups).report.folds == 4);
  groups[1] = 1;  // group 1 is FN, row 1 is PC
  Rng rng3(5);
  CHECK_THROWS_AS(train_optimized(X, y, rng3, groups), DataError);
  Rng rng4(6);
  CHECK_THROWS_AS(train_optimized(std::vector<Sample>{{0.0}, {1.0}, {2.0}},
                                  std::vector<int>{1, 1, -1}, rng4),
                  SizeError);
}

TEST_CASE("grid search is deterministic across thread counts") {
  Rng data(18);
  const Problem p = random_problem(data, 30, 4, 0.5);
  Rng a(9), b(9);
  const OptimizedSvm o1 = train_optimized(p.X, p.y, a, {}, 1);
  const OptimizedSvm o8 = train_optimized(p.X, p.y, b, {}, 8);
  CHECK(o1.report.chosen == o8.report.chosen);
  for (std::size_t c = 0; c < 21; ++c)
    CHECK(o1.report.cells[c].fold_accuracies == o8.report.cells[c].fold_accuracies);
  CHECK(o1.model.coefficients == o8.model.coefficients);
}

TEST_CASE("model file round trip and format errors") {
  Rng data(19);
  const Problem p = random_problem(data, 20, 3, 1.0);
  const SvmModel m = train_svm(p.X, p.y, {.kernel = Kernel::kRbf, .C = 4, .gamma = 0.3});
  const std::string bytes = encode_model(m);
  const SvmModel back = decode_model(bytes);
  CHECK(back.kernel == Kernel::kRbf);
  CHECK(back.gamma == 0.3);
  CHECK(back.C == 4);
  CHECK(back.bias == m.bias);
  CHECK(back.support_vectors.size() == m.support_vectors.size());
  for (const Sample& x : p.X) CHECK(std::abs(predict(back, x).decision - predict(m, x).decision) < 1e-5);
  const auto path = std::filesystem::temp_directory_path() / "msmil_test_model.bin";
  write_model(path, m);
  CHECK(encode_model(read_model(path)) == bytes);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(decode_model(bytes.substr(0, 20)), FormatError);
  CHECK_THROWS_AS(decode_model(bytes + "x"), FormatError);
  std::string bad = bytes;
  bad[6] = 7;
  CHECK_THROWS_AS(decode_model(bad), FormatError);
}

TEST_CASE("a rejected polish leaves the SMO solution intact") {
  Rng rng(2718);
  for (int t = 0; t < 200; ++t) {
    const bool rbf = t % 2 == 1;
    const double gamma = rbf ? 0.2 : 0.0;
    const double C = std::pow(2.0, static_cast<double>(t % 7) - 1);
    const Problem p = random_problem(rng, static_cast<std::size_t>(rng.between(6, 40)), 4, 0.7);
    const SvmSolution s =
        train_svm_detailed(p.X, p.y, {.kernel = rbf ? Kernel::kRbf : Kernel::kLinear, .C = C, .gamma = rbf ? gamma : 1e-3});
    double balance = 0.0;
    for (std::size_t i = 0; i < p.X.size(); ++i) balance += p.y[i] * s.alpha[i];
    CHECK(std::abs(balance) <= 1e-9);
    CHECK(oracle::kkt_residual(rbf, gamma, C, p.X, p.y, s.alpha, s.model.bias) <= 1e-3);
  }
}
