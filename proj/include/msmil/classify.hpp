#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "msmil/random.hpp"
#include "msmil/types.hpp"

namespace msmil {

enum class Kernel : std::uint8_t { kLinear = 0, kRbf = 1 };
std::string_view to_string(Kernel k);

using Sample = std::vector<double>;

/// +1 for PC, -1 for FN.
inline int label_sign(Label l) { return l == Label::kPC ? 1 : -1; }

struct SvmParams {
  Kernel kernel = Kernel::kLinear;
  double C = 1.0;
  double gamma = 1e-3;           // RBF only: K(a, b) = exp(-gamma * |a - b|^2)
  double tolerance = 1e-3;       // stop when the maximal KKT violation is below this
  std::size_t max_iterations = 1'000'000;
  /// After SMO converges, re-solve the KKT system on the free set exactly and
  /// keep the result if it is feasible and no worse.
  bool polish = true;
};

double kernel_value(Kernel kernel, double gamma, std::span<const double> a,
                    std::span<const double> b);

/// f(x) = sum_i coef_i * K(sv_i, x) + bias, with coef_i = y_i * alpha_i.
struct SvmModel {
  Kernel kernel = Kernel::kLinear;
  double gamma = 0.0;
  double C = 1.0;
  std::vector<Sample> support_vectors;
  std::vector<double> coefficients;
  double bias = 0.0;

  std::size_t dim() const {
    return support_vectors.empty() ? 0 : support_vectors.front().size();
  }
};

struct Prediction {
  Label label;
  double decision;
};

/// Label is PC when the decision value is >= 0.
Prediction predict(const SvmModel& model, std::span<const double> x);

/// Full dual state of a training run, for diagnostics and tests.
struct SvmSolution {
  SvmModel model;
  std::vector<double> alpha;   // one per training row, in [0, C]
  std::size_t iterations = 0;
  double max_violation = 0.0;  // m(alpha) - M(alpha) at exit
};

/// Soft-margin C-SVM dual solved by sequential minimal optimization with
/// maximal-violating-pair working-set selection. y holds +1 / -1.
SvmSolution train_svm_detailed(std::span<const Sample> X, std::span<const int> y,
                               const SvmParams& params);
SvmModel train_svm(std::span<const Sample> X, std::span<const int> y,
                   const SvmParams& params);

// Hyperparameter grid of the optimized classifier.
inline constexpr std::array<double, 7> kGridC = {0.5, 1, 2, 4, 8, 16, 32};
inline constexpr std::array<double, 2> kGridGamma = {1e-3, 1e-4};
inline constexpr std::size_t kInnerFolds = 5;

struct GridCell {
  Kernel kernel;
  double gamma;  // 0 for linear cells
  double C;
  std::vector<double> fold_accuracies;
  double mean_accuracy = 0.0;
};

struct GridSearchReport {
  std::vector<GridCell> cells;  // in tie-break order
  std::size_t chosen = 0;
  std::size_t folds = 0;

  const GridCell& chosen_cell() const { return cells.at(chosen); }
};

struct OptimizedSvm {
  SvmModel model;
  GridSearchReport report;
};

/// Stratified inner cross-validation over 7 linear cells and 14 RBF cells.
/// Ties prefer linear, then smaller C, then larger gamma. Rows sharing a
/// group id always land in the same fold (empty groups: one row per group).
/// The winning cell is retrained on all rows.
OptimizedSvm train_optimized(std::span<const Sample> X, std::span<const int> y, Rng& rng,
                             std::span<const std::size_t> groups = {},
                             std::size_t threads = 1);

void write_grid_report_csv(std::ostream& out, const GridSearchReport& report);

inline constexpr std::uint16_t kModelVersion = 1;
std::string encode_model(const SvmModel& model);
SvmModel decode_model(std::string_view bytes);
void write_model(const std::filesystem::path& path, const SvmModel& model);
SvmModel read_model(const std::filesystem::path& path);

}  // namespace msmil
