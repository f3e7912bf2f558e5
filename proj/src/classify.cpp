#include "msmil/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <ostream>

#include <Eigen/Dense>

#include "msmil/binary_io.hpp"
#include "msmil/error.hpp"
#include "msmil/parallel.hpp"

namespace msmil {

std::string_view to_string(Kernel k) { return k == Kernel::kLinear ? "linear" : "rbf"; }

double kernel_value(Kernel kernel, double gamma, std::span<const double> a,
                    std::span<const double> b) {
  double s = 0.0;
  if (kernel == Kernel::kLinear) {
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return std::exp(-gamma * s);
}

Prediction predict(const SvmModel& model, std::span<const double> x) {
  if (x.size() != model.dim())
    throw DimensionError("input width " + std::to_string(x.size()) +
                         " does not match model width " + std::to_string(model.dim()));
  double f = model.bias;
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
    f += model.coefficients[i] * kernel_value(model.kernel, model.gamma, model.support_vectors[i], x);
  return {f >= 0.0 ? Label::kPC : Label::kFN, f};
}

namespace {

class DualSolver {
 public:
  DualSolver(std::span<const Sample> X, std::span<const int> y, const SvmParams& p)
      : n_(X.size()), y_(y.begin(), y.end()), C_(p.C), Q_(n_ * n_), alpha_(n_, 0.0),
        grad_(n_, -1.0) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i; j < n_; ++j) {
        const double q = y_[i] * y_[j] * kernel_value(p.kernel, p.gamma, X[i], X[j]);
        Q_[i * n_ + j] = q;
        Q_[j * n_ + i] = q;
      }
  }

  bool in_up(std::size_t t) const {
    return (y_[t] > 0 && alpha_[t] < C_) || (y_[t] < 0 && alpha_[t] > 0);
  }
  bool in_low(std::size_t t) const {
    return (y_[t] < 0 && alpha_[t] < C_) || (y_[t] > 0 && alpha_[t] > 0);
  }
  double v(std::size_t t) const { return -y_[t] * grad_[t]; }

  /// Maximal violating pair; returns m - M.
  double select(std::size_t& i, std::size_t& j) const {
    double m = -std::numeric_limits<double>::infinity();
    double M = std::numeric_limits<double>::infinity();
    i = j = n_;
    for (std::size_t t = 0; t < n_; ++t) {
      if (in_up(t) && v(t) > m) { m = v(t); i = t; }
      if (in_low(t) && v(t) < M) { M = v(t); j = t; }
    }
    return (i == n_ || j == n_) ? 0.0 : m - M;
  }

  void update(std::size_t i, std::size_t j) {
    const double* Qi = &Q_[i * n_];
    const double* Qj = &Q_[j * n_];
    const double old_i = alpha_[i], old_j = alpha_[j];
    double ai = old_i, aj = old_j;
    constexpr double kTau = 1e-12;
    if (y_[i] != y_[j]) {
      double quad = Qi[i] + Qj[j] + 2.0 * Qi[j];
      if (quad <= 0) quad = kTau;
      const double delta = (-grad_[i] - grad_[j]) / quad;
      const double diff = ai - aj;
      ai += delta;
      aj += delta;
      if (diff > 0) {
        if (aj < 0) { aj = 0; ai = diff; }
      } else {
        if (ai < 0) { ai = 0; aj = -diff; }
      }
      if (diff > 0) {
        if (ai > C_) { ai = C_; aj = C_ - diff; }
      } else {
        if (aj > C_) { aj = C_; ai = C_ + diff; }
      }
    } else {
      double quad = Qi[i] + Qj[j] - 2.0 * Qi[j];
      if (quad <= 0) quad = kTau;
      const double delta = (grad_[i] - grad_[j]) / quad;
      const double sum = ai + aj;
      ai -= delta;
      aj += delta;
      if (sum > C_) {
        if (ai > C_) { ai = C_; aj = sum - C_; }
      } else {
        if (aj < 0) { aj = 0; ai = sum; }
      }
      if (sum > C_) {
        if (aj > C_) { aj = C_; ai = sum - C_; }
      } else {
        if (ai < 0) { ai = 0; aj = sum; }
      }
    }
    alpha_[i] = ai;
    alpha_[j] = aj;
    const double di = ai - old_i, dj = aj - old_j;
    for (std::size_t t = 0; t < n_; ++t) grad_[t] += Qi[t] * di + Qj[t] * dj;
  }

  void recompute_gradient() {
    for (std::size_t t = 0; t < n_; ++t) {
      double g = -1.0;
      for (std::size_t s = 0; s < n_; ++s) g += Q_[t * n_ + s] * alpha_[s];
      grad_[t] = g;
    }
  }

  /// Exact solve of the KKT equations with the current free / bounded split.
  void polish() {
    const double eps = 1e-12 * std::max(1.0, C_);
    std::vector<std::size_t> free, bound;
    for (std::size_t t = 0; t < n_; ++t) {
      if (alpha_[t] > eps && alpha_[t] < C_ - eps) free.push_back(t);
      else if (alpha_[t] >= C_ - eps) bound.push_back(t);
    }
    if (free.empty()) return;
    const std::size_t f = free.size();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(f + 1, f + 1);
    Eigen::VectorXd rhs(f + 1);
    for (std::size_t a = 0; a < f; ++a) {
      double r = 1.0;
      for (std::size_t c : bound) r -= Q_[free[a] * n_ + c] * C_;
      rhs(a) = r;
      for (std::size_t b = 0; b < f; ++b) A(a, b) = Q_[free[a] * n_ + free[b]];
      A(a, f) = y_[free[a]];
      A(f, a) = y_[free[a]];
    }
    double r = 0.0;
    for (std::size_t c : bound) r -= y_[c] * C_;
    rhs(f) = r;
    const Eigen::VectorXd sol = A.completeOrthogonalDecomposition().solve(rhs);
    if (!sol.allFinite() || (A * sol - rhs).norm() > 1e-9 * (1.0 + rhs.norm())) return;

    for (std::size_t a = 0; a < f; ++a)
      if (sol(a) < -eps || sol(a) > C_ + eps) return;

    const auto saved_alpha = alpha_;
    const auto saved_grad = grad_;
    std::size_t i, j;
    const double before = select(i, j);
    for (std::size_t a = 0; a < f; ++a) alpha_[free[a]] = std::clamp(sol(a), 0.0, C_);
    for (std::size_t c : bound) alpha_[c] = C_;
    recompute_gradient();
    double sum = 0.0;
    for (std::size_t t = 0; t < n_; ++t) sum += y_[t] * alpha_[t];
    if (select(i, j) > before || std::abs(sum) > 1e-9) {
      alpha_ = saved_alpha;
      grad_ = saved_grad;
    }
  }

  double bias() const {
    double m = -std::numeric_limits<double>::infinity();
    double M = std::numeric_limits<double>::infinity();
    double free_sum = 0.0;
    std::size_t free_count = 0;
    for (std::size_t t = 0; t < n_; ++t) {
      if (alpha_[t] > 0 && alpha_[t] < C_) {
        free_sum += v(t);
        ++free_count;
      }
      if (in_up(t)) m = std::max(m, v(t));
      if (in_low(t)) M = std::min(M, v(t));
    }
    if (free_count > 0) return free_sum / static_cast<double>(free_count);
    return (m + M) / 2.0;
  }

  const std::vector<double>& alpha() const { return alpha_; }

 private:
  std::size_t n_;
  std::vector<int> y_;
  double C_;
  std::vector<double> Q_;
  std::vector<double> alpha_;
  std::vector<double> grad_;
};

void validate_training(std::span<const Sample> X, std::span<const int> y,
                       const SvmParams& p) {
  if (X.size() != y.size() || X.empty())
    throw SizeError("SVM training needs matching, non-empty X and y");
  if (!(p.C > 0)) throw ConfigError("SVM cost C must be positive");
  if (p.kernel == Kernel::kRbf && !(p.gamma > 0))
    throw ConfigError("RBF gamma must be positive");
  bool pos = false, neg = false;
  const std::size_t d = X[0].size();
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (y[i] == 1) pos = true;
    else if (y[i] == -1) neg = true;
    else throw DataError("SVM labels must be +1 or -1");
    if (X[i].size() != d) throw DimensionError("SVM training rows differ in width");
    for (double v : X[i])
      if (!std::isfinite(v)) throw DataError("non-finite value in SVM training row " + std::to_string(i));
  }
  if (!pos || !neg) throw DegenerateLabelError("SVM training data contains a single class");
}

}  // namespace

SvmSolution train_svm_detailed(std::span<const Sample> X, std::span<const int> y,
                               const SvmParams& params) {
  validate_training(X, y, params);
  DualSolver solver(X, y, params);
  SvmSolution out;
  std::size_t i, j;
  for (;;) {
    out.max_violation = solver.select(i, j);
    if (out.max_violation < params.tolerance) break;
    if (out.iterations >= params.max_iterations)
      throw NumericalError("SMO did not reach KKT tolerance within " +
                           std::to_string(params.max_iterations) + " iterations");
    solver.update(i, j);
    ++out.iterations;
  }
  if (params.polish) {
    solver.polish();
    out.max_violation = solver.select(i, j);
  }

  out.alpha = solver.alpha();
  SvmModel& m = out.model;
  m.kernel = params.kernel;
  m.gamma = params.kernel == Kernel::kRbf ? params.gamma : 0.0;
  m.C = params.C;
  m.bias = solver.bias();
  for (std::size_t t = 0; t < X.size(); ++t) {
    if (out.alpha[t] > 0) {
      m.support_vectors.push_back(X[t]);
      m.coefficients.push_back(y[t] * out.alpha[t]);
    }
  }
  if (m.support_vectors.empty())
    throw NumericalError("SVM training produced no support vectors");
  return out;
}

SvmModel train_svm(std::span<const Sample> X, std::span<const int> y,
                   const SvmParams& params) {
  return train_svm_detailed(X, y, params).model;
}

OptimizedSvm train_optimized(std::span<const Sample> X, std::span<const int> y, Rng& rng,
                             std::span<const std::size_t> groups, std::size_t threads) {
  if (X.size() != y.size()) throw SizeError("train_optimized: X and y differ in length");
  std::vector<std::size_t> group(X.size());
  if (groups.empty()) {
    for (std::size_t i = 0; i < group.size(); ++i) group[i] = i;
  } else {
    if (groups.size() != X.size()) throw SizeError("train_optimized: group ids differ in length");
    group.assign(groups.begin(), groups.end());
  }

  // Groups per class, in order of first appearance.
  std::map<std::size_t, int> group_label;
  std::vector<std::size_t> pos_groups, neg_groups;
  for (std::size_t i = 0; i < X.size(); ++i) {
    auto [it, inserted] = group_label.emplace(group[i], y[i]);
    if (inserted) (y[i] > 0 ? pos_groups : neg_groups).push_back(group[i]);
    else if (it->second != y[i]) throw DataError("a group mixes both labels");
  }
  const std::size_t minority = std::min(pos_groups.size(), neg_groups.size());
  if (minority < 2)
    throw SizeError("optimized SVM needs at least 2 samples per class, got " +
                    std::to_string(minority));
  const std::size_t folds = std::min(kInnerFolds, minority);

  std::map<std::size_t, std::size_t> fold_of;
  for (auto* list : {&neg_groups, &pos_groups}) {
    rng.shuffle(*list);
    for (std::size_t p = 0; p < list->size(); ++p) fold_of[(*list)[p]] = p % folds;
  }

  GridSearchReport report;
  report.folds = folds;
  for (double C : kGridC) report.cells.push_back({Kernel::kLinear, 0.0, C, {}, 0.0});
  for (double C : kGridC)
    for (double g : kGridGamma) report.cells.push_back({Kernel::kRbf, g, C, {}, 0.0});

  parallel_for(report.cells.size(), threads, [&](std::size_t c) {
    GridCell& cell = report.cells[c];
    SvmParams p;
    p.kernel = cell.kernel;
    p.C = cell.C;
    if (cell.kernel == Kernel::kRbf) p.gamma = cell.gamma;
    for (std::size_t f = 0; f < folds; ++f) {
      std::vector<Sample> tx;
      std::vector<int> ty;
      std::vector<std::size_t> test;
      for (std::size_t i = 0; i < X.size(); ++i) {
        if (fold_of.at(group[i]) == f) test.push_back(i);
        else { tx.push_back(X[i]); ty.push_back(y[i]); }
      }
      const SvmModel m = train_svm(tx, ty, p);
      std::size_t correct = 0;
      for (std::size_t i : test)
        if (label_sign(predict(m, X[i]).label) == y[i]) ++correct;
      cell.fold_accuracies.push_back(static_cast<double>(correct) / static_cast<double>(test.size()));
    }
    double sum = 0.0;
    for (double a : cell.fold_accuracies) sum += a;
    cell.mean_accuracy = sum / static_cast<double>(folds);
  });
  for (std::size_t c = 1; c < report.cells.size(); ++c)
    if (report.cells[c].mean_accuracy > report.cells[report.chosen].mean_accuracy) report.chosen = c;

  const GridCell& best = report.chosen_cell();
  SvmParams p;
  p.kernel = best.kernel;
  p.C = best.C;
  if (best.kernel == Kernel::kRbf) p.gamma = best.gamma;
  return {train_svm(X, y, p), std::move(report)};
}

void write_grid_report_csv(std::ostream& out, const GridSearchReport& report) {
  out << "kernel,gamma,C,mean_acc,chosen\n";
  char buf[128];
  for (std::size_t c = 0; c < report.cells.size(); ++c) {
    const GridCell& cell = report.cells[c];
    std::snprintf(buf, sizeof buf, "%s,%g,%g,%.17g,%d\n", to_string(cell.kernel).data(),
                  cell.gamma, cell.C, cell.mean_accuracy, c == report.chosen ? 1 : 0);
    out << buf;
  }
}

std::string encode_model(const SvmModel& m) {
  ByteWriter w;
  w.bytes("MSVM");
  w.u16(kModelVersion);
  w.u8(static_cast<std::uint8_t>(m.kernel));
  w.f64(m.gamma);
  w.f64(m.C);
  w.u32(static_cast<std::uint32_t>(m.support_vectors.size()));
  w.u32(static_cast<std::uint32_t>(m.dim()));
  for (const Sample& sv : m.support_vectors)
    for (double v : sv) w.f32(static_cast<float>(v));
  for (double a : m.coefficients) w.f32(static_cast<float>(a));
  w.f64(m.bias);
  return w.buffer();
}

SvmModel decode_model(std::string_view bytes) {
  ByteReader r(bytes);
  r.expect_magic("MSVM");
  auto at = r.offset();
  if (r.u16("version") != kModelVersion) throw FormatError("unsupported model version", at);
  SvmModel m;
  at = r.offset();
  const std::uint8_t kernel = r.u8("kernel");
  if (kernel > 1) throw FormatError("unknown kernel byte", at);
  m.kernel = static_cast<Kernel>(kernel);
  m.gamma = r.f64("gamma");
  m.C = r.f64("C");
  const std::uint32_t count = r.u32("support vector count");
  const std::uint32_t dim = r.u32("dimension");
  if (count == 0) throw FormatError("model without support vectors", r.offset());
  r.require((static_cast<std::uint64_t>(count) * dim + count) * sizeof(float), "support vectors");
  m.support_vectors.assign(count, Sample(dim));
  for (auto& sv : m.support_vectors)
    for (double& v : sv) v = r.f32("support vector value");
  m.coefficients.resize(count);
  for (double& a : m.coefficients) a = r.f32("coefficient");
  m.bias = r.f64("bias");
  if (!r.at_end()) throw FormatError("trailing bytes after model", r.offset());
  return m;
}

void write_model(const std::filesystem::path& path, const SvmModel& model) {
  write_file(path.string(), encode_model(model));
}

SvmModel read_model(const std::filesystem::path& path) {
  return decode_model(read_file(path.string()));
}

}  // namespace msmil
