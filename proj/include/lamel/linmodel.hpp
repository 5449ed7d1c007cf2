#pragma once

// Closed-form ridge regression over dense or sparse Eigen designs.
//
// The solve runs in the primal (V x V) normal equations when V <= 4n and in
// the dual (n x n) kernel form otherwise. Both paths factor a symmetric
// positive-definite system with LLT; lambda = 0 goes through a symmetric
// eigendecomposition and returns the minimum-norm solution when the design is
// rank deficient. Intercepts are unpenalized and handled by centering.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <istream>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

namespace lamel {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

template <class M>
concept DenseDesign = std::derived_from<M, Eigen::MatrixBase<M>>;

template <class M>
concept SparseDesign = std::derived_from<M, Eigen::SparseMatrixBase<M>>;

template <class M>
concept Design = DenseDesign<M> || SparseDesign<M>;

struct Coefficients {
  VectorXd beta;
  double intercept = 0.0;
  /// Set when lambda = 0 met a rank-deficient design and the minimum-norm
  /// least-squares solution was returned.
  bool minimum_norm = false;

  Eigen::Index size() const noexcept { return beta.size(); }

  static Coefficients zeros(Eigen::Index dim) { return {VectorXd::Zero(dim), 0.0, false}; }

  Coefficients operator+(const Coefficients& other) const {
    if (beta.size() != other.beta.size()) throw std::invalid_argument("coefficient size mismatch");
    return {beta + other.beta, intercept + other.intercept, false};
  }
  Coefficients operator-(const Coefficients& other) const {
    if (beta.size() != other.beta.size()) throw std::invalid_argument("coefficient size mismatch");
    return {beta - other.beta, intercept - other.intercept, false};
  }
  Coefficients operator*(double scale) const { return {beta * scale, intercept * scale, false}; }

  bool operator==(const Coefficients& other) const {
    return beta.size() == other.beta.size() && beta == other.beta && intercept == other.intercept;
  }
};

struct RidgeConfig {
  double lambda = 1.0;
  bool fit_intercept = true;
  /// Scale columns to unit variance before the fit; coefficients are mapped back.
  bool standardize = false;
};

inline constexpr int kLeaveOneOut = -1;
inline constexpr int kAutoFolds = 0;  // leave-one-out below 30 rows, else 5-fold

/// 13 log-spaced points, 1e-6 .. 1e6.
inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int e = -6; e <= 6; ++e) grid.push_back(std::pow(10.0, e));
  return grid;
}

namespace detail {

template <Design M>
bool all_finite(const M& X) {
  if constexpr (DenseDesign<M>) {
    return X.allFinite();
  } else {
    for (Eigen::Index k = 0; k < X.outerSize(); ++k)
      for (typename M::InnerIterator it(X, k); it; ++it)
        if (!std::isfinite(it.value())) return false;
    return true;
  }
}

// Sparse designs dense enough (or small enough) are multiplied as dense blocks.
template <SparseDesign M>
bool prefer_dense(const M& X) {
  const double cells = static_cast<double>(X.rows()) * static_cast<double>(X.cols());
  return cells <= 4.0e6 || static_cast<double>(X.nonZeros()) > 0.1 * cells;
}

template <Design M>
MatrixXd gram_cols(const M& X) {
  if constexpr (DenseDesign<M>) {
    MatrixXd G = MatrixXd::Zero(X.cols(), X.cols());
    G.template selfadjointView<Eigen::Lower>().rankUpdate(X.transpose());
    return G.template selfadjointView<Eigen::Lower>();
  } else {
    if (prefer_dense(X)) return gram_cols(MatrixXd(X));
    return MatrixXd(X.transpose() * X);
  }
}

template <Design M>
MatrixXd gram_rows(const M& X) {
  if constexpr (DenseDesign<M>) {
    MatrixXd K = MatrixXd::Zero(X.rows(), X.rows());
    K.template selfadjointView<Eigen::Lower>().rankUpdate(X);
    return K.template selfadjointView<Eigen::Lower>();
  } else {
    if (prefer_dense(X)) return gram_rows(MatrixXd(X));
    const Eigen::SparseMatrix<double, Eigen::RowMajor> Xr(X);
    return MatrixXd(Xr * Xr.transpose());
  }
}

template <Design M>
VectorXd column_sums(const M& X) {
  return X.transpose() * VectorXd::Ones(X.rows());
}

template <Design M>
auto take_rows(const M& X, const std::vector<Eigen::Index>& rows) {
  if constexpr (DenseDesign<M>) {
    MatrixXd out(static_cast<Eigen::Index>(rows.size()), X.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = X.row(rows[i]);
    return out;
  } else {
    const Eigen::SparseMatrix<double, Eigen::RowMajor> Xr(X);
    std::vector<Eigen::Triplet<double>> triplets;
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(Xr, rows[i]); it; ++it)
        triplets.emplace_back(static_cast<int>(i), static_cast<int>(it.col()), it.value());
    Eigen::SparseMatrix<double, Eigen::RowMajor> out(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.setFromTriplets(triplets.begin(), triplets.end());
    return out;
  }
}

inline VectorXd take(const VectorXd& v, const std::vector<Eigen::Index>& idx) {
  VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t i = 0; i < idx.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[idx[i]];
  return out;
}

inline MatrixXd take(const MatrixXd& m, const std::vector<Eigen::Index>& rows,
                     const std::vector<Eigen::Index>& cols) {
  MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < cols.size(); ++j)
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
  return out;
}

struct SpdSolution {
  VectorXd x;
  bool minimum_norm = false;
};

// Solves (A + lambda I) x = b for symmetric PSD A.
inline SpdSolution solve_regularized(const MatrixXd& A, const VectorXd& b, double lambda) {
  const Eigen::Index n = A.rows();
  if (lambda > 0.0) {
    MatrixXd R = A;
    R.diagonal().array() += lambda;
    Eigen::LLT<MatrixXd> llt(R);
    if (llt.info() == Eigen::Success) return {llt.solve(b), false};
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(A);
  if (eig.info() != Eigen::Success) throw std::runtime_error("ridge: eigendecomposition failed");
  const VectorXd& d = eig.eigenvalues();
  const double top = n > 0 ? std::max(d.cwiseAbs().maxCoeff(), 0.0) : 0.0;
  const double tol = top * static_cast<double>(std::max<Eigen::Index>(n, 1)) *
                     std::numeric_limits<double>::epsilon() * 16.0;
  VectorXd proj = eig.eigenvectors().transpose() * b;
  bool deficient = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double denom = d[i] + lambda;
    if (denom <= tol) {
      proj[i] = 0.0;
      deficient = true;
    } else {
      proj[i] /= denom;
    }
  }
  return {eig.eigenvectors() * proj, deficient && lambda == 0.0};
}

// Additive sufficient statistics for the primal normal equations.
struct PrimalStats {
  MatrixXd gram;    // X^T X
  VectorXd colsum;  // X^T 1
  VectorXd xty;     // X^T y
  double ysum = 0.0;
  double n = 0.0;

  template <Design M>
  static PrimalStats of(const M& X, const VectorXd& y) {
    return {gram_cols(X), column_sums(X), X.transpose() * y, y.sum(), static_cast<double>(X.rows())};
  }

  PrimalStats operator-(const PrimalStats& o) const {
    return {gram - o.gram, colsum - o.colsum, xty - o.xty, ysum - o.ysum, n - o.n};
  }

  Coefficients solve(double lambda, bool fit_intercept) const {
    if (!fit_intercept) {
      auto s = solve_regularized(gram, xty, lambda);
      return {std::move(s.x), 0.0, s.minimum_norm};
    }
    const VectorXd mean = colsum / n;
    const MatrixXd centered = gram - colsum * mean.transpose();
    const VectorXd rhs = xty - colsum * (ysum / n);
    auto s = solve_regularized(0.5 * (centered + centered.transpose()), rhs, lambda);
    const double intercept = ysum / n - mean.dot(s.x);
    return {std::move(s.x), intercept, s.minimum_norm};
  }
};

inline MatrixXd center_gram(const MatrixXd& K) {
  const VectorXd row_mean = K.rowwise().mean();
  const double all_mean = row_mean.mean();
  MatrixXd Kc = K;
  Kc.colwise() -= row_mean;
  Kc.rowwise() -= row_mean.transpose();
  Kc.array() += all_mean;
  return 0.5 * (Kc + Kc.transpose());
}

// Dual weights for a (train x train) Gram block; Kc alpha + lambda alpha = y - mean.
struct DualSolution {
  VectorXd alpha;
  double ymean = 0.0;
  double kalpha_mean = 0.0;  // mean of K alpha over training rows, for the intercept
  bool minimum_norm = false;
};

inline DualSolution solve_dual(const MatrixXd& K, const VectorXd& y, double lambda, bool fit_intercept) {
  DualSolution out;
  if (fit_intercept) {
    out.ymean = y.mean();
    auto s = solve_regularized(center_gram(K), y.array() - out.ymean, lambda);
    out.alpha = std::move(s.x);
    out.minimum_norm = s.minimum_norm;
    out.kalpha_mean = (K * out.alpha).mean();
  } else {
    auto s = solve_regularized(K, y, lambda);
    out.alpha = std::move(s.x);
    out.minimum_norm = s.minimum_norm;
  }
  return out;
}

template <Design M>
void check_problem(const M& X, const VectorXd& y) {
  if (X.rows() != y.size())
    throw std::invalid_argument("ridge: rows(X) = " + std::to_string(X.rows()) +
                                " but len(y) = " + std::to_string(y.size()));
  if (X.rows() < 1) throw std::invalid_argument("ridge: need at least one row");
  if (!all_finite(X) || !y.allFinite()) throw std::invalid_argument("ridge: non-finite input");
}

template <Design M>
VectorXd column_scales(const M& X) {
  const double n = static_cast<double>(X.rows());
  const VectorXd mean = column_sums(X) / n;
  VectorXd sq = VectorXd::Zero(X.cols());
  if constexpr (DenseDesign<M>) {
    sq = X.cwiseAbs2().colwise().sum().transpose();
  } else {
    for (Eigen::Index k = 0; k < X.outerSize(); ++k)
      for (typename M::InnerIterator it(X, k); it; ++it) sq[it.col()] += it.value() * it.value();
  }
  VectorXd scale(X.cols());
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double var = sq[j] / n - mean[j] * mean[j];
    scale[j] = var > 1e-300 ? std::sqrt(var) : 1.0;
  }
  return scale;
}

template <Design M>
auto scale_columns(const M& X, const VectorXd& scale) {
  if constexpr (DenseDesign<M>) {
    return MatrixXd(X * scale.cwiseInverse().asDiagonal());
  } else {
    return Eigen::SparseMatrix<double, Eigen::RowMajor>(X * scale.cwiseInverse().asDiagonal());
  }
}

}  // namespace detail

/// Minimizes ||X beta + b - y||^2 + lambda ||beta||^2 (b free when fit_intercept).
template <Design M>
Coefficients ridge_fit(const M& X, const VectorXd& y, const RidgeConfig& config) {
  detail::check_problem(X, y);
  if (!(config.lambda >= 0.0) || !std::isfinite(config.lambda))
    throw std::invalid_argument("ridge: lambda must be finite and >= 0");

  if (config.standardize) {
    const VectorXd scale = detail::column_scales(X);
    RidgeConfig inner = config;
    inner.standardize = false;
    Coefficients scaled = ridge_fit(detail::scale_columns(X, scale), y, inner);
    scaled.beta = scaled.beta.cwiseQuotient(scale);
    return scaled;
  }

  const Eigen::Index n = X.rows();
  const Eigen::Index dim = X.cols();
  if (dim <= 4 * n) return detail::PrimalStats::of(X, y).solve(config.lambda, config.fit_intercept);

  const MatrixXd K = detail::gram_rows(X);
  const auto dual = detail::solve_dual(K, y, config.lambda, config.fit_intercept);
  Coefficients out;
  out.beta = X.transpose() * dual.alpha;
  // With more columns than rows X^T X is singular, so lambda = 0 is a minimum-norm pick.
  out.minimum_norm = dual.minimum_norm || config.lambda == 0.0;
  if (config.fit_intercept) {
    // alpha sums to zero, so X_c^T alpha = X^T alpha.
    const VectorXd mean = detail::column_sums(X) / static_cast<double>(n);
    out.intercept = dual.ymean - mean.dot(out.beta);
  }
  return out;
}

template <Design M>
VectorXd predict(const M& X, const Coefficients& coef) {
  if (X.cols() != coef.beta.size())
    throw std::invalid_argument("predict: cols(X) = " + std::to_string(X.cols()) +
                                " but len(beta) = " + std::to_string(coef.beta.size()));
  VectorXd out = X * coef.beta;
  out.array() += coef.intercept;
  return out;
}

/// Ridge pulled toward `origin` instead of zero: penalizes ||beta - origin||^2.
template <Design M>
Coefficients ridge_fit_with_origin(const M& X, const VectorXd& y, const Coefficients& origin,
                                   const RidgeConfig& config) {
  if (origin.beta.size() != X.cols())
    throw std::invalid_argument("ridge_fit_with_origin: origin length differs from cols(X)");
  detail::check_problem(X, y);
  const VectorXd shifted = y - predict(X, origin);
  return origin + ridge_fit(X, shifted, config);
}

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> scores;  // mean CV squared error per grid point
  int folds = 0;               // folds actually used (n for leave-one-out)
};

namespace detail {

// Portable Fisher-Yates over mt19937_64 (std::shuffle is implementation-defined).
inline std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = idx.size(); i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(idx[i - 1], idx[static_cast<std::size_t>(r % bound)]);
  }
  return idx;
}

// Exact leave-one-out errors for every lambda from one eigendecomposition of
// the (centered) row Gram: e_i / (1 - H_ii).
inline std::vector<double> loo_scores(const MatrixXd& K, const VectorXd& y, const std::vector<double>& grid,
                                      bool fit_intercept) {
  const Eigen::Index n = y.size();
  const MatrixXd Kc = fit_intercept ? center_gram(K) : K;
  const double ymean = fit_intercept ? y.mean() : 0.0;
  const VectorXd yc = y.array() - ymean;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(Kc);
  if (eig.info() != Eigen::Success) throw std::runtime_error("select_lambda: eigendecomposition failed");
  const VectorXd d = eig.eigenvalues().cwiseMax(0.0);
  const MatrixXd& U = eig.eigenvectors();
  const VectorXd proj = U.transpose() * yc;
  const double tol = std::max(d.maxCoeff(), 0.0) * static_cast<double>(n) *
                     std::numeric_limits<double>::epsilon() * 16.0;

  std::vector<double> scores;
  for (double lambda : grid) {
    VectorXd shrink(n);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (lambda > 0.0) shrink[k] = d[k] / (d[k] + lambda);
      else shrink[k] = d[k] > tol ? 1.0 : 0.0;
    }
    const VectorXd fitted = U * shrink.cwiseProduct(proj);
    const VectorXd hat_diag =
        (U.array().square().matrix() * shrink).array() + (fit_intercept ? 1.0 / static_cast<double>(n) : 0.0);
    double sse = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double leverage = 1.0 - hat_diag[i];
      if (leverage <= 1e-10) {
        sse = std::numeric_limits<double>::infinity();
        break;
      }
      const double e = (yc[i] - fitted[i]) / leverage;
      sse += e * e;
    }
    scores.push_back(sse / static_cast<double>(n));
  }
  return scores;
}

}  // namespace detail

/// Picks the grid lambda with the lowest mean CV squared error; ties go to the
/// larger lambda. `folds` is >= 2, kLeaveOneOut, or kAutoFolds.
template <Design M>
LambdaSelection select_lambda(const M& X, const VectorXd& y, std::vector<double> grid, int folds,
                              std::uint64_t seed, const RidgeConfig& config = {}) {
  detail::check_problem(X, y);
  if (grid.empty()) throw std::invalid_argument("select_lambda: empty grid");
  for (double l : grid)
    if (!(l >= 0.0) || !std::isfinite(l)) throw std::invalid_argument("select_lambda: bad grid value");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const Eigen::Index n = X.rows();
  if (folds == kAutoFolds) folds = n < 30 ? kLeaveOneOut : 5;
  if (folds != kLeaveOneOut && folds < 2) throw std::invalid_argument("select_lambda: folds must be >= 2");
  const Eigen::Index k = folds == kLeaveOneOut ? n : folds;
  if (n < k || n < 2)
    throw std::invalid_argument("select_lambda: " + std::to_string(n) + " samples for " +
                                std::to_string(k) + " folds");

  LambdaSelection out;
  out.grid = grid;
  out.folds = static_cast<int>(k);

  if (grid.size() == 1) {
    out.lambda = grid.front();
    out.scores.assign(1, std::numeric_limits<double>::quiet_NaN());
    return out;
  }

  if (config.standardize) {
    RidgeConfig inner = config;
    inner.standardize = false;
    return select_lambda(detail::scale_columns(X, detail::column_scales(X)), y, std::move(grid), folds,
                         seed, inner);
  }

  if (folds == kLeaveOneOut) {
    out.scores = detail::loo_scores(detail::gram_rows(X), y, grid, config.fit_intercept);
  } else {
    const auto order = detail::shuffled_indices(n, seed);
    std::vector<std::vector<Eigen::Index>> test_sets(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < order.size(); ++i) test_sets[i % static_cast<std::size_t>(k)].push_back(order[i]);
    for (auto& t : test_sets) std::sort(t.begin(), t.end());

    std::vector<double> sse(grid.size(), 0.0);
    const bool primal = X.cols() <= 4 * n;
    std::optional<detail::PrimalStats> total;
    std::optional<MatrixXd> K;
    if (primal) total = detail::PrimalStats::of(X, y);
    else K = detail::gram_rows(X);

    for (const auto& test : test_sets) {
      std::vector<Eigen::Index> train;
      train.reserve(static_cast<std::size_t>(n) - test.size());
      {
        std::size_t t = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
          if (t < test.size() && test[t] == i) ++t;
          else train.push_back(i);
        }
      }
      const VectorXd y_test = detail::take(y, test);
      if (primal) {
        const auto X_test = detail::take_rows(X, test);
        const detail::PrimalStats fold = *total - detail::PrimalStats::of(X_test, y_test);
        for (std::size_t g = 0; g < grid.size(); ++g) {
          const Coefficients c = fold.solve(grid[g], config.fit_intercept);
          sse[g] += (predict(X_test, c) - y_test).squaredNorm();
        }
      } else {
        const MatrixXd K_train = detail::take(*K, train, train);
        const MatrixXd K_cross = detail::take(*K, test, train);
        const VectorXd y_train = detail::take(y, train);
        for (std::size_t g = 0; g < grid.size(); ++g) {
          const auto dual = detail::solve_dual(K_train, y_train, grid[g], config.fit_intercept);
          VectorXd pred = K_cross * dual.alpha;
          pred.array() += dual.ymean - dual.kalpha_mean;
          sse[g] += (pred - y_test).squaredNorm();
        }
      }
    }
    for (double s : sse) out.scores.push_back(s / static_cast<double>(n));
  }

  // Ascending sweep; a later (larger) lambda wins ties within relative 1e-12.
  double best = std::numeric_limits<double>::infinity();
  out.lambda = grid.back();
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double s = out.scores[g];
    if (!std::isfinite(s)) continue;
    if (s <= best + 1e-12 * std::abs(best) || !std::isfinite(best)) {
      best = std::min(best, s);
      out.lambda = grid[g];
    }
  }
  return out;
}

/// How a regularization strength is obtained for one fit.
struct LambdaPolicy {
  std::optional<double> fixed;
  std::vector<double> grid = default_lambda_grid();
  int folds = kAutoFolds;
  std::uint64_t seed = 0;
};

/// Resolves a policy on concrete data. With fewer than two rows no CV is
/// possible and the largest grid value is used.
template <Design M>
double choose_lambda(const M& X, const VectorXd& y, const LambdaPolicy& policy, const RidgeConfig& base = {}) {
  if (policy.fixed) return *policy.fixed;
  if (policy.grid.empty()) throw std::invalid_argument("lambda policy has an empty grid");
  if (X.rows() < 2) return *std::max_element(policy.grid.begin(), policy.grid.end());
  int folds = policy.folds;
  if (folds > 0 && X.rows() < folds) folds = kLeaveOneOut;
  return select_lambda(X, y, policy.grid, folds, policy.seed, base).lambda;
}

// --- serialization -----------------------------------------------------------

inline std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  double value = 0.0;
  const auto* end = text.data() + text.size();
  const auto res = std::from_chars(text.data(), end, value);
  if (res.ec != std::errc() || res.ptr != end)
    throw std::invalid_argument("not a number: '" + std::string(text) + "'");
  return value;
}

/// `dim V`, `intercept b`, then `index value` for every nonzero coefficient.
inline void write_coefficients(std::ostream& os, const Coefficients& coef) {
  os << "dim " << coef.beta.size() << '\n';
  os << "intercept " << format_double(coef.intercept) << '\n';
  for (Eigen::Index i = 0; i < coef.beta.size(); ++i)
    if (coef.beta[i] != 0.0) os << i << ' ' << format_double(coef.beta[i]) << '\n';
}

inline Coefficients read_coefficients(std::istream& is) {
  std::string tag, value;
  Eigen::Index dim = 0;
  if (!(is >> tag >> dim) || tag != "dim" || dim < 0) throw std::runtime_error("coefficients: bad dim line");
  if (!(is >> tag >> value) || tag != "intercept") throw std::runtime_error("coefficients: bad intercept line");
  Coefficients coef = Coefficients::zeros(dim);
  coef.intercept = parse_double(value);
  Eigen::Index index = 0;
  while (is >> index >> value) {
    if (index < 0 || index >= dim) throw std::runtime_error("coefficients: index out of range");
    coef.beta[index] = parse_double(value);
  }
  return coef;
}

}  // namespace lamel
