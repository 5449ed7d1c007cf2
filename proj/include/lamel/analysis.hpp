#pragma once

// Error metrics, relative improvement and task-similarity analysis.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "lamel/csv.hpp"
#include "lamel/linmodel.hpp"

namespace lamel {

inline double mae(const VectorXd& y_true, const VectorXd& y_pred) {
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("mae: length mismatch");
  if (y_true.size() < 1) throw std::invalid_argument("mae: empty input");
  return (y_true - y_pred).cwiseAbs().mean();
}

inline double r2(const VectorXd& y_true, const VectorXd& y_pred) {
  if (y_true.size() != y_pred.size()) throw std::invalid_argument("r2: length mismatch");
  if (y_true.size() < 1) throw std::invalid_argument("r2: empty input");
  const double ss_tot = (y_true.array() - y_true.mean()).square().sum();
  if (!(ss_tot > 0.0)) throw std::domain_error("r2: truth has zero variance");
  return 1.0 - (y_true - y_pred).squaredNorm() / ss_tot;
}

/// 100 * (mae_regular - mae_meta) / mae_meta; negative means negative transfer.
inline double relative_improvement(double mae_regular, double mae_meta) {
  if (!(mae_meta > 0.0)) throw std::domain_error("relative improvement undefined for mae_meta <= 0");
  return 100.0 * (mae_regular - mae_meta) / mae_meta;
}

inline double cosine_similarity(const VectorXd& u, const VectorXd& v) {
  if (u.size() != v.size()) throw std::invalid_argument("cosine_similarity: length mismatch");
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw std::domain_error("cosine_similarity: zero vector");
  return std::clamp(u.dot(v) / (nu * nv), -1.0, 1.0);
}

/// Pearson correlation; nullopt when either side has zero variance.
inline std::optional<double> pearson(const VectorXd& a, const VectorXd& b) {
  if (a.size() != b.size()) throw std::invalid_argument("pearson: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const VectorXd da = a.array() - a.mean();
  const VectorXd db = b.array() - b.mean();
  const double denom = std::sqrt(da.squaredNorm() * db.squaredNorm());
  if (!(denom > 0.0) || da.squaredNorm() <= 1e-24 * a.size() || db.squaredNorm() <= 1e-24 * b.size())
    return std::nullopt;
  return std::clamp(da.dot(db) / denom, -1.0, 1.0);
}

struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

/// Mean and standard error of the mean (sample standard deviation / sqrt(n)).
inline MeanStderr mean_stderr(const std::vector<double>& values) {
  MeanStderr out;
  out.n = values.size();
  if (values.empty()) {
    out.mean = out.stderr_ = std::numeric_limits<double>::quiet_NaN();
    return out;
  }
  double sum = 0.0;
  for (double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stderr_ = std::sqrt(ss / static_cast<double>(values.size() - 1)) / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

enum class SimilarityKind { Fingerprint, RegressionVector };

inline const char* to_string(SimilarityKind kind) {
  return kind == SimilarityKind::Fingerprint ? "fingerprint" : "regression-vector";
}

struct SimilarityMatrix {
  std::vector<std::string> ids;
  MatrixXd values;
  SimilarityKind kind = SimilarityKind::Fingerprint;
};

/// Pairwise cosine similarity of the given vectors (one per id).
inline SimilarityMatrix similarity_matrix(const std::vector<std::string>& ids, const std::vector<VectorXd>& vectors,
                                          SimilarityKind kind) {
  if (ids.size() != vectors.size()) throw std::invalid_argument("similarity_matrix: ids/vectors mismatch");
  const auto n = static_cast<Eigen::Index>(ids.size());
  SimilarityMatrix out{ids, MatrixXd::Identity(n, n), kind};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double s = cosine_similarity(vectors[static_cast<std::size_t>(i)], vectors[static_cast<std::size_t>(j)]);
      out.values(i, j) = out.values(j, i) = s;
    }
  }
  return out;
}

struct SimilarityPair {
  std::string a, b;
  double fingerprint = 0.0;
  double regression = 0.0;
};

struct SimilarityStudy {
  SimilarityMatrix fingerprint;
  SimilarityMatrix regression;
  std::vector<SimilarityPair> pairs;  // upper triangle, no self-pairs
  std::optional<double> pearson_r;     // nullopt: undefined (zero variance)
  double slope = std::numeric_limits<double>::quiet_NaN();  // regression ~ slope * fingerprint + offset
  double offset = std::numeric_limits<double>::quiet_NaN();
};

/// Correlates fingerprint similarity of the task molecules with cosine
/// similarity of per-task regression vectors (intercepts excluded).
inline SimilarityStudy similarity_study(const std::vector<std::string>& ids,
                                        const std::vector<VectorXd>& task_fingerprints,
                                        const std::vector<VectorXd>& regression_vectors) {
  if (ids.size() < 3) throw std::invalid_argument("similarity_study: need at least 3 tasks");
  SimilarityStudy out{similarity_matrix(ids, task_fingerprints, SimilarityKind::Fingerprint),
                      similarity_matrix(ids, regression_vectors, SimilarityKind::RegressionVector),
                      {},
                      std::nullopt};
  const auto n = static_cast<Eigen::Index>(ids.size());
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      out.pairs.push_back({ids[static_cast<std::size_t>(i)], ids[static_cast<std::size_t>(j)],
                           out.fingerprint.values(i, j), out.regression.values(i, j)});
  VectorXd fx(static_cast<Eigen::Index>(out.pairs.size())), ry(fx.size());
  for (std::size_t k = 0; k < out.pairs.size(); ++k) {
    fx[static_cast<Eigen::Index>(k)] = out.pairs[k].fingerprint;
    ry[static_cast<Eigen::Index>(k)] = out.pairs[k].regression;
  }
  out.pearson_r = pearson(fx, ry);
  const double vx = (fx.array() - fx.mean()).square().sum();
  if (vx > 0.0) {
    out.slope = ((fx.array() - fx.mean()) * (ry.array() - ry.mean())).sum() / vx;
    out.offset = ry.mean() - out.slope * fx.mean();
  }
  return out;
}

/// Mean off-diagonal similarity of one id against all others.
inline double mean_similarity_to_others(const SimilarityMatrix& m, const std::string& id) {
  const auto it = std::find(m.ids.begin(), m.ids.end(), id);
  if (it == m.ids.end()) throw std::invalid_argument("unknown id " + id);
  const auto i = static_cast<Eigen::Index>(it - m.ids.begin());
  double sum = 0.0;
  for (Eigen::Index j = 0; j < m.values.cols(); ++j)
    if (j != i) sum += m.values(i, j);
  return m.values.cols() > 1 ? sum / static_cast<double>(m.values.cols() - 1) : 0.0;
}

inline void write_matrix_csv(std::ostream& os, const SimilarityMatrix& m) {
  std::vector<std::string> header{"id"};
  header.insert(header.end(), m.ids.begin(), m.ids.end());
  csv::write_row(os, header);
  for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
    std::vector<std::string> row{m.ids[static_cast<std::size_t>(i)]};
    for (Eigen::Index j = 0; j < m.values.cols(); ++j) row.push_back(format_double(m.values(i, j)));
    csv::write_row(os, row);
  }
}

inline void write_pairs_csv(std::ostream& os, const SimilarityStudy& s) {
  csv::write_row(os, {"task_a", "task_b", "fingerprint_similarity", "regression_similarity"});
  for (const auto& p : s.pairs)
    csv::write_row(os, {p.a, p.b, format_double(p.fingerprint), format_double(p.regression)});
}

}  // namespace lamel
