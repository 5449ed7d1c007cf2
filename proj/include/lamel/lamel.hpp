#pragma once

// Three-phase linear meta-learning over ridge regression.
//
//   1. Support models: one ridge fit per support task, plus their mean.
//   2. Parallel component: regress the target labels, offset by the mean
//      support prediction, on meta-features (beta_t - mean) . x. The mixing
//      weights c give beta_par = mean + sum_t c_t (beta_t - mean).
//   3. Perpendicular component: ordinary ridge on the residuals of beta_par.
//
// beta_star = beta_par + beta_perp. The intercept is carried by beta_perp.

#include <algorithm>
#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "lamel/linmodel.hpp"
#include "json.hpp"

namespace lamel {

struct Task {
  std::string id;
  SparseMatrix X;
  VectorXd y;
  /// Unique identifiers of the underlying data points (for leakage checks).
  std::vector<std::int64_t> sample_ids;

  Eigen::Index rows() const noexcept { return X.rows(); }

  void validate() const {
    if (X.rows() != y.size()) throw std::invalid_argument("task " + id + ": rows(X) != len(y)");
    if (X.rows() < 1) throw std::invalid_argument("task " + id + ": no rows");
    if (!sample_ids.empty() && sample_ids.size() != static_cast<std::size_t>(X.rows()))
      throw std::invalid_argument("task " + id + ": sample id count != rows");
  }

  /// Row subset as a new task (ids follow the rows).
  Task subset(const std::vector<Eigen::Index>& rows_to_keep) const {
    Task out;
    out.id = id;
    out.X = detail::take_rows(X, rows_to_keep);
    out.y = detail::take(y, rows_to_keep);
    if (!sample_ids.empty())
      for (auto r : rows_to_keep) out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(r)]);
    return out;
  }
};

class LeakageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Throws LeakageError when any target sample id also occurs in a support task.
inline void assert_no_leakage(const std::vector<std::int64_t>& target_ids, const std::vector<Task>& support) {
  const std::unordered_set<std::int64_t> target(target_ids.begin(), target_ids.end());
  for (const auto& task : support) {
    for (auto id : task.sample_ids) {
      if (target.count(id))
        throw LeakageError("target sample " + std::to_string(id) + " also present in support task " + task.id);
    }
  }
}

struct SupportModel {
  std::string task_id;
  Coefficients coef;
  double lambda = 0.0;
};

struct SupportEnsemble {
  std::vector<SupportModel> models;
  Coefficients mean_model;

  std::size_t task_count() const noexcept { return models.size(); }
  Eigen::Index dim() const noexcept { return mean_model.beta.size(); }

  /// Columns beta_t - mean, V x T.
  MatrixXd deviations() const {
    MatrixXd D(dim(), static_cast<Eigen::Index>(models.size()));
    for (std::size_t t = 0; t < models.size(); ++t)
      D.col(static_cast<Eigen::Index>(t)) = models[t].coef.beta - mean_model.beta;
    return D;
  }
};

/// Averages fitted support models into an ensemble.
inline SupportEnsemble make_ensemble(std::vector<SupportModel> models) {
  if (models.empty()) throw std::invalid_argument("support ensemble needs at least one model");
  const Eigen::Index dim = models.front().coef.beta.size();
  Coefficients mean = Coefficients::zeros(dim);
  for (const auto& m : models) {
    if (m.coef.beta.size() != dim) throw std::invalid_argument("support models differ in dimension");
    mean.beta += m.coef.beta;
    mean.intercept += m.coef.intercept;
  }
  const double T = static_cast<double>(models.size());
  mean.beta /= T;
  mean.intercept /= T;
  return {std::move(models), std::move(mean)};
}

struct SupportPolicy {
  LambdaPolicy lambda;
  bool fit_intercept = true;
};

/// Phase 1: one ridge model per support task, lambda chosen per task.
inline SupportEnsemble fit_support(const std::vector<Task>& tasks, const SupportPolicy& policy = {}) {
  if (tasks.empty()) throw std::invalid_argument("fit_support: empty task list");
  const Eigen::Index dim = tasks.front().X.cols();
  std::vector<SupportModel> models;
  models.reserve(tasks.size());
  for (const auto& task : tasks) {
    task.validate();
    if (task.X.cols() != dim)
      throw std::invalid_argument("fit_support: task " + task.id + " has a different vocabulary size");
    RidgeConfig cfg{0.0, policy.fit_intercept, false};
    cfg.lambda = choose_lambda(task.X, task.y, policy.lambda, cfg);
    models.push_back({task.id, ridge_fit(task.X, task.y, cfg), cfg.lambda});
  }
  return make_ensemble(std::move(models));
}

struct MetaFeatures {
  MatrixXd chi;              // n x T, chi(i, t) = (beta_t - mean) . x_i
  VectorXd mean_prediction;  // average support prediction per row, intercepts included
};

template <Design M>
MetaFeatures meta_features(const SupportEnsemble& ensemble, const M& X) {
  if (X.cols() != ensemble.dim())
    throw std::invalid_argument("meta_features: cols(X) = " + std::to_string(X.cols()) +
                                " but ensemble dim = " + std::to_string(ensemble.dim()));
  MetaFeatures out;
  out.chi = X * ensemble.deviations();
  out.mean_prediction = predict(X, ensemble.mean_model);
  return out;
}

struct ParallelFit {
  VectorXd c;
  Coefficients beta_parallel;  // intercept is always zero
};

/// Phase 2: c = argmin ||chi c - (y - mean_prediction)||^2 + lambda ||c||^2.
inline ParallelFit fit_parallel(const SupportEnsemble& ensemble, const MetaFeatures& features, const VectorXd& y,
                                double lambda_parallel) {
  if (!(lambda_parallel > 0.0))
    throw std::invalid_argument("fit_parallel: lambda must be > 0 (the meta-feature design is rank deficient)");
  if (features.chi.rows() != y.size() || features.mean_prediction.size() != y.size())
    throw std::invalid_argument("fit_parallel: row count mismatch");
  if (features.chi.cols() != static_cast<Eigen::Index>(ensemble.task_count()))
    throw std::invalid_argument("fit_parallel: meta-feature count != task count");
  const VectorXd target = y - features.mean_prediction;
  ParallelFit out;
  out.c = ridge_fit(features.chi, target, {lambda_parallel, false, false}).beta;
  out.beta_parallel.beta = ensemble.mean_model.beta + ensemble.deviations() * out.c;
  out.beta_parallel.intercept = 0.0;
  return out;
}

/// Phase 3: ridge on the residuals left by beta_par.
template <Design M>
Coefficients fit_perpendicular(const M& X, const VectorXd& residuals, double lambda_perp, bool fit_intercept = true) {
  return ridge_fit(X, residuals, {lambda_perp, fit_intercept, false});
}

struct MetaModel {
  std::vector<std::string> task_ids;
  VectorXd c;
  Coefficients beta_parallel;
  Coefficients beta_perp;
  Coefficients beta_star;
  double lambda_parallel = 0.0;
  double lambda_perp = 0.0;

  bool operator==(const MetaModel& o) const {
    return task_ids == o.task_ids && c.size() == o.c.size() && c == o.c && beta_parallel == o.beta_parallel &&
           beta_perp == o.beta_perp && beta_star == o.beta_star && lambda_parallel == o.lambda_parallel &&
           lambda_perp == o.lambda_perp;
  }
};

struct MetaPolicy {
  LambdaPolicy parallel{std::nullopt, default_lambda_grid(), kLeaveOneOut, 0};
  LambdaPolicy perpendicular{std::nullopt, default_lambda_grid(), kLeaveOneOut, 0};
  bool fit_intercept = true;
};

/// Runs phases 2 and 3 on the target shots against a fitted ensemble.
template <Design M>
MetaModel fit(const SupportEnsemble& ensemble, const M& X, const VectorXd& y, const MetaPolicy& policy = {}) {
  if (X.rows() < 1) throw std::invalid_argument("fit: need at least one target shot");
  if (X.rows() != y.size()) throw std::invalid_argument("fit: rows(X) != len(y)");

  const MetaFeatures features = meta_features(ensemble, X);

  LambdaPolicy parallel = policy.parallel;
  parallel.grid.erase(std::remove_if(parallel.grid.begin(), parallel.grid.end(), [](double l) { return !(l > 0.0); }),
                      parallel.grid.end());
  if (!parallel.fixed && parallel.grid.empty()) throw std::invalid_argument("fit: parallel grid has no positive value");
  const VectorXd offset = y - features.mean_prediction;
  const double lambda_parallel = choose_lambda(features.chi, offset, parallel, {0.0, false, false});

  ParallelFit par = fit_parallel(ensemble, features, y, lambda_parallel);

  VectorXd residuals = y - X * par.beta_parallel.beta;
  const RidgeConfig perp_cfg{0.0, policy.fit_intercept, false};
  const double lambda_perp = choose_lambda(X, residuals, policy.perpendicular, perp_cfg);

  MetaModel model;
  for (const auto& m : ensemble.models) model.task_ids.push_back(m.task_id);
  model.c = std::move(par.c);
  model.beta_parallel = std::move(par.beta_parallel);
  model.beta_perp = fit_perpendicular(X, residuals, lambda_perp, policy.fit_intercept);
  model.beta_star = model.beta_parallel + model.beta_perp;
  model.lambda_parallel = lambda_parallel;
  model.lambda_perp = lambda_perp;
  return model;
}

template <Design M>
VectorXd predict_meta(const MetaModel& model, const M& X) {
  return predict(X, model.beta_star);
}

/// Relative residual of the least-squares projection of v onto span{beta_t - mean}.
inline double span_residual(const SupportEnsemble& ensemble, const VectorXd& v) {
  const double norm = v.norm();
  if (norm == 0.0) return 0.0;
  const MatrixXd D = ensemble.deviations();
  if (D.cols() == 0 || D.norm() == 0.0) return 1.0;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(D);
  const VectorXd proj = D * qr.solve(v);
  return (v - proj).norm() / norm;
}

/// Fraction of ||beta_perp|| lying inside the support span (diagnostic only).
inline double perpendicular_in_span_fraction(const SupportEnsemble& ensemble, const MetaModel& model) {
  const VectorXd& v = model.beta_perp.beta;
  const double norm = v.norm();
  if (norm == 0.0) return 0.0;
  const MatrixXd D = ensemble.deviations();
  if (D.norm() == 0.0) return 0.0;
  Eigen::ColPivHouseholderQR<MatrixXd> qr(D);
  return (D * qr.solve(v)).norm() / norm;
}

// --- JSON ------------------------------------------------------------------

inline constexpr const char* kModelVersion = "lamel-model-v1";

inline nlohmann::json coefficients_to_json(const Coefficients& coef) {
  nlohmann::json entries = nlohmann::json::array();
  for (Eigen::Index i = 0; i < coef.beta.size(); ++i)
    if (coef.beta[i] != 0.0) entries.push_back({i, coef.beta[i]});
  return {{"dim", coef.beta.size()}, {"intercept", coef.intercept}, {"entries", entries}};
}

inline Coefficients coefficients_from_json(const nlohmann::json& j) {
  Coefficients coef = Coefficients::zeros(j.at("dim").get<Eigen::Index>());
  coef.intercept = j.at("intercept").get<double>();
  for (const auto& e : j.at("entries")) {
    const auto index = e.at(0).get<Eigen::Index>();
    if (index < 0 || index >= coef.beta.size()) throw std::runtime_error("model json: entry index out of range");
    coef.beta[index] = e.at(1).get<double>();
  }
  return coef;
}

inline nlohmann::json to_json(const MetaModel& model) {
  return {{"version", kModelVersion},
          {"task_ids", model.task_ids},
          {"c", std::vector<double>(model.c.data(), model.c.data() + model.c.size())},
          {"lambda", {{"parallel", model.lambda_parallel}, {"perpendicular", model.lambda_perp}}},
          {"beta_parallel", coefficients_to_json(model.beta_parallel)},
          {"beta_perp", coefficients_to_json(model.beta_perp)},
          {"beta_star", coefficients_to_json(model.beta_star)}};
}

inline MetaModel meta_model_from_json(const nlohmann::json& j) {
  if (j.at("version").get<std::string>() != kModelVersion)
    throw std::runtime_error("model json: unsupported version " + j.at("version").get<std::string>());
  MetaModel model;
  model.task_ids = j.at("task_ids").get<std::vector<std::string>>();
  const auto c = j.at("c").get<std::vector<double>>();
  model.c = Eigen::Map<const VectorXd>(c.data(), static_cast<Eigen::Index>(c.size()));
  model.lambda_parallel = j.at("lambda").at("parallel").get<double>();
  model.lambda_perp = j.at("lambda").at("perpendicular").get<double>();
  model.beta_parallel = coefficients_from_json(j.at("beta_parallel"));
  model.beta_perp = coefficients_from_json(j.at("beta_perp"));
  model.beta_star = coefficients_from_json(j.at("beta_star"));
  return model;
}

}  // namespace lamel
