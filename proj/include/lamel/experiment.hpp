#pragma once

// Leave-one-task-out few-shot harness. For every (target, support size, shots,
// seed) cell the meta model and a plain ridge baseline are trained on the same
// shots and scored on the same held-out remainder of the target task.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "lamel/analysis.hpp"
#include "lamel/config.hpp"
#include "lamel/csv.hpp"
#include "lamel/lamel.hpp"
#include "lamel/linmodel.hpp"
#include "lamel/taskdata.hpp"

namespace lamel {

inline constexpr const char* kVersion = "0.1.0";

struct ExperimentConfig {
  std::vector<std::size_t> shots{10, 15, 20, 30, 50, 100};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::string target = "all";
  /// Rows kept per support task (from its training split); empty means full support only.
  std::vector<std::size_t> support_subsample;
  /// Restricts support tasks to ids matching this glob, then to `support_count` of them.
  std::string support_pattern = "*";
  std::size_t support_count = 0;  // 0 = all matching
  std::uint64_t support_select_seed = 0;
  double support_train_fraction = 0.8;
  std::uint64_t split_seed = 0;
  LambdaPolicy support_lambda{std::nullopt, default_lambda_grid(), kAutoFolds, 0};
  MetaPolicy meta{};
  LambdaPolicy baseline_lambda{std::nullopt, default_lambda_grid(), kLeaveOneOut, 0};
  bool fit_intercept = true;
  int jobs = 1;
};

struct ResultRow {
  std::string target;
  std::size_t support_rows = 0;  // 0 = full support
  std::size_t n_shots = 0;
  std::uint64_t seed = 0;
  std::size_t support_tasks = 0;
  std::size_t n_test = 0;
  double mae_meta = 0.0;
  double mae_regular = 0.0;
  double r2_meta = 0.0;
  double r2_regular = 0.0;
  double rel_improvement = 0.0;
  double lambda_parallel = 0.0;
  double lambda_perp = 0.0;
  double lambda_regular = 0.0;
  bool degenerate = false;  // fewer than two support tasks
};

struct SupportQuality {
  std::string task;
  double lambda = 0.0;
  std::size_t train_rows = 0;
  std::size_t test_rows = 0;
  double mae = 0.0;
  double r2 = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  std::vector<SupportQuality> support;
  std::vector<std::string> notices;
};

namespace detail {

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline double safe_r2(const VectorXd& y, const VectorXd& p) {
  try {
    return r2(y, p);
  } catch (const std::domain_error&) {
    return nan();
  }
}

inline std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  return format_double(v);
}

inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace detail

/// Runs the leave-one-task-out protocol over `tasks` (shared vocabulary).
inline ResultTable run_experiment(const std::vector<Task>& tasks, const ExperimentConfig& cfg) {
  if (tasks.empty()) throw std::invalid_argument("run_experiment: no tasks");
  if (cfg.shots.empty() || cfg.seeds.empty()) throw std::invalid_argument("run_experiment: empty shot or seed grid");
  for (auto s : cfg.shots)
    if (s < 1) throw std::invalid_argument("run_experiment: shot counts must be >= 1");
  const Eigen::Index dim = tasks.front().X.cols();
  for (const auto& t : tasks) {
    t.validate();
    if (t.X.cols() != dim) throw std::invalid_argument("run_experiment: tasks disagree on vocabulary size");
  }

  ResultTable table;
  const std::size_t T = tasks.size();

  // Per-task 80/20 splits and full-data support models are independent of the target.
  std::vector<Task> train_parts(T), test_parts(T);
  std::vector<std::optional<SupportModel>> full_models(T);
  detail::parallel_for(T, cfg.jobs, [&](std::size_t i) {
    const Task& task = tasks[i];
    if (task.rows() < 2) {
      train_parts[i] = task;
      return;
    }
    const auto split = train_test_split(task.rows(), cfg.support_train_fraction, cfg.split_seed ^ fnv1a64(task.id));
    train_parts[i] = task.subset(split.train_indices);
    test_parts[i] = task.subset(split.test_indices);
  });

  std::vector<std::size_t> targets;
  for (std::size_t i = 0; i < T; ++i)
    if (cfg.target == "all" || cfg.target == "each" || cfg.target == tasks[i].id) targets.push_back(i);
  if (targets.empty()) throw std::invalid_argument("run_experiment: unknown target task '" + cfg.target + "'");

  auto support_indices = [&](std::size_t target) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < T; ++i)
      if (i != target && detail::glob_match(cfg.support_pattern, tasks[i].id)) out.push_back(i);
    if (cfg.support_count > 0 && cfg.support_count < out.size()) {
      const auto order = detail::shuffled_indices(static_cast<Eigen::Index>(out.size()), cfg.support_select_seed);
      std::vector<std::size_t> chosen;
      for (std::size_t k = 0; k < cfg.support_count; ++k) chosen.push_back(out[static_cast<std::size_t>(order[k])]);
      std::sort(chosen.begin(), chosen.end());
      out = chosen;
    }
    return out;
  };

  std::vector<bool> needed(T, false);
  for (auto t : targets)
    for (auto s : support_indices(t)) needed[s] = true;

  const SupportPolicy support_policy{cfg.support_lambda, cfg.fit_intercept};
  detail::parallel_for(T, cfg.jobs, [&](std::size_t i) {
    if (!needed[i]) return;
    full_models[i] = fit_support({train_parts[i]}, support_policy).models.front();
  });
  for (std::size_t i = 0; i < T; ++i) {
    if (!full_models[i] || test_parts[i].rows() == 0) continue;
    const VectorXd pred = predict(test_parts[i].X, full_models[i]->coef);
    table.support.push_back({tasks[i].id, full_models[i]->lambda, static_cast<std::size_t>(train_parts[i].rows()),
                             static_cast<std::size_t>(test_parts[i].rows()), mae(test_parts[i].y, pred),
                             detail::safe_r2(test_parts[i].y, pred)});
  }

  std::vector<std::size_t> sizes{0};
  sizes.insert(sizes.end(), cfg.support_subsample.begin(), cfg.support_subsample.end());

  struct Cell {
    std::size_t target;
    std::size_t support_rows;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (auto t : targets)
    for (auto s : sizes)
      for (auto seed : cfg.seeds) cells.push_back({t, s, seed});

  std::mutex sink;
  detail::parallel_for(cells.size(), cfg.jobs, [&](std::size_t c) {
    const Cell cell = cells[c];
    const Task& target = tasks[cell.target];
    const auto support_ids = support_indices(cell.target);

    std::vector<SupportModel> models;
    std::vector<Task> used_support;
    if (cell.support_rows == 0) {
      for (auto s : support_ids) {
        models.push_back(*full_models[s]);
        used_support.push_back(train_parts[s]);
      }
    } else {
      for (auto s : support_ids) {
        const Task& part = train_parts[s];
        const auto keep = std::min<Eigen::Index>(part.rows(), static_cast<Eigen::Index>(cell.support_rows));
        const auto order = detail::shuffled_indices(part.rows(), cell.seed ^ fnv1a64(part.id) ^ 0x5bd1e995ULL);
        std::vector<Eigen::Index> rows(order.begin(), order.begin() + keep);
        std::sort(rows.begin(), rows.end());
        Task sub = part.subset(rows);
        models.push_back(fit_support({sub}, support_policy).models.front());
        used_support.push_back(std::move(sub));
      }
    }

    std::optional<SupportEnsemble> ensemble;
    if (!models.empty()) ensemble = make_ensemble(models);

    std::vector<ResultRow> rows;
    std::vector<std::string> notes;
    for (auto n_shots : cfg.shots) {
      if (static_cast<Eigen::Index>(n_shots) >= target.rows()) {
        notes.push_back("skipped target " + target.id + ": " + std::to_string(n_shots) + " shots but only " +
                        std::to_string(target.rows()) + " rows");
        continue;
      }
      const ShotSplit split = sample_shots(target, n_shots, cell.seed);
      assert_no_leakage(target.sample_ids, used_support);
      const Task shots = target.subset(split.train_indices);
      const Task test = target.subset(split.test_indices);

      ResultRow row;
      row.target = target.id;
      row.support_rows = cell.support_rows;
      row.n_shots = n_shots;
      row.seed = cell.seed;
      row.support_tasks = models.size();
      row.n_test = static_cast<std::size_t>(test.rows());
      row.degenerate = models.size() < 2;

      const RidgeConfig base{0.0, cfg.fit_intercept, false};
      row.lambda_regular = choose_lambda(shots.X, shots.y, cfg.baseline_lambda, base);
      const Coefficients regular = ridge_fit(shots.X, shots.y, {row.lambda_regular, cfg.fit_intercept, false});
      const VectorXd pred_regular = predict(test.X, regular);
      row.mae_regular = mae(test.y, pred_regular);
      row.r2_regular = detail::safe_r2(test.y, pred_regular);

      if (ensemble) {
        MetaPolicy policy = cfg.meta;
        policy.fit_intercept = cfg.fit_intercept;
        const MetaModel meta = fit(*ensemble, shots.X, shots.y, policy);
        const VectorXd pred_meta = predict_meta(meta, test.X);
        row.mae_meta = mae(test.y, pred_meta);
        row.r2_meta = detail::safe_r2(test.y, pred_meta);
        row.lambda_parallel = meta.lambda_parallel;
        row.lambda_perp = meta.lambda_perp;
        row.rel_improvement = row.mae_meta > 0.0 ? relative_improvement(row.mae_regular, row.mae_meta) : detail::nan();
      } else {
        row.mae_meta = row.r2_meta = row.rel_improvement = detail::nan();
        row.lambda_parallel = row.lambda_perp = detail::nan();
      }
      rows.push_back(std::move(row));
    }
    std::lock_guard lock(sink);
    table.rows.insert(table.rows.end(), rows.begin(), rows.end());
    table.notices.insert(table.notices.end(), notes.begin(), notes.end());
  });

  std::sort(table.rows.begin(), table.rows.end(), [](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.target, a.support_rows, a.n_shots, a.seed) < std::tie(b.target, b.support_rows, b.n_shots, b.seed);
  });
  std::sort(table.notices.begin(), table.notices.end());
  table.notices.erase(std::unique(table.notices.begin(), table.notices.end()), table.notices.end());
  return table;
}

struct Dataset {
  std::vector<Task> tasks;
  std::map<std::string, std::string> task_smiles;
  std::size_t vocabulary_size = 0;
  std::size_t rejected_rows = 0;
  std::size_t dropped_tasks = 0;
  int max_size = 0;
};

/// Loads the tasks named by a config: generated when the preset is
/// `synthetic`, otherwise read from `data_path` with the configured schema.
inline Dataset load_dataset(const Config& raw) {
  const Config cfg = apply_preset(raw);
  Dataset out;
  out.max_size = static_cast<int>(cfg.get_int("max_size", 5));
  if (out.max_size < 1 || out.max_size > kMaxGraphletSize)
    throw ConfigError("max_size must be between 1 and " + std::to_string(kMaxGraphletSize));
  if (cfg.get_string("preset") == "synthetic") {
    auto data = generate_synthetic_tasks(synthetic_spec_from_config(cfg));
    out.tasks = std::move(data.tasks);
    out.vocabulary_size = static_cast<std::size_t>(out.tasks.front().X.cols());
    return out;
  }
  const auto path = cfg.get("data_path");
  if (!path || path->empty()) throw ConfigError("config needs data_path (or preset = synthetic)");
  auto loaded = load_records(*path, Schema::from_config(cfg));
  if (cfg.get_bool("temperature_filter", false)) loaded.records = filter_temperature_window(loaded.records);
  if (loaded.records.empty()) throw ConfigError("no usable records in " + *path);
  AssembleOptions opts;
  opts.max_size = out.max_size;
  opts.min_rows_per_task = static_cast<std::size_t>(cfg.get_int("min_rows_per_task", 1));
  opts.add_hydrogens = cfg.get_bool("add_hydrogens", true);
  auto assembled = assemble_tasks(loaded.records, opts);
  out.tasks = std::move(assembled.tasks);
  out.task_smiles = std::move(loaded.task_smiles);
  out.vocabulary_size = assembled.vocab.size();
  out.rejected_rows = loaded.rejects.size() + assembled.rejects.size();
  out.dropped_tasks = assembled.dropped_tasks;
  if (out.tasks.empty()) throw ConfigError("no task meets min_rows_per_task");
  return out;
}

namespace detail {
inline LambdaPolicy lambda_policy(const Config& cfg, const std::string& phase, const std::vector<double>& grid,
                                  int default_folds) {
  LambdaPolicy p;
  p.grid = grid;
  p.folds = static_cast<int>(cfg.get_int(phase + "_folds", default_folds));
  p.seed = static_cast<std::uint64_t>(cfg.get_int("cv_seed", 0));
  if (auto fixed = cfg.get(phase + "_lambda"); fixed && *fixed != "auto") {
    p.fixed = cfg.get_double(phase + "_lambda", 0.0);
    if (*p.fixed < 0.0) throw ConfigError(phase + "_lambda must be >= 0");
  }
  return p;
}

template <class T>
std::vector<T> non_negative_list(const Config& cfg, const std::string& key, std::vector<T> fallback) {
  if (!cfg.has(key)) return fallback;
  std::vector<T> out;
  for (long long v : cfg.get_int_list(key)) {
    if (v < 0) throw ConfigError(key + " values must be non-negative");
    out.push_back(static_cast<T>(v));
  }
  return out;
}
}  // namespace detail

inline ExperimentConfig experiment_config_from(const Config& raw) {
  const Config cfg = apply_preset(raw);
  ExperimentConfig e;
  e.shots = detail::non_negative_list<std::size_t>(cfg, "shots", e.shots);
  e.seeds = detail::non_negative_list<std::uint64_t>(cfg, "seeds", e.seeds);
  if (e.shots.empty()) throw ConfigError("shots must not be empty");
  for (auto s : e.shots)
    if (s < 1) throw ConfigError("shot counts must be >= 1");
  if (e.seeds.empty()) throw ConfigError("seeds must not be empty");
  e.target = cfg.get_string("target", "all");
  e.support_subsample = detail::non_negative_list<std::size_t>(cfg, "support_subsample", {});
  for (auto s : e.support_subsample)
    if (s < 1) throw ConfigError("support_subsample values must be >= 1");
  e.support_pattern = cfg.get_string("support_pattern", "*");
  e.support_count = static_cast<std::size_t>(cfg.get_int("support_count", 0));
  e.support_select_seed = static_cast<std::uint64_t>(cfg.get_int("support_select_seed", 0));
  e.support_train_fraction = cfg.get_double("support_train_fraction", 0.8);
  if (!(e.support_train_fraction > 0.0 && e.support_train_fraction <= 1.0))
    throw ConfigError("support_train_fraction must be in (0, 1]");
  e.split_seed = static_cast<std::uint64_t>(cfg.get_int("split_seed", 0));
  const auto grid = cfg.has("lambda_grid") ? cfg.get_double_list("lambda_grid") : default_lambda_grid();
  for (double l : grid)
    if (!(l >= 0.0)) throw ConfigError("lambda_grid values must be >= 0");
  if (grid.empty()) throw ConfigError("lambda_grid must not be empty");
  e.support_lambda = detail::lambda_policy(cfg, "support", grid, kAutoFolds);
  e.meta.parallel = detail::lambda_policy(cfg, "parallel", grid, kLeaveOneOut);
  e.meta.perpendicular = detail::lambda_policy(cfg, "perp", grid, kLeaveOneOut);
  e.baseline_lambda = detail::lambda_policy(cfg, "baseline", grid, kLeaveOneOut);
  e.fit_intercept = cfg.get_bool("fit_intercept", true);
  e.meta.fit_intercept = e.fit_intercept;
  e.jobs = static_cast<int>(cfg.get_int("jobs", 1));
  return e;
}

/// Config echo minus keys that cannot change results; the run directory name
/// is its digest.
inline std::string result_echo(const Config& cfg) {
  const Config full = apply_preset(cfg);
  Config copy;
  for (const auto& [k, v] : full.entries())
    if (k != "out" && k != "jobs") copy.set(k, v);
  return copy.echo();
}

struct SimilarityRun {
  SimilarityStudy study;
  std::vector<std::string> skipped_tasks;  // no task SMILES available
};

/// Fits one ridge model per task on its training split and compares the
/// tasks' molecule fingerprints (at `fingerprint_max_size`) with those models.
inline SimilarityRun run_similarity(const Dataset& data, int fingerprint_max_size, const SupportPolicy& policy,
                                    double train_fraction = 0.8, std::uint64_t split_seed = 0) {
  SimilarityRun out;
  std::vector<std::string> ids;
  std::vector<GraphletFingerprint> fps;
  std::vector<const Task*> tasks;
  for (const auto& task : data.tasks) {
    const auto it = data.task_smiles.find(task.id);
    if (it == data.task_smiles.end() || it->second.empty()) {
      out.skipped_tasks.push_back(task.id);
      continue;
    }
    ids.push_back(task.id);
    fps.push_back(enumerate_graphlets(parse_smiles(it->second), fingerprint_max_size));
    tasks.push_back(&task);
  }
  if (ids.size() < 3) throw std::invalid_argument("similarity needs at least 3 tasks with molecule SMILES");
  const auto vocab = build_vocabulary(fps);
  const MatrixXd fp_matrix = MatrixXd(featurize(fps, vocab).to_sparse());
  std::vector<VectorXd> fp_vectors, reg_vectors;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    fp_vectors.push_back(fp_matrix.row(static_cast<Eigen::Index>(i)).transpose());
    const Task& task = *tasks[i];
    Task train = task;
    if (task.rows() >= 2)
      train = task.subset(train_test_split(task.rows(), train_fraction, split_seed ^ fnv1a64(task.id)).train_indices);
    reg_vectors.push_back(fit_support({train}, policy).models.front().coef.beta);
  }
  out.study = similarity_study(ids, fp_vectors, reg_vectors);
  return out;
}

inline void write_raw_csv(std::ostream& os, const ResultTable& table) {
  csv::write_row(os, {"target", "support_rows", "n_shots", "seed", "support_tasks", "n_test", "mae_meta", "mae_regular",
                      "r2_meta", "r2_regular", "rel_improvement", "lambda_parallel", "lambda_perp", "lambda_regular",
                      "degenerate"});
  for (const auto& r : table.rows) {
    csv::write_row(os, {r.target, std::to_string(r.support_rows), std::to_string(r.n_shots), std::to_string(r.seed),
                        std::to_string(r.support_tasks), std::to_string(r.n_test), detail::fmt(r.mae_meta),
                        detail::fmt(r.mae_regular), detail::fmt(r.r2_meta), detail::fmt(r.r2_regular),
                        detail::fmt(r.rel_improvement), detail::fmt(r.lambda_parallel), detail::fmt(r.lambda_perp),
                        detail::fmt(r.lambda_regular), r.degenerate ? "1" : "0"});
  }
}

struct SummaryRow {
  std::string target;
  std::size_t support_rows = 0;
  std::size_t n_shots = 0;
  MeanStderr mae_meta, mae_regular, rel_improvement, r2_meta, r2_regular;
};

/// Mean and standard error over seeds for each (target, support_rows, n_shots).
inline std::vector<SummaryRow> summarize(const ResultTable& table) {
  std::map<std::tuple<std::string, std::size_t, std::size_t>, std::vector<const ResultRow*>> groups;
  for (const auto& r : table.rows) groups[{r.target, r.support_rows, r.n_shots}].push_back(&r);
  std::vector<SummaryRow> out;
  for (const auto& [key, rows] : groups) {
    auto collect = [&](double ResultRow::*field) {
      std::vector<double> v;
      for (const auto* r : rows)
        if (!std::isnan(r->*field)) v.push_back(r->*field);
      return mean_stderr(v);
    };
    out.push_back({std::get<0>(key), std::get<1>(key), std::get<2>(key), collect(&ResultRow::mae_meta),
                   collect(&ResultRow::mae_regular), collect(&ResultRow::rel_improvement), collect(&ResultRow::r2_meta),
                   collect(&ResultRow::r2_regular)});
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& summary) {
  csv::write_row(os, {"target", "support_rows", "n_shots", "n", "mae_meta_mean", "mae_meta_se", "mae_regular_mean",
                      "mae_regular_se", "rel_improvement_mean", "rel_improvement_se", "r2_meta_mean", "r2_meta_se",
                      "r2_regular_mean", "r2_regular_se"});
  for (const auto& s : summary) {
    csv::write_row(os, {s.target, std::to_string(s.support_rows), std::to_string(s.n_shots),
                        std::to_string(s.mae_regular.n), detail::fmt(s.mae_meta.mean), detail::fmt(s.mae_meta.stderr_),
                        detail::fmt(s.mae_regular.mean), detail::fmt(s.mae_regular.stderr_),
                        detail::fmt(s.rel_improvement.mean), detail::fmt(s.rel_improvement.stderr_),
                        detail::fmt(s.r2_meta.mean), detail::fmt(s.r2_meta.stderr_), detail::fmt(s.r2_regular.mean),
                        detail::fmt(s.r2_regular.stderr_)});
  }
}

inline void write_support_csv(std::ostream& os, const ResultTable& table) {
  csv::write_row(os, {"task", "lambda", "train_rows", "test_rows", "mae", "r2"});
  for (const auto& s : table.support)
    csv::write_row(os, {s.task, detail::fmt(s.lambda), std::to_string(s.train_rows), std::to_string(s.test_rows),
                        detail::fmt(s.mae), detail::fmt(s.r2)});
}

inline std::string hex_digest(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

/// Writes raw.csv, summary.csv, support.csv and config-echo into `dir`.
inline void write_results(const std::filesystem::path& dir, const ResultTable& table, const std::string& config_echo) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "raw.csv", std::ios::binary);
    write_raw_csv(os, table);
  }
  {
    std::ofstream os(dir / "summary.csv", std::ios::binary);
    write_summary_csv(os, summarize(table));
  }
  {
    std::ofstream os(dir / "support.csv", std::ios::binary);
    write_support_csv(os, table);
  }
  {
    std::ofstream os(dir / "config-echo", std::ios::binary);
    os << "# lamel " << kVersion << "\n" << config_echo;
  }
}

}  // namespace lamel
