#pragma once

// Dataset ingestion: CSV records -> filtered records -> featurized tasks, plus
// few-shot splits and a synthetic low-rank task generator.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/QR>

#include "lamel/config.hpp"
#include "lamel/csv.hpp"
#include "lamel/graphlets.hpp"
#include "lamel/lamel.hpp"
#include "lamel/linmodel.hpp"
#include "lamel/molgraph.hpp"

namespace lamel {

struct RawRecord {
  std::string solute_smiles;
  std::string task_key;
  double value = 0.0;
  std::optional<double> temperature;
  std::size_t source_row = 0;  // 1-based data row (header excluded)
  std::int64_t record_id = 0;  // unique per data point, used for leakage checks
};

struct Reject {
  std::size_t source_row = 0;
  std::string reason;
};

struct Schema {
  std::string layout = "long";  // long: one row per (solute, task); wide: one column per task
  std::string smiles_col = "smiles";
  std::string task_col = "task";
  std::string value_col = "value";
  std::string temperature_col;      // optional
  std::string task_smiles_col;      // optional, long layout: SMILES of the task molecule (solvent)
  std::string value_col_pattern = "*";  // wide layout: glob over column names
  std::vector<std::string> exclude_cols;

  static Schema from_config(const Config& cfg) {
    Schema s;
    s.layout = cfg.get_string("layout", s.layout);
    s.smiles_col = cfg.get_string("smiles_col", s.smiles_col);
    s.task_col = cfg.get_string("task_col", s.task_col);
    s.value_col = cfg.get_string("value_col", s.value_col);
    s.temperature_col = cfg.get_string("temperature_col", "");
    s.task_smiles_col = cfg.get_string("task_smiles_col", "");
    s.value_col_pattern = cfg.get_string("value_col_pattern", s.value_col_pattern);
    s.exclude_cols = cfg.get_list("exclude_cols");
    if (s.layout != "long" && s.layout != "wide") throw ConfigError("layout must be long or wide");
    return s;
  }
};

struct LoadedRecords {
  std::vector<RawRecord> records;
  std::vector<Reject> rejects;
  std::map<std::string, std::string> task_smiles;  // task key -> SMILES, when the schema names a column
};

namespace detail {

inline bool glob_match(std::string_view pattern, std::string_view text) {
  std::size_t p = 0, t = 0, star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

inline std::optional<double> parse_number(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(t, &used);
    if (used != t.size() || !std::isfinite(v)) return std::nullopt;
    return v;
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

inline std::size_t column_index(const std::vector<std::string>& header, const std::string& name) {
  auto it = std::find(header.begin(), header.end(), name);
  if (it == header.end()) throw std::invalid_argument("missing column '" + name + "'");
  return static_cast<std::size_t>(it - header.begin());
}

}  // namespace detail

/// Parses CSV text under a schema. Malformed rows land in `rejects`.
inline LoadedRecords load_records(std::istream& is, const Schema& schema) {
  const auto rows = csv::read(is);
  LoadedRecords out;
  if (rows.empty()) throw std::runtime_error("csv has no header");
  const auto& header = rows.front().fields;
  const std::size_t smiles = detail::column_index(header, schema.smiles_col);
  std::int64_t next_id = 0;

  if (schema.layout == "wide") {
    std::vector<std::size_t> value_cols;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (c == smiles) continue;
      if (std::find(schema.exclude_cols.begin(), schema.exclude_cols.end(), header[c]) != schema.exclude_cols.end())
        continue;
      if (detail::glob_match(schema.value_col_pattern, header[c])) value_cols.push_back(c);
    }
    for (std::size_t r = 1; r < rows.size(); ++r) {
      const auto& f = rows[r].fields;
      if (f.size() != header.size()) {
        out.rejects.push_back({r, "expected " + std::to_string(header.size()) + " fields"});
        continue;
      }
      if (detail::trim(f[smiles]).empty()) {
        out.rejects.push_back({r, "empty SMILES"});
        continue;
      }
      for (std::size_t c : value_cols) {
        if (detail::trim(f[c]).empty()) continue;
        const auto value = detail::parse_number(f[c]);
        if (!value) {
          out.rejects.push_back({r, "non-numeric value in column " + header[c]});
          continue;
        }
        out.records.push_back({detail::trim(f[smiles]), header[c], *value, std::nullopt, r, next_id++});
      }
    }
    return out;
  }

  const std::size_t task = detail::column_index(header, schema.task_col);
  const std::size_t value = detail::column_index(header, schema.value_col);
  std::optional<std::size_t> temperature, task_smiles;
  if (!schema.temperature_col.empty()) temperature = detail::column_index(header, schema.temperature_col);
  if (!schema.task_smiles_col.empty()) task_smiles = detail::column_index(header, schema.task_smiles_col);

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    if (f.size() != header.size()) {
      out.rejects.push_back({r, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(f.size())});
      continue;
    }
    RawRecord rec;
    rec.source_row = r;
    rec.solute_smiles = detail::trim(f[smiles]);
    rec.task_key = detail::trim(f[task]);
    if (rec.solute_smiles.empty() || rec.task_key.empty()) {
      out.rejects.push_back({r, "empty SMILES or task key"});
      continue;
    }
    const auto v = detail::parse_number(f[value]);
    if (!v) {
      out.rejects.push_back({r, "non-numeric value '" + f[value] + "'"});
      continue;
    }
    rec.value = *v;
    if (temperature && !detail::trim(f[*temperature]).empty()) {
      const auto t = detail::parse_number(f[*temperature]);
      if (!t || !(*t > 0.0 && *t < 1000.0)) {
        out.rejects.push_back({r, "temperature outside (0, 1000) K"});
        continue;
      }
      rec.temperature = *t;
    }
    if (task_smiles) {
      const std::string s = detail::trim(f[*task_smiles]);
      if (!s.empty()) out.task_smiles.emplace(rec.task_key, s);
    }
    rec.record_id = next_id++;
    out.records.push_back(std::move(rec));
  }
  return out;
}

inline LoadedRecords load_records(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  return load_records(in, schema);
}

/// Keeps one record per (solute, task) pair whose temperature lies in
/// [low, high]: the one nearest `target`, ties to the lowest source row.
/// Pairs without an in-window record are dropped. Output is in source-row order.
inline std::vector<RawRecord> filter_temperature_window(const std::vector<RawRecord>& records, double low = 290.0,
                                                        double high = 300.0, double target = 298.0) {
  std::map<std::pair<std::string, std::string>, const RawRecord*> best;
  for (const auto& rec : records) {
    if (!rec.temperature || *rec.temperature < low || *rec.temperature > high) continue;
    const auto key = std::make_pair(rec.solute_smiles, rec.task_key);
    auto [it, fresh] = best.emplace(key, &rec);
    if (fresh) continue;
    const RawRecord& cur = *it->second;
    const double d_new = std::abs(*rec.temperature - target);
    const double d_cur = std::abs(*cur.temperature - target);
    if (d_new < d_cur || (d_new == d_cur && rec.source_row < cur.source_row)) it->second = &rec;
  }
  std::vector<RawRecord> out;
  out.reserve(best.size());
  for (const auto& [key, rec] : best) out.push_back(*rec);
  std::sort(out.begin(), out.end(), [](const RawRecord& a, const RawRecord& b) {
    return a.source_row != b.source_row ? a.source_row < b.source_row : a.record_id < b.record_id;
  });
  return out;
}

/// Rows per task key, sorted by key.
inline std::map<std::string, std::size_t> task_row_counts(const std::vector<RawRecord>& records) {
  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.task_key];
  return counts;
}

inline std::size_t count_tasks_with_min_rows(const std::vector<RawRecord>& records, std::size_t min_rows) {
  std::size_t n = 0;
  for (const auto& [key, count] : task_row_counts(records))
    if (count >= min_rows) ++n;
  return n;
}

struct AssembleOptions {
  int max_size = 5;
  std::size_t min_rows_per_task = 1;
  bool add_hydrogens = true;
};

struct AssembledTasks {
  std::vector<Task> tasks;  // sorted by id
  FingerprintVocabulary vocab;
  std::vector<Reject> rejects;
  std::size_t dropped_tasks = 0;  // below min_rows_per_task
};

/// Featurizes all solutes once over a shared vocabulary and splits by task key.
inline AssembledTasks assemble_tasks(const std::vector<RawRecord>& records, const AssembleOptions& options) {
  if (records.empty()) throw std::invalid_argument("assemble_tasks: no records");
  AssembledTasks out;

  std::map<std::string, std::optional<GraphletFingerprint>> fingerprints;
  std::map<std::string, std::string> errors;
  for (const auto& rec : records) {
    if (fingerprints.count(rec.solute_smiles)) continue;
    try {
      fingerprints[rec.solute_smiles] =
          enumerate_graphlets(parse_smiles(rec.solute_smiles, options.add_hydrogens), options.max_size);
    } catch (const SmilesError& e) {
      fingerprints[rec.solute_smiles] = std::nullopt;
      errors[rec.solute_smiles] = e.what();
    }
  }

  std::map<std::string, std::vector<const RawRecord*>> by_task;
  for (const auto& rec : records) {
    if (!fingerprints[rec.solute_smiles]) {
      out.rejects.push_back({rec.source_row, "SMILES parse failure: " + errors[rec.solute_smiles]});
      continue;
    }
    by_task[rec.task_key].push_back(&rec);
  }
  for (auto it = by_task.begin(); it != by_task.end();) {
    if (it->second.size() < options.min_rows_per_task) {
      ++out.dropped_tasks;
      it = by_task.erase(it);
    } else {
      ++it;
    }
  }

  std::set<std::string> used;
  for (const auto& [key, recs] : by_task)
    for (const auto* rec : recs) used.insert(rec->solute_smiles);
  std::vector<GraphletFingerprint> unique;
  unique.reserve(used.size());
  for (const auto& s : used) unique.push_back(*fingerprints[s]);
  out.vocab = build_vocabulary(unique, options.max_size);

  for (const auto& [key, recs] : by_task) {
    std::vector<GraphletFingerprint> rows;
    std::vector<std::string> ids;
    Task task;
    task.id = key;
    task.y.resize(static_cast<Eigen::Index>(recs.size()));
    for (std::size_t i = 0; i < recs.size(); ++i) {
      rows.push_back(*fingerprints[recs[i]->solute_smiles]);
      ids.push_back(recs[i]->solute_smiles);
      task.y[static_cast<Eigen::Index>(i)] = recs[i]->value;
      task.sample_ids.push_back(recs[i]->record_id);
    }
    task.X = featurize(rows, out.vocab, std::move(ids)).to_sparse();
    out.tasks.push_back(std::move(task));
  }
  return out;
}

struct ShotSplit {
  std::vector<Eigen::Index> train_indices;
  std::vector<Eigen::Index> test_indices;
  std::size_t n_shots = 0;
  std::uint64_t seed = 0;
};

/// Uniform sample of `n_shots` rows without replacement; the rest is the test set.
inline ShotSplit sample_shots(Eigen::Index rows, std::size_t n_shots, std::uint64_t seed) {
  if (static_cast<Eigen::Index>(n_shots) >= rows)
    throw std::invalid_argument("sample_shots: " + std::to_string(n_shots) + " shots need more than " +
                                std::to_string(rows) + " rows");
  const auto order = detail::shuffled_indices(rows, seed);
  ShotSplit split;
  split.n_shots = n_shots;
  split.seed = seed;
  split.train_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_shots));
  split.test_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(n_shots), order.end());
  std::sort(split.train_indices.begin(), split.train_indices.end());
  std::sort(split.test_indices.begin(), split.test_indices.end());
  return split;
}

inline ShotSplit sample_shots(const Task& task, std::size_t n_shots, std::uint64_t seed) {
  return sample_shots(task.rows(), n_shots, seed);
}

/// Deterministic train/test split by fraction (train gets round(fraction * n), at least 1).
inline ShotSplit train_test_split(Eigen::Index rows, double train_fraction, std::uint64_t seed) {
  if (rows < 2) throw std::invalid_argument("train_test_split: need at least two rows");
  auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows)));
  n_train = std::clamp<std::size_t>(n_train, 1, static_cast<std::size_t>(rows - 1));
  return sample_shots(rows, n_train, seed);
}

enum class SyntheticTarget { None, InSubspace, Orthogonal };

inline SyntheticTarget parse_synthetic_target(const std::string& s) {
  if (s == "none") return SyntheticTarget::None;
  if (s == "in" || s == "in_subspace") return SyntheticTarget::InSubspace;
  if (s == "orthogonal") return SyntheticTarget::Orthogonal;
  throw ConfigError("synthetic.target must be none, in or orthogonal");
}

struct SyntheticSpec {
  int dim = 50;
  int tasks = 8;
  int rank = 2;
  double noise = 0.1;
  int rows = 1000;
  std::uint64_t seed = 0;
  SyntheticTarget target = SyntheticTarget::None;
  int target_rows = 1000;
  bool identical_mixing = false;  // every task uses the same subspace weights
};

struct SyntheticData {
  std::vector<Task> tasks;  // support tasks, then "target" when requested
  std::vector<VectorXd> coefficients;
  MatrixXd basis;  // dim x rank
};

/// Tasks whose coefficients are basis * a_t with a shared dim x rank basis.
/// Features are standard normal; labels add Gaussian noise of width `noise`.
inline SyntheticData generate_synthetic_tasks(const SyntheticSpec& spec) {
  if (spec.dim < 1 || spec.rows < 1 || spec.tasks < 1 || spec.rank < 1 || spec.rank > spec.tasks ||
      spec.rank > spec.dim || spec.noise < 0.0 || spec.target_rows < 1)
    throw std::invalid_argument("generate_synthetic_tasks: invalid shape");

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
    MatrixXd m(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) m(i, j) = normal(rng);
    return m;
  };

  SyntheticData out;
  out.basis = gaussian(spec.dim, spec.rank) / std::sqrt(static_cast<double>(spec.dim));
  std::int64_t next_id = 0;

  auto make_task = [&](const std::string& id, const VectorXd& beta, int rows) {
    const MatrixXd X = gaussian(rows, spec.dim);
    VectorXd y = X * beta;
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] += spec.noise * normal(rng);
    Task task;
    task.id = id;
    task.X = X.sparseView();
    task.y = std::move(y);
    for (int i = 0; i < rows; ++i) task.sample_ids.push_back(next_id++);
    return task;
  };

  const VectorXd shared = gaussian(spec.rank, 1);
  for (int t = 0; t < spec.tasks; ++t) {
    const VectorXd a = spec.identical_mixing ? shared : VectorXd(gaussian(spec.rank, 1));
    VectorXd beta = out.basis * a;
    char name[32];
    std::snprintf(name, sizeof name, "task%02d", t);
    out.tasks.push_back(make_task(name, beta, spec.rows));
    out.coefficients.push_back(std::move(beta));
  }

  if (spec.target != SyntheticTarget::None) {
    VectorXd beta;
    if (spec.target == SyntheticTarget::InSubspace) {
      beta = out.basis * gaussian(spec.rank, 1);
    } else {
      Eigen::HouseholderQR<MatrixXd> qr(out.basis);
      const MatrixXd Q = qr.householderQ() * MatrixXd::Identity(spec.dim, spec.rank);
      VectorXd g = gaussian(spec.dim, 1);
      g -= Q * (Q.transpose() * g);
      beta = g * (std::sqrt(static_cast<double>(spec.rank)) / g.norm());
    }
    out.tasks.push_back(make_task("target", beta, spec.target_rows));
    out.coefficients.push_back(std::move(beta));
  }
  return out;
}

inline SyntheticSpec synthetic_spec_from_config(const Config& cfg) {
  SyntheticSpec s;
  s.dim = static_cast<int>(cfg.get_int("synthetic.dim", s.dim));
  s.tasks = static_cast<int>(cfg.get_int("synthetic.tasks", s.tasks));
  s.rank = static_cast<int>(cfg.get_int("synthetic.rank", s.rank));
  s.noise = cfg.get_double("synthetic.noise", s.noise);
  s.rows = static_cast<int>(cfg.get_int("synthetic.rows", s.rows));
  s.seed = static_cast<std::uint64_t>(cfg.get_int("synthetic.seed", 0));
  s.target = parse_synthetic_target(cfg.get_string("synthetic.target", "none"));
  s.target_rows = static_cast<int>(cfg.get_int("synthetic.target_rows", s.target_rows));
  return s;
}

}  // namespace lamel
