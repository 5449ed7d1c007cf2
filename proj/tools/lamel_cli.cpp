// lamel: featurize molecules, fit ridge and meta models, run few-shot
// experiments and task-similarity studies.
//
// Exit codes: 0 success, 1 runtime failure, 2 empty or invalid input.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lamel/analysis.hpp"
#include "lamel/config.hpp"
#include "lamel/csv.hpp"
#include "lamel/experiment.hpp"
#include "lamel/graphlets.hpp"
#include "lamel/lamel.hpp"
#include "lamel/linmodel.hpp"
#include "lamel/molgraph.hpp"
#include "lamel/taskdata.hpp"

namespace fs = std::filesystem;
using namespace lamel;

namespace {

constexpr int kRuntimeFailure = 1;
constexpr int kBadInput = 2;

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  return in;
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (const auto& s : items) out += (out.empty() ? "" : ",") + s;
  return out;
}

template <class T>
std::string join_numbers(const std::vector<T>& items) {
  std::vector<std::string> s;
  for (auto v : items) s.push_back(std::to_string(v));
  return join(s);
}

struct FeatureInput {
  SparseMatrix X;
  std::size_t rows = 0;
};

FeatureInput read_features(const std::string& path) {
  auto in = open_input(path);
  auto [m, vocab] = read_sparse(in);
  if (m.rows == 0) throw InputError(path + ": feature matrix has no rows");
  return {m.to_sparse(), m.rows};
}

VectorXd read_labels(const std::string& path, const std::string& column, std::size_t expected) {
  auto in = open_input(path);
  const auto records = csv::read(in);
  if (records.size() < 2) throw InputError(path + ": no label rows");
  const auto& header = records.front().fields;
  const auto it = std::find(header.begin(), header.end(), column);
  if (it == header.end()) throw InputError(path + ": missing column '" + column + "'");
  const auto col = static_cast<std::size_t>(it - header.begin());
  VectorXd y(static_cast<Eigen::Index>(records.size() - 1));
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i].fields;
    if (col >= f.size()) throw InputError(path + ": short row at line " + std::to_string(records[i].line));
    try {
      y[static_cast<Eigen::Index>(i - 1)] = parse_double(detail::trim(f[col]));
    } catch (const std::invalid_argument&) {
      throw InputError(path + ": non-numeric label at line " + std::to_string(records[i].line));
    }
  }
  if (static_cast<std::size_t>(y.size()) != expected)
    throw InputError(path + ": " + std::to_string(y.size()) + " labels for " + std::to_string(expected) + " rows");
  return y;
}

LambdaPolicy lambda_from_flag(const std::string& flag) {
  LambdaPolicy p;
  p.folds = kLeaveOneOut;
  if (flag != "auto") {
    try {
      p.fixed = parse_double(flag);
    } catch (const std::invalid_argument&) {
      throw InputError("--lambda must be a number or 'auto'");
    }
    if (*p.fixed < 0.0) throw InputError("--lambda must be >= 0");
  }
  return p;
}

// --- fingerprint --------------------------------------------------------------

struct FingerprintArgs {
  std::string input;
  std::string out = "features";
  std::string smiles_col = "smiles";
  std::string id_col;
  int max_size = 5;
  bool dense = false;
  bool no_hydrogens = false;
};

int cmd_fingerprint(const FingerprintArgs& a) {
  if (a.max_size < 1 || a.max_size > kMaxGraphletSize)
    throw InputError("--max-size must be between 1 and " + std::to_string(kMaxGraphletSize));
  auto in = open_input(a.input);
  const auto records = csv::read(in);
  if (records.size() < 2) throw InputError(a.input + ": no molecules");
  const auto& header = records.front().fields;
  const auto smiles_col = detail::column_index(header, a.smiles_col);
  const auto id_col = a.id_col.empty() ? std::string::npos : detail::column_index(header, a.id_col);

  std::vector<GraphletFingerprint> fps;
  std::vector<std::string> ids, smiles;
  std::size_t rejected = 0;
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& f = records[i].fields;
    const std::string s = smiles_col < f.size() ? detail::trim(f[smiles_col]) : std::string{};
    try {
      if (s.empty()) throw SmilesError("empty SMILES", 0);
      fps.push_back(enumerate_graphlets(parse_smiles(s, !a.no_hydrogens), a.max_size));
    } catch (const SmilesError& e) {
      ++rejected;
      std::cerr << "line " << records[i].line << ": rejected: " << e.what() << '\n';
      continue;
    }
    ids.push_back(id_col != std::string::npos && id_col < f.size() ? f[id_col] : std::to_string(i - 1));
    smiles.push_back(s);
  }
  if (rejected) std::cerr << rejected << " of " << records.size() - 1 << " rows rejected\n";
  if (fps.empty()) throw InputError(a.input + ": no parseable molecules");

  const auto vocab = build_vocabulary(fps);
  const auto matrix = featurize(fps, vocab, ids);
  const fs::path out(a.out);
  {
    auto os = open_output(out / "features.txt");
    write_sparse(os, matrix, vocab);
  }
  {
    auto os = open_output(out / "rows.csv");
    csv::write_row(os, {"row", "id", "smiles"});
    for (std::size_t r = 0; r < ids.size(); ++r) csv::write_row(os, {std::to_string(r), ids[r], smiles[r]});
  }
  if (a.dense) {
    auto os = open_output(out / "features.csv");
    write_dense_csv(os, matrix, vocab);
  }
  std::cout << "rows " << matrix.rows << " vocabulary " << vocab.size() << " max_size " << a.max_size << '\n';
  return 0;
}

// --- fit / predict / meta -------------------------------------------------------

struct FitArgs {
  std::string features, labels, label_col = "value", lambda = "auto", out = "model.txt";
  bool no_intercept = false;
};

int cmd_fit(const FitArgs& a) {
  const auto f = read_features(a.features);
  const VectorXd y = read_labels(a.labels, a.label_col, f.rows);
  RidgeConfig cfg{0.0, !a.no_intercept, false};
  cfg.lambda = choose_lambda(f.X, y, lambda_from_flag(a.lambda), cfg);
  const Coefficients coef = ridge_fit(f.X, y, cfg);
  auto os = open_output(a.out);
  write_coefficients(os, coef);
  std::cout << "lambda " << format_double(cfg.lambda) << '\n';
  return 0;
}

Coefficients load_model(const std::string& path) {
  auto in = open_input(path);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const auto j = nlohmann::json::parse(text);
    if (j.contains("beta_star")) return meta_model_from_json(j).beta_star;
    return coefficients_from_json(j);
  }
  std::istringstream is(text);
  return read_coefficients(is);
}

struct PredictArgs {
  std::string features, model, out = "predictions.csv";
};

int cmd_predict(const PredictArgs& a) {
  const auto f = read_features(a.features);
  const Coefficients coef = load_model(a.model);
  if (coef.beta.size() != f.X.cols())
    throw InputError("model dimension " + std::to_string(coef.beta.size()) + " differs from feature columns " +
                     std::to_string(f.X.cols()));
  const VectorXd pred = predict(f.X, coef);
  auto os = open_output(a.out);
  csv::write_row(os, {"row", "prediction"});
  for (Eigen::Index i = 0; i < pred.size(); ++i) csv::write_row(os, {std::to_string(i), format_double(pred[i])});
  return 0;
}

struct MetaArgs {
  std::string features, labels, label_col = "value", out = "meta.json";
  std::vector<std::string> support;
  bool no_intercept = false;
};

int cmd_meta(const MetaArgs& a) {
  if (a.support.empty()) throw InputError("--support needs at least one model file");
  const auto f = read_features(a.features);
  const VectorXd y = read_labels(a.labels, a.label_col, f.rows);
  std::vector<SupportModel> models;
  for (const auto& path : a.support) {
    Coefficients coef = load_model(path);
    if (coef.beta.size() != f.X.cols()) throw InputError(path + ": dimension differs from feature columns");
    models.push_back({fs::path(path).stem().string(), std::move(coef), 0.0});
  }
  MetaPolicy policy;
  policy.fit_intercept = !a.no_intercept;
  const MetaModel model = fit(make_ensemble(std::move(models)), f.X, y, policy);
  auto os = open_output(a.out);
  os << to_json(model).dump(2) << '\n';
  std::cout << "lambda_parallel " << format_double(model.lambda_parallel) << " lambda_perp "
            << format_double(model.lambda_perp) << '\n';
  return 0;
}

// --- experiment / similarity ------------------------------------------------------

struct RunArgs {
  std::string config;
  std::string out;
  std::string target;
  std::vector<long long> shots, seeds, support_subsample;
  long long max_size = -1;
  long long min_rows = -1;
  int jobs = 0;
};

Config load_run_config(const RunArgs& a) {
  Config cfg;
  if (!a.config.empty()) {
    auto in = open_input(a.config);
    cfg = Config::parse(in);
  }
  if (!a.shots.empty()) cfg.set("shots", join_numbers(a.shots));
  if (!a.seeds.empty()) cfg.set("seeds", join_numbers(a.seeds));
  if (!a.support_subsample.empty()) cfg.set("support_subsample", join_numbers(a.support_subsample));
  if (!a.target.empty()) cfg.set("target", a.target);
  if (a.max_size >= 0) cfg.set("max_size", std::to_string(a.max_size));
  if (a.min_rows >= 0) cfg.set("min_rows_per_task", std::to_string(a.min_rows));
  if (a.jobs > 0) cfg.set("jobs", std::to_string(a.jobs));
  if (!a.config.empty() && cfg.has("data_path")) {
    const fs::path data = cfg.get_string("data_path");
    if (data.is_relative()) cfg.set("data_path", (fs::path(a.config).parent_path() / data).lexically_normal().string());
  }
  return cfg;
}

fs::path run_directory(const Config& cfg, const RunArgs& a, const std::string& echo) {
  const std::string base = !a.out.empty() ? a.out : cfg.get_string("out", "results");
  return fs::path(base) / hex_digest(echo);
}

int cmd_experiment(const RunArgs& a) {
  const auto started = std::chrono::steady_clock::now();
  const Config cfg = load_run_config(a);
  const ExperimentConfig ecfg = experiment_config_from(cfg);
  const Dataset data = load_dataset(cfg);
  if (data.rejected_rows) std::cerr << data.rejected_rows << " input rows rejected\n";
  if (data.dropped_tasks) std::cerr << data.dropped_tasks << " tasks below min_rows_per_task dropped\n";
  if (data.tasks.size() == 1) std::cerr << "single task: meta rows are degenerate\n";

  const ResultTable table = run_experiment(data.tasks, ecfg);
  for (const auto& n : table.notices) std::cerr << n << '\n';
  if (table.rows.empty()) throw InputError("no experiment rows produced");

  const std::string echo = result_echo(cfg);
  const fs::path dir = run_directory(cfg, a, echo);
  write_results(dir, table, echo);
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  {
    auto os = open_output(dir / "timing.txt");
    os << "seconds " << format_double(seconds) << '\n' << "tasks " << data.tasks.size() << '\n'
       << "vocabulary " << data.vocabulary_size << '\n';
  }
  std::cout << dir.string() << '\n';
  return 0;
}

int cmd_similarity(const RunArgs& a) {
  const Config cfg = load_run_config(a);
  const ExperimentConfig ecfg = experiment_config_from(cfg);
  const Dataset data = load_dataset(cfg);
  const int fp_size = static_cast<int>(apply_preset(cfg).get_int("similarity_max_size", 5));
  if (fp_size < 1 || fp_size > kMaxGraphletSize) throw ConfigError("similarity_max_size out of range");
  const SimilarityRun run = run_similarity(data, fp_size, SupportPolicy{ecfg.support_lambda, ecfg.fit_intercept},
                                             ecfg.support_train_fraction, ecfg.split_seed);
  if (!run.skipped_tasks.empty())
    std::cerr << "skipped tasks without molecule SMILES: " << join(run.skipped_tasks) << '\n';

  const std::string echo = result_echo(cfg) + "command = similarity\n";
  const fs::path dir = run_directory(cfg, a, echo);
  {
    auto os = open_output(dir / "fingerprint_similarity.csv");
    write_matrix_csv(os, run.study.fingerprint);
  }
  {
    auto os = open_output(dir / "regression_similarity.csv");
    write_matrix_csv(os, run.study.regression);
  }
  {
    auto os = open_output(dir / "pairs.csv");
    write_pairs_csv(os, run.study);
  }
  {
    auto os = open_output(dir / "fit.csv");
    csv::write_row(os, {"pairs", "pearson_r", "slope", "offset"});
    csv::write_row(os, {std::to_string(run.study.pairs.size()),
                        run.study.pearson_r ? format_double(*run.study.pearson_r) : "nan",
                        detail::fmt(run.study.slope), detail::fmt(run.study.offset)});
  }
  {
    auto os = open_output(dir / "config-echo");
    os << "# lamel " << kVersion << '\n' << echo;
  }
  std::cout << dir.string() << '\n';
  return 0;
}

void add_run_flags(CLI::App* cmd, RunArgs& a) {
  cmd->add_option("--config", a.config, "Key = value config file");
  cmd->add_option("--out", a.out, "Output root; results go to <out>/<config digest>/");
  cmd->add_option("--target", a.target, "Target task id, or 'all'");
  cmd->add_option("--shots", a.shots, "Shot counts")->delimiter(',');
  cmd->add_option("--seeds", a.seeds, "Seeds")->delimiter(',');
  cmd->add_option("--support-subsample", a.support_subsample, "Rows kept per support task")->delimiter(',');
  cmd->add_option("--max-size", a.max_size, "Largest graphlet size");
  cmd->add_option("--min-rows", a.min_rows, "Minimum rows per task");
  cmd->add_option("--jobs", a.jobs, "Worker threads");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Few-shot molecular property regression with meta-learned linear models"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  FingerprintArgs fp;
  auto* c_fp = app.add_subcommand("fingerprint", "Graphlet-count features for a SMILES CSV");
  c_fp->add_option("input", fp.input, "CSV with a SMILES column")->required();
  c_fp->add_option("--out", fp.out, "Output directory");
  c_fp->add_option("--max-size", fp.max_size, "Largest graphlet size");
  c_fp->add_option("--smiles-col", fp.smiles_col, "SMILES column name");
  c_fp->add_option("--id-col", fp.id_col, "Row id column name");
  c_fp->add_flag("--dense", fp.dense, "Also write a dense features.csv");
  c_fp->add_flag("--no-hydrogens", fp.no_hydrogens, "Do not add hydrogen nodes");

  FitArgs fit_args;
  auto* c_fit = app.add_subcommand("fit", "Ridge fit on a feature file");
  c_fit->add_option("--features", fit_args.features)->required();
  c_fit->add_option("--labels", fit_args.labels, "CSV with a label column")->required();
  c_fit->add_option("--label-col", fit_args.label_col);
  c_fit->add_option("--lambda", fit_args.lambda, "Penalty, or 'auto' for leave-one-out selection");
  c_fit->add_flag("--no-intercept", fit_args.no_intercept);
  c_fit->add_option("--out", fit_args.out);

  PredictArgs pred;
  auto* c_pred = app.add_subcommand("predict", "Apply a ridge or meta model to a feature file");
  c_pred->add_option("--features", pred.features)->required();
  c_pred->add_option("--model", pred.model)->required();
  c_pred->add_option("--out", pred.out);

  MetaArgs meta;
  auto* c_meta = app.add_subcommand("meta", "Fit a meta model on target shots given support models");
  c_meta->add_option("--features", meta.features)->required();
  c_meta->add_option("--labels", meta.labels)->required();
  c_meta->add_option("--label-col", meta.label_col);
  c_meta->add_option("--support", meta.support, "Support model files")->required()->delimiter(',');
  c_meta->add_flag("--no-intercept", meta.no_intercept);
  c_meta->add_option("--out", meta.out);

  RunArgs exp_args;
  auto* c_exp = app.add_subcommand("experiment", "Leave-one-task-out few-shot experiment");
  add_run_flags(c_exp, exp_args);

  RunArgs sim_args;
  auto* c_sim = app.add_subcommand("similarity", "Task similarity study");
  add_run_flags(c_sim, sim_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kBadInput;
  }

  try {
    if (*c_fp) return cmd_fingerprint(fp);
    if (*c_fit) return cmd_fit(fit_args);
    if (*c_pred) return cmd_predict(pred);
    if (*c_meta) return cmd_meta(meta);
    if (*c_exp) return cmd_experiment(exp_args);
    if (*c_sim) return cmd_similarity(sim_args);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kBadInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
  return kRuntimeFailure;
}
