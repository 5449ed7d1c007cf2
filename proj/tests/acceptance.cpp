// Acceptance run: one PASS/FAIL/SKIP line per criterion; exit status 1 on any FAIL.

#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

#include "lamel/analysis.hpp"
#include "lamel/experiment.hpp"
#include "lamel/graphlets.hpp"
#include "lamel/lamel.hpp"
#include "lamel/linmodel.hpp"
#include "lamel/molgraph.hpp"
#include "lamel/taskdata.hpp"
#include "oracles.hpp"

using namespace lamel;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

Outcome pass(std::string d) { return {Status::Pass, std::move(d)}; }
Outcome fail(std::string d) { return {Status::Fail, std::move(d)}; }
Outcome skip(std::string d) { return {Status::Skip, std::move(d)}; }

std::string num(double v, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

VectorXd gaussian(Eigen::Index r, std::mt19937_64& rng) { return gaussian(r, 1, rng).col(0); }

std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

std::string serialized(const GraphletFingerprint& fp) {
  const auto vocab = build_vocabulary({fp});
  std::ostringstream os;
  write_sparse(os, featurize({fp}, vocab), vocab);
  return os.str();
}

// --- graphlets ----------------------------------------------------------------

Outcome graphlet_oracle() {
  std::mt19937_64 rng(2024);
  const auto& pool = oracle::smiles_pool();
  int checked = 0;
  for (int i = 0; i < 25; ++i) {
    const std::string& smiles = pool[rng() % pool.size()];
    const auto base = parse_smiles(smiles);
    const auto mol = permute_atoms(base, random_permutation(base.atoms.size(), rng));
    for (int size : {3, 5}) {
      std::string why;
      if (!oracle::fingerprint_matches(enumerate_graphlets(mol, size), oracle::brute_force_graphlets(mol, size), &why))
        return fail(smiles + " at size " + std::to_string(size) + ": " + why);
      ++checked;
    }
  }
  return pass(std::to_string(checked) + " molecule/size pairs exact");
}

Outcome permutation_invariance() {
  std::mt19937_64 rng(99);
  const auto& pool = oracle::smiles_pool();
  int relabelings = 0;
  for (int m = 0; m < 10; ++m) {
    const std::string& smiles = pool[(m * 7 + 3) % pool.size()];
    const auto mol = parse_smiles(smiles);
    const std::string ref = serialized(enumerate_graphlets(mol, 5));
    for (int r = 0; r < 10; ++r) {
      const auto perm = permute_atoms(mol, random_permutation(mol.atoms.size(), rng));
      if (serialized(enumerate_graphlets(perm, 5)) != ref) return fail(smiles + " relabeling " + std::to_string(r));
      ++relabelings;
    }
  }
  return pass(std::to_string(relabelings) + " relabelings byte-identical");
}

Outcome count_identities() {
  for (const auto& s : oracle::smiles_pool()) {
    const auto mol = parse_smiles(s);
    const auto fp = enumerate_graphlets(mol, 3);
    if (fp.total_of_size(1) != static_cast<std::int64_t>(mol.atoms.size())) return fail(s + ": size-1 total");
    if (fp.total_of_size(2) != static_cast<std::int64_t>(mol.bonds.size())) return fail(s + ": size-2 total");
  }
  return pass(std::to_string(oracle::smiles_pool().size()) + " molecules");
}

// --- ridge --------------------------------------------------------------------

double normal_residual(const MatrixXd& X, const VectorXd& y, const Coefficients& c, double lambda, bool intercept) {
  const Eigen::Index p = X.cols() + (intercept ? 1 : 0);
  MatrixXd A = MatrixXd::Zero(X.rows(), p);
  A.leftCols(X.cols()) = X;
  if (intercept) A.col(X.cols()).setOnes();
  MatrixXd lhs = A.transpose() * A;
  for (Eigen::Index j = 0; j < X.cols(); ++j) lhs(j, j) += lambda;
  VectorXd theta(p);
  theta.head(X.cols()) = c.beta;
  if (intercept) theta[X.cols()] = c.intercept;
  const VectorXd rhs = A.transpose() * y;
  return (lhs * theta - rhs).norm() / rhs.norm();
}

Outcome ridge_correctness() {
  std::mt19937_64 rng(7);
  const std::vector<double> lambdas{1e-3, 0.1, 1.0, 10.0};
  double worst = 0.0;
  int primal = 0, dual = 0;
  for (int i = 0; i < 50; ++i) {
    const bool wide = i % 2 == 1;
    const Eigen::Index n = wide ? 12 : 60, V = wide ? 80 : 15;
    const MatrixXd X = gaussian(n, V, rng);
    const VectorXd y = gaussian(n, rng);
    const double lambda = lambdas[static_cast<std::size_t>(i) % lambdas.size()];
    const bool intercept = (i / 2) % 2 == 0;
    const auto c = ridge_fit(X, y, {lambda, intercept, false});
    worst = std::max(worst, normal_residual(X, y, c, lambda, intercept));
    (wide ? dual : primal)++;

    const auto sparse = ridge_fit(SparseMatrix(X.sparseView()), y, {lambda, intercept, false});
    worst = std::max(worst, normal_residual(X, y, sparse, lambda, intercept));
  }
  if (worst > 1e-8) return fail("normal-equation residual " + num(worst));

  double shift = 0.0;
  for (int i = 0; i < 20; ++i) {
    const Eigen::Index n = i % 2 ? 10 : 50, V = i % 2 ? 40 : 8;
    const MatrixXd X = gaussian(n, V, rng);
    const VectorXd y = gaussian(n, rng);
    Coefficients origin{gaussian(V, rng), 0.0, false};
    const RidgeConfig cfg{0.5, i % 3 != 0, false};
    const auto a = ridge_fit_with_origin(X, y, origin, cfg);
    auto b = ridge_fit(X, y - X * origin.beta, cfg);
    b.beta += origin.beta;
    shift = std::max({shift, (a.beta - b.beta).cwiseAbs().maxCoeff(), std::abs(a.intercept - b.intercept)});
  }
  if (shift > 1e-10) return fail("shift identity deviation " + num(shift));

  for (int i = 0; i < 10; ++i) {
    const Eigen::Index n = i % 2 ? 10 : 40, V = i % 2 ? 50 : 10;
    const MatrixXd X = gaussian(n, V, rng);
    const VectorXd y = gaussian(n, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (double lambda : default_lambda_grid()) {
      const double norm = ridge_fit(X, y, {lambda, i % 2 == 0, false}).beta.norm();
      if (norm > previous * (1.0 + 1e-12)) return fail("shrinkage not monotone at lambda " + num(lambda));
      previous = norm;
    }
  }
  return pass("residual " + num(worst, 3) + " over " + std::to_string(primal) + " primal + " + std::to_string(dual) +
              " dual problems; shift " + num(shift, 3) + "; shrinkage monotone over 13 penalties");
}

// --- meta-learner -------------------------------------------------------------

SupportEnsemble random_ensemble(int T, Eigen::Index V, std::mt19937_64& rng) {
  std::vector<SupportModel> models;
  std::normal_distribution<double> n(0.0, 1.0);
  for (int t = 0; t < T; ++t) models.push_back({"t" + std::to_string(t), Coefficients{gaussian(V, rng), n(rng), false}, 1.0});
  return make_ensemble(models);
}

Outcome meta_invariants() {
  std::mt19937_64 rng(11);
  double row_sum = 0.0, span = 0.0, collapse = 0.0;
  for (int rep = 0; rep < 40; ++rep) {
    const int T = 1 + rep % 8;
    const Eigen::Index V = 10 + rep % 30, n = 5 + rep % 25;
    const auto ens = random_ensemble(T, V, rng);
    const MatrixXd X = gaussian(n, V, rng);
    const VectorXd y = gaussian(n, rng);
    row_sum = std::max(row_sum, meta_features(ens, X).chi.rowwise().sum().cwiseAbs().maxCoeff());
    const auto m = fit(ens, X, y);
    if (m.beta_star.beta != m.beta_parallel.beta + m.beta_perp.beta || m.beta_star.intercept != m.beta_perp.intercept)
      return fail("decomposition not exact");
    span = std::max(span, span_residual(ens, m.beta_parallel.beta - ens.mean_model.beta));
    if (T == 1) {
      MetaPolicy fixed;
      fixed.parallel.fixed = 1.0;
      fixed.perpendicular.fixed = 0.3;
      const auto one = fit(ens, X, y, fixed);
      const auto ref = ridge_fit_with_origin(X, y, ens.mean_model, {0.3, true, false});
      collapse = std::max({collapse, (one.beta_star.beta - ref.beta).cwiseAbs().maxCoeff(),
                           std::abs(one.beta_star.intercept - ref.intercept)});
    }
  }
  if (row_sum > 1e-10) return fail("meta-feature row sum " + num(row_sum));
  if (span > 1e-8) return fail("in-span residual " + num(span));
  if (collapse > 1e-8) return fail("single-task collapse deviation " + num(collapse));
  return pass("row sums " + num(row_sum, 3) + ", span residual " + num(span, 3) + ", collapse " + num(collapse, 3));
}

// --- synthetic benchmarks -----------------------------------------------------

SyntheticSpec benchmark_spec(SyntheticTarget target, std::uint64_t seed) {
  SyntheticSpec spec;  // 50 features, 8 tasks, rank 2, noise 0.1
  spec.target = target;
  spec.seed = seed;
  return spec;
}

struct ShotMeans {
  std::map<std::size_t, double> improvement, mae_meta, mae_regular;
};

ShotMeans run_benchmark(SyntheticTarget target, const std::vector<std::size_t>& shots) {
  ShotMeans out;
  std::map<std::size_t, int> count;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto data = generate_synthetic_tasks(benchmark_spec(target, seed));
    ExperimentConfig cfg;
    cfg.shots = shots;
    cfg.seeds = {seed};
    cfg.target = "target";
    for (const auto& r : run_experiment(data.tasks, cfg).rows) {
      out.improvement[r.n_shots] += r.rel_improvement;
      out.mae_meta[r.n_shots] += r.mae_meta;
      out.mae_regular[r.n_shots] += r.mae_regular;
      ++count[r.n_shots];
    }
  }
  for (auto& [k, v] : out.improvement) v /= count[k];
  for (auto& [k, v] : out.mae_meta) v /= count[k];
  for (auto& [k, v] : out.mae_regular) v /= count[k];
  return out;
}

Outcome synthetic_benefit() {
  const auto m = run_benchmark(SyntheticTarget::InSubspace, {10, 200});
  const double at10 = m.improvement.at(10), at200 = m.improvement.at(200);
  const std::string d = "mean improvement " + num(at10) + "% at 10 shots, " + num(at200) + "% at 200 shots";
  if (!(at10 >= 20.0)) return fail(d);
  if (!(at200 < at10)) return fail(d);
  return pass(d);
}

Outcome negative_transfer() {
  const auto m = run_benchmark(SyntheticTarget::Orthogonal, {10});
  const double ratio = m.mae_meta.at(10) / m.mae_regular.at(10);
  const std::string d = "MAE meta/regular " + num(ratio) + " at 10 shots";
  return ratio <= 1.15 ? pass(d) : fail(d);
}

Outcome support_subsample() {
  auto spec = benchmark_spec(SyntheticTarget::InSubspace, 0);
  spec.rows = 10000;
  const auto data = generate_synthetic_tasks(spec);
  ExperimentConfig cfg;
  cfg.shots = {10};
  cfg.seeds = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  cfg.target = "target";
  cfg.support_subsample = {10, 1000};  // rows per support task
  std::map<std::size_t, double> mae;
  for (const auto& r : run_experiment(data.tasks, cfg).rows) mae[r.support_rows] += r.mae_meta / 10.0;
  const double full = mae.at(0), mid = mae.at(1000), tiny = mae.at(10);
  const std::string d = "mean MAE full " + num(full) + ", 1000 rows " + num(mid) + ", 10 rows " + num(tiny);
  if (std::abs(mid - full) > 0.1 * full) return fail(d);
  if (!(tiny > mid)) return fail(d);
  return pass(d);
}

// --- CLI ----------------------------------------------------------------------

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome determinism(const std::string& cli, const std::string& samples) {
  if (cli.empty()) return skip("CLI path not provided");
  const fs::path root = fs::temp_directory_path() / ("lamel_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  std::vector<fs::path> dirs;
  for (const char* name : {"a", "b"}) {
    const fs::path log = root / (std::string(name) + ".out");
    const std::string cmd = "\"" + cli + "\" experiment --config \"" + samples + "/synthetic.cfg\" --out \"" +
                            (root / name).string() + "\" >\"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
      fs::remove_all(root);
      return fail("experiment exited with status " + std::to_string(status));
    }
    const std::string out = slurp(log);
    dirs.emplace_back(out.substr(0, out.find('\n')));
  }
  const std::string a = slurp(dirs[0] / "raw.csv"), b = slurp(dirs[1] / "raw.csv");
  fs::remove_all(root);
  if (a.empty()) return fail("raw.csv missing");
  if (a != b) return fail("raw.csv differs between runs");
  return pass("raw.csv identical (" + std::to_string(a.size()) + " bytes)");
}

// --- data-gated ---------------------------------------------------------------

Config preset_config(const std::string& preset, const std::string& path) {
  Config cfg;
  cfg.set("preset", preset);
  cfg.set("data_path", path);
  return apply_preset(cfg);
}

Outcome boobier(const char* path) {
  if (!path || !*path) return skip("set LAMEL_BOOBIER_CSV to check dataset vocabulary and task sizes");
  const Config cfg = preset_config("boobier", path);
  const auto loaded = load_records(path, Schema::from_config(cfg));
  const auto counts = task_row_counts(loaded.records);
  const std::map<std::string, std::size_t> expected_rows{
      {"water", 1432}, {"ethanol", 695}, {"benzene", 464}, {"acetone", 452}};
  std::ostringstream d;
  bool ok = true;
  for (const auto& [task, n] : expected_rows) {
    const auto it = counts.find(task);
    const std::size_t got = it == counts.end() ? 0 : it->second;
    d << task << ' ' << got << ' ';
    ok = ok && got == n;
  }
  const std::map<int, std::size_t> expected_vocab{{3, 319}, {5, 4992}, {7, 57346}};
  for (const auto& [size, n] : expected_vocab) {
    AssembleOptions opt;
    opt.max_size = size;
    const auto assembled = assemble_tasks(loaded.records, opt);
    d << "V" << size << ' ' << assembled.vocab.size() << ' ';
    ok = ok && assembled.vocab.size() == n;
  }
  return ok ? pass(d.str()) : fail(d.str());
}

Outcome bigsoldb(const char* path) {
  if (!path || !*path) return skip("set LAMEL_BIGSOLDB_CSV to check task counts and similarity correlation");
  Config cfg = preset_config("bigsoldb", path);
  const auto loaded = load_records(path, Schema::from_config(cfg));
  const auto kept = filter_temperature_window(loaded.records);
  std::ostringstream d;
  bool ok = true;
  const std::map<std::size_t, std::size_t> expected{{20, 50}, {100, 27}, {200, 14}, {500, 9}};
  for (const auto& [min_rows, n] : expected) {
    const auto got = count_tasks_with_min_rows(kept, min_rows);
    d << ">=" << min_rows << ": " << got << " tasks; ";
    ok = ok && got == n;
  }
  const Dataset data = load_dataset(cfg);
  const auto ecfg = experiment_config_from(cfg);
  const auto run = run_similarity(data, 5, SupportPolicy{ecfg.support_lambda, ecfg.fit_intercept});
  const double r = run.study.pearson_r.value_or(std::numeric_limits<double>::quiet_NaN());
  d << "Pearson R " << num(r);
  ok = ok && std::abs(r - 0.60) <= 0.05;
  return ok ? pass(d.str()) : fail(d.str());
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";
  const std::string samples = argc > 2 ? argv[2] : "samples";

  struct Criterion {
    std::string name;
    double budget_seconds;  // 0: no runtime budget
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {"graphlet-oracle", 30, graphlet_oracle},
      {"permutation-invariance", 0, permutation_invariance},
      {"count-identities", 0, count_identities},
      {"ridge-correctness", 10, ridge_correctness},
      {"meta-invariants", 10, meta_invariants},
      {"synthetic-benefit", 60, synthetic_benefit},
      {"negative-transfer", 60, negative_transfer},
      {"support-subsample", 120, support_subsample},
      {"determinism", 0, [&] { return determinism(cli, samples); }},
      {"boobier-dataset", 0, [] { return boobier(std::getenv("LAMEL_BOOBIER_CSV")); }},
      {"bigsoldb-dataset", 0, [] { return bigsoldb(std::getenv("LAMEL_BIGSOLDB_CSV")); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.check();
    } catch (const std::exception& e) {
      out = fail(std::string("exception: ") + e.what());
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (out.status == Status::Pass && c.budget_seconds > 0 && seconds > c.budget_seconds)
      out = fail(out.detail + "; over the " + num(c.budget_seconds) + " s budget");
    const char* label = out.status == Status::Pass ? "PASS" : out.status == Status::Fail ? "FAIL" : "SKIP";
    if (out.status == Status::Fail) ++failures;
    std::cout << label << "  " << c.name << "  " << out.detail << "  [" << num(seconds, 3) << " s]" << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
