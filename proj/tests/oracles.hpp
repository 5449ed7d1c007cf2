#pragma once

// Reference implementations used only by tests. They share no code with the
// library beyond the molecule parser, and favor obviousness over speed.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "lamel/graphlets.hpp"
#include "lamel/molgraph.hpp"

namespace oracle {

// Small labeled graph with bond orders; 0 = no edge.
struct Graph {
  std::vector<std::string> labels;
  std::vector<std::vector<int>> adj;

  int size() const { return static_cast<int>(labels.size()); }
};

inline std::string atom_label(const lamel::Atom& a) {
  std::string s = a.element;
  if (a.formal_charge > 0) s += '+';
  if (a.formal_charge < 0) s += '-';
  if (std::abs(a.formal_charge) > 1) s += std::to_string(std::abs(a.formal_charge));
  return s;
}

inline Graph induced(const lamel::MolecularGraph& mol, const std::vector<int>& vertices) {
  Graph g;
  const int n = static_cast<int>(vertices.size());
  g.adj.assign(n, std::vector<int>(n, 0));
  for (int v : vertices) g.labels.push_back(atom_label(mol.atoms[v]));
  for (const auto& b : mol.bonds) {
    const auto ia = std::find(vertices.begin(), vertices.end(), static_cast<int>(b.a));
    const auto ib = std::find(vertices.begin(), vertices.end(), static_cast<int>(b.b));
    if (ia == vertices.end() || ib == vertices.end()) continue;
    const int i = static_cast<int>(ia - vertices.begin()), j = static_cast<int>(ib - vertices.begin());
    g.adj[i][j] = g.adj[j][i] = static_cast<int>(b.order);
  }
  return g;
}

inline bool connected(const Graph& g) {
  if (g.size() == 0) return false;
  std::vector<bool> seen(g.size(), false);
  std::vector<int> stack{0};
  seen[0] = true;
  int count = 1;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int u = 0; u < g.size(); ++u)
      if (g.adj[v][u] && !seen[u]) {
        seen[u] = true;
        ++count;
        stack.push_back(u);
      }
  }
  return count == g.size();
}

// Label- and bond-order-preserving isomorphism by plain backtracking.
inline bool isomorphic(const Graph& a, const Graph& b) {
  const int n = a.size();
  if (n != b.size()) return false;
  auto sorted = [](std::vector<std::string> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  if (sorted(a.labels) != sorted(b.labels)) return false;
  std::vector<int> map(n, -1);
  std::vector<bool> used(n, false);
  auto extend = [&](auto&& self, int i) -> bool {
    if (i == n) return true;
    for (int j = 0; j < n; ++j) {
      if (used[j] || a.labels[i] != b.labels[j]) continue;
      bool ok = true;
      for (int k = 0; k < i && ok; ++k) ok = a.adj[i][k] == b.adj[j][map[k]];
      if (!ok) continue;
      map[i] = j;
      used[j] = true;
      if (self(self, i + 1)) return true;
      used[j] = false;
    }
    return false;
  };
  return extend(extend, 0);
}

// Parses the library's text form `L0,L1,...;i-j,k=l` back into a graph.
inline Graph decode_form(const std::string& form) {
  const auto semi = form.find(';');
  if (semi == std::string::npos) throw std::invalid_argument("form without ';': " + form);
  Graph g;
  std::string item;
  for (std::size_t i = 0; i <= semi; ++i) {
    if (i == semi || form[i] == ',') {
      g.labels.push_back(item);
      item.clear();
    } else {
      item += form[i];
    }
  }
  const int n = g.size();
  g.adj.assign(n, std::vector<int>(n, 0));
  std::size_t pos = semi + 1;
  while (pos < form.size()) {
    std::size_t end = form.find(',', pos);
    if (end == std::string::npos) end = form.size();
    const std::string edge = form.substr(pos, end - pos);
    const auto sym = edge.find_first_of("-=#:");
    const int i = std::stoi(edge.substr(0, sym)), j = std::stoi(edge.substr(sym + 1));
    const int order = std::string("-=#:").find(edge[sym]) + 1;
    g.adj[i][j] = g.adj[j][i] = order;
    pos = end + 1;
  }
  return g;
}

struct ClassCount {
  Graph representative;
  std::int64_t count = 0;
};

// All connected vertex subsets of size 1..max_size, bucketed by isomorphism.
inline std::vector<ClassCount> brute_force_graphlets(const lamel::MolecularGraph& mol, int max_size,
                                                     std::vector<std::vector<int>>* subsets = nullptr) {
  std::vector<ClassCount> classes;
  const int n = static_cast<int>(mol.atoms.size());
  std::vector<int> pick;
  auto visit = [&](auto&& self, int start) -> void {
    if (!pick.empty()) {
      const Graph g = induced(mol, pick);
      if (connected(g)) {
        if (subsets) subsets->push_back(pick);
        bool found = false;
        for (auto& c : classes)
          if (isomorphic(c.representative, g)) {
            ++c.count;
            found = true;
            break;
          }
        if (!found) classes.push_back({g, 1});
      }
    }
    if (static_cast<int>(pick.size()) == max_size) return;
    for (int v = start; v < n; ++v) {
      pick.push_back(v);
      self(self, v + 1);
      pick.pop_back();
    }
  };
  visit(visit, 0);
  return classes;
}

// True when every fingerprint class decodes to a graph isomorphic to exactly
// one oracle class with the same count, and no oracle class is left over.
inline bool fingerprint_matches(const lamel::GraphletFingerprint& fp, const std::vector<ClassCount>& classes,
                                std::string* why = nullptr) {
  auto fail = [&](const std::string& msg) {
    if (why) *why = msg;
    return false;
  };
  if (fp.counts.size() != classes.size())
    return fail("class count " + std::to_string(fp.counts.size()) + " vs oracle " + std::to_string(classes.size()));
  std::vector<bool> used(classes.size(), false);
  for (const auto& [key, count] : fp.counts) {
    const Graph g = decode_form(key.canonical_form);
    int hits = 0;
    std::size_t hit = 0;
    for (std::size_t i = 0; i < classes.size(); ++i)
      if (isomorphic(g, classes[i].representative)) {
        ++hits;
        hit = i;
      }
    if (hits != 1) return fail(key.canonical_form + " matches " + std::to_string(hits) + " oracle classes");
    if (used[hit]) return fail(key.canonical_form + " duplicates an oracle class");
    used[hit] = true;
    if (classes[hit].count != count)
      return fail(key.canonical_form + " count " + std::to_string(count) + " vs oracle " +
                  std::to_string(classes[hit].count));
  }
  return true;
}

// Ridge with optional unpenalized intercept via Gaussian elimination with
// partial pivoting on the full normal equations.
struct RidgeSolution {
  std::vector<double> beta;
  double intercept = 0.0;
};

inline std::vector<double> gauss_solve(std::vector<std::vector<double>> A, std::vector<double> b) {
  const std::size_t n = b.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(A[r][col]) > std::abs(A[pivot][col])) pivot = r;
    if (A[pivot][col] == 0.0) throw std::runtime_error("singular system");
    std::swap(A[col], A[pivot]);
    std::swap(b[col], b[pivot]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = A[r][col] / A[col][col];
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) A[r][c] -= f * A[col][c];
      b[r] -= f * b[col];
    }
  }
  std::vector<double> x(n);
  for (std::size_t i = n; i-- > 0;) {
    double s = b[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= A[i][c] * x[c];
    x[i] = s / A[i][i];
  }
  return x;
}

inline RidgeSolution ridge(const std::vector<std::vector<double>>& X, const std::vector<double>& y, double lambda,
                           bool intercept) {
  const std::size_t n = X.size(), p = X.empty() ? 0 : X[0].size();
  const std::size_t m = p + (intercept ? 1 : 0);
  std::vector<std::vector<double>> A(m, std::vector<double>(m, 0.0));
  std::vector<double> b(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row = X[i];
    if (intercept) row.push_back(1.0);
    for (std::size_t r = 0; r < m; ++r) {
      b[r] += row[r] * y[i];
      for (std::size_t c = 0; c < m; ++c) A[r][c] += row[r] * row[c];
    }
  }
  for (std::size_t j = 0; j < p; ++j) A[j][j] += lambda;
  auto x = gauss_solve(A, b);
  RidgeSolution out;
  out.beta.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(p));
  if (intercept) out.intercept = x[p];
  return out;
}

// Fixed pool of small molecules (at most 12 heavy atoms) covering rings,
// aromaticity, charges, multiple bonds and heteroatoms.
inline const std::vector<std::string>& smiles_pool() {
  static const std::vector<std::string> pool{
      "C",          "CC",          "CCO",          "CC(=O)C",      "C1CC1",        "c1ccccc1",
      "Cc1ccccc1",  "CC#N",        "OC(=O)CC",     "C[N+](C)(C)C", "CC(C)(C)O",    "c1ccncc1",
      "O=C=O",      "C1CCOC1",     "CS(=O)C",      "ClC(Cl)Cl",    "CCOC(=O)C",    "c1ccoc1",
      "NCC(=O)O",   "C=CC=C",      "CC(=O)[O-]",   "FC(F)(F)C",    "C1CCCCC1",     "OCCO",
      "CN(C)C=O",   "c1ccsc1",     "CC(C)C(C)C",   "BrCCBr",       "N#CC#N",       "C1=CCC=C1",
      "OC1CCCC1",   "CCCCCCCC",    "c1cc[nH]c1",   "CC(N)C(=O)O",  "O=S(=O)(O)O",  "CCN(CC)CC"};
  return pool;
}

}  // namespace oracle
