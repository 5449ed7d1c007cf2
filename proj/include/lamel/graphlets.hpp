#pragma once

// Graphlet fingerprints: every connected node-induced subgraph of a molecular
// graph up to a size cap is enumerated once per vertex subset (ESU-style
// extension) and assigned an exact canonical form. The canonical form is the
// lexicographically smallest labeled adjacency code over the leaves of an
// individualization-refinement search tree, so equal forms mean isomorphic
// labeled graphs. A 64-bit FNV-1a digest of the form serves as the compact key.

#include <algorithm>
#include <array>
#include <charconv>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/SparseCore>

#include "lamel/molgraph.hpp"

namespace lamel {

inline constexpr int kMaxGraphletSize = 12;

inline std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

struct CanonicalKey {
  std::uint64_t key = 0;
  std::string canonical_form;

  CanonicalKey() = default;
  explicit CanonicalKey(std::string form) : key(fnv1a64(form)), canonical_form(std::move(form)) {}
  CanonicalKey(std::uint64_t digest, std::string form)
      : key(digest), canonical_form(std::move(form)) {}

  /// Node count encoded in the form.
  int size() const {
    const auto semi = canonical_form.find(';');
    const std::string_view nodes = std::string_view(canonical_form).substr(0, semi);
    return nodes.empty() ? 0 : static_cast<int>(std::count(nodes.begin(), nodes.end(), ',')) + 1;
  }

  /// Smaller graphlets first, then by form text.
  std::strong_ordering operator<=>(const CanonicalKey& other) const {
    if (auto c = size() <=> other.size(); c != 0) return c;
    if (auto c = canonical_form <=> other.canonical_form; c != 0) return c;
    return key <=> other.key;
  }
  bool operator==(const CanonicalKey&) const = default;
};

class DigestCollision : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Small labeled graph handed to canonical_key directly.
struct LabeledGraph {
  struct Edge {
    int a = 0;
    int b = 0;
    BondOrder order = BondOrder::Single;
  };
  std::vector<std::string> labels;
  std::vector<Edge> edges;
};

/// Node label: element plus formal charge ("C", "N+", "O-", "Fe+2").
inline std::string node_label(const Atom& atom) {
  std::string label = atom.element;
  if (atom.formal_charge != 0) {
    label += atom.formal_charge > 0 ? '+' : '-';
    const int magnitude = std::abs(atom.formal_charge);
    if (magnitude > 1) label += std::to_string(magnitude);
  }
  return label;
}

namespace detail {

struct SmallGraph {
  int n = 0;
  std::array<std::uint16_t, kMaxGraphletSize> label{};
  std::array<std::array<std::uint8_t, kMaxGraphletSize>, kMaxGraphletSize> adj{};
};

using Coloring = std::array<int, kMaxGraphletSize>;
using Code = std::vector<std::uint16_t>;

// Refines a coloring to the coarsest equitable partition below it. Colors stay
// dense ranks ordered by (old color, sorted neighbor signature), which keeps the
// result equivariant under relabeling.
inline void refine(const SmallGraph& g, Coloring& color) {
  const int n = g.n;
  using Signature = std::array<int, kMaxGraphletSize + 1>;
  std::array<Signature, kMaxGraphletSize> sig;
  std::array<int, kMaxGraphletSize> order;

  int classes = -1;
  for (;;) {
    for (int v = 0; v < n; ++v) {
      Signature& s = sig[v];
      s.fill(-1);
      s[0] = color[v];
      int k = 1;
      for (int u = 0; u < n; ++u) {
        if (g.adj[v][u]) s[k++] = color[u] * 8 + g.adj[v][u];
      }
      std::sort(s.begin() + 1, s.begin() + k);
    }
    for (int v = 0; v < n; ++v) order[v] = v;
    std::sort(order.begin(), order.begin() + n, [&](int a, int b) { return sig[a] < sig[b]; });
    int rank = 0;
    for (int i = 0; i < n; ++i) {
      if (i > 0 && sig[order[i]] != sig[order[i - 1]]) ++rank;
      color[order[i]] = rank;
    }
    const int now = n == 0 ? 0 : rank + 1;
    if (now == classes) break;
    classes = now;
  }
}

inline Code leaf_code(const SmallGraph& g, const Coloring& color) {
  const int n = g.n;
  std::array<int, kMaxGraphletSize> at{};
  for (int v = 0; v < n; ++v) at[color[v]] = v;
  Code code;
  code.reserve(static_cast<std::size_t>(n + n * (n - 1) / 2));
  for (int i = 0; i < n; ++i) code.push_back(g.label[at[i]]);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) code.push_back(g.adj[at[i]][at[j]]);
  return code;
}

inline void search(const SmallGraph& g, Coloring color, Code& best, bool& have_best) {
  refine(g, color);
  const int n = g.n;
  std::array<int, kMaxGraphletSize> size{};
  for (int v = 0; v < n; ++v) ++size[color[v]];
  int target = -1;
  for (int c = 0; c < n; ++c) {
    if (size[c] > 1) {
      target = c;
      break;
    }
  }
  if (target < 0) {
    Code code = leaf_code(g, color);
    if (!have_best || code < best) {
      best = std::move(code);
      have_best = true;
    }
    return;
  }
  for (int v = 0; v < n; ++v) {
    if (color[v] != target) continue;
    Coloring next{};
    for (int u = 0; u < n; ++u) next[u] = 2 * color[u] + ((color[u] == target && u != v) ? 1 : 0);
    search(g, next, best, have_best);
  }
}

inline Code canonical_code(const SmallGraph& g) {
  Coloring color{};
  for (int v = 0; v < g.n; ++v) color[v] = g.label[v];
  Code best;
  bool have_best = false;
  search(g, color, best, have_best);
  return best;
}

inline std::string code_to_form(const Code& code, int n, const std::vector<std::string>& names) {
  std::string form;
  for (int i = 0; i < n; ++i) {
    if (i) form += ',';
    form += names[code[static_cast<std::size_t>(i)]];
  }
  form += ';';
  std::size_t k = static_cast<std::size_t>(n);
  bool first = true;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j, ++k) {
      if (!code[k]) continue;
      if (!first) form += ',';
      first = false;
      form += std::to_string(i);
      form += bond_symbol(static_cast<BondOrder>(code[k]));
      form += std::to_string(j);
    }
  }
  return form;
}

inline bool is_connected(const SmallGraph& g) {
  if (g.n == 0) return false;
  std::uint32_t seen = 1, frontier = 1;
  while (frontier) {
    std::uint32_t next = 0;
    for (int v = 0; v < g.n; ++v) {
      if (!(frontier >> v & 1U)) continue;
      for (int u = 0; u < g.n; ++u)
        if (g.adj[v][u] && !(seen >> u & 1U)) next |= 1U << u;
    }
    seen |= next;
    frontier = next;
  }
  return seen == (1U << g.n) - 1U;
}

// Sorted distinct node labels of a molecule; ranks are monotone in the label
// strings so per-molecule codes order the same way as the text forms.
struct LabelTable {
  std::vector<std::string> names;
  std::vector<std::uint16_t> atom_rank;

  explicit LabelTable(const std::vector<std::string>& per_node) {
    names = per_node;
    std::sort(names.begin(), names.end());
    names.erase(std::unique(names.begin(), names.end()), names.end());
    atom_rank.reserve(per_node.size());
    for (const auto& label : per_node) {
      atom_rank.push_back(static_cast<std::uint16_t>(
          std::lower_bound(names.begin(), names.end(), label) - names.begin()));
    }
  }
};

}  // namespace detail

/// Canonical key of a connected labeled graph with at most 12 nodes.
inline CanonicalKey canonical_key(const LabeledGraph& graph) {
  const int n = static_cast<int>(graph.labels.size());
  if (n < 1 || n > kMaxGraphletSize)
    throw std::invalid_argument("canonical_key needs 1.." + std::to_string(kMaxGraphletSize) +
                                " nodes");
  const detail::LabelTable table(graph.labels);
  detail::SmallGraph g;
  g.n = n;
  for (int v = 0; v < n; ++v) g.label[v] = table.atom_rank[v];
  for (const auto& e : graph.edges) {
    if (e.a < 0 || e.b < 0 || e.a >= n || e.b >= n || e.a == e.b)
      throw std::invalid_argument("canonical_key: bad edge endpoint");
    g.adj[e.a][e.b] = g.adj[e.b][e.a] = static_cast<std::uint8_t>(e.order);
  }
  if (!detail::is_connected(g)) throw std::invalid_argument("canonical_key: disconnected graph");
  return CanonicalKey(detail::code_to_form(detail::canonical_code(g), n, table.names));
}

/// Induced subgraph of `graph` over `vertices` (in the given order).
inline LabeledGraph induced_subgraph(const MolecularGraph& graph,
                                     const std::vector<std::size_t>& vertices) {
  LabeledGraph sub;
  std::map<std::size_t, int> local;
  for (std::size_t v : vertices) {
    local.emplace(v, static_cast<int>(sub.labels.size()));
    sub.labels.push_back(node_label(graph.atoms.at(v)));
  }
  for (const auto& bond : graph.bonds) {
    auto a = local.find(bond.a), b = local.find(bond.b);
    if (a != local.end() && b != local.end()) sub.edges.push_back({a->second, b->second, bond.order});
  }
  return sub;
}

struct GraphletFingerprint {
  std::map<CanonicalKey, std::int64_t> counts;
  int max_size = 0;

  std::int64_t total() const {
    std::int64_t sum = 0;
    for (const auto& [key, count] : counts) sum += count;
    return sum;
  }

  std::int64_t total_of_size(int size) const {
    std::int64_t sum = 0;
    for (const auto& [key, count] : counts)
      if (key.size() == size) sum += count;
    return sum;
  }

  bool operator==(const GraphletFingerprint&) const = default;
};

/// Counts every connected node-induced subgraph with 1..max_size nodes, once per
/// distinct vertex subset, bucketed by canonical form.
inline GraphletFingerprint enumerate_graphlets(const MolecularGraph& graph, int max_size) {
  if (max_size < 1 || max_size > kMaxGraphletSize)
    throw std::invalid_argument("max_size must lie in [1, " + std::to_string(kMaxGraphletSize) +
                                "], got " + std::to_string(max_size));

  const std::size_t n = graph.atoms.size();
  std::vector<std::string> labels;
  labels.reserve(n);
  for (const auto& atom : graph.atoms) labels.push_back(node_label(atom));
  const detail::LabelTable table(labels);

  std::vector<std::vector<std::pair<std::size_t, std::uint8_t>>> adj(n);
  for (const auto& bond : graph.bonds) {
    adj[bond.a].emplace_back(bond.b, static_cast<std::uint8_t>(bond.order));
    adj[bond.b].emplace_back(bond.a, static_cast<std::uint8_t>(bond.order));
  }

  std::unordered_map<std::string, std::int64_t> by_form;
  std::map<detail::Code, std::string> form_cache;

  std::vector<std::size_t> sub;
  std::vector<int> position(n, -1);  // index in `sub`, or -1
  std::vector<int> touched(n, 0);    // members of sub plus their neighbors

  auto record = [&] {
    detail::SmallGraph g;
    g.n = static_cast<int>(sub.size());
    for (int i = 0; i < g.n; ++i) {
      const std::size_t v = sub[static_cast<std::size_t>(i)];
      g.label[i] = table.atom_rank[v];
      for (const auto& [u, order] : adj[v]) {
        if (position[u] >= 0) g.adj[i][position[u]] = order;
      }
    }
    detail::Code code = detail::canonical_code(g);
    auto it = form_cache.find(code);
    if (it == form_cache.end())
      it = form_cache.emplace(code, detail::code_to_form(code, g.n, table.names)).first;
    ++by_form[it->second];
  };

  auto push = [&](std::size_t v) {
    position[v] = static_cast<int>(sub.size());
    sub.push_back(v);
    ++touched[v];
    for (const auto& [u, order] : adj[v]) ++touched[u];
  };
  auto pop = [&] {
    const std::size_t v = sub.back();
    sub.pop_back();
    position[v] = -1;
    --touched[v];
    for (const auto& [u, order] : adj[v]) --touched[u];
  };

  // ESU extension: `ext` holds candidates adjacent to the subset, all > root.
  auto extend = [&](auto&& self, std::vector<std::size_t> ext, std::size_t root) -> void {
    record();
    if (static_cast<int>(sub.size()) == max_size) return;
    while (!ext.empty()) {
      const std::size_t w = ext.back();
      ext.pop_back();
      std::vector<std::size_t> next = ext;
      for (const auto& [u, order] : adj[w]) {
        if (u > root && touched[u] == 0) next.push_back(u);
      }
      push(w);
      self(self, std::move(next), root);
      pop();
    }
  };

  for (std::size_t v = 0; v < n; ++v) {
    std::vector<std::size_t> ext;
    for (const auto& [u, order] : adj[v])
      if (u > v) ext.push_back(u);
    push(v);
    extend(extend, std::move(ext), v);
    pop();
  }

  GraphletFingerprint fp;
  fp.max_size = max_size;
  for (auto& [form, count] : by_form) fp.counts.emplace(CanonicalKey(form), count);
  return fp;
}

class FingerprintVocabulary {
 public:
  FingerprintVocabulary() = default;
  FingerprintVocabulary(std::vector<CanonicalKey> sorted_keys, int max_size)
      : keys_(std::move(sorted_keys)), max_size_(max_size) {
    for (std::size_t i = 0; i < keys_.size(); ++i) {
      if (!index_.emplace(keys_[i].canonical_form, i).second)
        throw std::invalid_argument("duplicate canonical form in vocabulary");
      if (i > 0 && !(keys_[i - 1] < keys_[i]))
        throw std::invalid_argument("vocabulary keys must be strictly increasing");
    }
  }

  std::size_t size() const noexcept { return keys_.size(); }
  int max_size() const noexcept { return max_size_; }
  const std::vector<CanonicalKey>& keys() const noexcept { return keys_; }

  std::optional<std::size_t> index_of(const CanonicalKey& key) const {
    auto it = index_.find(key.canonical_form);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  bool operator==(const FingerprintVocabulary& other) const {
    return max_size_ == other.max_size_ && keys_ == other.keys_;
  }

 private:
  std::vector<CanonicalKey> keys_;
  std::unordered_map<std::string, std::size_t> index_;
  int max_size_ = 0;
};

/// Union of all keys, ordered by size then canonical form. Digest collisions between
/// distinct forms throw DigestCollision. An empty input yields V = 0 with the
/// given fallback max_size.
inline FingerprintVocabulary build_vocabulary(const std::vector<GraphletFingerprint>& fingerprints,
                                              int empty_max_size = 0) {
  if (fingerprints.empty()) return FingerprintVocabulary({}, empty_max_size);
  const int max_size = fingerprints.front().max_size;
  std::set<CanonicalKey> unique;
  std::unordered_map<std::uint64_t, std::string> digests;
  for (const auto& fp : fingerprints) {
    if (fp.max_size != max_size) throw std::invalid_argument("fingerprints mix max_size values");
    for (const auto& [key, count] : fp.counts) {
      auto [it, fresh] = digests.emplace(key.key, key.canonical_form);
      if (!fresh && it->second != key.canonical_form)
        throw DigestCollision("digest " + std::to_string(key.key) + " shared by '" + it->second +
                              "' and '" + key.canonical_form + "'");
      unique.insert(key);
    }
  }
  return FingerprintVocabulary(std::vector<CanonicalKey>(unique.begin(), unique.end()), max_size);
}

struct FeatureEntry {
  std::size_t row = 0;
  std::size_t col = 0;
  std::int64_t count = 0;

  bool operator==(const FeatureEntry&) const = default;
};

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  int max_size = 0;
  std::vector<FeatureEntry> entries;  // row-major, no duplicates
  std::vector<std::string> row_ids;
  std::int64_t oov_instances = 0;     // graphlet occurrences dropped as out-of-vocabulary
  std::size_t oov_classes = 0;        // distinct dropped classes

  Eigen::SparseMatrix<double, Eigen::RowMajor> to_sparse() const {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(entries.size());
    for (const auto& e : entries)
      triplets.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col),
                            static_cast<double>(e.count));
    Eigen::SparseMatrix<double, Eigen::RowMajor> m(static_cast<Eigen::Index>(rows),
                                                   static_cast<Eigen::Index>(cols));
    m.setFromTriplets(triplets.begin(), triplets.end());
    return m;
  }

  std::vector<std::int64_t> dense_row(std::size_t row) const {
    std::vector<std::int64_t> out(cols, 0);
    for (const auto& e : entries)
      if (e.row == row) out[e.col] = e.count;
    return out;
  }
};

inline FeatureMatrix featurize(const std::vector<GraphletFingerprint>& fingerprints,
                               const FingerprintVocabulary& vocab,
                               std::vector<std::string> row_ids = {}) {
  if (!row_ids.empty() && row_ids.size() != fingerprints.size())
    throw std::invalid_argument("row_ids size does not match fingerprint count");
  FeatureMatrix out;
  out.rows = fingerprints.size();
  out.cols = vocab.size();
  out.max_size = vocab.max_size();
  out.row_ids = std::move(row_ids);
  if (out.row_ids.empty()) {
    for (std::size_t i = 0; i < fingerprints.size(); ++i) out.row_ids.push_back(std::to_string(i));
  }
  std::map<std::string, bool> oov_forms;
  for (std::size_t r = 0; r < fingerprints.size(); ++r) {
    const auto& fp = fingerprints[r];
    if (fp.max_size != vocab.max_size())
      throw std::invalid_argument("fingerprint max_size differs from vocabulary max_size");
    std::vector<FeatureEntry> row;
    for (const auto& [key, count] : fp.counts) {
      if (auto col = vocab.index_of(key)) {
        row.push_back({r, *col, count});
      } else {
        out.oov_instances += count;
        oov_forms[key.canonical_form] = true;
      }
    }
    std::sort(row.begin(), row.end(), [](auto& a, auto& b) { return a.col < b.col; });
    out.entries.insert(out.entries.end(), row.begin(), row.end());
  }
  out.oov_classes = oov_forms.size();
  return out;
}

/// Sparse text layout: `rows cols nnz max_size`, then `row col count` triples,
/// then `index canonical_form` vocabulary lines.
inline void write_sparse(std::ostream& os, const FeatureMatrix& m, const FingerprintVocabulary& vocab) {
  if (vocab.size() != m.cols) throw std::invalid_argument("vocabulary size differs from matrix cols");
  os << m.rows << ' ' << m.cols << ' ' << m.entries.size() << ' ' << m.max_size << '\n';
  for (const auto& e : m.entries) os << e.row << ' ' << e.col << ' ' << e.count << '\n';
  for (std::size_t i = 0; i < vocab.size(); ++i) os << i << ' ' << vocab.keys()[i].canonical_form << '\n';
}

inline std::pair<FeatureMatrix, FingerprintVocabulary> read_sparse(std::istream& is) {
  FeatureMatrix m;
  std::size_t nnz = 0;
  if (!(is >> m.rows >> m.cols >> nnz >> m.max_size))
    throw std::runtime_error("sparse matrix: bad header");
  m.entries.reserve(nnz);
  for (std::size_t i = 0; i < nnz; ++i) {
    FeatureEntry e;
    if (!(is >> e.row >> e.col >> e.count)) throw std::runtime_error("sparse matrix: truncated entries");
    if (e.row >= m.rows || e.col >= m.cols) throw std::runtime_error("sparse matrix: entry out of range");
    m.entries.push_back(e);
  }
  std::vector<CanonicalKey> keys;
  keys.reserve(m.cols);
  for (std::size_t i = 0; i < m.cols; ++i) {
    std::size_t index = 0;
    std::string form;
    if (!(is >> index >> form) || index != i) throw std::runtime_error("sparse matrix: bad vocabulary line");
    keys.emplace_back(std::move(form));
  }
  for (std::size_t i = 0; i < m.rows; ++i) m.row_ids.push_back(std::to_string(i));
  FingerprintVocabulary vocab(std::move(keys), m.max_size);
  return {std::move(m), std::move(vocab)};
}

/// Dense CSV: header `id,<form_0>,...`, one line per molecule.
inline void write_dense_csv(std::ostream& os, const FeatureMatrix& m, const FingerprintVocabulary& vocab) {
  os << "id";
  for (const auto& key : vocab.keys()) os << ",\"" << key.canonical_form << '"';
  os << '\n';
  std::size_t next = 0;
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::vector<std::int64_t> row(m.cols, 0);
    while (next < m.entries.size() && m.entries[next].row == r) {
      row[m.entries[next].col] = m.entries[next].count;
      ++next;
    }
    os << m.row_ids[r];
    for (auto v : row) os << ',' << v;
    os << '\n';
  }
}

}  // namespace lamel
