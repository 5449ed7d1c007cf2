#pragma once

// SMILES parsing into labeled molecular graphs.
//
// Supported grammar: organic subset atoms, bracket atoms (isotope, element,
// chirality, hydrogen count, charge, atom class), branches, ring closures
// (single digits and %nn) and the bond symbols - = # : / \. Chirality and
// directional bonds are parsed and dropped. Aromatic atoms keep a distinct
// aromatic bond type; nothing is kekulized. Dot-separated fragments are
// rejected.

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lamel {

enum class BondOrder : std::uint8_t { Single = 1, Double = 2, Triple = 3, Aromatic = 4 };

inline char bond_symbol(BondOrder order) {
  switch (order) {
    case BondOrder::Single: return '-';
    case BondOrder::Double: return '=';
    case BondOrder::Triple: return '#';
    case BondOrder::Aromatic: return ':';
  }
  return '?';
}

struct Atom {
  std::string element;
  int formal_charge = 0;
  /// True for hydrogens materialized from implicit or bracket H counts.
  bool is_explicit_hydrogen = false;
  bool aromatic = false;
  /// Hydrogens implied but not present as nodes (zero after expansion).
  int implicit_hydrogens = 0;
  int isotope = 0;

  bool operator==(const Atom&) const = default;
};

struct Bond {
  std::size_t a = 0;
  std::size_t b = 0;
  BondOrder order = BondOrder::Single;

  bool operator==(const Bond&) const = default;
};

class SmilesError : public std::runtime_error {
 public:
  SmilesError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

struct MolecularGraph {
  std::vector<Atom> atoms;
  std::vector<Bond> bonds;
  std::string source_smiles;

  std::size_t atom_count() const noexcept { return atoms.size(); }
  std::size_t bond_count() const noexcept { return bonds.size(); }

  /// Neighbor lists as (atom, bond index) pairs, in bond order.
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adjacency() const {
    std::vector<std::vector<std::pair<std::size_t, std::size_t>>> adj(atoms.size());
    for (std::size_t i = 0; i < bonds.size(); ++i) {
      adj[bonds[i].a].emplace_back(bonds[i].b, i);
      adj[bonds[i].b].emplace_back(bonds[i].a, i);
    }
    return adj;
  }

  std::vector<std::size_t> degrees() const {
    std::vector<std::size_t> deg(atoms.size(), 0);
    for (const auto& bond : bonds) {
      ++deg[bond.a];
      ++deg[bond.b];
    }
    return deg;
  }

  /// Throws std::invalid_argument when the simple-graph invariants fail.
  void validate() const {
    std::vector<std::pair<std::size_t, std::size_t>> seen;
    seen.reserve(bonds.size());
    for (const auto& bond : bonds) {
      if (bond.a >= atoms.size() || bond.b >= atoms.size())
        throw std::invalid_argument("bond endpoint out of range");
      if (bond.a == bond.b) throw std::invalid_argument("self-loop bond");
      seen.emplace_back(std::min(bond.a, bond.b), std::max(bond.a, bond.b));
    }
    std::sort(seen.begin(), seen.end());
    if (std::adjacent_find(seen.begin(), seen.end()) != seen.end())
      throw std::invalid_argument("parallel bonds between one atom pair");
  }

  bool operator==(const MolecularGraph&) const = default;
};

namespace detail {

inline constexpr std::array<std::string_view, 118> kElementSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

inline bool is_element_symbol(std::string_view symbol) {
  return std::find(kElementSymbols.begin(), kElementSymbols.end(), symbol) !=
         kElementSymbols.end();
}

// Default valences used to derive implicit hydrogens.
inline std::vector<int> default_valences(std::string_view element) {
  if (element == "B") return {3};
  if (element == "C") return {4};
  if (element == "N") return {3};
  if (element == "O") return {2};
  if (element == "P") return {3, 5};
  if (element == "S") return {2, 4, 6};
  if (element == "F" || element == "Cl" || element == "Br" || element == "I") return {1};
  return {};
}

// Upper bound on bonds + hydrogens for bracket atoms; unknown elements are unchecked.
inline std::optional<int> max_bracket_valence(std::string_view element) {
  if (element == "H" || element == "F") return 1;
  if (element == "B") return 3;
  if (element == "C") return 4;
  if (element == "N" || element == "P") return 5;
  if (element == "O") return 2;
  if (element == "S") return 6;
  if (element == "Cl" || element == "Br" || element == "I") return 7;
  return std::nullopt;
}

inline int bond_valence(BondOrder order) {
  return order == BondOrder::Aromatic ? 1 : static_cast<int>(order);
}

class SmilesParser {
 public:
  explicit SmilesParser(std::string_view text) : text_(text) {}

  MolecularGraph parse(bool add_hydrogens) {
    if (text_.empty()) throw SmilesError("empty SMILES", 0);

    std::optional<std::size_t> prev;
    std::vector<std::pair<std::size_t, std::size_t>> branches;  // (atom, offset of '(')

    while (pos_ < text_.size()) {
      const char c = text_[pos_];
      if (c == '(') {
        if (!prev) throw SmilesError("branch opened before any atom", pos_);
        if (pending_) throw SmilesError("bond symbol before branch", pending_offset_);
        branches.emplace_back(*prev, pos_);
        ++pos_;
      } else if (c == ')') {
        if (branches.empty()) throw SmilesError("unbalanced parenthesis", pos_);
        if (pending_) throw SmilesError("dangling bond symbol", pending_offset_);
        prev = branches.back().first;
        branches.pop_back();
        ++pos_;
      } else if (c == '-' || c == '=' || c == '#' || c == ':' || c == '/' || c == '\\') {
        if (!prev) throw SmilesError("bond symbol before any atom", pos_);
        if (pending_) throw SmilesError("consecutive bond symbols", pos_);
        pending_ = c == '=' ? BondOrder::Double
                 : c == '#' ? BondOrder::Triple
                 : c == ':' ? BondOrder::Aromatic
                            : BondOrder::Single;
        pending_offset_ = pos_;
        ++pos_;
      } else if (c == '$') {
        throw SmilesError("quadruple bonds are not supported", pos_);
      } else if (c == '.') {
        throw SmilesError("multi-fragment SMILES are not supported", pos_);
      } else if (std::isdigit(static_cast<unsigned char>(c)) || c == '%') {
        if (!prev) throw SmilesError("ring closure before any atom", pos_);
        ring_closure(*prev);
      } else if (c == '[') {
        attach(prev, bracket_atom());
        prev = atoms_.size() - 1;
      } else if (std::isalpha(static_cast<unsigned char>(c)) || c == '*') {
        attach(prev, organic_atom());
        prev = atoms_.size() - 1;
      } else {
        throw SmilesError(std::string("unexpected character '") + c + "'", pos_);
      }
    }

    if (!branches.empty()) throw SmilesError("unbalanced parenthesis", branches.back().second);
    if (!rings_.empty()) {
      const auto first = std::min_element(rings_.begin(), rings_.end(), [](auto& l, auto& r) {
        return l.second.offset < r.second.offset;
      });
      throw SmilesError("dangling ring-closure digit", first->second.offset);
    }
    if (pending_) throw SmilesError("dangling bond symbol", pending_offset_);
    if (atoms_.empty()) throw SmilesError("no atoms", 0);

    assign_hydrogens();
    MolecularGraph graph{std::move(atoms_), std::move(bonds_), std::string(text_)};
    if (add_hydrogens) expand_hydrogens(graph);
    return graph;
  }

 private:
  struct RingOpen {
    std::size_t atom;
    std::optional<BondOrder> order;
    std::size_t offset;
  };

  std::size_t organic_atom() {
    const std::size_t start = pos_;
    Atom atom;
    const std::string_view rest = text_.substr(pos_);
    if (rest.starts_with("Cl") || rest.starts_with("Br")) {
      atom.element = std::string(rest.substr(0, 2));
      pos_ += 2;
    } else {
      const char c = text_[pos_];
      switch (c) {
        case 'B': case 'C': case 'N': case 'O': case 'P': case 'S': case 'F': case 'I':
          atom.element = std::string(1, c);
          break;
        case 'b': case 'c': case 'n': case 'o': case 'p': case 's':
          atom.element = std::string(1, static_cast<char>(std::toupper(c)));
          atom.aromatic = true;
          break;
        default:
          throw SmilesError("unknown element symbol", start);
      }
      ++pos_;
    }
    return push_atom(std::move(atom), std::nullopt, start);
  }

  std::size_t bracket_atom() {
    const std::size_t open = pos_++;
    Atom atom;

    int isotope = 0;
    bool has_isotope = false;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
      isotope = isotope * 10 + (text_[pos_++] - '0');
      has_isotope = true;
    }
    if (has_isotope) atom.isotope = isotope;

    const std::size_t symbol_at = pos_;
    if (pos_ >= text_.size()) throw SmilesError("unterminated bracket atom", open);
    const char first = text_[pos_];
    if (std::islower(static_cast<unsigned char>(first))) {
      // aromatic: b c n o p s se as te
      std::string_view two = text_.substr(pos_, 2);
      if (two == "se" || two == "as" || two == "te") {
        atom.element = {static_cast<char>(std::toupper(two[0])), two[1]};
        pos_ += 2;
      } else if (std::string_view("bcnops").find(first) != std::string_view::npos) {
        atom.element = std::string(1, static_cast<char>(std::toupper(first)));
        ++pos_;
      } else {
        throw SmilesError("unknown element symbol", symbol_at);
      }
      atom.aromatic = true;
    } else if (std::isupper(static_cast<unsigned char>(first))) {
      if (pos_ + 1 < text_.size() && std::islower(static_cast<unsigned char>(text_[pos_ + 1])) &&
          is_element_symbol(text_.substr(pos_, 2))) {
        atom.element = std::string(text_.substr(pos_, 2));
        pos_ += 2;
      } else if (is_element_symbol(text_.substr(pos_, 1))) {
        atom.element = std::string(1, first);
        ++pos_;
      } else {
        throw SmilesError("unknown element symbol", symbol_at);
      }
    } else {
      throw SmilesError("unknown element symbol", symbol_at);
    }

    // chirality: @, @@, @TH1, @AL2, @SP3, @TB12, @OH30
    if (pos_ < text_.size() && text_[pos_] == '@') {
      ++pos_;
      if (pos_ < text_.size() && text_[pos_] == '@') {
        ++pos_;
      } else {
        const std::string_view rest = text_.substr(pos_);
        for (std::string_view tag : {"TH", "AL", "SP", "TB", "OH"}) {
          if (rest.starts_with(tag)) {
            pos_ += 2;
            while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
              ++pos_;
            break;
          }
        }
      }
    }

    int hcount = 0;
    if (pos_ < text_.size() && text_[pos_] == 'H') {
      ++pos_;
      hcount = 1;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
        hcount = text_[pos_++] - '0';
    }

    if (pos_ < text_.size() && (text_[pos_] == '+' || text_[pos_] == '-')) {
      const char sign = text_[pos_++];
      int magnitude = 1;
      if (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) {
        magnitude = 0;
        while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_])))
          magnitude = magnitude * 10 + (text_[pos_++] - '0');
      } else {
        while (pos_ < text_.size() && text_[pos_] == sign) {
          ++magnitude;
          ++pos_;
        }
      }
      atom.formal_charge = sign == '+' ? magnitude : -magnitude;
    }

    if (pos_ < text_.size() && text_[pos_] == ':') {
      ++pos_;
      while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    }

    if (pos_ >= text_.size() || text_[pos_] != ']')
      throw SmilesError("unterminated bracket atom", open);
    ++pos_;
    return push_atom(std::move(atom), hcount, open);
  }

  std::size_t push_atom(Atom atom, std::optional<int> bracket_h, std::size_t offset) {
    atoms_.push_back(std::move(atom));
    bracket_h_.push_back(bracket_h);
    offsets_.push_back(offset);
    return atoms_.size() - 1;
  }

  void attach(std::optional<std::size_t> prev, std::size_t atom) {
    if (prev) add_bond(*prev, atom, resolve(pending_, *prev, atom), offsets_[atom]);
    pending_.reset();
  }

  BondOrder resolve(std::optional<BondOrder> order, std::size_t a, std::size_t b) const {
    if (order) return *order;
    return atoms_[a].aromatic && atoms_[b].aromatic ? BondOrder::Aromatic : BondOrder::Single;
  }

  void add_bond(std::size_t a, std::size_t b, BondOrder order, std::size_t offset) {
    if (a == b) throw SmilesError("ring closure bonds an atom to itself", offset);
    for (const auto& bond : bonds_) {
      if ((bond.a == a && bond.b == b) || (bond.a == b && bond.b == a))
        throw SmilesError("duplicate bond between one atom pair", offset);
    }
    bonds_.push_back({std::min(a, b), std::max(a, b), order});
  }

  void ring_closure(std::size_t prev) {
    const std::size_t start = pos_;
    int number = 0;
    if (text_[pos_] == '%') {
      if (pos_ + 2 >= text_.size() || !std::isdigit(static_cast<unsigned char>(text_[pos_ + 1])) ||
          !std::isdigit(static_cast<unsigned char>(text_[pos_ + 2])))
        throw SmilesError("malformed %nn ring closure", start);
      number = (text_[pos_ + 1] - '0') * 10 + (text_[pos_ + 2] - '0');
      pos_ += 3;
    } else {
      number = text_[pos_++] - '0';
    }

    auto it = rings_.find(number);
    if (it == rings_.end()) {
      rings_.emplace(number, RingOpen{prev, pending_, start});
    } else {
      const RingOpen open = it->second;
      rings_.erase(it);
      if (open.order && pending_ && *open.order != *pending_)
        throw SmilesError("conflicting ring-closure bond symbols", start);
      const auto order = pending_ ? pending_ : open.order;
      add_bond(open.atom, prev, resolve(order, open.atom, prev), start);
    }
    pending_.reset();
  }

  void assign_hydrogens() {
    std::vector<int> valence(atoms_.size(), 0);
    for (const auto& bond : bonds_) {
      valence[bond.a] += bond_valence(bond.order);
      valence[bond.b] += bond_valence(bond.order);
    }
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      Atom& atom = atoms_[i];
      const int used = valence[i] + (atom.aromatic ? 1 : 0);
      if (bracket_h_[i]) {
        const int h = *bracket_h_[i];
        if (const auto max = max_bracket_valence(atom.element)) {
          if (valence[i] + h > *max + std::abs(atom.formal_charge))
            throw SmilesError("valence overflow in bracket atom", offsets_[i]);
        }
        atom.implicit_hydrogens = h;
        continue;
      }
      atom.implicit_hydrogens = 0;
      for (int v : default_valences(atom.element)) {
        if (v >= used) {
          atom.implicit_hydrogens = v - used;
          break;
        }
      }
    }
  }

  static void expand_hydrogens(MolecularGraph& graph) {
    const std::size_t heavy = graph.atoms.size();
    for (std::size_t i = 0; i < heavy; ++i) {
      const int h = graph.atoms[i].implicit_hydrogens;
      graph.atoms[i].implicit_hydrogens = 0;
      for (int k = 0; k < h; ++k) {
        Atom hydrogen;
        hydrogen.element = "H";
        hydrogen.is_explicit_hydrogen = true;
        graph.atoms.push_back(std::move(hydrogen));
        graph.bonds.push_back({i, graph.atoms.size() - 1, BondOrder::Single});
      }
    }
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::vector<Atom> atoms_;
  std::vector<Bond> bonds_;
  std::vector<std::optional<int>> bracket_h_;
  std::vector<std::size_t> offsets_;
  std::map<int, RingOpen> rings_;
  std::optional<BondOrder> pending_;
  std::size_t pending_offset_ = 0;
};

}  // namespace detail

/// Parses one SMILES string. With `add_hydrogens`, implicit hydrogens become
/// explicit H nodes appended after the heavy atoms, single-bonded to their parent.
inline MolecularGraph parse_smiles(std::string_view smiles, bool add_hydrogens = true) {
  return detail::SmilesParser(smiles).parse(add_hydrogens);
}

/// Relabels atoms so that old atom i becomes atom permutation[i]. Bond sequence
/// order is kept; only endpoints move.
inline MolecularGraph permute_atoms(const MolecularGraph& graph,
                                    const std::vector<std::size_t>& permutation) {
  const std::size_t n = graph.atoms.size();
  if (permutation.size() != n) throw std::invalid_argument("permutation size mismatch");
  std::vector<bool> hit(n, false);
  for (std::size_t target : permutation) {
    if (target >= n || hit[target]) throw std::invalid_argument("permutation is not a bijection");
    hit[target] = true;
  }

  MolecularGraph out;
  out.source_smiles = graph.source_smiles;
  out.atoms.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.atoms[permutation[i]] = graph.atoms[i];
  out.bonds.reserve(graph.bonds.size());
  for (const auto& bond : graph.bonds) {
    const std::size_t a = permutation[bond.a];
    const std::size_t b = permutation[bond.b];
    out.bonds.push_back({std::min(a, b), std::max(a, b), bond.order});
  }
  return out;
}

inline std::vector<std::size_t> inverse_permutation(const std::vector<std::size_t>& permutation) {
  std::vector<std::size_t> inverse(permutation.size());
  for (std::size_t i = 0; i < permutation.size(); ++i) inverse.at(permutation[i]) = i;
  return inverse;
}

}  // namespace lamel
