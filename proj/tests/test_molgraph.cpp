#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <numeric>
#include <random>

#include "lamel/molgraph.hpp"
#include "oracles.hpp"

using namespace lamel;

namespace {

std::size_t count_element(const MolecularGraph& g, const std::string& e) {
  return static_cast<std::size_t>(
      std::count_if(g.atoms.begin(), g.atoms.end(), [&](const Atom& a) { return a.element == e; }));
}

std::map<BondOrder, int> bond_orders(const MolecularGraph& g) {
  std::map<BondOrder, int> out;
  for (const auto& b : g.bonds) ++out[b.order];
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

TEST(ParseSmiles, MethaneExpandsHydrogens) {
  const auto g = parse_smiles("C");
  EXPECT_EQ(g.atoms.size(), 5u);
  EXPECT_EQ(g.bonds.size(), 4u);
  EXPECT_EQ(count_element(g, "C"), 1u);
  EXPECT_EQ(count_element(g, "H"), 4u);
  for (const auto& b : g.bonds) EXPECT_EQ(b.order, BondOrder::Single);
}

TEST(ParseSmiles, Acetone) {
  const auto g = parse_smiles("CC(=O)C");
  EXPECT_EQ(g.atoms.size(), 10u);
  EXPECT_EQ(g.bonds.size(), 9u);
  const auto orders = bond_orders(g);
  EXPECT_EQ(orders.at(BondOrder::Double), 1);
  EXPECT_EQ(orders.at(BondOrder::Single), 8);
  int cc = 0, ch = 0;
  for (const auto& b : g.bonds) {
    const auto& ea = g.atoms[b.a].element;
    const auto& eb = g.atoms[b.b].element;
    if (ea == "C" && eb == "C") ++cc;
    if ((ea == "C" && eb == "H") || (ea == "H" && eb == "C")) ++ch;
  }
  EXPECT_EQ(cc, 2);
  EXPECT_EQ(ch, 6);
}

TEST(ParseSmiles, CyclopropaneHasThreeRing) {
  const auto g = parse_smiles("C1CC1");
  EXPECT_EQ(g.atoms.size(), 9u);
  EXPECT_EQ(g.bonds.size(), 9u);
  std::vector<std::size_t> carbons;
  for (std::size_t i = 0; i < g.atoms.size(); ++i)
    if (g.atoms[i].element == "C") carbons.push_back(i);
  ASSERT_EQ(carbons.size(), 3u);
  const auto adj = g.adjacency();
  auto bonded = [&](std::size_t a, std::size_t b) {
    return std::any_of(adj[a].begin(), adj[a].end(), [&](const auto& nb) { return nb.first == b; });
  };
  EXPECT_TRUE(bonded(carbons[0], carbons[1]));
  EXPECT_TRUE(bonded(carbons[1], carbons[2]));
  EXPECT_TRUE(bonded(carbons[2], carbons[0]));
}

TEST(ParseSmiles, UnbalancedParenthesisReportsOffset) {
  try {
    parse_smiles("C(");
    FAIL() << "expected SmilesError";
  } catch (const SmilesError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
}

TEST(ParseSmiles, RejectsMalformedInput) {
  for (const char* bad : {"", "C)", "C1CC", "[C", "Xx", "C.C", "C==C", "1C", "C%1"}) {
    EXPECT_THROW(parse_smiles(bad), SmilesError) << bad;
  }
}

TEST(ParseSmiles, BracketAtomsAndCharges) {
  const auto g = parse_smiles("C[N+](C)(C)C", false);
  ASSERT_EQ(g.atoms.size(), 5u);
  EXPECT_EQ(g.atoms[1].element, "N");
  EXPECT_EQ(g.atoms[1].formal_charge, 1);
  EXPECT_EQ(g.atoms[1].implicit_hydrogens, 0);

  const auto acetate = parse_smiles("CC(=O)[O-]");
  EXPECT_EQ(acetate.atoms.size(), 7u);  // 4 heavy + 3 H on the methyl
  const auto water = parse_smiles("[OH2]");
  EXPECT_EQ(water.atoms.size(), 3u);
}

TEST(ParseSmiles, AromaticRingsKeepAromaticBonds) {
  const auto g = parse_smiles("c1ccccc1");
  EXPECT_EQ(g.atoms.size(), 12u);
  const auto orders = bond_orders(g);
  EXPECT_EQ(orders.at(BondOrder::Aromatic), 6);
  EXPECT_EQ(orders.at(BondOrder::Single), 6);

  const auto pyrrole = parse_smiles("c1cc[nH]c1");
  EXPECT_EQ(count_element(pyrrole, "H"), 5u);
}

TEST(ParseSmiles, TwoDigitRingClosureAndTripleBond) {
  const auto g = parse_smiles("C%10CC%10");
  EXPECT_EQ(g.bonds.size(), 9u);
  const auto n = parse_smiles("CC#N");
  EXPECT_EQ(n.atoms.size(), 6u);
  EXPECT_EQ(bond_orders(n).at(BondOrder::Triple), 1);
}

TEST(ParseSmiles, WithoutHydrogensKeepsCounts) {
  const auto g = parse_smiles("CCO", false);
  ASSERT_EQ(g.atoms.size(), 3u);
  EXPECT_EQ(g.atoms[0].implicit_hydrogens, 3);
  EXPECT_EQ(g.atoms[1].implicit_hydrogens, 2);
  EXPECT_EQ(g.atoms[2].implicit_hydrogens, 1);
}

TEST(ParseSmiles, AtomCountMatchesHeavyPlusImplicitHydrogens) {
  for (const auto& s : oracle::smiles_pool()) {
    const auto heavy = parse_smiles(s, false);
    const auto full = parse_smiles(s, true);
    std::size_t expected = heavy.atoms.size();
    for (const auto& a : heavy.atoms) expected += static_cast<std::size_t>(a.implicit_hydrogens);
    EXPECT_EQ(full.atoms.size(), expected) << s;
    EXPECT_EQ(full.bonds.size(), heavy.bonds.size() + (expected - heavy.atoms.size())) << s;
  }
}

TEST(ParseSmiles, Deterministic) {
  for (const auto& s : oracle::smiles_pool()) EXPECT_EQ(parse_smiles(s), parse_smiles(s)) << s;
}

TEST(PermuteAtoms, IdentityAndInverse) {
  std::mt19937_64 rng(7);
  for (const auto& s : oracle::smiles_pool()) {
    const auto g = parse_smiles(s);
    std::vector<std::size_t> id(g.atoms.size());
    std::iota(id.begin(), id.end(), 0);
    EXPECT_EQ(permute_atoms(g, id), g) << s;

    const auto p = random_permutation(g.atoms.size(), rng);
    const auto back = permute_atoms(permute_atoms(g, p), inverse_permutation(p));
    EXPECT_EQ(back.atoms, g.atoms) << s;
    auto sorted = [](std::vector<Bond> b) {
      std::sort(b.begin(), b.end(), [](const Bond& x, const Bond& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
      return b;
    };
    EXPECT_EQ(sorted(back.bonds), sorted(g.bonds)) << s;
  }
}

TEST(PermuteAtoms, PreservesDegreesAndBondOrders) {
  std::mt19937_64 rng(11);
  for (const auto& s : oracle::smiles_pool()) {
    const auto g = parse_smiles(s);
    const auto p = random_permutation(g.atoms.size(), rng);
    const auto h = permute_atoms(g, p);
    auto dg = g.degrees(), dh = h.degrees();
    std::sort(dg.begin(), dg.end());
    std::sort(dh.begin(), dh.end());
    EXPECT_EQ(dg, dh) << s;
    EXPECT_EQ(bond_orders(g), bond_orders(h)) << s;
    for (std::size_t i = 0; i < g.atoms.size(); ++i) EXPECT_EQ(h.atoms[p[i]], g.atoms[i]);
  }
}

TEST(PermuteAtoms, RejectsNonBijection) {
  const auto g = parse_smiles("CC");
  std::vector<std::size_t> bad(g.atoms.size(), 0);
  EXPECT_THROW(permute_atoms(g, bad), std::invalid_argument);
  EXPECT_THROW(permute_atoms(g, {0, 1}), std::invalid_argument);
}
