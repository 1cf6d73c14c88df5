#include "ldt/lattice.hpp"

#include <algorithm>
#include <array>
#include <set>
#include <vector>

#include "gtest/gtest.h"
#include "ldt/rng.hpp"

using namespace ldt;

namespace {

LatticeState make_state(LatticeShape shape, std::vector<std::vector<int>> cells) {
  std::vector<CandidateSet> bits;
  for (const auto& c : cells) {
    CandidateSet s = 0;
    for (int v : c) s |= static_cast<CandidateSet>(1u << v);
    bits.push_back(s);
  }
  return LatticeState(shape, std::move(bits), LatticeState::full_mask(shape));
}

SolutionPoint grid(LatticeShape shape, std::vector<std::uint8_t> values) { return SolutionPoint(shape, std::move(values)); }

// All complete 4x4 Sudoku grids, by brute force over row permutations.
std::vector<std::array<int, 16>> all_4x4_grids() {
  std::array<int, 4> perm{0, 1, 2, 3};
  std::vector<std::array<int, 4>> rows;
  do rows.push_back(perm);
  while (std::next_permutation(perm.begin(), perm.end()));
  std::vector<std::array<int, 16>> out;
  for (const auto& r0 : rows)
    for (const auto& r1 : rows)
      for (const auto& r2 : rows)
        for (const auto& r3 : rows) {
          const std::array<const std::array<int, 4>*, 4> g{&r0, &r1, &r2, &r3};
          bool ok = true;
          for (int c = 0; c < 4 && ok; ++c) {
            int seen = 0;
            for (int r = 0; r < 4; ++r) seen |= 1 << (*g[r])[c];
            ok = seen == 15;
          }
          for (int b = 0; b < 4 && ok; ++b) {
            int seen = 0;
            for (int i = 0; i < 4; ++i) seen |= 1 << (*g[(b / 2) * 2 + i / 2])[(b % 2) * 2 + i % 2];
            ok = seen == 15;
          }
          if (!ok) continue;
          std::array<int, 16> flat{};
          for (int i = 0; i < 16; ++i) flat[i] = (*g[i / 4])[i % 4];
          out.push_back(flat);
        }
  return out;
}

LatticeState random_state(Rng& rng, LatticeShape shape, double keep) {
  std::vector<CandidateSet> cells(static_cast<std::size_t>(shape.cells()));
  for (auto& c : cells)
    for (int v = 0; v < shape.vocab_size; ++v)
      if (rng.bernoulli(keep)) c |= static_cast<CandidateSet>(1u << v);
  return LatticeState(shape, std::move(cells), LatticeState::full_mask(shape));
}

}  // namespace

TEST(Lattice, MeetWithTopIsIdentity) {
  const LatticeShape s{2, 2, 3};
  const auto a = make_state(s, {{0}, {1, 2}, {}, {0, 2}});
  EXPECT_EQ(meet(a, LatticeState::top(s)), a);
  EXPECT_EQ(meet(a, a), a);
}

TEST(Lattice, MeetIntersectsCells) {
  const LatticeShape s{1, 1, 4};
  EXPECT_EQ(meet(make_state(s, {{1, 2}}), make_state(s, {{2, 3}})), make_state(s, {{2}}));
}

TEST(Lattice, JoinAndOrder) {
  const LatticeShape s{2, 2, 3};
  const auto a = make_state(s, {{0}, {1, 2}, {2}, {0, 2}});
  const auto b = make_state(s, {{1}, {1}, {0, 2}, {}});
  const auto bottom = LatticeState::empty(s, LatticeState::full_mask(s));
  EXPECT_EQ(join(a, bottom), a);
  EXPECT_TRUE(leq(meet(a, b), a));
  EXPECT_TRUE(leq(meet(a, b), b));
  EXPECT_TRUE(leq(a, join(a, b)));
  EXPECT_FALSE(leq(LatticeState::top(s), a));
  EXPECT_TRUE(leq(a, LatticeState::top(s)));
}

TEST(Lattice, ShapeMismatchIsStructuralError) {
  const auto a = LatticeState::top({2, 2, 3});
  const auto b = LatticeState::top({2, 2, 4});
  EXPECT_THROW(meet(a, b), StructuralError);
  EXPECT_THROW(join(a, b), StructuralError);
  EXPECT_THROW(leq(a, b), StructuralError);
  std::vector<std::uint8_t> mask{1, 1, 0, 1};
  EXPECT_THROW(meet(a, LatticeState::top({2, 2, 3}, mask)), StructuralError);
}

TEST(Lattice, MaskedCellsNormalizeToEmpty) {
  const LatticeShape s{1, 3, 4};
  const LatticeState a(s, {0xf, 0xf, 0xf}, {1, 0, 1});
  EXPECT_EQ(a.cell(1), 0);
  EXPECT_FALSE(a.is_bottom());
  EXPECT_EQ(alive_count(a), 8);
  LatticeState b = a;
  b.set_cell(1, 0x3);
  EXPECT_EQ(b.cell(1), 0);
}

TEST(Lattice, BottomHasManyRepresentations) {
  const LatticeShape s{1, 3, 3};
  EXPECT_TRUE(make_state(s, {{0}, {}, {1, 2}}).is_bottom());
  EXPECT_TRUE(LatticeState::empty(s, LatticeState::full_mask(s)).is_bottom());
  EXPECT_FALSE(LatticeState::top(s).is_bottom());
}

TEST(Lattice, AlphaOfSingletonIsThePoint) {
  const LatticeShape s{2, 2, 2};
  const auto g = grid(s, {0, 1, 1, 0});
  const std::vector<SolutionPoint> one{g};
  EXPECT_EQ(alpha(one, s), g.to_state());
}

TEST(Lattice, AlphaOfEmptySetIsAllEmpty) {
  const LatticeShape s{2, 2, 2};
  const auto a = alpha(std::vector<SolutionPoint>{}, s);
  EXPECT_TRUE(a.is_bottom());
  for (int i = 0; i < a.size(); ++i) EXPECT_EQ(a.cell(i), 0);
}

// The two 2x2 grids of the gamma-alpha round-trip figure, digits 1/2 as symbols 0/1.
TEST(Lattice, AlphaGammaRoundTripOnTwoByTwo) {
  const LatticeShape s{2, 2, 2};
  const std::vector<SolutionPoint> S{grid(s, {0, 0, 1, 1}), grid(s, {0, 1, 1, 0})};
  const auto a = alpha(S, s);
  EXPECT_EQ(a, make_state(s, {{0}, {0, 1}, {1}, {0, 1}}));
  const auto g = gamma_enumerate(a, 100);
  ASSERT_EQ(g.size(), 4u);
  for (const auto& y : S) EXPECT_NE(std::find(g.begin(), g.end(), y), g.end());
  EXPECT_TRUE(std::is_sorted(g.begin(), g.end()));
}

TEST(Lattice, GammaOfEmptyCellIsEmpty) {
  const LatticeShape s{2, 2, 2};
  EXPECT_TRUE(gamma_enumerate(make_state(s, {{0}, {}, {1}, {0, 1}}), 100).empty());
}

// The impossible element of the alpha-gamma figure: column 1 forces two equal
// digits, so no 2x2 Sudoku grid survives and re-abstraction gives bottom.
TEST(Lattice, ImpossibleElementReabstractsToBottom) {
  const LatticeShape s{2, 2, 2};
  const auto a = make_state(s, {{0}, {0, 1}, {0}, {0, 1}});
  std::vector<SolutionPoint> valid;
  for (const auto& y : gamma_enumerate(a, 100)) {
    const bool rows_ok = y.value(0) != y.value(1) && y.value(2) != y.value(3);
    const bool cols_ok = y.value(0) != y.value(2) && y.value(1) != y.value(3);
    if (rows_ok && cols_ok) valid.push_back(y);
  }
  EXPECT_TRUE(valid.empty());
  const auto back = alpha(valid, s);
  EXPECT_TRUE(back.is_bottom());
  EXPECT_TRUE(leq(back, a));
}

TEST(Lattice, GammaCapacity) {
  EXPECT_THROW(gamma_enumerate(LatticeState::top({3, 3, 4}), 1000), CapacityError);
  EXPECT_EQ(gamma_enumerate(LatticeState::top({1, 3, 2}), 8).size(), 8u);
}

TEST(Lattice, GammaOfSingletonIsThatPoint) {
  const LatticeShape s{2, 2, 3};
  const auto y = grid(s, {2, 0, 1, 1});
  const auto g = gamma_enumerate(y.to_state(), 1);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0], y);
}

TEST(Lattice, AlphaOfAllFourByFourGridsIsTop) {
  const auto grids = all_4x4_grids();
  ASSERT_EQ(grids.size(), 288u);
  const LatticeShape s{4, 4, 4};
  std::vector<SolutionPoint> S;
  for (const auto& g : grids) S.push_back(grid(s, std::vector<std::uint8_t>(g.begin(), g.end())));
  EXPECT_EQ(alpha(S, s), LatticeState::top(s));
}

TEST(Lattice, ConsistentMatchesGammaMembership) {
  Rng rng(7);
  const LatticeShape s{2, 3, 3};
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_state(rng, s, 0.6);
    const auto members = gamma_enumerate(a, 1000);
    const std::set<SolutionPoint> in(members.begin(), members.end());
    for (const auto& y : gamma_enumerate(LatticeState::top(s), 1000)) EXPECT_EQ(consistent(y, a), in.contains(y));
  }
}

TEST(Lattice, ConsistentBasics) {
  const LatticeShape s{2, 2, 3};
  const auto y = grid(s, {0, 1, 2, 0});
  const std::vector<SolutionPoint> one{y};
  EXPECT_TRUE(consistent(y, alpha(one, s)));
  auto x = LatticeState::top(s);
  x.set_cell(2, 0b011);
  EXPECT_FALSE(consistent(y, x));
}

TEST(Lattice, AliveCountAndSolvedShape) {
  EXPECT_EQ(alive_count(LatticeState::top({9, 9, 9})), 729);
  const LatticeShape s{2, 2, 3};
  const auto y = grid(s, {0, 1, 2, 0}).to_state();
  EXPECT_EQ(alive_count(y), 4);
  EXPECT_TRUE(is_solved_shape(y));
  EXPECT_FALSE(is_solved_shape(LatticeState::top(s)));
  EXPECT_FALSE(is_solved_shape(make_state(s, {{0}, {}, {1}, {2}})));
}

TEST(Lattice, SupervisionTargetFromTop) {
  const LatticeShape s{2, 2, 3};
  const auto y = grid(s, {0, 1, 2, 0});
  const std::vector<SolutionPoint> Y{y};
  const auto t = supervision_target(LatticeState::top(s), Y);
  EXPECT_FALSE(t.is_conflict);
  EXPECT_EQ(t.target, y.to_state());
}

TEST(Lattice, SupervisionTargetKeepsConflictLocal) {
  const LatticeShape s{2, 2, 3};
  const std::vector<SolutionPoint> Y{grid(s, {0, 1, 2, 0})};
  auto x = LatticeState::top(s);
  x.set_cell(0, 0b110);  // y's value at cell 0 eliminated
  const auto prev = make_state(s, {{0, 1}, {1}, {2}, {0}});
  const auto t = supervision_target(x, Y, prev);
  EXPECT_TRUE(t.is_conflict);
  EXPECT_EQ(t.target, meet(x, prev));
  EXPECT_EQ(t.target.cell(0), 0b010);
  EXPECT_EQ(t.target.cell(1), 0b010);

  const auto no_prev = supervision_target(x, Y);
  EXPECT_TRUE(no_prev.is_conflict);
  EXPECT_EQ(alive_count(no_prev.target), 0);
}

TEST(Lattice, SupervisionTargetNeedsSolutions) {
  EXPECT_THROW(supervision_target(LatticeState::top({1, 1, 2}), std::vector<SolutionPoint>{}), ContractViolation);
}

TEST(Lattice, SupervisionTargetWithMultipleSolutions) {
  const LatticeShape s{1, 3, 3};
  const std::vector<SolutionPoint> Y{grid(s, {0, 1, 2}), grid(s, {0, 2, 1}), grid(s, {1, 0, 2})};
  auto x = LatticeState::top(s);
  x.set_cell(0, 0b001);
  const auto t = supervision_target(x, Y);
  EXPECT_FALSE(t.is_conflict);
  EXPECT_EQ(t.target, make_state(s, {{0}, {1, 2}, {1, 2}}));
  EXPECT_TRUE(leq(t.target, x));
}

TEST(Lattice, GaloisLawsOnRandomSets) {
  Rng rng(11);
  const LatticeShape s{2, 2, 3};
  const auto universe = gamma_enumerate(LatticeState::top(s), 1000);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SolutionPoint> S;
    for (const auto& y : universe)
      if (rng.bernoulli(0.05)) S.push_back(y);
    if (S.empty()) S.push_back(universe[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(universe.size()) - 1))]);
    const auto a = alpha(S, s);
    const auto g = gamma_enumerate(a, 1000);
    for (const auto& y : S) EXPECT_NE(std::find(g.begin(), g.end(), y), g.end());

    const auto b = random_state(rng, s, 0.7);
    const auto gb = gamma_enumerate(b, 1000);
    EXPECT_TRUE(leq(alpha(gb, s), b));
    const bool subset = std::all_of(S.begin(), S.end(), [&](const SolutionPoint& y) { return consistent(y, b); });
    EXPECT_EQ(leq(a, b), subset);
  }
}
