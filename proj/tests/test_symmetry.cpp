#include "ldt/symmetry.hpp"

#include "gtest/gtest.h"
#include "ldt/instance.hpp"

using namespace ldt;

namespace {

LatticeState random_state(Rng& rng, LatticeShape shape) {
  std::vector<CandidateSet> cells(static_cast<std::size_t>(shape.cells()));
  std::vector<std::uint8_t> mask(cells.size());
  for (std::size_t i = 0; i < cells.size(); ++i) {
    cells[i] = static_cast<CandidateSet>(rng() & shape.full_set());
    mask[i] = rng.bernoulli(0.9) ? 1 : 0;
  }
  return LatticeState(shape, std::move(cells), std::move(mask));
}

}  // namespace

TEST(Symmetry, IdentityIsNoOp) {
  Rng rng(1);
  const auto x = random_state(rng, {4, 4, 4});
  EXPECT_EQ(symmetry_apply(Symmetry::identity(), x), x);
}

TEST(Symmetry, ApplyThenInvertIsIdentity) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const int side = trial % 2 ? 4 : 9;
    const LatticeShape shape{side, side, side};
    const auto x = random_state(rng, shape);
    const auto s = random_symmetry(rng, side, SymmetryOptions{});
    EXPECT_EQ(symmetry_invert(s, symmetry_apply(s, x)), x);
  }
}

TEST(Symmetry, SolutionsRoundTrip) {
  Rng rng(3);
  const SudokuSpec spec{2, 2};
  const auto all = sudoku_oracle_solve(spec, SudokuGivens(16, 0), 300).solutions;
  for (int trial = 0; trial < 200; ++trial) {
    const auto& y = all[static_cast<std::size_t>(trial) % all.size()];
    const auto s = random_symmetry(rng, 4, SymmetryOptions{});
    const auto t = symmetry_apply(s, y);
    EXPECT_TRUE(sudoku_valid(spec, t));
    EXPECT_EQ(symmetry_invert(s, t), y);
    EXPECT_EQ(symmetry_apply(s, y.to_state()), t.to_state());
  }
}

TEST(Symmetry, GroupLaws) {
  Rng rng(4);
  const int side = 4;
  const LatticeShape shape{side, side, side};
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_symmetry(rng, side, SymmetryOptions{});
    const auto b = random_symmetry(rng, side, SymmetryOptions{});
    const auto x = random_state(rng, shape);
    const auto ab = symmetry_compose(a, b, side);
    EXPECT_EQ(symmetry_apply(ab, x), symmetry_apply(a, symmetry_apply(b, x)));
    EXPECT_EQ(symmetry_compose(a, symmetry_inverse(a), side), Symmetry::identity());
    EXPECT_EQ(symmetry_compose(Symmetry::identity(), a, side), a);
  }
}

TEST(Symmetry, MazeOptionsDisablePermutation) {
  Rng rng(5);
  const auto m = maze_generate(MazeSpec{7, 7, 6, 0.3}, rng);
  const auto sols = dag_sample_uniform(m.grid, m.dag, rng, 3);
  const auto inst = make_maze_instance("m", m.grid, sols);
  const auto opts = symmetry_options_for(inst);
  EXPECT_FALSE(opts.permute_symbols);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_symmetry(rng, maze_symbol::kVocab, opts);
    const auto t = symmetry_apply(s, inst);
    EXPECT_EQ(t.initial, maze_to_lattice(t.maze));
    for (const auto& y : t.solutions) EXPECT_TRUE(verify_solution(t, y));
  }
}

TEST(Symmetry, NonSquareGridRejectsTranspose) {
  Symmetry s = Symmetry::identity();
  s.dihedral = 4;
  EXPECT_THROW(symmetry_apply(s, LatticeState::top({2, 3, 2})), StructuralError);
  s.dihedral = 3;
  const auto x = LatticeState::top({2, 3, 2});
  EXPECT_EQ(symmetry_invert(s, symmetry_apply(s, x)), x);
}
