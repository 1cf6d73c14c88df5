#pragma once

// Symmetries of square-grid puzzles: a symbol permutation composed with one
// of the eight dihedral transforms of the grid.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/rng.hpp"

namespace ldt {

struct Symmetry {
  /// symbol v maps to permutation[v]; identity beyond the vocabulary.
  std::array<std::uint8_t, kMaxVocab> permutation{};
  /// bit 0: flip rows, bit 1: flip columns, bit 2: transpose (applied first).
  int dihedral = 0;

  static Symmetry identity() {
    Symmetry s;
    std::iota(s.permutation.begin(), s.permutation.end(), std::uint8_t{0});
    return s;
  }

  bool transposes() const noexcept { return (dihedral & 4) != 0; }

  friend bool operator==(const Symmetry&, const Symmetry&) = default;
};

/// Which parts of a random symmetry are enabled for a domain.
struct SymmetryOptions {
  bool permute_symbols = true;
  bool dihedral = true;
  bool allow_transpose = true;  // off for non-square grids or non-square boxes
};

inline Symmetry random_symmetry(Rng& rng, int vocab_size, const SymmetryOptions& opts) {
  Symmetry s = Symmetry::identity();
  if (opts.permute_symbols)
    std::shuffle(s.permutation.begin(), s.permutation.begin() + vocab_size, rng.engine());
  if (opts.dihedral) s.dihedral = rng.uniform_int(0, opts.allow_transpose ? 7 : 3);
  return s;
}

/// Destination position of `cell` under the grid transform.
inline int symmetry_map_cell(const Symmetry& s, int rows, int cols, int cell) {
  int r = cell / cols;
  int c = cell % cols;
  int out_rows = rows;
  int out_cols = cols;
  if (s.transposes()) {
    if (rows != cols) throw StructuralError("transpose symmetry needs a square grid");
    std::swap(r, c);
    std::swap(out_rows, out_cols);
  }
  if (s.dihedral & 1) r = out_rows - 1 - r;
  if (s.dihedral & 2) c = out_cols - 1 - c;
  return r * out_cols + c;
}

inline CandidateSet symmetry_map_set(const Symmetry& s, CandidateSet set) {
  CandidateSet out = 0;
  while (set) {
    const int v = lowest_symbol(set);
    set = static_cast<CandidateSet>(set & (set - 1));
    out |= static_cast<CandidateSet>(1u << s.permutation[static_cast<std::size_t>(v)]);
  }
  return out;
}

inline Symmetry symmetry_inverse(const Symmetry& s) {
  Symmetry inv = Symmetry::identity();
  for (std::size_t v = 0; v < s.permutation.size(); ++v) inv.permutation[s.permutation[v]] = static_cast<std::uint8_t>(v);
  // Flips commute with each other; with a transpose the flips swap axes.
  inv.dihedral = s.dihedral;
  if (s.transposes()) {
    const int fr = s.dihedral & 1;
    const int fc = (s.dihedral >> 1) & 1;
    inv.dihedral = 4 | (fc) | (fr << 1);
  }
  return inv;
}

/// (a ∘ b): apply b first, then a.
inline Symmetry symmetry_compose(const Symmetry& a, const Symmetry& b, int side) {
  Symmetry out = Symmetry::identity();
  for (std::size_t v = 0; v < out.permutation.size(); ++v) out.permutation[v] = a.permutation[b.permutation[v]];
  // Find the dihedral element matching the composed position map.
  for (int e = 0; e < 8; ++e) {
    Symmetry probe = Symmetry::identity();
    probe.dihedral = e;
    bool match = true;
    for (int cell = 0; cell < side * side && match; ++cell)
      match = symmetry_map_cell(probe, side, side, cell) ==
              symmetry_map_cell(a, side, side, symmetry_map_cell(b, side, side, cell));
    if (match) {
      out.dihedral = e;
      return out;
    }
  }
  throw StructuralError("symmetry_compose: no matching dihedral element");
}

inline LatticeState symmetry_apply(const Symmetry& s, const LatticeState& x) {
  const LatticeShape& shape = x.shape();
  std::vector<CandidateSet> cells(static_cast<std::size_t>(x.size()), 0);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(x.size()), 0);
  for (int i = 0; i < x.size(); ++i) {
    const auto j = static_cast<std::size_t>(symmetry_map_cell(s, shape.rows, shape.cols, i));
    cells[j] = symmetry_map_set(s, x.cell(i));
    mask[j] = x.mask()[static_cast<std::size_t>(i)];
  }
  return LatticeState(shape, std::move(cells), std::move(mask));
}

inline LatticeState symmetry_invert(const Symmetry& s, const LatticeState& x) {
  return symmetry_apply(symmetry_inverse(s), x);
}

inline SolutionPoint symmetry_apply(const Symmetry& s, const SolutionPoint& y) {
  const LatticeShape& shape = y.shape();
  std::vector<std::uint8_t> values(static_cast<std::size_t>(y.size()), SolutionPoint::kNoSymbol);
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(y.size()), 0);
  for (int i = 0; i < y.size(); ++i) {
    const auto j = static_cast<std::size_t>(symmetry_map_cell(s, shape.rows, shape.cols, i));
    mask[j] = y.mask()[static_cast<std::size_t>(i)];
    if (mask[j]) values[j] = s.permutation[static_cast<std::size_t>(y.value(i))];
  }
  return SolutionPoint(shape, std::move(values), std::move(mask));
}

inline SolutionPoint symmetry_invert(const Symmetry& s, const SolutionPoint& y) {
  return symmetry_apply(symmetry_inverse(s), y);
}

}  // namespace ldt
