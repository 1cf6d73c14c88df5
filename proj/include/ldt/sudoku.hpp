#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/rng.hpp"

namespace ldt {

/// Generic box Sudoku: side n = box_rows * box_cols, symbols 1..n stored as
/// vocabulary indices 0..n-1.
struct SudokuSpec {
  int box_rows = 3;
  int box_cols = 3;

  int side() const noexcept { return box_rows * box_cols; }
  LatticeShape shape() const noexcept { return {side(), side(), side()}; }

  void validate() const {
    if (box_rows < 1 || box_cols < 1 || side() > 9)
      throw StructuralError("sudoku side must be in [1, 9]");
  }

  /// Guesses the box layout from the side length (4 -> 2x2, 6 -> 2x3, 9 -> 3x3).
  static SudokuSpec from_side(int n) {
    int br = static_cast<int>(std::sqrt(static_cast<double>(n)));
    while (br > 1 && n % br != 0) --br;
    SudokuSpec spec{br, n / br};
    spec.validate();
    return spec;
  }

  /// All-different groups: rows, then columns, then boxes.
  std::vector<std::vector<int>> groups() const {
    const int n = side();
    std::vector<std::vector<int>> out;
    for (int r = 0; r < n; ++r) {
      std::vector<int> g;
      for (int c = 0; c < n; ++c) g.push_back(r * n + c);
      out.push_back(std::move(g));
    }
    for (int c = 0; c < n; ++c) {
      std::vector<int> g;
      for (int r = 0; r < n; ++r) g.push_back(r * n + c);
      out.push_back(std::move(g));
    }
    for (int br = 0; br < n / box_rows; ++br)
      for (int bc = 0; bc < n / box_cols; ++bc) {
        std::vector<int> g;
        for (int r = 0; r < box_rows; ++r)
          for (int c = 0; c < box_cols; ++c) g.push_back((br * box_rows + r) * n + bc * box_cols + c);
        out.push_back(std::move(g));
      }
    return out;
  }

  friend bool operator==(const SudokuSpec&, const SudokuSpec&) = default;
};

/// Givens as digits 1..n with 0 for empty cells, row-major.
using SudokuGivens = std::vector<std::uint8_t>;

namespace detail {

/// Peer tables shared by propagation and search.
struct SudokuTopology {
  SudokuSpec spec;
  std::vector<std::vector<int>> groups;
  std::vector<std::vector<int>> cell_groups;
  std::vector<std::vector<int>> peers;

  explicit SudokuTopology(const SudokuSpec& s) : spec(s), groups(s.groups()) {
    const int k = s.side() * s.side();
    cell_groups.resize(static_cast<std::size_t>(k));
    peers.resize(static_cast<std::size_t>(k));
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (int c : groups[g]) cell_groups[static_cast<std::size_t>(c)].push_back(static_cast<int>(g));
    for (int c = 0; c < k; ++c) {
      auto& p = peers[static_cast<std::size_t>(c)];
      for (int g : cell_groups[static_cast<std::size_t>(c)])
        for (int o : groups[static_cast<std::size_t>(g)])
          if (o != c) p.push_back(o);
      std::sort(p.begin(), p.end());
      p.erase(std::unique(p.begin(), p.end()), p.end());
    }
  }
};

}  // namespace detail

enum class PropagationRule : std::uint8_t { NakedSingle, HiddenSingle };

struct PropagationEvent {
  int cell = 0;
  int symbol = 0;  // vocabulary index
  PropagationRule rule = PropagationRule::NakedSingle;
};

/// Naked + hidden single propagation on candidate sets, to a fixpoint.
/// Returns false on contradiction (an empty cell or a group missing a symbol).
inline bool sudoku_propagate(const detail::SudokuTopology& topo, std::vector<CandidateSet>& cells,
                             std::vector<PropagationEvent>* trace = nullptr) {
  const int n = topo.spec.side();
  const auto k = cells.size();
  std::vector<std::uint8_t> settled(k, 0);
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t c = 0; c < k; ++c) {
      if (cells[c] == 0) return false;
      if (settled[c] || popcount(cells[c]) != 1) continue;
      settled[c] = 1;
      for (int p : topo.peers[c]) {
        auto& pc = cells[static_cast<std::size_t>(p)];
        if (pc & cells[c]) {
          pc = static_cast<CandidateSet>(pc & ~cells[c]);
          if (pc == 0) return false;
          changed = true;
          if (trace && popcount(pc) == 1)
            trace->push_back({p, lowest_symbol(pc), PropagationRule::NakedSingle});
        }
      }
    }
    for (const auto& g : topo.groups) {
      for (int v = 0; v < n; ++v) {
        const auto bit = static_cast<CandidateSet>(1u << v);
        int where = -1;
        int count = 0;
        for (int c : g)
          if (cells[static_cast<std::size_t>(c)] & bit) {
            ++count;
            where = c;
          }
        if (count == 0) return false;
        if (count == 1 && cells[static_cast<std::size_t>(where)] != bit) {
          cells[static_cast<std::size_t>(where)] = bit;
          changed = true;
          if (trace) trace->push_back({where, v, PropagationRule::HiddenSingle});
        }
      }
    }
  }
  return true;
}

/// Propagation applied to a lattice state (sound deduction on the abstract
/// domain). Contradictions return the all-empty representative.
inline LatticeState sudoku_deduce(const SudokuSpec& spec, const LatticeState& a) {
  const detail::SudokuTopology topo(spec);
  std::vector<CandidateSet> cells(a.cells().begin(), a.cells().end());
  std::vector<std::uint8_t> mask(a.mask().begin(), a.mask().end());
  if (!sudoku_propagate(topo, cells)) return LatticeState::empty(a.shape(), std::move(mask));
  return LatticeState(a.shape(), std::move(cells), std::move(mask));
}

struct SudokuOracleResult {
  std::vector<SolutionPoint> solutions;
  bool needed_search = false;  // propagation from the givens did not finish the grid
  bool capped = false;         // search stopped at the solution cap
  std::vector<PropagationEvent> trace;
};

inline LatticeState sudoku_initial_state(const SudokuSpec& spec, const SudokuGivens& givens) {
  const LatticeShape shape = spec.shape();
  if (static_cast<int>(givens.size()) != shape.cells()) throw StructuralError("givens size mismatch");
  std::vector<CandidateSet> cells(givens.size());
  for (std::size_t i = 0; i < givens.size(); ++i) {
    if (givens[i] > spec.side()) throw StructuralError("given digit out of range");
    cells[i] = givens[i] ? static_cast<CandidateSet>(1u << (givens[i] - 1)) : shape.full_set();
  }
  return LatticeState(shape, std::move(cells), LatticeState::full_mask(shape));
}

namespace detail {

inline void sudoku_search(const SudokuTopology& topo, std::vector<CandidateSet> cells, std::size_t cap,
                          SudokuOracleResult& out) {
  if (out.solutions.size() >= cap) {
    out.capped = true;
    return;
  }
  if (!sudoku_propagate(topo, cells)) return;
  int best = -1;
  int best_count = 100;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    const int count = popcount(cells[c]);
    if (count > 1 && count < best_count) {
      best = static_cast<int>(c);
      best_count = count;
    }
  }
  const LatticeShape shape = topo.spec.shape();
  if (best < 0) {
    std::vector<std::uint8_t> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) values[c] = static_cast<std::uint8_t>(lowest_symbol(cells[c]));
    out.solutions.emplace_back(shape, std::move(values));
    return;
  }
  CandidateSet rest = cells[static_cast<std::size_t>(best)];
  while (rest) {
    const int v = lowest_symbol(rest);
    rest = static_cast<CandidateSet>(rest & (rest - 1));
    auto next = cells;
    next[static_cast<std::size_t>(best)] = static_cast<CandidateSet>(1u << v);
    sudoku_search(topo, std::move(next), cap, out);
    if (out.solutions.size() >= cap) {
      if (rest) out.capped = true;
      return;
    }
  }
}

}  // namespace detail

/// Exact solution set (up to `cap`) by propagation plus depth-first search.
/// Contradictory givens yield zero solutions.
inline SudokuOracleResult sudoku_oracle_solve(const SudokuSpec& spec, const SudokuGivens& givens,
                                              std::size_t cap = 2) {
  spec.validate();
  const detail::SudokuTopology topo(spec);
  SudokuOracleResult out;
  LatticeState init = sudoku_initial_state(spec, givens);
  std::vector<CandidateSet> cells(init.cells().begin(), init.cells().end());
  if (!sudoku_propagate(topo, cells, &out.trace)) return out;
  out.needed_search = std::any_of(cells.begin(), cells.end(), [](CandidateSet s) { return popcount(s) != 1; });
  detail::sudoku_search(topo, std::move(cells), cap, out);
  std::sort(out.solutions.begin(), out.solutions.end());
  return out;
}

/// Every group all-different and every cell assigned.
inline bool sudoku_valid(const SudokuSpec& spec, const SolutionPoint& y) {
  if (!(y.shape() == spec.shape())) return false;
  for (const auto& g : spec.groups()) {
    unsigned seen = 0;
    for (int c : g) {
      const int v = y.value(c);
      if (v >= spec.side() || (seen >> v) & 1u) return false;
      seen |= 1u << v;
    }
  }
  return true;
}

struct SudokuPuzzle {
  SudokuSpec spec;
  SudokuGivens givens;
  SolutionPoint solution;
};

/// Unique-solution puzzle: random full grid, then greedy removal of givens
/// while the oracle still reports exactly one solution. With `require_search`,
/// puzzles solved by singles alone are rejected and regenerated.
inline SudokuPuzzle sudoku_generate(const SudokuSpec& spec, Rng& rng, bool require_search,
                                    int max_attempts = 200) {
  spec.validate();
  const detail::SudokuTopology topo(spec);
  const int n = spec.side();
  const int k = n * n;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    // Randomized backtracking fill.
    std::vector<std::uint8_t> grid(static_cast<std::size_t>(k), 0);
    std::vector<std::array<std::uint8_t, 9>> order(static_cast<std::size_t>(k));
    std::vector<int> tried(static_cast<std::size_t>(k), 0);
    for (auto& o : order) {
      std::iota(o.begin(), o.begin() + n, std::uint8_t{1});
      std::shuffle(o.begin(), o.begin() + n, rng.engine());
    }
    int pos = 0;
    while (pos >= 0 && pos < k) {
      const auto p = static_cast<std::size_t>(pos);
      bool placed = false;
      while (tried[p] < n) {
        const std::uint8_t d = order[p][static_cast<std::size_t>(tried[p]++)];
        bool ok = true;
        for (int q : topo.peers[p])
          if (q < pos && grid[static_cast<std::size_t>(q)] == d) {
            ok = false;
            break;
          }
        if (ok) {
          grid[p] = d;
          placed = true;
          break;
        }
      }
      if (placed) {
        ++pos;
      } else {
        grid[p] = 0;
        tried[p] = 0;
        std::shuffle(order[p].begin(), order[p].begin() + n, rng.engine());
        --pos;
      }
    }
    if (pos < 0) continue;

    std::vector<std::uint8_t> values(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) values[i] = static_cast<std::uint8_t>(grid[i] - 1);
    SolutionPoint solution(spec.shape(), values);

    SudokuGivens givens = grid;
    std::vector<int> cells(static_cast<std::size_t>(k));
    std::iota(cells.begin(), cells.end(), 0);
    std::shuffle(cells.begin(), cells.end(), rng.engine());
    for (int c : cells) {
      const std::uint8_t keep = givens[static_cast<std::size_t>(c)];
      givens[static_cast<std::size_t>(c)] = 0;
      if (sudoku_oracle_solve(spec, givens, 2).solutions.size() != 1) givens[static_cast<std::size_t>(c)] = keep;
    }
    if (require_search && !sudoku_oracle_solve(spec, givens, 2).needed_search) continue;
    return {spec, std::move(givens), std::move(solution)};
  }
  throw CapacityError("sudoku_generate: retry budget exhausted");
}

/// n lines of n digits, '0' for an empty cell.
inline SudokuGivens sudoku_parse(std::string_view text, int* side_out = nullptr) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\r') continue;
    if (ch == '\n') {
      lines.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) lines.push_back(std::move(current));
  const int n = static_cast<int>(lines.size());
  if (n < 1 || n > 9) throw ParseError("sudoku grid needs 1..9 lines, got " + std::to_string(n), n + 1, 1);
  SudokuGivens givens;
  givens.reserve(static_cast<std::size_t>(n * n));
  for (int r = 0; r < n; ++r) {
    const std::string& line = lines[static_cast<std::size_t>(r)];
    if (static_cast<int>(line.size()) != n)
      throw ParseError("expected " + std::to_string(n) + " characters", r + 1,
                       static_cast<int>(std::min(line.size(), static_cast<std::size_t>(n))) + 1);
    for (int c = 0; c < n; ++c) {
      const char ch = line[static_cast<std::size_t>(c)];
      if (ch < '0' || ch > '0' + n) throw ParseError(std::string("unexpected character '") + ch + "'", r + 1, c + 1);
      givens.push_back(static_cast<std::uint8_t>(ch - '0'));
    }
  }
  if (side_out) *side_out = n;
  return givens;
}

/// Singleton cells print their digit; anything else prints 0.
inline std::string sudoku_serialize(const LatticeState& a) {
  const int n = a.shape().rows;
  std::string out;
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < a.shape().cols; ++c) {
      const CandidateSet s = a.cell(r * a.shape().cols + c);
      out.push_back(popcount(s) == 1 ? static_cast<char>('1' + lowest_symbol(s)) : '0');
    }
    out.push_back('\n');
  }
  return out;
}

inline std::string sudoku_serialize(const SolutionPoint& y) { return sudoku_serialize(y.to_state()); }

inline std::string sudoku_serialize(const SudokuSpec& spec, const SudokuGivens& givens) {
  return sudoku_serialize(sudoku_initial_state(spec, givens));
}

}  // namespace ldt
