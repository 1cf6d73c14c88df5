#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldt/lattice.hpp"
#include "ldt/maze.hpp"
#include "ldt/sudoku.hpp"
#include "ldt/symmetry.hpp"

namespace ldt {

enum class Domain { Sudoku, Maze };

inline const char* domain_name(Domain d) { return d == Domain::Sudoku ? "sudoku" : "maze"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "sudoku") return Domain::Sudoku;
  if (s == "maze") return Domain::Maze;
  throw ContractViolation("unknown domain '" + s + "'");
}

/// A puzzle plus up to K sampled ground-truth solutions (empty at inference).
struct ProblemInstance {
  Domain domain = Domain::Sudoku;
  std::string id;
  LatticeState initial;
  std::vector<SolutionPoint> solutions;
  SudokuSpec sudoku{};  // valid when domain == Sudoku
  MazeGrid maze{};      // valid when domain == Maze (unsolved grid)
  int shortest_length = -1;

  LatticeShape shape() const { return initial.shape(); }
};

inline ProblemInstance make_sudoku_instance(std::string id, const SudokuSpec& spec, const SudokuGivens& givens,
                                            std::vector<SolutionPoint> solutions) {
  ProblemInstance p;
  p.domain = Domain::Sudoku;
  p.id = std::move(id);
  p.sudoku = spec;
  p.initial = sudoku_initial_state(spec, givens);
  p.solutions = std::move(solutions);
  return p;
}

inline ProblemInstance make_maze_instance(std::string id, const MazeGrid& grid, std::vector<SolutionPoint> solutions) {
  ProblemInstance p;
  p.domain = Domain::Maze;
  p.id = std::move(id);
  p.maze = grid.unsolved();
  p.initial = maze_to_lattice(p.maze);
  p.solutions = std::move(solutions);
  const auto dist = maze_distances(p.maze, p.maze.start);
  p.shortest_length = dist[static_cast<std::size_t>(p.maze.goal)];
  return p;
}

/// Domain check used before a solution is reported: Sudoku groups valid and
/// givens kept; Maze marks exactly one shortest path.
inline bool verify_solution(const ProblemInstance& p, const SolutionPoint& y) {
  if (!(y.shape() == p.shape())) return false;
  if (!consistent(y, p.initial)) return false;
  if (p.domain == Domain::Sudoku) return sudoku_valid(p.sudoku, y);
  return maze_verify(p.maze, y, p.shortest_length);
}

/// Symmetries that preserve the domain's semantics.
inline SymmetryOptions symmetry_options_for(const ProblemInstance& p) {
  SymmetryOptions o;
  if (p.domain == Domain::Maze) {
    o.permute_symbols = false;  // wall/free/path/start/goal channels are not interchangeable
    o.allow_transpose = p.maze.rows == p.maze.cols;
  } else {
    o.allow_transpose = p.sudoku.box_rows == p.sudoku.box_cols;
  }
  return o;
}

inline MazeGrid symmetry_apply(const Symmetry& s, const MazeGrid& g) {
  MazeGrid out = g;
  if (s.transposes()) std::swap(out.rows, out.cols);
  for (int i = 0; i < static_cast<int>(g.cells.size()); ++i)
    out.cells[static_cast<std::size_t>(symmetry_map_cell(s, g.rows, g.cols, i))] = g.cells[static_cast<std::size_t>(i)];
  out.start = symmetry_map_cell(s, g.rows, g.cols, g.start);
  out.goal = symmetry_map_cell(s, g.rows, g.cols, g.goal);
  return out;
}

/// Transforms the puzzle and its solutions together.
inline ProblemInstance symmetry_apply(const Symmetry& s, const ProblemInstance& p) {
  ProblemInstance out = p;
  out.initial = symmetry_apply(s, p.initial);
  for (auto& y : out.solutions) y = symmetry_apply(s, y);
  if (p.domain == Domain::Maze) out.maze = symmetry_apply(s, p.maze);
  return out;
}

inline std::string serialize_state(const ProblemInstance& p, const LatticeState& a) {
  if (p.domain == Domain::Sudoku) return sudoku_serialize(a);
  if (auto y = SolutionPoint::from_state(a)) return maze_serialize(solution_to_grid(p.maze, *y));
  return maze_serialize(p.maze);
}

inline std::string serialize_solution(const ProblemInstance& p, const SolutionPoint& y) {
  if (p.domain == Domain::Sudoku) return sudoku_serialize(y);
  return maze_serialize(solution_to_grid(p.maze, y));
}

inline SolutionPoint parse_solution(const ProblemInstance& p, const std::string& text) {
  if (p.domain == Domain::Sudoku) {
    const SudokuGivens digits = sudoku_parse(text);
    std::vector<std::uint8_t> values(digits.size());
    for (std::size_t i = 0; i < digits.size(); ++i) {
      if (digits[i] == 0) throw ParseError("solution grid has an empty cell", static_cast<int>(i) / p.sudoku.side() + 1,
                                           static_cast<int>(i) % p.sudoku.side() + 1);
      values[i] = static_cast<std::uint8_t>(digits[i] - 1);
    }
    return SolutionPoint(p.shape(), std::move(values));
  }
  const MazeGrid solved = maze_parse(text);
  if (solved.rows != p.maze.rows || solved.cols != p.maze.cols)
    throw ParseError("solution maze has different dimensions", 1, 1);
  std::vector<int> path;
  for (int i = 0; i < static_cast<int>(solved.cells.size()); ++i)
    if (solved.at(i) == 'o') path.push_back(i);
  return path_to_solution(p.maze, path);
}

// Instance bundles: one JSON object per line.
//   {"id", "domain", "puzzle", "solutions": [...], "box_rows", "box_cols"}

inline nlohmann::json instance_to_json(const ProblemInstance& p) {
  nlohmann::json j;
  j["id"] = p.id;
  j["domain"] = domain_name(p.domain);
  if (p.domain == Domain::Sudoku) {
    j["box_rows"] = p.sudoku.box_rows;
    j["box_cols"] = p.sudoku.box_cols;
    j["puzzle"] = sudoku_serialize(p.initial);
  } else {
    j["puzzle"] = maze_serialize(p.maze);
  }
  auto sols = nlohmann::json::array();
  for (const auto& y : p.solutions) sols.push_back(serialize_solution(p, y));
  j["solutions"] = std::move(sols);
  return j;
}

inline ProblemInstance instance_from_json(const nlohmann::json& j) {
  const Domain domain = parse_domain(j.at("domain").get<std::string>());
  const std::string id = j.at("id").get<std::string>();
  const std::string puzzle = j.at("puzzle").get<std::string>();
  ProblemInstance p;
  if (domain == Domain::Sudoku) {
    int side = 0;
    const SudokuGivens givens = sudoku_parse(puzzle, &side);
    SudokuSpec spec = j.contains("box_rows")
                          ? SudokuSpec{j.at("box_rows").get<int>(), j.at("box_cols").get<int>()}
                          : SudokuSpec::from_side(side);
    if (spec.side() != side) throw ParseError("box dimensions do not match the grid", 1, 1);
    p = make_sudoku_instance(id, spec, givens, {});
  } else {
    p = make_maze_instance(id, maze_parse(puzzle), {});
  }
  if (j.contains("solutions"))
    for (const auto& s : j.at("solutions")) p.solutions.push_back(parse_solution(p, s.get<std::string>()));
  return p;
}

inline void write_bundle(std::ostream& out, const std::vector<ProblemInstance>& instances) {
  for (const auto& p : instances) out << instance_to_json(p).dump() << '\n';
}

inline std::vector<ProblemInstance> read_bundle(std::istream& in) {
  std::vector<ProblemInstance> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(instance_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("bad bundle record: ") + e.what(), line_no, 1);
    }
  }
  return out;
}

/// Sudoku bundle generation: unique-solution puzzles, K = 1.
inline std::vector<ProblemInstance> generate_sudoku_instances(const SudokuSpec& spec, int count, std::uint64_t seed,
                                                              bool require_search, const std::string& prefix = "sudoku") {
  std::vector<ProblemInstance> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(i));
    SudokuPuzzle puzzle = sudoku_generate(spec, rng, require_search);
    out.push_back(make_sudoku_instance(prefix + "-" + std::to_string(i), spec, puzzle.givens, {puzzle.solution}));
  }
  return out;
}

/// Maze bundle generation with K uniformly sampled shortest paths each.
inline std::vector<ProblemInstance> generate_maze_instances(const MazeSpec& spec, int count, int k_solutions,
                                                            std::uint64_t seed, const std::string& prefix = "maze") {
  std::vector<ProblemInstance> out;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng(seed).split(static_cast<std::uint64_t>(i));
    GeneratedMaze m = maze_generate(spec, rng);
    auto sols = dag_sample_uniform(m.grid, m.dag, rng, k_solutions);
    out.push_back(make_maze_instance(prefix + "-" + std::to_string(i), m.grid, std::move(sols)));
  }
  return out;
}

}  // namespace ldt
