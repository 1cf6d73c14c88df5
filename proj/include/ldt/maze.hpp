#pragma once

// Grid mazes with one start and one goal. A solution marks the cells of one
// shortest start-goal path.
//
// Lattice vocabulary per cell: wall, off-path, on-path, start, goal. Walls,
// start and goal are pinned singletons; free cells start as {off, on}.

#include <algorithm>
#include <boost/multiprecision/cpp_int.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/rng.hpp"

namespace ldt {

using BigCount = boost::multiprecision::cpp_int;

namespace maze_symbol {
inline constexpr int kWall = 0;
inline constexpr int kOff = 1;
inline constexpr int kOn = 2;
inline constexpr int kStart = 3;
inline constexpr int kGoal = 4;
inline constexpr int kVocab = 5;
}  // namespace maze_symbol

struct MazeSpec {
  int rows = 9;
  int cols = 9;
  int min_path_len = 10;
  double wall_density = 0.3;

  void validate() const {
    if (rows < 1 || cols < 1) throw StructuralError("maze needs at least one cell");
    if (rows * cols < 2) throw StructuralError("maze needs room for start and goal");
    if (wall_density < 0.0 || wall_density >= 1.0) throw StructuralError("wall density must be in [0, 1)");
  }
};

/// Character grid over {'#', ' ', 'S', 'G', 'o'}.
struct MazeGrid {
  int rows = 0;
  int cols = 0;
  std::string cells;  // row-major, rows * cols characters
  int start = -1;
  int goal = -1;

  char at(int i) const { return cells[static_cast<std::size_t>(i)]; }
  bool passable(int i) const { return at(i) != '#'; }
  LatticeShape shape() const noexcept { return {rows, cols, maze_symbol::kVocab}; }

  /// Orthogonal passable neighbours of cell i.
  template <class F>
  void for_each_neighbor(int i, F&& f) const {
    const int r = i / cols;
    const int c = i % cols;
    if (r > 0 && passable(i - cols)) f(i - cols);
    if (r + 1 < rows && passable(i + cols)) f(i + cols);
    if (c > 0 && passable(i - 1)) f(i - 1);
    if (c + 1 < cols && passable(i + 1)) f(i + 1);
  }

  /// Same grid with every 'o' cleared back to free space.
  MazeGrid unsolved() const {
    MazeGrid g = *this;
    std::replace(g.cells.begin(), g.cells.end(), 'o', ' ');
    return g;
  }

  friend bool operator==(const MazeGrid&, const MazeGrid&) = default;
};

/// Parses rows of equal width. Whitespace is significant; only '\n' separates
/// rows and a single trailing newline is tolerated.
inline MazeGrid maze_parse(std::string_view text) {
  std::vector<std::string> lines;
  std::string current;
  for (char ch : text) {
    if (ch == '\n') {
      lines.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(ch);
    }
  }
  if (!current.empty()) lines.push_back(std::move(current));
  if (lines.empty()) throw ParseError("empty maze", 1, 1);
  MazeGrid g;
  g.rows = static_cast<int>(lines.size());
  g.cols = static_cast<int>(lines.front().size());
  if (g.cols == 0) throw ParseError("empty maze row", 1, 1);
  for (int r = 0; r < g.rows; ++r) {
    const std::string& line = lines[static_cast<std::size_t>(r)];
    if (static_cast<int>(line.size()) != g.cols)
      throw ParseError("expected " + std::to_string(g.cols) + " characters", r + 1,
                       static_cast<int>(std::min(line.size(), static_cast<std::size_t>(g.cols))) + 1);
    for (int c = 0; c < g.cols; ++c) {
      const char ch = line[static_cast<std::size_t>(c)];
      const int idx = r * g.cols + c;
      switch (ch) {
        case '#':
        case ' ':
        case 'o':
          break;
        case 'S':
          if (g.start >= 0) throw ParseError("second start cell", r + 1, c + 1);
          g.start = idx;
          break;
        case 'G':
          if (g.goal >= 0) throw ParseError("second goal cell", r + 1, c + 1);
          g.goal = idx;
          break;
        default:
          throw ParseError(std::string("unexpected character '") + ch + "'", r + 1, c + 1);
      }
      g.cells.push_back(ch);
    }
  }
  if (g.start < 0) throw ParseError("maze has no start cell", g.rows, g.cols);
  if (g.goal < 0) throw ParseError("maze has no goal cell", g.rows, g.cols);
  return g;
}

inline std::string maze_serialize(const MazeGrid& g) {
  std::string out;
  for (int r = 0; r < g.rows; ++r) {
    out.append(g.cells, static_cast<std::size_t>(r * g.cols), static_cast<std::size_t>(g.cols));
    out.push_back('\n');
  }
  return out;
}

/// BFS distances over passable cells; -1 for unreachable.
inline std::vector<int> maze_distances(const MazeGrid& g, int from) {
  std::vector<int> dist(g.cells.size(), -1);
  std::deque<int> queue{from};
  dist[static_cast<std::size_t>(from)] = 0;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    g.for_each_neighbor(u, [&](int v) {
      if (dist[static_cast<std::size_t>(v)] < 0) {
        dist[static_cast<std::size_t>(v)] = dist[static_cast<std::size_t>(u)] + 1;
        queue.push_back(v);
      }
    });
  }
  return dist;
}

/// All-shortest-paths DAG. A cell lies on some shortest path iff
/// dist_from_start + dist_to_goal == length.
struct AspDag {
  int rows = 0;
  int cols = 0;
  int start = -1;
  int goal = -1;
  int length = -1;  // edges on a shortest path; -1 when goal is unreachable
  std::vector<int> dist_from_start;
  std::vector<int> dist_to_goal;
  std::vector<std::vector<int>> successors;  // empty for cells off the DAG
  std::vector<BigCount> paths_to_goal;       // number of shortest suffixes from each cell

  bool on_dag(int i) const {
    const auto idx = static_cast<std::size_t>(i);
    return length >= 0 && dist_from_start[idx] >= 0 && dist_to_goal[idx] >= 0 &&
           dist_from_start[idx] + dist_to_goal[idx] == length;
  }

  BigCount path_count() const { return length < 0 ? BigCount(0) : paths_to_goal[static_cast<std::size_t>(start)]; }
};

inline AspDag build_asp_dag(const MazeGrid& g) {
  AspDag dag;
  dag.rows = g.rows;
  dag.cols = g.cols;
  dag.start = g.start;
  dag.goal = g.goal;
  dag.dist_from_start = maze_distances(g, g.start);
  dag.dist_to_goal = maze_distances(g, g.goal);
  const std::size_t k = g.cells.size();
  dag.successors.assign(k, {});
  dag.paths_to_goal.assign(k, BigCount(0));
  dag.length = dag.dist_from_start[static_cast<std::size_t>(g.goal)];
  if (dag.length < 0) return dag;

  std::vector<std::vector<int>> by_layer(static_cast<std::size_t>(dag.length) + 1);
  for (int i = 0; i < static_cast<int>(k); ++i) {
    if (!dag.on_dag(i)) continue;
    by_layer[static_cast<std::size_t>(dag.dist_from_start[static_cast<std::size_t>(i)])].push_back(i);
    g.for_each_neighbor(i, [&](int v) {
      if (dag.on_dag(v) && dag.dist_from_start[static_cast<std::size_t>(v)] ==
                               dag.dist_from_start[static_cast<std::size_t>(i)] + 1)
        dag.successors[static_cast<std::size_t>(i)].push_back(v);
    });
  }
  dag.paths_to_goal[static_cast<std::size_t>(g.goal)] = 1;
  for (std::size_t layer = by_layer.size() - 1; layer-- > 0;)
    for (int u : by_layer[layer])
      for (int v : dag.successors[static_cast<std::size_t>(u)])
        dag.paths_to_goal[static_cast<std::size_t>(u)] += dag.paths_to_goal[static_cast<std::size_t>(v)];
  return dag;
}

/// One shortest path (start..goal inclusive), uniform over all shortest paths:
/// each successor is drawn with probability proportional to its suffix count.
inline std::vector<int> dag_sample_path(const AspDag& dag, Rng& rng) {
  if (dag.path_count() < 1) throw ContractViolation("dag_sample_path: maze has no path");
  std::vector<int> path{dag.start};
  int u = dag.start;
  while (u != dag.goal) {
    const BigCount& total = dag.paths_to_goal[static_cast<std::size_t>(u)];
    boost::random::uniform_int_distribution<BigCount> pick(0, total - 1);
    BigCount r = pick(rng.engine());
    int next = -1;
    for (int v : dag.successors[static_cast<std::size_t>(u)]) {
      const BigCount& w = dag.paths_to_goal[static_cast<std::size_t>(v)];
      if (r < w) {
        next = v;
        break;
      }
      r -= w;
    }
    u = next;
    path.push_back(u);
  }
  return path;
}

/// Initial lattice: walls/start/goal pinned, free cells {off, on}.
inline LatticeState maze_to_lattice(const MazeGrid& g) {
  using namespace maze_symbol;
  std::vector<CandidateSet> cells(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    switch (g.cells[i]) {
      case '#': cells[i] = 1u << kWall; break;
      case 'S': cells[i] = 1u << kStart; break;
      case 'G': cells[i] = 1u << kGoal; break;
      case ' ':
      case 'o': cells[i] = (1u << kOff) | (1u << kOn); break;
      default: throw ParseError("unexpected maze character", static_cast<int>(i) / g.cols + 1, static_cast<int>(i) % g.cols + 1);
    }
  }
  return LatticeState(g.shape(), std::move(cells), LatticeState::full_mask(g.shape()));
}

inline SolutionPoint path_to_solution(const MazeGrid& g, std::span<const int> path) {
  using namespace maze_symbol;
  std::vector<std::uint8_t> values(g.cells.size());
  for (std::size_t i = 0; i < g.cells.size(); ++i) {
    switch (g.cells[i]) {
      case '#': values[i] = kWall; break;
      case 'S': values[i] = kStart; break;
      case 'G': values[i] = kGoal; break;
      default: values[i] = kOff;
    }
  }
  for (int c : path) {
    if (c < 0 || c >= static_cast<int>(g.cells.size()) || !g.passable(c))
      throw ContractViolation("path_to_solution: path crosses a wall");
    if (values[static_cast<std::size_t>(c)] == kOff) values[static_cast<std::size_t>(c)] = kOn;
  }
  return SolutionPoint(g.shape(), std::move(values));
}

/// Grid with the solution's on-path cells drawn as 'o'.
inline MazeGrid solution_to_grid(const MazeGrid& g, const SolutionPoint& y) {
  MazeGrid out = g.unsolved();
  for (int i = 0; i < y.size(); ++i)
    if (y.value(i) == maze_symbol::kOn && out.cells[static_cast<std::size_t>(i)] == ' ')
      out.cells[static_cast<std::size_t>(i)] = 'o';
  return out;
}

/// True iff `y` keeps the fixed cells and its on-path cells form exactly one
/// shortest start-goal path.
inline bool maze_verify(const MazeGrid& g, const SolutionPoint& y, int shortest_length) {
  using namespace maze_symbol;
  if (!(y.shape() == g.shape()) || shortest_length < 1) return false;
  int on_count = 0;
  for (int i = 0; i < y.size(); ++i) {
    const char ch = g.at(i);
    const int v = y.value(i);
    const int expect = ch == '#' ? kWall : ch == 'S' ? kStart : ch == 'G' ? kGoal : -1;
    if (expect >= 0 ? v != expect : (v != kOff && v != kOn)) return false;
    on_count += v == kOn;
  }
  if (on_count != shortest_length - 1) return false;
  // With exactly length-1 marked cells, any start-goal route inside them is
  // a shortest path using all of them.
  std::vector<std::uint8_t> seen(g.cells.size(), 0);
  std::deque<int> queue{g.start};
  seen[static_cast<std::size_t>(g.start)] = 1;
  while (!queue.empty()) {
    const int u = queue.front();
    queue.pop_front();
    if (u == g.goal) return true;
    g.for_each_neighbor(u, [&](int v) {
      const int s = y.value(v);
      if (!seen[static_cast<std::size_t>(v)] && (s == kOn || s == kGoal)) {
        seen[static_cast<std::size_t>(v)] = 1;
        queue.push_back(v);
      }
    });
  }
  return false;
}

inline bool maze_verify(const MazeGrid& g, const SolutionPoint& y) {
  const auto dist = maze_distances(g, g.start);
  return maze_verify(g, y, dist[static_cast<std::size_t>(g.goal)]);
}

struct GeneratedMaze {
  MazeGrid grid;
  AspDag dag;
};

/// Random wall field with start and goal placed on free cells; retried until
/// the goal is reachable with a shortest path of at least `min_path_len`.
inline GeneratedMaze maze_generate(const MazeSpec& spec, Rng& rng, int max_attempts = 5000) {
  spec.validate();
  const int k = spec.rows * spec.cols;
  for (int attempt = 0; attempt < max_attempts; ++attempt) {
    MazeGrid g;
    g.rows = spec.rows;
    g.cols = spec.cols;
    g.cells.assign(static_cast<std::size_t>(k), ' ');
    for (auto& ch : g.cells)
      if (rng.bernoulli(spec.wall_density)) ch = '#';
    std::vector<int> free;
    for (int i = 0; i < k; ++i)
      if (g.cells[static_cast<std::size_t>(i)] == ' ') free.push_back(i);
    if (free.size() < 2) continue;
    g.start = free[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(free.size()) - 1))];
    const auto dist = maze_distances(g, g.start);
    std::vector<int> far;
    for (int i : free)
      if (dist[static_cast<std::size_t>(i)] >= std::max(spec.min_path_len, 1)) far.push_back(i);
    if (far.empty()) continue;
    g.goal = far[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(far.size()) - 1))];
    g.cells[static_cast<std::size_t>(g.start)] = 'S';
    g.cells[static_cast<std::size_t>(g.goal)] = 'G';
    AspDag dag = build_asp_dag(g);
    return {std::move(g), std::move(dag)};
  }
  throw CapacityError("maze_generate: retry budget exhausted");
}

/// K independent uniform shortest paths as lattice points.
inline std::vector<SolutionPoint> dag_sample_uniform(const MazeGrid& g, const AspDag& dag, Rng& rng, int count) {
  std::vector<SolutionPoint> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int s = 0; s < count; ++s) {
    const auto path = dag_sample_path(dag, rng);
    out.push_back(path_to_solution(g, path));
  }
  return out;
}

/// Every shortest path as a lattice point, by walking the DAG. Throws
/// CapacityError when there are more than `limit`.
inline std::vector<SolutionPoint> dag_enumerate(const MazeGrid& g, const AspDag& dag, std::size_t limit) {
  if (dag.path_count() > BigCount(limit)) throw CapacityError("dag_enumerate: too many shortest paths");
  std::vector<SolutionPoint> out;
  if (dag.length < 0) return out;
  std::vector<int> path{dag.start};
  std::function<void(int)> walk = [&](int u) {
    if (u == dag.goal) {
      out.push_back(path_to_solution(g, path));
      return;
    }
    for (int v : dag.successors[static_cast<std::size_t>(u)]) {
      path.push_back(v);
      walk(v);
      path.pop_back();
    }
  };
  walk(dag.start);
  return out;
}

}  // namespace ldt
