#include "ldt/maze.hpp"

#include <map>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "gtest/gtest.h"
#include "ldt/instance.hpp"

using namespace ldt;

namespace {

const char* kSample = "######\n#Sooo#\n#  #o#\n#  #o#\n## ooG\n######\n";

// Every simple start-goal path of exactly `length` steps, by plain DFS.
void enumerate_paths(const MazeGrid& g, int u, int length, std::vector<int>& path, std::vector<char>& used,
                     std::vector<std::vector<int>>& out) {
  if (static_cast<int>(path.size()) - 1 == length) {
    if (u == g.goal) out.push_back(path);
    return;
  }
  g.for_each_neighbor(u, [&](int v) {
    if (used[static_cast<std::size_t>(v)]) return;
    used[static_cast<std::size_t>(v)] = 1;
    path.push_back(v);
    enumerate_paths(g, v, length, path, used, out);
    path.pop_back();
    used[static_cast<std::size_t>(v)] = 0;
  });
}

std::vector<std::vector<int>> all_shortest_paths(const MazeGrid& g) {
  const int length = maze_distances(g, g.start)[static_cast<std::size_t>(g.goal)];
  std::vector<std::vector<int>> out;
  if (length < 0) return out;
  std::vector<int> path{g.start};
  std::vector<char> used(g.cells.size(), 0);
  used[static_cast<std::size_t>(g.start)] = 1;
  enumerate_paths(g, g.start, length, path, used, out);
  return out;
}

}  // namespace

TEST(Maze, ParsesAndRoundTripsSample) {
  const MazeGrid g = maze_parse(kSample);
  EXPECT_EQ(g.rows, 6);
  EXPECT_EQ(g.cols, 6);
  EXPECT_EQ(std::count(g.cells.begin(), g.cells.end(), 'S'), 1);
  EXPECT_EQ(std::count(g.cells.begin(), g.cells.end(), 'G'), 1);
  EXPECT_EQ(g.start, 7);
  EXPECT_EQ(g.goal, 29);
  EXPECT_EQ(maze_serialize(g), kSample);
}

TEST(Maze, WhitespaceIsSignificant) {
  const MazeGrid g = maze_parse(" S \n## \n  G\n");
  EXPECT_EQ(g.cols, 3);
  EXPECT_TRUE(g.passable(0));
  EXPECT_EQ(maze_serialize(g), " S \n## \n  G\n");
  EXPECT_EQ(build_asp_dag(g).length, 3);
}

TEST(Maze, ParseErrors) {
  EXPECT_THROW(maze_parse("#S#\n##\n#G#\n"), ParseError);
  EXPECT_THROW(maze_parse("#S#\n#x#\n#G#\n"), ParseError);
  EXPECT_THROW(maze_parse("#S#\n# #\n###\n"), ParseError);    // no goal
  EXPECT_THROW(maze_parse("#SS\n# #\n#G#\n"), ParseError);    // two starts
  try {
    maze_parse("#S#\n#x#\n#G#\n");
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2);
    EXPECT_EQ(e.column(), 2);
  }
}

TEST(Maze, OpenTwoByTwoHasTwoPaths) {
  const MazeGrid g = maze_parse("S \n G\n");
  const AspDag dag = build_asp_dag(g);
  EXPECT_EQ(dag.length, 2);
  EXPECT_EQ(dag.path_count(), 2);
}

TEST(Maze, SinglePathIsAlwaysSampled) {
  const MazeGrid h = maze_parse("S  #\n## #\nG  #\n");
  const AspDag dag = build_asp_dag(h);
  ASSERT_EQ(dag.path_count(), 1);
  Rng rng(1);
  const auto sols = dag_sample_uniform(h, dag, rng, 20);
  for (const auto& y : sols) EXPECT_EQ(y, sols.front());
  EXPECT_TRUE(maze_verify(h, sols.front()));
}

TEST(Maze, PathCountMatchesExhaustiveEnumeration) {
  Rng rng(2024);
  for (int i = 0; i < 40; ++i) {
    const MazeSpec spec{4 + i % 4, 4 + (i / 4) % 4, 3, 0.25};
    const auto m = maze_generate(spec, rng);
    const auto paths = all_shortest_paths(m.grid);
    EXPECT_EQ(m.dag.path_count(), BigCount(paths.size()));
    EXPECT_EQ(m.dag.length, maze_distances(m.grid, m.grid.start)[static_cast<std::size_t>(m.grid.goal)]);
    EXPECT_GE(m.dag.length, spec.min_path_len);
  }
}

TEST(Maze, SampledPathsVerify) {
  Rng rng(8);
  const auto m = maze_generate(MazeSpec{9, 9, 10, 0.3}, rng);
  const auto sols = dag_sample_uniform(m.grid, m.dag, rng, 50);
  const auto init = maze_to_lattice(m.grid);
  for (const auto& y : sols) {
    EXPECT_TRUE(maze_verify(m.grid, y, m.dag.length));
    EXPECT_TRUE(consistent(y, init));
    EXPECT_TRUE(is_solved_shape(y.to_state()));
  }
}

TEST(Maze, UniformSamplingPassesChiSquare) {
  const MazeGrid g = maze_parse("S    \n     \n     \n    G\n");
  const auto paths = all_shortest_paths(g);
  ASSERT_EQ(paths.size(), 35u);  // C(7,3)
  const AspDag dag = build_asp_dag(g);
  ASSERT_EQ(dag.path_count(), 35);
  std::map<std::vector<int>, int> counts;
  Rng rng(99);
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[dag_sample_path(dag, rng)];
  EXPECT_EQ(counts.size(), paths.size());
  const double expected = static_cast<double>(n) / paths.size();
  double stat = 0;
  for (const auto& p : paths) {
    const double d = counts[p] - expected;
    stat += d * d / expected;
  }
  const boost::math::chi_squared dist(static_cast<double>(paths.size() - 1));
  EXPECT_GT(1.0 - boost::math::cdf(dist, stat), 0.001);
}

TEST(Maze, LatticeEncodingPinsFixedCells) {
  const MazeGrid g = maze_parse(kSample).unsolved();
  const auto a = maze_to_lattice(g);
  using namespace maze_symbol;
  for (int i = 0; i < a.size(); ++i) {
    const char ch = g.at(i);
    if (ch == '#') EXPECT_EQ(a.cell(i), 1u << kWall);
    else if (ch == 'S') EXPECT_EQ(a.cell(i), 1u << kStart);
    else if (ch == 'G') EXPECT_EQ(a.cell(i), 1u << kGoal);
    else EXPECT_EQ(a.cell(i), (1u << kOff) | (1u << kOn));
  }
}

TEST(Maze, SolvedGridRoundTrip) {
  Rng rng(12);
  const auto m = maze_generate(MazeSpec{7, 7, 6, 0.3}, rng);
  const auto path = dag_sample_path(m.dag, rng);
  const auto y = path_to_solution(m.grid, path);
  const MazeGrid solved = solution_to_grid(m.grid, y);
  EXPECT_EQ(std::count(solved.cells.begin(), solved.cells.end(), 'o'), m.dag.length - 1);
  for (std::size_t j = 1; j + 1 < path.size(); ++j) EXPECT_EQ(solved.at(path[j]), 'o');
  const MazeGrid reparsed = maze_parse(maze_serialize(solved));
  EXPECT_EQ(reparsed, solved);
  const auto inst = make_maze_instance("m", m.grid, {y});
  EXPECT_EQ(parse_solution(inst, maze_serialize(solved)), y);
  EXPECT_TRUE(consistent(y, maze_to_lattice(m.grid)));
}

TEST(Maze, VerifyRejectsDetoursAndMissingCells) {
  const MazeGrid g = maze_parse("S   \n    \n   G\n");
  const AspDag dag = build_asp_dag(g);
  Rng rng(4);
  const auto path = dag_sample_path(dag, rng);
  auto y = path_to_solution(g, path);
  EXPECT_TRUE(maze_verify(g, y, dag.length));
  // Drop one path cell: disconnected.
  std::vector<int> shorter(path.begin(), path.end());
  shorter.erase(shorter.begin() + 2);
  EXPECT_FALSE(maze_verify(g, path_to_solution(g, shorter), dag.length));
  // The format sample marks an extra cell: not a shortest path.
  const MazeGrid sample = maze_parse(kSample);
  std::vector<int> marked;
  for (int i = 0; i < static_cast<int>(sample.cells.size()); ++i)
    if (sample.at(i) == 'o') marked.push_back(i);
  EXPECT_FALSE(maze_verify(sample.unsolved(), path_to_solution(sample.unsolved(), marked)));
}

TEST(Maze, GenerationIsDeterministic) {
  Rng a(5), b(5);
  EXPECT_EQ(maze_generate(MazeSpec{}, a).grid, maze_generate(MazeSpec{}, b).grid);
}

TEST(Maze, NoPathIsContractViolation) {
  const MazeGrid g = maze_parse("S#G\n");
  const AspDag dag = build_asp_dag(g);
  EXPECT_EQ(dag.path_count(), 0);
  Rng rng(1);
  EXPECT_THROW(dag_sample_path(dag, rng), ContractViolation);
}
