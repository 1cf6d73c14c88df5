#include "ldt/eval.hpp"

#include <sstream>

#include "gtest/gtest.h"

using namespace ldt;

namespace {

std::vector<ProblemInstance> puzzles(int n, std::uint64_t seed) {
  return generate_sudoku_instances(SudokuSpec{2, 2}, n, seed, false);
}

SolveVerdict solved_with(const ProblemInstance& p, const SolutionPoint& y, long cost) {
  SolveVerdict v;
  v.id = p.id;
  v.outcome = Outcome::Solved;
  v.solution = y;
  v.verified = verify_solution(p, y);
  v.sequential_cost = cost;
  v.batched_forwards = static_cast<int>(cost);
  return v;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.embed_dim = 16;
  c.layers = 1;
  c.heads = 2;
  c.internal_iterations = 2;
  c.ffn_multiplier = 2.0;
  c.shape = {4, 4, 4};
  return c;
}

}  // namespace

TEST(Percentile, MatchesLinearInterpolation) {
  // Reference values from the usual linear rule: pos = q/100 * (n - 1).
  const std::vector<double> v{7, 1, 3, 5};
  EXPECT_DOUBLE_EQ(percentile(v, 0), 1);
  EXPECT_DOUBLE_EQ(percentile(v, 50), 4);
  EXPECT_DOUBLE_EQ(percentile(v, 75), 5.5);
  EXPECT_DOUBLE_EQ(percentile(v, 90), 6.4);
  EXPECT_DOUBLE_EQ(percentile(v, 100), 7);
  EXPECT_DOUBLE_EQ(percentile({42}, 95), 42);
  EXPECT_THROW(percentile({}, 50), ContractViolation);
  EXPECT_THROW(percentile(v, 101), ContractViolation);
}

TEST(Summarize, PerfectRunIsHundredHundred) {
  const auto set = puzzles(5, 1);
  std::vector<SolveVerdict> v;
  for (const auto& p : set) v.push_back(solved_with(p, p.solutions[0], 3));
  const auto r = summarize(set, v);
  EXPECT_EQ(r.correct, 5);
  EXPECT_DOUBLE_EQ(r.accuracy(), 1.0);
  EXPECT_DOUBLE_EQ(r.soundness(), 1.0);
  EXPECT_TRUE(r.wrong_answers.empty());
}

TEST(Summarize, AllAbstainIsSoundButInaccurate) {
  const auto set = puzzles(4, 2);
  std::vector<SolveVerdict> v(4);
  const auto r = summarize(set, v);
  EXPECT_EQ(r.abstained, 4);
  EXPECT_DOUBLE_EQ(r.accuracy(), 0.0);
  EXPECT_DOUBLE_EQ(r.soundness(), 1.0);
}

TEST(Summarize, WrongAnswersAreStoredForAudit) {
  const auto set = puzzles(3, 3);
  std::vector<SolveVerdict> v;
  v.push_back(solved_with(set[0], set[0].solutions[0], 2));
  // A grid that keeps the givens but breaks a group.
  std::vector<std::uint8_t> bad(set[1].solutions[0].values().begin(), set[1].solutions[0].values().end());
  int cell = 0;
  while (popcount(set[1].initial.cell(cell)) == 1) ++cell;
  bad[static_cast<std::size_t>(cell)] = static_cast<std::uint8_t>((bad[static_cast<std::size_t>(cell)] + 1) % 4);
  v.push_back(solved_with(set[1], SolutionPoint(set[1].shape(), bad), 9));
  v.emplace_back();
  const auto r = summarize(set, v);
  EXPECT_EQ(r.correct, 1);
  EXPECT_EQ(r.wrong, 1);
  EXPECT_EQ(r.abstained, 1);
  EXPECT_EQ(r.correct + r.wrong + r.abstained, r.total);
  EXPECT_GE(r.soundness(), r.accuracy());
  ASSERT_EQ(r.wrong_answers.size(), 1u);
  EXPECT_EQ(r.wrong_answers[0].id, set[1].id);
  EXPECT_EQ(r.wrong_answers[0].solution, serialize_solution(set[1], SolutionPoint(set[1].shape(), bad)));
  EXPECT_THROW(summarize(set, std::span<const SolveVerdict>(v).first(2)), StructuralError);
}

TEST(Evaluate, ReportInvariantsOnAnUntrainedModel) {
  const auto set = puzzles(6, 4);
  const auto model = Transformer<float>::init(tiny_model());
  InferConfig cfg;
  cfg.chains = 3;
  cfg.round_budget = 20;
  cfg.verify = false;
  std::vector<SolveVerdict> verdicts;
  const auto r = evaluate(model, std::span<const ProblemInstance>(set), cfg, &verdicts);
  EXPECT_EQ(r.total, 6);
  EXPECT_EQ(r.correct + r.wrong + r.abstained, r.total);
  EXPECT_GE(r.soundness(), r.accuracy());
  EXPECT_EQ(r.sequential_costs.size(), 6u);
  EXPECT_EQ(verdicts.size(), 6u);
  EXPECT_EQ(r.descent_violations, 0);
  const auto j = report_to_json(r);
  EXPECT_EQ(j.at("total"), 6);
  EXPECT_TRUE(j.contains("sequential_cost"));
  std::ostringstream csv;
  write_costs_csv(csv, set, verdicts);
  EXPECT_EQ(csv.str().substr(0, 11), "id,outcome,");
}

TEST(Sweeps, TradeoffRowsPerBudgetAndSeed) {
  const auto train_set = puzzles(16, 5);
  const auto test_set = puzzles(4, 6);
  SweepSetup s;
  s.model = tiny_model();
  s.train.batch_size = 8;
  s.train.total_steps = 1;
  s.infer.chains = 2;
  s.infer.round_budget = 15;
  s.seeds = {0, 1};
  const std::vector<int> budgets{0, 3};
  const auto rows = compute_tradeoff_sweep(budgets, s, train_set, test_set);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_LE(r.p50, r.p75);
    EXPECT_LE(r.p75, r.p90);
    EXPECT_LE(r.p90, r.p95);
    EXPECT_EQ(r.costs.size(), 4u);
    EXPECT_EQ(r.descent_violations, 0);
  }
  EXPECT_EQ(rows[0].budget, 0);
  EXPECT_EQ(rows[3].budget, 3);
  EXPECT_LE(pooled_percentile(rows, 3, 50), pooled_percentile(rows, 3, 90));
  std::ostringstream csv;
  write_tradeoff_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, 20), "budget,seed,p50,p75,");
}

TEST(Sweeps, KSweepRowsAndMeans) {
  SweepSetup s;
  s.model = tiny_model();
  s.model.shape = {5, 5, 5};
  s.train.batch_size = 4;
  s.train.total_steps = 2;
  s.infer.chains = 2;
  s.infer.round_budget = 10;
  s.seeds = {0, 1};
  const std::vector<int> ks{1, 4};
  const auto rows = k_sweep(ks, MazeSpec{5, 5, 4, 0.2}, 6, 3, s);
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_GE(r.solve_rate, 0.0);
    EXPECT_LE(r.solve_rate, 1.0);
    EXPECT_GT(r.mean_batched_forwards, 0.0);
  }
  EXPECT_DOUBLE_EQ(mean_solve_rate(rows, 1), (rows[0].solve_rate + rows[2].solve_rate) / 2);
  EXPECT_THROW(mean_solve_rate(rows, 64), ContractViolation);
  std::ostringstream csv;
  write_ksweep_csv(csv, rows);
  EXPECT_EQ(csv.str().substr(0, 13), "K,seed,solve_");
}

TEST(Sweeps, LargerKSupervisionIsCoarser) {
  // α over a superset of consistent solutions is above α over a subset.
  Rng rng(3);
  const auto m = maze_generate(MazeSpec{7, 7, 6, 0.15}, rng);
  const auto paths = dag_sample_uniform(m.grid, m.dag, rng, 16);
  const LatticeState x = maze_to_lattice(m.grid);
  const auto small = supervision_target(x, std::span<const SolutionPoint>(paths).first(1)).target;
  const auto large = supervision_target(x, paths).target;
  EXPECT_TRUE(leq(small, large));
}
