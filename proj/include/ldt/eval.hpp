#pragma once

// Evaluation: oracle-checked reports over a test set, the training-budget
// tradeoff sweep and the K sweep, plus their comma-separated outputs.

#include <algorithm>
#include <cmath>
#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldt/clock.hpp"
#include "ldt/error.hpp"
#include "ldt/inference.hpp"
#include "ldt/instance.hpp"
#include "ldt/model/transformer.hpp"
#include "ldt/training.hpp"

namespace ldt {

struct WrongAnswer {
  std::string id;
  std::string solution;
};

struct EvalReport {
  long total = 0;
  long correct = 0;
  long wrong = 0;
  long abstained = 0;  // slots that ran out of rounds
  std::vector<long> sequential_costs;
  std::vector<int> batched_forwards;
  std::vector<WrongAnswer> wrong_answers;
  long chain_steps = 0;
  long descent_violations = 0;
  double seconds = 0;

  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
  double soundness() const {
    return total ? static_cast<double>(correct + abstained) / static_cast<double>(total) : 0.0;
  }
  double solve_rate() const { return accuracy(); }
  double seconds_per_example() const { return total ? seconds / static_cast<double>(total) : 0.0; }
  double mean_batched_forwards() const {
    if (batched_forwards.empty()) return 0.0;
    double s = 0;
    for (const int f : batched_forwards) s += f;
    return s / static_cast<double>(batched_forwards.size());
  }
};

/// Linearly interpolated percentile, q in [0, 100].
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ContractViolation("percentile of an empty sample");
  if (!(q >= 0 && q <= 100)) throw ContractViolation("percentile q must be in [0, 100]");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Folds verdicts into a report. A solution counts as correct only if the
/// domain oracle accepts it.
inline EvalReport summarize(std::span<const ProblemInstance> test, std::span<const SolveVerdict> verdicts) {
  if (test.size() != verdicts.size()) throw StructuralError("summarize: verdict count does not match the test set");
  EvalReport r;
  r.total = static_cast<long>(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const SolveVerdict& v = verdicts[i];
    r.sequential_costs.push_back(v.sequential_cost);
    r.batched_forwards.push_back(v.batched_forwards);
    r.chain_steps += v.chain_steps;
    r.descent_violations += v.descent_violations;
    if (v.outcome == Outcome::Abstained) {
      ++r.abstained;
    } else if (v.solution && verify_solution(test[i], *v.solution)) {
      ++r.correct;
    } else {
      ++r.wrong;
      r.wrong_answers.push_back({test[i].id, v.solution ? serialize_solution(test[i], *v.solution) : std::string{}});
    }
  }
  return r;
}

template <class T>
EvalReport evaluate(const Transformer<T>& model, std::span<const ProblemInstance> test, const InferConfig& cfg,
                    std::vector<SolveVerdict>* verdicts_out = nullptr) {
  detail::Stopwatch clock;
  auto verdicts = solve_parallel(model, test, cfg);
  EvalReport r = summarize(test, verdicts);
  r.seconds = clock.seconds();
  if (verdicts_out) *verdicts_out = std::move(verdicts);
  return r;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto wrong = nlohmann::json::array();
  for (const auto& w : r.wrong_answers) wrong.push_back({{"id", w.id}, {"solution", w.solution}});
  nlohmann::json j{{"total", r.total},
                   {"correct", r.correct},
                   {"wrong", r.wrong},
                   {"abstained", r.abstained},
                   {"accuracy", r.accuracy()},
                   {"soundness", r.soundness()},
                   {"seconds", r.seconds},
                   {"seconds_per_example", r.seconds_per_example()},
                   {"mean_batched_forwards", r.mean_batched_forwards()},
                   {"chain_steps", r.chain_steps},
                   {"descent_violations", r.descent_violations},
                   {"wrong_answers", std::move(wrong)}};
  if (!r.sequential_costs.empty()) {
    std::vector<double> c(r.sequential_costs.begin(), r.sequential_costs.end());
    j["sequential_cost"] = {{"p50", percentile(c, 50)}, {"p75", percentile(c, 75)},
                            {"p90", percentile(c, 90)}, {"p95", percentile(c, 95)}};
  }
  return j;
}

/// One line per puzzle: id, outcome and sequential cost, for histograms.
inline void write_costs_csv(std::ostream& out, std::span<const ProblemInstance> test, std::span<const SolveVerdict> v) {
  out << "id,outcome,verified,batched_forwards,sequential_cost,seconds\n";
  for (std::size_t i = 0; i < v.size(); ++i)
    out << test[i].id << ',' << (v[i].outcome == Outcome::Solved ? "solved" : "abstained") << ',' << v[i].verified
        << ',' << v[i].batched_forwards << ',' << v[i].sequential_cost << ',' << v[i].seconds << '\n';
}

// ---------------------------------------------------------------------------
// Sweeps

/// Shared settings for sweeps that train a fresh model per point.
struct SweepSetup {
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Called after each point with a short description.
  std::function<void(const std::string&)> progress;
};

struct TradeoffRow {
  int budget = 0;
  std::uint64_t seed = 0;
  double p50 = 0, p75 = 0, p90 = 0, p95 = 0;
  double accuracy = 0;
  double train_seconds = 0;
  std::vector<long> costs;
  long chain_steps = 0;
  long descent_violations = 0;
};

namespace detail {

inline Transformer<float> train_point(const SweepSetup& s, const std::vector<ProblemInstance>& data, int steps, int K,
                                      std::uint64_t seed, double& seconds) {
  ModelConfig mc = s.model;
  mc.seed = seed;
  TrainConfig tc = s.train;
  tc.total_steps = steps;
  tc.K = K;
  tc.seed = seed;
  Stopwatch clock;
  auto model = Transformer<float>::init(mc);
  if (steps > 0) train(model, data, tc);
  seconds = clock.seconds();
  return model;
}

}  // namespace detail

/// For each training-step budget and seed, trains from scratch and records
/// sequential-cost percentiles on the test set.
inline std::vector<TradeoffRow> compute_tradeoff_sweep(std::span<const int> budgets, const SweepSetup& s,
                                                       const std::vector<ProblemInstance>& train_set,
                                                       const std::vector<ProblemInstance>& test_set) {
  std::vector<TradeoffRow> rows;
  for (const int budget : budgets) {
    if (budget < 0) throw ContractViolation("tradeoff sweep: negative budget");
    for (const std::uint64_t seed : s.seeds) {
      TradeoffRow row;
      row.budget = budget;
      row.seed = seed;
      const auto model = detail::train_point(s, train_set, budget, s.train.K, seed, row.train_seconds);
      InferConfig ic = s.infer;
      ic.seed = seed;
      const auto r = evaluate(model, std::span<const ProblemInstance>(test_set), ic);
      std::vector<double> c(r.sequential_costs.begin(), r.sequential_costs.end());
      row.p50 = percentile(c, 50);
      row.p75 = percentile(c, 75);
      row.p90 = percentile(c, 90);
      row.p95 = percentile(c, 95);
      row.accuracy = r.accuracy();
      row.costs = r.sequential_costs;
      row.chain_steps = r.chain_steps;
      row.descent_violations = r.descent_violations;
      if (s.progress)
        s.progress("budget " + std::to_string(budget) + " seed " + std::to_string(seed) + ": p50 " +
                   std::to_string(row.p50) + " p90 " + std::to_string(row.p90) + " acc " + std::to_string(row.accuracy));
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

/// Percentile over the costs of every seed at one budget.
inline double pooled_percentile(std::span<const TradeoffRow> rows, int budget, double q) {
  std::vector<double> c;
  for (const auto& r : rows)
    if (r.budget == budget) c.insert(c.end(), r.costs.begin(), r.costs.end());
  return percentile(std::move(c), q);
}

inline void write_tradeoff_csv(std::ostream& out, std::span<const TradeoffRow> rows) {
  out << "budget,seed,p50,p75,p90,p95,accuracy,train_seconds\n";
  for (const auto& r : rows)
    out << r.budget << ',' << r.seed << ',' << r.p50 << ',' << r.p75 << ',' << r.p90 << ',' << r.p95 << ','
        << r.accuracy << ',' << r.train_seconds << '\n';
}

struct KSweepRow {
  int K = 0;
  std::uint64_t seed = 0;
  double solve_rate = 0;
  double mean_batched_forwards = 0;
  double train_seconds = 0;
  long chain_steps = 0;
  long descent_violations = 0;
};

/// Per K and seed: draws a maze training set with up to K sampled shortest
/// paths per maze, trains with K-solution supervision and evaluates on a
/// held-out maze set.
inline std::vector<KSweepRow> k_sweep(std::span<const int> ks, const MazeSpec& maze, int train_count, int test_count,
                                      const SweepSetup& s) {
  std::vector<KSweepRow> rows;
  for (const std::uint64_t seed : s.seeds) {
    const auto test = generate_maze_instances(maze, test_count, 1, Rng(seed).split(2).seed(), "maze-test");
    for (const int K : ks) {
      if (K < 1) throw ContractViolation("k sweep: K must be >= 1");
      // Same mazes for every K at a seed; only the sampled paths differ in count.
      const auto data = generate_maze_instances(maze, train_count, K, Rng(seed).split(1).seed(), "maze-train");
      KSweepRow row;
      row.K = K;
      row.seed = seed;
      const auto model = detail::train_point(s, data, s.train.total_steps, K, seed, row.train_seconds);
      InferConfig ic = s.infer;
      ic.seed = seed;
      const auto r = evaluate(model, std::span<const ProblemInstance>(test), ic);
      row.solve_rate = r.solve_rate();
      row.mean_batched_forwards = r.mean_batched_forwards();
      row.chain_steps = r.chain_steps;
      row.descent_violations = r.descent_violations;
      if (s.progress)
        s.progress("K " + std::to_string(K) + " seed " + std::to_string(seed) + ": solve rate " +
                   std::to_string(row.solve_rate) + " forwards " + std::to_string(row.mean_batched_forwards));
      rows.push_back(row);
    }
  }
  return rows;
}

inline double mean_solve_rate(std::span<const KSweepRow> rows, int K) {
  double s = 0;
  int n = 0;
  for (const auto& r : rows)
    if (r.K == K) {
      s += r.solve_rate;
      ++n;
    }
  if (n == 0) throw ContractViolation("mean_solve_rate: no rows for K");
  return s / n;
}

inline void write_ksweep_csv(std::ostream& out, std::span<const KSweepRow> rows) {
  out << "K,seed,solve_rate,mean_batched_forwards,train_seconds\n";
  for (const auto& r : rows)
    out << r.K << ',' << r.seed << ',' << r.solve_rate << ',' << r.mean_batched_forwards << ',' << r.train_seconds
        << '\n';
}

}  // namespace ldt
