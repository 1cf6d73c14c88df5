#pragma once

// Property and oracle suites shared by the test binaries and `ldt check`.
// Each suite returns a CheckReport; `passed` is the verdict and `detail` a
// one-line summary.

#include <algorithm>
#include <cmath>
#include <array>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>

#include "ldt/clock.hpp"
#include "ldt/instance.hpp"
#include "ldt/lattice.hpp"
#include "ldt/loss.hpp"
#include "ldt/maze.hpp"
#include "ldt/model/transformer.hpp"
#include "ldt/rng.hpp"
#include "ldt/sudoku.hpp"

namespace ldt {

struct CheckReport {
  std::string name;
  bool passed = false;
  long cases = 0;
  long failures = 0;
  double metric = 0;  // suite-specific (max relative error, p-value, ...)
  double seconds = 0;
  std::string detail;
};

namespace detail {

inline LatticeState random_lattice(Rng& rng, const LatticeShape& shape, double keep) {
  std::vector<CandidateSet> cells(static_cast<std::size_t>(shape.cells()), 0);
  for (auto& c : cells)
    for (int v = 0; v < shape.vocab_size; ++v)
      if (rng.bernoulli(keep)) c |= static_cast<CandidateSet>(1u << v);
  return LatticeState(shape, std::move(cells), LatticeState::full_mask(shape));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Gradients

struct GradientCheckOptions {
  double epsilon = 1e-4;
  double tolerance = 1e-3;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  std::uint64_t seed = 0;
};

/// The tiny configuration used for gradient checks: d = 16, L = 2, 2x2 grid.
inline ModelConfig gradient_check_config() {
  ModelConfig c;
  c.embed_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.internal_iterations = 2;
  c.ffn_multiplier = 2.0;
  c.dropout_rate = 0.1;
  c.shape = {2, 2, 3};
  c.use_rope2d = true;
  c.seed = 3;
  return c;
}

/// Compares every parameter gradient with central differences. The batch has
/// a fresh state, a partially pinned state and a conflicted state, so the
/// BCE, CE and CLS terms are all active; dropout masks are replayed from
/// fixed seeds on every evaluation.
inline CheckReport check_gradients(const GradientCheckOptions& opts = {}) {
  detail::Stopwatch clock;
  const ModelConfig cfg = gradient_check_config();
  Transformer<double> model = Transformer<double>::init(cfg);
  Rng perturb(opts.seed + 1);
  for (auto& p : model.params()) p += 0.05 * perturb.normal(0, 1);  // move gains/biases off their init values

  const LatticeShape shape = cfg.shape;
  const SolutionPoint y(shape, {0, 1, 2, 0});
  const SolutionPoint y2(shape, {0, 2, 1, 0});
  const std::vector<SolutionPoint> Y{y, y2};
  std::vector<LatticeState> batch;
  batch.push_back(LatticeState::top(shape));
  LatticeState pinned = LatticeState::top(shape);
  pinned.set_cell(0, 0b001);
  pinned.set_cell(3, 0b011);
  batch.push_back(pinned);
  LatticeState wrong = LatticeState::top(shape);
  wrong.set_cell(0, 0b110);
  batch.push_back(wrong);

  std::vector<LatticeState> targets;
  std::vector<std::uint8_t> conflict;
  for (const auto& x : batch) {
    const auto t = supervision_target(x, Y, LatticeState::top(shape));
    targets.push_back(t.target);
    conflict.push_back(t.is_conflict ? 1 : 0);
  }
  const LossConfig lc;

  auto loss_at = [&](const Transformer<double>& m, std::vector<double>* grads) {
    std::vector<Rng> rngs;
    for (std::size_t b = 0; b < batch.size(); ++b) rngs.push_back(Rng(opts.seed).split(b));
    ForwardOptions fo;
    fo.dropout = cfg.dropout_rate;
    fo.row_rngs = rngs;
    if (grads) {
      auto r = loss_and_grad(m, std::span<const LatticeState>(batch), targets, conflict, lc, fo);
      *grads = std::move(r.grads);
      return r.loss.total;
    }
    const auto out = forward(m, std::span<const LatticeState>(batch), fo);
    return compute_loss(out, std::span<const LatticeState>(batch), targets, conflict, lc).total;
  };

  std::vector<double> analytic;
  loss_at(model, &analytic);
  CheckReport r;
  r.name = "gradients";
  double worst = 0;
  std::string worst_name;
  Transformer<double> probe = model;
  for (const ParamEntry& e : model.layout().entries()) {
    for (std::size_t i = 0; i < e.size; ++i) {
      const std::size_t at = e.offset + i;
      const double saved = probe.params()[at];
      probe.params()[at] = saved + opts.epsilon;
      const double up = loss_at(probe, nullptr);
      probe.params()[at] = saved - opts.epsilon;
      const double down = loss_at(probe, nullptr);
      probe.params()[at] = saved;
      const double numeric = (up - down) / (2 * opts.epsilon);
      const double a = analytic[at];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      ++r.cases;
      if (rel >= opts.tolerance) ++r.failures;
      if (rel > worst) {
        worst = rel;
        worst_name = e.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  r.metric = worst;
  r.passed = r.failures == 0;
  r.seconds = clock.seconds();
  r.detail = std::to_string(r.cases) + " coordinates, max relative error " + std::to_string(worst) + " at " + worst_name;
  return r;
}

// ---------------------------------------------------------------------------
// Galois connection

namespace detail {

inline SolutionPoint random_point(Rng& rng, const LatticeShape& shape) {
  std::vector<std::uint8_t> values(static_cast<std::size_t>(shape.cells()));
  for (auto& v : values) v = static_cast<std::uint8_t>(rng.uniform_int(0, shape.vocab_size - 1));
  return SolutionPoint(shape, std::move(values));
}

/// Mostly singletons so γ stays enumerable; occasionally an empty cell.
inline LatticeState sparse_lattice(Rng& rng, const LatticeShape& shape) {
  std::vector<CandidateSet> cells(static_cast<std::size_t>(shape.cells()));
  for (auto& c : cells) {
    const double u = rng.uniform();
    c = static_cast<CandidateSet>(1u << rng.uniform_int(0, shape.vocab_size - 1));
    if (u < 0.3) c |= static_cast<CandidateSet>(1u << rng.uniform_int(0, shape.vocab_size - 1));
    if (u > 0.995) c = 0;
  }
  return LatticeState(shape, std::move(cells), LatticeState::full_mask(shape));
}

}  // namespace detail

/// S ⊆ γ(α(S)), α(γ(a)) ⊑ a and α(S) ⊑ a ⇔ S ⊆ γ(a), each on `cases`
/// random instances split over a 2x2 and a 4x4 grid.
inline CheckReport check_galois(int cases = 1000, std::uint64_t seed = 0) {
  detail::Stopwatch clock;
  CheckReport r;
  r.name = "galois";
  Rng rng(seed);
  const LatticeShape shapes[] = {{2, 2, 3}, {4, 4, 4}};
  long fail[3] = {0, 0, 0};
  for (int i = 0; i < cases; ++i) {
    const LatticeShape& shape = shapes[i % 2];
    std::vector<SolutionPoint> S;
    const int n = rng.uniform_int(0, 6);
    for (int j = 0; j < n; ++j) S.push_back(detail::random_point(rng, shape));

    // S ⊆ γ(α(S))
    const LatticeState a_s = alpha(S, shape);
    if (!std::all_of(S.begin(), S.end(), [&](const SolutionPoint& y) { return consistent(y, a_s); })) ++fail[0];

    // α(γ(a)) ⊑ a
    const LatticeState a = detail::sparse_lattice(rng, shape);
    const auto g = gamma_enumerate(a, std::size_t{1} << 20);
    if (!leq(alpha(g, shape), a)) ++fail[1];

    // Adjointness on an independent pair.
    const LatticeState b = i % 3 == 0 ? join(a_s, detail::random_lattice(rng, shape, 0.3))
                                      : detail::random_lattice(rng, shape, 0.5 + 0.5 * rng.uniform());
    const bool lhs = leq(a_s, b);
    const bool rhs = std::all_of(S.begin(), S.end(), [&](const SolutionPoint& y) { return consistent(y, b); });
    if (lhs != rhs) ++fail[2];
  }
  r.cases = 3L * cases;
  r.failures = fail[0] + fail[1] + fail[2];
  r.passed = r.failures == 0;
  r.seconds = clock.seconds();
  r.detail = std::to_string(cases) + " cases per law; failures " + std::to_string(fail[0]) + "/" +
             std::to_string(fail[1]) + "/" + std::to_string(fail[2]);
  return r;
}

// ---------------------------------------------------------------------------
// Supervision oracle

namespace detail {

/// All 4x4 Sudoku grids by trying every row permutation.
inline std::vector<std::array<std::uint8_t, 16>> all_four_by_four_grids() {
  std::vector<std::array<std::uint8_t, 4>> perms;
  std::array<std::uint8_t, 4> p{0, 1, 2, 3};
  do perms.push_back(p);
  while (std::next_permutation(p.begin(), p.end()));
  std::vector<std::array<std::uint8_t, 16>> out;
  for (const auto& r0 : perms)
    for (const auto& r1 : perms)
      for (const auto& r2 : perms)
        for (const auto& r3 : perms) {
          const std::array<std::uint8_t, 4>* rows[] = {&r0, &r1, &r2, &r3};
          bool ok = true;
          for (int c = 0; c < 4 && ok; ++c) {
            unsigned seen = 0;
            for (int r = 0; r < 4; ++r) seen |= 1u << (*rows[r])[static_cast<std::size_t>(c)];
            ok = seen == 0xFu;
          }
          for (int b = 0; b < 4 && ok; ++b) {
            unsigned seen = 0;
            for (int r = 0; r < 2; ++r)
              for (int c = 0; c < 2; ++c)
                seen |= 1u << (*rows[(b / 2) * 2 + r])[static_cast<std::size_t>((b % 2) * 2 + c)];
            ok = seen == 0xFu;
          }
          if (!ok) continue;
          std::array<std::uint8_t, 16> g{};
          for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) g[static_cast<std::size_t>(r * 4 + c)] = (*rows[r])[static_cast<std::size_t>(c)];
          out.push_back(g);
        }
  return out;
}

/// Simple start-goal walks of exactly `length` steps, with a Manhattan cut.
inline void walk_paths(const MazeGrid& g, int u, int steps_left, std::vector<int>& path, std::vector<char>& used,
                       std::vector<std::vector<int>>& out) {
  const int gr = g.goal / g.cols, gc = g.goal % g.cols;
  if (std::abs(u / g.cols - gr) + std::abs(u % g.cols - gc) > steps_left) return;
  if (steps_left == 0) {
    if (u == g.goal) out.push_back(path);
    return;
  }
  g.for_each_neighbor(u, [&](int v) {
    if (used[static_cast<std::size_t>(v)]) return;
    used[static_cast<std::size_t>(v)] = 1;
    path.push_back(v);
    walk_paths(g, v, steps_left - 1, path, used, out);
    path.pop_back();
    used[static_cast<std::size_t>(v)] = 0;
  });
}

/// Shortest start-goal paths by depth-first search over increasing lengths.
inline std::vector<std::vector<int>> dfs_shortest_paths(const MazeGrid& g, int max_length) {
  std::vector<std::vector<int>> out;
  std::vector<char> used(g.cells.size(), 0);
  used[static_cast<std::size_t>(g.start)] = 1;
  for (int len = 1; len <= max_length && out.empty(); ++len) {
    std::vector<int> path{g.start};
    walk_paths(g, g.start, len, path, used, out);
  }
  return out;
}

/// α(γ(x) ∩ P) with P given explicitly, computed cell by cell.
inline LatticeState brute_abstraction(const LatticeState& x, const std::vector<std::vector<std::uint8_t>>& P) {
  std::vector<CandidateSet> acc(static_cast<std::size_t>(x.size()), 0);
  for (const auto& y : P) {
    bool inside = true;
    for (int i = 0; i < x.size() && inside; ++i) inside = ((x.cell(i) >> y[static_cast<std::size_t>(i)]) & 1u) != 0;
    if (!inside) continue;
    for (int i = 0; i < x.size(); ++i) acc[static_cast<std::size_t>(i)] |= static_cast<CandidateSet>(1u << y[static_cast<std::size_t>(i)]);
  }
  return LatticeState(x.shape(), std::move(acc), std::vector<std::uint8_t>(x.mask().begin(), x.mask().end()));
}

/// A random state below `initial`, built around one member of P; sometimes
/// the anchor is knocked out so the state may have no solution left.
inline LatticeState random_partial(Rng& rng, const LatticeState& initial, const std::vector<std::uint8_t>& anchor) {
  const double keep = 0.2 + 0.7 * rng.uniform();
  LatticeState x = initial;
  for (int i = 0; i < x.size(); ++i) {
    CandidateSet s = 0;
    for (int v = 0; v < x.shape().vocab_size; ++v)
      if (initial.alive(i, v) && (v == anchor[static_cast<std::size_t>(i)] || rng.bernoulli(keep)))
        s |= static_cast<CandidateSet>(1u << v);
    x.set_cell(i, s);
  }
  if (rng.bernoulli(0.25)) {
    const int c = rng.uniform_int(0, x.size() - 1);
    x.set_cell(c, static_cast<CandidateSet>(x.cell(c) & ~(1u << anchor[static_cast<std::size_t>(c)])));
  }
  return x;
}

}  // namespace detail

/// supervision_target(x, full solution set) against α(γ(x) ∩ ‖p‖) by brute
/// force: half the instances are 4x4 Sudoku with sparse givens (so several
/// solutions), half are small mazes. The library's solution sets come from
/// the Sudoku search and the maze DAG; the brute-force sets from enumerating
/// every 4x4 grid and from plain DFS over paths.
inline CheckReport check_supervision_oracle(int instances = 50, int states_per_instance = 20, std::uint64_t seed = 0) {
  detail::Stopwatch clock;
  CheckReport r;
  r.name = "oracle";
  Rng rng(seed);
  const auto grids = detail::all_four_by_four_grids();
  const SudokuSpec spec{2, 2};
  long multi = 0;
  for (int n = 0; n < instances; ++n) {
    std::vector<std::vector<std::uint8_t>> P;
    std::vector<SolutionPoint> Y;
    LatticeState initial;
    if (n % 2 == 0) {
      const auto& full = grids[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(grids.size()) - 1))];
      SudokuGivens givens(16, 0);
      const double keep = 0.2 + 0.3 * rng.uniform();
      for (std::size_t i = 0; i < 16; ++i)
        if (rng.bernoulli(keep)) givens[i] = static_cast<std::uint8_t>(full[i] + 1);
      for (const auto& g : grids) {
        bool match = true;
        for (std::size_t i = 0; i < 16 && match; ++i) match = givens[i] == 0 || givens[i] == g[i] + 1;
        if (match) P.emplace_back(g.begin(), g.end());
      }
      Y = sudoku_oracle_solve(spec, givens, 100000).solutions;
      initial = sudoku_initial_state(spec, givens);
    } else {
      const MazeSpec ms{4 + rng.uniform_int(0, 1), 4 + rng.uniform_int(0, 1), 3, 0.2};
      const auto m = maze_generate(ms, rng);
      for (const auto& path : detail::dfs_shortest_paths(m.grid, ms.rows * ms.cols)) {
        const SolutionPoint y = path_to_solution(m.grid, path);
        P.emplace_back(y.values().begin(), y.values().end());
      }
      Y = dag_enumerate(m.grid, m.dag, 100000);
      initial = maze_to_lattice(m.grid);
    }
    if (P.size() > 1) ++multi;
    for (int s = 0; s < states_per_instance; ++s) {
      const auto& anchor = P[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(P.size()) - 1))];
      const LatticeState x = detail::random_partial(rng, initial, anchor);
      ++r.cases;
      if (!(supervision_target(x, Y).target == detail::brute_abstraction(x, P))) ++r.failures;
    }
  }
  r.passed = r.failures == 0;
  r.seconds = clock.seconds();
  r.detail = std::to_string(r.cases) + " states over " + std::to_string(instances) + " instances (" +
             std::to_string(multi) + " with several solutions), " + std::to_string(r.failures) + " mismatches";
  return r;
}

// ---------------------------------------------------------------------------
// Shortest-path DAG

/// DAG path counts against DFS on random mazes up to 8x8, then a chi-square
/// test of uniform sampling on a maze with at most 50 shortest paths.
inline CheckReport check_dag(int mazes = 100, int samples = 10000, std::uint64_t seed = 0) {
  detail::Stopwatch clock;
  CheckReport r;
  r.name = "dag";
  Rng rng(seed);
  for (int i = 0; i < mazes; ++i) {
    const MazeSpec spec{3 + rng.uniform_int(0, 5), 3 + rng.uniform_int(0, 5), 2, 0.2 + 0.2 * rng.uniform()};
    const auto m = maze_generate(spec, rng);
    const auto paths = detail::dfs_shortest_paths(m.grid, spec.rows * spec.cols);
    ++r.cases;
    if (m.dag.path_count() != BigCount(paths.size())) ++r.failures;
  }

  // A maze with between 10 and 50 shortest paths.
  Rng pick(seed + 1);
  MazeGrid g;
  std::vector<std::vector<int>> paths;
  for (;;) {
    const auto m = maze_generate(MazeSpec{6, 6, 6, 0.15}, pick);
    paths = detail::dfs_shortest_paths(m.grid, 36);
    if (paths.size() >= 10 && paths.size() <= 50) {
      g = m.grid;
      break;
    }
  }
  const AspDag dag = build_asp_dag(g);
  std::map<std::vector<int>, long> counts;
  for (const auto& p : paths) counts[p] = 0;
  bool outside = false;
  for (int s = 0; s < samples; ++s) {
    const auto p = dag_sample_path(dag, rng);
    auto it = counts.find(p);
    if (it == counts.end()) outside = true;
    else ++it->second;
  }
  const double expected = static_cast<double>(samples) / static_cast<double>(paths.size());
  double stat = 0;
  for (const auto& [p, c] : counts) stat += (c - expected) * (c - expected) / expected;
  const boost::math::chi_squared dist(static_cast<double>(paths.size() - 1));
  const double pvalue = 1.0 - boost::math::cdf(dist, stat);
  ++r.cases;
  if (outside || !(pvalue > 0.001)) ++r.failures;
  r.metric = pvalue;
  r.passed = r.failures == 0;
  r.seconds = clock.seconds();
  r.detail = std::to_string(mazes) + " mazes counted, chi-square over " + std::to_string(paths.size()) +
             " paths p = " + std::to_string(pvalue);
  return r;
}

/// Runs one suite by name: galois, gradients, oracle or dag.
inline CheckReport run_check(const std::string& suite, std::uint64_t seed = 0) {
  if (suite == "galois") return check_galois(1000, seed);
  if (suite == "gradients") {
    GradientCheckOptions o;
    o.seed = seed;
    return check_gradients(o);
  }
  if (suite == "oracle") return check_supervision_oracle(50, 20, seed);
  if (suite == "dag") return check_dag(100, 10000, seed);
  throw ContractViolation("unknown check suite '" + suite + "'");
}

inline const std::vector<std::string>& check_suites() {
  static const std::vector<std::string> names{"galois", "gradients", "oracle", "dag"};
  return names;
}

}  // namespace ldt
