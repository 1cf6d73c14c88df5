#pragma once

// Parallel Solve at inference: M slots, each holding one puzzle and K chains
// that step it in lockstep until a chain reaches a solution or the slot runs
// out of rounds.

#include <algorithm>
#include <cmath>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldt/clock.hpp"
#include "ldt/error.hpp"
#include "ldt/instance.hpp"
#include "ldt/lattice.hpp"
#include "ldt/model/transformer.hpp"
#include "ldt/rng.hpp"
#include "ldt/step.hpp"
#include "ldt/symmetry.hpp"

namespace ldt {

struct InferConfig {
  int slots = 8;
  int chains = 64;
  int round_budget = 1000;
  double theta_elim = 0.1;
  double theta_cls_eval = 0.6;
  double tau_decide = 1.5;
  double eval_dropout = 0.05;
  /// Fresh random symmetry around every step; the instance decides which
  /// symmetries are allowed (full group for Sudoku, dihedral only for Maze).
  bool per_step_augment = true;
  /// Check accepted solutions with the domain oracle and treat failures as
  /// conflicts. Off reproduces the trust-the-model protocol.
  bool verify = true;
  bool record_traces = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (slots < 1 || chains < 1 || round_budget < 1) throw ContractViolation("slots, chains and budget must be >= 1");
    if (!(theta_elim > 0 && theta_elim < 1) || !(theta_cls_eval > 0 && theta_cls_eval < 1))
      throw ContractViolation("thresholds must be in (0, 1)");
    if (!(tau_decide > 0)) throw ContractViolation("tau_decide must be positive");
    if (eval_dropout < 0 || eval_dropout >= 1) throw ContractViolation("eval_dropout must be in [0, 1)");
  }
};

inline void to_json(nlohmann::json& j, const InferConfig& c) {
  j = nlohmann::json{{"slots", c.slots},
                     {"chains", c.chains},
                     {"round_budget", c.round_budget},
                     {"theta_elim", c.theta_elim},
                     {"theta_cls_eval", c.theta_cls_eval},
                     {"tau_decide", c.tau_decide},
                     {"eval_dropout", c.eval_dropout},
                     {"per_step_augment", c.per_step_augment},
                     {"verify", c.verify},
                     {"record_traces", c.record_traces},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, InferConfig& c) {
  c.slots = j.value("slots", c.slots);
  c.chains = j.value("chains", c.chains);
  c.round_budget = j.value("round_budget", c.round_budget);
  c.theta_elim = j.value("theta_elim", c.theta_elim);
  c.theta_cls_eval = j.value("theta_cls_eval", c.theta_cls_eval);
  c.tau_decide = j.value("tau_decide", c.tau_decide);
  c.eval_dropout = j.value("eval_dropout", c.eval_dropout);
  c.per_step_augment = j.value("per_step_augment", c.per_step_augment);
  c.verify = j.value("verify", c.verify);
  c.record_traces = j.value("record_traces", c.record_traces);
  c.seed = j.value("seed", c.seed);
}

/// One chain to be stepped: its puzzle, its current state and its stream.
struct InferRow {
  const ProblemInstance* problem = nullptr;
  LatticeState* x = nullptr;
  Rng* rng = nullptr;
};

struct InferStep {
  StepRecord record;
  std::optional<Symmetry> symmetry;  // set when the step ran in an augmented frame
};

/// One batched Step in inference mode: optional symmetry wrap, forward at
/// the eval dropout rate, elimination, conflict from the CLS head or an
/// empty cell, solved when every cell is a singleton, otherwise a branch;
/// the symmetry is inverted before the state is written back.
template <class T>
std::vector<InferStep> step_infer(const Transformer<T>& model, std::span<const InferRow> rows, const InferConfig& cfg) {
  std::vector<InferStep> out(rows.size());
  if (rows.empty()) return out;
  std::vector<LatticeState> frames;
  std::vector<Rng> dropout_rngs;
  frames.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const InferRow& r = rows[i];
    if (cfg.per_step_augment) {
      const Symmetry s = random_symmetry(*r.rng, r.x->shape().vocab_size, symmetry_options_for(*r.problem));
      out[i].symmetry = s;
      frames.push_back(symmetry_apply(s, *r.x));
    } else {
      frames.push_back(*r.x);
    }
    dropout_rngs.push_back(r.rng->fork());
  }
  ForwardOptions fo;
  fo.dropout = cfg.eval_dropout;
  if (fo.dropout > 0) fo.row_rngs = dropout_rngs;
  const auto logits = forward(model, std::span<const LatticeState>(frames), fo);
  const int L = logits.iterations;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const InferRow& r = rows[i];
    StepRecord& rec = out[i].record;
    const auto b = logits.final_candidates(static_cast<int>(i));
    LatticeState next = eliminate(frames[i], b, cfg.theta_elim);
    const double cls = kernels::sigmoid(static_cast<double>(logits.conflict(L - 1, static_cast<int>(i))));
    rec.alive_before = alive_count(*r.x);
    rec.eliminated = rec.alive_before - alive_count(next);
    rec.conflict = cls > cfg.theta_cls_eval || next.is_bottom();
    rec.solved = !rec.conflict && is_solved_shape(next);
    if (!rec.conflict && !rec.solved) rec.branch = branch_pin(next, b, cfg.tau_decide, *r.rng);
    if (out[i].symmetry) {
      next = symmetry_invert(*out[i].symmetry, next);
      if (rec.branch.cell >= 0) {
        const Symmetry inv = symmetry_inverse(*out[i].symmetry);
        rec.branch.cell = symmetry_map_cell(inv, frames[i].shape().rows, frames[i].shape().cols, rec.branch.cell);
        rec.branch.symbol = inv.permutation[static_cast<std::size_t>(rec.branch.symbol)];
      }
    }
    rec.alive_after = alive_count(next);
    rec.subset = leq(next, *r.x);
    *r.x = std::move(next);
  }
  return out;
}

enum class ChainEnd { Running, Solved, Conflict, Rejected, Drained, Cut };

inline const char* chain_end_name(ChainEnd e) {
  switch (e) {
    case ChainEnd::Running: return "running";
    case ChainEnd::Solved: return "solved";
    case ChainEnd::Conflict: return "conflict";
    case ChainEnd::Rejected: return "rejected";
    case ChainEnd::Drained: return "drained";
    case ChainEnd::Cut: return "cut";
  }
  return "?";
}

struct ChainRound {
  int round = 0;  // slot round, counted from 1
  int attempt = 0;
  StepRecord record;
  int dihedral = -1;  // -1 when the step was not augmented
  ChainEnd end = ChainEnd::Running;
};

struct ChainTrace {
  int chain = 0;
  std::vector<ChainRound> rounds;
  int first_end = -1;  // ℓ_c: round of the chain's first self-termination
  ChainEnd termination = ChainEnd::Running;
  int termination_round = -1;
};

enum class Outcome { Solved, Abstained };

struct SolveVerdict {
  std::size_t puzzle = 0;
  std::string id;
  Outcome outcome = Outcome::Abstained;
  std::optional<SolutionPoint> solution;
  bool verified = false;      // oracle check on the returned solution
  int batched_forwards = 0;   // slot rounds spent on the puzzle, drain included
  long sequential_cost = 0;   // Σ_{c<w} ℓ_c + d_w, or K·R on abstain
  int winner = -1;
  int winner_round = -1;
  long chain_steps = 0;       // chain-steps audited for descent
  long descent_violations = 0;
  double seconds = 0;
  std::vector<ChainTrace> traces;  // filled when record_traces is set
};

/// Σ_{c<w} ℓ_c + d_w.
inline long sequential_cost(std::span<const int> first_end, int winner, int winner_round) {
  if (winner < 0 || static_cast<std::size_t>(winner) > first_end.size())
    throw ContractViolation("sequential_cost: winner out of range");
  long total = winner_round;
  for (int c = 0; c < winner; ++c) {
    if (first_end[static_cast<std::size_t>(c)] < 0) throw ContractViolation("sequential_cost: chain not drained");
    total += first_end[static_cast<std::size_t>(c)];
  }
  return total;
}

namespace detail {

struct Chain {
  LatticeState x;
  Rng rng;
  int attempt = 0;
  int first_end = -1;
  bool live = true;
  ChainTrace trace;
};

struct Slot {
  std::size_t puzzle = 0;
  bool busy = false;
  int round = 0;
  int winner = -1;
  int winner_round = -1;
  std::optional<SolutionPoint> solution;
  bool verified = false;
  long steps = 0;
  long violations = 0;
  std::vector<Chain> chains;
  Stopwatch clock;
};

}  // namespace detail

/// Runs every puzzle through the slot/chain scheduler. Chain c of puzzle p
/// draws from Rng(seed).split(p).split(c), and forward rows are independent
/// of each other, so verdicts do not depend on the slot count. A conflicted
/// chain restarts from the puzzle's initial state and keeps its stream.
/// After a winner w is found, chains c < w that have not terminated yet are
/// drained to recover ℓ_c.
template <class T>
std::vector<SolveVerdict> solve_parallel(const Transformer<T>& model, std::span<const ProblemInstance> puzzles,
                                         const InferConfig& cfg) {
  cfg.validate();
  if (puzzles.empty()) throw ContractViolation("solve_parallel: no puzzles");
  for (const auto& p : puzzles)
    if (!(p.shape() == model.config().shape)) throw StructuralError("solve_parallel: puzzle shape does not match the model");

  std::vector<SolveVerdict> verdicts(puzzles.size());
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < puzzles.size(); ++i) queue.push_back(i);
  std::vector<detail::Slot> slots(static_cast<std::size_t>(cfg.slots));
  const Rng master(cfg.seed);

  auto admit = [&](detail::Slot& s, std::size_t p) {
    s = detail::Slot{};
    s.busy = true;
    s.puzzle = p;
    const Rng puzzle_rng = master.split(p);
    for (int c = 0; c < cfg.chains; ++c) {
      detail::Chain ch;
      ch.x = puzzles[p].initial;
      ch.rng = puzzle_rng.split(static_cast<std::uint64_t>(c));
      ch.trace.chain = c;
      s.chains.push_back(std::move(ch));
    }
  };

  auto finish = [&](detail::Slot& s, Outcome outcome) {
    SolveVerdict& v = verdicts[s.puzzle];
    v.puzzle = s.puzzle;
    v.id = puzzles[s.puzzle].id;
    v.outcome = outcome;
    v.batched_forwards = s.round;
    v.chain_steps = s.steps;
    v.descent_violations = s.violations;
    v.seconds = s.clock.seconds();
    if (outcome == Outcome::Solved) {
      v.solution = s.solution;
      v.verified = s.verified;
      v.winner = s.winner;
      v.winner_round = s.winner_round;
      std::vector<int> ends;
      for (const auto& ch : s.chains) ends.push_back(ch.first_end);
      v.sequential_cost = sequential_cost(ends, s.winner, s.winner_round);
    } else {
      v.sequential_cost = static_cast<long>(cfg.chains) * cfg.round_budget;
    }
    if (cfg.record_traces)
      for (auto& ch : s.chains) {
        if (ch.trace.termination == ChainEnd::Running) {
          ch.trace.termination = ChainEnd::Cut;
          ch.trace.termination_round = s.round;
        }
        ch.trace.first_end = ch.first_end;
        v.traces.push_back(std::move(ch.trace));
      }
    s.busy = false;
  };

  for (;;) {
    for (auto& s : slots)
      if (!s.busy && !queue.empty()) {
        admit(s, queue.front());
        queue.pop_front();
      }
    std::vector<InferRow> rows;
    std::vector<std::pair<std::size_t, int>> owner;
    for (std::size_t si = 0; si < slots.size(); ++si) {
      auto& s = slots[si];
      if (!s.busy) continue;
      for (int c = 0; c < cfg.chains; ++c) {
        auto& ch = s.chains[static_cast<std::size_t>(c)];
        if (!ch.live) continue;
        rows.push_back({&puzzles[s.puzzle], &ch.x, &ch.rng});
        owner.emplace_back(si, c);
      }
    }
    if (rows.empty()) break;
    for (auto& s : slots)
      if (s.busy) ++s.round;
    const auto steps = step_infer(model, std::span<const InferRow>(rows), cfg);

    for (std::size_t i = 0; i < steps.size(); ++i) {
      auto& s = slots[owner[i].first];
      const int c = owner[i].second;
      auto& ch = s.chains[static_cast<std::size_t>(c)];
      const ProblemInstance& p = puzzles[s.puzzle];
      const StepRecord& rec = steps[i].record;
      ++s.steps;
      if (!rec.descends()) ++s.violations;
      const bool draining = s.winner >= 0;
      ChainEnd end = ChainEnd::Running;
      std::optional<SolutionPoint> y;
      if (rec.solved) {
        y = SolutionPoint::from_state(ch.x);
        end = (cfg.verify && !verify_solution(p, *y)) ? ChainEnd::Rejected : ChainEnd::Solved;
      } else if (rec.conflict) {
        end = ChainEnd::Conflict;
      }
      if (cfg.record_traces) {
        ChainRound cr;
        cr.round = s.round;
        cr.attempt = ch.attempt;
        cr.record = rec;
        cr.dihedral = steps[i].symmetry ? steps[i].symmetry->dihedral : -1;
        cr.end = end;
        ch.trace.rounds.push_back(cr);
      }
      if (end == ChainEnd::Running) continue;
      if (ch.first_end < 0) ch.first_end = s.round;
      if (draining) {
        ch.live = false;
        if (cfg.record_traces) {
          ch.trace.termination = ChainEnd::Drained;
          ch.trace.termination_round = s.round;
        }
        continue;
      }
      if (end == ChainEnd::Solved && (s.winner_round != s.round || c < s.winner)) {
        // The earliest round wins; within a round the lowest chain index.
        if (s.winner_round != s.round) s.winner = -1;
        if (s.winner < 0 || c < s.winner) {
          s.winner = c;
          s.solution = y;
          s.verified = verify_solution(p, *y);
        }
        s.winner_round = s.round;
        continue;
      }
      // Conflict or rejected solution: restart from the initial state.
      ch.x = p.initial;
      ++ch.attempt;
    }

    for (auto& s : slots) {
      if (!s.busy) continue;
      if (s.winner >= 0) {
        if (s.winner_round == s.round) {
          // Winner found this round: keep only undrained chains below it.
          for (int c = 0; c < cfg.chains; ++c) {
            auto& ch = s.chains[static_cast<std::size_t>(c)];
            const bool keep = c < s.winner && ch.first_end < 0;
            if (!keep && ch.live && cfg.record_traces && ch.trace.termination == ChainEnd::Running) {
              ch.trace.termination = c == s.winner ? ChainEnd::Solved : ChainEnd::Cut;
              ch.trace.termination_round = s.round;
            }
            ch.live = keep;
          }
        }
        const bool drained = std::none_of(s.chains.begin(), s.chains.end(), [](const auto& ch) { return ch.live; });
        if (drained) finish(s, Outcome::Solved);
      } else if (s.round >= cfg.round_budget) {
        finish(s, Outcome::Abstained);
      }
    }
  }
  return verdicts;
}

inline nlohmann::json verdict_to_json(const ProblemInstance& p, const SolveVerdict& v) {
  nlohmann::json j{{"id", v.id},
                   {"outcome", v.outcome == Outcome::Solved ? "solved" : "abstained"},
                   {"verified", v.verified},
                   {"batched_forwards", v.batched_forwards},
                   {"sequential_cost", v.sequential_cost},
                   {"winner", v.winner},
                   {"winner_round", v.winner_round},
                   {"seconds", v.seconds}};
  if (v.solution) j["solution"] = serialize_solution(p, *v.solution);
  if (!v.traces.empty()) {
    auto traces = nlohmann::json::array();
    for (const auto& t : v.traces) {
      auto rounds = nlohmann::json::array();
      for (const auto& r : t.rounds)
        rounds.push_back({{"round", r.round},
                          {"attempt", r.attempt},
                          {"eliminated", r.record.eliminated},
                          {"alive", r.record.alive_after},
                          {"branch_cell", r.record.branch.cell},
                          {"branch_symbol", r.record.branch.symbol},
                          {"dihedral", r.dihedral},
                          {"end", chain_end_name(r.end)}});
      traces.push_back({{"chain", t.chain},
                        {"first_end", t.first_end},
                        {"termination", chain_end_name(t.termination)},
                        {"termination_round", t.termination_round},
                        {"rounds", std::move(rounds)}});
    }
    j["traces"] = std::move(traces);
  }
  return j;
}

}  // namespace ldt
