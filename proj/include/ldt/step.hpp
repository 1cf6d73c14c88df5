#pragma once

// Pieces of one Solve step shared by training and inference: threshold
// elimination on the final-iteration logits and the sample-pin branch.

#include <cmath>
#include <span>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/rng.hpp"

namespace ldt {

/// x' = x with every candidate whose σ(logit) < θ removed. Logits are laid
/// out [cell][symbol].
template <class T>
LatticeState eliminate(const LatticeState& x, std::span<const T> logits, double theta) {
  const int V = x.shape().vocab_size;
  if (logits.size() != static_cast<std::size_t>(x.size()) * V) throw StructuralError("eliminate: logit shape mismatch");
  const double cut = std::log(theta / (1.0 - theta));  // σ(z) < θ  ⇔  z < logit(θ)
  LatticeState out = x;
  for (int c = 0; c < x.size(); ++c) {
    CandidateSet s = x.cell(c);
    for (int v = 0; v < V; ++v)
      if (((s >> v) & 1u) && static_cast<double>(logits[static_cast<std::size_t>(c) * V + v]) < cut)
        s = static_cast<CandidateSet>(s & ~(1u << v));
    out.set_cell(c, s);
  }
  return out;
}

struct BranchPick {
  int cell = -1;
  int symbol = -1;
};

/// Picks an in-puzzle cell with at least two candidates uniformly, samples
/// one of its candidates from softmax(logit / τ) and pins it.
template <class T>
BranchPick branch_pin(LatticeState& x, std::span<const T> logits, double tau, Rng& rng) {
  const int V = x.shape().vocab_size;
  std::vector<int> open;
  for (int c = 0; c < x.size(); ++c)
    if (x.in_puzzle(c) && popcount(x.cell(c)) >= 2) open.push_back(c);
  if (open.empty()) throw ContractViolation("branch_pin: no cell with two or more candidates");
  BranchPick pick;
  pick.cell = open[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(open.size()) - 1))];
  const CandidateSet s = x.cell(pick.cell);
  const T* z = logits.data() + static_cast<std::size_t>(pick.cell) * V;
  double mx = -1e300;
  for (int v = 0; v < V; ++v)
    if ((s >> v) & 1u) mx = std::max(mx, static_cast<double>(z[v]) / tau);
  double weights[kMaxVocab] = {};
  double total = 0;
  for (int v = 0; v < V; ++v)
    if ((s >> v) & 1u) total += weights[v] = std::exp(static_cast<double>(z[v]) / tau - mx);
  double u = rng.uniform() * total;
  pick.symbol = lowest_symbol(s);
  for (int v = 0; v < V; ++v) {
    if (!((s >> v) & 1u)) continue;
    pick.symbol = v;
    if (u < weights[v]) break;
    u -= weights[v];
  }
  x.set_cell(pick.cell, static_cast<CandidateSet>(1u << pick.symbol));
  return pick;
}

/// What happened to one chain in one step.
struct StepRecord {
  long alive_before = 0;
  long alive_after = 0;
  long eliminated = 0;
  BranchPick branch{};
  bool conflict = false;
  bool solved = false;
  bool subset = true;  // x' ⊑ x

  bool terminal() const noexcept { return conflict || solved; }
  /// x' ⊑ x, and the alive count strictly drops unless the step terminated.
  bool descends() const noexcept { return subset && (terminal() || alive_after < alive_before); }
};

}  // namespace ldt
