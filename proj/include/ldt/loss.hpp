#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/model/kernels.hpp"
#include "ldt/model/transformer.hpp"

namespace ldt {

struct LossConfig {
  double w_pos = 4.0;
  double w_neg = 0.5;
  double lambda_cls = 0.1;
  double lambda_ce = 0.2;
  double theta_elim = 0.1;
  /// Unused by training, which reads conflicts off the ground truth.
  double theta_cls_train = 0.5;
  double tau_decide = 1.5;

  void validate() const {
    if (!(w_pos > w_neg && w_neg > 0)) throw ContractViolation("loss weights need w_pos > w_neg > 0");
    if (!(theta_elim > 0 && theta_elim < 1)) throw ContractViolation("theta_elim must be in (0, 1)");
    if (!(theta_cls_train > 0 && theta_cls_train < 1)) throw ContractViolation("theta_cls_train must be in (0, 1)");
    if (!(tau_decide > 0)) throw ContractViolation("tau_decide must be positive");
    if (lambda_cls < 0 || lambda_ce < 0) throw ContractViolation("loss term weights must be non-negative");
  }
};

/// Loss value, its three terms (each already averaged over iterations) and
/// the gradient with respect to every logit of the output.
template <class T>
struct LossResult {
  double total = 0;
  double bce = 0;
  double cls = 0;
  double ce = 0;
  std::vector<T> d_candidates;
  std::vector<T> d_conflict;
};

/// Per-iteration loss averaged over iterations:
///   BCE  asymmetric, over candidates alive in the input, averaged over those bits;
///   CLS  symmetric BCE of the conflict logit against the conflict flag, averaged over the batch;
///   CE   softmax over alive candidates at cells whose target is a singleton, averaged over those cells.
template <class T>
LossResult<T> compute_loss(const ModelOutput<T>& out, std::span<const LatticeState> inputs,
                           std::span<const LatticeState> targets, std::span<const std::uint8_t> conflict,
                           const LossConfig& cfg) {
  const int L = out.iterations;
  const int B = out.batch;
  const int k = out.cells;
  const int V = out.vocab;
  if (static_cast<int>(inputs.size()) != B || static_cast<int>(targets.size()) != B ||
      static_cast<int>(conflict.size()) != B)
    throw StructuralError("compute_loss: batch size mismatch");
  for (int b = 0; b < B; ++b)
    if (!inputs[static_cast<std::size_t>(b)].same_frame(targets[static_cast<std::size_t>(b)]) ||
        inputs[static_cast<std::size_t>(b)].size() != k)
      throw StructuralError("compute_loss: target does not match its input");

  LossResult<T> r;
  r.d_candidates.assign(out.candidate_logits.size(), T(0));
  r.d_conflict.assign(out.conflict_logits.size(), T(0));

  long alive_bits = 0;
  long singleton_cells = 0;
  for (int b = 0; b < B; ++b) {
    const LatticeState& x = inputs[static_cast<std::size_t>(b)];
    const LatticeState& t = targets[static_cast<std::size_t>(b)];
    for (int c = 0; c < k; ++c) {
      alive_bits += popcount(x.cell(c));
      if (x.in_puzzle(c) && popcount(t.cell(c)) == 1) ++singleton_cells;
    }
  }
  const double inv_L = 1.0 / L;
  const double bce_norm = alive_bits > 0 ? 1.0 / static_cast<double>(alive_bits) : 0.0;
  const double ce_norm = singleton_cells > 0 ? 1.0 / static_cast<double>(singleton_cells) : 0.0;
  const double cls_norm = 1.0 / B;

  for (int it = 0; it < L; ++it) {
    double bce = 0, cls = 0, ce = 0;
    for (int b = 0; b < B; ++b) {
      const LatticeState& x = inputs[static_cast<std::size_t>(b)];
      const LatticeState& t = targets[static_cast<std::size_t>(b)];
      const std::size_t base = (static_cast<std::size_t>(it) * B + b) * k * V;
      for (int c = 0; c < k; ++c) {
        const CandidateSet alive = x.cell(c);
        if (!alive) continue;
        const T* z = out.candidate_logits.data() + base + static_cast<std::size_t>(c) * V;
        T* dz = r.d_candidates.data() + base + static_cast<std::size_t>(c) * V;
        for (int v = 0; v < V; ++v) {
          if (!((alive >> v) & 1u)) continue;
          const double zv = static_cast<double>(z[v]);
          const double s = kernels::sigmoid(zv);
          if (t.alive(c, v)) {
            bce += -cfg.w_pos * kernels::log_sigmoid(zv);
            dz[v] += static_cast<T>(inv_L * bce_norm * (-cfg.w_pos * (1.0 - s)));
          } else {
            bce += -cfg.w_neg * kernels::log_sigmoid(-zv);
            dz[v] += static_cast<T>(inv_L * bce_norm * (cfg.w_neg * s));
          }
        }
        const CandidateSet tc = t.cell(c);
        if (popcount(tc) == 1) {
          const int target = lowest_symbol(tc);
          double mx = -1e300;
          for (int v = 0; v < V; ++v)
            if ((alive >> v) & 1u) mx = std::max(mx, static_cast<double>(z[v]));
          double sum = 0;
          for (int v = 0; v < V; ++v)
            if ((alive >> v) & 1u) sum += std::exp(static_cast<double>(z[v]) - mx);
          ce += -(static_cast<double>(z[target]) - mx - std::log(sum));
          for (int v = 0; v < V; ++v) {
            if (!((alive >> v) & 1u)) continue;
            const double p = std::exp(static_cast<double>(z[v]) - mx) / sum;
            dz[v] += static_cast<T>(inv_L * cfg.lambda_ce * ce_norm * (p - (v == target ? 1.0 : 0.0)));
          }
        }
      }
      const double zc = static_cast<double>(out.conflict(it, b));
      const bool y = conflict[static_cast<std::size_t>(b)] != 0;
      cls += y ? -kernels::log_sigmoid(zc) : -kernels::log_sigmoid(-zc);
      r.d_conflict[static_cast<std::size_t>(it) * B + b] =
          static_cast<T>(inv_L * cfg.lambda_cls * cls_norm * (kernels::sigmoid(zc) - (y ? 1.0 : 0.0)));
    }
    r.bce += inv_L * bce * bce_norm;
    r.cls += inv_L * cls * cls_norm;
    r.ce += inv_L * ce * ce_norm;
  }
  r.total = r.bce + cfg.lambda_cls * r.cls + cfg.lambda_ce * r.ce;
  if (!std::isfinite(r.total)) throw NumericError("non-finite loss", 0);
  return r;
}

/// Loss and its exact gradient with respect to every parameter.
template <class T>
struct LossAndGrad {
  LossResult<T> loss;
  ModelOutput<T> output;
  std::vector<T> grads;
};

template <class T>
LossAndGrad<T> loss_and_grad(const Transformer<T>& model, std::span<const LatticeState> batch,
                             std::span<const LatticeState> targets, std::span<const std::uint8_t> conflict,
                             const LossConfig& cfg, ForwardOptions opts = {}) {
  opts.keep_cache = true;
  LossAndGrad<T> r;
  r.output = forward(model, batch, opts);
  r.loss = compute_loss(r.output, batch, targets, conflict, cfg);
  r.grads.assign(model.parameter_count(), T(0));
  backward(model, batch, r.output, std::span<const T>(r.loss.d_candidates), std::span<const T>(r.loss.d_conflict),
           r.grads);
  return r;
}

}  // namespace ldt
