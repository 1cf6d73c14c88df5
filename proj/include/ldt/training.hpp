#pragma once

// Solve-procedure training: a pool of partially deduced states, each advanced
// one Step per gradient update, supervised through α over the instance's
// sampled solutions.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldt/clock.hpp"
#include "ldt/error.hpp"
#include "ldt/instance.hpp"
#include "ldt/lattice.hpp"
#include "ldt/loss.hpp"
#include "ldt/model/checkpoint.hpp"
#include "ldt/model/transformer.hpp"
#include "ldt/rng.hpp"
#include "ldt/step.hpp"
#include "ldt/symmetry.hpp"

namespace ldt {

struct TrainConfig {
  int batch_size = 512;
  int total_steps = 4000;
  double pool_multiplier = 1.0;
  int max_pool_age = 100;
  double lr = 3e-3;
  double weight_decay = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double grad_clip = 1.0;
  double warmup_fraction = 0.1;
  bool dataset_augment = true;
  int K = 1;
  std::uint64_t seed = 0;
  LossConfig loss{};

  int pool_size() const { return static_cast<int>(std::lround(pool_multiplier * batch_size)); }

  void validate() const {
    if (batch_size < 1 || total_steps < 0 || max_pool_age < 1 || K < 1)
      throw ContractViolation("batch_size, max_pool_age and K must be positive");
    if (!(pool_multiplier >= 1.0)) throw ContractViolation("pool_multiplier must be >= 1");
    if (!(lr > 0) || weight_decay < 0 || !(grad_clip > 0)) throw ContractViolation("optimizer settings must be positive");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ContractViolation("betas must be in [0, 1)");
    if (!(warmup_fraction >= 0 && warmup_fraction <= 1)) throw ContractViolation("warmup_fraction must be in [0, 1]");
    loss.validate();
  }
};

inline void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"w_pos", c.w_pos},           {"w_neg", c.w_neg},
                     {"lambda_cls", c.lambda_cls}, {"lambda_ce", c.lambda_ce},
                     {"theta_elim", c.theta_elim}, {"theta_cls_train", c.theta_cls_train},
                     {"tau_decide", c.tau_decide}};
}

inline void from_json(const nlohmann::json& j, LossConfig& c) {
  c.w_pos = j.value("w_pos", c.w_pos);
  c.w_neg = j.value("w_neg", c.w_neg);
  c.lambda_cls = j.value("lambda_cls", c.lambda_cls);
  c.lambda_ce = j.value("lambda_ce", c.lambda_ce);
  c.theta_elim = j.value("theta_elim", c.theta_elim);
  c.theta_cls_train = j.value("theta_cls_train", c.theta_cls_train);
  c.tau_decide = j.value("tau_decide", c.tau_decide);
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"total_steps", c.total_steps},
                     {"pool_multiplier", c.pool_multiplier},
                     {"max_pool_age", c.max_pool_age},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"betas", {c.beta1, c.beta2}},
                     {"grad_clip", c.grad_clip},
                     {"warmup_fraction", c.warmup_fraction},
                     {"dataset_augment", c.dataset_augment},
                     {"K", c.K},
                     {"seed", c.seed},
                     {"loss", c.loss}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.pool_multiplier = j.value("pool_multiplier", c.pool_multiplier);
  c.max_pool_age = j.value("max_pool_age", c.max_pool_age);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  if (j.contains("betas")) {
    c.beta1 = j.at("betas").at(0).get<double>();
    c.beta2 = j.at("betas").at(1).get<double>();
  }
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  c.dataset_augment = j.value("dataset_augment", c.dataset_augment);
  c.K = j.value("K", c.K);
  c.seed = j.value("seed", c.seed);
  if (j.contains("loss")) c.loss = j.at("loss").get<LossConfig>();
}

// ---------------------------------------------------------------------------
// Optimizer

/// Linear warmup from 0 over the first warmup_fraction of the run, then
/// cosine decay to 0 at total_steps.
inline double lr_at(const TrainConfig& cfg, long step) {
  const long total = std::max(1, cfg.total_steps);
  const long warmup = static_cast<long>(std::floor(cfg.warmup_fraction * static_cast<double>(total)));
  if (step < warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
  if (total == warmup) return cfg.lr;
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(total - warmup));
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

template <class T>
struct AdamState {
  std::vector<T> m, v;
  long t = 0;
};

/// 1 for parameters that take weight decay.
inline std::vector<std::uint8_t> decay_mask(const ParamLayout& layout) {
  std::vector<std::uint8_t> mask(layout.total(), 0);
  for (const ParamEntry& e : layout.entries())
    if (e.decay) std::fill_n(mask.begin() + static_cast<std::ptrdiff_t>(e.offset), e.size, std::uint8_t{1});
  return mask;
}

/// Global-norm clip then one AdamW update at lr_at(step). Returns the
/// gradient norm before clipping.
template <class T>
double optimizer_step(std::vector<T>& params, std::vector<T>& grads, long step, const TrainConfig& cfg,
                      AdamState<T>& state, std::span<const std::uint8_t> decay) {
  if (grads.size() != params.size() || decay.size() != params.size())
    throw StructuralError("optimizer_step: size mismatch");
  if (state.m.size() != params.size()) {
    state.m.assign(params.size(), T(0));
    state.v.assign(params.size(), T(0));
  }
  double sq = 0;
  for (T g : grads) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm", 0);
  const double clip = norm > cfg.grad_clip ? cfg.grad_clip / norm : 1.0;
  ++state.t;
  const double lr = lr_at(cfg, step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const double eps = 1e-8;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grads[i]) * clip;
    const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    double p = static_cast<double>(params[i]);
    if (decay[i]) p -= lr * cfg.weight_decay * p;
    p -= lr * (m / bc1) / (std::sqrt(v / bc2) + eps);
    params[i] = static_cast<T>(p);
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Pool

struct PoolEntry {
  std::shared_ptr<const ProblemInstance> problem;  // possibly a symmetry image of a dataset instance
  std::size_t source = 0;                          // dataset index
  std::uint64_t lineage = 0;                       // insertion number
  LatticeState x;
  std::optional<LatticeState> y_prev;              // last non-empty target
  int age = 0;
  int depth = 0;  // steps taken since insertion
  Rng rng;
};

/// Per-entry result of one training step.
struct TrainStepOutcome {
  StepRecord record;
  LatticeState target;
  bool target_conflict = false;
  bool target_sound = true;  // ŷ ⊑ x and every surviving y stays consistent with ŷ
};

template <class T>
struct TrainStepResult {
  std::vector<TrainStepOutcome> outcomes;
  LossResult<T> loss;
  std::vector<T> grads;
};

/// One Step on every entry: forward with training dropout, loss against
/// ŷ on all iterations, elimination and branching on the final iteration,
/// conflict and solved read off the ground truth. Entries are advanced in
/// place (x ← x', ŷ_prev, depth); the caller removes terminal ones.
template <class T>
TrainStepResult<T> step_train(const Transformer<T>& model, std::span<PoolEntry* const> entries, const LossConfig& cfg) {
  if (entries.empty()) throw ContractViolation("step_train: empty batch");
  const std::size_t B = entries.size();
  std::vector<LatticeState> inputs, targets;
  std::vector<std::uint8_t> conflict;
  inputs.reserve(B);
  targets.reserve(B);
  TrainStepResult<T> r;
  r.outcomes.resize(B);
  std::vector<Rng> row_rngs;
  row_rngs.reserve(B);
  for (std::size_t i = 0; i < B; ++i) {
    PoolEntry& e = *entries[i];
    const auto& Y = e.problem->solutions;
    if (Y.empty()) throw ContractViolation("step_train: instance '" + e.problem->id + "' has no solutions");
    SupervisionTarget t = supervision_target(e.x, Y, e.y_prev);
    TrainStepOutcome& o = r.outcomes[i];
    o.target_conflict = t.is_conflict;
    o.target_sound = leq(t.target, e.x);
    if (!t.is_conflict)
      for (const auto& y : Y)
        if (consistent(y, e.x) && !consistent(y, t.target)) o.target_sound = false;
    inputs.push_back(e.x);
    targets.push_back(t.target);
    conflict.push_back(t.is_conflict ? 1 : 0);
    o.target = std::move(t.target);
    row_rngs.push_back(e.rng.fork());
  }
  ForwardOptions fo;
  fo.dropout = model.config().dropout_rate;
  if (fo.dropout > 0) fo.row_rngs = row_rngs;
  auto lg = loss_and_grad(model, std::span<const LatticeState>(inputs), targets, conflict, cfg, fo);
  r.loss = std::move(lg.loss);
  r.grads = std::move(lg.grads);

  for (std::size_t i = 0; i < B; ++i) {
    PoolEntry& e = *entries[i];
    TrainStepOutcome& o = r.outcomes[i];
    StepRecord& rec = o.record;
    const auto logits = lg.output.final_candidates(static_cast<int>(i));
    LatticeState next = eliminate(e.x, logits, cfg.theta_elim);
    rec.alive_before = alive_count(e.x);
    rec.eliminated = rec.alive_before - alive_count(next);
    const auto& Y = e.problem->solutions;
    rec.conflict = std::none_of(Y.begin(), Y.end(), [&](const SolutionPoint& y) { return consistent(y, next); });
    rec.solved = !rec.conflict && is_solved_shape(next);
    if (!rec.conflict && !rec.solved) rec.branch = branch_pin(next, logits, cfg.tau_decide, e.rng);
    rec.alive_after = alive_count(next);
    rec.subset = leq(next, e.x);
    if (!o.target_conflict) e.y_prev = o.target;
    e.x = std::move(next);
    ++e.depth;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainMetrics {
  int step = 0;
  double lr = 0;
  double loss = 0, bce = 0, cls = 0, ce = 0;
  double grad_norm = 0;
  int solved = 0;
  int conflicts = 0;
  int evicted = 0;
  int inserted = 0;
  int pool_size = 0;
  double depth_mean = 0;
  int depth_max = 0;
  std::vector<int> depth_histogram;  // pool depths after the step, bucketed by 1
  long audit_failures = 0;           // descent or target-soundness violations this step
  double seconds = 0;
};

inline void to_json(nlohmann::json& j, const TrainMetrics& m) {
  j = nlohmann::json{{"step", m.step},           {"lr", m.lr},
                     {"loss", m.loss},           {"bce", m.bce},
                     {"cls", m.cls},             {"ce", m.ce},
                     {"grad_norm", m.grad_norm}, {"solved", m.solved},
                     {"conflicts", m.conflicts}, {"evicted", m.evicted},
                     {"inserted", m.inserted},   {"pool_size", m.pool_size},
                     {"depth_mean", m.depth_mean}, {"depth_max", m.depth_max},
                     {"depth_histogram", m.depth_histogram},
                     {"audit_failures", m.audit_failures}, {"seconds", m.seconds}};
}

struct TrainHooks {
  std::ostream* metrics = nullptr;  // one JSON record per line
  std::function<void(const TrainMetrics&)> on_step;
  std::string checkpoint_path;  // written every checkpoint_every steps and at the end
  int checkpoint_every = 0;
};

struct TrainSummary {
  std::vector<TrainMetrics> steps;
  long audited_steps = 0;  // chain steps checked for descent and target soundness
  long audit_failures = 0;
  long inserted = 0;
  long solved = 0;
  long conflicts = 0;
  long evicted = 0;
};

/// Trains `model` in place on `dataset`. The pool holds pool_size entries;
/// each step samples batch_size of them uniformly without replacement, runs
/// step_train, drops solved and conflicted entries, ages the rest, evicts
/// those older than max_pool_age and refills from the dataset, cycling
/// through it in a shuffled order.
inline TrainSummary train(Transformer<float>& model, const std::vector<ProblemInstance>& dataset, const TrainConfig& cfg,
                          const TrainHooks& hooks = {}) {
  cfg.validate();
  if (dataset.empty()) throw ContractViolation("train: empty dataset");
  for (const auto& p : dataset) {
    if (p.solutions.empty()) throw ContractViolation("train: instance '" + p.id + "' has no solutions");
    if (!(p.shape() == model.config().shape)) throw StructuralError("train: instance shape does not match the model");
  }

  const Rng master(cfg.seed);
  Rng sampler = master.split(1);
  const Rng entry_streams = master.split(2);
  Rng augment_rng = master.split(3);
  const auto decay = decay_mask(model.layout());
  AdamState<float> adam;
  TrainSummary summary;

  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  std::uint64_t insertions = 0;
  auto fresh_entry = [&]() {
    if (cursor == order.size()) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), sampler.engine());
      cursor = 0;
    }
    const std::size_t src = order[cursor++];
    ProblemInstance inst = dataset[src];
    if (static_cast<int>(inst.solutions.size()) > cfg.K) inst.solutions.resize(static_cast<std::size_t>(cfg.K));
    if (cfg.dataset_augment)
      inst = symmetry_apply(random_symmetry(augment_rng, inst.shape().vocab_size, symmetry_options_for(inst)), inst);
    PoolEntry e;
    e.x = inst.initial;
    e.problem = std::make_shared<const ProblemInstance>(std::move(inst));
    e.source = src;
    e.lineage = insertions;
    e.rng = entry_streams.split(insertions);
    ++insertions;
    return e;
  };

  std::vector<PoolEntry> pool;
  const int capacity = cfg.pool_size();
  while (static_cast<int>(pool.size()) < capacity) pool.push_back(fresh_entry());

  for (int step = 0; step < cfg.total_steps; ++step) {
    detail::Stopwatch clock;
    // Uniform sample without replacement: a partial Fisher-Yates over indices.
    std::vector<std::size_t> idx(pool.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    const std::size_t B = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), pool.size());
    for (std::size_t i = 0; i < B; ++i) {
      const auto j = i + static_cast<std::size_t>(sampler.uniform_int(0, static_cast<int>(idx.size() - i) - 1));
      std::swap(idx[i], idx[j]);
    }
    std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(B));
    std::vector<PoolEntry*> batch;
    for (std::size_t i = 0; i < B; ++i) batch.push_back(&pool[idx[i]]);

    auto result = step_train(model, std::span<PoolEntry* const>(batch), cfg.loss);
    TrainMetrics m;
    m.step = step;
    m.lr = lr_at(cfg, step);
    m.loss = result.loss.total;
    m.bce = result.loss.bce;
    m.cls = result.loss.cls;
    m.ce = result.loss.ce;
    m.grad_norm = optimizer_step(model.params(), result.grads, step, cfg, adam, decay);

    std::vector<std::uint8_t> drop(pool.size(), 0);
    for (std::size_t i = 0; i < B; ++i) {
      const TrainStepOutcome& o = result.outcomes[i];
      ++summary.audited_steps;
      if (!o.record.descends() || !o.target_sound) ++m.audit_failures;
      if (o.record.solved) ++m.solved;
      if (o.record.conflict) ++m.conflicts;
      if (o.record.terminal()) drop[idx[i]] = 1;
    }
    std::vector<PoolEntry> kept;
    kept.reserve(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (drop[i]) continue;
      PoolEntry& e = pool[i];
      if (++e.age > cfg.max_pool_age) {
        ++m.evicted;
        continue;
      }
      kept.push_back(std::move(e));
    }
    pool = std::move(kept);
    while (static_cast<int>(pool.size()) < capacity) {
      pool.push_back(fresh_entry());
      ++m.inserted;
    }

    m.pool_size = static_cast<int>(pool.size());
    for (const auto& e : pool) {
      m.depth_mean += e.depth;
      m.depth_max = std::max(m.depth_max, e.depth);
      if (static_cast<int>(m.depth_histogram.size()) <= e.depth) m.depth_histogram.resize(static_cast<std::size_t>(e.depth) + 1, 0);
      ++m.depth_histogram[static_cast<std::size_t>(e.depth)];
    }
    m.depth_mean /= static_cast<double>(pool.size());
    m.seconds = clock.seconds();

    summary.audit_failures += m.audit_failures;
    summary.solved += m.solved;
    summary.conflicts += m.conflicts;
    summary.evicted += m.evicted;
    summary.inserted += m.inserted;
    if (hooks.metrics) *hooks.metrics << nlohmann::json(m).dump() << '\n';
    if (hooks.on_step) hooks.on_step(m);
    if (!hooks.checkpoint_path.empty() && hooks.checkpoint_every > 0 && (step + 1) % hooks.checkpoint_every == 0)
      save_checkpoint(hooks.checkpoint_path, model);
    summary.steps.push_back(std::move(m));
  }
  summary.inserted += capacity;
  if (!hooks.checkpoint_path.empty()) save_checkpoint(hooks.checkpoint_path, model);
  return summary;
}

}  // namespace ldt
