#pragma once

// Recurrent transformer over lattice states.
//
// Tokens: one per grid position (candidate bits + in-puzzle mask, projected
// to d, plus learned row and column embeddings) and a trailing CLS token.
// The block stack is unrolled `internal_iterations` times; before every
// iteration the input embedding is added back onto the running state. Each
// iteration reads out candidate logits per position and a conflict logit from
// the CLS token through heads shared across iterations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"
#include "ldt/model/config.hpp"
#include "ldt/model/kernels.hpp"
#include "ldt/model/rope.hpp"
#include "ldt/rng.hpp"

namespace ldt {

/// Logit assigned to candidates that are dead in the input state, so they can
/// never come back to life.
inline constexpr double kDeadLogit = -1.0e4;

template <class T>
class Transformer {
 public:
  using scalar_type = T;

  Transformer() = default;

  explicit Transformer(const ModelConfig& config)
      : config_(config), layout_(config), params_(layout_.total(), T(0)) {
    build_rope_table();
  }

  /// Deterministic initialisation from `config.seed`: scaled normal weights,
  /// zero biases, unit layer-norm gains.
  static Transformer init(const ModelConfig& config) {
    Transformer m(config);
    Rng rng(config.seed);
    const double residual_scale = 1.0 / std::sqrt(2.0 * config.layers);
    for (const ParamEntry& e : m.layout_.entries()) {
      T* p = m.params_.data() + e.offset;
      const bool is_gain = e.name.ends_with(".gain");
      const bool is_bias = e.name.ends_with(".bias");
      if (is_gain) {
        std::fill(p, p + e.size, T(1));
      } else if (is_bias) {
        std::fill(p, p + e.size, T(0));
      } else {
        double std = 0.1;  // positional and CLS embeddings
        if (e.shape.size() == 2 && e.decay) {
          std = 1.0 / std::sqrt(static_cast<double>(e.shape[0]));
          if (e.name.ends_with("attn.out.weight") || e.name.ends_with("ffn.down.weight")) std *= residual_scale;
        }
        for (std::size_t i = 0; i < e.size; ++i) p[i] = static_cast<T>(rng.normal(0.0, std));
      }
    }
    return m;
  }

  const ModelConfig& config() const noexcept { return config_; }
  const ParamLayout& layout() const noexcept { return layout_; }
  std::vector<T>& params() noexcept { return params_; }
  const std::vector<T>& params() const noexcept { return params_; }
  std::size_t parameter_count() const noexcept { return params_.size(); }

  template <class U>
  Transformer<U> cast() const {
    Transformer<U> out(config_);
    for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i] = static_cast<U>(params_[i]);
    return out;
  }

  /// Cosine/sine tables indexed [position][pair] for each axis.
  struct RopeTable {
    int pairs = 0;
    std::vector<T> row_cos, row_sin, col_cos, col_sin;
  };
  const RopeTable& rope_table() const noexcept { return rope_; }

 private:
  void build_rope_table() {
    if (!config_.use_rope2d) return;
    const int half = config_.head_dim() / 2;
    rope_.pairs = half / 2;
    auto fill = [&](int count, std::vector<T>& cs, std::vector<T>& sn) {
      cs.resize(static_cast<std::size_t>(count * rope_.pairs));
      sn.resize(cs.size());
      for (int p = 0; p < count; ++p)
        for (int j = 0; j < rope_.pairs; ++j) {
          const double angle = p * std::pow(kRopeBase, -2.0 * j / half);
          cs[static_cast<std::size_t>(p * rope_.pairs + j)] = static_cast<T>(std::cos(angle));
          sn[static_cast<std::size_t>(p * rope_.pairs + j)] = static_cast<T>(std::sin(angle));
        }
    };
    fill(config_.shape.rows, rope_.row_cos, rope_.row_sin);
    fill(config_.shape.cols, rope_.col_cos, rope_.col_sin);
  }

  ModelConfig config_{};
  ParamLayout layout_{};
  std::vector<T> params_;
  RopeTable rope_{};
};

/// Activations kept for the backward pass, per (iteration, layer).
template <class T>
struct BlockCache {
  std::vector<T> xhat1, rstd1, qkv, probs, ctx, drop1, xhat2, rstd2, up, act, drop2;
};

template <class T>
struct ForwardCache {
  std::vector<T> features;          // (B*k) x (V+1)
  std::vector<BlockCache<T>> blocks;  // iterations * layers
  std::vector<T> final_xhat;        // iterations x N x d
  std::vector<T> final_rstd;        // iterations x N
  std::vector<std::uint8_t> dead;   // (B*k) x V, 1 = candidate dead in the input
};

/// Per-iteration logits. candidate_logits is laid out
/// [iteration][batch][cell][symbol]; conflict_logits [iteration][batch].
template <class T>
struct ModelOutput {
  int iterations = 0;
  int batch = 0;
  int cells = 0;
  int vocab = 0;
  std::vector<T> candidate_logits;
  std::vector<T> conflict_logits;
  ForwardCache<T> cache;
  bool has_cache = false;
  double dropout = 0.0;

  T candidate(int iteration, int b, int cell, int symbol) const {
    return candidate_logits[((static_cast<std::size_t>(iteration) * batch + b) * cells + cell) * vocab + symbol];
  }
  T conflict(int iteration, int b) const {
    return conflict_logits[static_cast<std::size_t>(iteration) * batch + b];
  }
  std::span<const T> final_candidates(int b) const {
    const std::size_t per = static_cast<std::size_t>(cells) * vocab;
    return {candidate_logits.data() + (static_cast<std::size_t>(iterations - 1) * batch + b) * per, per};
  }
};

struct ForwardOptions {
  /// Dropout probability; 0 disables dropout (training passes the model's
  /// rate, inference its eval-time rate).
  double dropout = 0.0;
  /// One stream per batch row; required when dropout > 0.
  std::span<Rng> row_rngs{};
  bool keep_cache = false;
};

namespace detail {

/// Fills `mask` (tokens x dim) with 0 or 1/(1-p) from a row's stream. Four
/// 16-bit draws per 64-bit word.
template <class T>
void dropout_mask(Rng& rng, double p, T* mask, std::size_t count) {
  const auto threshold = static_cast<std::uint32_t>(p * 65536.0);
  const T keep_scale = T(1) / T(1.0 - p);
  std::size_t i = 0;
  while (i < count) {
    std::uint64_t word = rng();
    for (int s = 0; s < 4 && i < count; ++s, ++i) {
      const auto draw = static_cast<std::uint32_t>((word >> (16 * s)) & 0xffffu);
      mask[i] = draw < threshold ? T(0) : keep_scale;
    }
  }
}

template <class T>
void rope_rotate_token(const typename Transformer<T>::RopeTable& table, T* vec, int heads, int head_dim, int row,
                       int col, bool inverse) {
  const int half = head_dim / 2;
  const T sign = inverse ? T(-1) : T(1);
  for (int h = 0; h < heads; ++h) {
    T* hv = vec + h * head_dim;
    for (int axis = 0; axis < 2; ++axis) {
      const int pos = axis == 0 ? row : col;
      if (pos == 0) continue;
      const T* cs = (axis == 0 ? table.row_cos.data() : table.col_cos.data()) + pos * table.pairs;
      const T* sn = (axis == 0 ? table.row_sin.data() : table.col_sin.data()) + pos * table.pairs;
      T* base = hv + axis * half;
      for (int j = 0; j < table.pairs; ++j) {
        const T a = base[2 * j];
        const T b = base[2 * j + 1];
        const T s = sign * sn[j];
        base[2 * j] = a * cs[j] - b * s;
        base[2 * j + 1] = a * s + b * cs[j];
      }
    }
  }
}

}  // namespace detail

/// Runs the unrolled stack on a batch of states.
template <class T>
ModelOutput<T> forward(const Transformer<T>& model, std::span<const LatticeState> batch, const ForwardOptions& opts) {
  const ModelConfig& cfg = model.config();
  const ParamLayout& lay = model.layout();
  const T* P = model.params().data();
  const int B = static_cast<int>(batch.size());
  const int k = cfg.shape.cells();
  const int V = cfg.shape.vocab_size;
  const int Tk = k + 1;
  const int N = B * Tk;
  const int d = cfg.embed_dim;
  const int H = cfg.heads;
  const int dh = cfg.head_dim();
  const int F = cfg.ffn_dim();
  const int L = cfg.internal_iterations;
  const bool use_dropout = opts.dropout > 0.0;
  if (B == 0) throw ContractViolation("forward: empty batch");
  if (use_dropout && static_cast<int>(opts.row_rngs.size()) != B)
    throw ContractViolation("forward: dropout needs one rng per row");
  for (const auto& s : batch)
    if (!(s.shape() == cfg.shape)) throw StructuralError("forward: state shape does not match the model");

  ModelOutput<T> out;
  out.iterations = L;
  out.batch = B;
  out.cells = k;
  out.vocab = V;
  out.dropout = opts.dropout;
  out.has_cache = opts.keep_cache;
  out.candidate_logits.assign(static_cast<std::size_t>(L) * B * k * V, T(0));
  out.conflict_logits.assign(static_cast<std::size_t>(L) * B, T(0));
  ForwardCache<T>& cache = out.cache;

  // Input features and dead-candidate guard.
  std::vector<T> features(static_cast<std::size_t>(B) * k * (V + 1), T(0));
  std::vector<std::uint8_t> dead(static_cast<std::size_t>(B) * k * V, 1);
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < k; ++c) {
      const std::size_t row = static_cast<std::size_t>(b) * k + c;
      const CandidateSet s = batch[static_cast<std::size_t>(b)].cell(c);
      for (int v = 0; v < V; ++v) {
        const bool alive = (s >> v) & 1u;
        features[row * (V + 1) + v] = alive ? T(1) : T(0);
        dead[row * V + v] = alive ? 0 : 1;
      }
      features[row * (V + 1) + V] = batch[static_cast<std::size_t>(b)].in_puzzle(c) ? T(1) : T(0);
    }

  // Input embedding E (N x d).
  std::vector<T> cell_embed(static_cast<std::size_t>(B) * k * d);
  kernels::matmul(features.data(), B * k, V + 1, P + lay.input_weight, d, P + lay.input_bias, cell_embed.data());
  std::vector<T> embed(static_cast<std::size_t>(N) * d);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < k; ++c) {
      const int r = c / cfg.shape.cols;
      const int col = c % cfg.shape.cols;
      T* dst = embed.data() + (static_cast<std::size_t>(b) * Tk + c) * d;
      const T* src = cell_embed.data() + (static_cast<std::size_t>(b) * k + c) * d;
      const T* pr = P + lay.pos_row + static_cast<std::size_t>(r) * d;
      const T* pc = P + lay.pos_col + static_cast<std::size_t>(col) * d;
      for (int i = 0; i < d; ++i) dst[i] = src[i] + pr[i] + pc[i];
    }
    std::copy_n(P + lay.cls_embed, d, embed.data() + (static_cast<std::size_t>(b) * Tk + k) * d);
  }

  if (opts.keep_cache) {
    cache.features = std::move(features);
    cache.blocks.resize(static_cast<std::size_t>(L) * cfg.layers);
    cache.final_xhat.resize(static_cast<std::size_t>(L) * N * d);
    cache.final_rstd.resize(static_cast<std::size_t>(L) * N);
  }

  const std::size_t nd = static_cast<std::size_t>(N) * d;
  std::vector<T> h(nd, T(0));
  std::vector<T> x(nd), a(nd), tmp(nd), zn(nd), xhat(nd), rstd(static_cast<std::size_t>(N));
  BlockCache<T> local;
  std::vector<T> cell_rows(static_cast<std::size_t>(B) * k * d), cls_rows(static_cast<std::size_t>(B) * d);
  std::vector<T> kt(static_cast<std::size_t>(dh) * Tk), vh(kt.size()), ch(kt.size());
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& rope = model.rope_table();

  // Working buffers live in the cache when one is kept, so nothing is copied.
  auto buffer = [](std::vector<T>& v, std::size_t n) {
    v.resize(n);
    return v.data();
  };
  auto apply_dropout = [&](T* mask) {
    for (int b = 0; b < B; ++b)
      detail::dropout_mask(opts.row_rngs[static_cast<std::size_t>(b)], opts.dropout,
                           mask + static_cast<std::size_t>(b) * Tk * d, static_cast<std::size_t>(Tk) * d);
    for (std::size_t i = 0; i < nd; ++i) tmp[i] *= mask[i];
  };

  for (int it = 0; it < L; ++it) {
    for (std::size_t i = 0; i < nd; ++i) x[i] = h[i] + embed[i];

    for (int l = 0; l < cfg.layers; ++l) {
      const LayerOffsets& o = lay.layers[static_cast<std::size_t>(l)];
      BlockCache<T>& bc = opts.keep_cache ? cache.blocks[static_cast<std::size_t>(it) * cfg.layers + l] : local;
      T* xhat1 = opts.keep_cache ? buffer(bc.xhat1, nd) : xhat.data();
      T* rstd1 = opts.keep_cache ? buffer(bc.rstd1, static_cast<std::size_t>(N)) : rstd.data();
      T* qkv = buffer(bc.qkv, nd * 3);
      T* probs = buffer(bc.probs, static_cast<std::size_t>(B) * H * Tk * Tk);
      T* ctx = buffer(bc.ctx, nd);
      T* drop1 = use_dropout ? buffer(bc.drop1, nd) : nullptr;
      T* xhat2 = opts.keep_cache ? buffer(bc.xhat2, nd) : xhat.data();
      T* rstd2 = opts.keep_cache ? buffer(bc.rstd2, static_cast<std::size_t>(N)) : rstd.data();
      T* up = buffer(bc.up, static_cast<std::size_t>(N) * F);
      T* act = buffer(bc.act, static_cast<std::size_t>(N) * F);
      T* drop2 = use_dropout ? buffer(bc.drop2, nd) : nullptr;

      // Attention sublayer.
      kernels::layer_norm(x.data(), N, d, P + o.ln1_gain, P + o.ln1_bias, a.data(), xhat1, rstd1);
      kernels::matmul(a.data(), N, d, P + o.qkv_weight, 3 * d, P + o.qkv_bias, qkv);
      if (cfg.use_rope2d)
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < k; ++c) {
            T* row = qkv + (static_cast<std::size_t>(b) * Tk + c) * 3 * d;
            const int r = c / cfg.shape.cols;
            const int col = c % cfg.shape.cols;
            detail::rope_rotate_token<T>(rope, row, H, dh, r, col, false);
            detail::rope_rotate_token<T>(rope, row + d, H, dh, r, col, false);
          }
      for (int b = 0; b < B; ++b)
        for (int hd = 0; hd < H; ++hd) {
          T* pb = probs + ((static_cast<std::size_t>(b) * H + hd) * Tk) * Tk;
          const T* base = qkv + static_cast<std::size_t>(b) * Tk * 3 * d + hd * dh;
          for (int u = 0; u < Tk; ++u)
            for (int j = 0; j < dh; ++j) {
              kt[static_cast<std::size_t>(j) * Tk + u] = base[u * 3 * d + d + j] * scale;
              vh[static_cast<std::size_t>(u) * dh + j] = base[u * 3 * d + 2 * d + j];
            }
          kernels::strided_matmul(base, Tk, dh, 3 * d, 1, kt.data(), Tk, static_cast<const T*>(nullptr), pb);
          kernels::softmax_rows(pb, Tk, Tk);
          kernels::matmul(pb, Tk, Tk, vh.data(), dh, static_cast<const T*>(nullptr), ch.data());
          for (int t = 0; t < Tk; ++t)
            std::copy_n(ch.data() + static_cast<std::size_t>(t) * dh, dh,
                        ctx + (static_cast<std::size_t>(b) * Tk + t) * d + hd * dh);
        }
      kernels::matmul(ctx, N, d, P + o.out_weight, d, P + o.out_bias, tmp.data());
      if (use_dropout) apply_dropout(drop1);
      for (std::size_t i = 0; i < nd; ++i) x[i] += tmp[i];

      // Feed-forward sublayer.
      kernels::layer_norm(x.data(), N, d, P + o.ln2_gain, P + o.ln2_bias, a.data(), xhat2, rstd2);
      kernels::matmul(a.data(), N, d, P + o.up_weight, F, P + o.up_bias, up);
      kernels::gelu_forward(up, act, static_cast<std::size_t>(N) * F);
      kernels::matmul(act, N, F, P + o.down_weight, d, P + o.down_bias, tmp.data());
      if (use_dropout) apply_dropout(drop2);
      for (std::size_t i = 0; i < nd; ++i) x[i] += tmp[i];
    }

    // Readout through the shared heads.
    kernels::layer_norm(x.data(), N, d, P + lay.final_gain, P + lay.final_bias, zn.data(), xhat.data(), rstd.data());
    if (opts.keep_cache) {
      std::copy(xhat.begin(), xhat.end(), cache.final_xhat.begin() + static_cast<std::ptrdiff_t>(it) * N * d);
      std::copy(rstd.begin(), rstd.end(), cache.final_rstd.begin() + static_cast<std::ptrdiff_t>(it) * N);
    }
    for (int b = 0; b < B; ++b) {
      std::copy_n(zn.data() + static_cast<std::size_t>(b) * Tk * d, static_cast<std::size_t>(k) * d,
                  cell_rows.data() + static_cast<std::size_t>(b) * k * d);
      std::copy_n(zn.data() + (static_cast<std::size_t>(b) * Tk + k) * d, d, cls_rows.data() + static_cast<std::size_t>(b) * d);
    }
    T* cand = out.candidate_logits.data() + static_cast<std::size_t>(it) * B * k * V;
    kernels::matmul(cell_rows.data(), B * k, d, P + lay.head_weight, V, P + lay.head_bias, cand);
    T* cls = out.conflict_logits.data() + static_cast<std::size_t>(it) * B;
    kernels::matmul(cls_rows.data(), B, d, P + lay.conflict_weight, 1, P + lay.conflict_bias, cls);
    for (std::size_t i = 0; i < dead.size(); ++i) {
      if (dead[i]) cand[i] = static_cast<T>(kDeadLogit);
      else if (!std::isfinite(cand[i])) throw NumericError("non-finite candidate logit", it + 1);
    }
    for (int b = 0; b < B; ++b)
      if (!std::isfinite(cls[b])) throw NumericError("non-finite conflict logit", it + 1);

    std::swap(h, x);
  }
  if (opts.keep_cache) cache.dead = std::move(dead);
  return out;
}

/// Accumulates dLoss/dθ into `grads` given dLoss/dlogits with the output's
/// layout. Requires a forward pass run with keep_cache.
template <class T>
void backward(const Transformer<T>& model, std::span<const LatticeState> batch, const ModelOutput<T>& out,
              std::span<const T> d_candidates, std::span<const T> d_conflict, std::vector<T>& grads) {
  if (!out.has_cache) throw ContractViolation("backward: forward pass did not keep its cache");
  const ModelConfig& cfg = model.config();
  const ParamLayout& lay = model.layout();
  const T* P = model.params().data();
  const ForwardCache<T>& cache = out.cache;
  const int B = out.batch;
  const int k = out.cells;
  const int V = out.vocab;
  const int Tk = k + 1;
  const int N = B * Tk;
  const int d = cfg.embed_dim;
  const int H = cfg.heads;
  const int dh = cfg.head_dim();
  const int F = cfg.ffn_dim();
  const int L = cfg.internal_iterations;
  const bool use_dropout = out.dropout > 0.0;
  if (static_cast<int>(batch.size()) != B) throw StructuralError("backward: batch size mismatch");
  if (d_candidates.size() != out.candidate_logits.size() || d_conflict.size() != out.conflict_logits.size())
    throw StructuralError("backward: gradient shape mismatch");
  grads.resize(model.parameter_count(), T(0));
  T* G = grads.data();
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  const auto& rope = model.rope_table();

  std::vector<T> scratch;
  std::vector<T> dz(static_cast<std::size_t>(N) * d, T(0));  // gradient w.r.t. the running state
  std::vector<T> dembed(dz.size(), T(0));
  std::vector<T> dzn(dz.size()), zn(dz.size()), a(dz.size()), dtmp(dz.size()), da(dz.size()), dctx(dz.size());
  std::vector<T> dqkv(static_cast<std::size_t>(N) * 3 * d), dup(static_cast<std::size_t>(N) * F);
  std::vector<T> cell_rows(static_cast<std::size_t>(B) * k * d), cls_rows(static_cast<std::size_t>(B) * d);
  std::vector<T> dcell_rows(cell_rows.size()), dcls_rows(cls_rows.size());
  std::vector<T> dcand(static_cast<std::size_t>(B) * k * V);
  const std::size_t head_block = static_cast<std::size_t>(Tk) * dh;
  std::vector<T> qh(head_block), kh(head_block), vt(head_block), dch(head_block), dqh(head_block), dkh(head_block),
      dvh(head_block), dp(static_cast<std::size_t>(Tk) * Tk);

  for (int it = L - 1; it >= 0; --it) {
    // Readout heads.
    const T* xhat_f = cache.final_xhat.data() + static_cast<std::size_t>(it) * N * d;
    const T* rstd_f = cache.final_rstd.data() + static_cast<std::size_t>(it) * N;
    for (int r = 0; r < N; ++r)
      for (int i = 0; i < d; ++i)
        zn[static_cast<std::size_t>(r) * d + i] =
            xhat_f[static_cast<std::size_t>(r) * d + i] * P[lay.final_gain + i] + P[lay.final_bias + i];
    for (int b = 0; b < B; ++b) {
      std::copy_n(zn.data() + static_cast<std::size_t>(b) * Tk * d, static_cast<std::size_t>(k) * d,
                  cell_rows.data() + static_cast<std::size_t>(b) * k * d);
      std::copy_n(zn.data() + (static_cast<std::size_t>(b) * Tk + k) * d, d, cls_rows.data() + static_cast<std::size_t>(b) * d);
    }
    const T* dc_src = d_candidates.data() + static_cast<std::size_t>(it) * B * k * V;
    for (std::size_t i = 0; i < dcand.size(); ++i) dcand[i] = cache.dead[i] ? T(0) : dc_src[i];
    std::fill(dcell_rows.begin(), dcell_rows.end(), T(0));
    std::fill(dcls_rows.begin(), dcls_rows.end(), T(0));
    kernels::linear_backward(cell_rows.data(), B * k, d, P + lay.head_weight, V, dcand.data(), dcell_rows.data(),
                             G + lay.head_weight, G + lay.head_bias, scratch);
    kernels::linear_backward(cls_rows.data(), B, d, P + lay.conflict_weight, 1,
                             d_conflict.data() + static_cast<std::size_t>(it) * B, dcls_rows.data(),
                             G + lay.conflict_weight, G + lay.conflict_bias, scratch);
    for (int b = 0; b < B; ++b) {
      std::copy_n(dcell_rows.data() + static_cast<std::size_t>(b) * k * d, static_cast<std::size_t>(k) * d,
                  dzn.data() + static_cast<std::size_t>(b) * Tk * d);
      std::copy_n(dcls_rows.data() + static_cast<std::size_t>(b) * d, d, dzn.data() + (static_cast<std::size_t>(b) * Tk + k) * d);
    }
    kernels::layer_norm_backward(xhat_f, rstd_f, N, d, P + lay.final_gain, dzn.data(), dz.data(), G + lay.final_gain,
                                 G + lay.final_bias);

    for (int l = cfg.layers - 1; l >= 0; --l) {
      const LayerOffsets& o = lay.layers[static_cast<std::size_t>(l)];
      const BlockCache<T>& bc = cache.blocks[static_cast<std::size_t>(it) * cfg.layers + l];

      // Feed-forward sublayer: x2 = x1 + drop(W2 gelu(W1 LN2(x1))).
      for (std::size_t i = 0; i < dz.size(); ++i) dtmp[i] = use_dropout ? dz[i] * bc.drop2[i] : dz[i];
      std::fill(dup.begin(), dup.end(), T(0));
      kernels::linear_backward(bc.act.data(), N, F, P + o.down_weight, d, dtmp.data(), dup.data(), G + o.down_weight,
                               G + o.down_bias, scratch);
      kernels::gelu_backward(bc.up.data(), dup.data(), dup.size());
      for (int r = 0; r < N; ++r)
        for (int i = 0; i < d; ++i)
          a[static_cast<std::size_t>(r) * d + i] =
              bc.xhat2[static_cast<std::size_t>(r) * d + i] * P[o.ln2_gain + i] + P[o.ln2_bias + i];
      std::fill(da.begin(), da.end(), T(0));
      kernels::linear_backward(a.data(), N, d, P + o.up_weight, F, dup.data(), da.data(), G + o.up_weight,
                               G + o.up_bias, scratch);
      kernels::layer_norm_backward(bc.xhat2.data(), bc.rstd2.data(), N, d, P + o.ln2_gain, da.data(), dz.data(),
                                   G + o.ln2_gain, G + o.ln2_bias);

      // Attention sublayer: x1 = x + drop(Wo attn(W_qkv LN1(x))).
      for (std::size_t i = 0; i < dz.size(); ++i) dtmp[i] = use_dropout ? dz[i] * bc.drop1[i] : dz[i];
      std::fill(dctx.begin(), dctx.end(), T(0));
      kernels::linear_backward(bc.ctx.data(), N, d, P + o.out_weight, d, dtmp.data(), dctx.data(), G + o.out_weight,
                               G + o.out_bias, scratch);
      for (int b = 0; b < B; ++b)
        for (int hd = 0; hd < H; ++hd) {
          const T* pb = bc.probs.data() + ((static_cast<std::size_t>(b) * H + hd) * Tk) * Tk;
          const std::size_t off = static_cast<std::size_t>(b) * Tk * 3 * d + hd * dh;
          const T* base = bc.qkv.data() + off;
          for (int u = 0; u < Tk; ++u)
            for (int j = 0; j < dh; ++j) {
              const std::size_t at = static_cast<std::size_t>(u) * dh + j;
              qh[at] = base[u * 3 * d + j];
              kh[at] = base[u * 3 * d + d + j];
              vt[static_cast<std::size_t>(j) * Tk + u] = base[u * 3 * d + 2 * d + j];
              dch[at] = dctx[(static_cast<std::size_t>(b) * Tk + u) * d + hd * dh + j];
            }
          kernels::matmul(dch.data(), Tk, dh, vt.data(), Tk, static_cast<const T*>(nullptr), dp.data());
          std::fill(dvh.begin(), dvh.end(), T(0));
          kernels::matmul_tn(pb, Tk, Tk, dch.data(), dh, dvh.data());
          for (int t = 0; t < Tk; ++t) {
            const T* prow = pb + static_cast<std::size_t>(t) * Tk;
            T* drow = dp.data() + static_cast<std::size_t>(t) * Tk;
            T dot = 0;
            for (int u = 0; u < Tk; ++u) dot += prow[u] * drow[u];
            for (int u = 0; u < Tk; ++u) drow[u] = prow[u] * (drow[u] - dot) * scale;
          }
          kernels::matmul(dp.data(), Tk, Tk, kh.data(), dh, static_cast<const T*>(nullptr), dqh.data());
          std::fill(dkh.begin(), dkh.end(), T(0));
          kernels::matmul_tn(dp.data(), Tk, Tk, qh.data(), dh, dkh.data());
          T* dbase = dqkv.data() + off;
          for (int u = 0; u < Tk; ++u)
            for (int j = 0; j < dh; ++j) {
              const std::size_t at = static_cast<std::size_t>(u) * dh + j;
              dbase[u * 3 * d + j] = dqh[at];
              dbase[u * 3 * d + d + j] = dkh[at];
              dbase[u * 3 * d + 2 * d + j] = dvh[at];
            }
        }
      if (cfg.use_rope2d)
        for (int b = 0; b < B; ++b)
          for (int c = 0; c < k; ++c) {
            T* row = dqkv.data() + (static_cast<std::size_t>(b) * Tk + c) * 3 * d;
            const int r = c / cfg.shape.cols;
            const int col = c % cfg.shape.cols;
            detail::rope_rotate_token<T>(rope, row, H, dh, r, col, true);
            detail::rope_rotate_token<T>(rope, row + d, H, dh, r, col, true);
          }
      for (int r = 0; r < N; ++r)
        for (int i = 0; i < d; ++i)
          a[static_cast<std::size_t>(r) * d + i] =
              bc.xhat1[static_cast<std::size_t>(r) * d + i] * P[o.ln1_gain + i] + P[o.ln1_bias + i];
      std::fill(da.begin(), da.end(), T(0));
      kernels::linear_backward(a.data(), N, d, P + o.qkv_weight, 3 * d, dqkv.data(), da.data(), G + o.qkv_weight,
                               G + o.qkv_bias, scratch);
      kernels::layer_norm_backward(bc.xhat1.data(), bc.rstd1.data(), N, d, P + o.ln1_gain, da.data(), dz.data(),
                                   G + o.ln1_gain, G + o.ln1_bias);
    }

    // The iteration input was h + E; h is the previous iteration's output.
    for (std::size_t i = 0; i < dz.size(); ++i) dembed[i] += dz[i];
    if (it == 0) std::fill(dz.begin(), dz.end(), T(0));
  }

  // Input embedding.
  std::vector<T> dcell(static_cast<std::size_t>(B) * k * d);
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < k; ++c) {
      const T* src = dembed.data() + (static_cast<std::size_t>(b) * Tk + c) * d;
      std::copy_n(src, d, dcell.data() + (static_cast<std::size_t>(b) * k + c) * d);
      T* gr = G + lay.pos_row + static_cast<std::size_t>(c / cfg.shape.cols) * d;
      T* gc = G + lay.pos_col + static_cast<std::size_t>(c % cfg.shape.cols) * d;
      for (int i = 0; i < d; ++i) {
        gr[i] += src[i];
        gc[i] += src[i];
      }
    }
    const T* src = dembed.data() + (static_cast<std::size_t>(b) * Tk + k) * d;
    for (int i = 0; i < d; ++i) G[lay.cls_embed + i] += src[i];
  }
  kernels::linear_backward(cache.features.data(), B * k, V + 1, P + lay.input_weight, d, dcell.data(),
                           static_cast<T*>(nullptr), G + lay.input_weight, G + lay.input_bias, scratch);
}

}  // namespace ldt
