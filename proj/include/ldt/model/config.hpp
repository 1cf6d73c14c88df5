#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ldt/error.hpp"
#include "ldt/lattice.hpp"

namespace ldt {

struct ModelConfig {
  int embed_dim = 128;
  int layers = 4;
  int heads = 4;
  int internal_iterations = 16;
  double ffn_multiplier = 4.0;
  double dropout_rate = 0.1;
  LatticeShape shape{9, 9, 9};
  bool use_rope2d = false;
  std::uint64_t seed = 0;

  int head_dim() const noexcept { return embed_dim / heads; }
  int ffn_dim() const noexcept { return static_cast<int>(embed_dim * ffn_multiplier + 0.5); }
  int tokens() const noexcept { return shape.cells() + 1; }  // cells + CLS

  void validate() const {
    shape.validate();
    if (embed_dim < 1 || layers < 1 || heads < 1) throw ContractViolation("model dimensions must be positive");
    if (embed_dim % heads != 0) throw ContractViolation("embed_dim must be divisible by heads");
    if (internal_iterations < 1) throw ContractViolation("internal_iterations must be >= 1");
    if (ffn_dim() < 1) throw ContractViolation("ffn_multiplier too small");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw ContractViolation("dropout_rate must be in [0, 1)");
    if (use_rope2d && head_dim() % 4 != 0) throw ContractViolation("2D RoPE needs head_dim divisible by 4");
  }

  /// Base set: d = 128, 4 layers, 4 heads, 16 iterations, 9x9 Sudoku.
  static ModelConfig sudoku_base() { return {}; }

  /// Maze variant: d = 192 with 2D RoPE on a 30x30 grid.
  static ModelConfig maze_base() {
    ModelConfig c;
    c.embed_dim = 192;
    c.shape = {30, 30, 5};
    c.use_rope2d = true;
    return c;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"embed_dim", c.embed_dim},
                     {"layers", c.layers},
                     {"heads", c.heads},
                     {"internal_iterations", c.internal_iterations},
                     {"ffn_multiplier", c.ffn_multiplier},
                     {"dropout_rate", c.dropout_rate},
                     {"rows", c.shape.rows},
                     {"cols", c.shape.cols},
                     {"vocab_size", c.shape.vocab_size},
                     {"use_rope2d", c.use_rope2d},
                     {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  ModelConfig d;
  c.embed_dim = j.value("embed_dim", d.embed_dim);
  c.layers = j.value("layers", d.layers);
  c.heads = j.value("heads", d.heads);
  c.internal_iterations = j.value("internal_iterations", d.internal_iterations);
  c.ffn_multiplier = j.value("ffn_multiplier", d.ffn_multiplier);
  c.dropout_rate = j.value("dropout_rate", d.dropout_rate);
  c.shape.rows = j.value("rows", d.shape.rows);
  c.shape.cols = j.value("cols", d.shape.cols);
  c.shape.vocab_size = j.value("vocab_size", d.shape.vocab_size);
  c.use_rope2d = j.value("use_rope2d", d.use_rope2d);
  c.seed = j.value("seed", d.seed);
}

/// One named tensor inside the flat parameter vector.
struct ParamEntry {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  bool decay = false;  // weight decay applies to matrices only
};

/// Offsets of a transformer block's tensors.
struct LayerOffsets {
  std::size_t ln1_gain, ln1_bias;
  std::size_t qkv_weight, qkv_bias;
  std::size_t out_weight, out_bias;
  std::size_t ln2_gain, ln2_bias;
  std::size_t up_weight, up_bias;
  std::size_t down_weight, down_bias;
};

class ParamLayout {
 public:
  ParamLayout() = default;

  explicit ParamLayout(const ModelConfig& c) {
    c.validate();
    const int d = c.embed_dim;
    const int v = c.shape.vocab_size;
    const int f = c.ffn_dim();
    input_weight = add("input.weight", {v + 1, d}, true);
    input_bias = add("input.bias", {d});
    pos_row = add("pos.row", {c.shape.rows, d});
    pos_col = add("pos.col", {c.shape.cols, d});
    cls_embed = add("cls.embed", {d});
    for (int l = 0; l < c.layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      LayerOffsets o{};
      o.ln1_gain = add(p + "ln1.gain", {d});
      o.ln1_bias = add(p + "ln1.bias", {d});
      o.qkv_weight = add(p + "attn.qkv.weight", {d, 3 * d}, true);
      o.qkv_bias = add(p + "attn.qkv.bias", {3 * d});
      o.out_weight = add(p + "attn.out.weight", {d, d}, true);
      o.out_bias = add(p + "attn.out.bias", {d});
      o.ln2_gain = add(p + "ln2.gain", {d});
      o.ln2_bias = add(p + "ln2.bias", {d});
      o.up_weight = add(p + "ffn.up.weight", {d, f}, true);
      o.up_bias = add(p + "ffn.up.bias", {f});
      o.down_weight = add(p + "ffn.down.weight", {f, d}, true);
      o.down_bias = add(p + "ffn.down.bias", {d});
      layers.push_back(o);
    }
    final_gain = add("final_ln.gain", {d});
    final_bias = add("final_ln.bias", {d});
    head_weight = add("head.candidates.weight", {d, v}, true);
    head_bias = add("head.candidates.bias", {v});
    conflict_weight = add("head.conflict.weight", {d, 1}, true);
    conflict_bias = add("head.conflict.bias", {1});
  }

  std::size_t total() const noexcept { return total_; }
  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }

  std::size_t input_weight = 0, input_bias = 0, pos_row = 0, pos_col = 0, cls_embed = 0;
  std::vector<LayerOffsets> layers;
  std::size_t final_gain = 0, final_bias = 0, head_weight = 0, head_bias = 0, conflict_weight = 0, conflict_bias = 0;

 private:
  std::size_t add(std::string name, std::vector<int> shape, bool decay = false) {
    std::size_t size = 1;
    for (int s : shape) size *= static_cast<std::size_t>(s);
    entries_.push_back({std::move(name), std::move(shape), total_, size, decay});
    const std::size_t at = total_;
    total_ += size;
    return at;
  }

  std::vector<ParamEntry> entries_;
  std::size_t total_ = 0;
};

}  // namespace ldt
