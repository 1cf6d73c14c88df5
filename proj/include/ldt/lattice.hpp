#pragma once

// Grid powerset lattice: every position carries a set of still-viable
// vocabulary symbols. Sets are 16-bit masks, bit v set <=> symbol v alive.

#include <bit>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ldt/error.hpp"

namespace ldt {

using CandidateSet = std::uint16_t;

inline constexpr int kMaxVocab = 16;

inline int popcount(CandidateSet s) noexcept { return std::popcount(static_cast<unsigned>(s)); }

/// Index of the lowest alive symbol; undefined for the empty set.
inline int lowest_symbol(CandidateSet s) noexcept { return std::countr_zero(static_cast<unsigned>(s)); }

struct LatticeShape {
  int rows = 0;
  int cols = 0;
  int vocab_size = 0;

  int cells() const noexcept { return rows * cols; }

  CandidateSet full_set() const noexcept {
    return static_cast<CandidateSet>((1u << vocab_size) - 1u);
  }

  void validate() const {
    if (rows < 1 || cols < 1) throw StructuralError("lattice shape needs at least one position");
    if (vocab_size < 1 || vocab_size > kMaxVocab)
      throw StructuralError("vocab size must be in [1, 16], got " + std::to_string(vocab_size));
  }

  friend bool operator==(const LatticeShape&, const LatticeShape&) = default;
};

/// An element of the abstract domain: a candidate set per position plus the
/// read-only in-puzzle mask. Masked-out positions always hold the empty set.
class LatticeState {
 public:
  LatticeState() = default;

  LatticeState(LatticeShape shape, std::vector<CandidateSet> cells, std::vector<std::uint8_t> mask)
      : shape_(shape), cells_(std::move(cells)), mask_(std::move(mask)) {
    shape_.validate();
    if (static_cast<int>(cells_.size()) != shape_.cells() ||
        static_cast<int>(mask_.size()) != shape_.cells())
      throw StructuralError("cell/mask count does not match the lattice shape");
    const CandidateSet full = shape_.full_set();
    for (std::size_t i = 0; i < cells_.size(); ++i) {
      mask_[i] = mask_[i] ? 1 : 0;
      cells_[i] = mask_[i] ? static_cast<CandidateSet>(cells_[i] & full) : CandidateSet{0};
    }
  }

  static std::vector<std::uint8_t> full_mask(const LatticeShape& shape) {
    return std::vector<std::uint8_t>(static_cast<std::size_t>(shape.cells()), 1);
  }

  static LatticeState top(const LatticeShape& shape) { return top(shape, full_mask(shape)); }

  static LatticeState top(const LatticeShape& shape, std::vector<std::uint8_t> mask) {
    return LatticeState(shape, std::vector<CandidateSet>(shape.cells(), shape.full_set()), std::move(mask));
  }

  /// Canonical bottom representative: every position empty.
  static LatticeState empty(const LatticeShape& shape, std::vector<std::uint8_t> mask) {
    return LatticeState(shape, std::vector<CandidateSet>(shape.cells(), 0), std::move(mask));
  }

  const LatticeShape& shape() const noexcept { return shape_; }
  int size() const noexcept { return static_cast<int>(cells_.size()); }
  std::span<const CandidateSet> cells() const noexcept { return cells_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }
  CandidateSet cell(int i) const { return cells_[static_cast<std::size_t>(i)]; }
  bool in_puzzle(int i) const { return mask_[static_cast<std::size_t>(i)] != 0; }
  bool alive(int i, int symbol) const { return (cell(i) >> symbol) & 1u; }

  /// Overwrites one position; masked-out positions stay empty.
  void set_cell(int i, CandidateSet s) {
    auto idx = static_cast<std::size_t>(i);
    cells_[idx] = mask_[idx] ? static_cast<CandidateSet>(s & shape_.full_set()) : CandidateSet{0};
  }

  /// True iff some in-puzzle position has no candidate left.
  bool is_bottom() const noexcept {
    for (std::size_t i = 0; i < cells_.size(); ++i)
      if (mask_[i] && cells_[i] == 0) return true;
    return false;
  }

  bool same_frame(const LatticeState& other) const noexcept {
    return shape_ == other.shape_ && mask_ == other.mask_;
  }

  friend bool operator==(const LatticeState&, const LatticeState&) = default;

 private:
  LatticeShape shape_{};
  std::vector<CandidateSet> cells_;
  std::vector<std::uint8_t> mask_;
};

/// A fully determined assignment: one symbol per in-puzzle position.
/// Masked-out positions carry `kNoSymbol`.
class SolutionPoint {
 public:
  static constexpr std::uint8_t kNoSymbol = 0xff;

  SolutionPoint() = default;

  SolutionPoint(LatticeShape shape, std::vector<std::uint8_t> values, std::vector<std::uint8_t> mask)
      : shape_(shape), values_(std::move(values)), mask_(std::move(mask)) {
    shape_.validate();
    if (static_cast<int>(values_.size()) != shape_.cells() ||
        static_cast<int>(mask_.size()) != shape_.cells())
      throw StructuralError("solution size does not match the lattice shape");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      mask_[i] = mask_[i] ? 1 : 0;
      if (!mask_[i]) {
        values_[i] = kNoSymbol;
      } else if (values_[i] >= shape_.vocab_size) {
        throw StructuralError("solution symbol out of vocabulary range");
      }
    }
  }

  SolutionPoint(LatticeShape shape, std::vector<std::uint8_t> values)
      : SolutionPoint(shape, std::move(values), LatticeState::full_mask(shape)) {}

  /// Reads a singleton state back as a point; nullopt if any cell is not a singleton.
  static std::optional<SolutionPoint> from_state(const LatticeState& a) {
    std::vector<std::uint8_t> values(static_cast<std::size_t>(a.size()), kNoSymbol);
    for (int i = 0; i < a.size(); ++i) {
      if (!a.in_puzzle(i)) continue;
      if (popcount(a.cell(i)) != 1) return std::nullopt;
      values[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(lowest_symbol(a.cell(i)));
    }
    return SolutionPoint(a.shape(), std::move(values), std::vector<std::uint8_t>(a.mask().begin(), a.mask().end()));
  }

  const LatticeShape& shape() const noexcept { return shape_; }
  int size() const noexcept { return static_cast<int>(values_.size()); }
  std::span<const std::uint8_t> values() const noexcept { return values_; }
  std::span<const std::uint8_t> mask() const noexcept { return mask_; }
  int value(int i) const { return values_[static_cast<std::size_t>(i)]; }
  bool in_puzzle(int i) const { return mask_[static_cast<std::size_t>(i)] != 0; }

  LatticeState to_state() const {
    std::vector<CandidateSet> cells(values_.size(), 0);
    for (std::size_t i = 0; i < values_.size(); ++i)
      if (mask_[i]) cells[i] = static_cast<CandidateSet>(1u << values_[i]);
    return LatticeState(shape_, std::move(cells), mask_);
  }

  friend bool operator==(const SolutionPoint&, const SolutionPoint&) = default;
  friend auto operator<=>(const SolutionPoint& a, const SolutionPoint& b) { return a.values_ <=> b.values_; }

 private:
  LatticeShape shape_{};
  std::vector<std::uint8_t> values_;
  std::vector<std::uint8_t> mask_;
};

namespace detail {

inline void require_same_frame(const LatticeState& a, const LatticeState& b, const char* op) {
  if (!a.same_frame(b)) throw StructuralError(std::string(op) + ": shape or mask mismatch");
}

inline void require_same_frame(const SolutionPoint& y, const LatticeState& a, const char* op) {
  if (!(y.shape() == a.shape()) || !std::equal(y.mask().begin(), y.mask().end(), a.mask().begin(), a.mask().end()))
    throw StructuralError(std::string(op) + ": shape or mask mismatch");
}

}  // namespace detail

inline LatticeState meet(const LatticeState& a, const LatticeState& b) {
  detail::require_same_frame(a, b, "meet");
  LatticeState out = a;
  for (int i = 0; i < a.size(); ++i) out.set_cell(i, static_cast<CandidateSet>(a.cell(i) & b.cell(i)));
  return out;
}

inline LatticeState join(const LatticeState& a, const LatticeState& b) {
  detail::require_same_frame(a, b, "join");
  LatticeState out = a;
  for (int i = 0; i < a.size(); ++i) out.set_cell(i, static_cast<CandidateSet>(a.cell(i) | b.cell(i)));
  return out;
}

/// Pointwise inclusion: a ⊑ b.
inline bool leq(const LatticeState& a, const LatticeState& b) {
  detail::require_same_frame(a, b, "leq");
  for (int i = 0; i < a.size(); ++i)
    if ((a.cell(i) & ~b.cell(i)) != 0) return false;
  return true;
}

/// Pointwise union of the solutions' symbols. The empty set abstracts to the
/// all-empty bottom representative.
inline LatticeState alpha(std::span<const SolutionPoint> solutions, const LatticeShape& shape,
                          std::vector<std::uint8_t> mask) {
  LatticeState out = LatticeState::empty(shape, std::move(mask));
  std::vector<CandidateSet> acc(static_cast<std::size_t>(shape.cells()), 0);
  for (const SolutionPoint& y : solutions) {
    detail::require_same_frame(y, out, "alpha");
    for (int i = 0; i < y.size(); ++i)
      if (y.in_puzzle(i)) acc[static_cast<std::size_t>(i)] |= static_cast<CandidateSet>(1u << y.value(i));
  }
  for (int i = 0; i < out.size(); ++i) out.set_cell(i, acc[static_cast<std::size_t>(i)]);
  return out;
}

inline LatticeState alpha(std::span<const SolutionPoint> solutions, const LatticeShape& shape) {
  return alpha(solutions, shape, LatticeState::full_mask(shape));
}

/// Total number of alive candidates over in-puzzle positions.
inline long alive_count(const LatticeState& a) noexcept {
  long n = 0;
  for (CandidateSet s : a.cells()) n += popcount(s);
  return n;
}

/// Every in-puzzle position has exactly one alive candidate.
inline bool is_solved_shape(const LatticeState& a) noexcept {
  for (int i = 0; i < a.size(); ++i)
    if (a.in_puzzle(i) && popcount(a.cell(i)) != 1) return false;
  return true;
}

/// y ∈ γ(a).
inline bool consistent(const SolutionPoint& y, const LatticeState& a) {
  detail::require_same_frame(y, a, "consistent");
  for (int i = 0; i < a.size(); ++i)
    if (a.in_puzzle(i) && !a.alive(i, y.value(i))) return false;
  return true;
}

/// Members of γ(a) in lexicographic order (position 0 most significant,
/// symbols ascending). Throws CapacityError when |γ(a)| would exceed `limit`.
inline std::vector<SolutionPoint> gamma_enumerate(const LatticeState& a, std::size_t limit) {
  std::vector<int> positions;
  std::size_t product = 1;
  for (int i = 0; i < a.size(); ++i) {
    if (!a.in_puzzle(i)) continue;
    const auto count = static_cast<std::size_t>(popcount(a.cell(i)));
    if (count == 0) return {};
    positions.push_back(i);
    if (product > limit / count) throw CapacityError("gamma_enumerate: concretization exceeds limit");
    product *= count;
  }
  if (product > limit) throw CapacityError("gamma_enumerate: concretization exceeds limit");

  std::vector<std::vector<std::uint8_t>> options(positions.size());
  for (std::size_t p = 0; p < positions.size(); ++p)
    for (int v = 0; v < a.shape().vocab_size; ++v)
      if (a.alive(positions[p], v)) options[p].push_back(static_cast<std::uint8_t>(v));

  std::vector<SolutionPoint> out;
  out.reserve(product);
  std::vector<std::size_t> odometer(positions.size(), 0);
  std::vector<std::uint8_t> values(static_cast<std::size_t>(a.size()), SolutionPoint::kNoSymbol);
  const std::vector<std::uint8_t> mask(a.mask().begin(), a.mask().end());
  for (std::size_t n = 0; n < product; ++n) {
    for (std::size_t p = 0; p < positions.size(); ++p)
      values[static_cast<std::size_t>(positions[p])] = options[p][odometer[p]];
    out.emplace_back(a.shape(), values, mask);
    for (std::size_t p = positions.size(); p-- > 0;) {
      if (++odometer[p] < options[p].size()) break;
      odometer[p] = 0;
    }
  }
  return out;
}

struct SupervisionTarget {
  LatticeState target;
  bool is_conflict = false;
};

/// ŷ = x ⊓ α({y ∈ Y | y consistent with x}). When no solution survives the
/// target falls back to x ⊓ y_prev (the last non-empty target of the chain),
/// or to the all-empty representative when no such target exists yet.
inline SupervisionTarget supervision_target(const LatticeState& x, std::span<const SolutionPoint> solutions,
                                            const std::optional<LatticeState>& y_prev = std::nullopt) {
  if (solutions.empty()) throw ContractViolation("supervision_target needs at least one solution");
  std::vector<CandidateSet> acc(static_cast<std::size_t>(x.size()), 0);
  bool any = false;
  for (const SolutionPoint& y : solutions) {
    if (!consistent(y, x)) continue;
    any = true;
    for (int i = 0; i < y.size(); ++i)
      if (y.in_puzzle(i)) acc[static_cast<std::size_t>(i)] |= static_cast<CandidateSet>(1u << y.value(i));
  }
  const std::vector<std::uint8_t> mask(x.mask().begin(), x.mask().end());
  if (any) {
    LatticeState target = x;
    for (int i = 0; i < x.size(); ++i) target.set_cell(i, static_cast<CandidateSet>(x.cell(i) & acc[static_cast<std::size_t>(i)]));
    return {std::move(target), false};
  }
  if (y_prev) return {meet(x, *y_prev), true};
  return {LatticeState::empty(x.shape(), mask), true};
}

}  // namespace ldt
