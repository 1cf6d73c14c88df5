#pragma once

// 2D rotary position embedding. The first half of a head vector rotates with
// the row coordinate, the second half with the column coordinate; within a
// half, consecutive pairs use geometrically spaced frequencies.

#include <cmath>
#include <span>

#include "ldt/error.hpp"

namespace ldt {

inline constexpr double kRopeBase = 10000.0;

/// Rotates `block` in place by the angles of (row, col); `inverse` undoes it.
template <class T>
void rope2d(std::span<T> block, int row, int col, bool inverse = false) {
  const auto dim = static_cast<int>(block.size());
  if (dim % 4 != 0) throw ContractViolation("rope2d needs a block size divisible by 4");
  const int half = dim / 2;
  const T sign = inverse ? T(-1) : T(1);
  for (int axis = 0; axis < 2; ++axis) {
    const int pos = axis == 0 ? row : col;
    if (pos == 0) continue;
    T* base = block.data() + axis * half;
    for (int j = 0; j < half / 2; ++j) {
      const double freq = std::pow(kRopeBase, -2.0 * j / half);
      const T angle = sign * static_cast<T>(pos * freq);
      const T cs = std::cos(angle);
      const T sn = std::sin(angle);
      const T a = base[2 * j];
      const T b = base[2 * j + 1];
      base[2 * j] = a * cs - b * sn;
      base[2 * j + 1] = a * sn + b * cs;
    }
  }
}

}  // namespace ldt
