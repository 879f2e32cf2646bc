#pragma once

// Token grids and the multiscale pyramid built from a finest-scale grid.

#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/schedule.hpp"

namespace checkerboard {

struct TokenGrid {
  int side = 0;
  std::vector<int> cells;  // row-major, y * side + x; -1 marks "not yet sampled"

  TokenGrid() = default;
  explicit TokenGrid(int s, int fill = -1) : side(s), cells(static_cast<std::size_t>(s) * s, fill) {}

  int& at(int x, int y) { return cells[static_cast<std::size_t>(y) * side + x]; }
  int at(int x, int y) const { return cells[static_cast<std::size_t>(y) * side + x]; }
  int& at(Position p) { return at(p.x, p.y); }
  int at(Position p) const { return at(p.x, p.y); }

  friend bool operator==(const TokenGrid&, const TokenGrid&) = default;
};

using MultiscaleCodes = std::vector<TokenGrid>;  // one grid per schedule scale

// Source index of nearest-neighbour upsampling from prev_side to cur_side.
inline int upsample_source(int dst, int prev_side, int cur_side) {
  return static_cast<int>(static_cast<long long>(dst) * prev_side / cur_side);
}

// Majority vote over the fine cells covered by each coarse cell; ties go to
// the smallest token id.
inline TokenGrid downsample_majority(const TokenGrid& fine, int target_side, int vocab) {
  if (target_side == fine.side) return fine;
  if (target_side > fine.side || target_side < 1)
    throw std::invalid_argument("downsample_majority: target side " + std::to_string(target_side) +
                                " not in [1, " + std::to_string(fine.side) + "]");
  TokenGrid out(target_side, 0);
  std::vector<int> counts(static_cast<std::size_t>(vocab));
  const int n = fine.side;
  for (int cy = 0; cy < target_side; ++cy) {
    for (int cx = 0; cx < target_side; ++cx) {
      std::fill(counts.begin(), counts.end(), 0);
      const int x0 = cx * n / target_side, x1 = (cx + 1) * n / target_side;
      const int y0 = cy * n / target_side, y1 = (cy + 1) * n / target_side;
      for (int y = y0; y < y1; ++y)
        for (int x = x0; x < x1; ++x) ++counts[static_cast<std::size_t>(fine.at(x, y))];
      int best = 0;
      for (int v = 1; v < vocab; ++v)
        if (counts[static_cast<std::size_t>(v)] > counts[static_cast<std::size_t>(best)]) best = v;
      out.at(cx, cy) = best;
    }
  }
  return out;
}

inline MultiscaleCodes build_pyramid(const TokenGrid& finest, const ScaleSchedule& schedule, int vocab) {
  if (finest.side != schedule.final_side())
    throw std::invalid_argument("build_pyramid: grid side " + std::to_string(finest.side) +
                                " != schedule final side " + std::to_string(schedule.final_side()));
  MultiscaleCodes codes;
  for (int side : schedule.sizes) codes.push_back(downsample_majority(finest, side, vocab));
  return codes;
}

}  // namespace checkerboard
