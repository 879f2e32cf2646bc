#pragma once

// Multiscale scale-size lists and their per-scale block partitions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/scan_order.hpp"

namespace checkerboard {

enum class RatioTag { Sqrt2, X2, X3, X4, Single };

inline std::string to_string(RatioTag tag) {
  switch (tag) {
    case RatioTag::Sqrt2: return "sqrt2";
    case RatioTag::X2: return "x2";
    case RatioTag::X3: return "x3";
    case RatioTag::X4: return "x4";
    case RatioTag::Single: return "single";
  }
  return "?";
}

inline RatioTag parse_ratio_tag(const std::string& s) {
  if (s == "sqrt2") return RatioTag::Sqrt2;
  if (s == "x2") return RatioTag::X2;
  if (s == "x3") return RatioTag::X3;
  if (s == "x4") return RatioTag::X4;
  if (s == "single") return RatioTag::Single;
  throw std::invalid_argument("unknown ratio tag '" + s + "' (expected sqrt2|x2|x3|x4|single)");
}

inline double ratio_value(RatioTag tag) {
  switch (tag) {
    case RatioTag::Sqrt2: return std::sqrt(2.0);
    case RatioTag::X2: return 2.0;
    case RatioTag::X3: return 3.0;
    case RatioTag::X4: return 4.0;
    case RatioTag::Single: return 0.0;
  }
  return 0.0;
}

struct ScaleSchedule {
  RatioTag ratio = RatioTag::X2;
  std::vector<int> sizes;  // patches per side, strictly increasing

  int final_side() const { return sizes.back(); }
  std::size_t num_scales() const { return sizes.size(); }
  std::size_t token_count() const {
    std::size_t n = 0;
    for (int s : sizes) n += static_cast<std::size_t>(s) * s;
    return n;
  }
};

// Sizes are final_side / r^k rounded to nearest, walked down from the final
// side until reaching 1, then deduplicated and reversed. For final_side 16
// this yields [1,2,3,4,6,8,11,16], [1,2,4,8,16], [1,2,5,16] and [1,4,16].
inline ScaleSchedule make_schedule(RatioTag tag, int final_side) {
  if (final_side < 1) throw std::invalid_argument("make_schedule: final_side must be >= 1");
  ScaleSchedule s;
  s.ratio = tag;
  if (tag == RatioTag::Single) {
    s.sizes = {final_side};
    return s;
  }
  const double r = ratio_value(tag);
  std::vector<int> desc{final_side};
  for (int k = 1; desc.back() > 1; ++k) {
    int v = static_cast<int>(std::lround(final_side / std::pow(r, k)));
    v = std::clamp(v, 1, final_side);
    if (v < desc.back()) desc.push_back(v);
    if (k > 64) break;
  }
  s.sizes.assign(desc.rbegin(), desc.rend());
  return s;
}

inline ScaleSchedule single_scale(int side) { return make_schedule(RatioTag::Single, side); }

struct Block {
  std::vector<Position> positions;  // contiguous segment of the scale's scan order
};

struct BlockPartition {
  ScaleSchedule schedule;
  OrderKind order_kind = OrderKind::Checkerboard;
  int requested_p = 1;
  std::vector<ScanOrder> orders;             // per scale
  std::vector<std::vector<Block>> blocks;    // [scale][block]
  std::vector<int> steps_per_scale;          // P_s = min(P, H_s * W_s)
};

// Split n tokens into p contiguous segments; earlier segments take the remainder.
inline std::vector<std::size_t> segment_sizes(std::size_t n, std::size_t p) {
  std::vector<std::size_t> sizes(p, n / p);
  for (std::size_t i = 0; i < n % p; ++i) ++sizes[i];
  return sizes;
}

inline BlockPartition partition_blocks(const ScaleSchedule& schedule, int p,
                                       OrderKind kind = OrderKind::Checkerboard,
                                       std::uint64_t order_seed = 0) {
  if (p < 1) throw std::invalid_argument("partition_blocks: P must be >= 1");
  if (schedule.sizes.empty()) throw std::invalid_argument("partition_blocks: empty schedule");
  BlockPartition part;
  part.schedule = schedule;
  part.order_kind = kind;
  part.requested_p = p;
  for (std::size_t s = 0; s < schedule.sizes.size(); ++s) {
    const int side = schedule.sizes[s];
    ScanOrder order = make_order(kind, side, side, order_seed + s);
    const std::size_t n = order.positions.size();
    const std::size_t ps = std::min<std::size_t>(static_cast<std::size_t>(p), n);
    std::vector<Block> blocks;
    std::size_t cursor = 0;
    for (std::size_t len : segment_sizes(n, ps)) {
      Block b;
      b.positions.assign(order.positions.begin() + static_cast<std::ptrdiff_t>(cursor),
                         order.positions.begin() + static_cast<std::ptrdiff_t>(cursor + len));
      cursor += len;
      blocks.push_back(std::move(b));
    }
    part.steps_per_scale.push_back(static_cast<int>(ps));
    part.orders.push_back(std::move(order));
    part.blocks.push_back(std::move(blocks));
  }
  return part;
}

inline int total_steps(const BlockPartition& partition) {
  int total = 0;
  for (int s : partition.steps_per_scale) total += s;
  return total;
}

template <class Rng>
int sample_training_P(Rng& rng, const std::vector<int>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("sample_training_P: empty candidate set");
  const std::uint64_t n = candidates.size();
  // Rejection sampling keeps the draw exactly uniform and implementation-independent.
  const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % n);
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return candidates[static_cast<std::size_t>(r % n)];
}

// Number of leading steps whose scales have side <= 2; the default CFG warmup.
inline int steps_through_side(const BlockPartition& partition, int max_side) {
  int steps = 0;
  for (std::size_t s = 0; s < partition.schedule.sizes.size(); ++s)
    if (partition.schedule.sizes[s] <= max_side) steps += partition.steps_per_scale[s];
  return steps;
}

}  // namespace checkerboard
