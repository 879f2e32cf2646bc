#pragma once

// Progressive checkerboard scan order over square power-of-two grids, plus
// the restriction used for other grid shapes and a few alternative orders
// (raster, seeded random) used for ordering ablations.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace checkerboard {

struct Position {
  int x = 0;
  int y = 0;

  friend bool operator==(const Position&, const Position&) = default;
};

struct ScanOrder {
  int side = 0;    // side of the generating grid (power of two for checkerboard orders)
  int height = 0;  // extent after restriction
  int width = 0;
  std::vector<Position> positions;

  std::size_t size() const { return positions.size(); }
};

// Quadrant ids in merge order. The digit law and the round-robin merge both
// depend on this exact mapping.
enum class Quadrant : int { TopLeft = 0, BottomRight = 1, TopRight = 2, BottomLeft = 3 };

inline bool is_power_of_two(int n) { return n > 0 && std::has_single_bit(static_cast<unsigned>(n)); }

inline int next_power_of_two(int n) {
  if (n <= 1) return 1;
  return static_cast<int>(std::bit_ceil(static_cast<unsigned>(n)));
}

namespace detail {

inline std::vector<Position> progressive_checkerboard(int size, int x, int y) {
  if (size == 1) return {Position{x, y}};
  const int d = size / 2;
  const Position origins[4] = {{x, y}, {x + d, y + d}, {x + d, y}, {x, y + d}};
  std::vector<Position> sublists[4];
  for (int q = 0; q < 4; ++q) sublists[q] = progressive_checkerboard(d, origins[q].x, origins[q].y);
  std::vector<Position> merged;
  merged.reserve(static_cast<std::size_t>(size) * size);
  for (std::size_t j = 0; j < sublists[0].size(); ++j)
    for (int q = 0; q < 4; ++q) merged.push_back(sublists[q][j]);
  return merged;
}

}  // namespace detail

// Orders are a pure function of the side, so they are computed once per side.
inline ScanOrder generate_order(int side) {
  if (!is_power_of_two(side))
    throw std::invalid_argument("generate_order: side must be a positive power of two, got " +
                                std::to_string(side));
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const ScanOrder>> cache;
  std::lock_guard lock(mu);
  auto it = cache.find(side);
  if (it == cache.end()) {
    auto order = std::make_shared<ScanOrder>();
    order->side = order->height = order->width = side;
    order->positions = detail::progressive_checkerboard(side, 0, 0);
    it = cache.emplace(side, std::move(order)).first;
  }
  return *it->second;
}

inline ScanOrder restrict_order(const ScanOrder& order, int height, int width) {
  if (height < 1 || width < 1)
    throw std::invalid_argument("restrict_order: height and width must be >= 1");
  if (height > order.height || width > order.width)
    throw std::invalid_argument("restrict_order: " + std::to_string(height) + "x" +
                                std::to_string(width) + " exceeds order extent " +
                                std::to_string(order.height) + "x" + std::to_string(order.width));
  ScanOrder out;
  out.side = order.side;
  out.height = height;
  out.width = width;
  out.positions.reserve(static_cast<std::size_t>(height) * width);
  for (const Position& p : order.positions)
    if (p.x < width && p.y < height) out.positions.push_back(p);
  return out;
}

// Checkerboard order for an arbitrary H x W grid: generate on the next power
// of two and restrict.
inline ScanOrder checkerboard_order(int height, int width) {
  const int side = next_power_of_two(std::max(height, width));
  ScanOrder full = generate_order(side);
  if (height == side && width == side) return full;
  return restrict_order(full, height, width);
}

inline ScanOrder raster_order(int height, int width) {
  ScanOrder out;
  out.side = next_power_of_two(std::max(height, width));
  out.height = height;
  out.width = width;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) out.positions.push_back({x, y});
  return out;
}

inline ScanOrder random_order(int height, int width, std::uint64_t seed) {
  ScanOrder out = raster_order(height, width);
  std::mt19937_64 rng(seed);
  // Fisher-Yates with explicit index draws so the permutation is stable
  // across standard library implementations.
  for (std::size_t i = out.positions.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(out.positions[i - 1], out.positions[j]);
  }
  return out;
}

enum class OrderKind { Checkerboard, Raster, Random };

inline std::string to_string(OrderKind kind) {
  switch (kind) {
    case OrderKind::Checkerboard: return "checkerboard";
    case OrderKind::Raster: return "raster";
    case OrderKind::Random: return "random";
  }
  return "?";
}

inline OrderKind parse_order_kind(const std::string& s) {
  if (s == "checkerboard") return OrderKind::Checkerboard;
  if (s == "raster") return OrderKind::Raster;
  if (s == "random") return OrderKind::Random;
  throw std::invalid_argument("unknown order kind '" + s + "' (expected checkerboard|raster|random)");
}

inline ScanOrder make_order(OrderKind kind, int height, int width, std::uint64_t seed = 0) {
  switch (kind) {
    case OrderKind::Checkerboard: return checkerboard_order(height, width);
    case OrderKind::Raster: return raster_order(height, width);
    case OrderKind::Random: return random_order(height, width, seed);
  }
  throw std::invalid_argument("make_order: bad kind");
}

inline std::size_t order_index(const ScanOrder& order, Position p) {
  if (p.x < 0 || p.y < 0 || p.x >= order.width || p.y >= order.height)
    throw std::invalid_argument("order_index: position (" + std::to_string(p.x) + "," +
                                std::to_string(p.y) + ") outside " + std::to_string(order.height) +
                                "x" + std::to_string(order.width) + " grid");
  auto it = std::find(order.positions.begin(), order.positions.end(), p);
  if (it == order.positions.end()) throw std::invalid_argument("order_index: position missing from order");
  return static_cast<std::size_t>(it - order.positions.begin());
}

// Inverse permutation, indexed by y * width + x.
inline std::vector<std::size_t> inverse_order(const ScanOrder& order) {
  std::vector<std::size_t> inv(static_cast<std::size_t>(order.height) * order.width, SIZE_MAX);
  for (std::size_t i = 0; i < order.positions.size(); ++i) {
    const Position p = order.positions[i];
    inv[static_cast<std::size_t>(p.y) * order.width + p.x] = i;
  }
  return inv;
}

inline bool is_permutation_of_grid(const ScanOrder& order) {
  const std::size_t n = static_cast<std::size_t>(order.height) * order.width;
  if (order.positions.size() != n) return false;
  std::vector<char> seen(n, 0);
  for (const Position& p : order.positions) {
    if (p.x < 0 || p.y < 0 || p.x >= order.width || p.y >= order.height) return false;
    char& s = seen[static_cast<std::size_t>(p.y) * order.width + p.x];
    if (s) return false;
    s = 1;
  }
  return true;
}

// True iff every quadtree cell at every depth holds floor(k/4^d) or
// ceil(k/4^d) of the first k positions. Requires a square power-of-two order.
inline bool check_balance(const ScanOrder& order, std::size_t prefix_len) {
  const int n = order.side;
  if (!is_power_of_two(n) || order.height != n || order.width != n)
    throw std::invalid_argument("check_balance: requires a square power-of-two order");
  if (prefix_len > order.positions.size())
    throw std::invalid_argument("check_balance: prefix longer than order");
  const int depth_max = std::countr_zero(static_cast<unsigned>(n));
  for (int d = 1; d <= depth_max; ++d) {
    const int cells = 1 << d;
    const int cell_side = n >> d;
    std::vector<std::size_t> counts(static_cast<std::size_t>(cells) * cells, 0);
    for (std::size_t i = 0; i < prefix_len; ++i) {
      const Position p = order.positions[i];
      ++counts[static_cast<std::size_t>(p.y / cell_side) * cells + p.x / cell_side];
    }
    const std::size_t denom = static_cast<std::size_t>(cells) * cells;
    const std::size_t lo = prefix_len / denom;
    const std::size_t hi = (prefix_len + denom - 1) / denom;
    for (std::size_t c : counts)
      if (c != lo && c != hi) return false;
  }
  return true;
}

}  // namespace checkerboard
