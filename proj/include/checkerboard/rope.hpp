#pragma once

// Rotary encodings over (x, y, scale) with learned per-pair frequencies, and
// the key-side blend between the current and previous block positions.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/schedule.hpp"

namespace checkerboard {

enum class RopeAxis { X, Y, Scale };

// Pairs are laid out as [x pairs | y pairs | scale pairs].
struct RopePartition {
  int head_dim = 0;
  int x_pairs = 0;
  int y_pairs = 0;
  int scale_pairs = 0;

  int pairs() const { return x_pairs + y_pairs + scale_pairs; }

  RopeAxis axis(int pair) const {
    if (pair < x_pairs) return RopeAxis::X;
    if (pair < x_pairs + y_pairs) return RopeAxis::Y;
    return RopeAxis::Scale;
  }
};

// One eighth of the pairs (rounded down) go to the scale axis; the rest are
// split evenly between x and y. If the spatial share is odd, one pair moves
// to scale so that x and y stay equal.
inline RopePartition make_rope_partition(int head_dim) {
  if (head_dim <= 0 || head_dim % 2 != 0)
    throw std::invalid_argument("rope: head_dim must be a positive even number, got " + std::to_string(head_dim));
  const int pairs = head_dim / 2;
  int scale = pairs / 8;
  int spatial = pairs - scale;
  if (spatial % 2 != 0) {
    --spatial;
    ++scale;
  }
  return RopePartition{head_dim, spatial / 2, spatial / 2, scale};
}

struct RopeConfig {
  RopePartition partition;
  std::vector<double> frequencies;  // one angular frequency per pair
};

namespace detail {

inline void geometric_frequencies(std::vector<double>& out, int count, double max_coord) {
  if (count <= 0) return;
  const double hi = 1.0;
  const double lo = std::min(hi, std::numbers::pi / std::max(max_coord, 1.0));
  if (count == 1) {
    out.push_back(lo);
    return;
  }
  for (int j = 0; j < count; ++j) out.push_back(hi * std::pow(lo / hi, static_cast<double>(j) / (count - 1)));
}

}  // namespace detail

// Geometric progression per axis from 1 rad/step down to pi / max_coord, so
// the longest period is at least twice the largest coordinate.
inline RopeConfig make_rope_config(int head_dim, int max_spatial_coord, int max_scale_coord) {
  RopeConfig cfg;
  cfg.partition = make_rope_partition(head_dim);
  detail::geometric_frequencies(cfg.frequencies, cfg.partition.x_pairs, max_spatial_coord);
  detail::geometric_frequencies(cfg.frequencies, cfg.partition.y_pairs, max_spatial_coord);
  detail::geometric_frequencies(cfg.frequencies, cfg.partition.scale_pairs, max_scale_coord);
  return cfg;
}

struct RopeCoord {
  double x = 0, y = 0, scale = 0;

  static RopeCoord of(Position p, int s) { return {double(p.x), double(p.y), double(s)}; }

  double along(RopeAxis axis) const {
    switch (axis) {
      case RopeAxis::X: return x;
      case RopeAxis::Y: return y;
      case RopeAxis::Scale: return scale;
    }
    return 0;
  }
};

// Per-pair cos/sin of the rotation angles at one coordinate.
struct RopeAngles {
  std::vector<double> cos, sin;
};

inline RopeAngles rope_angles(const RopePartition& part, std::span<const double> freqs, RopeCoord c) {
  RopeAngles a;
  const int n = part.pairs();
  a.cos.resize(static_cast<std::size_t>(n));
  a.sin.resize(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double theta = freqs[static_cast<std::size_t>(j)] * c.along(part.axis(j));
    a.cos[static_cast<std::size_t>(j)] = std::cos(theta);
    a.sin[static_cast<std::size_t>(j)] = std::sin(theta);
  }
  return a;
}

inline void rotate_into(std::span<const double> v, const double* cs, const double* sn, int pairs, double* out) {
  for (int j = 0; j < pairs; ++j) {
    const double a = v[2 * j], b = v[2 * j + 1];
    out[2 * j] = a * cs[j] - b * sn[j];
    out[2 * j + 1] = a * sn[j] + b * cs[j];
  }
}

// Transpose rotation (inverse), used to pull gradients back through a rotation.
inline void unrotate_into(std::span<const double> g, const double* cs, const double* sn, int pairs, double* out) {
  for (int j = 0; j < pairs; ++j) {
    const double a = g[2 * j], b = g[2 * j + 1];
    out[2 * j] = a * cs[j] + b * sn[j];
    out[2 * j + 1] = -a * sn[j] + b * cs[j];
  }
}

inline std::vector<double> rope_rotate(std::span<const double> v, Position p, int scale, const RopeConfig& cfg) {
  if (static_cast<int>(v.size()) != cfg.partition.head_dim)
    throw std::invalid_argument("rope_rotate: vector length " + std::to_string(v.size()) + " != head_dim " +
                                std::to_string(cfg.partition.head_dim));
  const RopeAngles a = rope_angles(cfg.partition, cfg.frequencies, RopeCoord::of(p, scale));
  std::vector<double> out(v.size());
  rotate_into(v, a.cos.data(), a.sin.data(), cfg.partition.pairs(), out.data());
  return out;
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

struct MixLogits {
  int layers = 0;
  int heads = 0;
  std::vector<double> logits;  // [layer * heads + head]

  double logit(int l, int h) const { return logits[static_cast<std::size_t>(l * heads + h)]; }
  double alpha(int l, int h) const { return sigmoid(logit(l, h)); }
};

// alpha * rope(current) + (1 - alpha) * rope(previous), keys only.
inline std::vector<double> mixed_key_rope(std::span<const double> key, Position current, Position previous, int scale,
                                          int layer, int head, const MixLogits& mix, const RopeConfig& cfg) {
  const double alpha = mix.alpha(layer, head);
  const std::vector<double> cur = rope_rotate(key, current, scale, cfg);
  const std::vector<double> prev = rope_rotate(key, previous, scale, cfg);
  std::vector<double> out(key.size());
  for (std::size_t i = 0; i < key.size(); ++i) out[i] = alpha * cur[i] + (1.0 - alpha) * prev[i];
  return out;
}

// d<grad, mixed_key_rope(...)> / d alpha_logit for one (layer, head).
inline double mixed_key_rope_logit_grad(std::span<const double> key, Position current, Position previous, int scale,
                                        int layer, int head, const MixLogits& mix, const RopeConfig& cfg,
                                        std::span<const double> grad_out) {
  const double alpha = mix.alpha(layer, head);
  const std::vector<double> cur = rope_rotate(key, current, scale, cfg);
  const std::vector<double> prev = rope_rotate(key, previous, scale, cfg);
  double d_alpha = 0;
  for (std::size_t i = 0; i < key.size(); ++i) d_alpha += grad_out[i] * (cur[i] - prev[i]);
  return d_alpha * alpha * (1.0 - alpha);
}

struct PositionPair {
  Position current;
  std::optional<Position> previous;  // empty for the first block of a scale
};

// Pairs block i with block i-1 of the same scale by within-block rank. When
// block i is longer, its extra tokens reuse the last previous position.
inline std::vector<PositionPair> pair_positions(const BlockPartition& partition, std::size_t scale, std::size_t block) {
  if (scale >= partition.blocks.size() || block >= partition.blocks[scale].size())
    throw std::invalid_argument("pair_positions: scale/block out of range");
  const auto& cur = partition.blocks[scale][block].positions;
  std::vector<PositionPair> out;
  out.reserve(cur.size());
  if (block == 0) {
    for (const Position& p : cur) out.push_back({p, std::nullopt});
    return out;
  }
  const auto& prev = partition.blocks[scale][block - 1].positions;
  for (std::size_t r = 0; r < cur.size(); ++r) out.push_back({cur[r], prev[std::min(r, prev.size() - 1)]});
  return out;
}

}  // namespace checkerboard
