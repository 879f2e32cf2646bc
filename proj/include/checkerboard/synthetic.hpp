#pragma once

// Synthetic class-conditional grid distributions with exact enumeration,
// ground-truth samplers, empirical estimates and total-variation distance.
//
// States are encoded little-endian in base `vocab`: cell k = y * side + x is
// digit k, so index = sum_k z_k * vocab^k.
//
// Kinds:
//   independent  p(z) ~ prod_i exp(h_c * phi(z_i))
//   coupled      p(z) ~ exp(J * sum_<ij> s(z_i, z_j) + h_c * sum_i phi(z_i))
//                with s = +1 for equal neighbours, -1 otherwise, and
//                phi(v) = 2v / (vocab - 1) - 1. For vocab 2 this is the Ising
//                model with spins 2z - 1 and open boundaries.
//   patchwork    one uniformly chosen axis-aligned rectangle painted with a
//                colour from the class palette {v : v % classes == c},
//                background colour uniform over the vocabulary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/grid.hpp"
#include "checkerboard/json_fields.hpp"
#include "json.hpp"

namespace checkerboard {

enum class DistKind { Independent, Coupled, Patchwork };

inline std::string to_string(DistKind k) {
  switch (k) {
    case DistKind::Independent: return "independent";
    case DistKind::Coupled: return "ising";
    case DistKind::Patchwork: return "patchwork";
  }
  return "?";
}

inline DistKind parse_dist_kind(const std::string& s) {
  if (s == "independent") return DistKind::Independent;
  if (s == "ising" || s == "coupled") return DistKind::Coupled;
  if (s == "patchwork") return DistKind::Patchwork;
  throw std::invalid_argument("unknown distribution kind '" + s + "' (expected independent|ising|patchwork)");
}

class StateSpaceTooLarge : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline constexpr double kMaxEnumerableStates = 16777216.0;  // 2^24

struct GridDistribution {
  DistKind kind = DistKind::Coupled;
  int side = 3;
  int vocab = 2;
  double coupling = 0.0;       // J
  std::vector<double> fields;  // one external field per class
  int burn_in = 200;           // Gibbs sweeps per draw when the table is too large

  friend bool operator==(const GridDistribution&, const GridDistribution&) = default;

  int classes() const { return static_cast<int>(fields.size()); }
  double field(int c) const { return fields.at(static_cast<std::size_t>(c)); }
  double phi(int v) const { return 2.0 * v / (vocab - 1) - 1.0; }
  double state_count() const { return std::pow(static_cast<double>(vocab), static_cast<double>(side) * side); }

  void validate() const {
    if (side < 1 || vocab < 2) throw std::invalid_argument("distribution: side >= 1 and vocab >= 2 required");
    if (fields.empty()) throw std::invalid_argument("distribution: at least one class field required");
    if (burn_in < 0) throw std::invalid_argument("distribution: burn_in must be >= 0");
  }
};

inline void to_json(nlohmann::json& j, const GridDistribution& d) {
  j = nlohmann::json{{"kind", to_string(d.kind)}, {"side", d.side},     {"vocab", d.vocab},
                     {"coupling", d.coupling},    {"fields", d.fields}, {"burn_in", d.burn_in}};
}

inline GridDistribution distribution_from_json(const nlohmann::json& j, const std::string& where = "distribution.") {
  using detail::optional_field;
  using detail::require;
  GridDistribution d;
  d.kind = parse_dist_kind(require<std::string>(j, "kind", where));
  d.side = require<int>(j, "side", where);
  d.vocab = require<int>(j, "vocab", where);
  d.coupling = optional_field<double>(j, "coupling", 0.0, where);
  d.fields = require<std::vector<double>>(j, "fields", where);
  d.burn_in = optional_field<int>(j, "burn_in", d.burn_in, where);
  d.validate();
  return d;
}

inline TokenGrid decode_state(std::uint64_t index, int side, int vocab) {
  TokenGrid g(side, 0);
  for (int& v : g.cells) {
    v = static_cast<int>(index % static_cast<std::uint64_t>(vocab));
    index /= static_cast<std::uint64_t>(vocab);
  }
  return g;
}

inline std::uint64_t encode_state(const TokenGrid& g, int vocab) {
  std::uint64_t index = 0;
  for (std::size_t k = g.cells.size(); k-- > 0;) index = index * static_cast<std::uint64_t>(vocab) + static_cast<std::uint64_t>(g.cells[k]);
  return index;
}

// Unnormalized log weight for the independent and coupled kinds.
inline double log_weight(const GridDistribution& d, const TokenGrid& g, int c) {
  const double h = d.field(c);
  double lw = 0;
  for (int y = 0; y < d.side; ++y) {
    for (int x = 0; x < d.side; ++x) {
      const int v = g.at(x, y);
      lw += h * d.phi(v);
      if (d.kind == DistKind::Coupled) {
        if (x + 1 < d.side) lw += d.coupling * (g.at(x + 1, y) == v ? 1.0 : -1.0);
        if (y + 1 < d.side) lw += d.coupling * (g.at(x, y + 1) == v ? 1.0 : -1.0);
      }
    }
  }
  return lw;
}

struct ProbabilityTable {
  int side = 0;
  int vocab = 0;
  std::vector<double> p;
  double log_partition = 0;  // log of the normalizer (0 for patchwork)
};

namespace detail {

inline std::vector<int> palette(const GridDistribution& d, int c) {
  std::vector<int> out;
  for (int v = 0; v < d.vocab; ++v)
    if (v % d.classes() == c % d.classes()) out.push_back(v);
  if (out.empty())
    for (int v = 0; v < d.vocab; ++v) out.push_back(v);
  return out;
}

struct Rect {
  int x0, y0, x1, y1;  // inclusive
};

inline std::vector<Rect> all_rects(int side) {
  std::vector<Rect> r;
  for (int y0 = 0; y0 < side; ++y0)
    for (int y1 = y0; y1 < side; ++y1)
      for (int x0 = 0; x0 < side; ++x0)
        for (int x1 = x0; x1 < side; ++x1) r.push_back({x0, y0, x1, y1});
  return r;
}

inline TokenGrid paint(int side, const Rect& r, int inside, int outside) {
  TokenGrid g(side, outside);
  for (int y = r.y0; y <= r.y1; ++y)
    for (int x = r.x0; x <= r.x1; ++x) g.at(x, y) = inside;
  return g;
}

}  // namespace detail

inline ProbabilityTable enumerate_exact(const GridDistribution& d, int c) {
  d.validate();
  const double states = d.state_count();
  if (states > kMaxEnumerableStates)
    throw StateSpaceTooLarge("enumerate_exact: " + std::to_string(d.vocab) + "^" + std::to_string(d.side * d.side) +
                             " = " + std::to_string(states) + " states exceeds the 2^24 limit");
  ProbabilityTable t;
  t.side = d.side;
  t.vocab = d.vocab;
  const auto n = static_cast<std::uint64_t>(states);
  t.p.assign(n, 0.0);
  if (d.kind == DistKind::Patchwork) {
    const auto rects = detail::all_rects(d.side);
    const auto pal = detail::palette(d, c);
    const double w = 1.0 / (static_cast<double>(rects.size()) * pal.size() * d.vocab);
    for (const auto& r : rects)
      for (int in : pal)
        for (int out = 0; out < d.vocab; ++out) t.p[encode_state(detail::paint(d.side, r, in, out), d.vocab)] += w;
    return t;
  }
  double max_lw = -INFINITY;
  for (std::uint64_t i = 0; i < n; ++i) {
    t.p[i] = log_weight(d, decode_state(i, d.side, d.vocab), c);
    max_lw = std::max(max_lw, t.p[i]);
  }
  double z = 0;
  for (double& v : t.p) {
    v = std::exp(v - max_lw);
    z += v;
  }
  for (double& v : t.p) v /= z;
  t.log_partition = max_lw + std::log(z);
  return t;
}

// Draws grids from the distribution: inverse-CDF over the exact table when it
// is small enough, direct generation for independent and patchwork kinds,
// and heat-bath Gibbs sweeps from a uniform random start otherwise.
enum class DrawMethod { Auto, Table, Gibbs };

class GroundTruthSampler {
 public:
  static constexpr double kTableLimit = 1 << 20;

  // Auto: exact table draws for coupled grids up to kTableLimit states, Gibbs
  // beyond; independent and patchwork kinds are always drawn directly.
  explicit GroundTruthSampler(GridDistribution d, DrawMethod method = DrawMethod::Auto)
      : d_(std::move(d)), method_(method) {
    d_.validate();
  }

  const GridDistribution& distribution() const { return d_; }

  template <class Rng>
  TokenGrid draw(int c, Rng& rng) {
    if (c < 0 || c >= d_.classes()) throw std::invalid_argument("GroundTruthSampler: class out of range");
    if (method_ == DrawMethod::Table) return draw_table(c, rng);
    if (method_ == DrawMethod::Gibbs) return draw_gibbs(c, rng);
    if (d_.kind == DistKind::Coupled && d_.state_count() <= kTableLimit) return draw_table(c, rng);
    switch (d_.kind) {
      case DistKind::Independent: return draw_independent(c, rng);
      case DistKind::Patchwork: return draw_patchwork(c, rng);
      case DistKind::Coupled: return draw_gibbs(c, rng);
    }
    throw std::logic_error("GroundTruthSampler: bad kind");
  }

 private:
  template <class Rng>
  static double unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
  }

  template <class Rng>
  static int categorical(const std::vector<double>& cdf, Rng& rng) {
    const double u = unit(rng) * cdf.back();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    return static_cast<int>(std::min<std::ptrdiff_t>(it - cdf.begin(), static_cast<std::ptrdiff_t>(cdf.size()) - 1));
  }

  template <class Rng>
  TokenGrid draw_table(int c, Rng& rng) {
    auto it = cdfs_.find(c);
    if (it == cdfs_.end()) {
      ProbabilityTable t = enumerate_exact(d_, c);
      std::vector<double> cdf(t.p.size());
      double acc = 0;
      for (std::size_t i = 0; i < t.p.size(); ++i) cdf[i] = acc += t.p[i];
      it = cdfs_.emplace(c, std::move(cdf)).first;
    }
    return decode_state(static_cast<std::uint64_t>(categorical(it->second, rng)), d_.side, d_.vocab);
  }

  template <class Rng>
  TokenGrid draw_independent(int c, Rng& rng) {
    std::vector<double> cdf(static_cast<std::size_t>(d_.vocab));
    double acc = 0;
    for (int v = 0; v < d_.vocab; ++v) cdf[static_cast<std::size_t>(v)] = acc += std::exp(d_.field(c) * d_.phi(v));
    TokenGrid g(d_.side, 0);
    for (int& v : g.cells) v = categorical(cdf, rng);
    return g;
  }

  template <class Rng>
  TokenGrid draw_patchwork(int c, Rng& rng) {
    const auto rects = detail::all_rects(d_.side);
    const auto pal = detail::palette(d_, c);
    const auto& r = rects[static_cast<std::size_t>(rng() % rects.size())];
    const int in = pal[static_cast<std::size_t>(rng() % pal.size())];
    const int out = static_cast<int>(rng() % static_cast<std::uint64_t>(d_.vocab));
    return detail::paint(d_.side, r, in, out);
  }

  template <class Rng>
  TokenGrid draw_gibbs(int c, Rng& rng) {
    if (d_.kind == DistKind::Patchwork) throw std::invalid_argument("GroundTruthSampler: Gibbs needs an energy model");
    TokenGrid g(d_.side, 0);
    for (int& v : g.cells) v = static_cast<int>(rng() % static_cast<std::uint64_t>(d_.vocab));
    std::vector<double> cdf(static_cast<std::size_t>(d_.vocab));
    std::vector<double> lw(static_cast<std::size_t>(d_.vocab));
    const double h = d_.field(c);
    const double J = d_.kind == DistKind::Coupled ? d_.coupling : 0.0;
    for (int sweep = 0; sweep < std::max(1, d_.burn_in); ++sweep) {
      for (int y = 0; y < d_.side; ++y) {
        for (int x = 0; x < d_.side; ++x) {
          double lw_max = -INFINITY;
          for (int v = 0; v < d_.vocab; ++v) {
            double e = h * d_.phi(v);
            auto bond = [&](int nx, int ny) {
              if (nx >= 0 && ny >= 0 && nx < d_.side && ny < d_.side) e += J * (g.at(nx, ny) == v ? 1.0 : -1.0);
            };
            bond(x - 1, y);
            bond(x + 1, y);
            bond(x, y - 1);
            bond(x, y + 1);
            lw[static_cast<std::size_t>(v)] = e;
            lw_max = std::max(lw_max, e);
          }
          double acc = 0;
          for (int v = 0; v < d_.vocab; ++v) cdf[static_cast<std::size_t>(v)] = acc += std::exp(lw[static_cast<std::size_t>(v)] - lw_max);
          g.at(x, y) = categorical(cdf, rng);
        }
      }
    }
    return g;
  }

  GridDistribution d_;
  DrawMethod method_;
  std::map<int, std::vector<double>> cdfs_;
};

inline std::vector<TokenGrid> sample_ground_truth(const GridDistribution& d, int c, std::uint64_t seed, std::size_t n) {
  GroundTruthSampler s(d);
  std::mt19937_64 rng(seed);
  std::vector<TokenGrid> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(s.draw(c, rng));
  return out;
}

// ---------------------------------------------------------------------------
// Empirical estimates and total variation

struct DistributionEstimate {
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  double frequency(std::size_t i) const { return total ? static_cast<double>(counts[i]) / static_cast<double>(total) : 0.0; }
};

inline DistributionEstimate estimate_full_grid(const std::vector<TokenGrid>& grids, int side, int vocab) {
  const double states = std::pow(static_cast<double>(vocab), static_cast<double>(side) * side);
  if (states > kMaxEnumerableStates) throw StateSpaceTooLarge("estimate_full_grid: state space too large");
  DistributionEstimate e;
  e.counts.assign(static_cast<std::size_t>(states), 0);
  for (const TokenGrid& g : grids) {
    if (g.side != side) throw std::invalid_argument("estimate_full_grid: grid side mismatch");
    ++e.counts[encode_state(g, vocab)];
    ++e.total;
  }
  return e;
}

// Pooled distribution of 2x2 patches over every patch location.
// Patch index = tl + V*tr + V^2*bl + V^3*br.
inline DistributionEstimate estimate_patches(const std::vector<TokenGrid>& grids, int vocab) {
  DistributionEstimate e;
  const auto V = static_cast<std::size_t>(vocab);
  e.counts.assign(V * V * V * V, 0);
  for (const TokenGrid& g : grids) {
    for (int y = 0; y + 1 < g.side; ++y) {
      for (int x = 0; x + 1 < g.side; ++x) {
        const std::size_t idx = static_cast<std::size_t>(g.at(x, y)) + V * static_cast<std::size_t>(g.at(x + 1, y)) +
                                V * V * static_cast<std::size_t>(g.at(x, y + 1)) +
                                V * V * V * static_cast<std::size_t>(g.at(x + 1, y + 1));
        ++e.counts[idx];
        ++e.total;
      }
    }
  }
  return e;
}

// Exact pooled 2x2 patch marginal of a full probability table.
inline std::vector<double> exact_patch_marginal(const ProbabilityTable& t) {
  const auto V = static_cast<std::size_t>(t.vocab);
  std::vector<double> out(V * V * V * V, 0.0);
  if (t.side < 2) return out;
  const double locations = static_cast<double>(t.side - 1) * (t.side - 1);
  for (std::size_t i = 0; i < t.p.size(); ++i) {
    if (t.p[i] == 0.0) continue;
    const TokenGrid g = decode_state(i, t.side, t.vocab);
    for (int y = 0; y + 1 < g.side; ++y)
      for (int x = 0; x + 1 < g.side; ++x)
        out[static_cast<std::size_t>(g.at(x, y)) + V * static_cast<std::size_t>(g.at(x + 1, y)) +
            V * V * static_cast<std::size_t>(g.at(x, y + 1)) + V * V * V * static_cast<std::size_t>(g.at(x + 1, y + 1))] +=
            t.p[i] / locations;
  }
  return out;
}

inline std::vector<double> to_frequencies(const DistributionEstimate& e) {
  std::vector<double> f(e.counts.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = e.frequency(i);
  return f;
}

inline double tv_distance(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw std::invalid_argument("tv_distance: state spaces differ (" + std::to_string(p.size()) + " vs " +
                                std::to_string(q.size()) + ")");
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::abs(p[i] - q[i]);
  return 0.5 * s;
}

inline double tv_distance(const DistributionEstimate& estimate, std::span<const double> exact) {
  return tv_distance(to_frequencies(estimate), exact);
}

inline double tv_distance(const DistributionEstimate& a, const DistributionEstimate& b) {
  return tv_distance(to_frequencies(a), to_frequencies(b));
}

// Sampling uncertainty for an estimate of n draws. `expected_noise_tv` is the
// mean TV an exact sampler would show against the true table (normal
// approximation); `ci_halfwidth` sums per-state 95% binomial half-widths.
struct TvUncertainty {
  double expected_noise_tv = 0;
  double ci_halfwidth = 0;
};

inline TvUncertainty tv_uncertainty(std::span<const double> p, std::uint64_t n) {
  TvUncertainty u;
  if (n == 0) return u;
  const double nn = static_cast<double>(n);
  for (double pi : p) {
    const double sd = std::sqrt(pi * (1.0 - pi) / nn);
    u.expected_noise_tv += 0.5 * sd * std::sqrt(2.0 / 3.141592653589793);
    u.ci_halfwidth += 0.5 * 1.96 * sd;
  }
  return u;
}

}  // namespace checkerboard
