#pragma once

// Blockwise-parallel sampling: scales coarse to fine, blocks in sequence,
// tokens within a block drawn independently from their own softmax.
//
// Guidance follows guided = uncond + s * (cond - uncond), so s = 0 is the
// unconditional model and s = 1 the conditional one. The first `warmup`
// global steps use the conditional logits with guidance switched off.
// Each token draws from its own random stream keyed by (seed, sample index,
// flat token index), so the order tokens are evaluated in within a block
// cannot change the result.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/ar_core.hpp"

namespace checkerboard {

struct SamplerConfig {
  double cfg_scale = 1.0;
  std::optional<int> cfg_warmup;  // default: steps covering scales of side <= 2
  double temperature = 1.0;
  std::uint64_t seed = 0;
  int p = 1;

  friend bool operator==(const SamplerConfig&, const SamplerConfig&) = default;

  void validate() const {
    if (!(cfg_scale >= 0.0)) throw std::invalid_argument("sampler: cfg_scale must be >= 0");
    if (!(temperature > 0.0)) throw std::invalid_argument("sampler: temperature must be > 0");
    if (p < 1) throw std::invalid_argument("sampler: P must be >= 1");
    if (cfg_warmup && *cfg_warmup < 0) throw std::invalid_argument("sampler: cfg_warmup must be >= 0");
  }
};

inline int default_cfg_warmup(const BlockPartition& partition) { return steps_through_side(partition, 2); }

inline int effective_warmup(const SamplerConfig& cfg, const BlockPartition& partition) {
  const int w = cfg.cfg_warmup ? *cfg.cfg_warmup : default_cfg_warmup(partition);
  if (w > total_steps(partition))
    throw std::invalid_argument("sampler: cfg_warmup " + std::to_string(w) + " exceeds total steps " +
                                std::to_string(total_steps(partition)));
  return w;
}

// `step` is 1-based. Steps <= warmup return the conditional logits unchanged.
inline std::vector<double> apply_cfg(std::span<const double> cond, std::span<const double> uncond, double scale,
                                     int step, int warmup = 0) {
  if (cond.size() != uncond.size())
    throw std::invalid_argument("apply_cfg: logit shapes differ (" + std::to_string(cond.size()) + " vs " +
                                std::to_string(uncond.size()) + ")");
  std::vector<double> out(cond.begin(), cond.end());
  if (step <= warmup || scale == 1.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = uncond[i] + scale * (cond[i] - uncond[i]);
  return out;
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Uniform in [0, 1) for one token draw.
inline double token_uniform(std::uint64_t seed, std::uint64_t sample_index, std::uint64_t flat) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ sample_index) ^ (flat * 0xd6e8feb86659fd93ull));
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

// Softmax of logits / temperature.
inline std::vector<double> token_distribution(std::span<const double> logits, double temperature) {
  std::vector<double> p(logits.begin(), logits.end());
  for (double& v : p) v /= temperature;
  softmax_inplace(p.data(), p.size());
  return p;
}

inline double entropy_nats(std::span<const double> probs) {
  double h = 0;
  for (double p : probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

inline int draw_categorical(std::span<const double> probs, double u) {
  double acc = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  // Rounding left u above the accumulated mass: take the last non-zero entry.
  for (std::size_t i = probs.size(); i-- > 0;)
    if (probs[i] > 0) return static_cast<int>(i);
  return 0;
}

struct TokenRecord {
  int step = 0;   // 1-based global step
  int scale = 0;
  int block = 0;
  Position pos;
  int token = 0;
  double entropy = 0;  // nats, of the distribution actually sampled
  std::size_t flat = 0;
};

struct SampleTrace {
  int total_steps = 0;
  std::vector<int> scale_sides;
  std::vector<TokenRecord> tokens;
};

struct SampleResult {
  MultiscaleCodes codes;
  TokenGrid grid;  // final scale
  SampleTrace trace;
};

struct BlockDraw {
  std::size_t flat;
  int token;
  double entropy;
};

// Draws every token of one block. `order` lists the flat indices in the order
// they are evaluated; any permutation yields the same tokens.
template <class LogitFn>
std::vector<BlockDraw> sample_block_tokens(std::span<const std::size_t> order, LogitFn&& guided_logits,
                                           double temperature, std::uint64_t seed, std::uint64_t sample_index) {
  std::vector<BlockDraw> out;
  out.reserve(order.size());
  for (std::size_t flat : order) {
    const std::vector<double> logits = guided_logits(flat);
    const std::vector<double> probs = token_distribution(logits, temperature);
    const int tok = draw_categorical(probs, token_uniform(seed, sample_index, flat));
    out.push_back({flat, tok, entropy_nats(probs)});
  }
  return out;
}

inline SampleResult sample(const ModelConfig& config, const ModelParams& params, const SequencePlan& plan, int label,
                           const SamplerConfig& scfg, std::uint64_t sample_index = 0) {
  scfg.validate();
  if (label < 0 || label > config.classes) throw std::invalid_argument("sample: class label out of range");
  const int warmup = effective_warmup(scfg, plan.partition);
  const int steps = total_steps(plan.partition);
  const bool guided = scfg.cfg_scale != 1.0 && warmup < steps && label != config.null_class();

  SampleResult res;
  for (int side : plan.partition.schedule.sizes) {
    res.codes.emplace_back(side);
    res.trace.scale_sides.push_back(side);
  }
  res.trace.total_steps = steps;

  Transformer cond(config, params, plan, label);
  std::optional<Transformer> uncond;
  if (guided) uncond.emplace(config, params, plan, config.null_class());

  const std::size_t V = static_cast<std::size_t>(config.vocab);
  cond.run_until(1, res.codes);
  std::vector<std::size_t> order;
  for (std::size_t b = 1; b < plan.mask.num_blocks(); ++b) {
    const int step = static_cast<int>(b);
    const std::size_t begin = plan.mask.block_begin(b), end = plan.mask.block_end(b);
    cond.run_until(end, res.codes);
    const bool use_guidance = guided && step > warmup;
    if (use_guidance) uncond->run_until(end, res.codes);
    order.clear();
    for (std::size_t t = begin; t < end; ++t) order.push_back(t);
    auto logits_of = [&](std::size_t t) {
      const std::span<const double> c(cond.logits(t), V);
      if (!use_guidance) return std::vector<double>(c.begin(), c.end());
      return apply_cfg(c, std::span<const double>(uncond->logits(t), V), scfg.cfg_scale, step, warmup);
    };
    for (const BlockDraw& d : sample_block_tokens(order, logits_of, scfg.temperature, scfg.seed, sample_index)) {
      const TokenInfo& info = plan.tokens[d.flat];
      res.codes[static_cast<std::size_t>(info.scale)].cells[static_cast<std::size_t>(info.cell)] = d.token;
      res.trace.tokens.push_back({step, info.scale, info.block, info.pos, d.token, d.entropy, d.flat});
    }
  }
  res.grid = res.codes.back();
  return res;
}

inline std::vector<SampleResult> sample_many(const ModelConfig& config, const ModelParams& params,
                                             const SequencePlan& plan, int label, const SamplerConfig& scfg,
                                             std::size_t n, std::uint64_t first_index = 0) {
  std::vector<SampleResult> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample(config, params, plan, label, scfg, first_index + i));
  return out;
}

struct EntropyRow {
  int step = 0;
  double mean = 0, p25 = 0, p75 = 0;
  std::size_t count = 0;
};

// Nearest-rank percentile of a sorted sample, pct in (0, 100].
inline double nearest_rank(const std::vector<double>& sorted, double pct) {
  if (sorted.empty()) throw std::invalid_argument("nearest_rank: empty sample");
  auto rank = static_cast<std::size_t>(std::ceil(pct / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

// Per-step entropy aggregates over every token of every trace.
inline std::vector<EntropyRow> entropy_trace(std::span<const SampleTrace> traces) {
  if (traces.empty()) throw std::invalid_argument("entropy_trace: no traces");
  const int steps = traces.front().total_steps;
  std::vector<std::vector<double>> per_step(static_cast<std::size_t>(steps));
  for (const SampleTrace& tr : traces) {
    if (tr.total_steps != steps) throw std::invalid_argument("entropy_trace: traces have different step counts");
    for (const TokenRecord& r : tr.tokens) per_step[static_cast<std::size_t>(r.step - 1)].push_back(r.entropy);
  }
  std::vector<EntropyRow> rows;
  for (int s = 0; s < steps; ++s) {
    auto& v = per_step[static_cast<std::size_t>(s)];
    std::sort(v.begin(), v.end());
    EntropyRow row;
    row.step = s + 1;
    row.count = v.size();
    if (!v.empty()) {
      double sum = 0;
      for (double x : v) sum += x;
      row.mean = sum / static_cast<double>(v.size());
      row.p25 = nearest_rank(v, 25);
      row.p75 = nearest_rank(v, 75);
    }
    rows.push_back(row);
  }
  return rows;
}

struct EntropyMap {
  int side = 0;
  std::vector<double> values;  // row-major y * side + x

  double at(int x, int y) const { return values[static_cast<std::size_t>(y) * side + x]; }
};

inline EntropyMap entropy_map(const SampleTrace& trace, int scale) {
  if (scale < 0 || static_cast<std::size_t>(scale) >= trace.scale_sides.size())
    throw std::invalid_argument("entropy_map: scale " + std::to_string(scale) + " not in trace");
  EntropyMap m;
  m.side = trace.scale_sides[static_cast<std::size_t>(scale)];
  m.values.assign(static_cast<std::size_t>(m.side) * m.side, 0.0);
  for (const TokenRecord& r : trace.tokens)
    if (r.scale == scale) m.values[static_cast<std::size_t>(r.pos.y) * m.side + r.pos.x] = r.entropy;
  return m;
}

}  // namespace checkerboard
