#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "checkerboard/sampler.hpp"
#include "checkerboard/synthetic.hpp"
#include "support/model_fixtures.hpp"

using namespace checkerboard;
using checkerboard::testing::random_params;
using checkerboard::testing::tiny_config;

namespace {

MultiscaleCodes zero_codes(const ModelConfig& c) {
  MultiscaleCodes codes;
  for (int side : c.schedule().sizes) codes.emplace_back(side, 0);
  return codes;
}

// Reference sampler: a fresh teacher-forced full pass for every block, with
// not-yet-drawn cells left at 0 and guidance written out inline.
SampleResult naive_sample(const ModelConfig& c, const ModelParams& params, const SequencePlan& plan, int label,
                          const SamplerConfig& s, std::uint64_t index) {
  const int warmup = effective_warmup(s, plan.partition);
  SampleResult res;
  res.codes = zero_codes(c);
  const std::size_t V = static_cast<std::size_t>(c.vocab);
  for (std::size_t b = 1; b < plan.mask.num_blocks(); ++b) {
    Transformer cond(c, params, plan, label), unc(c, params, plan, c.null_class());
    cond.run_all(res.codes);
    unc.run_all(res.codes);
    for (std::size_t t = plan.mask.block_begin(b); t < plan.mask.block_end(b); ++t) {
      std::vector<double> z(cond.logits(t), cond.logits(t) + V);
      if (static_cast<int>(b) > warmup && s.cfg_scale != 1.0)
        for (std::size_t v = 0; v < V; ++v) z[v] = unc.logits(t)[v] + s.cfg_scale * (z[v] - unc.logits(t)[v]);
      for (double& x : z) x /= s.temperature;
      const double m = *std::max_element(z.begin(), z.end());
      double sum = 0;
      for (double& x : z) sum += x = std::exp(x - m);
      for (double& x : z) x /= sum;
      const double u = token_uniform(s.seed, index, t);
      int tok = static_cast<int>(V) - 1;
      double acc = 0;
      for (std::size_t v = 0; v < V; ++v)
        if (u < (acc += z[v])) {
          tok = static_cast<int>(v);
          break;
        }
      const TokenInfo& info = plan.tokens[t];
      res.codes[static_cast<std::size_t>(info.scale)].cells[static_cast<std::size_t>(info.cell)] = tok;
    }
  }
  res.grid = res.codes.back();
  return res;
}

}  // namespace

TEST(ApplyCfg, ScaleWarmupAndShape) {
  const std::vector<double> c{1.0, -2.0, 0.5}, u{0.25, 0.5, -1.0};
  EXPECT_EQ(apply_cfg(c, u, 0.0, 5), u);
  EXPECT_EQ(apply_cfg(c, u, 1.0, 5), c);
  const auto g = apply_cfg(c, u, 3.0, 5);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(g[i], u[i] + 3.0 * (c[i] - u[i]), 1e-15);
  EXPECT_EQ(apply_cfg(c, u, 3.0, 2, 2), c);
  EXPECT_NE(apply_cfg(c, u, 3.0, 3, 2), c);
  EXPECT_THROW(apply_cfg(c, std::vector<double>{1.0}, 2.0, 1), std::invalid_argument);
}

TEST(ApplyCfg, WarmupDefaultsAndBounds) {
  const auto part = partition_blocks(make_schedule(RatioTag::X2, 16), 4);
  SamplerConfig s;
  EXPECT_EQ(effective_warmup(s, part), 5);
  s.cfg_warmup = 17;
  EXPECT_EQ(effective_warmup(s, part), 17);
  s.cfg_warmup = 18;
  EXPECT_THROW(effective_warmup(s, part), std::invalid_argument);
  SamplerConfig bad;
  bad.temperature = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = {};
  bad.cfg_scale = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Categorical, DrawAndEntropy) {
  const std::vector<double> p{0.2, 0.0, 0.8};
  EXPECT_EQ(draw_categorical(p, 0.0), 0);
  EXPECT_EQ(draw_categorical(p, 0.19999), 0);
  EXPECT_EQ(draw_categorical(p, 0.2), 2);
  EXPECT_EQ(draw_categorical(p, 0.9999999999999999), 2);
  EXPECT_NEAR(entropy_nats(std::vector<double>(8, 0.125)), std::log(8.0), 1e-15);
  EXPECT_DOUBLE_EQ(entropy_nats(std::vector<double>{1.0, 0.0}), 0.0);
  const auto t = token_distribution(std::vector<double>{0.0, std::log(3.0)}, 1.0);
  EXPECT_NEAR(t[1], 0.75, 1e-15);
  const auto cold = token_distribution(std::vector<double>{0.0, std::log(3.0)}, 0.5);
  EXPECT_NEAR(cold[1], 0.9, 1e-15);
}

TEST(TokenUniform, DeterministicAndSpread) {
  EXPECT_EQ(token_uniform(1, 2, 3), token_uniform(1, 2, 3));
  EXPECT_NE(token_uniform(1, 2, 3), token_uniform(1, 2, 4));
  EXPECT_NE(token_uniform(1, 2, 3), token_uniform(1, 3, 3));
  EXPECT_NE(token_uniform(1, 2, 3), token_uniform(2, 2, 3));
  double mean = 0;
  for (std::uint64_t i = 0; i < 100000; ++i) {
    const double u = token_uniform(7, i / 100, i % 100);
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    mean += u / 100000;
  }
  EXPECT_NEAR(mean, 0.5, 0.005);
}

TEST(Sample, MatchesNaiveFullPassSampler) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 21, 0.4);
  for (int p : {1, 2, 3, 16}) {
    const SequencePlan plan = build_plan(c, p);
    for (double scale : {1.0, 0.0, 2.5}) {
      SamplerConfig s;
      s.cfg_scale = scale;
      s.cfg_warmup = 1;
      s.temperature = 0.8;
      s.seed = 99;
      s.p = p;
      for (std::uint64_t i = 0; i < 4; ++i) {
        const auto a = sample(c, params, plan, 1, s, i);
        const auto b = naive_sample(c, params, plan, 1, s, i);
        ASSERT_EQ(a.codes, b.codes) << "P=" << p << " s=" << scale << " i=" << i;
      }
    }
  }
}

TEST(Sample, ZeroScaleAfterZeroWarmupIsUnconditional) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 22);
  const SequencePlan plan = build_plan(c, 2);
  SamplerConfig guided;
  guided.cfg_scale = 0.0;
  guided.cfg_warmup = 0;
  guided.seed = 5;
  SamplerConfig plain = guided;
  plain.cfg_scale = 1.0;
  for (std::uint64_t i = 0; i < 5; ++i)
    EXPECT_EQ(sample(c, params, plan, 0, guided, i).codes, sample(c, params, plan, c.null_class(), plain, i).codes);
}

TEST(Sample, ZeroHeadModelIsUniform) {
  const ModelConfig c = tiny_config(2, 16, 2, 6);
  const ModelParams params = init_params(c, 3);
  const SequencePlan plan = build_plan(c, 4);
  SamplerConfig s;
  s.cfg_scale = 3.0;
  const auto r = sample(c, params, plan, 2, s);
  ASSERT_EQ(r.trace.tokens.size(), plan.length() - 1);
  for (const TokenRecord& t : r.trace.tokens) EXPECT_NEAR(t.entropy, std::log(6.0), 1e-12);
  const std::vector<SampleTrace> traces{r.trace};
  for (const EntropyRow& row : entropy_trace(traces)) {
    EXPECT_NEAR(row.mean, std::log(6.0), 1e-12);
    EXPECT_DOUBLE_EQ(row.p25, row.p75);
  }
}

TEST(Sample, DeterministicAndSeedSensitive) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 23);
  const SequencePlan plan = build_plan(c, 4);
  SamplerConfig s;
  s.seed = 1;
  s.cfg_scale = 2.0;
  const auto a = sample(c, params, plan, 0, s, 3);
  EXPECT_EQ(a.codes, sample(c, params, plan, 0, s, 3).codes);
  bool differs = false;
  for (std::uint64_t i = 0; i < 8 && !differs; ++i) differs = sample(c, params, plan, 0, s, 100 + i).codes != a.codes;
  EXPECT_TRUE(differs);
  EXPECT_THROW(sample(c, params, plan, c.classes + 1, s), std::invalid_argument);
}

TEST(Sample, TraceCoversEveryStepAndCell) {
  const ModelConfig c = tiny_config();
  const ModelParams params = random_params(c, 24);
  for (int p : {1, 3, 1000}) {
    const SequencePlan plan = build_plan(c, p);
    const auto r = sample(c, params, plan, 0, SamplerConfig{});
    EXPECT_EQ(r.trace.total_steps, total_steps(plan.partition));
    EXPECT_EQ(r.grid, r.codes.back());
    int last = 0;
    for (const TokenRecord& t : r.trace.tokens) {
      EXPECT_GE(t.step, last);
      last = t.step;
      EXPECT_EQ(r.codes[static_cast<std::size_t>(t.scale)].at(t.pos.x, t.pos.y), t.token);
    }
    EXPECT_EQ(last, r.trace.total_steps);
  }
}

TEST(SampleBlockTokens, EvaluationOrderDoesNotMatter) {
  std::mt19937_64 rng(4);
  std::vector<std::vector<double>> table(12, std::vector<double>(5));
  std::normal_distribution<double> nd;
  for (auto& row : table)
    for (double& v : row) v = nd(rng);
  auto fn = [&](std::size_t flat) { return table[flat]; };
  std::vector<std::size_t> order{3, 4, 5, 6, 7, 8, 9, 10, 11};
  const auto ref = sample_block_tokens(order, fn, 1.3, 17, 2);
  for (int t = 0; t < 10; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    const auto got = sample_block_tokens(order, fn, 1.3, 17, 2);
    for (const BlockDraw& d : got) {
      const auto it = std::find_if(ref.begin(), ref.end(), [&](const BlockDraw& r) { return r.flat == d.flat; });
      ASSERT_NE(it, ref.end());
      EXPECT_EQ(it->token, d.token);
      EXPECT_EQ(it->entropy, d.entropy);
    }
  }
}

// Sampling with P = n on one scale must reproduce the model's own joint,
// which the teacher-forced loss gives exactly: log p(z) = -n * mean NLL.
TEST(Sample, SequentialSamplesFollowModelJoint) {
  ModelConfig c = tiny_config(1, 8, 2, 2, 2, RatioTag::Single);
  c.mix_layers = 1;
  const ModelParams params = random_params(c, 25, 0.8);
  const SequencePlan plan = build_plan(c, 4);
  std::vector<double> joint(16);
  for (std::uint64_t i = 0; i < 16; ++i) {
    const MultiscaleCodes codes{decode_state(i, 2, 2)};
    joint[i] = std::exp(-4.0 * sequence_loss(c, params, plan, codes, 1));
  }
  double total = 0;
  for (double p : joint) total += p;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const std::size_t n = 40000;
  SamplerConfig s;
  s.p = 4;
  s.seed = 8;
  std::vector<TokenGrid> grids;
  for (const auto& r : sample_many(c, params, plan, 1, s, n)) grids.push_back(r.grid);
  const double tv = tv_distance(estimate_full_grid(grids, 2, 2), joint);
  EXPECT_LT(tv, 2.5 * tv_uncertainty(joint, n).expected_noise_tv);
}

TEST(EntropyTrace, AggregatesAndValidates) {
  SampleTrace a, b;
  a.total_steps = b.total_steps = 2;
  a.scale_sides = b.scale_sides = {2};
  a.tokens = {{1, 0, 0, {0, 0}, 0, 1.0, 1}, {1, 0, 0, {1, 1}, 0, 3.0, 2}, {2, 0, 1, {1, 0}, 0, 0.5, 3}};
  b.tokens = {{1, 0, 0, {0, 0}, 0, 2.0, 1}, {1, 0, 0, {1, 1}, 0, 4.0, 2}, {2, 0, 1, {0, 1}, 0, 0.25, 4}};
  const std::vector<SampleTrace> both{a, b};
  const auto rows = entropy_trace(both);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_DOUBLE_EQ(rows[0].mean, 2.5);
  EXPECT_EQ(rows[0].count, 4u);
  EXPECT_DOUBLE_EQ(rows[0].p25, 1.0);
  EXPECT_DOUBLE_EQ(rows[0].p75, 3.0);
  EXPECT_DOUBLE_EQ(rows[1].mean, 0.375);
  EXPECT_THROW(entropy_trace(std::span<const SampleTrace>{}), std::invalid_argument);
  b.total_steps = 3;
  const std::vector<SampleTrace> mixed{a, b};
  EXPECT_THROW(entropy_trace(mixed), std::invalid_argument);

  const EntropyMap m = entropy_map(a, 0);
  EXPECT_DOUBLE_EQ(m.at(1, 1), 3.0);
  EXPECT_DOUBLE_EQ(m.at(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(m.at(0, 1), 0.0);
  EXPECT_THROW(entropy_map(a, 1), std::invalid_argument);
  EXPECT_DOUBLE_EQ(nearest_rank({1, 2, 3, 4}, 50), 2.0);
  EXPECT_DOUBLE_EQ(nearest_rank({1, 2, 3, 4}, 100), 4.0);
}
