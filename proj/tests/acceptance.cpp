// Acceptance run: one PASS/FAIL line per criterion on stdout, detail tables on
// stderr. Pass criterion numbers as arguments to run a subset.

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "checkerboard/experiment.hpp"
#include "support/model_fixtures.hpp"

using namespace checkerboard;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr double kScanOrderSeconds = 5.0;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsFloor = 1e-8;
constexpr double kGradSeconds = 120.0;
constexpr double kInitLossTol = 1e-4;
constexpr double kRopeTol = 1e-6;
constexpr int kRopeTrials = 1000;
constexpr double kTvSequential = 0.05;
constexpr double kSequentialMinutes = 30.0;
constexpr std::size_t kOracleSamples = 100000;
constexpr double kTvIndependent = 0.05;
constexpr double kScheduleRatio = 2.0;
constexpr std::size_t kEntropySamples = 1000;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

// --- 1 ---------------------------------------------------------------------

std::size_t digit_law_index(Position p, int side) {
  int levels = 0;
  while ((1 << levels) < side) ++levels;
  std::size_t index = 0, weight = 1;
  for (int d = 0; d < levels; ++d) {
    const int bit = levels - 1 - d;
    const int bx = (p.x >> bit) & 1, by = (p.y >> bit) & 1;
    const int q = (bx == 0 && by == 0) ? 0 : (bx == 1 && by == 1) ? 1 : (bx == 1) ? 2 : 3;
    index += static_cast<std::size_t>(q) * weight;
    weight *= 4;
  }
  return index;
}

Outcome criterion1() {
  const auto t0 = Clock::now();
  std::string why;
  for (int n : {2, 4, 8, 16, 32}) {
    const ScanOrder o = generate_order(n);
    const std::size_t N = o.size();
    std::vector<char> seen(N, 0);
    bool perm = N == static_cast<std::size_t>(n) * n;
    for (const Position& p : o.positions) {
      if (p.x < 0 || p.y < 0 || p.x >= n || p.y >= n || seen[static_cast<std::size_t>(p.y * n + p.x)]) perm = false;
      else seen[static_cast<std::size_t>(p.y * n + p.x)] = 1;
    }
    if (!perm) why += " perm(" + std::to_string(n) + ")";
    // Incremental per-depth cell counts; check every prefix at every depth.
    std::vector<std::vector<std::size_t>> counts;
    std::vector<int> cell_sides;
    for (int cell = n; cell >= 1; cell /= 2) {
      cell_sides.push_back(cell);
      counts.emplace_back(static_cast<std::size_t>(n / cell) * (n / cell), 0);
    }
    bool balanced = true;
    for (std::size_t k = 1; k <= N && balanced; ++k) {
      const Position p = o.positions[k - 1];
      for (std::size_t d = 0; d < counts.size(); ++d) {
        const int per = n / cell_sides[d];
        ++counts[d][static_cast<std::size_t>(p.y / cell_sides[d]) * per + p.x / cell_sides[d]];
        const std::size_t cells = counts[d].size(), lo = k / cells, hi = (k + cells - 1) / cells;
        for (std::size_t c : counts[d])
          if (c < lo || c > hi) balanced = false;
      }
    }
    if (!balanced) why += " balance(" + std::to_string(n) + ")";
    for (std::size_t i = 0; i < N; ++i)
      if (digit_law_index(o.positions[i], n) != i) {
        why += " digit(" + std::to_string(n) + ")";
        break;
      }
    for (std::size_t i = 0; i < N; ++i)
      if (((o.positions[i].x + o.positions[i].y) % 2 == 0) != (i < N / 2)) {
        why += " half(" + std::to_string(n) + ")";
        break;
      }
  }
  const double secs = seconds_since(t0);
  if (secs >= kScanOrderSeconds) why += " slow";
  return {why.empty(), "sides 2..32 checked in " + fmt(secs, 3) + " s" + why};
}

// --- 2 ---------------------------------------------------------------------

Outcome criterion2() {
  const int x2 = total_steps(partition_blocks(make_schedule(RatioTag::X2, 16), 4));
  const int x4 = total_steps(partition_blocks(make_schedule(RatioTag::X4, 16), 8));
  const auto sq = make_schedule(RatioTag::Sqrt2, 16).sizes;
  const bool ok = x2 == 17 && x4 == 17 && sq == std::vector<int>{1, 2, 3, 4, 6, 8, 11, 16};
  return {ok, "x2/P=4 " + std::to_string(x2) + " steps, x4/P=8 " + std::to_string(x4) + " steps, sqrt2 sizes " +
                  steps_string(sq)};
}

// --- 3 ---------------------------------------------------------------------

Outcome criterion3() {
  std::size_t pairs = 0, layouts = 0;
  bool mask_ok = true;
  for (RatioTag tag : {RatioTag::Sqrt2, RatioTag::X2, RatioTag::X3, RatioTag::X4, RatioTag::Single})
    for (int side : {2, 4, 8, 16})
      for (int p : {1, 2, 3, 4, 8, 16, 1000}) {
        const BlockPartition part = partition_blocks(make_schedule(tag, side), p);
        if (1 + part.schedule.token_count() > 512) continue;
        const SequenceLayout layout = build_layout(part);
        const BitRows bits = mask_to_bitrows(build_mask(layout));
        auto key = [&](std::size_t t) -> std::pair<int, int> {
          if (t == 0) return {-1, 0};
          return {layout.entries[t - 1].scale, layout.entries[t - 1].block};
        };
        for (std::size_t q = 0; q < layout.length; ++q)
          for (std::size_t k = 0; k < layout.length; ++k, ++pairs)
            if (bits.test(q, k) != (key(k) <= key(q))) mask_ok = false;
        ++layouts;
      }

  // Future-block perturbation on a randomized model.
  const ModelConfig c = testing::tiny_config();
  const ModelParams params = testing::random_params(c, 31);
  const std::size_t V = static_cast<std::size_t>(c.vocab);
  bool logits_ok = true;
  std::size_t perturbations = 0;
  std::mt19937_64 rng(5);
  for (int p : {1, 2, 3, 16}) {
    const SequencePlan plan = build_plan(c, p);
    const MultiscaleCodes base = testing::random_codes(c, 40 + static_cast<std::uint64_t>(p));
    Transformer ref(c, params, plan, 1);
    ref.run_all(base);
    for (std::size_t b = 1; b + 1 < plan.mask.num_blocks(); ++b) {
      const std::size_t end = plan.mask.block_end(b);
      MultiscaleCodes pert = base;
      for (std::size_t t = end; t < plan.length(); ++t) {
        const TokenInfo& info = plan.tokens[t];
        int& v = pert[static_cast<std::size_t>(info.scale)].cells[static_cast<std::size_t>(info.cell)];
        v = static_cast<int>((static_cast<std::uint64_t>(v) + 1 + rng() % (V - 1)) % V);
      }
      Transformer net(c, params, plan, 1);
      net.run_all(pert);
      if (std::memcmp(net.logits(0), ref.logits(0), end * V * sizeof(double)) != 0) logits_ok = false;
      ++perturbations;
    }
  }
  return {mask_ok && logits_ok, std::to_string(layouts) + " layouts, " + std::to_string(pairs) + " pairs " +
                                    (mask_ok ? "match" : "MISMATCH") + "; " + std::to_string(perturbations) +
                                    " future-block perturbations " + (logits_ok ? "bit-identical" : "CHANGED logits")};
}

// --- 4 ---------------------------------------------------------------------

Outcome criterion4() {
  const auto t0 = Clock::now();
  const ModelConfig c = testing::tiny_config(2, 16, 2, 4, 4);
  const ModelParams params = testing::random_params(c, 7);
  const SequencePlan plan = build_plan(c, 2);
  const auto r = testing::check_gradients(c, params, plan, testing::random_codes(c, 8), 1, kGradRelTol, kGradAbsFloor);
  const double secs = seconds_since(t0);
  const bool ok = r.failures.empty() && r.checked > 0 && secs < kGradSeconds;
  return {ok, std::to_string(r.checked) + " coordinates, worst rel " + fmt(r.worst_rel_large, 3) + " for |g| > 1e-6, " +
                  std::to_string(r.floor_passes) + " below the 1e-8 floor (|g| <= " + fmt(r.floor_max_mag, 3) +
                  "), " + std::to_string(r.failures.size()) + " failures, " + fmt(secs, 3) + " s"};
}

// --- 5 ---------------------------------------------------------------------

Outcome criterion5() {
  ModelConfig c;  // defaults: V = 16
  c.layers = 2;
  c.width = 32;
  c.side = 8;
  const ModelParams params = init_params(c, 3);
  const SequencePlan plan = build_plan(c, 4);
  std::mt19937_64 rng(4);
  TokenGrid g(c.side);
  for (int& v : g.cells) v = static_cast<int>(rng() % 16);
  const double loss = sequence_loss(c, params, plan, build_pyramid(g, c.schedule(), c.vocab), 0);
  const double want = std::log(16.0);
  return {std::abs(loss - want) <= kInitLossTol, "loss " + fmt(loss, 8) + " vs ln 16 = " + fmt(want, 8)};
}

// --- 6 ---------------------------------------------------------------------

Outcome criterion6() {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> coord(0, 63), shift(-32, 32), sc(0, 7);
  std::uniform_real_distribution<double> freq(0.01, 3.0);
  RopeConfig cfg = make_rope_config(32, 16, 8);
  for (double& w : cfg.frequencies) w = freq(rng);
  auto vec = [&] {
    std::vector<double> v(32);
    for (double& x : v) x = nd(rng);
    return v;
  };
  auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  };
  double worst_norm = 0, worst_shift = 0;
  for (int t = 0; t < kRopeTrials; ++t) {
    const auto q = vec(), k = vec();
    const Position pq{coord(rng), coord(rng)}, pk{coord(rng), coord(rng)};
    const int sq = sc(rng), sk = sc(rng), dx = shift(rng), dy = shift(rng), ds = shift(rng);
    const auto rq = rope_rotate(q, pq, sq, cfg);
    worst_norm = std::max(worst_norm, std::abs(std::sqrt(dot(rq, rq) / dot(q, q)) - 1.0));
    const double base = dot(rq, rope_rotate(k, pk, sk, cfg));
    const double moved =
        dot(rope_rotate(q, {pq.x + dx, pq.y + dy}, sq + ds, cfg), rope_rotate(k, {pk.x + dx, pk.y + dy}, sk + ds, cfg));
    worst_shift = std::max(worst_shift, std::abs(moved - base) / std::max(1.0, std::abs(base)));
  }
  return {worst_norm <= kRopeTol && worst_shift <= kRopeTol,
          std::to_string(kRopeTrials) + " trials, worst norm err " + fmt(worst_norm, 3) + ", worst shift err " +
              fmt(worst_shift, 3)};
}

// --- shared training helpers -----------------------------------------------

ModelConfig small_model(RatioTag ratio, int side, int vocab, int classes, int width = 32) {
  ModelConfig c;
  c.layers = 2;
  c.width = width;
  c.heads = 4;
  c.vocab = vocab;
  c.classes = classes;
  c.mlp_mult = 2;
  c.embed_dim = 4;
  c.ratio = ratio;
  c.side = side;
  return c;
}

ModelParams fit(const ModelConfig& c, const GridDistribution& d, int steps, int batch, double lr,
                std::vector<int> candidates, std::uint64_t seed, double cond_dropout = 0.1) {
  TrainConfig t;
  t.steps = steps;
  t.batch_size = batch;
  t.lr = lr;
  t.p_candidates = std::move(candidates);
  t.seed = seed;
  t.cond_dropout = cond_dropout;
  const auto t0 = Clock::now();
  TrainResult r = train(c, t, distribution_source(d), init_params(c, seed + 1));
  const auto sm = smoothed_loss(r.curve, 100);
  std::cerr << "  trained " << to_string(c.ratio) << " side " << c.side << ": " << steps << " steps in "
            << fmt(seconds_since(t0), 3) << " s, final smoothed loss " << fmt(sm.back(), 5) << "\n";
  return std::move(r.params);
}

// Model joint over all grids of a single-scale model at a given P.
std::vector<double> model_joint(const ModelConfig& c, const ModelParams& params, int p, int label) {
  const SequencePlan plan = build_plan(c, p);
  const auto states = static_cast<std::uint64_t>(std::pow(c.vocab, c.side * c.side));
  const double n = static_cast<double>(plan.length() - 1);
  std::vector<double> joint(states);
  for (std::uint64_t i = 0; i < states; ++i)
    joint[i] = std::exp(-n * sequence_loss(c, params, plan, {decode_state(i, c.side, c.vocab)}, label));
  return joint;
}

struct OracleFit {
  double worst_tv = 0, worst_model_tv = 0, ci = 0, noise = 0;
  std::string table;
};

OracleFit oracle_fit(const ModelConfig& c, const ModelParams& params, const GridDistribution& d, int p,
                     std::size_t samples, std::uint64_t seed) {
  OracleFit f;
  const SequencePlan plan = build_plan(c, p);
  SamplerConfig s;
  s.p = p;
  s.seed = seed;
  for (int label = 0; label < d.classes(); ++label) {
    const ProbabilityTable t = enumerate_exact(d, label);
    std::vector<TokenGrid> grids;
    grids.reserve(samples);
    for (std::size_t i = 0; i < samples; ++i)
      grids.push_back(sample(c, params, plan, label, s, (static_cast<std::uint64_t>(label) << 32) | i).grid);
    const EvalRow row = evaluate_samples(grids, d, Reference{"full", t.p, 0});
    const double model_tv = tv_distance(model_joint(c, params, p, label), t.p);
    f.worst_tv = std::max(f.worst_tv, row.tv);
    f.worst_model_tv = std::max(f.worst_model_tv, model_tv);
    f.ci = std::max(f.ci, row.ci_halfwidth);
    f.noise = std::max(f.noise, row.noise_tv);
    f.table += "  class " + std::to_string(label) + ": sampled TV " + fmt(row.tv) + " (noise " + fmt(row.noise_tv) +
               ", 95% CI half-width " + fmt(row.ci_halfwidth) + "), exact model TV " + fmt(model_tv) + "\n";
  }
  return f;
}

// --- 7 ---------------------------------------------------------------------

Outcome criterion7() {
  const auto t0 = Clock::now();
  GridDistribution d;
  d.kind = DistKind::Coupled;
  d.side = 3;
  d.vocab = 2;
  d.coupling = 0.5;
  d.fields = {0.3, -0.3};
  const ModelConfig c = small_model(RatioTag::Single, 3, 2, 2);
  const ModelParams params = fit(c, d, 6000, 16, 2e-3, {9}, 70, 0.0);
  const OracleFit f = oracle_fit(c, params, d, 9, kOracleSamples, 71);
  std::cerr << "criterion 7 detail (side 3, vocab 2, J 0.5, fields +-0.3, P = 9, " << kOracleSamples
            << " samples per class)\n"
            << f.table;
  const double minutes = seconds_since(t0) / 60.0;
  return {f.worst_tv <= kTvSequential && minutes <= kSequentialMinutes,
          "worst-class TV " + fmt(f.worst_tv) + " (95% CI +-" + fmt(f.ci) + ", exact model TV " +
              fmt(f.worst_model_tv) + ") <= " + fmt(kTvSequential) + ", " + fmt(minutes, 3) + " min"};
}

// --- 8 ---------------------------------------------------------------------

Outcome criterion8() {
  GridDistribution d;
  d.kind = DistKind::Independent;
  d.side = 3;
  d.vocab = 2;
  d.coupling = 0.0;
  d.fields = {0.5, -0.5};
  const ModelConfig c = small_model(RatioTag::Single, 3, 2, 2);
  const ModelParams params = fit(c, d, 3000, 16, 2e-3, {1}, 80, 0.0);
  const OracleFit f = oracle_fit(c, params, d, 1, kOracleSamples, 81);
  std::cerr << "criterion 8 detail (independent, side 3, vocab 2, fields +-0.5, P = 1: one step)\n" << f.table;
  return {f.worst_tv <= kTvIndependent, "worst-class TV " + fmt(f.worst_tv) + " (95% CI +-" + fmt(f.ci) +
                                            ", exact model TV " + fmt(f.worst_model_tv) + ") <= " +
                                            fmt(kTvIndependent)};
}

// --- 9 and 10 share the side-8 coupled models --------------------------------

GridDistribution side8_task() {
  GridDistribution d;
  d.kind = DistKind::Coupled;
  d.side = 8;
  d.vocab = 2;
  d.coupling = 0.3;
  d.fields = {0.3, -0.3};
  d.burn_in = 200;
  return d;
}

struct Side8Models {
  ModelConfig x2, x4, single;
  ModelParams px2, px4, psingle;
};

const Side8Models& side8_models() {
  static const Side8Models m = [] {
    const GridDistribution d = side8_task();
    Side8Models s;
    s.x2 = small_model(RatioTag::X2, 8, 2, 2);
    s.x4 = small_model(RatioTag::X4, 8, 2, 2);
    s.single = small_model(RatioTag::Single, 8, 2, 2);
    s.px2 = fit(s.x2, d, 3000, 8, 2e-3, {2, 4}, 90);
    s.px4 = fit(s.x4, d, 3000, 8, 2e-3, {8}, 91);
    s.psingle = fit(s.single, d, 1500, 8, 2e-3, {1}, 92);
    return s;
  }();
  return m;
}

Outcome criterion9() {
  const GridDistribution d = side8_task();
  const Side8Models& m = side8_models();
  SamplerConfig s;
  s.seed = 93;
  const std::vector<AblationEntry> entries{
      {"x2", m.x2, &m.px2, 4}, {"x4", m.x4, &m.px4, 8}, {"single", m.single, &m.psingle, 1},
      {"x2", m.x2, &m.px2, 2}, {"x2", m.x2, &m.px2, 1}, {"x4", m.x4, &m.px4, 4}};
  const auto rows = order_ablation(entries, d, s, 2000, 94, 20000);
  std::cerr << "criterion 9 detail (side 8, vocab 2, J 0.3, fields +-0.3; 2x2 patch TV vs 20000 Gibbs draws)\n"
            << "  schedule P total_steps tv noise_tv ci95\n";
  for (const AblationRow& r : rows)
    std::cerr << "  " << r.schedule << ' ' << r.p << ' ' << r.total_steps << ' ' << fmt(r.tv) << ' ' << fmt(r.noise_tv)
              << ' ' << fmt(r.ci_halfwidth) << '\n';
  const AblationRow &x2 = rows[0], &x4 = rows[1], &base = rows[2];
  const bool matched = x2.total_steps == x4.total_steps;
  const double ratio = std::max(x2.tv, x4.tv) / std::max(1e-12, std::min(x2.tv, x4.tv));
  const bool ok = matched && ratio <= kScheduleRatio && x2.tv < base.tv && x4.tv < base.tv;
  return {ok, "at " + std::to_string(x2.total_steps) + " steps x2 TV " + fmt(x2.tv) + ", x4 TV " + fmt(x4.tv) +
                  " (ratio " + fmt(ratio, 3) + " <= 2); single-scale 1-step TV " + fmt(base.tv)};
}

Outcome criterion10() {
  const Side8Models& m = side8_models();
  SamplerConfig s;
  s.seed = 95;
  s.p = 4;
  const SequencePlan plan = build_plan(m.x2, 4);
  std::vector<SampleTrace> traces;
  for (std::size_t i = 0; i < kEntropySamples; ++i)
    traces.push_back(sample(m.x2, m.px2, plan, static_cast<int>(i % 2), s, i).trace);
  const auto rows = entropy_trace(traces);
  // Step index where each scale starts.
  std::vector<int> first_step{1};
  for (int k : plan.partition.steps_per_scale) first_step.push_back(first_step.back() + k);
  std::cerr << "criterion 10 detail (x2 side 8, P = 4, " << kEntropySamples << " samples)\n  step mean p25 p75\n";
  for (const EntropyRow& r : rows)
    std::cerr << "  " << r.step << ' ' << fmt(r.mean) << ' ' << fmt(r.p25) << ' ' << fmt(r.p75) << '\n';
  bool rises = true;
  std::string jumps;
  for (std::size_t sc = 1; sc < plan.partition.steps_per_scale.size(); ++sc) {
    const double before = rows[static_cast<std::size_t>(first_step[sc] - 2)].mean;
    const double after = rows[static_cast<std::size_t>(first_step[sc] - 1)].mean;
    rises = rises && after > before;
    jumps += " " + fmt(before, 3) + "->" + fmt(after, 3);
  }

  // Entropy map at P = 2: mean over samples, final scale, by block.
  SamplerConfig s2 = s;
  s2.p = 2;
  const SequencePlan plan2 = build_plan(m.x2, 2);
  const std::size_t last = plan2.partition.blocks.size() - 1;
  std::vector<double> mean_map(64, 0.0);
  for (std::size_t i = 0; i < kEntropySamples; ++i) {
    const EntropyMap em = entropy_map(sample(m.x2, m.px2, plan2, static_cast<int>(i % 2), s2, i).trace,
                                      static_cast<int>(last));
    for (std::size_t k = 0; k < 64; ++k) mean_map[k] += em.values[k] / kEntropySamples;
  }
  double first_half = 0, second_half = 0;
  for (const Position& p : plan2.partition.blocks[last][0].positions) first_half += mean_map[static_cast<std::size_t>(p.y * 8 + p.x)] / 32;
  for (const Position& p : plan2.partition.blocks[last][1].positions) second_half += mean_map[static_cast<std::size_t>(p.y * 8 + p.x)] / 32;
  std::cerr << "  entropy map P=2 final scale (mean nats):\n";
  for (int y = 0; y < 8; ++y) {
    std::cerr << "   ";
    for (int x = 0; x < 8; ++x) std::cerr << ' ' << std::fixed << std::setprecision(3) << mean_map[static_cast<std::size_t>(y * 8 + x)];
    std::cerr << std::defaultfloat << '\n';
  }
  const bool ok = rises && second_half < first_half;
  return {ok, std::string("scale-boundary jumps") + jumps + (rises ? " all rise" : " NOT all rising") +
                  "; P=2 map first-half " + fmt(first_half) + " vs second-half " + fmt(second_half)};
}

// --- 11 --------------------------------------------------------------------

int run_cli(const std::string& args) {
  const int status = std::system((std::string(CHECKERBOARD_CLI) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree_hashes(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  return out;
}

Outcome criterion11() {
  const fs::path root = fs::temp_directory_path() / "checkerboard_acceptance_11";
  fs::remove_all(root);
  fs::create_directories(root);
  const fs::path cfg = root / "config.json";
  write_file(cfg, R"({
    "schedule": "x2", "side": 4, "p_candidates": [1, 2, 4], "seed": 5,
    "model": {"layers": 1, "width": 16, "heads": 2, "vocab": 4, "classes": 2, "mlp_mult": 2, "embed_dim": 4},
    "train": {"steps": 30, "batch_size": 4, "lr": 0.003, "checkpoint_every": 10},
    "sampler": {"cfg_scale": 2.0},
    "distribution": {"kind": "ising", "coupling": 0.3, "fields": [0.5, -0.5]},
    "eval": {"p_values": [1, 4], "samples_per_class": 50, "reference_samples": 1000, "trace_samples": 2}
  })");
  std::vector<std::string> commands;
  for (const char* run : {"a", "b"}) {
    const fs::path d = root / run;
    fs::create_directories(d);
    const std::string r = d.string();
    for (const std::string& c :
         {"experiment run --config " + cfg.string() + " --out " + r + "/exp",
          "train --config " + cfg.string() + " --out " + r + "/train",
          "sample --checkpoint " + r + "/train/checkpoint.bin --class 1 --p 2 --cfg 1.5 --seed 3 --n 20 --out " + r +
              "/samples.json --trace " + r + "/trace.csv",
          "order gen --side 16 --out " + r + "/order.json",
          "order gen --side 8 --kind random --seed 4 --out " + r + "/random.json",
          "mask dump --ratio x2 --side 8 --p 4 --out " + r + "/mask.json",
          "oracle enumerate --kind ising --side 3 --vocab 2 --j 0.5 --fields 0.3 --out " + r + "/table.json",
          "plots emit --in " + r + "/exp --out " + r + "/plots"}) {
      if (run_cli(c) != 0) return {false, "command failed: " + c};
      if (run[0] == 'a') commands.push_back(c.substr(0, c.find(" --")));
    }
  }
  const auto a = tree_hashes(root / "a"), b = tree_hashes(root / "b");
  std::size_t differing = 0;
  for (const auto& [path, h] : a) {
    auto it = b.find(path);
    if (it == b.end() || it->second != h) {
      ++differing;
      std::cerr << "  differs: " << path << '\n';
    }
  }
  const bool manifests = read_file(root / "a/exp/manifest.json") == read_file(root / "b/exp/manifest.json") &&
                         read_file(root / "a/train/manifest.json") == read_file(root / "b/train/manifest.json");
  fs::remove_all(root);
  const bool ok = differing == 0 && a.size() == b.size() && manifests;
  return {ok, std::to_string(commands.size()) + " commands rerun, " + std::to_string(a.size()) + " files, " +
                  std::to_string(differing) + " differ; manifests " + (manifests ? "identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Outcome()>> criteria{criterion1, criterion2, criterion3,  criterion4,
                                                       criterion5, criterion6, criterion7,  criterion8,
                                                       criterion9, criterion10, criterion11};
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = criteria[i]();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " " << o.detail << " ["
              << fmt(seconds_since(t0), 3) << " s]" << std::endl;
  }
  return failed ? 1 : 0;
}
