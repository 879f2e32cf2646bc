#pragma once

// Teacher-forced training with AdamW. One optimizer step averages the
// gradient over a batch; each example gets its own block count P drawn from
// the candidate set and its label is replaced by the null class with
// probability cond_dropout (needed for the unconditional CFG pass).

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <memory>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/ar_core.hpp"
#include "checkerboard/sampler.hpp"
#include "checkerboard/synthetic.hpp"

namespace checkerboard {

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  double lr = 1e-4;
  // Step decay: lr is multiplied by lr_drop_factor once per entry of lr_drops
  // (fractions of the run) already passed; two drops of sqrt(0.1) end at lr/10.
  std::vector<double> lr_drops{0.9, 0.95};
  double lr_drop_factor = 0.31622776601683794;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  double cond_dropout = 0.1;
  std::vector<int> p_candidates{1, 2, 4, 8, 16};
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only the final checkpoint

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("train config: " + m); };
    if (steps < 0) fail("steps must be >= 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (!(lr > 0)) fail("lr must be > 0");
    if (weight_decay < 0) fail("weight_decay must be >= 0");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) fail("betas must be in [0, 1)");
    if (cond_dropout < 0 || cond_dropout > 1) fail("cond_dropout must be in [0, 1]");
    if (p_candidates.empty()) fail("p_candidates must not be empty");
    for (int p : p_candidates)
      if (p < 1) fail("p_candidates entries must be >= 1");
    if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
    for (double f : lr_drops)
      if (!(f > 0 && f < 1)) fail("lr_drops entries must be in (0, 1)");
    if (!(lr_drop_factor > 0 && lr_drop_factor <= 1)) fail("lr_drop_factor must be in (0, 1]");
  }

  // Learning rate for 1-based optimizer step `step`.
  double lr_at(int step) const {
    double r = lr;
    for (double f : lr_drops)
      if (step > f * steps) r *= lr_drop_factor;
    return r;
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"steps", c.steps},
                     {"batch_size", c.batch_size},
                     {"lr", c.lr},
                     {"lr_drops", c.lr_drops},
                     {"lr_drop_factor", c.lr_drop_factor},
                     {"weight_decay", c.weight_decay},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"eps", c.eps},
                     {"grad_clip", c.grad_clip},
                     {"cond_dropout", c.cond_dropout},
                     {"p_candidates", c.p_candidates},
                     {"seed", c.seed},
                     {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& where = "train.") {
  using detail::optional_field;
  using detail::require;
  TrainConfig c;
  c.steps = require<int>(j, "steps", where);
  c.batch_size = optional_field<int>(j, "batch_size", c.batch_size, where);
  c.lr = optional_field<double>(j, "lr", c.lr, where);
  c.lr_drops = optional_field<std::vector<double>>(j, "lr_drops", c.lr_drops, where);
  c.lr_drop_factor = optional_field<double>(j, "lr_drop_factor", c.lr_drop_factor, where);
  c.weight_decay = optional_field<double>(j, "weight_decay", c.weight_decay, where);
  c.beta1 = optional_field<double>(j, "beta1", c.beta1, where);
  c.beta2 = optional_field<double>(j, "beta2", c.beta2, where);
  c.eps = optional_field<double>(j, "eps", c.eps, where);
  c.grad_clip = optional_field<double>(j, "grad_clip", c.grad_clip, where);
  c.cond_dropout = optional_field<double>(j, "cond_dropout", c.cond_dropout, where);
  c.p_candidates = optional_field<std::vector<int>>(j, "p_candidates", c.p_candidates, where);
  c.seed = optional_field<std::uint64_t>(j, "seed", c.seed, where);
  c.checkpoint_every = optional_field<int>(j, "checkpoint_every", c.checkpoint_every, where);
  c.validate();
  return c;
}

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, double loss, double limit)
      : std::runtime_error(make_message(step, loss, limit)), step_(step), loss_(loss) {}
  int step() const { return step_; }
  double loss() const { return loss_; }

 private:
  static std::string make_message(int step, double loss, double limit) {
    std::ostringstream os;
    os << "training diverged at step " << step << ": loss " << loss << " exceeds limit " << limit
       << " (10 ln V); lower lr or tighten grad_clip";
    return os.str();
  }
  int step_;
  double loss_;
};

struct Example {
  TokenGrid grid;  // finest scale
  int label = 0;
};

// Called once per example with the trainer's generator; must be deterministic
// given the generator state.
using DataSource = std::function<Example(std::mt19937_64&)>;

inline DataSource dataset_source(std::vector<Example> data) {
  if (data.empty()) throw std::invalid_argument("dataset_source: empty dataset");
  return [data = std::move(data)](std::mt19937_64& rng) { return data[static_cast<std::size_t>(rng() % data.size())]; };
}

// Fresh ground-truth draws with uniformly chosen classes.
inline DataSource distribution_source(const GridDistribution& d) {
  auto sampler = std::make_shared<GroundTruthSampler>(d);
  return [sampler](std::mt19937_64& rng) {
    const int c = static_cast<int>(rng() % static_cast<std::uint64_t>(sampler->distribution().classes()));
    return Example{sampler->draw(c, rng), c};
  };
}

class AdamW {
 public:
  AdamW(const TrainConfig& cfg, const ModelParams& shape) : cfg_(cfg) {
    shape.for_each([&](const Tensor& t) {
      m_.emplace_back(t.numel(), 0.0);
      v_.emplace_back(t.numel(), 0.0);
    });
  }

  int step_count() const { return t_; }

  void step(ModelParams& params, const ModelParams& grads) { step(params, grads, cfg_.lr); }

  void step(ModelParams& params, const ModelParams& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    std::vector<const Tensor*> gs;
    grads.for_each([&](const Tensor& g) { gs.push_back(&g); });
    std::size_t i = 0;
    params.for_each([&](Tensor& p) {
      const Tensor& g = *gs[i];
      auto& m = m_[i];
      auto& v = v_[i];
      const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
      for (std::size_t k = 0; k < p.data.size(); ++k) {
        m[k] = cfg_.beta1 * m[k] + (1 - cfg_.beta1) * g.data[k];
        v[k] = cfg_.beta2 * v[k] + (1 - cfg_.beta2) * g.data[k] * g.data[k];
        p.data[k] -= decay * p.data[k];
        p.data[k] -= lr * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + cfg_.eps);
      }
      ++i;
    });
  }

 private:
  TrainConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

inline double grad_norm(const ModelParams& grads) {
  double s = 0;
  grads.for_each([&](const Tensor& g) {
    for (double x : g.data) s += x * x;
  });
  return std::sqrt(s);
}

inline void scale_grads(ModelParams& grads, double f) {
  grads.for_each([&](Tensor& g) {
    for (double& x : g.data) x *= f;
  });
}

struct LossRecord {
  int step = 0;
  double loss = 0;
  double grad_norm = 0;
};

struct TrainResult {
  ModelParams params;
  std::vector<LossRecord> curve;
};

struct TrainHooks {
  std::function<void(const LossRecord&)> on_step;
  std::function<void(int step, const ModelParams&)> on_checkpoint;
};

inline double divergence_limit(const ModelConfig& c) { return 10.0 * std::log(static_cast<double>(c.vocab)); }

inline TrainResult train(const ModelConfig& config, const TrainConfig& tcfg, const DataSource& data,
                         ModelParams init, const TrainHooks& hooks = {}) {
  config.validate();
  tcfg.validate();
  const ScaleSchedule schedule = config.schedule();
  PlanCache plans(config);
  std::mt19937_64 rng(splitmix64(tcfg.seed ^ 0x747261696eull));
  AdamW opt(tcfg, init);
  ModelParams grads = zero_params(config);
  const double limit = divergence_limit(config);

  TrainResult res{std::move(init), {}};
  res.curve.reserve(static_cast<std::size_t>(tcfg.steps));
  for (int step = 1; step <= tcfg.steps; ++step) {
    grads.for_each([](Tensor& g) { g.zero(); });
    double loss = 0;
    const double w = 1.0 / tcfg.batch_size;
    for (int b = 0; b < tcfg.batch_size; ++b) {
      Example ex = data(rng);
      if (ex.grid.side != config.side)
        throw std::invalid_argument("train: example side " + std::to_string(ex.grid.side) + " != model side " +
                                    std::to_string(config.side));
      const int p = sample_training_P(rng, tcfg.p_candidates);
      const bool dropped = static_cast<double>(rng() >> 11) * 0x1.0p-53 < tcfg.cond_dropout;
      const int label = dropped ? config.null_class() : ex.label;
      const MultiscaleCodes codes = build_pyramid(ex.grid, schedule, config.vocab);
      loss += w * loss_and_grad(config, res.params, plans.get(p), codes, label, grads, w);
    }
    if (!std::isfinite(loss) || loss > limit) throw TrainingDiverged(step, loss, limit);
    const double gn = grad_norm(grads);
    if (tcfg.grad_clip > 0 && gn > tcfg.grad_clip) scale_grads(grads, tcfg.grad_clip / gn);
    opt.step(res.params, grads, tcfg.lr_at(step));
    res.curve.push_back({step, loss, gn});
    if (hooks.on_step) hooks.on_step(res.curve.back());
    if (hooks.on_checkpoint && tcfg.checkpoint_every > 0 && step % tcfg.checkpoint_every == 0 && step != tcfg.steps)
      hooks.on_checkpoint(step, res.params);
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(tcfg.steps, res.params);
  return res;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void write_loss_csv(const std::filesystem::path& path, const std::vector<LossRecord>& curve) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "step,loss,grad_norm\n";
  for (const auto& r : curve) os << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << '\n';
}

// Trailing mean over `window` records, one value per record.
inline std::vector<double> smoothed_loss(const std::vector<LossRecord>& curve, std::size_t window) {
  std::vector<double> out;
  double acc = 0;
  for (std::size_t i = 0; i < curve.size(); ++i) {
    acc += curve[i].loss;
    if (i >= window) acc -= curve[i - window].loss;
    out.push_back(acc / static_cast<double>(std::min(i + 1, window)));
  }
  return out;
}

}  // namespace checkerboard
