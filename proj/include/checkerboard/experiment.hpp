#pragma once

// Experiment configs, oracle evaluation, artifact manifests and plot data.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "checkerboard/io.hpp"

namespace checkerboard {

// Largest state space evaluated with full-grid TV; bigger grids use pooled
// 2x2 patch marginals.
inline constexpr double kFullGridTvStates = 512;
// Largest state space whose exact patch marginal is computed by enumeration.
inline constexpr double kExactPatchStates = 1 << 20;

struct EvalConfig {
  std::vector<int> p_values{1, 2, 4};
  int samples_per_class = 1000;
  int reference_samples = 20000;  // ground-truth draws when no exact table exists
  int trace_samples = 16;         // samples per (P, class) written to the trace CSV
  int entropy_p = 0;              // P whose entropy aggregate feeds entropy_by_step.dat; 0 = first

  friend bool operator==(const EvalConfig&, const EvalConfig&) = default;

  void validate() const {
    if (p_values.empty()) throw std::invalid_argument("eval config: p_values must not be empty");
    for (int p : p_values)
      if (p < 1) throw std::invalid_argument("eval config: p_values entries must be >= 1");
    if (samples_per_class < 1 || reference_samples < 1 || trace_samples < 0)
      throw std::invalid_argument("eval config: sample counts must be positive");
    if (entropy_p != 0 && std::find(p_values.begin(), p_values.end(), entropy_p) == p_values.end())
      throw std::invalid_argument("eval config: entropy_p " + std::to_string(entropy_p) + " is not in p_values");
  }
};

struct ExperimentConfig {
  std::string name = "experiment";
  RatioTag schedule = RatioTag::X2;
  int side = 4;
  std::vector<int> p_candidates{1, 2, 4, 8, 16};
  std::uint64_t seed = 0;
  std::string output_dir;
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  GridDistribution distribution;
  EvalConfig eval;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("experiment config: " + m); };
    if (model.side != side || model.ratio != schedule) fail("model side/ratio must match the experiment schedule");
    if (distribution.side != side)
      fail("distribution.side " + std::to_string(distribution.side) + " != side " + std::to_string(side));
    if (distribution.vocab != model.vocab)
      fail("distribution.vocab " + std::to_string(distribution.vocab) + " != model.vocab " + std::to_string(model.vocab));
    if (distribution.classes() != model.classes)
      fail("distribution has " + std::to_string(distribution.classes()) + " class fields but model.classes is " +
           std::to_string(model.classes));
    if (train.p_candidates != p_candidates) fail("train.p_candidates must equal p_candidates");
    model.validate();
    train.validate();
    sampler.validate();
    distribution.validate();
    eval.validate();
  }
};

// Independent seed streams derived from the single experiment seed.
// Training itself uses train.seed, which defaults to the experiment seed.
struct DerivedSeeds {
  std::uint64_t init, sample, reference;
};

inline DerivedSeeds derive_seeds(std::uint64_t base) {
  return {splitmix64(base ^ 0x1001), splitmix64(base ^ 0x3003), splitmix64(base ^ 0x4004)};
}

inline json sampler_to_json(const SamplerConfig& s) {
  json j{{"cfg_scale", s.cfg_scale}, {"temperature", s.temperature}, {"seed", s.seed}, {"p", s.p}};
  j["cfg_warmup"] = s.cfg_warmup ? json(*s.cfg_warmup) : json(nullptr);
  return j;
}

inline SamplerConfig sampler_from_json(const json& j, const std::string& where = "sampler.") {
  SamplerConfig s;
  s.cfg_scale = detail::optional_field<double>(j, "cfg_scale", s.cfg_scale, where);
  s.temperature = detail::optional_field<double>(j, "temperature", s.temperature, where);
  s.seed = detail::optional_field<std::uint64_t>(j, "seed", s.seed, where);
  s.p = detail::optional_field<int>(j, "p", s.p, where);
  if (j.contains("cfg_warmup") && !j.at("cfg_warmup").is_null())
    s.cfg_warmup = detail::require<int>(j, "cfg_warmup", where);
  s.validate();
  return s;
}

inline json eval_to_json(const EvalConfig& e) {
  return {{"p_values", e.p_values},
          {"samples_per_class", e.samples_per_class},
          {"reference_samples", e.reference_samples},
          {"trace_samples", e.trace_samples},
          {"entropy_p", e.entropy_p}};
}

inline EvalConfig eval_from_json(const json& j, const std::string& where = "eval.") {
  EvalConfig e;
  e.p_values = detail::require<std::vector<int>>(j, "p_values", where);
  e.samples_per_class = detail::optional_field<int>(j, "samples_per_class", e.samples_per_class, where);
  e.reference_samples = detail::optional_field<int>(j, "reference_samples", e.reference_samples, where);
  e.trace_samples = detail::optional_field<int>(j, "trace_samples", e.trace_samples, where);
  e.entropy_p = detail::optional_field<int>(j, "entropy_p", e.entropy_p, where);
  e.validate();
  return e;
}

inline json experiment_to_json(const ExperimentConfig& c) {
  json model;
  to_json(model, c.model);
  json tr;
  to_json(tr, c.train);
  json dist;
  to_json(dist, c.distribution);
  return {{"name", c.name},
          {"schedule", to_string(c.schedule)},
          {"side", c.side},
          {"p_candidates", c.p_candidates},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"model", model},
          {"train", tr},
          {"sampler", sampler_to_json(c.sampler)},
          {"distribution", dist},
          {"eval", eval_to_json(c.eval)}};
}

// Nested sections inherit side / schedule / P candidates / seed from the top
// level when they omit them; explicit values must agree.
inline ExperimentConfig experiment_from_json(const json& j) {
  using detail::optional_field;
  using detail::require;
  ExperimentConfig c;
  c.name = optional_field<std::string>(j, "name", c.name, "");
  c.schedule = parse_ratio_tag(require<std::string>(j, "schedule", ""));
  c.side = require<int>(j, "side", "");
  c.p_candidates = require<std::vector<int>>(j, "p_candidates", "");
  c.seed = require<std::uint64_t>(j, "seed", "");
  c.output_dir = optional_field<std::string>(j, "output_dir", "", "");

  json model = require<json>(j, "model", "");
  if (!model.contains("side")) model["side"] = c.side;
  if (!model.contains("ratio")) model["ratio"] = to_string(c.schedule);
  c.model = model_config_from_json(model);

  json tr = require<json>(j, "train", "");
  if (!tr.contains("p_candidates")) tr["p_candidates"] = c.p_candidates;
  if (!tr.contains("seed")) tr["seed"] = c.seed;
  c.train = train_config_from_json(tr);

  c.sampler = sampler_from_json(optional_field<json>(j, "sampler", json::object(), ""));

  json dist = require<json>(j, "distribution", "");
  if (!dist.contains("side")) dist["side"] = c.side;
  if (!dist.contains("vocab")) dist["vocab"] = c.model.vocab;
  c.distribution = distribution_from_json(dist);

  c.eval = eval_from_json(require<json>(j, "eval", ""));
  c.validate();
  return c;
}

// CHECKERBOARD_SEED, when set, replaces the experiment seed everywhere.
inline std::optional<std::uint64_t> seed_from_env() {
  const char* v = std::getenv("CHECKERBOARD_SEED");
  if (!v || !*v) return std::nullopt;
  std::size_t used = 0;
  unsigned long long s = 0;
  try {
    s = std::stoull(v, &used, 10);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != std::string(v).size()) throw std::invalid_argument(std::string("CHECKERBOARD_SEED is not an unsigned integer: ") + v);
  return static_cast<std::uint64_t>(s);
}

inline void apply_seed(ExperimentConfig& c, std::uint64_t seed) {
  c.seed = seed;
  c.train.seed = seed;
}

// --- evaluation -------------------------------------------------------------

struct EvalRow {
  std::string schedule;
  int p = 0;
  int total_steps = 0;
  std::vector<int> steps_per_scale;
  int label = 0;
  std::string mode;  // "full" or "patch"
  double tv = 0;
  double noise_tv = 0;
  double ci_halfwidth = 0;
  std::size_t samples = 0;
};

// Reference distribution for one class: full table, exact patch marginal, or
// a patch estimate from ground-truth draws when nothing is enumerable.
struct Reference {
  std::string mode;
  std::vector<double> p;
  std::uint64_t reference_draws = 0;  // 0 when exact
};

inline Reference make_reference(const GridDistribution& d, int label, std::uint64_t seed, std::size_t draws) {
  const double states = d.state_count();
  if (states <= kFullGridTvStates) return {"full", enumerate_exact(d, label).p, 0};
  if (states <= kExactPatchStates) return {"patch", exact_patch_marginal(enumerate_exact(d, label)), 0};
  const auto grids = sample_ground_truth(d, label, splitmix64(seed ^ static_cast<std::uint64_t>(label)), draws);
  return {"patch", to_frequencies(estimate_patches(grids, d.vocab)), draws};
}

inline EvalRow evaluate_samples(const std::vector<TokenGrid>& grids, const GridDistribution& d, const Reference& ref) {
  EvalRow row;
  row.mode = ref.mode;
  row.samples = grids.size();
  const DistributionEstimate est =
      ref.mode == "full" ? estimate_full_grid(grids, d.side, d.vocab) : estimate_patches(grids, d.vocab);
  row.tv = tv_distance(est, ref.p);
  TvUncertainty u = tv_uncertainty(ref.p, est.total);
  if (ref.reference_draws) {
    const std::uint64_t patches = ref.reference_draws * static_cast<std::uint64_t>((d.side - 1) * (d.side - 1));
    const TvUncertainty r = tv_uncertainty(ref.p, patches);
    u.expected_noise_tv += r.expected_noise_tv;
    u.ci_halfwidth += r.ci_halfwidth;
  }
  row.noise_tv = u.expected_noise_tv;
  row.ci_halfwidth = u.ci_halfwidth;
  return row;
}

inline std::string steps_string(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "-" : "") + std::to_string(v[i]);
  return s;
}

inline std::string eval_csv(const std::vector<EvalRow>& rows) {
  std::ostringstream os;
  os << "schedule,p,total_steps,steps_per_scale,class,mode,tv,noise_tv,ci_halfwidth,samples\n";
  for (const EvalRow& r : rows)
    os << r.schedule << ',' << r.p << ',' << r.total_steps << ',' << steps_string(r.steps_per_scale) << ',' << r.label
       << ',' << r.mode << ',' << format_double(r.tv) << ',' << format_double(r.noise_tv) << ','
       << format_double(r.ci_halfwidth) << ',' << r.samples << '\n';
  return os.str();
}

// One trained model evaluated under one sampling configuration.
struct AblationEntry {
  std::string label;  // e.g. "checkerboard", "raster", "random"
  ModelConfig config;
  const ModelParams* params = nullptr;
  int p = 1;
};

struct AblationRow {
  std::string label;
  std::string order;
  std::string schedule;
  int p = 0;
  int total_steps = 0;
  double tv = 0;  // mean over classes
  double noise_tv = 0;
  double ci_halfwidth = 0;
  std::string mode;
};

// TV per ordering / step count against the oracle; classes are averaged.
inline std::vector<AblationRow> order_ablation(const std::vector<AblationEntry>& entries, const GridDistribution& d,
                                               const SamplerConfig& base, std::size_t samples_per_class,
                                               std::uint64_t reference_seed, std::size_t reference_draws) {
  std::vector<Reference> refs;
  for (int c = 0; c < d.classes(); ++c) refs.push_back(make_reference(d, c, reference_seed, reference_draws));
  std::vector<AblationRow> rows;
  for (const AblationEntry& e : entries) {
    if (!e.params) throw std::invalid_argument("order_ablation: entry '" + e.label + "' has no parameters");
    const SequencePlan plan = build_plan(e.config, e.p);
    SamplerConfig sc = base;
    sc.p = e.p;
    AblationRow row;
    row.label = e.label;
    row.order = to_string(e.config.order);
    row.schedule = to_string(e.config.ratio);
    row.p = e.p;
    row.total_steps = total_steps(plan.partition);
    for (int c = 0; c < d.classes(); ++c) {
      std::vector<TokenGrid> grids;
      grids.reserve(samples_per_class);
      for (std::size_t i = 0; i < samples_per_class; ++i)
        grids.push_back(sample(e.config, *e.params, plan, c, sc, (static_cast<std::uint64_t>(c) << 32) | i).grid);
      const EvalRow er = evaluate_samples(grids, d, refs[static_cast<std::size_t>(c)]);
      row.tv += er.tv / d.classes();
      row.noise_tv += er.noise_tv / d.classes();
      row.ci_halfwidth += er.ci_halfwidth / d.classes();
      row.mode = er.mode;
    }
    rows.push_back(row);
  }
  return rows;
}

inline std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "label,order,schedule,p,total_steps,mode,tv,noise_tv,ci_halfwidth\n";
  for (const AblationRow& r : rows)
    os << r.label << ',' << r.order << ',' << r.schedule << ',' << r.p << ',' << r.total_steps << ',' << r.mode << ','
       << format_double(r.tv) << ',' << format_double(r.noise_tv) << ',' << format_double(r.ci_halfwidth) << '\n';
  return os.str();
}

// --- artifact store -----------------------------------------------------------

class ArtifactConflict : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Append-only artifact directory. Every write is hashed into manifest.json,
// which is rewritten after each artifact so an interrupted run can resume.
class ArtifactStore {
 public:
  ArtifactStore(std::filesystem::path dir, const std::string& config_hash) : dir_(std::move(dir)) {
    std::filesystem::create_directories(dir_);
    const auto mpath = dir_ / "manifest.json";
    if (std::filesystem::exists(mpath)) {
      manifest_ = read_json(mpath);
      const std::string prev = manifest_.value("config_sha256", "");
      if (prev != config_hash)
        throw ArtifactConflict("output directory " + dir_.string() +
                               " holds a run with a different config; choose a fresh directory");
    } else {
      manifest_ = {{"config_sha256", config_hash}, {"artifacts", json::array()}};
    }
  }

  const std::filesystem::path& dir() const { return dir_; }
  const json& manifest() const { return manifest_; }

  // True when the artifact is recorded and its file still matches the hash.
  bool valid(const std::string& rel) const {
    const json* e = find(rel);
    if (!e) return false;
    const auto path = dir_ / rel;
    return std::filesystem::exists(path) && sha256_file(path) == e->at("sha256").get<std::string>();
  }

  bool all_valid(const std::vector<std::string>& rels) const {
    for (const auto& r : rels)
      if (!valid(r)) return false;
    return true;
  }

  void put(const std::string& rel, const std::string& content, const std::string& stage) {
    const std::string hash = sha256_hex(content);
    const auto path = dir_ / rel;
    if (std::filesystem::exists(path)) {
      if (sha256_file(path) != hash)
        throw ArtifactConflict("refusing to overwrite " + path.string() + " with different content (append-only)");
    } else {
      write_file(path, content);
    }
    if (json* e = find(rel)) {
      (*e)["sha256"] = hash;
      (*e)["bytes"] = content.size();
    } else {
      manifest_["artifacts"].push_back({{"path", rel}, {"stage", stage}, {"sha256", hash}, {"bytes", content.size()}});
    }
    write_json(dir_ / "manifest.json", manifest_);
  }

 private:
  const json* find(const std::string& rel) const {
    for (const json& e : manifest_.at("artifacts"))
      if (e.at("path") == rel) return &e;
    return nullptr;
  }
  json* find(const std::string& rel) {
    for (json& e : manifest_["artifacts"])
      if (e.at("path") == rel) return &e;
    return nullptr;
  }

  std::filesystem::path dir_;
  json manifest_;
};

// --- plots ------------------------------------------------------------------

struct PlotFiles {
  std::vector<std::filesystem::path> written;
};

inline std::vector<std::filesystem::path> find_eval_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (std::filesystem::exists(root / "eval.csv")) dirs.push_back(root);
  if (std::filesystem::is_directory(root))
    for (const auto& e : std::filesystem::directory_iterator(root))
      if (e.is_directory() && std::filesystem::exists(e.path() / "eval.csv")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

// Builds the gnuplot data file contents from the runs under `root`. Series
// are separated by two blank lines (gnuplot `index`).
inline std::map<std::string, std::string> plot_data(const std::filesystem::path& root) {
  const auto dirs = find_eval_dirs(root);
  if (dirs.empty()) throw std::invalid_argument("plots: no eval.csv under " + root.string());
  // schedule -> x -> (sum tv, count)
  std::map<std::string, std::map<int, std::pair<double, int>>> by_total, by_per_scale;
  for (const auto& dir : dirs) {
    const CsvTable t = read_csv(dir / "eval.csv");
    const auto cs = t.column("schedule"), cp = t.column("p"), ct = t.column("total_steps"), cv = t.column("tv");
    for (const auto& r : t.rows) {
      auto& a = by_total[r[cs]][std::stoi(r[ct])];
      a.first += std::stod(r[cv]);
      ++a.second;
      auto& b = by_per_scale[r[cs]][std::stoi(r[cp])];
      b.first += std::stod(r[cv]);
      ++b.second;
    }
  }
  auto series = [](const std::map<std::string, std::map<int, std::pair<double, int>>>& m, const std::string& xname) {
    std::ostringstream os;
    bool first = true;
    for (const auto& [tag, pts] : m) {
      if (!first) os << "\n\n";
      first = false;
      os << "# schedule " << tag << "\n# " << xname << " tv\n";
      for (const auto& [x, acc] : pts) os << x << ' ' << format_double(acc.first / acc.second) << '\n';
    }
    return os.str();
  };
  std::map<std::string, std::string> files;
  files["tv_vs_total_steps.dat"] = series(by_total, "total_steps");
  files["tv_vs_steps_per_scale.dat"] = series(by_per_scale, "steps_per_scale");

  // Entropy aggregate of the first run (sorted by path); one row per step.
  const auto& dir = dirs.front();
  std::filesystem::path entropy;
  if (std::filesystem::exists(dir / "entropy.csv")) entropy = dir / "entropy.csv";
  if (!entropy.empty()) {
    const CsvTable t = read_csv(entropy);
    std::ostringstream os;
    const auto s = t.column("step"), m = t.column("mean"), a = t.column("p25"), b = t.column("p75");
    for (const auto& r : t.rows) os << r[s] << ' ' << r[m] << ' ' << r[a] << ' ' << r[b] << '\n';
    files["entropy_by_step.dat"] = os.str();
  }
  return files;
}

inline PlotFiles emit_plots(const std::filesystem::path& root, const std::filesystem::path& out_dir) {
  PlotFiles pf;
  for (const auto& [name, content] : plot_data(root)) {
    write_file(out_dir / name, content);
    pf.written.push_back(out_dir / name);
  }
  return pf;
}

// --- run ----------------------------------------------------------------------

struct RunSummary {
  std::filesystem::path dir;
  std::vector<EvalRow> eval;
  bool trained = false;  // false when training was resumed from a valid checkpoint
};

using ProgressFn = std::function<void(const std::string&)>;

inline RunSummary run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                 const ProgressFn& progress = {}) {
  cfg.validate();
  auto note = [&](const std::string& m) {
    if (progress) progress(m);
  };
  const std::string config_text = experiment_to_json(cfg).dump(1) + "\n";
  ArtifactStore store(out_dir, sha256_hex(config_text));
  store.put("config.json", config_text, "config");
  const DerivedSeeds seeds = derive_seeds(cfg.seed);

  // Structural artifacts.
  const ScanOrder order = make_order(cfg.model.order, cfg.side, cfg.side, cfg.model.order_seed);
  store.put("order.json", order_to_json(order).dump() + "\n", "structure");
  {
    json schedules = json::array();
    for (int p : cfg.eval.p_values) schedules.push_back(partition_to_json(build_plan(cfg.model, p).partition));
    store.put("schedule.json", schedules.dump(1) + "\n", "structure");
    const SequencePlan plan = build_plan(cfg.model, cfg.eval.p_values.front());
    store.put("mask.json", mask_to_json(plan.layout, plan.mask).dump() + "\n", "structure");
  }

  // Training, skipped when a verified checkpoint exists.
  ModelParams params;
  RunSummary summary{out_dir, {}, false};
  if (store.all_valid({"checkpoint.bin", "loss.csv"})) {
    note("resume: reusing checkpoint.bin");
    std::istringstream is(read_file(out_dir / "checkpoint.bin"));
    params = read_checkpoint(is).params;
  } else {
    note("train: " + std::to_string(cfg.train.steps) + " steps");
    TrainHooks hooks;
    hooks.on_checkpoint = [&](int step, const ModelParams& p) {
      if (step == cfg.train.steps) return;
      std::ostringstream os;
      write_checkpoint(os, cfg.model, p, {{"step", step}});
      store.put("checkpoint_step" + std::to_string(step) + ".bin", os.str(), "train");
    };
    hooks.on_step = [&](const LossRecord& r) {
      if (r.step % 100 == 0) note("train step " + std::to_string(r.step) + " loss " + format_double(r.loss));
    };
    TrainResult tr = train(cfg.model, cfg.train, distribution_source(cfg.distribution), init_params(cfg.model, seeds.init), hooks);
    std::ostringstream loss;
    loss << "step,loss,grad_norm\n";
    for (const auto& r : tr.curve) loss << r.step << ',' << format_double(r.loss) << ',' << format_double(r.grad_norm) << '\n';
    std::ostringstream ck;
    write_checkpoint(ck, cfg.model, tr.params, {{"step", cfg.train.steps}});
    store.put("loss.csv", loss.str(), "train");
    store.put("checkpoint.bin", ck.str(), "train");
    params = std::move(tr.params);
    summary.trained = true;
  }

  // Sampling and evaluation per P.
  std::vector<Reference> refs;
  for (int c = 0; c < cfg.distribution.classes(); ++c)
    refs.push_back(make_reference(cfg.distribution, c, seeds.reference, static_cast<std::size_t>(cfg.eval.reference_samples)));
  const int entropy_p = cfg.eval.entropy_p ? cfg.eval.entropy_p : cfg.eval.p_values.front();
  for (int p : cfg.eval.p_values) {
    const std::string tag = "p" + std::to_string(p);
    const SequencePlan plan = build_plan(cfg.model, p);
    SamplerConfig sc = cfg.sampler;
    sc.p = p;
    sc.seed = seeds.sample;
    json samples = json::array();
    std::ostringstream trace_csv;
    trace_csv << "class,sample,step,scale,block,x,y,token,entropy_nats\n";
    std::vector<SampleTrace> traces;
    for (int c = 0; c < cfg.distribution.classes(); ++c) {
      note("sample P=" + std::to_string(p) + " class " + std::to_string(c));
      SampleSet set{cfg.side, cfg.model.vocab, c, {}};
      for (int i = 0; i < cfg.eval.samples_per_class; ++i) {
        SampleResult r = sample(cfg.model, params, plan, c, sc, (static_cast<std::uint64_t>(c) << 32) | static_cast<std::uint64_t>(i));
        if (i < cfg.eval.trace_samples) {
          std::ostringstream one;
          write_trace_csv(one, r.trace, false);
          std::istringstream lines(one.str());
          for (std::string line; std::getline(lines, line);) trace_csv << c << ',' << i << ',' << line << '\n';
        }
        traces.push_back(std::move(r.trace));
        set.grids.push_back(std::move(r.grid));
      }
      EvalRow row = evaluate_samples(set.grids, cfg.distribution, refs[static_cast<std::size_t>(c)]);
      row.schedule = to_string(cfg.schedule);
      row.p = p;
      row.total_steps = total_steps(plan.partition);
      row.steps_per_scale = plan.partition.steps_per_scale;
      row.label = c;
      summary.eval.push_back(row);
      samples.push_back(samples_to_json(set));
    }
    const std::string entropy = entropy_csv(entropy_trace(traces));
    store.put("samples_" + tag + ".json", samples.dump() + "\n", "sample");
    store.put("trace_" + tag + ".csv", trace_csv.str(), "sample");
    store.put("entropy_" + tag + ".csv", entropy, "sample");
    if (p == entropy_p) store.put("entropy.csv", entropy, "sample");
  }
  store.put("eval.csv", eval_csv(summary.eval), "eval");

  json report{{"name", cfg.name}, {"schedule", to_string(cfg.schedule)}, {"side", cfg.side},
              {"distribution_kind", to_string(cfg.distribution.kind)},
              {"note", "synthetic surrogate distribution; TV replaces FID"}, {"rows", json::array()}};
  for (const EvalRow& r : summary.eval)
    report["rows"].push_back({{"p", r.p}, {"total_steps", r.total_steps}, {"steps_per_scale", r.steps_per_scale},
                              {"class", r.label}, {"mode", r.mode}, {"tv", r.tv}, {"noise_tv", r.noise_tv},
                              {"ci_halfwidth", r.ci_halfwidth}, {"samples", r.samples}});
  store.put("report.json", report.dump(1) + "\n", "eval");
  for (const auto& [name, content] : plot_data(out_dir)) store.put("plots/" + name, content, "plots");
  return summary;
}

}  // namespace checkerboard
