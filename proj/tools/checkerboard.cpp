// checkerboard: command-line front end for orders, schedules, masks,
// training, sampling, oracles and experiment runs.
//
// Failures print exactly one line "error: <code>: <message>" to stderr and
// exit nonzero.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "checkerboard/experiment.hpp"

namespace cb = checkerboard;
namespace fs = std::filesystem;

namespace {

struct CliError : std::runtime_error {
  CliError(std::string c, const std::string& m) : std::runtime_error(m), code(std::move(c)) {}
  std::string code;
};

void emit(const std::string& out, const std::string& content) {
  if (out.empty() || out == "-") {
    std::cout << content;
  } else {
    cb::write_file(out, content);
  }
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

// Explicit flag beats CHECKERBOARD_SEED, which beats the config file.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t config_seed) {
  if (flag) return *flag;
  if (auto env = cb::seed_from_env()) return *env;
  return config_seed;
}

cb::ExperimentConfig load_experiment(const std::string& path, const std::optional<std::uint64_t>& seed_flag) {
  cb::ExperimentConfig cfg = cb::experiment_from_json(cb::read_json(path));
  const std::uint64_t seed = resolve_seed(seed_flag, cfg.seed);
  if (seed != cfg.seed) cb::apply_seed(cfg, seed);
  return cfg;
}

void progress(const std::string& m) { std::cerr << m << '\n'; }

// --- order ------------------------------------------------------------------

void cmd_order_gen(int side, int height, int width, const std::string& kind, std::uint64_t seed, const std::string& out) {
  const int h = height ? height : side;
  const int w = width ? width : side;
  if (h < 1 || w < 1) throw std::invalid_argument("order gen: need --side or --height/--width >= 1");
  const cb::OrderKind k = cb::parse_order_kind(kind);
  cb::ScanOrder o;
  if (k == cb::OrderKind::Checkerboard && side && !height && !width) {
    o = cb::generate_order(side);
  } else {
    o = cb::make_order(k, h, w, seed);
  }
  emit(out, o.positions.empty() ? "[]\n" : cb::order_to_json(o).dump() + "\n");
}

int cmd_order_check(const std::string& in) {
  const cb::ScanOrder o = cb::order_from_json(cb::read_json(in));
  bool ok = true;
  std::string first_failure;
  for (const auto& c : cb::check_order(o)) {
    std::cout << (c.ok ? "ok   " : "FAIL ") << c.name << (c.detail.empty() ? "" : ": " + c.detail) << '\n';
    if (!c.ok && first_failure.empty()) first_failure = c.name + (c.detail.empty() ? "" : " (" + c.detail + ")");
    ok = ok && c.ok;
  }
  if (!ok) throw CliError("check-failed", "order invariant violated: " + first_failure);
  return 0;
}

// --- schedule / mask ----------------------------------------------------------

cb::BlockPartition partition_for(const std::string& ratio, int side, int p, const std::string& order, std::uint64_t seed) {
  return cb::partition_blocks(cb::make_schedule(cb::parse_ratio_tag(ratio), side), p, cb::parse_order_kind(order), seed);
}

void cmd_schedule_show(const std::string& ratio, int side, int p, bool as_json, const std::string& order) {
  const cb::BlockPartition part = partition_for(ratio, side, p, order, 0);
  if (as_json) {
    std::cout << cb::partition_to_json(part).dump(1) << '\n';
    return;
  }
  std::cout << "ratio " << ratio << "  side " << side << "  P " << p << '\n';
  std::cout << "scale  size  steps  block sizes\n";
  for (std::size_t s = 0; s < part.blocks.size(); ++s) {
    std::cout << std::setw(5) << s << std::setw(6) << part.schedule.sizes[s] << std::setw(7) << part.steps_per_scale[s] << "  ";
    for (std::size_t b = 0; b < part.blocks[s].size(); ++b) std::cout << (b ? "," : "") << part.blocks[s][b].positions.size();
    std::cout << '\n';
  }
  std::cout << "total steps " << cb::total_steps(part) << '\n';
}

void cmd_mask_dump(const std::string& ratio, int side, int p, std::size_t max_rows, const std::string& out) {
  const cb::BlockPartition part = partition_for(ratio, side, p, "checkerboard", 0);
  const cb::SequenceLayout layout = cb::build_layout(part);
  const cb::BlockCausalMask mask = cb::build_mask(layout);
  emit(out, cb::mask_to_json(layout, mask, max_rows).dump() + "\n");
}

// --- train / sample -------------------------------------------------------------

void cmd_train(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out) {
  const cb::ExperimentConfig cfg = load_experiment(config, seed);
  const std::string cfg_text = cb::experiment_to_json(cfg).dump(1) + "\n";
  cb::ArtifactStore store(out, cb::sha256_hex("train\n" + cfg_text));
  store.put("config.json", cfg_text, "config");
  cb::TrainHooks hooks;
  hooks.on_step = [](const cb::LossRecord& r) {
    if (r.step % 100 == 0) std::cerr << "step " << r.step << " loss " << r.loss << '\n';
  };
  hooks.on_checkpoint = [&](int step, const cb::ModelParams& p) {
    if (step == cfg.train.steps) return;
    std::ostringstream os;
    cb::write_checkpoint(os, cfg.model, p, {{"step", step}});
    store.put("checkpoint_step" + std::to_string(step) + ".bin", os.str(), "train");
  };
  const cb::DerivedSeeds seeds = cb::derive_seeds(cfg.seed);
  cb::TrainResult r =
      cb::train(cfg.model, cfg.train, cb::distribution_source(cfg.distribution), cb::init_params(cfg.model, seeds.init), hooks);
  std::ostringstream loss;
  loss << "step,loss,grad_norm\n";
  for (const auto& rec : r.curve)
    loss << rec.step << ',' << cb::format_double(rec.loss) << ',' << cb::format_double(rec.grad_norm) << '\n';
  std::ostringstream ck;
  cb::write_checkpoint(ck, cfg.model, r.params, {{"step", cfg.train.steps}});
  store.put("loss.csv", loss.str(), "train");
  store.put("checkpoint.bin", ck.str(), "train");
  std::cout << "final loss " << (r.curve.empty() ? 0.0 : r.curve.back().loss) << '\n';
}

struct SampleArgs {
  std::string checkpoint;
  int label = 0;
  int p = 1;
  double cfg = 1.0;
  std::optional<int> warmup;
  double temperature = 1.0;
  std::optional<std::uint64_t> seed;
  int n = 1;
  std::string out, trace;
};

void cmd_sample(const SampleArgs& a) {
  const cb::Checkpoint ck = cb::load_checkpoint(a.checkpoint);
  if (a.n < 1) throw std::invalid_argument("sample: --n must be >= 1");
  const cb::SequencePlan plan = cb::build_plan(ck.config, a.p);
  cb::SamplerConfig sc;
  sc.cfg_scale = a.cfg;
  sc.cfg_warmup = a.warmup;
  sc.temperature = a.temperature;
  sc.seed = resolve_seed(a.seed, 0);
  sc.p = a.p;
  cb::SampleSet set{ck.config.side, ck.config.vocab, a.label, {}};
  std::ostringstream trace;
  trace << "step,scale,block,x,y,token,entropy_nats\n";
  for (int i = 0; i < a.n; ++i) {
    cb::SampleResult r = cb::sample(ck.config, ck.params, plan, a.label, sc, static_cast<std::uint64_t>(i));
    cb::write_trace_csv(trace, r.trace, false);
    set.grids.push_back(std::move(r.grid));
  }
  emit(a.out, (a.n == 1 ? cb::grid_to_json(set.grids.front()) : cb::samples_to_json(set)).dump() + "\n");
  if (!a.trace.empty()) cb::write_file(a.trace, trace.str());
}

// --- oracle -----------------------------------------------------------------

cb::GridDistribution dist_from_flags(const std::string& kind, int side, int vocab, double j, std::vector<double> fields,
                                     int burn_in) {
  cb::GridDistribution d;
  d.kind = cb::parse_dist_kind(kind);
  d.side = side;
  d.vocab = vocab;
  d.coupling = j;
  d.fields = fields.empty() ? std::vector<double>{0.0} : std::move(fields);
  d.burn_in = burn_in;
  d.validate();
  return d;
}

void cmd_oracle_enumerate(const cb::GridDistribution& d, int label, const std::string& out) {
  if (label < 0 || label >= d.classes()) throw std::invalid_argument("oracle enumerate: --class out of range");
  const cb::ProbabilityTable t = cb::enumerate_exact(d, label);
  emit(out, cb::table_to_json(t, d, label).dump() + "\n");
  std::cerr << "states " << t.p.size() << "  log Z " << cb::format_double(t.log_partition) << '\n';
}

void cmd_oracle_eval(const std::string& samples_path, const std::string& table_path, bool patch) {
  const cb::json sj = cb::read_json(samples_path);
  cb::SampleSet set;
  if (sj.contains("grids")) {
    set = cb::samples_from_json(sj);
  } else {
    set.grids.push_back(cb::grid_from_json(sj));
    set.side = set.grids.front().side;
  }
  const cb::ProbabilityTable t = cb::table_from_json(cb::read_json(table_path));
  if (set.side != t.side) throw std::invalid_argument("oracle eval: samples side " + std::to_string(set.side) +
                                                      " != table side " + std::to_string(t.side));
  std::vector<double> ref = patch ? cb::exact_patch_marginal(t) : t.p;
  const cb::DistributionEstimate est =
      patch ? cb::estimate_patches(set.grids, t.vocab) : cb::estimate_full_grid(set.grids, t.side, t.vocab);
  const double tv = cb::tv_distance(est, ref);
  const cb::TvUncertainty u = cb::tv_uncertainty(ref, est.total);
  std::cout << "mode " << (patch ? "patch" : "full") << "\nsamples " << set.grids.size() << "\ntv " << cb::format_double(tv)
            << "\nnoise_tv " << cb::format_double(u.expected_noise_tv) << "\nci95_halfwidth "
            << cb::format_double(u.ci_halfwidth) << '\n';
}

// --- rope -------------------------------------------------------------------

void cmd_rope_inspect(const std::string& checkpoint, int head_dim, int side, int scales) {
  cb::RopeConfig rope;
  std::optional<cb::MixLogits> mix;
  if (!checkpoint.empty()) {
    const cb::Checkpoint ck = cb::load_checkpoint(checkpoint);
    rope = cb::rope_config_of(ck.config, ck.params);
    mix = cb::mix_logits_of(ck.config, ck.params);
  } else {
    rope = cb::make_rope_config(head_dim, side, scales);
  }
  const cb::RopePartition& part = rope.partition;
  std::cout << "head_dim " << part.head_dim << "  pairs x " << part.x_pairs << " y " << part.y_pairs << " scale "
            << part.scale_pairs << '\n';
  std::cout << "pair axis frequency\n";
  const char* names[] = {"x", "y", "scale"};
  for (int j = 0; j < part.pairs(); ++j)
    std::cout << j << ' ' << names[static_cast<int>(part.axis(j))] << ' ' << cb::format_double(rope.frequencies[static_cast<std::size_t>(j)])
              << '\n';
  if (mix) {
    std::cout << "mixing alpha (layer head logit alpha)\n";
    for (int l = 0; l < mix->layers; ++l)
      for (int h = 0; h < mix->heads; ++h)
        std::cout << l << ' ' << h << ' ' << cb::format_double(mix->logit(l, h)) << ' ' << cb::format_double(mix->alpha(l, h))
                  << '\n';
  }
}

// --- experiment / plots ---------------------------------------------------------

void cmd_experiment_run(const std::string& config, const std::optional<std::uint64_t>& seed, const std::string& out) {
  const cb::ExperimentConfig cfg = load_experiment(config, seed);
  const std::string dir = !out.empty() ? out : cfg.output_dir;
  if (dir.empty()) throw std::invalid_argument("missing config field 'output_dir' (or pass --out)");
  const cb::RunSummary s = cb::run_experiment(cfg, dir, progress);
  std::cout << "schedule p total_steps class mode tv noise_tv ci95\n";
  for (const auto& r : s.eval)
    std::cout << r.schedule << ' ' << r.p << ' ' << r.total_steps << ' ' << r.label << ' ' << r.mode << ' '
              << cb::format_double(r.tv) << ' ' << cb::format_double(r.noise_tv) << ' ' << cb::format_double(r.ci_halfwidth)
              << '\n';
  std::cout << "artifacts " << (fs::path(dir) / "manifest.json").string() << '\n';
}

void cmd_plots_emit(const std::string& in, const std::string& out) {
  for (const auto& p : cb::emit_plots(in, out.empty() ? in : out).written) std::cout << p.string() << '\n';
}

std::string classify(const std::exception& e) {
  if (dynamic_cast<const cb::TrainingDiverged*>(&e)) return "diverged";
  if (dynamic_cast<const cb::NumericFailure*>(&e)) return "numeric-failure";
  if (dynamic_cast<const cb::StateSpaceTooLarge*>(&e)) return "state-space-too-large";
  if (dynamic_cast<const cb::ArtifactConflict*>(&e)) return "artifact-conflict";
  if (dynamic_cast<const cb::InvalidState*>(&e)) return "invalid-state";
  if (dynamic_cast<const std::invalid_argument*>(&e)) return "invalid-argument";
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return "io";
  if (dynamic_cast<const std::runtime_error*>(&e)) return "runtime";
  return "internal";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Progressive checkerboard multiscale autoregression toolkit"};
  app.require_subcommand(1);

  // order
  auto* order = app.add_subcommand("order", "scan orders")->require_subcommand(1);
  int o_side = 0, o_h = 0, o_w = 0;
  std::string o_kind = "checkerboard", o_out, o_in;
  std::uint64_t o_seed = 0;
  auto* order_gen = order->add_subcommand("gen", "generate an order as a JSON array of [x, y]");
  order_gen->add_option("--side", o_side, "power-of-two side");
  order_gen->add_option("--height", o_h, "restrict to height");
  order_gen->add_option("--width", o_w, "restrict to width");
  order_gen->add_option("--kind", o_kind, "checkerboard | raster | random");
  order_gen->add_option("--seed", o_seed, "seed for random orders");
  order_gen->add_option("--out", o_out, "output file (default stdout)");
  auto* order_check = order->add_subcommand("check", "verify order invariants");
  order_check->add_option("--in", o_in, "order JSON")->required();

  // schedule / mask
  std::string s_ratio = "x2", s_order = "checkerboard", m_out;
  int s_side = 16, s_p = 4;
  std::size_t m_rows = 512;
  bool s_json = false;
  auto* schedule = app.add_subcommand("schedule", "scale schedules")->require_subcommand(1);
  auto* schedule_show = schedule->add_subcommand("show", "print scale sizes and block partition");
  schedule_show->add_option("--ratio", s_ratio, "sqrt2 | x2 | x3 | x4 | single");
  schedule_show->add_option("--side", s_side, "final side");
  schedule_show->add_option("--p", s_p, "blocks per scale");
  schedule_show->add_option("--order", s_order, "checkerboard | raster | random");
  schedule_show->add_flag("--json", s_json, "emit JSON");
  auto* mask = app.add_subcommand("mask", "block-causal masks")->require_subcommand(1);
  auto* mask_dump = mask->add_subcommand("dump", "write the mask as JSON");
  mask_dump->add_option("--ratio", s_ratio);
  mask_dump->add_option("--side", s_side);
  mask_dump->add_option("--p", s_p);
  mask_dump->add_option("--max-rows", m_rows, "emit explicit rows up to this length");
  mask_dump->add_option("--out", m_out, "output file (default stdout)");

  // train
  std::string t_config, t_out;
  std::optional<std::uint64_t> t_seed;
  auto* train = app.add_subcommand("train", "train a model on a synthetic distribution");
  train->add_option("--config", t_config, "experiment JSON")->required();
  train->add_option("--seed", t_seed, "overrides config and CHECKERBOARD_SEED");
  train->add_option("--out", t_out, "output directory")->required();

  // sample
  SampleArgs sa;
  auto* samp = app.add_subcommand("sample", "sample grids from a checkpoint");
  samp->add_option("--checkpoint", sa.checkpoint)->required();
  samp->add_option("--class", sa.label, "class label (classes = unconditional)");
  samp->add_option("--p", sa.p, "blocks per scale");
  samp->add_option("--cfg", sa.cfg, "guidance scale");
  samp->add_option("--warmup", sa.warmup, "steps without guidance (default: scales of side <= 2)");
  samp->add_option("--temperature", sa.temperature);
  samp->add_option("--seed", sa.seed);
  samp->add_option("--n", sa.n, "number of samples");
  samp->add_option("--out", sa.out, "grid JSON (default stdout)");
  samp->add_option("--trace", sa.trace, "trace CSV");

  // oracle
  std::string d_kind = "ising", d_out, e_samples, e_table;
  int d_side = 3, d_vocab = 2, d_class = 0, d_burn = 200;
  double d_j = 0.0;
  std::vector<double> d_fields;
  bool e_patch = false;
  auto* oracle = app.add_subcommand("oracle", "synthetic distributions")->require_subcommand(1);
  auto* enumerate = oracle->add_subcommand("enumerate", "exact probability table");
  enumerate->add_option("--kind", d_kind, "independent | ising | patchwork");
  enumerate->add_option("--side", d_side);
  enumerate->add_option("--vocab", d_vocab);
  enumerate->add_option("--j", d_j, "coupling");
  enumerate->add_option("--fields", d_fields, "external field per class")->delimiter(',');
  enumerate->add_option("--class", d_class);
  enumerate->add_option("--out", d_out, "output file (default stdout)");
  auto* oeval = oracle->add_subcommand("eval", "TV distance of samples against a table");
  oeval->add_option("--samples", e_samples)->required();
  oeval->add_option("--table", e_table)->required();
  oeval->add_flag("--patch", e_patch, "compare pooled 2x2 patch marginals");

  // rope
  std::string r_ck;
  int r_hd = 32, r_side = 16, r_scales = 5;
  auto* rope = app.add_subcommand("rope", "rotary encodings")->require_subcommand(1);
  auto* rope_inspect = rope->add_subcommand("inspect", "frequencies and mixing weights");
  rope_inspect->add_option("--checkpoint", r_ck, "read learned values from a checkpoint");
  rope_inspect->add_option("--head-dim", r_hd);
  rope_inspect->add_option("--side", r_side);
  rope_inspect->add_option("--scales", r_scales);

  // experiment / plots
  std::string x_config, x_out, p_in, p_out;
  std::optional<std::uint64_t> x_seed;
  auto* experiment = app.add_subcommand("experiment", "end-to-end runs")->require_subcommand(1);
  auto* run = experiment->add_subcommand("run", "train, sample, evaluate; writes a hashed manifest");
  run->add_option("--config", x_config)->required();
  run->add_option("--seed", x_seed);
  run->add_option("--out", x_out, "overrides output_dir");
  auto* plots = app.add_subcommand("plots", "plot data")->require_subcommand(1);
  auto* emit_cmd = plots->add_subcommand("emit", "write gnuplot data files");
  emit_cmd->add_option("--in", p_in, "results directory")->required();
  emit_cmd->add_option("--out", p_out, "output directory (default: --in)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    if (order_gen->parsed()) cmd_order_gen(o_side, o_h, o_w, o_kind, o_seed, o_out);
    else if (order_check->parsed()) cmd_order_check(o_in);
    else if (schedule_show->parsed()) cmd_schedule_show(s_ratio, s_side, s_p, s_json, s_order);
    else if (mask_dump->parsed()) cmd_mask_dump(s_ratio, s_side, s_p, m_rows, m_out);
    else if (train->parsed()) cmd_train(t_config, t_seed, t_out);
    else if (samp->parsed()) cmd_sample(sa);
    else if (enumerate->parsed()) cmd_oracle_enumerate(dist_from_flags(d_kind, d_side, d_vocab, d_j, d_fields, d_burn), d_class, d_out);
    else if (oeval->parsed()) cmd_oracle_eval(e_samples, e_table, e_patch);
    else if (rope_inspect->parsed()) cmd_rope_inspect(r_ck, r_hd, r_side, r_scales);
    else if (run->parsed()) cmd_experiment_run(x_config, x_seed, x_out);
    else if (emit_cmd->parsed()) cmd_plots_emit(p_in, p_out);
  } catch (const CliError& e) {
    std::cerr << "error: " << e.code << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << classify(e) << ": " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}
