#pragma once

// Model configuration, learned parameters, initialization and the binary
// checkpoint container.
//
// Checkpoint layout (all integers little-endian):
//   8 bytes   magic "CKBDCKPT"
//   u32       format version (1)
//   u64       length of the config JSON, then the JSON bytes
//   u32       tensor count
//   per tensor: u32 name length, name bytes, u32 rank, u64 dims[rank]
//   raw f64 data for every tensor, in manifest order

#include <array>
#include <bit>
#include <cstdint>
#include <fstream>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/json_fields.hpp"
#include "checkerboard/rope.hpp"
#include "checkerboard/schedule.hpp"
#include "checkerboard/tensor.hpp"
#include "json.hpp"

namespace checkerboard {

struct ModelConfig {
  int layers = 4;
  int width = 128;
  int heads = 4;
  int vocab = 16;
  int classes = 4;
  int mlp_mult = 4;
  int embed_dim = 8;   // token embedding width before the unfold MLP
  int mix_layers = 2;  // leading layers with key-side RoPE mixing
  double init_std = 0.02;
  RatioTag ratio = RatioTag::X2;
  int side = 16;
  OrderKind order = OrderKind::Checkerboard;
  std::uint64_t order_seed = 0;

  int head_dim() const { return width / heads; }
  int mlp_width() const { return width * mlp_mult; }
  int null_class() const { return classes; }
  ScaleSchedule schedule() const { return make_schedule(ratio, side); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;

  void validate() const {
    auto fail = [](const std::string& m) { throw std::invalid_argument("model config: " + m); };
    if (layers < 1 || width < 1 || heads < 1 || classes < 1 || mlp_mult < 1 || embed_dim < 1 || side < 1)
      fail("all dimensions must be positive");
    if (width % heads != 0) fail("width " + std::to_string(width) + " not divisible by heads " + std::to_string(heads));
    if (head_dim() % 2 != 0) fail("head_dim must be even for rotary encodings");
    if (vocab < 2) fail("vocab must be >= 2");
    if (mix_layers < 0 || mix_layers > layers) fail("mix_layers must be in [0, layers]");
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"layers", c.layers},         {"width", c.width},         {"heads", c.heads},
                     {"vocab", c.vocab},           {"classes", c.classes},     {"mlp_mult", c.mlp_mult},
                     {"embed_dim", c.embed_dim},   {"mix_layers", c.mix_layers}, {"init_std", c.init_std},
                     {"ratio", to_string(c.ratio)}, {"side", c.side},          {"order", to_string(c.order)},
                     {"order_seed", c.order_seed}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& where = "model.") {
  using detail::optional_field;
  using detail::require;
  ModelConfig c;
  c.layers = require<int>(j, "layers", where);
  c.width = require<int>(j, "width", where);
  c.heads = require<int>(j, "heads", where);
  c.vocab = require<int>(j, "vocab", where);
  c.classes = require<int>(j, "classes", where);
  c.mlp_mult = optional_field<int>(j, "mlp_mult", c.mlp_mult, where);
  c.embed_dim = optional_field<int>(j, "embed_dim", c.embed_dim, where);
  c.mix_layers = optional_field<int>(j, "mix_layers", std::min(c.mix_layers, c.layers), where);
  c.init_std = optional_field<double>(j, "init_std", c.init_std, where);
  c.ratio = parse_ratio_tag(require<std::string>(j, "ratio", where));
  c.side = require<int>(j, "side", where);
  c.order = parse_order_kind(optional_field<std::string>(j, "order", "checkerboard", where));
  c.order_seed = optional_field<std::uint64_t>(j, "order_seed", 0, where);
  c.validate();
  return c;
}

struct LayerParams {
  Tensor ada_w, ada_b;  // class embedding -> [scale1 | shift1 | scale2 | shift2]
  Tensor wq, wk, wv, wo;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

struct ModelParams {
  Tensor tok_emb;
  Tensor unfold_w1, unfold_b1, unfold_w2, unfold_b2;
  Tensor class_emb;  // classes + 1 rows; the last row is the null (unconditional) class
  Tensor pos_emb;    // one row per (scale, x, y)
  Tensor const_up, const_prev_tok, const_prev_pos;
  Tensor proj_w, proj_b;
  std::vector<LayerParams> layers;
  Tensor final_ada_w, final_ada_b;
  Tensor head_w, head_b;
  Tensor rope_freq;
  Tensor mix_logits;  // [layers, heads]

  template <class F>
  void for_each(F&& f) {
    for_each_impl(*this, f);
  }
  template <class F>
  void for_each(F&& f) const {
    for_each_impl(*this, f);
  }

  std::size_t count() const {
    std::size_t n = 0;
    for_each([&](const Tensor& t) { n += t.numel(); });
    return n;
  }

 private:
  template <class Self, class F>
  static void for_each_impl(Self& p, F& f) {
    f(p.tok_emb);
    f(p.unfold_w1);
    f(p.unfold_b1);
    f(p.unfold_w2);
    f(p.unfold_b2);
    f(p.class_emb);
    f(p.pos_emb);
    f(p.const_up);
    f(p.const_prev_tok);
    f(p.const_prev_pos);
    f(p.proj_w);
    f(p.proj_b);
    for (auto& l : p.layers) {
      f(l.ada_w);
      f(l.ada_b);
      f(l.wq);
      f(l.wk);
      f(l.wv);
      f(l.wo);
      f(l.mlp_w1);
      f(l.mlp_b1);
      f(l.mlp_w2);
      f(l.mlp_b2);
    }
    f(p.final_ada_w);
    f(p.final_ada_b);
    f(p.head_w);
    f(p.head_b);
    f(p.rope_freq);
    f(p.mix_logits);
  }
};

// Row offset of scale s in the position embedding table.
inline std::vector<std::size_t> pos_offsets(const ScaleSchedule& schedule) {
  std::vector<std::size_t> off;
  std::size_t acc = 0;
  for (int side : schedule.sizes) {
    off.push_back(acc);
    acc += static_cast<std::size_t>(side) * side;
  }
  off.push_back(acc);
  return off;
}

inline RopeConfig default_rope(const ModelConfig& c) {
  const ScaleSchedule sched = c.schedule();
  return make_rope_config(c.head_dim(), std::max(1, c.side - 1), std::max<int>(1, static_cast<int>(sched.num_scales()) - 1));
}

// Zero-shaped parameters (also used as gradient buffers).
inline ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  using S = std::vector<std::size_t>;
  const std::size_t D = c.width, V = c.vocab, E = c.embed_dim, M = c.mlp_width();
  ModelParams p;
  p.tok_emb = Tensor("tok_emb", S{V, E}, true);
  p.unfold_w1 = Tensor("unfold_w1", S{D, E}, true);
  p.unfold_b1 = Tensor("unfold_b1", S{D});
  p.unfold_w2 = Tensor("unfold_w2", S{D, D}, true);
  p.unfold_b2 = Tensor("unfold_b2", S{D});
  p.class_emb = Tensor("class_emb", S{static_cast<std::size_t>(c.classes) + 1, D}, true);
  p.pos_emb = Tensor("pos_emb", S{pos_offsets(c.schedule()).back(), D}, true);
  p.const_up = Tensor("const_up", S{D});
  p.const_prev_tok = Tensor("const_prev_tok", S{D});
  p.const_prev_pos = Tensor("const_prev_pos", S{D});
  p.proj_w = Tensor("proj_w", S{D, 4 * D}, true);
  p.proj_b = Tensor("proj_b", S{D});
  for (int l = 0; l < c.layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    LayerParams L;
    L.ada_w = Tensor(pre + "ada_w", S{4 * D, D}, true);
    L.ada_b = Tensor(pre + "ada_b", S{4 * D});
    L.wq = Tensor(pre + "wq", S{D, D}, true);
    L.wk = Tensor(pre + "wk", S{D, D}, true);
    L.wv = Tensor(pre + "wv", S{D, D}, true);
    L.wo = Tensor(pre + "wo", S{D, D}, true);
    L.mlp_w1 = Tensor(pre + "mlp_w1", S{M, D}, true);
    L.mlp_b1 = Tensor(pre + "mlp_b1", S{M});
    L.mlp_w2 = Tensor(pre + "mlp_w2", S{D, M}, true);
    L.mlp_b2 = Tensor(pre + "mlp_b2", S{D});
    p.layers.push_back(std::move(L));
  }
  p.final_ada_w = Tensor("final_ada_w", S{2 * D, D}, true);
  p.final_ada_b = Tensor("final_ada_b", S{2 * D});
  p.head_w = Tensor("head_w", S{V, D}, true);
  p.head_b = Tensor("head_b", S{V});
  p.rope_freq = Tensor("rope_freq", S{static_cast<std::size_t>(make_rope_partition(c.head_dim()).pairs())});
  p.mix_logits = Tensor("mix_logits", S{static_cast<std::size_t>(c.layers), static_cast<std::size_t>(c.heads)});
  return p;
}

// Gaussian init for projections and embeddings; zeros for biases, the
// conditioned-norm generators and the output head (uniform initial softmax).
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed) {
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, c.init_std);
  auto fill = [&](Tensor& t) {
    for (double& v : t.data) v = normal(rng);
  };
  fill(p.tok_emb);
  fill(p.unfold_w1);
  fill(p.unfold_w2);
  fill(p.class_emb);
  fill(p.pos_emb);
  fill(p.const_up);
  fill(p.const_prev_tok);
  fill(p.const_prev_pos);
  fill(p.proj_w);
  for (auto& L : p.layers) {
    fill(L.wq);
    fill(L.wk);
    fill(L.wv);
    fill(L.wo);
    fill(L.mlp_w1);
    fill(L.mlp_w2);
  }
  const RopeConfig rope = default_rope(c);
  p.rope_freq.data = rope.frequencies;
  return p;
}

inline RopeConfig rope_config_of(const ModelConfig& c, const ModelParams& p) {
  RopeConfig r;
  r.partition = make_rope_partition(c.head_dim());
  r.frequencies = p.rope_freq.data;
  return r;
}

inline MixLogits mix_logits_of(const ModelConfig& c, const ModelParams& p) {
  return MixLogits{c.layers, c.heads, p.mix_logits.data};
}

// ---------------------------------------------------------------------------
// Checkpoint container

inline constexpr std::array<char, 8> kCheckpointMagic = {'C', 'K', 'B', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_u64(std::ostream& os, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline std::uint64_t get_uint(std::istream& is, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = is.get();
    if (c == EOF) throw std::runtime_error("checkpoint: unexpected end of file");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace detail

struct Checkpoint {
  ModelConfig config;
  ModelParams params;
  nlohmann::json extra = nlohmann::json::object();  // free-form metadata (training step, etc.)
};

inline void write_checkpoint(std::ostream& os, const ModelConfig& config, const ModelParams& params,
                             const nlohmann::json& extra = nlohmann::json::object()) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_u32(os, kCheckpointVersion);
  nlohmann::json header{{"model", config}, {"extra", extra}};
  const std::string js = header.dump();
  detail::put_u64(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  std::uint32_t count = 0;
  params.for_each([&](const Tensor&) { ++count; });
  detail::put_u32(os, count);
  params.for_each([&](const Tensor& t) {
    detail::put_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_u64(os, d);
  });
  params.for_each([&](const Tensor& t) {
    for (double v : t.data) detail::put_u64(os, std::bit_cast<std::uint64_t>(v));
  });
}

inline void save_checkpoint(const std::string& path, const ModelConfig& config, const ModelParams& params,
                            const nlohmann::json& extra = nlohmann::json::object()) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  write_checkpoint(os, config, params, extra);
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

inline Checkpoint read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kCheckpointMagic) throw std::runtime_error("checkpoint: bad magic");
  const auto version = static_cast<std::uint32_t>(detail::get_uint(is, 4));
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  const auto js_len = detail::get_uint(is, 8);
  std::string js(js_len, '\0');
  is.read(js.data(), static_cast<std::streamsize>(js_len));
  const nlohmann::json header = nlohmann::json::parse(js);
  Checkpoint ck;
  ck.config = model_config_from_json(header.at("model"));
  ck.extra = header.value("extra", nlohmann::json::object());
  ck.params = zero_params(ck.config);
  const auto count = static_cast<std::uint32_t>(detail::get_uint(is, 4));
  std::vector<Tensor*> order;
  ck.params.for_each([&](Tensor& t) { order.push_back(&t); });
  if (count != order.size())
    throw std::runtime_error("checkpoint: tensor count " + std::to_string(count) + " != expected " +
                             std::to_string(order.size()));
  for (Tensor* t : order) {
    const auto name_len = detail::get_uint(is, 4);
    std::string name(name_len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rank = detail::get_uint(is, 4);
    std::vector<std::size_t> shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<std::size_t>(detail::get_uint(is, 8)));
    if (name != t->name || shape != t->shape)
      throw std::runtime_error("checkpoint: tensor manifest mismatch at '" + name + "' (expected '" + t->name + "')");
  }
  for (Tensor* t : order)
    for (double& v : t->data) v = std::bit_cast<double>(detail::get_uint(is, 8));
  return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  try {
    return read_checkpoint(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(std::string(e.what()) + " in '" + path + "'");
  }
}

}  // namespace checkerboard
