#pragma once

// The block-causal multiscale transformer: sequence plans, input
// construction, forward pass with per-token caches, cross-entropy loss and
// exact reverse-mode gradients.
//
// Every token t >= 1 predicts its own code z_s[p_t]. Its input mixes four
// D-wide vectors through one shared projection:
//   [ up(z_{s-1})[p_t] | z_s[q_t] | pos[p_t] | pos[q_t] ]
// where q_t is the paired position in the previous block of the same scale
// (learned constants stand in for z_s[q_t] and pos[q_t] in a scale's first
// block, and for the upsampled channel at scale 0). Slot 0 carries the class
// embedding.

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "checkerboard/grid.hpp"
#include "checkerboard/layout_mask.hpp"
#include "checkerboard/model.hpp"
#include "checkerboard/rope.hpp"
#include "checkerboard/tensor.hpp"

namespace checkerboard {

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericFailure : public std::runtime_error {
 public:
  NumericFailure(int layer, const std::string& what)
      : std::runtime_error("non-finite activation at layer " + std::to_string(layer) + ": " + what), layer_(layer) {}
  int layer() const { return layer_; }

 private:
  int layer_;
};

struct TokenInfo {
  int scale = 0;
  int block = 0;
  Position pos;
  bool has_prev = false;
  Position prev;
  std::size_t pos_row = 0;       // row in pos_emb
  std::size_t prev_pos_row = 0;  // row in pos_emb when has_prev
  int cell = -1;                 // index into the scale's grid
  int prev_cell = -1;            // index into the same grid for z_s[q_t]
  int up_cell = -1;              // index into the previous scale's grid, -1 at scale 0
  RopeCoord rope_cur;            // class token: all zero (identity rotation)
  RopeCoord rope_prev;           // equals rope_cur when there is no previous block
};

struct SequencePlan {
  BlockPartition partition;
  SequenceLayout layout;
  BlockCausalMask mask;
  std::vector<TokenInfo> tokens;         // indexed by flat token index; tokens[0] is the class slot
  std::vector<std::size_t> attn_offset;  // prefix sums of key_end, for ragged attention storage

  std::size_t length() const { return tokens.size(); }
};

inline SequencePlan build_plan(const ModelConfig& config, int p) {
  SequencePlan plan;
  plan.partition = partition_blocks(config.schedule(), p, config.order, config.order_seed);
  plan.layout = build_layout(plan.partition);
  plan.mask = build_mask(plan.layout);
  const auto offsets = pos_offsets(plan.partition.schedule);
  const auto& sizes = plan.partition.schedule.sizes;
  plan.tokens.resize(plan.layout.length);
  std::size_t flat = 1;
  for (std::size_t s = 0; s < plan.partition.blocks.size(); ++s) {
    const int side = sizes[s];
    for (std::size_t b = 0; b < plan.partition.blocks[s].size(); ++b) {
      for (const PositionPair& pp : pair_positions(plan.partition, s, b)) {
        TokenInfo& t = plan.tokens[flat++];
        t.scale = static_cast<int>(s);
        t.block = static_cast<int>(b);
        t.pos = pp.current;
        t.cell = pp.current.y * side + pp.current.x;
        t.pos_row = offsets[s] + static_cast<std::size_t>(t.cell);
        t.rope_cur = RopeCoord::of(pp.current, static_cast<int>(s));
        t.rope_prev = t.rope_cur;
        if (pp.previous) {
          t.has_prev = true;
          t.prev = *pp.previous;
          t.prev_cell = t.prev.y * side + t.prev.x;
          t.prev_pos_row = offsets[s] + static_cast<std::size_t>(t.prev_cell);
          t.rope_prev = RopeCoord::of(t.prev, static_cast<int>(s));
        }
        if (s > 0) {
          const int prev_side = sizes[s - 1];
          const int ux = upsample_source(pp.current.x, prev_side, side);
          const int uy = upsample_source(pp.current.y, prev_side, side);
          t.up_cell = uy * prev_side + ux;
        }
      }
    }
  }
  plan.attn_offset.assign(plan.layout.length + 1, 0);
  for (std::size_t t = 0; t < plan.layout.length; ++t)
    plan.attn_offset[t + 1] = plan.attn_offset[t] + plan.mask.key_end(t);
  return plan;
}

// Plans depend only on P for a given model config.
class PlanCache {
 public:
  explicit PlanCache(ModelConfig config) : config_(std::move(config)) {}

  const SequencePlan& get(int p) {
    auto it = plans_.find(p);
    if (it == plans_.end()) it = plans_.emplace(p, std::make_unique<SequencePlan>(build_plan(config_, p))).first;
    return *it->second;
  }

 private:
  ModelConfig config_;
  std::map<int, std::unique_ptr<SequencePlan>> plans_;
};

// Forward evaluation over a sequence with every intermediate kept for the
// backward pass. Tokens can be processed in block-aligned chunks (sampling)
// or all at once (training); both paths run identical per-token arithmetic,
// so logits agree bit-for-bit.
class Transformer {
 public:
  Transformer(const ModelConfig& config, const ModelParams& params, const SequencePlan& plan, int class_label)
      : cfg_(config), prm_(params), plan_(plan), label_(class_label) {
    if (class_label < 0 || class_label > config.classes)
      throw std::invalid_argument("class label " + std::to_string(class_label) + " outside [0, " +
                                  std::to_string(config.classes) + "]");
    D_ = static_cast<std::size_t>(cfg_.width);
    H_ = static_cast<std::size_t>(cfg_.heads);
    hd_ = D_ / H_;
    M_ = static_cast<std::size_t>(cfg_.mlp_width());
    V_ = static_cast<std::size_t>(cfg_.vocab);
    T_ = plan_.length();
    pairs_ = static_cast<std::size_t>(make_rope_partition(static_cast<int>(hd_)).pairs());
    allocate();
    prepare();
  }

  std::size_t length() const { return T_; }
  std::size_t processed() const { return done_; }
  int class_label() const { return label_; }
  const SequencePlan& plan() const { return plan_; }

  // Process tokens [processed(), end). `end` must be a block boundary.
  void run_until(std::size_t end, const MultiscaleCodes& codes) {
    if (end > T_ || end < done_) throw std::invalid_argument("Transformer::run_until: bad range");
    if (end > done_ && plan_.mask.key_end(end - 1) != end)
      throw std::invalid_argument("Transformer::run_until: range must end on a block boundary");
    const std::size_t b = done_;
    compute_inputs(b, end, codes);
    for (std::size_t l = 0; l < layers_.size(); ++l) layer_forward(l, b, end);
    final_forward(b, end);
    done_ = end;
  }

  void run_all(const MultiscaleCodes& codes) { run_until(T_, codes); }

  const double* logits(std::size_t t) const { return &logits_[t * V_]; }

  // Per-token transformer inputs (T x D), valid for processed tokens.
  const std::vector<double>& inputs() const { return x0_; }

  double token_nll(std::size_t t, int target) const {
    std::vector<double> z(logits(t), logits(t) + V_);
    const double lse = softmax_inplace(z.data(), V_);
    return lse - logits(t)[static_cast<std::size_t>(target)];
  }

  int target(const MultiscaleCodes& codes, std::size_t t) const {
    const TokenInfo& info = plan_.tokens[t];
    return codes.at(static_cast<std::size_t>(info.scale)).cells.at(static_cast<std::size_t>(info.cell));
  }

  // Mean cross-entropy over tokens 1..T-1; the class slot carries no target.
  double loss(const MultiscaleCodes& codes) const {
    if (done_ != T_) throw InvalidState("loss: forward has not covered the full sequence");
    double total = 0;
    for (std::size_t t = 1; t < T_; ++t) total += token_nll(t, target(codes, t));
    return total / static_cast<double>(T_ - 1);
  }

  // Accumulates weight * d(loss)/d(params) into grads.
  void backward(const MultiscaleCodes& codes, ModelParams& grads, double weight = 1.0) const {
    if (done_ != T_) throw InvalidState("backward: forward has not covered the full sequence");
    std::vector<double> dlogits(T_ * V_, 0.0);
    const double norm = weight / static_cast<double>(T_ - 1);
    for (std::size_t t = 1; t < T_; ++t) {
      double* g = &dlogits[t * V_];
      std::copy(logits(t), logits(t) + V_, g);
      softmax_inplace(g, V_);
      g[static_cast<std::size_t>(target(codes, t))] -= 1.0;
      for (std::size_t v = 0; v < V_; ++v) g[v] *= norm;
    }
    backward_from_logits(dlogits, codes, grads);
  }

  // Reverse pass given d(objective)/d(logits) for every token (T x V).
  void backward_from_logits(const std::vector<double>& dlogits, const MultiscaleCodes& codes, ModelParams& grads) const {
    const std::size_t TD = T_ * D_;
    std::vector<double> dh(TD, 0.0), tmp(D_);
    std::vector<double> dcond(D_, 0.0), dfinal_mod(2 * D_, 0.0);

    for (std::size_t t = 0; t < T_; ++t) {
      const double* dl = &dlogits[t * V_];
      std::fill(tmp.begin(), tmp.end(), 0.0);
      matvec_backward(prm_.head_w, &af_[t * D_], dl, tmp.data(), grads.head_w, grads.head_b.data.data());
      for (std::size_t d = 0; d < D_; ++d) {
        dfinal_mod[d] += tmp[d] * nf_[t * D_ + d];
        dfinal_mod[D_ + d] += tmp[d];
        tmp[d] *= 1.0 + final_mod_[d];
      }
      layer_norm_backward(&nf_[t * D_], rstdf_[t], tmp.data(), &dh[t * D_], D_);
    }
    matvec_backward(prm_.final_ada_w, cond_.data(), dfinal_mod.data(), dcond.data(), grads.final_ada_w,
                    grads.final_ada_b.data.data());

    const RopePartition part = make_rope_partition(static_cast<int>(hd_));
    const int np = static_cast<int>(pairs_);
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd_));
    std::vector<double> dmid(TD), dg(M_), da(TD), dq(TD), dk(TD), dv(TD), duq(D_), duk(D_), dmod(4 * D_);

    for (std::size_t li = layers_.size(); li-- > 0;) {
      const LayerParams& P = prm_.layers[li];
      LayerParams& G = grads.layers[li];
      const LayerCache& c = layers_[li];
      const double* mod = mods_[li].data();
      std::fill(dmod.begin(), dmod.end(), 0.0);

      // MLP branch and second norm.
      dmid = dh;
      for (std::size_t t = 0; t < T_; ++t) {
        std::fill(dg.begin(), dg.end(), 0.0);
        matvec_backward(P.mlp_w2, &c.g1[t * M_], &dh[t * D_], dg.data(), G.mlp_w2, G.mlp_b2.data.data());
        for (std::size_t m = 0; m < M_; ++m) dg[m] *= gelu_grad(c.z1[t * M_ + m]);
        std::fill(tmp.begin(), tmp.end(), 0.0);
        matvec_backward(P.mlp_w1, &c.a2[t * D_], dg.data(), tmp.data(), G.mlp_w1, G.mlp_b1.data.data());
        for (std::size_t d = 0; d < D_; ++d) {
          dmod[2 * D_ + d] += tmp[d] * c.n2[t * D_ + d];
          dmod[3 * D_ + d] += tmp[d];
          tmp[d] *= 1.0 + mod[2 * D_ + d];
        }
        layer_norm_backward(&c.n2[t * D_], c.rstd2[t], tmp.data(), &dmid[t * D_], D_);
      }

      // Attention branch.
      std::fill(dq.begin(), dq.end(), 0.0);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      dh = dmid;  // residual path into the layer input
      std::vector<double> dout(D_), dw;
      for (std::size_t t = 0; t < T_; ++t) {
        std::fill(dout.begin(), dout.end(), 0.0);
        matvec_backward(P.wo, &c.o[t * D_], &dmid[t * D_], dout.data(), G.wo, nullptr);
        const std::size_t kend = plan_.mask.key_end(t);
        dw.assign(kend, 0.0);
        for (std::size_t h = 0; h < H_; ++h) {
          const double* w = &c.attn[plan_.attn_offset[t] * H_ + h * kend];
          const double* doh = &dout[h * hd_];
          double sum = 0;
          for (std::size_t j = 0; j < kend; ++j) {
            dw[j] = dot(doh, &c.v[j * D_ + h * hd_], hd_);
            axpy(w[j], doh, &dv[j * D_ + h * hd_], hd_);
            sum += w[j] * dw[j];
          }
          const double* qv = &c.q[t * D_ + h * hd_];
          double* dqv = &dq[t * D_ + h * hd_];
          for (std::size_t j = 0; j < kend; ++j) {
            const double ds = w[j] * (dw[j] - sum) * scale;
            if (ds == 0.0) continue;
            axpy(ds, &c.k[j * D_ + h * hd_], dqv, hd_);
            axpy(ds, qv, &dk[j * D_ + h * hd_], hd_);
          }
        }
      }

      // Rotary encodings, key mixing and the q/k/v projections.
      const bool mix = mixed(li);
      for (std::size_t t = 0; t < T_; ++t) {
        const TokenInfo& info = plan_.tokens[t];
        const double* cc = &cos_cur_[t * pairs_];
        const double* sc = &sin_cur_[t * pairs_];
        const double* cp = &cos_prev_[t * pairs_];
        const double* sp = &sin_prev_[t * pairs_];
        for (std::size_t h = 0; h < H_; ++h) {
          const std::size_t off = t * D_ + h * hd_;
          const double* gq = &dq[off];
          const double* q = &c.q[off];
          unrotate_into(std::span<const double>(gq, hd_), cc, sc, np, &duq[h * hd_]);
          for (int j = 0; j < np; ++j) {
            const double dtheta = gq[2 * j] * -q[2 * j + 1] + gq[2 * j + 1] * q[2 * j];
            grads.rope_freq[static_cast<std::size_t>(j)] += dtheta * info.rope_cur.along(part.axis(j));
          }
          const double* gk = &dk[off];
          if (mix) {
            const std::size_t ai = li * H_ + h;
            const double alpha = sigmoid(prm_.mix_logits[ai]);
            double dalpha = 0;
            for (std::size_t i = 0; i < hd_; ++i) dalpha += gk[i] * (c.kcur[off + i] - c.kprev[off + i]);
            grads.mix_logits[ai] += dalpha * alpha * (1.0 - alpha);
            std::vector<double> gcur(hd_), gprev(hd_), back(hd_);
            for (std::size_t i = 0; i < hd_; ++i) {
              gcur[i] = alpha * gk[i];
              gprev[i] = (1.0 - alpha) * gk[i];
            }
            unrotate_into(gcur, cc, sc, np, &duk[h * hd_]);
            unrotate_into(gprev, cp, sp, np, back.data());
            for (std::size_t i = 0; i < hd_; ++i) duk[h * hd_ + i] += back[i];
            const double* kc = &c.kcur[off];
            const double* kp = &c.kprev[off];
            for (int j = 0; j < np; ++j) {
              const double dcur = gcur[2 * j] * -kc[2 * j + 1] + gcur[2 * j + 1] * kc[2 * j];
              const double dprev = gprev[2 * j] * -kp[2 * j + 1] + gprev[2 * j + 1] * kp[2 * j];
              grads.rope_freq[static_cast<std::size_t>(j)] +=
                  dcur * info.rope_cur.along(part.axis(j)) + dprev * info.rope_prev.along(part.axis(j));
            }
          } else {
            unrotate_into(std::span<const double>(gk, hd_), cc, sc, np, &duk[h * hd_]);
            const double* k = &c.k[off];
            for (int j = 0; j < np; ++j) {
              const double dtheta = gk[2 * j] * -k[2 * j + 1] + gk[2 * j + 1] * k[2 * j];
              grads.rope_freq[static_cast<std::size_t>(j)] += dtheta * info.rope_cur.along(part.axis(j));
            }
          }
        }
        std::fill(tmp.begin(), tmp.end(), 0.0);
        const double* a1 = &c.a1[t * D_];
        matvec_backward(P.wq, a1, duq.data(), tmp.data(), G.wq, nullptr);
        matvec_backward(P.wk, a1, duk.data(), tmp.data(), G.wk, nullptr);
        matvec_backward(P.wv, a1, &dv[t * D_], tmp.data(), G.wv, nullptr);
        for (std::size_t d = 0; d < D_; ++d) {
          dmod[d] += tmp[d] * c.n1[t * D_ + d];
          dmod[D_ + d] += tmp[d];
          tmp[d] *= 1.0 + mod[d];
        }
        layer_norm_backward(&c.n1[t * D_], c.rstd1[t], tmp.data(), &dh[t * D_], D_);
      }
      matvec_backward(P.ada_w, cond_.data(), dmod.data(), dcond.data(), G.ada_w, G.ada_b.data.data());
    }

    // Input construction.
    std::vector<double> dunfolded(V_ * D_, 0.0), dcat(4 * D_);
    for (std::size_t t = 0; t < T_; ++t) {
      const double* dx = &dh[t * D_];
      if (t == 0) {
        axpy(1.0, dx, dcond.data(), D_);
        continue;
      }
      const TokenInfo& info = plan_.tokens[t];
      std::fill(dcat.begin(), dcat.end(), 0.0);
      matvec_backward(prm_.proj_w, &concat_[t * 4 * D_], dx, dcat.data(), grads.proj_w, grads.proj_b.data.data());
      if (info.scale == 0) {
        axpy(1.0, &dcat[0], grads.const_up.data.data(), D_);
      } else {
        const auto v = static_cast<std::size_t>(code_at(codes, info.scale - 1, info.up_cell, t));
        axpy(1.0, &dcat[0], &dunfolded[v * D_], D_);
      }
      if (info.has_prev) {
        const auto v = static_cast<std::size_t>(code_at(codes, info.scale, info.prev_cell, t));
        axpy(1.0, &dcat[D_], &dunfolded[v * D_], D_);
        axpy(1.0, &dcat[3 * D_], grads.pos_emb.row(info.prev_pos_row), D_);
      } else {
        axpy(1.0, &dcat[D_], grads.const_prev_tok.data.data(), D_);
        axpy(1.0, &dcat[3 * D_], grads.const_prev_pos.data.data(), D_);
      }
      axpy(1.0, &dcat[2 * D_], grads.pos_emb.row(info.pos_row), D_);
    }
    axpy(1.0, dcond.data(), grads.class_emb.row(static_cast<std::size_t>(label_)), D_);

    // Unfold MLP.
    std::vector<double> dact(D_), dpre(D_);
    for (std::size_t v = 0; v < V_; ++v) {
      std::fill(dact.begin(), dact.end(), 0.0);
      matvec_backward(prm_.unfold_w2, &unfold_act_[v * D_], &dunfolded[v * D_], dact.data(), grads.unfold_w2,
                      grads.unfold_b2.data.data());
      for (std::size_t d = 0; d < D_; ++d) dpre[d] = dact[d] * gelu_grad(unfold_pre_[v * D_ + d]);
      matvec_backward(prm_.unfold_w1, prm_.tok_emb.row(v), dpre.data(), grads.tok_emb.row(v), grads.unfold_w1,
                      grads.unfold_b1.data.data());
    }
  }

 private:
  struct LayerCache {
    std::vector<double> n1, rstd1, a1, uq, uk, v, q, k, kcur, kprev, attn, o, h_mid, n2, rstd2, a2, z1, g1, h_out;
  };

  const std::vector<double>& input_of(std::size_t l) const { return l == 0 ? x0_ : layers_[l - 1].h_out; }

  void allocate() {
    const std::size_t TD = T_ * D_;
    x0_.assign(TD, 0);
    concat_.assign(T_ * 4 * D_, 0);
    layers_.resize(prm_.layers.size());
    for (auto& c : layers_) {
      for (auto* v : {&c.n1, &c.a1, &c.uq, &c.uk, &c.v, &c.q, &c.k, &c.kcur, &c.kprev, &c.o, &c.h_mid, &c.n2, &c.a2,
                      &c.h_out})
        v->assign(TD, 0);
      c.rstd1.assign(T_, 0);
      c.rstd2.assign(T_, 0);
      c.z1.assign(T_ * M_, 0);
      c.g1.assign(T_ * M_, 0);
      c.attn.assign(plan_.attn_offset.back() * H_, 0);
    }
    nf_.assign(TD, 0);
    af_.assign(TD, 0);
    rstdf_.assign(T_, 0);
    logits_.assign(T_ * V_, 0);
    cos_cur_.assign(T_ * pairs_, 1);
    sin_cur_.assign(T_ * pairs_, 0);
    cos_prev_.assign(T_ * pairs_, 1);
    sin_prev_.assign(T_ * pairs_, 0);
  }

  void prepare() {
    unfold_pre_.assign(V_ * D_, 0);
    unfold_act_.assign(V_ * D_, 0);
    unfolded_.assign(V_ * D_, 0);
    for (std::size_t v = 0; v < V_; ++v) {
      matvec(prm_.unfold_w1, prm_.unfold_b1.data.data(), prm_.tok_emb.row(v), &unfold_pre_[v * D_]);
      for (std::size_t d = 0; d < D_; ++d) unfold_act_[v * D_ + d] = gelu(unfold_pre_[v * D_ + d]);
      matvec(prm_.unfold_w2, prm_.unfold_b2.data.data(), &unfold_act_[v * D_], &unfolded_[v * D_]);
    }
    const double* cls = prm_.class_emb.row(static_cast<std::size_t>(label_));
    cond_.assign(cls, cls + D_);
    mods_.assign(prm_.layers.size(), std::vector<double>(4 * D_));
    for (std::size_t l = 0; l < prm_.layers.size(); ++l)
      matvec(prm_.layers[l].ada_w, prm_.layers[l].ada_b.data.data(), cond_.data(), mods_[l].data());
    final_mod_.assign(2 * D_, 0);
    matvec(prm_.final_ada_w, prm_.final_ada_b.data.data(), cond_.data(), final_mod_.data());

    const RopePartition part = make_rope_partition(static_cast<int>(hd_));
    const std::span<const double> freqs(prm_.rope_freq.data);
    for (std::size_t t = 1; t < T_; ++t) {
      const TokenInfo& info = plan_.tokens[t];
      const RopeAngles cur = rope_angles(part, freqs, info.rope_cur);
      const RopeAngles prev = rope_angles(part, freqs, info.rope_prev);
      std::copy(cur.cos.begin(), cur.cos.end(), &cos_cur_[t * pairs_]);
      std::copy(cur.sin.begin(), cur.sin.end(), &sin_cur_[t * pairs_]);
      std::copy(prev.cos.begin(), prev.cos.end(), &cos_prev_[t * pairs_]);
      std::copy(prev.sin.begin(), prev.sin.end(), &sin_prev_[t * pairs_]);
    }
  }

  int code_at(const MultiscaleCodes& codes, int scale, int cell, std::size_t t) const {
    if (static_cast<std::size_t>(scale) >= codes.size())
      throw InvalidState("missing codes for scale " + std::to_string(scale));
    const int v = codes[static_cast<std::size_t>(scale)].cells.at(static_cast<std::size_t>(cell));
    if (v < 0 || v >= cfg_.vocab)
      throw InvalidState("token " + std::to_string(t) + " needs the code at scale " + std::to_string(scale) +
                         ", cell " + std::to_string(cell) + ", which is missing or out of range");
    return v;
  }

  void compute_inputs(std::size_t b, std::size_t e, const MultiscaleCodes& codes) {
    for (std::size_t t = b; t < e; ++t) {
      double* x = &x0_[t * D_];
      if (t == 0) {
        std::copy(cond_.begin(), cond_.end(), x);
        continue;
      }
      const TokenInfo& info = plan_.tokens[t];
      double* c = &concat_[t * 4 * D_];
      const double* up =
          info.scale == 0 ? prm_.const_up.data.data()
                          : &unfolded_[static_cast<std::size_t>(code_at(codes, info.scale - 1, info.up_cell, t)) * D_];
      const double* prev_tok =
          info.has_prev ? &unfolded_[static_cast<std::size_t>(code_at(codes, info.scale, info.prev_cell, t)) * D_]
                        : prm_.const_prev_tok.data.data();
      const double* pos = prm_.pos_emb.row(info.pos_row);
      const double* prev_pos = info.has_prev ? prm_.pos_emb.row(info.prev_pos_row) : prm_.const_prev_pos.data.data();
      std::copy(up, up + D_, c);
      std::copy(prev_tok, prev_tok + D_, c + D_);
      std::copy(pos, pos + D_, c + 2 * D_);
      std::copy(prev_pos, prev_pos + D_, c + 3 * D_);
      matvec(prm_.proj_w, prm_.proj_b.data.data(), c, x);
    }
  }

  static void layer_norm(const double* h, double* n, double& rstd, std::size_t D) {
    double mean = 0;
    for (std::size_t d = 0; d < D; ++d) mean += h[d];
    mean /= static_cast<double>(D);
    double var = 0;
    for (std::size_t d = 0; d < D; ++d) var += (h[d] - mean) * (h[d] - mean);
    var /= static_cast<double>(D);
    rstd = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t d = 0; d < D; ++d) n[d] = (h[d] - mean) * rstd;
  }

  static void layer_norm_backward(const double* n, double rstd, const double* dn, double* dh, std::size_t D) {
    double mean_dn = 0, mean_dn_n = 0;
    for (std::size_t d = 0; d < D; ++d) {
      mean_dn += dn[d];
      mean_dn_n += dn[d] * n[d];
    }
    mean_dn /= static_cast<double>(D);
    mean_dn_n /= static_cast<double>(D);
    for (std::size_t d = 0; d < D; ++d) dh[d] += rstd * (dn[d] - mean_dn - n[d] * mean_dn_n);
  }

  bool mixed(std::size_t l) const { return static_cast<int>(l) < cfg_.mix_layers; }

  void layer_forward(std::size_t l, std::size_t b, std::size_t e) {
    const LayerParams& P = prm_.layers[l];
    LayerCache& c = layers_[l];
    const double* mod = mods_[l].data();
    const std::vector<double>& in = input_of(l);
    const int np = static_cast<int>(pairs_);
    for (std::size_t t = b; t < e; ++t) {
      layer_norm(&in[t * D_], &c.n1[t * D_], c.rstd1[t], D_);
      for (std::size_t d = 0; d < D_; ++d) c.a1[t * D_ + d] = c.n1[t * D_ + d] * (1.0 + mod[d]) + mod[D_ + d];
      matvec(P.wq, nullptr, &c.a1[t * D_], &c.uq[t * D_]);
      matvec(P.wk, nullptr, &c.a1[t * D_], &c.uk[t * D_]);
      matvec(P.wv, nullptr, &c.a1[t * D_], &c.v[t * D_]);
      const double* cc = &cos_cur_[t * pairs_];
      const double* sc = &sin_cur_[t * pairs_];
      for (std::size_t h = 0; h < H_; ++h) {
        const std::size_t off = t * D_ + h * hd_;
        rotate_into(std::span<const double>(&c.uq[off], hd_), cc, sc, np, &c.q[off]);
        rotate_into(std::span<const double>(&c.uk[off], hd_), cc, sc, np, &c.kcur[off]);
        if (mixed(l)) {
          rotate_into(std::span<const double>(&c.uk[off], hd_), &cos_prev_[t * pairs_], &sin_prev_[t * pairs_], np,
                      &c.kprev[off]);
          const double alpha = sigmoid(prm_.mix_logits[l * H_ + h]);
          for (std::size_t i = 0; i < hd_; ++i)
            c.k[off + i] = alpha * c.kcur[off + i] + (1.0 - alpha) * c.kprev[off + i];
        } else {
          std::copy(&c.kcur[off], &c.kcur[off] + hd_, &c.k[off]);
        }
      }
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd_));
    for (std::size_t t = b; t < e; ++t) {
      const std::size_t kend = plan_.mask.key_end(t);
      for (std::size_t h = 0; h < H_; ++h) {
        double* w = &c.attn[plan_.attn_offset[t] * H_ + h * kend];
        const double* qv = &c.q[t * D_ + h * hd_];
        for (std::size_t j = 0; j < kend; ++j) w[j] = dot(qv, &c.k[j * D_ + h * hd_], hd_) * scale;
        softmax_inplace(w, kend);
        double* out = &c.o[t * D_ + h * hd_];
        std::fill(out, out + hd_, 0.0);
        for (std::size_t j = 0; j < kend; ++j) axpy(w[j], &c.v[j * D_ + h * hd_], out, hd_);
      }
      double* hm = &c.h_mid[t * D_];
      matvec(P.wo, nullptr, &c.o[t * D_], hm);
      for (std::size_t d = 0; d < D_; ++d) hm[d] += in[t * D_ + d];
      layer_norm(hm, &c.n2[t * D_], c.rstd2[t], D_);
      for (std::size_t d = 0; d < D_; ++d)
        c.a2[t * D_ + d] = c.n2[t * D_ + d] * (1.0 + mod[2 * D_ + d]) + mod[3 * D_ + d];
      matvec(P.mlp_w1, P.mlp_b1.data.data(), &c.a2[t * D_], &c.z1[t * M_]);
      for (std::size_t m = 0; m < M_; ++m) c.g1[t * M_ + m] = gelu(c.z1[t * M_ + m]);
      double* hout = &c.h_out[t * D_];
      matvec(P.mlp_w2, P.mlp_b2.data.data(), &c.g1[t * M_], hout);
      for (std::size_t d = 0; d < D_; ++d) hout[d] += hm[d];
      if (!all_finite(std::span<const double>(hout, D_)))
        throw NumericFailure(static_cast<int>(l), "token " + std::to_string(t));
    }
  }

  void final_forward(std::size_t b, std::size_t e) {
    const std::vector<double>& h = layers_.back().h_out;
    for (std::size_t t = b; t < e; ++t) {
      layer_norm(&h[t * D_], &nf_[t * D_], rstdf_[t], D_);
      for (std::size_t d = 0; d < D_; ++d)
        af_[t * D_ + d] = nf_[t * D_ + d] * (1.0 + final_mod_[d]) + final_mod_[D_ + d];
      matvec(prm_.head_w, prm_.head_b.data.data(), &af_[t * D_], &logits_[t * V_]);
      if (!all_finite(std::span<const double>(&logits_[t * V_], V_)))
        throw NumericFailure(static_cast<int>(layers_.size()), "logits of token " + std::to_string(t));
    }
  }

  const ModelConfig& cfg_;
  const ModelParams& prm_;
  const SequencePlan& plan_;
  int label_;
  std::size_t D_ = 0, H_ = 0, hd_ = 0, M_ = 0, V_ = 0, T_ = 0, pairs_ = 0;
  std::size_t done_ = 0;

  std::vector<double> unfold_pre_, unfold_act_, unfolded_;
  std::vector<double> cond_, final_mod_;
  std::vector<std::vector<double>> mods_;
  std::vector<double> x0_, concat_;
  std::vector<LayerCache> layers_;
  std::vector<double> nf_, af_, rstdf_, logits_;
  std::vector<double> cos_cur_, sin_cur_, cos_prev_, sin_prev_;
};

// Mean cross-entropy of rows of logits (each of width vocab) against targets.
inline double mean_cross_entropy(std::span<const double> logits, std::span<const int> targets, std::size_t vocab) {
  if (logits.size() != targets.size() * vocab) throw std::invalid_argument("mean_cross_entropy: shape mismatch");
  if (targets.empty()) return 0.0;
  double total = 0;
  std::vector<double> row(vocab);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    std::copy(logits.begin() + static_cast<std::ptrdiff_t>(i * vocab),
              logits.begin() + static_cast<std::ptrdiff_t>((i + 1) * vocab), row.begin());
    const double lse = softmax_inplace(row.data(), vocab);
    total += lse - logits[i * vocab + static_cast<std::size_t>(targets[i])];
  }
  return total / static_cast<double>(targets.size());
}

// Teacher-forced transformer inputs for a full sequence (T x D, row 0 is the class slot).
inline std::vector<double> build_inputs(const ModelConfig& config, const ModelParams& params, const SequencePlan& plan,
                                        const MultiscaleCodes& codes, int class_label) {
  Transformer net(config, params, plan, class_label);
  net.run_all(codes);
  return net.inputs();
}

// Loss and accumulated gradient for one teacher-forced sequence.
inline double loss_and_grad(const ModelConfig& config, const ModelParams& params, const SequencePlan& plan,
                            const MultiscaleCodes& codes, int class_label, ModelParams& grads, double weight = 1.0) {
  Transformer net(config, params, plan, class_label);
  net.run_all(codes);
  const double l = net.loss(codes);
  net.backward(codes, grads, weight);
  return l;
}

inline double sequence_loss(const ModelConfig& config, const ModelParams& params, const SequencePlan& plan,
                            const MultiscaleCodes& codes, int class_label) {
  Transformer net(config, params, plan, class_label);
  net.run_all(codes);
  return net.loss(codes);
}

}  // namespace checkerboard
