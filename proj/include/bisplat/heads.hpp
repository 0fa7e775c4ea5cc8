#pragma once
// Prediction heads: Static Network (TX-independent amplitude/phase), Dynamic
// Network (TX-dependent modulation from BST features), Delta Decoder
// (bounded attribute offsets) and the scale-coupled mixing that produces the
// complex coefficient per primitive.

#include "bisplat/bst.hpp"

namespace bisplat {

struct FfnConfig {
  int depth = 4;  // residual blocks
  int width = 128;
};

// input proj -> depth x (linear, relu, linear) with additive skip -> output proj
template <class T>
void add_ffn_params(ParamStore<T>& store, const std::string& prefix, int in, int out,
                    const FfnConfig& cfg, Rng& rng, bool zero_output = false) {
  if (cfg.depth < 1) fail("residual ffn: depth must be >= 1");
  add_linear(store, prefix + ".in", in, cfg.width, rng);
  for (int d = 0; d < cfg.depth; ++d) {
    add_linear(store, prefix + strf(".blk%d.a", d), cfg.width, cfg.width, rng);
    add_linear(store, prefix + strf(".blk%d.b", d), cfg.width, cfg.width, rng);
  }
  add_linear(store, prefix + ".out", cfg.width, out, rng, zero_output);
}

inline int64_t ffn_param_count(int in, int out, const FfnConfig& cfg) {
  int64_t n = int64_t(in) * cfg.width + cfg.width;
  n += int64_t(cfg.depth) * 2 * (int64_t(cfg.width) * cfg.width + cfg.width);
  n += int64_t(cfg.width) * out + out;
  return n;
}

template <class T>
int ffn_forward(Tape<T>& tape, LeafMap<T>& leaves, const std::string& prefix, int x,
                const FfnConfig& cfg) {
  int h = linear_node(tape, leaves, prefix + ".in", x);
  for (int d = 0; d < cfg.depth; ++d) {
    int a = tape.relu(linear_node(tape, leaves, prefix + strf(".blk%d.a", d), h));
    int b = linear_node(tape, leaves, prefix + strf(".blk%d.b", d), a);
    h = tape.add(h, b);
  }
  return linear_node(tape, leaves, prefix + ".out", h);
}

struct HeadNodes {
  int amp_static = -1, phase_static = -1;
  int amp_mod = -1, phase_mod = -1;
  int d_rotation = -1, d_log_sx = -1, d_log_sy = -1, d_opacity = -1;
};

// Static Network: gs_pe -> (amp >= 0 via softplus, phase).
template <class T>
void static_head(Tape<T>& tape, LeafMap<T>& leaves, int gs_pe, const FfnConfig& cfg,
                 HeadNodes& out) {
  int y = ffn_forward(tape, leaves, "head.static", gs_pe, cfg);
  out.amp_static = tape.softplus(tape.slice_cols(y, 0, 1));
  out.phase_static = tape.slice_cols(y, 1, 2);
}

// Dynamic Network: BST features -> signed modulation (amp, phase). When
// bypassed the outputs are zeroed; parameters stay in place.
template <class T>
void dynamic_head(Tape<T>& tape, LeafMap<T>& leaves, int features, const FfnConfig& cfg,
                  bool bypass, HeadNodes& out) {
  int y = ffn_forward(tape, leaves, "head.dynamic", features, cfg);
  if (bypass) y = tape.affine(y, T(0), T(0));
  out.amp_mod = tape.slice_cols(y, 0, 1);
  out.phase_mod = tape.slice_cols(y, 1, 2);
}

struct OffsetBounds {
  double rotation = M_PI / 4.0;
  double log_scale = M_LN2;
  double opacity = 2.0;
};

// Delta Decoder: tanh-bounded offsets from (gs_pe | tx_pe) and BST features.
template <class T>
void delta_head(Tape<T>& tape, LeafMap<T>& leaves, int joint_pe, int features,
                const FfnConfig& cfg, const OffsetBounds& bounds, bool bypass, HeadNodes& out) {
  int x = tape.concat_cols({joint_pe, features});
  int y = tape.tanh_(ffn_forward(tape, leaves, "head.delta", x, cfg));
  if (bypass) y = tape.affine(y, T(0), T(0));
  Tensor<T> scale(1, 4);
  scale.v = {T(bounds.rotation), T(bounds.log_scale), T(bounds.log_scale), T(bounds.opacity)};
  y = tape.mul_row(y, tape.constant(scale));
  out.d_rotation = tape.slice_cols(y, 0, 1);
  out.d_log_sx = tape.slice_cols(y, 1, 2);
  out.d_log_sy = tape.slice_cols(y, 2, 3);
  out.d_opacity = tape.slice_cols(y, 3, 4);
}

// c_i = (amp_static + w_scale * amp_mod) * exp(j*(phase_static + phase_mod)),
// returned as a real (re, im) pair of (N_p, 1) nodes.
template <class T>
std::pair<int, int> mix_coefficients(Tape<T>& tape, const HeadNodes& h, int w_scale_const) {
  int amp = tape.add(h.amp_static, tape.mul(w_scale_const, h.amp_mod));
  int phase = tape.add(h.phase_static, h.phase_mod);
  return {tape.mul(amp, tape.cos_(phase)), tape.mul(amp, tape.sin_(phase))};
}

}  // namespace bisplat
