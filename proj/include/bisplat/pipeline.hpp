#pragma once
// Full differentiable pipeline for one TX query: positional encodings ->
// BST -> heads -> offset application -> rasterization -> power -> loss.
// Templated on the scalar type so the f64 verification suites drive exactly
// the same code as f32 training.

#include "bisplat/data.hpp"
#include "bisplat/encoding.hpp"
#include "bisplat/heads.hpp"
#include "bisplat/loss.hpp"
#include "bisplat/renderer.hpp"

namespace bisplat {

struct ModelConfig {
  std::string profile = "base";
  int n_primitives = 500;
  int n_clusters = 64;
  int dim = 128;
  FfnConfig ffn{4, 128};
  AttentionConfig attn{3, 4, 256};
  int gs_order = 8;
  int tx_order = 6;
  InitConfig init;
  OffsetBounds bounds;

  static ModelConfig base_profile() { return ModelConfig{}; }

  static ModelConfig plus_profile() {
    ModelConfig c;
    c.profile = "plus";
    c.n_primitives = 2000;
    c.dim = 256;
    c.ffn = {12, 256};
    c.attn = {6, 4, 512};
    return c;
  }

  static ModelConfig for_profile(const std::string& name) {
    if (name == "base") return base_profile();
    if (name == "plus") return plus_profile();
    fail(strf("unknown model profile '%s' (want base or plus)", name.c_str()));
  }

  int joint_width() const { return encoding_length(gs_order) + encoding_length(tx_order); }
};

struct BypassFlags {
  bool bst = false;
  bool dynamic = false;
  bool delta = false;
};

// Learnable state: primitive tensors plus all network weights.
template <class T>
struct Model {
  ModelConfig cfg;
  ParamStore<T> params;
  std::vector<uint8_t> group;     // 0 = coarse, 1 = fine
  std::vector<double> w_scale;    // per primitive, fixed by group
  std::vector<T> depth_snapshot;  // refreshed each step for sorting
  TxBounds tx_bounds;

  static Model create(const ModelConfig& cfg, uint64_t seed) {
    Model m;
    m.cfg = cfg;
    Rng seeder(seed);
    const uint64_t prim_seed = seeder.next_u64();
    const uint64_t net_seed = seeder.next_u64();

    PrimitiveSet prim = init_primitives(cfg.n_primitives, prim_seed, cfg.init);
    auto col = [&](const std::vector<double>& src) {
      Tensor<T> t(cfg.n_primitives, 1);
      for (int i = 0; i < cfg.n_primitives; ++i) t.v[i] = T(src[i]);
      return t;
    };
    m.params.add("prim.az", col(prim.azimuth_deg), ParamGroup::position);
    m.params.add("prim.el", col(prim.elevation_deg), ParamGroup::position);
    m.params.add("prim.depth", col(prim.depth), ParamGroup::position);
    m.params.add("prim.logsx", col(prim.log_scale_x), ParamGroup::shape);
    m.params.add("prim.logsy", col(prim.log_scale_y), ParamGroup::shape);
    m.params.add("prim.rot", col(prim.rotation_rad), ParamGroup::shape);
    m.params.add("prim.logit", col(prim.opacity_logit), ParamGroup::opacity);
    m.group.resize(cfg.n_primitives);
    m.w_scale.resize(cfg.n_primitives);
    for (int i = 0; i < cfg.n_primitives; ++i) {
      m.group[i] = prim.group[i] == ScaleGroup::coarse ? 0 : 1;
      m.w_scale[i] = prim.w_scale[i];
    }

    Rng net_rng(net_seed);
    add_bst_params(m.params, cfg.joint_width(), cfg.dim, cfg.attn, net_rng);
    add_ffn_params(m.params, "head.static", encoding_length(cfg.gs_order), 2, cfg.ffn, net_rng);
    add_ffn_params(m.params, "head.dynamic", cfg.dim, 2, cfg.ffn, net_rng);
    add_ffn_params(m.params, "head.delta", cfg.joint_width() + cfg.dim, 4, cfg.ffn, net_rng,
                   /*zero_output=*/true);
    return m;
  }

  // Rebuilds group/w_scale from the stored coarse fraction; used after
  // loading a checkpoint.
  void rebuild_groups() {
    const int nc = int(std::lround(cfg.init.coarse_fraction * cfg.n_primitives));
    group.assign(cfg.n_primitives, 1);
    w_scale.assign(cfg.n_primitives, cfg.init.w_scale_fine);
    for (int i = 0; i < nc; ++i) {
      group[i] = 0;
      w_scale[i] = cfg.init.w_scale_coarse;
    }
  }
};

struct RenderOptions {
  RenderGrid grid;
  bool cull = true;
  int tile = 16;
};

template <class T>
struct ForwardGraph {
  Tape<T> tape;
  LeafMap<T> leaves;
  int pred = -1;   // (n_az, n_el) power node
  int loss = -1;   // scalar (when a target was supplied)
  int seq_len = 0; // transformer token count (0 when BST bypassed)
};

// Builds the forward graph for one TX position. `target` may be null for
// inference. The graph holds leaves for every parameter it touches; the
// caller reads gradients back through `leaves.ids`.
template <class T>
void build_forward(ForwardGraph<T>& g, Model<T>& model, const std::array<double, 3>& tx,
                   const Spectrum* target, const BypassFlags& bypass,
                   const RenderOptions& render, const SsimConfig& ssim_cfg,
                   const LossWeights& loss_w = {}) {
  Tape<T>& tape = g.tape;
  g.leaves.tape = &tape;
  g.leaves.store = &model.params;
  auto& leaves = g.leaves;
  const ModelConfig& cfg = model.cfg;
  const int np = cfg.n_primitives;

  int az = leaves("prim.az");
  int el = leaves("prim.el");
  int depth = leaves("prim.depth");

  // GS positional encoding on normalized coordinates
  int t_gs = tape.concat_cols({tape.affine(az, T(1.0 / 180.0), T(-1)),
                               tape.affine(el, T(1.0 / 45.0), T(-1)),
                               tape.affine(depth, T(2.0 / 99.9), T(-0.2 / 99.9 - 1.0))});
  int gs_pe = encode_node(tape, t_gs, cfg.gs_order);

  // TX encoding is constant w.r.t. the learnable state
  const auto tn = model.tx_bounds.normalize(tx);
  const auto tx_enc = positional_encode(tn.data(), cfg.tx_order);
  Tensor<T> tx_row(1, int(tx_enc.size()));
  for (size_t i = 0; i < tx_enc.size(); ++i) tx_row.v[i] = T(tx_enc[i]);
  int tx_pe = tape.constant(tx_row);

  const ClusterGrid grid = ClusterGrid::make(cfg.n_clusters);
  BstResult bst = bst_forward(tape, leaves, gs_pe, tx_pe, az, el, grid, cfg.dim, cfg.attn,
                              bypass.bst);
  g.seq_len = bst.seq_len;

  HeadNodes heads;
  static_head(tape, leaves, gs_pe, cfg.ffn, heads);
  dynamic_head(tape, leaves, bst.global, cfg.ffn, bypass.dynamic, heads);
  int joint_pe = tape.concat_cols({gs_pe, tape.repeat_rows(tx_pe, np)});
  delta_head(tape, leaves, joint_pe, bst.global, cfg.ffn, cfg.bounds, bypass.delta, heads);

  Tensor<T> wsc(np, 1);
  for (int i = 0; i < np; ++i) wsc.v[i] = T(model.w_scale[i]);
  auto [cre, cim] = mix_coefficients(tape, heads, tape.constant(wsc));

  // effective attributes: offsets are additive in the stored domain
  int rot = tape.add(leaves("prim.rot"), heads.d_rotation);
  int lsx = tape.add(leaves("prim.logsx"), heads.d_log_sx);
  int lsy = tape.add(leaves("prim.logsy"), heads.d_log_sy);
  int alpha = tape.logistic(tape.add(leaves("prim.logit"), heads.d_opacity));

  int sx2 = tape.exp_(tape.affine(lsx, T(2), T(0)));
  int sy2 = tape.exp_(tape.affine(lsy, T(2), T(0)));
  int cr = tape.cos_(rot);
  int sr = tape.sin_(rot);
  int cc = tape.mul(cr, cr);
  int ss = tape.mul(sr, sr);
  int sc = tape.mul(sr, cr);
  int s11 = tape.add(tape.mul(sx2, cc), tape.mul(sy2, ss));
  int s22 = tape.add(tape.mul(sx2, ss), tape.mul(sy2, cc));
  int s12 = tape.mul(tape.sub(sx2, sy2), sc);
  int det = tape.sub(tape.mul(s11, s22), tape.mul(s12, s12));
  int c11 = tape.div(s22, det);
  int c22 = tape.div(s11, det);
  int c12 = tape.affine(tape.div(s12, det), T(-1), T(0));

  model.depth_snapshot = tape.val(depth);
  int field = rasterize_node(tape, az, el, c11, c12, c22, alpha, cre, cim,
                             model.depth_snapshot, render.grid, render.cull, render.tile);
  g.pred = power_node(tape, field, render.grid.n_el);

  if (target) {
    if (target->n_az != render.grid.n_az || target->n_el != render.grid.n_el)
      fail(strf("loss: target is %dx%d but render grid is %dx%d", target->n_az, target->n_el,
                render.grid.n_az, render.grid.n_el));
    Tensor<T> tgt(target->n_az, target->n_el);
    for (size_t i = 0; i < target->v.size(); ++i) tgt.v[i] = T(target->v[i]);
    g.loss = composite_loss_node(tape, g.pred, tape.constant(tgt), ssim_cfg, loss_w);
  }
}

// Post-step feasibility projections: azimuth wraps, elevation and depth clamp.
template <class T>
void project_primitive_domains(Model<T>& model) {
  auto& az = model.params.get("prim.az").value;
  for (auto& x : az.v) {
    double a = std::fmod(double(x), 360.0);
    if (a < 0) a += 360.0;
    x = T(a);
  }
  auto& el = model.params.get("prim.el").value;
  for (auto& x : el.v) x = std::min(T(90), std::max(T(0), x));
  auto& d = model.params.get("prim.depth").value;
  for (auto& x : d.v) x = std::min(T(100), std::max(T(0.1), x));
}

}  // namespace bisplat
