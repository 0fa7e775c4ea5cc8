#pragma once
// Tile-based rasterization of planar Gaussians on the azimuth-elevation grid
// with depth-ordered complex alpha blending, plus the analytic adjoint.
//
// Pixels own their blending loop (front-to-back over the tile's depth-sorted
// splat list), so output is exact per pixel and independent of tile size and
// worker count. Azimuth displacement uses the minimum-image wrap; a splat
// whose 3-sigma box crosses the seam lands in tiles on both sides.

#include <cstdint>
#include <memory>
#include <numeric>

#include "bisplat/grid.hpp"
#include "bisplat/tape.hpp"

namespace bisplat {

struct RenderGrid {
  int n_az = 360;
  int n_el = 90;
  double az_step() const { return 360.0 / n_az; }
  double el_step() const { return 90.0 / n_el; }
  double az_center(int u) const { return (u + 0.5) * az_step(); }
  double el_center(int v) const { return (v + 0.5) * el_step(); }
};

// Stable ascending depth sort; nearer primitives blend first.
template <class T>
std::vector<int> sort_primitives(const std::vector<T>& depth) {
  for (size_t i = 0; i < depth.size(); ++i)
    if (std::isnan(double(depth[i])))
      throw RuntimeFailure(strf("sort_primitives: depth of primitive %zu is NaN", i));
  std::vector<int> perm(depth.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::stable_sort(perm.begin(), perm.end(),
                   [&](int a, int b) { return depth[a] < depth[b]; });
  return perm;
}

template <class T>
struct RasterPlan {
  RenderGrid grid;
  int tile = 16;
  bool cull = true;
  int n_tx = 0, n_ty = 0;
  int n_splats = 0;
  // depth-sorted copies
  std::vector<int> orig;
  std::vector<T> az, el, c11, c12, c22, alpha, cre, cim;
  std::vector<double> ha, he;  // 3-sigma half extents in degrees
  std::vector<std::vector<int32_t>> tile_splats;

  int tile_index(int tx, int ty) const { return tx * n_ty + ty; }
};

namespace detail {

template <class T>
void mark_tiles(RasterPlan<T>& plan, int sorted_idx, int u_lo, int u_hi, int v_lo, int v_hi) {
  const int ts = plan.tile;
  const int ty0 = v_lo / ts, ty1 = v_hi / ts;
  auto mark_cols = [&](int c0, int c1) {
    for (int tx = c0 / ts; tx <= c1 / ts; ++tx)
      for (int ty = ty0; ty <= ty1; ++ty)
        plan.tile_splats[plan.tile_index(tx, ty)].push_back(sorted_idx);
  };
  const int n_az = plan.grid.n_az;
  if (u_hi - u_lo + 1 >= n_az) {
    mark_cols(0, n_az - 1);
    return;
  }
  int start = u_lo % n_az;
  if (start < 0) start += n_az;
  const int len = u_hi - u_lo + 1;
  if (start + len <= n_az) {
    mark_cols(start, start + len - 1);
  } else {
    mark_cols(start, n_az - 1);
    mark_cols(0, start + len - 1 - n_az);
  }
}

}  // namespace detail

// Builds the depth-sorted splat list and per-tile index. Throws on NaN depth
// or a non-positive-definite conic (named by original primitive index).
template <class T>
RasterPlan<T> plan_raster(const std::vector<T>& az, const std::vector<T>& el,
                          const std::vector<T>& c11, const std::vector<T>& c12,
                          const std::vector<T>& c22, const std::vector<T>& alpha,
                          const std::vector<T>& cre, const std::vector<T>& cim,
                          const std::vector<T>& depth, RenderGrid grid, bool cull,
                          int tile = 16) {
  const int n = int(az.size());
  RasterPlan<T> plan;
  plan.grid = grid;
  plan.tile = tile;
  plan.cull = cull;
  plan.n_tx = (grid.n_az + tile - 1) / tile;
  plan.n_ty = (grid.n_el + tile - 1) / tile;
  plan.n_splats = n;
  plan.orig = sort_primitives(depth);
  plan.tile_splats.resize(size_t(plan.n_tx) * plan.n_ty);

  plan.az.resize(n);
  plan.el.resize(n);
  plan.c11.resize(n);
  plan.c12.resize(n);
  plan.c22.resize(n);
  plan.alpha.resize(n);
  plan.cre.resize(n);
  plan.cim.resize(n);
  plan.ha.resize(n);
  plan.he.resize(n);

  for (int s = 0; s < n; ++s) {
    const int i = plan.orig[s];
    plan.az[s] = az[i];
    plan.el[s] = el[i];
    plan.c11[s] = c11[i];
    plan.c12[s] = c12[i];
    plan.c22[s] = c22[i];
    plan.alpha[s] = alpha[i];
    plan.cre[s] = cre[i];
    plan.cim[s] = cim[i];
    const double det = double(c11[i]) * double(c22[i]) - double(c12[i]) * double(c12[i]);
    if (!(det > 0.0) || !(double(c11[i]) > 0.0))
      throw RuntimeFailure(strf("rasterize: conic of primitive %d is not positive definite", i));
    plan.ha[s] = 3.0 * std::sqrt(double(c22[i]) / det);
    plan.he[s] = 3.0 * std::sqrt(double(c11[i]) / det);
  }

  const double daz = grid.az_step(), del = grid.el_step();
  for (int s = 0; s < n; ++s) {
    if (!cull) {
      detail::mark_tiles(plan, s, 0, grid.n_az - 1, 0, grid.n_el - 1);
      continue;
    }
    const double mu_a = double(plan.az[s]), mu_e = double(plan.el[s]);
    const int u_lo = int(std::floor((mu_a - plan.ha[s]) / daz - 0.5));
    const int u_hi = int(std::ceil((mu_a + plan.ha[s]) / daz - 0.5));
    int v_lo = int(std::floor((mu_e - plan.he[s]) / del - 0.5));
    int v_hi = int(std::ceil((mu_e + plan.he[s]) / del - 0.5));
    v_lo = std::max(v_lo, 0);
    v_hi = std::min(v_hi, grid.n_el - 1);
    if (v_lo > v_hi) continue;
    detail::mark_tiles(plan, s, u_lo, u_hi, v_lo, v_hi);
  }
  return plan;
}

// Complex field, laid out (n_az, 2*n_el): row u holds [re(0..n_el) | im(0..n_el)].
template <class T>
std::vector<T> raster_forward(const RasterPlan<T>& plan) {
  const RenderGrid& g = plan.grid;
  std::vector<T> out(size_t(g.n_az) * 2 * g.n_el, T(0));
  const int n_tiles = plan.n_tx * plan.n_ty;
  parallel_for(n_tiles, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const auto& list = plan.tile_splats[t];
      if (list.empty()) continue;
      const int tx = int(t) / plan.n_ty, ty = int(t) % plan.n_ty;
      const int u0 = tx * plan.tile, u1 = std::min(g.n_az, u0 + plan.tile);
      const int v0 = ty * plan.tile, v1 = std::min(g.n_el, v0 + plan.tile);
      for (int u = u0; u < u1; ++u) {
        const double az_p = g.az_center(u);
        T* row = &out[size_t(u) * 2 * g.n_el];
        for (int v = v0; v < v1; ++v) {
          const double el_p = g.el_center(v);
          T acc_re = T(0), acc_im = T(0), trans = T(1);
          for (int32_t s : list) {
            const T da = T(wrap_delta_deg(az_p, double(plan.az[s])));
            const T de = T(el_p - double(plan.el[s]));
            if (plan.cull &&
                (std::abs(double(da)) > plan.ha[s] || std::abs(double(de)) > plan.he[s]))
              continue;
            const T q = plan.c11[s] * da * da + T(2) * plan.c12[s] * da * de +
                        plan.c22[s] * de * de;
            const T w = std::exp(T(-0.5) * q);
            const T m = plan.alpha[s] * w;
            acc_re += plan.cre[s] * m * trans;
            acc_im += plan.cim[s] * m * trans;
            trans *= (T(1) - m);
          }
          row[v] += acc_re;
          row[g.n_el + v] += acc_im;
        }
      }
    }
  });
  return out;
}

template <class T>
struct RasterGrads {
  // per original primitive
  std::vector<T> az, el, c11, c12, c22, alpha, cre, cim;
};

// Analytic adjoint of the blending recurrence. Transmittances are recomputed
// front-to-back per pixel; the suffix term uses the division-free recurrence
// B <- c*m + (1-m)*B. Per-tile accumulators are merged in tile index order.
template <class T>
RasterGrads<T> raster_backward(const RasterPlan<T>& plan, const std::vector<T>& upstream) {
  const RenderGrid& g = plan.grid;
  const int n = plan.n_splats;
  const int n_tiles = plan.n_tx * plan.n_ty;
  constexpr int K = 8;  // az, el, c11, c12, c22, alpha, cre, cim

  std::vector<std::vector<T>> tile_acc(n_tiles);

  struct Contrib {
    int32_t s;
    T m, w, da, de, trans;
  };

  parallel_for(n_tiles, [&](int64_t t0, int64_t t1) {
    std::vector<Contrib> stack;
    for (int64_t t = t0; t < t1; ++t) {
      const auto& list = plan.tile_splats[t];
      if (list.empty()) continue;
      auto& acc = tile_acc[t];
      acc.assign(size_t(n) * K, T(0));
      const int tx = int(t) / plan.n_ty, ty = int(t) % plan.n_ty;
      const int u0 = tx * plan.tile, u1 = std::min(g.n_az, u0 + plan.tile);
      const int v0 = ty * plan.tile, v1 = std::min(g.n_el, v0 + plan.tile);
      for (int u = u0; u < u1; ++u) {
        const double az_p = g.az_center(u);
        const T* urow = &upstream[size_t(u) * 2 * g.n_el];
        for (int v = v0; v < v1; ++v) {
          const T u_re = urow[v], u_im = urow[g.n_el + v];
          if (u_re == T(0) && u_im == T(0)) continue;
          const double el_p = g.el_center(v);
          stack.clear();
          T trans = T(1);
          for (int32_t s : list) {
            const T da = T(wrap_delta_deg(az_p, double(plan.az[s])));
            const T de = T(el_p - double(plan.el[s]));
            if (plan.cull &&
                (std::abs(double(da)) > plan.ha[s] || std::abs(double(de)) > plan.he[s]))
              continue;
            const T q = plan.c11[s] * da * da + T(2) * plan.c12[s] * da * de +
                        plan.c22[s] * de * de;
            const T w = std::exp(T(-0.5) * q);
            const T m = plan.alpha[s] * w;
            stack.push_back({s, m, w, da, de, trans});
            trans *= (T(1) - m);
          }
          T b_re = T(0), b_im = T(0);
          for (size_t k = stack.size(); k-- > 0;) {
            const Contrib& c = stack[k];
            const int32_t s = c.s;
            T* a = &acc[size_t(s) * K];
            const T mt = c.m * c.trans;
            // dL/dc (coefficient)
            a[6] += u_re * mt;
            a[7] += u_im * mt;
            // dL/dm with suffix recurrence
            const T dm = u_re * c.trans * (plan.cre[s] - b_re) +
                         u_im * c.trans * (plan.cim[s] - b_im);
            a[5] += dm * c.w;          // d alpha
            const T dw = dm * plan.alpha[s];
            const T dq = dw * T(-0.5) * c.w;
            const T dda = dq * T(2) * (plan.c11[s] * c.da + plan.c12[s] * c.de);
            const T dde = dq * T(2) * (plan.c22[s] * c.de + plan.c12[s] * c.da);
            a[0] -= dda;  // mean az
            a[1] -= dde;  // mean el
            a[2] += dq * c.da * c.da;
            a[3] += dq * T(2) * c.da * c.de;
            a[4] += dq * c.de * c.de;
            b_re = plan.cre[s] * c.m + (T(1) - c.m) * b_re;
            b_im = plan.cim[s] * c.m + (T(1) - c.m) * b_im;
          }
        }
      }
    }
  });

  RasterGrads<T> out;
  out.az.assign(n, T(0));
  out.el.assign(n, T(0));
  out.c11.assign(n, T(0));
  out.c12.assign(n, T(0));
  out.c22.assign(n, T(0));
  out.alpha.assign(n, T(0));
  out.cre.assign(n, T(0));
  out.cim.assign(n, T(0));
  for (int t = 0; t < n_tiles; ++t) {
    const auto& acc = tile_acc[t];
    if (acc.empty()) continue;
    for (int s = 0; s < n; ++s) {
      const int i = plan.orig[s];
      const T* a = &acc[size_t(s) * K];
      out.az[i] += a[0];
      out.el[i] += a[1];
      out.c11[i] += a[2];
      out.c12[i] += a[3];
      out.c22[i] += a[4];
      out.alpha[i] += a[5];
      out.cre[i] += a[6];
      out.cim[i] += a[7];
    }
  }
  return out;
}

// Tape op. Inputs are (N_p, 1) nodes; depth is a plain (non-differentiable)
// array used for ordering only. Output node is (n_az, 2*n_el).
template <class T>
int rasterize_node(Tape<T>& tape, int az, int el, int c11, int c12, int c22, int alpha,
                   int cre, int cim, const std::vector<T>& depth, RenderGrid grid, bool cull,
                   int tile = 16) {
  const int np = tape.rows(az);
  for (int id : {el, c11, c12, c22, alpha, cre, cim}) {
    if (tape.rows(id) != np || tape.cols(id) != 1)
      fail(strf("rasterize: expected (%d,1) inputs, got (%d,%d)", np, tape.rows(id),
                tape.cols(id)));
  }
  if (int(depth.size()) != np) fail("rasterize: depth length mismatch");

  auto plan = std::make_shared<RasterPlan<T>>(
      plan_raster(tape.val(az), tape.val(el), tape.val(c11), tape.val(c12), tape.val(c22),
                  tape.val(alpha), tape.val(cre), tape.val(cim), depth, grid, cull, tile));
  std::vector<T> field = raster_forward(*plan);

  return tape.custom(
      grid.n_az, 2 * grid.n_el, std::move(field), {az, el, c11, c12, c22, alpha, cre, cim},
      [az, el, c11, c12, c22, alpha, cre, cim, plan](Tape<T>& tp, int self) {
        RasterGrads<T> gr = raster_backward(*plan, tp.nodes[self].grad);
        auto scatter = [&](int node, const std::vector<T>& g) {
          if (T* p = tp.gptr(node)) {
            for (size_t i = 0; i < g.size(); ++i) p[i] += g[i];
          }
        };
        scatter(az, gr.az);
        scatter(el, gr.el);
        scatter(c11, gr.c11);
        scatter(c12, gr.c12);
        scatter(c22, gr.c22);
        scatter(alpha, gr.alpha);
        scatter(cre, gr.cre);
        scatter(cim, gr.cim);
      });
}

// P = Re^2 + Im^2 from a field node laid out (n_az, 2*n_el).
template <class T>
int power_node(Tape<T>& tape, int field, int n_el) {
  int re = tape.slice_cols(field, 0, n_el);
  int im = tape.slice_cols(field, n_el, 2 * n_el);
  return tape.add(tape.mul(re, re), tape.mul(im, im));
}

// Per-tile splat counts, row-major over (tile az, tile el); for perf dumps.
template <class T>
std::vector<int> tile_counts(const RasterPlan<T>& plan) {
  std::vector<int> counts(plan.tile_splats.size());
  for (size_t i = 0; i < counts.size(); ++i) counts[i] = int(plan.tile_splats[i].size());
  return counts;
}

}  // namespace bisplat
