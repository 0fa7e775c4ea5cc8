#pragma once
// Composite training loss 0.7*L1 + 0.3*(1 - SSIM) and evaluation metrics.
// SSIM uses a normalized Gaussian window and valid-region convolution, so
// padding never contributes.

#include "bisplat/tape.hpp"

namespace bisplat {

struct SsimConfig {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double dynamic_range = 1.0;

  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct LossWeights {
  double l1 = 0.7;
  double ssim = 0.3;
};

// 1-D Gaussian taps normalized to sum 1; the 2-D window is the outer product,
// so it also sums to 1.
inline std::vector<double> gaussian_taps(int window, double sigma) {
  if (window < 1 || window % 2 == 0) fail(strf("ssim: window must be odd and >= 1, got %d", window));
  std::vector<double> g(window);
  const int c = window / 2;
  double sum = 0.0;
  for (int i = 0; i < window; ++i) {
    g[i] = std::exp(-double((i - c) * (i - c)) / (2.0 * sigma * sigma));
    sum += g[i];
  }
  for (auto& x : g) x /= sum;
  return g;
}

namespace detail {

// Separable valid convolution: rows pass then columns pass.
template <class T>
void blur_valid(const T* x, int h, int w, const std::vector<double>& taps, std::vector<T>& out,
                std::vector<T>& scratch) {
  const int k = int(taps.size());
  const int wv = w - k + 1, hv = h - k + 1;
  scratch.assign(size_t(h) * wv, T(0));
  parallel_for(h, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* row = x + size_t(i) * w;
      T* orow = &scratch[size_t(i) * wv];
      for (int j = 0; j < wv; ++j) {
        T acc = T(0);
        for (int t = 0; t < k; ++t) acc += T(taps[t]) * row[j + t];
        orow[j] = acc;
      }
    }
  });
  out.assign(size_t(hv) * wv, T(0));
  parallel_for(hv, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* orow = &out[size_t(i) * wv];
      for (int t = 0; t < k; ++t) {
        const T g = T(taps[t]);
        const T* srow = &scratch[size_t(i + t) * wv];
        for (int j = 0; j < wv; ++j) orow[j] += g * srow[j];
      }
    }
  });
}

// Adjoint of blur_valid: scatter the valid-region gradient back through both
// passes (full correlation with the same taps).
template <class T>
void blur_valid_adjoint(const T* up, int h, int w, const std::vector<double>& taps,
                        std::vector<T>& gx, std::vector<T>& scratch) {
  const int k = int(taps.size());
  const int wv = w - k + 1, hv = h - k + 1;
  scratch.assign(size_t(h) * wv, T(0));
  // columns pass adjoint: rows of scratch gather from valid rows
  parallel_for(h, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      T* srow = &scratch[size_t(i) * wv];
      for (int t = 0; t < k; ++t) {
        const int64_t r = i - t;
        if (r < 0 || r >= hv) continue;
        const T g = T(taps[t]);
        const T* urow = up + size_t(r) * wv;
        for (int j = 0; j < wv; ++j) srow[j] += g * urow[j];
      }
    }
  });
  gx.assign(size_t(h) * w, T(0));
  parallel_for(h, [&](int64_t i0, int64_t i1) {
    for (int64_t i = i0; i < i1; ++i) {
      const T* srow = &scratch[size_t(i) * wv];
      T* grow = &gx[size_t(i) * w];
      for (int j = 0; j < wv; ++j) {
        const T u = srow[j];
        if (u == T(0)) continue;
        for (int t = 0; t < k; ++t) grow[j + t] += T(taps[t]) * u;
      }
    }
  });
}

}  // namespace detail

// Graph op: valid Gaussian blur of an (h,w) node.
template <class T>
int blur_node(Tape<T>& tape, int x, const std::vector<double>& taps) {
  const int h = tape.rows(x), w = tape.cols(x);
  const int k = int(taps.size());
  if (h < k || w < k)
    fail(strf("ssim: image (%d,%d) smaller than %dx%d window", h, w, k, k));
  std::vector<T> out, scratch;
  detail::blur_valid(tape.val(x).data(), h, w, taps, out, scratch);
  return tape.custom(h - k + 1, w - k + 1, std::move(out), {x},
                     [x, taps, h, w](Tape<T>& tp, int self) {
                       if (T* gx = tp.gptr(x)) {
                         std::vector<T> g, scratch;
                         detail::blur_valid_adjoint(tp.nodes[self].grad.data(), h, w, taps, g,
                                                    scratch);
                         for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                       }
                     });
}

// Mean local SSIM between a predicted node and a constant target node.
template <class T>
int ssim_node(Tape<T>& tape, int pred, int target, const SsimConfig& cfg) {
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  const T c1 = T(cfg.c1()), c2 = T(cfg.c2());
  int mu1 = blur_node(tape, pred, taps);
  int mu2 = blur_node(tape, target, taps);
  int s11 = tape.sub(blur_node(tape, tape.mul(pred, pred), taps), tape.mul(mu1, mu1));
  int s22 = tape.sub(blur_node(tape, tape.mul(target, target), taps), tape.mul(mu2, mu2));
  int s12 = tape.sub(blur_node(tape, tape.mul(pred, target), taps), tape.mul(mu1, mu2));
  int num = tape.mul(tape.affine(tape.mul(mu1, mu2), T(2), c1), tape.affine(s12, T(2), c2));
  int den = tape.mul(tape.affine(tape.add(tape.mul(mu1, mu1), tape.mul(mu2, mu2)), T(1), c1),
                     tape.affine(tape.add(s11, s22), T(1), c2));
  return tape.reduce_mean(tape.div(num, den));
}

template <class T>
int l1_node(Tape<T>& tape, int pred, int target) {
  return tape.reduce_mean(tape.abs_(tape.sub(pred, target)));
}

// 0.7*L1 + 0.3*(1 - SSIM)
template <class T>
int composite_loss_node(Tape<T>& tape, int pred, int target, const SsimConfig& cfg,
                        const LossWeights& w = {}) {
  int l1 = l1_node(tape, pred, target);
  int ds = tape.affine(ssim_node(tape, pred, target, cfg), T(-1), T(1));
  return tape.add(tape.affine(l1, T(w.l1), T(0)), tape.affine(ds, T(w.ssim), T(0)));
}

// --- plain (double) evaluation used for metrics -------------------------------

inline double ssim_eval(const float* a, const float* b, int h, int w, const SsimConfig& cfg) {
  const auto taps = gaussian_taps(cfg.window, cfg.sigma);
  const int k = cfg.window;
  if (h < k || w < k) fail(strf("ssim: image (%d,%d) smaller than %dx%d window", h, w, k, k));
  const size_t nn = size_t(h) * w;
  std::vector<double> xa(nn), xb(nn), xaa(nn), xbb(nn), xab(nn);
  for (size_t i = 0; i < nn; ++i) {
    xa[i] = a[i];
    xb[i] = b[i];
    xaa[i] = xa[i] * xa[i];
    xbb[i] = xb[i] * xb[i];
    xab[i] = xa[i] * xb[i];
  }
  std::vector<double> mu1, mu2, m11, m22, m12, scratch;
  detail::blur_valid(xa.data(), h, w, taps, mu1, scratch);
  detail::blur_valid(xb.data(), h, w, taps, mu2, scratch);
  detail::blur_valid(xaa.data(), h, w, taps, m11, scratch);
  detail::blur_valid(xbb.data(), h, w, taps, m22, scratch);
  detail::blur_valid(xab.data(), h, w, taps, m12, scratch);
  const double c1 = cfg.c1(), c2 = cfg.c2();
  double sum = 0.0;
  for (size_t i = 0; i < mu1.size(); ++i) {
    const double s11 = m11[i] - mu1[i] * mu1[i];
    const double s22 = m22[i] - mu2[i] * mu2[i];
    const double s12 = m12[i] - mu1[i] * mu2[i];
    const double num = (2.0 * mu1[i] * mu2[i] + c1) * (2.0 * s12 + c2);
    const double den = (mu1[i] * mu1[i] + mu2[i] * mu2[i] + c1) * (s11 + s22 + c2);
    sum += num / den;
  }
  return sum / double(mu1.size());
}

inline double l1_eval(const float* a, const float* b, size_t n) {
  double sum = 0.0;
  for (size_t i = 0; i < n; ++i) sum += std::fabs(double(a[i]) - double(b[i]));
  return sum / double(n);
}

inline double median_of(std::vector<double> v) {
  if (v.empty()) fail("median: empty input");
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace bisplat
