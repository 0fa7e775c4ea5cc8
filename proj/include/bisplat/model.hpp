#pragma once
// Primitive set: raw learnable parameterization, stratified initialization,
// covariance decoding and per-query attribute offsets.
//
// Scales live in log domain and opacity in logit domain, so optimizer steps
// and offsets cannot leave the feasible region.

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "bisplat/common.hpp"

namespace bisplat {

enum class ScaleGroup : uint8_t { coarse = 0, fine = 1 };

struct InitConfig {
  double s_min = 0.5;  // degrees on the angular plane
  double s_max = 8.0;
  double coarse_fraction = 0.30;
  double coarse_depth_min = 20.0, coarse_depth_max = 50.0;
  double fine_depth_min = 1.0, fine_depth_max = 20.0;
  double opacity = 0.3;
  double w_scale_coarse = 0.3;
  double w_scale_fine = 1.0;
};

struct PrimitiveSet {
  int count = 0;
  std::vector<double> azimuth_deg;    // [0, 360)
  std::vector<double> elevation_deg;  // [0, 90]
  std::vector<double> depth;          // (0.1, 100)
  std::vector<double> log_scale_x;
  std::vector<double> log_scale_y;
  std::vector<double> rotation_rad;  // [0, pi) at init, free afterwards
  std::vector<double> opacity_logit;
  std::vector<ScaleGroup> group;
  std::vector<double> w_scale;
};

struct Mat2 {
  double m00 = 0, m01 = 0, m10 = 0, m11 = 0;
};

struct DeltaSet {
  std::vector<double> d_rotation;
  std::vector<double> d_log_scale_x;
  std::vector<double> d_log_scale_y;
  std::vector<double> d_opacity_logit;
};

struct EffectiveAttributes {
  int count = 0;
  std::vector<double> azimuth_deg;
  std::vector<double> elevation_deg;
  std::vector<double> depth;
  std::vector<Mat2> covariance;
  std::vector<double> alpha;
  std::vector<std::complex<double>> coef;
};

inline double logit(double p) { return std::log(p / (1.0 - p)); }
inline double logistic_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Sigma = R(rho) diag(sx^2, sy^2) R(rho)^T
inline Mat2 covariance_from_params(double s_x, double s_y, double rho) {
  const double c = std::cos(rho), s = std::sin(rho);
  const double a = s_x * s_x, b = s_y * s_y;
  Mat2 m;
  m.m00 = a * c * c + b * s * s;
  m.m01 = (a - b) * s * c;
  m.m10 = m.m01;
  m.m11 = a * s * s + b * c * c;
  return m;
}

// Depth-stratified random initialization. The first round(0.3*n) primitives
// form the coarse group; scale shrinks with normalized depth.
inline PrimitiveSet init_primitives(int n_total, uint64_t seed, const InitConfig& cfg) {
  if (n_total < 1) fail("init_primitives: n_total must be >= 1");
  if (cfg.s_min <= 0 || cfg.s_min > cfg.s_max)
    fail(strf("init_primitives: invalid scale bounds s_min=%g s_max=%g", cfg.s_min, cfg.s_max));

  PrimitiveSet p;
  p.count = n_total;
  p.azimuth_deg.resize(n_total);
  p.elevation_deg.resize(n_total);
  p.depth.resize(n_total);
  p.log_scale_x.resize(n_total);
  p.log_scale_y.resize(n_total);
  p.rotation_rad.resize(n_total);
  p.opacity_logit.resize(n_total);
  p.group.resize(n_total);
  p.w_scale.resize(n_total);

  const int n_coarse = int(std::lround(cfg.coarse_fraction * n_total));
  Rng rng(seed);
  const double op_logit = logit(cfg.opacity);
  for (int i = 0; i < n_total; ++i) {
    const bool coarse = i < n_coarse;
    p.group[i] = coarse ? ScaleGroup::coarse : ScaleGroup::fine;
    p.w_scale[i] = coarse ? cfg.w_scale_coarse : cfg.w_scale_fine;
    p.azimuth_deg[i] = rng.uniform(0.0, 360.0);
    p.elevation_deg[i] = rng.uniform(0.0, 90.0);
    const double d = coarse ? rng.uniform(cfg.coarse_depth_min, cfg.coarse_depth_max)
                            : rng.uniform(cfg.fine_depth_min, cfg.fine_depth_max);
    p.depth[i] = d;
    const double z_norm = (d - 0.1) / (100.0 - 0.1);
    const double s_base = cfg.s_min + (cfg.s_max - cfg.s_min) * std::exp(-z_norm);
    p.log_scale_x[i] = std::log(rng.uniform(1.0, 1.5) * s_base);
    p.log_scale_y[i] = std::log(rng.uniform(1.0, 1.5) * s_base);
    p.rotation_rad[i] = rng.uniform(0.0, M_PI);
    p.opacity_logit[i] = op_logit;
  }
  return p;
}

// Offsets are additive in the stored log/logit domain; positions and depths
// are untouched by offsets.
inline EffectiveAttributes apply_offsets(const PrimitiveSet& base, const DeltaSet& deltas,
                                         const std::vector<std::complex<double>>& coefficients) {
  const size_t n = size_t(base.count);
  if (deltas.d_rotation.size() != n || deltas.d_log_scale_x.size() != n ||
      deltas.d_log_scale_y.size() != n || deltas.d_opacity_logit.size() != n)
    fail(strf("apply_offsets: delta length does not match primitive count %zu", n));
  if (coefficients.size() != n)
    fail(strf("apply_offsets: coefficient length %zu does not match primitive count %zu",
              coefficients.size(), n));

  EffectiveAttributes e;
  e.count = base.count;
  e.azimuth_deg = base.azimuth_deg;
  e.elevation_deg = base.elevation_deg;
  e.depth = base.depth;
  e.covariance.resize(n);
  e.alpha.resize(n);
  e.coef = coefficients;
  for (size_t i = 0; i < n; ++i) {
    const double sx = std::exp(base.log_scale_x[i] + deltas.d_log_scale_x[i]);
    const double sy = std::exp(base.log_scale_y[i] + deltas.d_log_scale_y[i]);
    const double rho = base.rotation_rad[i] + deltas.d_rotation[i];
    e.covariance[i] = covariance_from_params(sx, sy, rho);
    e.alpha[i] = logistic_d(base.opacity_logit[i] + deltas.d_opacity_logit[i]);
  }
  return e;
}

// Normalization applied before positional encoding.
inline std::array<double, 3> normalize_primitive_coords(double az_deg, double el_deg, double depth) {
  return {az_deg / 180.0 - 1.0, el_deg / 45.0 - 1.0, 2.0 * (depth - 0.1) / 99.9 - 1.0};
}

struct TxBounds {
  std::array<double, 3> lo{0, 0, 0};
  std::array<double, 3> hi{1, 1, 1};

  std::array<double, 3> normalize(const std::array<double, 3>& x) const {
    std::array<double, 3> t{};
    for (int a = 0; a < 3; ++a) {
      const double ext = hi[a] - lo[a];
      t[a] = ext > 1e-9 ? 2.0 * (x[a] - lo[a]) / ext - 1.0 : 0.0;
    }
    return t;
  }
};

}  // namespace bisplat
