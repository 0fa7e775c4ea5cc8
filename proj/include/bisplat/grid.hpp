#pragma once
// Fixed angular cluster grid with periodic azimuth and tent (bilinear)
// weights. Azimuth columns sit at j*dphi; elevation rows at cell centers
// (j+0.5)*dtheta, which keeps every in-domain elevation inside some tent.

#include <array>
#include <cmath>
#include <vector>

#include "bisplat/common.hpp"

namespace bisplat {

struct ClusterGrid {
  int n_clusters = 64;
  int side = 8;
  double dphi = 45.0;
  double dtheta = 11.25;

  static ClusterGrid make(int n_clusters) {
    int side = int(std::lround(std::sqrt(double(n_clusters))));
    if (side < 2 || side * side != n_clusters)
      fail(strf("cluster grid: %d is not a square number >= 4", n_clusters));
    ClusterGrid g;
    g.n_clusters = n_clusters;
    g.side = side;
    g.dphi = 360.0 / side;
    g.dtheta = 90.0 / side;
    return g;
  }

  double az_of(int col) const { return col * dphi; }
  double el_of(int row) const { return (row + 0.5) * dtheta; }
  int cluster_index(int col, int row) const { return col * side + row; }
};

// min(|a-b|, 360-|a-b|)
inline double azimuth_distance(double a, double b) {
  double d = std::fabs(std::fmod(a - b, 360.0));
  if (d > 180.0) d = 360.0 - d;
  return d;
}

// signed wrapped difference a-b in (-180, 180]
inline double wrap_delta_deg(double a, double b) {
  double d = std::fmod(a - b, 360.0);
  if (d <= -180.0) d += 360.0;
  if (d > 180.0) d -= 360.0;
  return d;
}

inline double bilinear_weight(double phi_i, double theta_i, double phi_j, double theta_j,
                              const ClusterGrid& g) {
  const double wphi = std::max(0.0, 1.0 - azimuth_distance(phi_i, phi_j) / g.dphi);
  const double wth = std::max(0.0, 1.0 - std::fabs(theta_i - theta_j) / g.dtheta);
  return wphi * wth;
}

// One grid point supporting a primitive, with the tent value and its
// derivative w.r.t. the primitive coordinates. Only w > 0 entries are listed.
struct TentSupport {
  int cluster = 0;
  double w = 0.0;
  double dw_dphi = 0.0;
  double dw_dtheta = 0.0;
};

// Up to 4 supporting grid points (2 azimuth columns x up to 2 elevation rows).
inline int tent_neighbors(double phi, double theta, const ClusterGrid& g,
                          std::array<TentSupport, 4>& out) {
  const int S = g.side;
  double p = phi / g.dphi;
  p -= std::floor(p / S) * S;  // into [0, S)
  const int c0 = int(p) % S;
  const int c1 = (c0 + 1) % S;

  int count = 0;
  for (int ci : {c0, c1}) {
    const double raw = wrap_delta_deg(phi, g.az_of(ci));
    const double ad = std::fabs(raw);
    const double wphi = 1.0 - ad / g.dphi;
    if (wphi <= 0.0) continue;
    // d|raw|/dphi; 0 exactly at the peak
    const double dsign = raw > 0.0 ? 1.0 : (raw < 0.0 ? -1.0 : 0.0);
    const double dwphi = -dsign / g.dphi;
    for (int ri : {int(std::floor(theta / g.dtheta - 0.5)), int(std::floor(theta / g.dtheta - 0.5)) + 1}) {
      if (ri < 0 || ri >= S) continue;
      const double dth = theta - g.el_of(ri);
      const double wth = 1.0 - std::fabs(dth) / g.dtheta;
      if (wth <= 0.0) continue;
      const double tsign = dth > 0.0 ? 1.0 : (dth < 0.0 ? -1.0 : 0.0);
      TentSupport s;
      s.cluster = g.cluster_index(ci, ri);
      s.w = wphi * wth;
      s.dw_dphi = dwphi * wth;
      s.dw_dtheta = wphi * (-tsign / g.dtheta);
      out[count++] = s;
    }
  }
  return count;
}

// Membership sets S_j: i belongs to j iff the periodic azimuth distance is
// within dphi and the elevation distance within dtheta (boundaries included).
inline std::vector<std::vector<int>> membership(const ClusterGrid& g,
                                                const std::vector<double>& phi,
                                                const std::vector<double>& theta) {
  std::vector<std::vector<int>> sets(g.n_clusters);
  for (int j = 0; j < g.n_clusters; ++j) {
    const int col = j / g.side, row = j % g.side;
    const double pj = g.az_of(col), tj = g.el_of(row);
    for (size_t i = 0; i < phi.size(); ++i) {
      if (azimuth_distance(phi[i], pj) <= g.dphi && std::fabs(theta[i] - tj) <= g.dtheta)
        sets[j].push_back(int(i));
    }
  }
  return sets;
}

}  // namespace bisplat
