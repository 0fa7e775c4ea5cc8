#pragma once
// f64 verification suites behind `bisplat verify`: finite-difference gradient
// checks on a tiny scene, rasterizer-vs-brute-force equivalence, bilinear
// tent properties, and SSIM unit checks against a naive reference.

#include <string>
#include <vector>

#include "bisplat/renderer.hpp"

namespace bisplat {
namespace verify {

struct SuiteResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

SuiteResult run_gradients();
SuiteResult run_bilinear();
SuiteResult run_raster();
SuiteResult run_ssim();
std::vector<SuiteResult> run_suite(const std::string& name);  // or "all"

// Independent per-pixel evaluation of the blending recurrence over all
// primitives (no tiles, no culling). The oracle the tiled path is checked
// against.
std::vector<double> raster_bruteforce(const std::vector<double>& az,
                                      const std::vector<double>& el,
                                      const std::vector<double>& c11,
                                      const std::vector<double>& c12,
                                      const std::vector<double>& c22,
                                      const std::vector<double>& alpha,
                                      const std::vector<double>& cre,
                                      const std::vector<double>& cim,
                                      const std::vector<double>& depth, RenderGrid grid);

// Direct windowed SSIM (no separable convolution), double precision.
double ssim_reference(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                      int window, double sigma, double k1 = 0.01, double k2 = 0.03,
                      double range = 1.0);

}  // namespace verify
}  // namespace bisplat
