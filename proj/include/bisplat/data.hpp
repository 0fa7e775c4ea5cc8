#pragma once
// Dataset ingestion (positions.csv + spectra/<id>.pgm|.f32 + optional
// split.csv), PGM/f32 spectrum formats, and the synthetic multipath oracle
// that beamforms ground-truth spectra for a point-scatterer scene.

#include <array>
#include <complex>
#include <string>

#include "bisplat/model.hpp"
#include "bisplat/tensor.hpp"

namespace bisplat {

struct Spectrum {
  int n_az = 360;
  int n_el = 90;
  std::vector<float> v;  // azimuth-major: v[u * n_el + e]

  Spectrum() : v(size_t(360) * 90, 0.f) {}
  Spectrum(int az, int el) : n_az(az), n_el(el), v(size_t(az) * el, 0.f) {}
  float& at(int u, int e) { return v[size_t(u) * n_el + e]; }
  float at(int u, int e) const { return v[size_t(u) * n_el + e]; }
};

// P5, maxval 255, width = n_el, height = n_az (row = elevation scanline per
// azimuth row). Values are value/255 on read and clamped*255 on write.
void write_pgm(const std::string& path, const Spectrum& s);
Spectrum read_pgm(const std::string& path);

// Raw little-endian f32, azimuth-major, 360*90 values unless stated.
void write_f32(const std::string& path, const Spectrum& s);
Spectrum read_f32(const std::string& path, int n_az = 360, int n_el = 90);

enum class SpectrumFormat : uint8_t { pgm, f32 };

struct TxSample {
  int64_t id = 0;
  std::array<double, 3> position{};
  std::string spectrum_path;
  SpectrumFormat format = SpectrumFormat::f32;
};

struct Dataset {
  std::string root;
  std::vector<TxSample> samples;
  std::vector<int> train_indices;
  std::vector<int> test_indices;
  TxBounds tx_bounds;  // over training positions

  Spectrum load_spectrum(int index) const;
};

// Eagerly validates layout and file headers; spectra load on demand.
// Split comes from split.csv when present, else a deterministic 80/20 hash.
Dataset load_dataset(const std::string& root);

struct Scatterer {
  std::array<double, 3> position{};
  std::complex<double> gain{1.0, 0.0};
};

struct SyntheticScene {
  std::vector<Scatterer> scatterers;
  int array_rows = 4, array_cols = 4;  // M x N uniform planar array
  double element_spacing = 0.163751;   // meters
  double wavelength = 0.327502;        // meters (915 MHz)
  std::array<double, 3> rx_origin{0, 0, 0};
  bool include_los = false;
  std::complex<double> los_gain{1.0, 0.0};
  std::array<double, 3> tx_region_lo{-2, -2, 0.5};
  std::array<double, 3> tx_region_hi{2, 2, 1.5};

  std::array<double, 3> element_position(int m, int n) const {
    return {rx_origin[0] + m * element_spacing, rx_origin[1] + n * element_spacing,
            rx_origin[2]};
  }
};

SyntheticScene load_scene(const std::string& path);
void save_scene(const std::string& path, const SyntheticScene& scene);

// Geometric phase shift of element (m,n) relative to element (0,0) for
// arrival direction (phi,theta); theta measured up from the horizon.
double steering_phase(int m, int n, double phi_deg, double theta_deg,
                      const SyntheticScene& scene);

// Beamformed spectrum for one TX position, max-normalized to [0,1].
// max_power receives the pre-normalization peak so raw power is recoverable.
Spectrum synth_spectrum(const SyntheticScene& scene, const std::array<double, 3>& tx,
                        double* max_power = nullptr, int n_az = 360, int n_el = 90);

// Writes a dataset in the load_dataset layout (f32 spectra, split.csv,
// norms.csv sidecar). Deterministic for a fixed seed.
void make_synthetic_dataset(const SyntheticScene& scene, int n_train, int n_test, uint64_t seed,
                            const std::string& out_dir);

}  // namespace bisplat
