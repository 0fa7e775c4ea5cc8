#include "bisplat/data.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace bisplat {

// ---------------------------------------------------------------- PGM / f32

void write_pgm(const std::string& path, const Spectrum& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(strf("cannot open '%s' for writing", path.c_str()));
  f << "P5\n" << s.n_el << " " << s.n_az << "\n255\n";
  std::vector<uint8_t> row(s.n_el);
  for (int u = 0; u < s.n_az; ++u) {
    for (int e = 0; e < s.n_el; ++e) {
      const float x = std::min(1.f, std::max(0.f, s.at(u, e)));
      row[e] = uint8_t(std::lround(x * 255.f));
    }
    f.write(reinterpret_cast<const char*>(row.data()), row.size());
  }
  if (!f) fail(strf("write failed for '%s'", path.c_str()));
}

namespace {

int pgm_token(std::istream& f, const std::string& path) {
  // skips whitespace and '#' comments
  for (;;) {
    int c = f.peek();
    if (c == '#') {
      std::string line;
      std::getline(f, line);
    } else if (std::isspace(c)) {
      f.get();
    } else {
      break;
    }
  }
  int v = -1;
  f >> v;
  if (!f || v < 0) fail(strf("'%s': malformed PGM header", path.c_str()));
  return v;
}

}  // namespace

Spectrum read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(strf("cannot open '%s'", path.c_str()));
  char magic[2] = {0, 0};
  f.read(magic, 2);
  if (magic[0] != 'P' || magic[1] != '5') fail(strf("'%s': not a binary PGM (P5)", path.c_str()));
  const int width = pgm_token(f, path);
  const int height = pgm_token(f, path);
  const int maxval = pgm_token(f, path);
  if (maxval != 255) fail(strf("'%s': unsupported maxval %d (want 255)", path.c_str(), maxval));
  f.get();  // single whitespace after maxval
  Spectrum s(height, width);
  std::vector<uint8_t> buf(size_t(width) * height);
  f.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (size_t(f.gcount()) != buf.size()) fail(strf("'%s': truncated PGM payload", path.c_str()));
  for (size_t i = 0; i < buf.size(); ++i) s.v[i] = float(buf[i]) / 255.f;
  return s;
}

void write_f32(const std::string& path, const Spectrum& s) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(strf("cannot open '%s' for writing", path.c_str()));
  f.write(reinterpret_cast<const char*>(s.v.data()), s.v.size() * sizeof(float));
  if (!f) fail(strf("write failed for '%s'", path.c_str()));
}

Spectrum read_f32(const std::string& path, int n_az, int n_el) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(strf("cannot open '%s'", path.c_str()));
  Spectrum s(n_az, n_el);
  f.read(reinterpret_cast<char*>(s.v.data()), s.v.size() * sizeof(float));
  if (size_t(f.gcount()) != s.v.size() * sizeof(float))
    fail(strf("'%s': expected %zu f32 values", path.c_str(), s.v.size()));
  char extra;
  if (f.read(&extra, 1))
    fail(strf("'%s': file longer than %zu f32 values", path.c_str(), s.v.size()));
  return s;
}

// ------------------------------------------------------------------ dataset

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

uint64_t id_hash(int64_t id) {
  Rng r(uint64_t(id) + 0x5851f42d4c957f2dull);
  return r.next_u64();
}

void validate_spectrum_file(const TxSample& s) {
  if (s.format == SpectrumFormat::f32) {
    std::error_code ec;
    const auto size = fs::file_size(s.spectrum_path, ec);
    if (ec) fail(strf("sample %lld: cannot stat '%s'", (long long)s.id, s.spectrum_path.c_str()));
    const size_t want = size_t(360) * 90 * sizeof(float);
    if (size != want)
      fail(strf("sample %lld: '%s' is %llu bytes, want %zu (360x90 f32)", (long long)s.id,
                s.spectrum_path.c_str(), (unsigned long long)size, want));
    return;
  }
  std::ifstream f(s.spectrum_path, std::ios::binary);
  char magic[2] = {0, 0};
  f.read(magic, 2);
  if (!f || magic[0] != 'P' || magic[1] != '5')
    fail(strf("sample %lld: '%s' is not a binary PGM", (long long)s.id, s.spectrum_path.c_str()));
  const int width = pgm_token(f, s.spectrum_path);
  const int height = pgm_token(f, s.spectrum_path);
  if (width != 90 || height != 360)
    fail(strf("sample %lld: '%s' is %dx%d, want 90x360", (long long)s.id,
              s.spectrum_path.c_str(), width, height));
}

}  // namespace

Spectrum Dataset::load_spectrum(int index) const {
  const TxSample& s = samples.at(index);
  return s.format == SpectrumFormat::f32 ? read_f32(s.spectrum_path) : read_pgm(s.spectrum_path);
}

Dataset load_dataset(const std::string& root) {
  const fs::path base(root);
  const fs::path positions = base / "positions.csv";
  if (!fs::exists(positions)) fail(strf("dataset: missing '%s'", positions.string().c_str()));

  Dataset ds;
  ds.root = root;

  std::ifstream f(positions);
  std::string line;
  if (!std::getline(f, line) || split_csv_line(line) != std::vector<std::string>{"id", "x", "y", "z"})
    fail(strf("dataset: '%s' must start with header id,x,y,z", positions.string().c_str()));
  std::vector<std::string> missing;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 4)
      fail(strf("dataset: malformed positions row '%s'", line.c_str()));
    TxSample s;
    try {
      s.id = std::stoll(cells[0]);
      s.position = {std::stod(cells[1]), std::stod(cells[2]), std::stod(cells[3])};
    } catch (const std::exception&) {
      fail(strf("dataset: malformed positions row '%s'", line.c_str()));
    }
    if (!std::isfinite(s.position[0]) || !std::isfinite(s.position[1]) ||
        !std::isfinite(s.position[2]))
      fail(strf("dataset: sample %lld has a non-finite position", (long long)s.id));
    const fs::path pgm = base / "spectra" / (std::to_string(s.id) + ".pgm");
    const fs::path f32 = base / "spectra" / (std::to_string(s.id) + ".f32");
    if (fs::exists(pgm)) {
      s.format = SpectrumFormat::pgm;
      s.spectrum_path = pgm.string();
    } else if (fs::exists(f32)) {
      s.format = SpectrumFormat::f32;
      s.spectrum_path = f32.string();
    } else {
      missing.push_back(std::to_string(s.id));
      continue;
    }
    validate_spectrum_file(s);
    ds.samples.push_back(std::move(s));
  }
  if (!missing.empty()) {
    std::string list;
    for (size_t i = 0; i < missing.size() && i < 16; ++i) list += (i ? "," : "") + missing[i];
    if (missing.size() > 16) list += ",...";
    fail(strf("dataset: %zu ids have no spectrum file: %s", missing.size(), list.c_str()));
  }
  if (ds.samples.empty()) fail(strf("dataset: '%s' has no samples", root.c_str()));

  std::unordered_map<int64_t, int> by_id;
  for (size_t i = 0; i < ds.samples.size(); ++i) by_id[ds.samples[i].id] = int(i);

  const fs::path split = base / "split.csv";
  if (fs::exists(split)) {
    std::ifstream sf(split);
    if (!std::getline(sf, line) || split_csv_line(line) != std::vector<std::string>{"id", "split"})
      fail(strf("dataset: '%s' must start with header id,split", split.string().c_str()));
    std::vector<bool> assigned(ds.samples.size(), false);
    while (std::getline(sf, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv_line(line);
      if (cells.size() != 2) fail(strf("dataset: malformed split row '%s'", line.c_str()));
      const auto it = by_id.find(std::stoll(cells[0]));
      if (it == by_id.end())
        fail(strf("dataset: split id %s not present in positions.csv", cells[0].c_str()));
      if (assigned[it->second])
        fail(strf("dataset: split lists id %s twice", cells[0].c_str()));
      assigned[it->second] = true;
      if (cells[1] == "train") {
        ds.train_indices.push_back(it->second);
      } else if (cells[1] == "test") {
        ds.test_indices.push_back(it->second);
      } else {
        fail(strf("dataset: split value '%s' is neither train nor test", cells[1].c_str()));
      }
    }
    const size_t covered = ds.train_indices.size() + ds.test_indices.size();
    if (covered != ds.samples.size())
      fail(strf("dataset: split covers %zu of %zu samples", covered, ds.samples.size()));
  } else {
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      if (id_hash(ds.samples[i].id) % 10 < 8)
        ds.train_indices.push_back(int(i));
      else
        ds.test_indices.push_back(int(i));
    }
  }

  const auto& seed_pos = ds.samples[ds.train_indices.empty() ? 0 : ds.train_indices[0]].position;
  ds.tx_bounds.lo = seed_pos;
  ds.tx_bounds.hi = seed_pos;
  for (int i : ds.train_indices) {
    for (int a = 0; a < 3; ++a) {
      ds.tx_bounds.lo[a] = std::min(ds.tx_bounds.lo[a], ds.samples[i].position[a]);
      ds.tx_bounds.hi[a] = std::max(ds.tx_bounds.hi[a], ds.samples[i].position[a]);
    }
  }
  return ds;
}

// -------------------------------------------------------------- scene files

namespace {

std::array<double, 3> parse_vec3(const std::string& s, const std::string& key) {
  std::istringstream in(s);
  std::array<double, 3> v{};
  char comma;
  if (!(in >> v[0] >> comma >> v[1] >> comma >> v[2]))
    fail(strf("scene: cannot parse '%s' as x,y,z for key '%s'", s.c_str(), key.c_str()));
  return v;
}

}  // namespace

SyntheticScene load_scene(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(strf("scene: cannot open '%s'", path.c_str()));
  SyntheticScene scene;
  scene.scatterers.clear();
  bool region_lo = false, region_hi = false;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      fail(strf("scene: '%s' line %d: expected key=value", path.c_str(), lineno));
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "lambda") {
        scene.wavelength = std::stod(val);
      } else if (key == "spacing") {
        scene.element_spacing = std::stod(val);
      } else if (key == "rows") {
        scene.array_rows = std::stoi(val);
      } else if (key == "cols") {
        scene.array_cols = std::stoi(val);
      } else if (key == "rx") {
        scene.rx_origin = parse_vec3(val, key);
      } else if (key == "los") {
        scene.include_los = std::stoi(val) != 0;
      } else if (key == "los_gain") {
        std::istringstream in(val);
        double re, im;
        char comma;
        if (!(in >> re >> comma >> im)) fail(strf("scene: bad los_gain '%s'", val.c_str()));
        scene.los_gain = {re, im};
      } else if (key == "region_lo") {
        scene.tx_region_lo = parse_vec3(val, key);
        region_lo = true;
      } else if (key == "region_hi") {
        scene.tx_region_hi = parse_vec3(val, key);
        region_hi = true;
      } else if (key == "scatterer") {
        std::istringstream in(val);
        Scatterer sc;
        double re, im;
        char c;
        if (!(in >> sc.position[0] >> c >> sc.position[1] >> c >> sc.position[2] >> c >> re >>
              c >> im))
          fail(strf("scene: bad scatterer '%s' (want x,y,z,re,im)", val.c_str()));
        sc.gain = {re, im};
        scene.scatterers.push_back(sc);
      } else {
        fail(strf("scene: '%s' line %d: unknown key '%s'", path.c_str(), lineno, key.c_str()));
      }
    } catch (const Error&) {
      throw;
    } catch (const std::exception&) {
      fail(strf("scene: '%s' line %d: cannot parse value '%s'", path.c_str(), lineno,
                val.c_str()));
    }
  }
  if (scene.array_rows < 1 || scene.array_cols < 1) fail("scene: array must be at least 1x1");
  if (scene.wavelength <= 0 || scene.element_spacing <= 0)
    fail("scene: lambda and spacing must be positive");
  if (scene.scatterers.empty()) fail(strf("scene: '%s' lists no scatterers", path.c_str()));
  if (region_lo != region_hi) fail("scene: region_lo and region_hi must both be given");
  return scene;
}

void save_scene(const std::string& path, const SyntheticScene& scene) {
  std::ofstream f(path);
  if (!f) fail(strf("scene: cannot open '%s' for writing", path.c_str()));
  f << "lambda = " << scene.wavelength << "\n";
  f << "spacing = " << scene.element_spacing << "\n";
  f << "rows = " << scene.array_rows << "\n";
  f << "cols = " << scene.array_cols << "\n";
  f << strf("rx = %g,%g,%g\n", scene.rx_origin[0], scene.rx_origin[1], scene.rx_origin[2]);
  f << "los = " << (scene.include_los ? 1 : 0) << "\n";
  f << strf("region_lo = %g,%g,%g\n", scene.tx_region_lo[0], scene.tx_region_lo[1],
            scene.tx_region_lo[2]);
  f << strf("region_hi = %g,%g,%g\n", scene.tx_region_hi[0], scene.tx_region_hi[1],
            scene.tx_region_hi[2]);
  for (const auto& s : scene.scatterers)
    f << strf("scatterer = %g,%g,%g,%g,%g\n", s.position[0], s.position[1], s.position[2],
              s.gain.real(), s.gain.imag());
}

// ------------------------------------------------------------ synth oracle

double steering_phase(int m, int n, double phi_deg, double theta_deg,
                      const SyntheticScene& scene) {
  if (m < 0 || m >= scene.array_rows || n < 0 || n >= scene.array_cols)
    fail(strf("steering_phase: element (%d,%d) outside %dx%d array", m, n, scene.array_rows,
              scene.array_cols));
  const double phi = phi_deg * M_PI / 180.0;
  const double theta = theta_deg * M_PI / 180.0;
  return 2.0 * M_PI / scene.wavelength * scene.element_spacing * std::cos(theta) *
         (m * std::cos(phi) + n * std::sin(phi));
}

namespace {

double dist(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

Spectrum synth_spectrum(const SyntheticScene& scene, const std::array<double, 3>& tx,
                        double* max_power, int n_az, int n_el) {
  if (scene.scatterers.empty()) fail("synth_spectrum: scene has no scatterers");
  const int M = scene.array_rows, N = scene.array_cols;
  const double lam = scene.wavelength;

  // Received complex signal per element: two-hop paths TX -> scatterer ->
  // element with 1/r amplitude decay per hop, plus an optional LOS term.
  std::vector<std::complex<double>> y(size_t(M) * N);
  for (int m = 0; m < M; ++m) {
    for (int n = 0; n < N; ++n) {
      const auto pe = scene.element_position(m, n);
      std::complex<double> acc{0, 0};
      for (const auto& sc : scene.scatterers) {
        const double d1 = dist(tx, sc.position);
        const double d2 = dist(sc.position, pe);
        if (d1 < 1e-9 || d2 < 1e-9)
          fail(strf("synth_spectrum: scatterer at (%g,%g,%g) coincides with TX or an element",
                    sc.position[0], sc.position[1], sc.position[2]));
        const double phase = -2.0 * M_PI * (d1 + d2) / lam;
        acc += sc.gain * std::polar(1.0 / (d1 * d2), phase);
      }
      if (scene.include_los) {
        const double d = dist(tx, pe);
        if (d < 1e-9) fail("synth_spectrum: TX coincides with an array element");
        acc += scene.los_gain * std::polar(1.0 / d, -2.0 * M_PI * d / lam);
      }
      y[size_t(m) * N + n] = acc;
    }
  }

  Spectrum s(n_az, n_el);
  const double daz = 360.0 / n_az, del = 90.0 / n_el;
  const double k_el = 2.0 * M_PI / lam * scene.element_spacing;
  std::vector<double> raw(size_t(n_az) * n_el);
  parallel_for(n_az, [&](int64_t u0, int64_t u1) {
    for (int64_t u = u0; u < u1; ++u) {
      const double phi = (double(u) + 0.5) * daz * M_PI / 180.0;
      const double cp = std::cos(phi), sp = std::sin(phi);
      for (int e = 0; e < n_el; ++e) {
        const double theta = (e + 0.5) * del * M_PI / 180.0;
        const double ct = std::cos(theta);
        std::complex<double> acc{0, 0};
        for (int m = 0; m < M; ++m) {
          for (int n = 0; n < N; ++n) {
            const double dphase = k_el * ct * (m * cp + n * sp);
            acc += y[size_t(m) * N + n] * std::polar(1.0, -dphase);
          }
        }
        raw[size_t(u) * n_el + e] = std::norm(acc) / double(M * N);
      }
    }
  });

  double peak = 0.0;
  for (double p : raw) peak = std::max(peak, p);
  if (max_power) *max_power = peak;
  const double inv = peak > 0.0 ? 1.0 / peak : 0.0;
  for (size_t i = 0; i < raw.size(); ++i) s.v[i] = float(raw[i] * inv);
  return s;
}

void make_synthetic_dataset(const SyntheticScene& scene, int n_train, int n_test, uint64_t seed,
                            const std::string& out_dir) {
  if (n_train < 1 || n_test < 1) fail("make_synthetic_dataset: counts must be >= 1");
  const fs::path base(out_dir);
  std::error_code ec;
  fs::create_directories(base / "spectra", ec);
  if (ec) fail(strf("cannot create '%s': %s", (base / "spectra").string().c_str(),
                    ec.message().c_str()));

  std::ofstream pos(base / "positions.csv");
  std::ofstream split(base / "split.csv");
  std::ofstream norms(base / "norms.csv");
  if (!pos || !split || !norms) fail(strf("cannot write dataset files under '%s'", out_dir.c_str()));
  pos << "id,x,y,z\n";
  split << "id,split\n";
  norms << "id,max_power\n";

  Rng rng(seed);
  const int total = n_train + n_test;
  for (int i = 0; i < total; ++i) {
    std::array<double, 3> tx{};
    for (int a = 0; a < 3; ++a)
      tx[a] = rng.uniform(scene.tx_region_lo[a], scene.tx_region_hi[a]);
    double peak = 0.0;
    const Spectrum s = synth_spectrum(scene, tx, &peak);
    const int64_t id = i + 1;
    write_f32((base / "spectra" / (std::to_string(id) + ".f32")).string(), s);
    pos << strf("%lld,%.17g,%.17g,%.17g\n", (long long)id, tx[0], tx[1], tx[2]);
    split << id << "," << (i < n_train ? "train" : "test") << "\n";
    norms << strf("%lld,%.17g\n", (long long)id, peak);
  }
}

}  // namespace bisplat
