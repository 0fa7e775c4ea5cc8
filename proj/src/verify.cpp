#include "bisplat/verify.hpp"

#include "bisplat/pipeline.hpp"

namespace bisplat {
namespace verify {

namespace {

// relative error with a floor, so gradients below the finite-difference
// noise floor are compared absolutely
double guarded_rel_err(double a, double fd) {
  return std::fabs(a - fd) / std::max({1e-3, std::fabs(a), std::fabs(fd)});
}

struct TinySetup {
  Model<double> model;
  BypassFlags bypass;
  RenderOptions render;
  SsimConfig ssim;
  LossWeights weights;
  Spectrum target;
  std::array<double, 3> tx{0.4, -0.3, 0.9};
};

TinySetup make_tiny_setup() {
  ModelConfig mc;
  mc.n_primitives = 8;
  mc.n_clusters = 4;
  mc.dim = 8;
  mc.ffn = {2, 16};
  mc.attn = {2, 2, 16};

  TinySetup s{Model<double>::create(mc, 11)};
  s.render.grid = {36, 9};
  s.render.cull = false;  // exact support for finite differences
  s.ssim.window = 5;      // the 36x9 grid cannot host the 11x11 window
  s.model.tx_bounds.lo = {-1, -1, 0};
  s.model.tx_bounds.hi = {1, 1, 2};

  SyntheticScene scene;
  scene.scatterers = {{{1.2, 0.4, 0.9}, {1.0, 0.2}},
                      {{-0.8, 1.0, 1.3}, {0.6, -0.4}},
                      {{0.2, -1.1, 0.7}, {0.8, 0.1}}};
  s.target = synth_spectrum(scene, s.tx, nullptr, 36, 9);

  // widen initial splats so several primitives overlap most pixels
  for (auto& x : s.model.params.get("prim.logsx").value.v) x = std::log(14.0);
  for (auto& x : s.model.params.get("prim.logsy").value.v) x = std::log(10.0);
  return s;
}

double eval_loss(TinySetup& s) {
  ForwardGraph<double> g;
  build_forward(g, s.model, s.tx, &s.target, s.bypass, s.render, s.ssim, s.weights);
  return g.tape.val(g.loss)[0];
}

}  // namespace

std::vector<double> raster_bruteforce(const std::vector<double>& az,
                                      const std::vector<double>& el,
                                      const std::vector<double>& c11,
                                      const std::vector<double>& c12,
                                      const std::vector<double>& c22,
                                      const std::vector<double>& alpha,
                                      const std::vector<double>& cre,
                                      const std::vector<double>& cim,
                                      const std::vector<double>& depth, RenderGrid grid) {
  const auto order = sort_primitives(depth);
  std::vector<double> out(size_t(grid.n_az) * 2 * grid.n_el, 0.0);
  for (int u = 0; u < grid.n_az; ++u) {
    const double az_p = grid.az_center(u);
    for (int v = 0; v < grid.n_el; ++v) {
      const double el_p = grid.el_center(v);
      double re = 0, im = 0, trans = 1;
      for (int i : order) {
        const double da = wrap_delta_deg(az_p, az[i]);
        const double de = el_p - el[i];
        const double q = c11[i] * da * da + 2.0 * c12[i] * da * de + c22[i] * de * de;
        const double w = std::exp(-0.5 * q);
        const double m = alpha[i] * w;
        re += cre[i] * m * trans;
        im += cim[i] * m * trans;
        trans *= 1.0 - m;
      }
      out[size_t(u) * 2 * grid.n_el + v] = re;
      out[size_t(u) * 2 * grid.n_el + grid.n_el + v] = im;
    }
  }
  return out;
}

double ssim_reference(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                      int window, double sigma, double k1, double k2, double range) {
  const auto taps = gaussian_taps(window, sigma);
  const double c1 = (k1 * range) * (k1 * range), c2 = (k2 * range) * (k2 * range);
  const int hv = h - window + 1, wv = w - window + 1;
  double total = 0.0;
  for (int i = 0; i < hv; ++i) {
    for (int j = 0; j < wv; ++j) {
      double mu1 = 0, mu2 = 0, m11 = 0, m22 = 0, m12 = 0;
      for (int dy = 0; dy < window; ++dy) {
        for (int dx = 0; dx < window; ++dx) {
          const double g = taps[dy] * taps[dx];
          const double x = a[size_t(i + dy) * w + (j + dx)];
          const double y = b[size_t(i + dy) * w + (j + dx)];
          mu1 += g * x;
          mu2 += g * y;
          m11 += g * x * x;
          m22 += g * y * y;
          m12 += g * x * y;
        }
      }
      const double s11 = m11 - mu1 * mu1, s22 = m22 - mu2 * mu2, s12 = m12 - mu1 * mu2;
      total += ((2 * mu1 * mu2 + c1) * (2 * s12 + c2)) /
               ((mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2));
    }
  }
  return total / double(hv * wv);
}

SuiteResult run_gradients() {
  SuiteResult res{"gradients"};
  TinySetup s = make_tiny_setup();

  ForwardGraph<double> g;
  build_forward(g, s.model, s.tx, &s.target, s.bypass, s.render, s.ssim, s.weights);
  g.tape.backward(g.loss);

  const double h = 1e-4;
  double max_err = 0.0;
  std::string worst;
  int checked = 0;
  Rng pick(17);
  for (auto& e : s.model.params.entries()) {
    const auto it = g.leaves.ids.find(e.name);
    if (it == g.leaves.ids.end()) fail(strf("gradients: '%s' untouched by graph", e.name.c_str()));
    const auto& analytic = g.tape.grad(it->second);
    std::vector<size_t> idx;
    if (e.value.size() <= 16) {
      for (size_t i = 0; i < e.value.size(); ++i) idx.push_back(i);
    } else {
      for (int k = 0; k < 8; ++k) idx.push_back(size_t(pick.next_below(int64_t(e.value.size()))));
    }
    for (size_t i : idx) {
      const double x0 = e.value.v[i];
      e.value.v[i] = x0 + h;
      const double fp = eval_loss(s);
      e.value.v[i] = x0 - h;
      const double fm = eval_loss(s);
      e.value.v[i] = x0;
      const double fd = (fp - fm) / (2 * h);
      const double err = guarded_rel_err(analytic[i], fd);
      ++checked;
      if (err > max_err) {
        max_err = err;
        worst = strf("%s[%zu] analytic=%.8g fd=%.8g", e.name.c_str(), i, analytic[i], fd);
      }
    }
  }

  // rasterizer-level check with free coefficient leaves (the mix output is a
  // derived quantity in the full pipeline)
  double raster_max = 0.0;
  {
    const int np = 3;
    RenderGrid grid{12, 6};
    Rng rng(23);
    auto rnd = [&](double lo, double hi) {
      Tensor<double> t(np, 1);
      for (auto& x : t.v) x = rng.uniform(lo, hi);
      return t;
    };
    Tensor<double> taz = rnd(0, 360), tel = rnd(10, 80), tdep = rnd(1, 50);
    Tensor<double> tal = rnd(0.2, 0.8), tre = rnd(-1, 1), tim = rnd(-1, 1);
    Tensor<double> t11(np, 1), t12(np, 1), t22(np, 1);
    for (int i = 0; i < np; ++i) {
      const Mat2 cov = covariance_from_params(rng.uniform(8, 20), rng.uniform(8, 20),
                                              rng.uniform(0, M_PI));
      const double det = cov.m00 * cov.m11 - cov.m01 * cov.m01;
      t11.v[i] = cov.m11 / det;
      t12.v[i] = -cov.m01 / det;
      t22.v[i] = cov.m00 / det;
    }
    Tensor<double> target(grid.n_az, grid.n_el);
    for (auto& x : target.v) x = rng.uniform(0, 1);
    SsimConfig scfg;
    scfg.window = 5;

    std::vector<Tensor<double>*> leaves_v = {&taz, &tel, &t11, &t12, &t22, &tal, &tre, &tim};
    const char* names[] = {"az", "el", "c11", "c12", "c22", "alpha", "cre", "cim"};
    auto run = [&]() {
      Tape<double> tape;
      std::vector<int> ids;
      for (auto* t : leaves_v) ids.push_back(tape.leaf(*t));
      int field = rasterize_node(tape, ids[0], ids[1], ids[2], ids[3], ids[4], ids[5], ids[6],
                                 ids[7], tdep.v, grid, false);
      int loss = composite_loss_node(tape, power_node(tape, field, grid.n_el),
                                     tape.constant(target), scfg);
      return std::make_tuple(std::move(tape), ids, loss);
    };
    auto [tape, ids, loss] = run();
    tape.backward(loss);
    for (size_t t = 0; t < leaves_v.size(); ++t) {
      const auto analytic = tape.grad(ids[t]);
      for (int i = 0; i < np; ++i) {
        const double x0 = leaves_v[t]->v[i];
        leaves_v[t]->v[i] = x0 + h;
        auto [tp1, id1, l1] = run();
        leaves_v[t]->v[i] = x0 - h;
        auto [tp2, id2, l2] = run();
        leaves_v[t]->v[i] = x0;
        const double fd = (tp1.val(l1)[0] - tp2.val(l2)[0]) / (2 * h);
        const double err = guarded_rel_err(analytic[i], fd);
        ++checked;
        if (err > raster_max) raster_max = err;
        if (err > max_err) {
          max_err = err;
          worst = strf("raster %s[%d] analytic=%.8g fd=%.8g", names[t], i, analytic[i], fd);
        }
      }
    }
  }

  res.pass = max_err < 1e-4;
  res.detail = strf(
      "%d scalars checked (N_p=8, N_c=4, 36x9 spectrum, f64, h=1e-4, ssim window 5); "
      "max rel err %.3g (raster-level %.3g); worst: %s",
      checked, max_err, raster_max, worst.c_str());
  return res;
}

SuiteResult run_bilinear() {
  SuiteResult res{"bilinear"};
  const ClusterGrid grid = ClusterGrid::make(64);
  double max_pou = 0.0;
  Rng rng(5);
  for (int k = 0; k < 2000; ++k) {
    const double phi = rng.uniform(0, 360);
    const double theta = rng.uniform(0.5 * grid.dtheta, 90 - 0.5 * grid.dtheta);
    std::array<TentSupport, 4> sup;
    const int n = tent_neighbors(phi, theta, grid, sup);
    double sum = 0;
    for (int i = 0; i < n; ++i) sum += sup[i].w;
    max_pou = std::max(max_pou, std::fabs(sum - 1.0));
  }

  const double w_wrap = bilinear_weight(355, 30, 0, 30, grid);
  const double wrap_err = std::fabs(w_wrap - 0.888888888888889);

  // constant-feature fixed points of aggregate and distribute
  const int np = 40, dim = 5;
  std::vector<double> phi(np), theta(np);
  for (int i = 0; i < np; ++i) {
    phi[i] = rng.uniform(0, 360);
    theta[i] = rng.uniform(0, 90);
  }
  Tape<double> tape;
  Tensor<double> taz(np, 1), tel(np, 1);
  for (int i = 0; i < np; ++i) {
    taz.v[i] = phi[i];
    tel.v[i] = theta[i];
  }
  Tensor<double> feat(np, dim);
  for (int i = 0; i < np; ++i)
    for (int d = 0; d < dim; ++d) feat.at(i, d) = 3.0 + d;
  int az = tape.constant(taz), el = tape.constant(tel);
  int agg = bilinear_aggregate(tape, tape.constant(feat), az, el, grid);
  double max_fix = 0.0;
  const auto& gv = tape.val(agg);
  const auto sets = membership(grid, phi, theta);
  for (int j = 0; j < grid.n_clusters; ++j) {
    bool nonzero = false;
    for (int d = 0; d < dim; ++d) nonzero = nonzero || gv[size_t(j) * dim + d] != 0.0;
    if (!nonzero) continue;
    for (int d = 0; d < dim; ++d)
      max_fix = std::max(max_fix, std::fabs(gv[size_t(j) * dim + d] - (3.0 + d)));
  }
  Tensor<double> cfeat(grid.n_clusters, dim);
  for (int j = 0; j < grid.n_clusters; ++j)
    for (int d = 0; d < dim; ++d) cfeat.at(j, d) = 7.0 - d;
  int dist = bilinear_distribute(tape, tape.constant(cfeat), az, el, grid);
  const auto& fv = tape.val(dist);
  for (int i = 0; i < np; ++i)
    for (int d = 0; d < dim; ++d)
      max_fix = std::max(max_fix, std::fabs(fv[size_t(i) * dim + d] - (7.0 - d)));

  res.pass = max_pou < 1e-6 && wrap_err < 1e-4 && max_fix < 1e-6;
  res.detail = strf(
      "partition-of-unity max err %.3g (interior, 2000 samples); wrap weight %.6f (err %.3g); "
      "constant fixed-point max err %.3g",
      max_pou, w_wrap, wrap_err, max_fix);
  return res;
}

SuiteResult run_raster() {
  SuiteResult res{"raster"};
  Rng rng(31);
  double max_diff = 0.0;
  for (int scene = 0; scene < 50; ++scene) {
    const int np = 1 + int(rng.next_below(32));
    std::vector<double> az(np), el(np), c11(np), c12(np), c22(np), alpha(np), cre(np), cim(np),
        depth(np);
    for (int i = 0; i < np; ++i) {
      az[i] = rng.uniform(0, 360);
      el[i] = rng.uniform(0, 90);
      depth[i] = rng.uniform(0.5, 60);
      alpha[i] = rng.uniform(0.05, 0.95);
      cre[i] = rng.uniform(-1, 1);
      cim[i] = rng.uniform(-1, 1);
      const Mat2 cov = covariance_from_params(rng.uniform(0.8, 12), rng.uniform(0.8, 12),
                                              rng.uniform(0, M_PI));
      const double det = cov.m00 * cov.m11 - cov.m01 * cov.m01;
      c11[i] = cov.m11 / det;
      c12[i] = -cov.m01 / det;
      c22[i] = cov.m00 / det;
    }
    RenderGrid grid{90, 30};
    auto plan = plan_raster(az, el, c11, c12, c22, alpha, cre, cim, depth, grid,
                            /*cull=*/false, /*tile=*/16);
    const auto tiled = raster_forward(plan);
    const auto oracle = raster_bruteforce(az, el, c11, c12, c22, alpha, cre, cim, depth, grid);
    for (size_t i = 0; i < tiled.size(); ++i)
      max_diff = std::max(max_diff, std::fabs(tiled[i] - oracle[i]));
  }
  res.pass = max_diff < 1e-6;
  res.detail = strf("50 random scenes (<=32 primitives, culling off): max abs diff vs "
                    "brute force %.3g",
                    max_diff);
  return res;
}

SuiteResult run_ssim() {
  SuiteResult res{"ssim"};
  Rng rng(41);
  const int h = 360, w = 90;

  double ident_err = 0.0;
  {
    std::vector<float> img(size_t(h) * w);
    for (auto& x : img) x = float(rng.uniform(0, 1));
    SsimConfig cfg;
    ident_err = std::fabs(ssim_eval(img.data(), img.data(), h, w, cfg) - 1.0);
  }

  // constant images have the closed form (2ab+C1)/(a^2+b^2+C1)
  double const_err = 0.0;
  {
    SsimConfig cfg;
    for (auto [a, b] : {std::pair<double, double>{1.0, 0.0}, {0.3, 0.7}, {0.5, 0.5}}) {
      std::vector<float> xa(size_t(h) * w, float(a)), xb(size_t(h) * w, float(b));
      const double got = ssim_eval(xa.data(), xb.data(), h, w, cfg);
      const double want = (2 * a * b + cfg.c1()) / (a * a + b * b + cfg.c1());
      const_err = std::max(const_err, std::fabs(got - want));
    }
  }

  double ref_err = 0.0;
  {
    SsimConfig cfg;
    for (uint64_t seed : {101, 202, 303}) {
      Rng r(seed);
      std::vector<double> a(size_t(h) * w), b(size_t(h) * w);
      std::vector<float> af(a.size()), bf(b.size());
      for (size_t i = 0; i < a.size(); ++i) {
        a[i] = r.uniform(0, 1);
        b[i] = std::min(1.0, std::max(0.0, a[i] + r.uniform(-0.2, 0.2)));
        af[i] = float(a[i]);
        bf[i] = float(b[i]);
      }
      // reference runs on the same f32-quantized inputs the metric sees
      for (size_t i = 0; i < a.size(); ++i) {
        a[i] = af[i];
        b[i] = bf[i];
      }
      const double got = ssim_eval(af.data(), bf.data(), h, w, cfg);
      const double want = ssim_reference(a, b, h, w, cfg.window, cfg.sigma);
      ref_err = std::max(ref_err, std::fabs(got - want));
    }
  }

  res.pass = ident_err < 1e-9 && const_err < 1e-9 && ref_err < 1e-6;
  res.detail = strf("identity err %.3g; constant closed-form err %.3g; naive-reference err %.3g",
                    ident_err, const_err, ref_err);
  return res;
}

std::vector<SuiteResult> run_suite(const std::string& name) {
  if (name == "gradients") return {run_gradients()};
  if (name == "bilinear") return {run_bilinear()};
  if (name == "raster") return {run_raster()};
  if (name == "ssim") return {run_ssim()};
  if (name == "all") return {run_gradients(), run_bilinear(), run_raster(), run_ssim()};
  fail(strf("verify: unknown suite '%s' (want gradients|bilinear|raster|ssim|all)", name.c_str()));
}

}  // namespace verify
}  // namespace bisplat
