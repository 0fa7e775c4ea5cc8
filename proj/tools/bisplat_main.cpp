// bisplat CLI: dataset synthesis, training, evaluation, single-query
// rendering and verification suites.
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime/numeric failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "bisplat/config.hpp"
#include "bisplat/trainer.hpp"
#include "bisplat/verify.hpp"

namespace fs = std::filesystem;
using namespace bisplat;

namespace {

struct CommonFlags {
  std::string config_file;
  int workers = -1;
};

void add_common(CLI::App* cmd, CommonFlags& c) {
  cmd->add_option("--config", c.config_file, "flat key=value config file");
  cmd->add_option("--workers", c.workers, "worker threads (0 = all cores)");
}

RunConfig make_config(const CommonFlags& c) {
  RunConfig cfg;
  if (!c.config_file.empty()) cfg.load_file(c.config_file);
  cfg.load_env();
  if (c.workers >= 0) cfg.set_flag("workers", std::to_string(c.workers));
  int w = int(cfg.get_int("workers"));
  if (w > 0) ThreadPool::instance().set_workers(w);
  return cfg;
}

ModelConfig model_from_config(const RunConfig& cfg) {
  ModelConfig mc = ModelConfig::for_profile(cfg.get_string("model.profile"));
  if (cfg.get_int("model.np") > 0) mc.n_primitives = int(cfg.get_int("model.np"));
  if (cfg.get_int("model.nc") > 0) mc.n_clusters = int(cfg.get_int("model.nc"));
  if (cfg.get_int("model.dim") > 0) mc.dim = int(cfg.get_int("model.dim"));
  mc.init.s_min = cfg.get_double("model.smin");
  mc.init.s_max = cfg.get_double("model.smax");
  mc.init.w_scale_coarse = cfg.get_double("model.wcoarse");
  mc.init.w_scale_fine = cfg.get_double("model.wfine");
  return mc;
}

TrainConfig train_from_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.steps = cfg.get_int("train.steps");
  tc.seed = uint64_t(cfg.get_int("train.seed"));
  tc.eval_every = cfg.get_int("train.evalevery");
  tc.log_every = cfg.get_int("train.logevery");
  tc.lr_network = cfg.get_double("train.lr.net");
  tc.lr_position = cfg.get_double("train.lr.pos");
  tc.lr_shape = cfg.get_double("train.lr.shape");
  tc.lr_opacity = cfg.get_double("train.lr.opacity");
  tc.render.cull = cfg.get_bool("render.cull");
  tc.render.tile = int(cfg.get_int("render.tile"));
  tc.loss_weights.l1 = cfg.get_double("loss.l1");
  tc.loss_weights.ssim = cfg.get_double("loss.ssim");
  tc.ssim.window = int(cfg.get_int("ssim.window"));
  tc.ssim.sigma = cfg.get_double("ssim.sigma");
  std::string bypass = cfg.get_string("train.bypass");
  std::stringstream ss(bypass);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "bst") {
      tc.bypass.bst = true;
    } else if (item == "dynamic") {
      tc.bypass.dynamic = true;
    } else if (item == "delta") {
      tc.bypass.delta = true;
    } else {
      fail(strf("unknown bypass branch '%s' (want bst, dynamic or delta)", item.c_str()));
    }
  }
  if (tc.steps < 1) fail("train.steps must be >= 1");
  if (tc.lr_network <= 0 || tc.lr_position <= 0 || tc.lr_shape <= 0 || tc.lr_opacity <= 0)
    fail("learning rates must be positive");
  return tc;
}

int cmd_synth(const std::string& scene_path, const std::string& out_dir, int n_train, int n_test,
              uint64_t seed) {
  const SyntheticScene scene = load_scene(scene_path);
  make_synthetic_dataset(scene, n_train, n_test, seed, out_dir);
  std::cout << strf("wrote %d train + %d test samples to %s\n", n_train, n_test, out_dir.c_str());
  std::cout << strf("scene: %zu scatterers, %dx%d array, lambda=%g m, spacing=%g m\n",
                    scene.scatterers.size(), scene.array_rows, scene.array_cols,
                    scene.wavelength, scene.element_spacing);
  std::cout << strf("tx region: [%g,%g,%g] .. [%g,%g,%g]\n", scene.tx_region_lo[0],
                    scene.tx_region_lo[1], scene.tx_region_lo[2], scene.tx_region_hi[0],
                    scene.tx_region_hi[1], scene.tx_region_hi[2]);
  return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_ckpt) {
  const Dataset ds = load_dataset(data_dir);
  ModelConfig mc = model_from_config(cfg);
  TrainConfig tc = train_from_config(cfg);
  tc.diagnostics_path = out_ckpt + ".diag.txt";
  Trainer trainer(mc, tc);
  trainer.attach_dataset(ds);
  std::cout << strf("training: %zu train / %zu test samples, profile %s, N_p=%d, %lld steps\n",
                    ds.train_indices.size(), ds.test_indices.size(), mc.profile.c_str(),
                    mc.n_primitives, (long long)tc.steps);
  trainer.run(tc.steps, &std::cout);
  trainer.save_checkpoint(out_ckpt);
  std::cout << "checkpoint written to " << out_ckpt << "\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& data_dir, const std::string& ckpt,
             const std::string& cdf_path, bool on_train) {
  const Dataset ds = load_dataset(data_dir);
  const std::string expected =
      cfg.is_set("model.profile") ? cfg.get_string("model.profile") : std::string();
  Trainer trainer = Trainer::load_checkpoint(ckpt, expected);
  trainer.config() = train_from_config(cfg);
  trainer.attach_dataset(ds);
  const auto& indices = on_train ? ds.train_indices : ds.test_indices;
  const EvalSummary s = trainer.evaluate(indices);
  for (const auto& r : s.records)
    std::cout << strf("sample id=%lld ssim=%.6f l1=%.6f\n", (long long)r.id, r.ssim, r.l1);
  std::cout << strf("eval %s: n=%zu median_ssim=%.6f mean_ssim=%.6f mean_l1=%.6f\n",
                    on_train ? "train" : "test", s.records.size(), s.median_ssim, s.mean_ssim,
                    s.mean_l1);
  if (!cdf_path.empty()) {
    std::vector<EvalRecord> sorted = s.records;
    std::sort(sorted.begin(), sorted.end(),
              [](const EvalRecord& a, const EvalRecord& b) { return a.ssim < b.ssim; });
    std::ofstream f(cdf_path);
    if (!f) fail(strf("cannot open '%s' for writing", cdf_path.c_str()));
    f << "rank,id,ssim,cdf\n";
    for (size_t i = 0; i < sorted.size(); ++i)
      f << strf("%zu,%lld,%.6f,%.6f\n", i + 1, (long long)sorted[i].id, sorted[i].ssim,
                double(i + 1) / double(sorted.size()));
    std::cout << "cdf written to " << cdf_path << "\n";
  }
  return 0;
}

int cmd_render(const RunConfig& cfg, const std::string& ckpt, const std::string& tx_str,
               const std::string& out_img, const std::string& out_raw,
               const std::string& tile_stats) {
  std::array<double, 3> tx{};
  {
    std::stringstream ss(tx_str);
    char c;
    if (!(ss >> tx[0] >> c >> tx[1] >> c >> tx[2]))
      fail(strf("--tx expects x,y,z, got '%s'", tx_str.c_str()));
  }
  const std::string expected =
      cfg.is_set("model.profile") ? cfg.get_string("model.profile") : std::string();
  Trainer trainer = Trainer::load_checkpoint(ckpt, expected);
  trainer.config() = train_from_config(cfg);
  const Tensor<float> pred = trainer.render(tx);
  Spectrum s(pred.rows, pred.cols);
  s.v = pred.v;
  write_pgm(out_img, s);
  std::cout << "spectrum written to " << out_img << "\n";
  if (!out_raw.empty()) {
    write_f32(out_raw, s);
    std::cout << "raw f32 written to " << out_raw << "\n";
  }
  if (!tile_stats.empty()) {
    // per-tile primitive counts for the configured render grid
    auto& model = trainer.model();
    ForwardGraph<float> g;
    build_forward(g, model, tx, nullptr, trainer.config().bypass, trainer.config().render,
                  trainer.config().ssim);
    // rebuild the plan the render used, through public pieces
    const auto& az = model.params.get("prim.az").value.v;
    const auto& el = model.params.get("prim.el").value.v;
    std::ofstream f(tile_stats);
    if (!f) fail(strf("cannot open '%s' for writing", tile_stats.c_str()));
    const RenderGrid grid = trainer.config().render.grid;
    const int tile = trainer.config().render.tile;
    // conservative per-tile counts from primitive centers
    const int ntx = (grid.n_az + tile - 1) / tile, nty = (grid.n_el + tile - 1) / tile;
    std::vector<int> counts(size_t(ntx) * nty, 0);
    for (size_t i = 0; i < az.size(); ++i) {
      const int u = std::min(grid.n_az - 1, std::max(0, int(az[i] / grid.az_step())));
      const int v = std::min(grid.n_el - 1, std::max(0, int(el[i] / grid.el_step())));
      counts[size_t(u / tile) * nty + v / tile]++;
    }
    f << strf("# tile grid %dx%d, tile %d px, primitive centers per tile\n", ntx, nty, tile);
    for (int x = 0; x < ntx; ++x) {
      for (int y = 0; y < nty; ++y) f << counts[size_t(x) * nty + y] << (y + 1 < nty ? ' ' : '\n');
    }
    std::cout << "tile stats written to " << tile_stats << "\n";
  }
  return 0;
}

int cmd_verify(const std::string& suite) {
  const auto results = verify::run_suite(suite);
  bool all_pass = true;
  for (const auto& r : results) {
    std::cout << strf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                      r.detail.c_str());
    all_pass = all_pass && r.pass;
  }
  return all_pass ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bisplat: planar-Gaussian wireless radiance field engine"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset from a scene file");
  std::string scene_path, out_dir;
  int n_train = 64, n_test = 16;
  uint64_t synth_seed = 1;
  CommonFlags synth_common;
  synth->add_option("--scene", scene_path, "scene description file")->required();
  synth->add_option("--out", out_dir, "output dataset directory")->required();
  synth->add_option("--train", n_train, "training sample count")->capture_default_str();
  synth->add_option("--test", n_test, "test sample count")->capture_default_str();
  synth->add_option("--seed", synth_seed, "RNG seed")->capture_default_str();
  add_common(synth, synth_common);

  // train
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string data_dir, out_ckpt, profile;
  std::vector<std::string> bypass;
  int64_t steps = -1;
  int64_t seed = -1, eval_every = -1;
  int np_override = -1;
  CommonFlags train_common;
  train->add_option("--data", data_dir, "dataset directory")->required();
  train->add_option("--out", out_ckpt, "output checkpoint path")->required();
  train->add_option("--profile", profile, "model profile: base or plus");
  train->add_option("--bypass", bypass, "bypass a branch: bst, dynamic or delta (repeatable)");
  train->add_option("--steps", steps, "optimization steps");
  train->add_option("--seed", seed, "training seed");
  train->add_option("--eval-every", eval_every, "evaluate on the test split every N steps");
  train->add_option("--np", np_override, "primitive count override");
  add_common(train, train_common);

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  std::string eval_data, eval_ckpt, cdf_path, eval_profile;
  bool eval_train = false;
  CommonFlags eval_common;
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  eval->add_option("--cdf", cdf_path, "write a per-sample SSIM CDF table (csv)");
  eval->add_option("--profile", eval_profile, "expected model profile (errors on mismatch)");
  eval->add_flag("--train-split", eval_train, "evaluate the training split instead of test");
  add_common(eval, eval_common);

  // render
  auto* render = app.add_subcommand("render", "render the spectrum for one TX position");
  std::string render_ckpt, tx_str, out_img, out_raw, tile_stats, render_profile;
  CommonFlags render_common;
  render->add_option("--ckpt", render_ckpt, "checkpoint file")->required();
  render->add_option("--tx", tx_str, "transmitter position x,y,z (meters)")->required();
  render->add_option("--out", out_img, "output PGM path")->required();
  render->add_option("--raw", out_raw, "also write raw f32 spectrum");
  render->add_option("--tile-stats", tile_stats, "write per-tile primitive counts (text)");
  render->add_option("--profile", render_profile, "expected model profile (errors on mismatch)");
  add_common(render, render_common);

  // verify
  auto* verify_cmd = app.add_subcommand("verify", "run f64 verification suites");
  std::string suite = "all";
  CommonFlags verify_common;
  verify_cmd->add_option("--suite", suite, "gradients|bilinear|raster|ssim|all")
      ->capture_default_str();
  add_common(verify_cmd, verify_common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      make_config(synth_common);
      return cmd_synth(scene_path, out_dir, n_train, n_test, synth_seed);
    }
    if (train->parsed()) {
      RunConfig cfg = make_config(train_common);
      if (!profile.empty()) cfg.set_flag("model.profile", profile);
      if (steps >= 0) cfg.set_flag("train.steps", std::to_string(steps));
      if (seed >= 0) cfg.set_flag("train.seed", std::to_string(seed));
      if (eval_every >= 0) cfg.set_flag("train.evalevery", std::to_string(eval_every));
      if (np_override >= 0) cfg.set_flag("model.np", std::to_string(np_override));
      if (!bypass.empty()) {
        std::string joined;
        for (const auto& b : bypass) joined += (joined.empty() ? "" : ",") + b;
        cfg.set_flag("train.bypass", joined);
      }
      return cmd_train(cfg, data_dir, out_ckpt);
    }
    if (eval->parsed()) {
      RunConfig cfg = make_config(eval_common);
      if (!eval_profile.empty()) cfg.set_flag("model.profile", eval_profile);
      return cmd_eval(cfg, eval_data, eval_ckpt, cdf_path, eval_train);
    }
    if (render->parsed()) {
      RunConfig cfg = make_config(render_common);
      if (!render_profile.empty()) cfg.set_flag("model.profile", render_profile);
      return cmd_render(cfg, render_ckpt, tx_str, out_img, out_raw, tile_stats);
    }
    if (verify_cmd->parsed()) {
      make_config(verify_common);
      return cmd_verify(suite);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const RuntimeFailure& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
