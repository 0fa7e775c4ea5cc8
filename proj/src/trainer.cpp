#include "bisplat/trainer.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <ostream>

namespace bisplat {

namespace {

constexpr char kMagic[4] = {'B', 'S', 'W', 'F'};
constexpr uint32_t kVersion = 1;
constexpr int kCacheLimit = 1024;

void put_u32(std::ostream& f, uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& f, uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& f, const std::string& s) {
  put_u32(f, uint32_t(s.size()));
  f.write(s.data(), s.size());
}

uint32_t get_u32(std::istream& f, const char* what) {
  uint32_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 4)) fail(strf("checkpoint: truncated at %s", what));
  return v;
}
uint64_t get_u64(std::istream& f, const char* what) {
  uint64_t v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 8)) fail(strf("checkpoint: truncated at %s", what));
  return v;
}
double get_f64(std::istream& f, const char* what) {
  double v = 0;
  if (!f.read(reinterpret_cast<char*>(&v), 8)) fail(strf("checkpoint: truncated at %s", what));
  return v;
}
std::string get_str(std::istream& f, const char* what) {
  const uint32_t n = get_u32(f, what);
  if (n > (1u << 20)) fail(strf("checkpoint: implausible string length at %s", what));
  std::string s(n, '\0');
  if (!f.read(s.data(), n)) fail(strf("checkpoint: truncated at %s", what));
  return s;
}

}  // namespace

Trainer::Trainer(ModelConfig mc, TrainConfig tc)
    : model_config_(std::move(mc)), config_(std::move(tc)) {
  model_ = Model<float>::create(model_config_, config_.seed);
  Rng seeder(config_.seed);
  seeder.next_u64();  // primitive stream
  seeder.next_u64();  // network stream
  sample_rng_ = Rng(seeder.next_u64());
}

void Trainer::attach_dataset(const Dataset& dataset) {
  dataset_ = &dataset;
  // TX normalization is fixed at first binding (or by the checkpoint); a
  // different eval dataset must not silently change the input scaling.
  if (!tx_bounds_fixed_) {
    model_.tx_bounds = dataset.tx_bounds;
    tx_bounds_fixed_ = true;
  }
  spectrum_cache_.clear();
  cache_all_ = int(dataset.samples.size()) <= kCacheLimit;
}

const Spectrum& Trainer::spectrum_for(int index) const {
  auto it = spectrum_cache_.find(index);
  if (it != spectrum_cache_.end()) return it->second;
  Spectrum s = dataset_->load_spectrum(index);
  if (!cache_all_ && int(spectrum_cache_.size()) >= kCacheLimit) spectrum_cache_.clear();
  return spectrum_cache_.emplace(index, std::move(s)).first->second;
}

float Trainer::train_step(int sample_index) {
  if (!dataset_) fail("trainer: no dataset attached");
  const TxSample& sample = dataset_->samples.at(sample_index);
  const Spectrum& target = spectrum_for(sample_index);

  ForwardGraph<float> g;
  build_forward(g, model_, sample.position, &target, config_.bypass, config_.render,
                config_.ssim, config_.loss_weights);
  const float loss = g.tape.val(g.loss)[0];
  if (!std::isfinite(loss)) {
    std::ofstream diag(config_.diagnostics_path);
    diag << strf("non-finite loss %g at step %lld (sample id %lld)\n", double(loss),
                 (long long)step_, (long long)sample.id);
    for (const auto& e : model_.params.entries()) {
      double lo = 0, hi = 0;
      int64_t nan = 0, inf = 0;
      bool first = true;
      for (float x : e.value.v) {
        if (std::isnan(x)) {
          ++nan;
        } else if (std::isinf(x)) {
          ++inf;
        } else {
          lo = first ? x : std::min(lo, double(x));
          hi = first ? x : std::max(hi, double(x));
          first = false;
        }
      }
      diag << strf("%s shape=(%d,%d) min=%g max=%g nan=%lld inf=%lld\n", e.name.c_str(),
                   e.value.rows, e.value.cols, lo, hi, (long long)nan, (long long)inf);
    }
    throw RuntimeFailure(strf("non-finite loss at step %lld; diagnostics: %s",
                              (long long)step_, config_.diagnostics_path.c_str()));
  }

  g.tape.backward(g.loss);

  ++adam_t_;
  std::vector<float> zeros;
  for (auto& e : model_.params.entries()) {
    const auto it = g.leaves.ids.find(e.name);
    const float* grad = nullptr;
    if (it != g.leaves.ids.end()) {
      grad = g.tape.grad(it->second).data();
    } else {
      // bypassed branches keep their parameters; they step with zero gradient
      if (zeros.size() < e.value.size()) zeros.assign(e.value.size(), 0.f);
      grad = zeros.data();
    }
    adam_update(e.value, e.m, e.v, grad, config_.lr_for(e.group), adam_t_, config_.adam);
  }
  project_primitive_domains(model_);
  ++step_;
  return loss;
}

void Trainer::run(int64_t steps, std::ostream* log) {
  if (!dataset_) fail("trainer: no dataset attached");
  if (dataset_->train_indices.empty()) fail("trainer: empty training split");
  const auto t0 = std::chrono::steady_clock::now();
  for (int64_t k = 0; k < steps; ++k) {
    const int idx = dataset_->train_indices[size_t(
        sample_rng_.next_below(int64_t(dataset_->train_indices.size())))];
    const float loss = train_step(idx);
    const bool last = k + 1 == steps;
    if (log && config_.log_every > 0 && (step_ % config_.log_every == 0 || last)) {
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      (*log) << strf("step=%lld loss=%.6f time=%.2f\n", (long long)step_, double(loss), secs);
    }
    if (config_.eval_every > 0 && (step_ % config_.eval_every == 0 || last) &&
        !dataset_->test_indices.empty()) {
      const EvalSummary s = evaluate(dataset_->test_indices);
      if (log)
        (*log) << strf("eval step=%lld median_ssim=%.6f mean_ssim=%.6f mean_l1=%.6f\n",
                       (long long)step_, s.median_ssim, s.mean_ssim, s.mean_l1);
    }
  }
}

EvalSummary Trainer::evaluate(const std::vector<int>& indices) const {
  if (!dataset_) fail("trainer: no dataset attached");
  if (indices.empty()) fail("evaluate: empty sample set");
  EvalSummary out;
  std::vector<double> ssims;
  for (int idx : indices) {
    const TxSample& sample = dataset_->samples.at(idx);
    const Spectrum& target = spectrum_for(idx);
    Tensor<float> pred = render(sample.position);
    EvalRecord r;
    r.id = sample.id;
    r.ssim = ssim_eval(pred.data(), target.v.data(), target.n_az, target.n_el, config_.ssim);
    r.l1 = l1_eval(pred.data(), target.v.data(), target.v.size());
    ssims.push_back(r.ssim);
    out.mean_ssim += r.ssim;
    out.mean_l1 += r.l1;
    out.records.push_back(r);
  }
  out.mean_ssim /= double(out.records.size());
  out.mean_l1 /= double(out.records.size());
  out.median_ssim = median_of(ssims);
  return out;
}

Tensor<float> Trainer::render(const std::array<double, 3>& tx) const {
  auto& self = const_cast<Trainer&>(*this);
  ForwardGraph<float> g;
  build_forward(g, self.model_, tx, nullptr, config_.bypass, config_.render, config_.ssim,
                config_.loss_weights);
  Tensor<float> out(config_.render.grid.n_az, config_.render.grid.n_el, g.tape.val(g.pred));
  return out;
}

void Trainer::save_checkpoint(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(strf("checkpoint: cannot open '%s' for writing", path.c_str()));
  f.write(kMagic, 4);
  put_u32(f, kVersion);
  put_str(f, model_config_.profile);

  const std::vector<std::pair<std::string, double>> kv = {
      {"np", double(model_config_.n_primitives)},
      {"nc", double(model_config_.n_clusters)},
      {"dim", double(model_config_.dim)},
      {"ffn.depth", double(model_config_.ffn.depth)},
      {"ffn.width", double(model_config_.ffn.width)},
      {"attn.layers", double(model_config_.attn.layers)},
      {"attn.heads", double(model_config_.attn.heads)},
      {"attn.ffn", double(model_config_.attn.ffn_width)},
      {"gs_order", double(model_config_.gs_order)},
      {"tx_order", double(model_config_.tx_order)},
      {"s_min", model_config_.init.s_min},
      {"s_max", model_config_.init.s_max},
      {"coarse_fraction", model_config_.init.coarse_fraction},
      {"w_coarse", model_config_.init.w_scale_coarse},
      {"w_fine", model_config_.init.w_scale_fine},
      {"bound_rot", model_config_.bounds.rotation},
      {"bound_logs", model_config_.bounds.log_scale},
      {"bound_op", model_config_.bounds.opacity},
      {"bbox_lo_x", model_.tx_bounds.lo[0]},
      {"bbox_lo_y", model_.tx_bounds.lo[1]},
      {"bbox_lo_z", model_.tx_bounds.lo[2]},
      {"bbox_hi_x", model_.tx_bounds.hi[0]},
      {"bbox_hi_y", model_.tx_bounds.hi[1]},
      {"bbox_hi_z", model_.tx_bounds.hi[2]},
  };
  put_u32(f, uint32_t(kv.size()));
  for (const auto& [k, v] : kv) {
    put_str(f, k);
    put_f64(f, v);
  }

  put_u64(f, uint64_t(step_));
  put_u64(f, uint64_t(adam_t_));
  put_u64(f, sample_rng_.state);

  put_u32(f, uint32_t(model_.params.size()));
  for (const auto& e : model_.params.entries()) {
    put_str(f, e.name);
    put_u32(f, uint32_t(e.group));
    put_u32(f, uint32_t(e.value.rows));
    put_u32(f, uint32_t(e.value.cols));
    f.write(reinterpret_cast<const char*>(e.value.data()), e.value.size() * sizeof(float));
    f.write(reinterpret_cast<const char*>(e.m.data()), e.m.size() * sizeof(float));
    f.write(reinterpret_cast<const char*>(e.v.data()), e.v.size() * sizeof(float));
  }
  if (!f) fail(strf("checkpoint: write failed for '%s'", path.c_str()));
}

Trainer Trainer::load_checkpoint(const std::string& path, const std::string& expected_profile) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(strf("checkpoint: cannot open '%s'", path.c_str()));
  char magic[4] = {0};
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    fail(strf("checkpoint: '%s' has wrong magic (not a BSWF checkpoint)", path.c_str()));
  const uint32_t version = get_u32(f, "version");
  if (version != kVersion)
    fail(strf("checkpoint: '%s' is format version %u, this build reads %u", path.c_str(),
              version, kVersion));
  const std::string profile = get_str(f, "profile");
  if (!expected_profile.empty() && profile != expected_profile)
    fail(strf("checkpoint: profile mismatch: file is '%s', configured '%s'", profile.c_str(),
              expected_profile.c_str()));

  std::unordered_map<std::string, double> kv;
  const uint32_t nkv = get_u32(f, "config count");
  for (uint32_t i = 0; i < nkv; ++i) {
    const std::string k = get_str(f, "config key");
    kv[k] = get_f64(f, "config value");
  }
  auto need = [&](const char* k) {
    const auto it = kv.find(k);
    if (it == kv.end()) fail(strf("checkpoint: missing config key '%s'", k));
    return it->second;
  };

  ModelConfig mc = ModelConfig::for_profile(profile);
  mc.n_primitives = int(need("np"));
  mc.n_clusters = int(need("nc"));
  mc.dim = int(need("dim"));
  mc.ffn.depth = int(need("ffn.depth"));
  mc.ffn.width = int(need("ffn.width"));
  mc.attn.layers = int(need("attn.layers"));
  mc.attn.heads = int(need("attn.heads"));
  mc.attn.ffn_width = int(need("attn.ffn"));
  mc.gs_order = int(need("gs_order"));
  mc.tx_order = int(need("tx_order"));
  mc.init.s_min = need("s_min");
  mc.init.s_max = need("s_max");
  mc.init.coarse_fraction = need("coarse_fraction");
  mc.init.w_scale_coarse = need("w_coarse");
  mc.init.w_scale_fine = need("w_fine");
  mc.bounds.rotation = need("bound_rot");
  mc.bounds.log_scale = need("bound_logs");
  mc.bounds.opacity = need("bound_op");

  Trainer t;
  t.model_config_ = mc;
  t.model_.cfg = mc;
  t.model_.rebuild_groups();
  t.model_.tx_bounds.lo = {need("bbox_lo_x"), need("bbox_lo_y"), need("bbox_lo_z")};
  t.model_.tx_bounds.hi = {need("bbox_hi_x"), need("bbox_hi_y"), need("bbox_hi_z")};
  t.tx_bounds_fixed_ = true;

  t.step_ = int64_t(get_u64(f, "step"));
  t.adam_t_ = int64_t(get_u64(f, "adam_t"));
  t.sample_rng_.state = get_u64(f, "rng");

  const uint32_t nt = get_u32(f, "tensor count");
  for (uint32_t i = 0; i < nt; ++i) {
    const std::string name = get_str(f, "tensor name");
    const auto group = ParamGroup(get_u32(f, "tensor group"));
    const int rows = int(get_u32(f, "tensor rows"));
    const int cols = int(get_u32(f, "tensor cols"));
    Tensor<float> value(rows, cols), m(rows, cols), v(rows, cols);
    if (!f.read(reinterpret_cast<char*>(value.data()), value.size() * sizeof(float)) ||
        !f.read(reinterpret_cast<char*>(m.data()), m.size() * sizeof(float)) ||
        !f.read(reinterpret_cast<char*>(v.data()), v.size() * sizeof(float)))
      fail(strf("checkpoint: truncated tensor payload for '%s'", name.c_str()));
    const int idx = t.model_.params.add(name, std::move(value), group);
    t.model_.params.at(idx).m = std::move(m);
    t.model_.params.at(idx).v = std::move(v);
  }
  char extra;
  if (f.read(&extra, 1)) fail(strf("checkpoint: trailing bytes in '%s'", path.c_str()));
  return t;
}

}  // namespace bisplat
