#pragma once
// Training loop: one full-spectrum render per step, composite loss, adjoint
// pass, Adam update per parameter group, domain projections, checkpointing
// and evaluation.

#include <iosfwd>

#include "bisplat/pipeline.hpp"

namespace bisplat {

struct TrainConfig {
  int64_t steps = 30000;
  uint64_t seed = 1;
  double lr_network = 1e-3;
  double lr_position = 2e-3;
  double lr_shape = 5e-3;
  double lr_opacity = 5e-2;
  AdamConfig adam;
  int64_t eval_every = 0;  // 0 = off
  int64_t log_every = 50;
  BypassFlags bypass;
  RenderOptions render;
  SsimConfig ssim;
  LossWeights loss_weights;
  std::string diagnostics_path = "bisplat_diag.txt";

  double lr_for(ParamGroup g) const {
    switch (g) {
      case ParamGroup::network: return lr_network;
      case ParamGroup::position: return lr_position;
      case ParamGroup::shape: return lr_shape;
      case ParamGroup::opacity: return lr_opacity;
    }
    return lr_network;
  }
};

struct EvalRecord {
  int64_t id = 0;
  double ssim = 0.0;
  double l1 = 0.0;
};

struct EvalSummary {
  std::vector<EvalRecord> records;
  double median_ssim = 0.0;
  double mean_ssim = 0.0;
  double mean_l1 = 0.0;
};

class Trainer {
 public:
  Trainer(ModelConfig mc, TrainConfig tc);

  // Binds the dataset: caches spectra for small sets and fixes TX bounds.
  void attach_dataset(const Dataset& dataset);

  // Runs one optimization step on the given training sample; returns loss.
  float train_step(int sample_index);

  // Runs steps drawing training samples from the trainer's RNG. `log` may be
  // null; eval lines are emitted when eval_every is set.
  void run(int64_t steps, std::ostream* log);

  EvalSummary evaluate(const std::vector<int>& indices) const;

  Tensor<float> render(const std::array<double, 3>& tx) const;

  void save_checkpoint(const std::string& path) const;
  static Trainer load_checkpoint(const std::string& path,
                                 const std::string& expected_profile = "");

  Model<float>& model() { return model_; }
  const Model<float>& model() const { return model_; }
  const TrainConfig& config() const { return config_; }
  TrainConfig& config() { return config_; }
  int64_t step() const { return step_; }
  const Dataset* dataset() const { return dataset_; }

 private:
  Trainer() = default;

  const Spectrum& spectrum_for(int index) const;

  ModelConfig model_config_;
  TrainConfig config_;
  Model<float> model_;
  Rng sample_rng_{1};
  int64_t step_ = 0;
  int64_t adam_t_ = 0;
  const Dataset* dataset_ = nullptr;
  bool tx_bounds_fixed_ = false;
  mutable std::unordered_map<int, Spectrum> spectrum_cache_;
  bool cache_all_ = false;
};

}  // namespace bisplat
