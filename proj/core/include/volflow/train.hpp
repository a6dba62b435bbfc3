#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "volflow/dataset.hpp"
#include "volflow/flow.hpp"
#include "volflow/model.hpp"

namespace volflow {

struct TrainConfig {
  std::string model = "tiny";
  int dim = 0, heads = 0, depth = 0;  // optional overrides, 0 = preset value
  double lr_peak = 2e-4;
  int warmup_steps = 100;
  int total_steps = 2000;
  int batch_per_step = 8;
  int accum_steps = 1;
  std::string regime = "startboost";
  double p_first = 0.30;
  uint64_t seed = 0;
  std::string data_dir;
  std::string out_dir;
  int checkpoint_every = 0;  // 0 = final only
  int threads = 1;
  double grad_clip = 0.0;  // 0 = off

  void validate() const;
  ModelConfig model_config(int latent_h, int latent_w) const;
  SamplingRegime sampling_regime() const;
};

TrainConfig parse_train_config(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string render_train_config(const TrainConfig& config);

// lr_peak * min(1, step/warmup), constant afterwards.
double lr_schedule(int64_t step, const TrainConfig& config);

struct OptimState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  GradBuffers m, v;
};

OptimState make_optim_state(const ModelParams& params);

// Bias-corrected moment update; aborts with the parameter name on
// non-finite gradients.
void optim_step(ModelParams& params, const GradBuffers& grads, OptimState& state, double lr,
                double grad_clip = 0.0);

// Everything sample/evaluate need without the dataset directory.
struct DataMeta {
  uint64_t codec_seed = 0, embed_seed = 0, feature_seed = 0;
  int resolution = 0, latent_h = 0, latent_w = 0;
  std::vector<double> channel_scale;
  ProbeCalibration probe_calib;

  static DataMeta from_dataset(const Dataset& ds);
  CodecBasis make_basis() const;
};

struct Checkpoint {
  uint32_t version = 1;
  TrainConfig config;
  DataMeta meta;
  ModelParams params;
  OptimState opt;
  int64_t step = 0;
  std::string data_rng_state, noise_rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

struct LossPoint {
  int64_t step;
  double loss;
  double lr;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;
};

// Full loop: sample pairs under the regime, accumulate gradients over
// accum_steps micro-batches, take one optimizer step at the scheduled lr.
// Bit-reproducible from (config, seed); pass a resume checkpoint to
// continue an interrupted run identically.
TrainResult train(const TrainConfig& config, const Dataset& dataset,
                  const Checkpoint* resume = nullptr);

// Convenience: loads the dataset, runs, writes loss.csv + checkpoints +
// a resolved-config snapshot into config.out_dir (when set).
TrainResult train(const TrainConfig& config, const std::string& resume_path = "");

std::string loss_curve_csv(const std::vector<LossPoint>& curve);

}  // namespace volflow
