#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ptycholab/net.hpp"

namespace ptycholab {

struct PatternSpec {
  std::size_t n_locations = 0;  // N (perfect square)
  std::size_t spacing = 0;      // L
};

struct TrainConfig {
  std::size_t train_count = 512;
  std::size_t val_count = 16;
  std::size_t image_side = 32;
  std::size_t patch_side = 8;
  std::vector<PatternSpec> patterns = {{64, 2}, {16, 4}};
  std::optional<double> peak_rate;  // r_p; unset = noise-free
  double lambda = 1.0;
  std::size_t unroll_depth = 2;  // K
  double learning_rate = 1e-3;
  std::size_t epochs = 10;
  std::uint64_t seed = 0;
  std::string probe_kind = "A";
  ViTConfig vit;

  void validate() const;
};

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  std::map<std::string, RealTensor> m;
  std::map<std::string, RealTensor> v;
};

// Low-pass-filtered complex field, magnitude in [0.5, 1], phase in
// [-pi/2, pi/2]; deterministic per (seed, index).
GroundTruthSample gen_sample(std::size_t image_side, std::uint64_t seed,
                             std::uint64_t index);
std::vector<GroundTruthSample> gen_dataset(std::size_t count, std::size_t image_side,
                                           std::uint64_t seed);

// Bias-corrected Adam update; every parameter must have a gradient.
void adam_step(AdamState &state, ParamSet &params,
               const std::map<std::string, RealTensor> &grads, double lr);

struct EpochLog {
  std::size_t epoch;
  double train_loss;
  double val_nrmse;
  double seconds;
};

struct TrainResult {
  PtychoDVModel model;
  std::vector<EpochLog> log;

  std::string log_csv() const;  // epoch, train_loss, val_nrmse, seconds
};

TrainResult train(const TrainConfig &cfg);

// Checkpoint directory: manifest.json + one PTYT file per parameter.
void checkpoint_save(const PtychoDVModel &model, const std::filesystem::path &dir);
PtychoDVModel checkpoint_load(const std::filesystem::path &dir);

// Measurement simulation used by both training and the CLI.
struct Measured {
  ScanGrid grid;
  DiffractionSet data;
};
Measured simulate_measurements(const ComplexGrid &truth, const Probe &probe,
                               const PatternSpec &pattern, std::size_t patch_side,
                               std::optional<double> peak_rate, std::uint64_t noise_seed);

}  // namespace ptycholab
