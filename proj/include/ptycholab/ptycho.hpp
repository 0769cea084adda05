#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ptycholab/tensor.hpp"

namespace ptycholab {

struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Probe {
  ComplexGrid grid;  // s x s
  std::string label;  // "A", "B" or custom
  std::size_t side() const { return grid.height; }
};

// Ordered probe locations; all patches lie fully inside the image.
struct ScanGrid {
  std::vector<std::pair<std::size_t, std::size_t>> locations;  // top-left (row, col)
  std::size_t patch_side = 0;
  std::size_t image_height = 0;
  std::size_t image_width = 0;

  std::size_t count() const { return locations.size(); }
  // normalized patch-center coordinates in [0,1]^2
  std::pair<double, double> center(std::size_t i) const;
};

struct NoiseInfo {
  bool poisson = false;
  double peak_rate = 0.0;     // r_p
  std::uint64_t seed = 0;
  double rescale = 1.0;       // I_max / r_p
};

struct DiffractionSet {
  std::vector<RealTensor> amplitudes;  // N tensors, s x s, nonnegative
  std::vector<std::pair<double, double>> coords;  // normalized centers
  NoiseInfo noise;

  std::size_t count() const { return amplitudes.size(); }
};

struct GroundTruthSample {
  ComplexGrid image;
  std::uint64_t seed = 0;
  std::uint64_t index = 0;
};

ComplexGrid extract_patch(const ComplexGrid &x, const ScanGrid &grid, std::size_t i);
ComplexGrid embed_patch(const ComplexGrid &p, const ScanGrid &grid, std::size_t i,
                        std::size_t canvas_h, std::size_t canvas_w);

// Noise-free amplitudes y_i = |fft2(P .* D_i x)|.
std::vector<RealTensor> forward_amplitudes(const ComplexGrid &x, const Probe &probe,
                                           const ScanGrid &grid);

// Poisson detector. r_p <= 0 is rejected; use detect_noise_free for the
// infinite-photon sentinel.
DiffractionSet detect_poisson(const std::vector<RealTensor> &amplitudes,
                              const ScanGrid &grid, double peak_rate,
                              std::uint64_t seed, bool per_pattern_max = false);
DiffractionSet detect_noise_free(const std::vector<RealTensor> &amplitudes,
                                 const ScanGrid &grid);

// Centered sqrt(N) x sqrt(N) grid with spacing L.
ScanGrid make_scan_grid(std::size_t image_side, std::size_t patch_side,
                        std::size_t n_locations, std::size_t spacing);

Probe make_probe(const std::string &kind, std::size_t side, std::uint64_t seed);

// Lambda = sum_i D_i^T |P|^kappa
RealTensor lambda_map(const Probe &probe, const ScanGrid &grid, double kappa);

// Per-pixel patch coverage count.
RealTensor coverage_map(const ScanGrid &grid);

// sum_i (1 / 2 sigma^2) || y_i - |F P D_i x| ||^2
double data_fidelity(const ComplexGrid &x, const DiffractionSet &data,
                     const Probe &probe, const ScanGrid &grid, double sigma = 1.0);

}  // namespace ptycholab
