#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ptycholab/autodiff.hpp"
#include "ptycholab/ptycho.hpp"

namespace ptycholab {

struct ViTConfig {
  std::size_t token_dim = 64;   // d, per feature stream; tokens are 2d wide
  std::size_t depth = 4;        // attention blocks
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  std::size_t pos_bands = 10;   // L_f
  std::size_t patch_side = 8;

  void validate() const;
};

// Named, ordered parameter bundle. Order is fixed at construction and is
// the checkpoint serialization order.
struct ParamSet {
  std::vector<std::pair<std::string, RealTensor>> params;

  RealTensor &get(const std::string &name);
  const RealTensor &get(const std::string &name) const;
  bool has(const std::string &name) const;
  void add(const std::string &name, RealTensor t);
};

struct PtychoDVModel {
  ViTConfig vit;
  std::size_t unroll_depth = 3;  // K
  double gamma = 0.0;            // WF step scalar, solver-computed
  double eps = 1e-8;             // |m| smoothing in the differentiable path
  std::size_t cnn_width = 16;
  bool per_iter_phi = false;     // one phi shared across K steps by default
  ParamSet params;

  static PtychoDVModel create(const ViTConfig &cfg, std::size_t unroll_depth,
                              std::uint64_t seed, std::size_t cnn_width = 16,
                              bool per_iter_phi = false);
};

// Fourier features [sin(2^l pi c), cos(2^l pi c)] for l = 0..L_f, both
// coordinates; length 4 (L_f + 1).
RealTensor positional_encode(double row, double col, std::size_t bands);

// Parameter leaves bound to one tape, plus the id -> name map the trainer
// uses to key gradients.
struct BoundParams {
  std::map<std::string, ad::Var> vars;
  std::map<std::size_t, std::string> names_by_id;

  static BoundParams bind(ad::Tape &tape, const ParamSet &params);
  ad::Var operator[](const std::string &name) const { return vars.at(name); }
};

// ViT over measurement tokens: N complex patches as {2, s, s} vars.
std::vector<ad::Var> vit_forward(ad::Tape &tape, const BoundParams &p,
                                 const ViTConfig &cfg, const DiffractionSet &data);

// Count-averaged differentiable overlay; zero where uncovered.
ad::Var stitch(ad::Tape &tape, const std::vector<ad::Var> &patches,
               const ScanGrid &grid);
ComplexGrid stitch(const std::vector<ComplexGrid> &patches, const ScanGrid &grid);

// K unrolled WF data steps each followed by the residual CNN refiner.
ad::Var du_forward(ad::Tape &tape, const BoundParams &p, const PtychoDVModel &model,
                   ad::Var x0, const DiffractionSet &data, const Probe &probe,
                   const ScanGrid &grid);

struct ModelOutput {
  ad::Var image;                 // {2, H, W}
  std::vector<ad::Var> patches;  // ViT patches, {2, s, s} each
};

ModelOutput model_forward(ad::Tape &tape, const BoundParams &p,
                          const PtychoDVModel &model, const DiffractionSet &data,
                          const Probe &probe, const ScanGrid &grid);

// || xK - x ||^2 + lambda sum_i || xi_hat - xi ||^2 over real/imag channels.
ad::Var model_loss(ad::Tape &tape, const ModelOutput &out, const ComplexGrid &truth,
                   const ScanGrid &grid, double lambda);

// Convenience: full forward on a scratch tape, returning plain grids.
struct InferenceResult {
  ComplexGrid image;
  std::vector<ComplexGrid> vit_patches;
};
InferenceResult infer(const PtychoDVModel &model, const DiffractionSet &data,
                      const Probe &probe, const ScanGrid &grid);

}  // namespace ptycholab
