#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ptycholab/ptycho.hpp"

namespace ptycholab {

enum class Algorithm { WF, AWF, PMACE };

struct SolverConfig {
  Algorithm algorithm = Algorithm::WF;
  std::size_t iterations = 100;
  std::optional<double> step_size;  // gamma; computed from the probe when unset
  double kappa = 1.0;               // PMACE probe exponent
  double rho = 0.5;                 // Mann relaxation, (0, 1]
  double alpha = 0.5;               // PMACE prox noise-to-prior ratio
  double eps = 1e-12;               // |m| smoothing
  bool trace = false;
  const ComplexGrid *reference = nullptr;  // for NRMSE trace, optional
};

struct ReconTrace {
  std::vector<double> objective;  // iterations + 1 entries
  std::vector<double> nrmse;      // empty unless a reference was supplied
  std::vector<double> seconds;    // cumulative wall time

  std::string to_csv() const;  // iteration, objective, nrmse, seconds
};

// Un-scaled WF sum: sum_i D_i^T P^H F^H (m_i - y_i .* m_i/|m_i|_eps).
ComplexGrid wf_gradient(const ComplexGrid &xhat, const DiffractionSet &data,
                        const Probe &probe, const ScanGrid &grid, double eps);

// gamma = 1 / max(sum_i D_i^T |P|^2)
double wf_step_size(const Probe &probe, const ScanGrid &grid);

struct ReconResult {
  ComplexGrid image;
  ReconTrace trace;
};

ReconResult run_wf(const ComplexGrid &init, const DiffractionSet &data,
                   const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg);
ReconResult run_awf(const ComplexGrid &init, const DiffractionSet &data,
                    const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg);
ReconResult run_pmace(const ComplexGrid &init, const DiffractionSet &data,
                      const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg);

// Closed-form proximal map of the amplitude-matching cost at fixed phase.
ComplexGrid pmace_prox(const ComplexGrid &xi, const RealTensor &yi,
                       const Probe &probe, double alpha, double eps);

// x_bar = Lambda^-1 sum_i D_i^T (|P|^kappa .* x_i); zero where uncovered.
ComplexGrid pmace_consensus(const std::vector<ComplexGrid> &patches,
                            const Probe &probe, const ScanGrid &grid, double kappa);

// Energy-matched constant-magnitude image on covered pixels.
ComplexGrid init_image(const DiffractionSet &data, const Probe &probe,
                       const ScanGrid &grid);

}  // namespace ptycholab
