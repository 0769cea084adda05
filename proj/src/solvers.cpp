#include "ptycholab/solvers.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "ptycholab/metrics.hpp"
#include "ptycholab/parallel.hpp"

namespace ptycholab {

std::string ReconTrace::to_csv() const {
  std::ostringstream os;
  os << "iteration,objective,nrmse,seconds\n";
  os.precision(12);
  for (std::size_t k = 0; k < objective.size(); ++k) {
    os << k << "," << objective[k] << ",";
    if (k < nrmse.size()) os << nrmse[k];
    os << "," << (k < seconds.size() ? seconds[k] : 0.0) << "\n";
  }
  return os.str();
}

ComplexGrid wf_gradient(const ComplexGrid &xhat, const DiffractionSet &data,
                        const Probe &probe, const ScanGrid &grid, double eps) {
  if (data.count() != grid.count())
    throw DimensionError("wf_gradient: pattern count mismatch");
  const std::size_t n = grid.count();
  const std::size_t s = grid.patch_side;
  std::vector<ComplexGrid> contrib(n);
#pragma omp parallel for schedule(static) if (par::enabled())
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    ComplexGrid mi = fft2(mul(probe.grid, extract_patch(xhat, grid, i)));
    ComplexGrid residual = sub(mi, mul_real(phase_unit(mi, eps), data.amplitudes[i]));
    contrib[i] = conj_mul(probe.grid, ifft2(residual));
  }
  ComplexGrid out(xhat.height, xhat.width);
  for (std::size_t i = 0; i < n; ++i) {  // fixed accumulation order
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < s; ++c)
        out.at(r0 + r, c0 + c) += contrib[i].at(r, c);
  }
  return out;
}

double wf_step_size(const Probe &probe, const ScanGrid &grid) {
  RealTensor lam2 = lambda_map(probe, grid, 2.0);
  double m = 0.0;
  for (double v : lam2.data) m = std::max(m, v);
  if (m <= 0.0) throw ContractError("wf_step_size: zero probe");
  return 1.0 / m;
}

namespace {

struct TraceRecorder {
  const SolverConfig &cfg;
  const DiffractionSet &data;
  const Probe &probe;
  const ScanGrid &grid;
  RealTensor mask;
  ReconTrace trace;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  TraceRecorder(const SolverConfig &c, const DiffractionSet &d, const Probe &p,
                const ScanGrid &g)
      : cfg(c), data(d), probe(p), grid(g), mask(lambda_map(p, g, 2.0)) {}

  void record(const ComplexGrid &x) {
    if (!cfg.trace) return;
    trace.objective.push_back(data_fidelity(x, data, probe, grid));
    if (cfg.reference) trace.nrmse.push_back(nrmse(x, *cfg.reference, &mask));
    trace.seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  }
};

}  // namespace

ReconResult run_wf(const ComplexGrid &init, const DiffractionSet &data,
                   const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg) {
  double gamma = cfg.step_size.value_or(wf_step_size(probe, grid));
  ComplexGrid x = init;
  TraceRecorder rec(cfg, data, probe, grid);
  rec.record(x);
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    ComplexGrid g = wf_gradient(x, data, probe, grid, cfg.eps);
    for (std::size_t j = 0; j < x.size(); ++j) x.data[j] -= gamma * g.data[j];
    rec.record(x);
  }
  return {std::move(x), std::move(rec.trace)};
}

ReconResult run_awf(const ComplexGrid &init, const DiffractionSet &data,
                    const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg) {
  double gamma = cfg.step_size.value_or(wf_step_size(probe, grid));
  ComplexGrid x = init;
  ComplexGrid z = init;
  double t = 1.0;
  TraceRecorder rec(cfg, data, probe, grid);
  rec.record(x);
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    ComplexGrid g = wf_gradient(z, data, probe, grid, cfg.eps);
    ComplexGrid x_next = z;
    for (std::size_t j = 0; j < x.size(); ++j) x_next.data[j] -= gamma * g.data[j];
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double beta = (t - 1.0) / t_next;
    for (std::size_t j = 0; j < x.size(); ++j)
      z.data[j] = x_next.data[j] + beta * (x_next.data[j] - x.data[j]);
    x = std::move(x_next);
    t = t_next;
    rec.record(x);
  }
  return {std::move(x), std::move(rec.trace)};
}

ComplexGrid pmace_prox(const ComplexGrid &xi, const RealTensor &yi,
                       const Probe &probe, double alpha, double eps) {
  if (xi.height != probe.side() || xi.width != probe.side())
    throw DimensionError("pmace_prox: patch/probe size mismatch");
  if (yi.shape.size() != 2 || yi.rows() != xi.height || yi.cols() != xi.width)
    throw DimensionError("pmace_prox: amplitude shape mismatch");
  ComplexGrid m = fft2(mul(probe.grid, xi));
  // optimal phase = phase of m; optimal magnitude = convex combination
  ComplexGrid u(m.height, m.width);
  ComplexGrid ph = phase_unit(m, eps);
  for (std::size_t j = 0; j < m.size(); ++j) {
    double mag = (alpha * std::abs(m.data[j]) + yi.data[j]) / (1.0 + alpha);
    u.data[j] = mag * ph.data[j];
  }
  ComplexGrid corr = ifft2(sub(u, m));
  double delta = 1e-3 * max_abs2_reduce(probe.grid);
  ComplexGrid out = xi;
  for (std::size_t j = 0; j < out.size(); ++j) {
    double p2 = std::norm(probe.grid.data[j]);
    out.data[j] += std::conj(probe.grid.data[j]) * corr.data[j] / (p2 + delta);
  }
  return out;
}

ComplexGrid pmace_consensus(const std::vector<ComplexGrid> &patches,
                            const Probe &probe, const ScanGrid &grid, double kappa) {
  if (patches.size() != grid.count())
    throw DimensionError("pmace_consensus: patch count mismatch");
  RealTensor absp = abs(probe.grid, 0.0);
  RealTensor weight({grid.patch_side, grid.patch_side});
  for (std::size_t j = 0; j < weight.size(); ++j)
    weight.data[j] = std::pow(absp.data[j], kappa);
  ComplexGrid acc(grid.image_height, grid.image_width);
  RealTensor lam({grid.image_height, grid.image_width});
  std::size_t s = grid.patch_side;
  for (std::size_t i = 0; i < grid.count(); ++i) {
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < s; ++c) {
        acc.at(r0 + r, c0 + c) += weight.at(r, c) * patches[i].at(r, c);
        lam.at(r0 + r, c0 + c) += weight.at(r, c);
      }
  }
  for (std::size_t j = 0; j < acc.size(); ++j)
    acc.data[j] = lam.data[j] > 0.0 ? acc.data[j] / lam.data[j] : cdouble(0.0, 0.0);
  return acc;
}

ReconResult run_pmace(const ComplexGrid &init, const DiffractionSet &data,
                      const Probe &probe, const ScanGrid &grid, const SolverConfig &cfg) {
  const std::size_t n = grid.count();
  std::vector<ComplexGrid> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = extract_patch(init, grid, i);

  auto prox_all = [&](const std::vector<ComplexGrid> &state) {
    std::vector<ComplexGrid> out(n);
#pragma omp parallel for schedule(static) if (par::enabled())
    for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
      std::size_t i = static_cast<std::size_t>(ii);
      out[i] = pmace_prox(state[i], data.amplitudes[i], probe, cfg.alpha, cfg.eps);
    }
    return out;
  };
  auto image_of = [&](const std::vector<ComplexGrid> &state) {
    return pmace_consensus(prox_all(state), probe, grid, cfg.kappa);
  };

  TraceRecorder rec(cfg, data, probe, grid);
  if (cfg.trace) rec.record(pmace_consensus(w, probe, grid, cfg.kappa));
  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    std::vector<ComplexGrid> fw = prox_all(w);
    std::vector<ComplexGrid> v(n);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] = fw[i];
      for (std::size_t j = 0; j < v[i].size(); ++j)
        v[i].data[j] = 2.0 * v[i].data[j] - w[i].data[j];
    }
    ComplexGrid xbar = pmace_consensus(v, probe, grid, cfg.kappa);
    for (std::size_t i = 0; i < n; ++i) {
      ComplexGrid gi = extract_patch(xbar, grid, i);
      for (std::size_t j = 0; j < w[i].size(); ++j) {
        cdouble u = 2.0 * gi.data[j] - v[i].data[j];
        w[i].data[j] = (1.0 - cfg.rho) * w[i].data[j] + cfg.rho * u;
      }
    }
    if (cfg.trace) rec.record(image_of(w));
  }
  ComplexGrid final_image = cfg.iterations == 0
                                ? pmace_consensus(w, probe, grid, cfg.kappa)
                                : image_of(w);
  return {std::move(final_image), std::move(rec.trace)};
}

ComplexGrid init_image(const DiffractionSet &data, const Probe &probe,
                       const ScanGrid &grid) {
  if (data.count() == 0) throw ContractError("init_image: empty data");
  double meas = 0.0;
  for (const auto &y : data.amplitudes)
    for (double v : y.data) meas += v * v;
  meas /= static_cast<double>(data.count());
  double probe_energy = 0.0;
  for (const auto &v : probe.grid.data) probe_energy += std::norm(v);
  double mag = probe_energy > 0.0 ? std::sqrt(meas / probe_energy) : 0.0;
  RealTensor cover = coverage_map(grid);
  ComplexGrid out(grid.image_height, grid.image_width);
  for (std::size_t j = 0; j < out.size(); ++j)
    out.data[j] = cover.data[j] > 0.0 ? cdouble(mag, 0.0) : cdouble(0.0, 0.0);
  return out;
}

}  // namespace ptycholab
