// Timing harness for the OpenMP kernels against the serial reference path.
// Also verifies both paths produce bit-identical results.

#include <chrono>
#include <cstdio>
#include <functional>

#include "ptycholab/parallel.hpp"
#include "ptycholab/solvers.hpp"
#include "ptycholab/trainer.hpp"

using namespace ptycholab;

namespace {

double time_of(const std::function<void()> &fn, int reps) {
  fn();  // warm up
  auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
         reps;
}

}  // namespace

int main() {
  const std::size_t image = 64, s = 8;
  ComplexGrid truth = gen_sample(image, 1, 0).image;
  Probe probe = make_probe("A", s, 1);
  ScanGrid grid = make_scan_grid(image, s, 256, 2);
  DiffractionSet data = detect_noise_free(forward_amplitudes(truth, probe, grid), grid);
  ComplexGrid x0 = init_image(data, probe, grid);
  SolverConfig cfg;
  cfg.iterations = 1;

  struct Kernel {
    const char *name;
    std::function<void()> run;
    std::function<double()> checksum;
  };
  std::vector<RealTensor> fwd_out;
  ComplexGrid grad_out;
  ComplexGrid pmace_out;
  std::vector<Kernel> kernels = {
      {"forward_amplitudes",
       [&] { fwd_out = forward_amplitudes(truth, probe, grid); },
       [&] {
         double c = 0.0;
         for (const auto &t : fwd_out)
           for (double v : t.data) c += v;
         return c;
       }},
      {"wf_gradient", [&] { grad_out = wf_gradient(x0, data, probe, grid, 1e-12); },
       [&] { return norm2(grad_out); }},
      {"pmace_iteration",
       [&] { pmace_out = run_pmace(x0, data, probe, grid, cfg).image; },
       [&] { return norm2(pmace_out); }},
  };

  std::printf("%-20s %12s %12s %8s %10s\n", "kernel", "serial (s)", "openmp (s)",
              "speedup", "identical");
  int reps = 5;
  for (auto &k : kernels) {
    par::set_enabled(false);
    double t_serial = time_of(k.run, reps);
    double c_serial = k.checksum();
    par::set_enabled(true);
    double t_par = time_of(k.run, reps);
    double c_par = k.checksum();
    std::printf("%-20s %12.6f %12.6f %7.2fx %10s\n", k.name, t_serial, t_par,
                t_serial / t_par, c_serial == c_par ? "yes" : "NO");
  }
  par::set_enabled(true);
  return 0;
}
