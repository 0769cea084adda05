#include "ptycholab/ptycho.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "ptycholab/parallel.hpp"

namespace ptycholab {

namespace par {
namespace {
bool g_enabled = true;
}
bool enabled() { return g_enabled; }
void set_enabled(bool on) { g_enabled = on; }
}  // namespace par

std::pair<double, double> ScanGrid::center(std::size_t i) const {
  auto [r, c] = locations.at(i);
  double h = static_cast<double>(image_height);
  double w = static_cast<double>(image_width);
  double s = static_cast<double>(patch_side);
  return {(static_cast<double>(r) + s / 2.0) / h,
          (static_cast<double>(c) + s / 2.0) / w};
}

ComplexGrid extract_patch(const ComplexGrid &x, const ScanGrid &grid, std::size_t i) {
  if (i >= grid.count()) throw IndexError("extract_patch: index out of range");
  auto [r0, c0] = grid.locations[i];
  std::size_t s = grid.patch_side;
  if (r0 + s > x.height || c0 + s > x.width)
    throw DimensionError("extract_patch: patch exceeds image");
  ComplexGrid p(s, s);
  for (std::size_t r = 0; r < s; ++r)
    for (std::size_t c = 0; c < s; ++c) p.at(r, c) = x.at(r0 + r, c0 + c);
  return p;
}

ComplexGrid embed_patch(const ComplexGrid &p, const ScanGrid &grid, std::size_t i,
                        std::size_t canvas_h, std::size_t canvas_w) {
  if (i >= grid.count()) throw IndexError("embed_patch: index out of range");
  if (p.height != grid.patch_side || p.width != grid.patch_side)
    throw DimensionError("embed_patch: patch side mismatch");
  auto [r0, c0] = grid.locations[i];
  ComplexGrid out(canvas_h, canvas_w);
  for (std::size_t r = 0; r < p.height; ++r)
    for (std::size_t c = 0; c < p.width; ++c) out.at(r0 + r, c0 + c) = p.at(r, c);
  return out;
}

std::vector<RealTensor> forward_amplitudes(const ComplexGrid &x, const Probe &probe,
                                           const ScanGrid &grid) {
  if (probe.side() != grid.patch_side)
    throw DimensionError("forward_amplitudes: probe side != patch side");
  const std::size_t n = grid.count();
  std::vector<RealTensor> out(n);
#pragma omp parallel for schedule(static) if (par::enabled())
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    ComplexGrid xi = extract_patch(x, grid, i);
    out[i] = abs(fft2(mul(probe.grid, xi)), 0.0);
  }
  return out;
}

namespace {

double global_max_intensity(const std::vector<RealTensor> &amplitudes) {
  double m = 0.0;
  for (const auto &a : amplitudes)
    for (double v : a.data) m = std::max(m, v * v);
  return m;
}

}  // namespace

DiffractionSet detect_noise_free(const std::vector<RealTensor> &amplitudes,
                                 const ScanGrid &grid) {
  DiffractionSet out;
  out.amplitudes = amplitudes;
  for (std::size_t i = 0; i < grid.count(); ++i) out.coords.push_back(grid.center(i));
  out.noise = NoiseInfo{};
  return out;
}

DiffractionSet detect_poisson(const std::vector<RealTensor> &amplitudes,
                              const ScanGrid &grid, double peak_rate,
                              std::uint64_t seed, bool per_pattern_max) {
  if (peak_rate <= 0.0) throw ContractError("detect_poisson: peak rate must be > 0");
  DiffractionSet out;
  out.noise.poisson = true;
  out.noise.peak_rate = peak_rate;
  out.noise.seed = seed;
  std::mt19937_64 rng(seed);
  double imax_global = global_max_intensity(amplitudes);
  out.noise.rescale = imax_global / peak_rate;
  out.amplitudes.reserve(amplitudes.size());
  for (const auto &a : amplitudes) {
    double imax = imax_global;
    if (per_pattern_max) {
      imax = 0.0;
      for (double v : a.data) imax = std::max(imax, v * v);
    }
    RealTensor noisy(a.shape);
    for (std::size_t j = 0; j < a.size(); ++j) {
      double intensity = a.data[j] * a.data[j];
      double lambda = imax > 0.0 ? intensity / imax * peak_rate : 0.0;
      double counts = 0.0;
      if (lambda > 0.0) {
        std::poisson_distribution<long long> pois(lambda);
        counts = static_cast<double>(pois(rng));
      }
      noisy.data[j] = std::sqrt(counts * imax / peak_rate);
    }
    out.amplitudes.push_back(std::move(noisy));
  }
  for (std::size_t i = 0; i < grid.count(); ++i) out.coords.push_back(grid.center(i));
  return out;
}

ScanGrid make_scan_grid(std::size_t image_side, std::size_t patch_side,
                        std::size_t n_locations, std::size_t spacing) {
  auto root = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n_locations))));
  if (root * root != n_locations)
    throw GeometryError("make_scan_grid: N must be a perfect square");
  std::size_t span = (root - 1) * spacing + patch_side;
  if (span > image_side)
    throw GeometryError("make_scan_grid: pattern overflows image (span " +
                        std::to_string(span) + " > side " + std::to_string(image_side) + ")");
  std::size_t offset = (image_side - span) / 2;
  ScanGrid grid;
  grid.patch_side = patch_side;
  grid.image_height = image_side;
  grid.image_width = image_side;
  for (std::size_t r = 0; r < root; ++r)
    for (std::size_t c = 0; c < root; ++c)
      grid.locations.emplace_back(offset + r * spacing, offset + c * spacing);
  return grid;
}

Probe make_probe(const std::string &kind, std::size_t side, std::uint64_t seed) {
  if (side < 4) throw ContractError("make_probe: side must be >= 4");
  std::mt19937_64 rng(seed ^ (kind == "B" ? 0x9e3779b97f4a7c15ULL : 0ULL));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Probe probe;
  probe.label = kind;
  probe.grid = ComplexGrid(side, side);
  double s = static_cast<double>(side);
  double cx = (s - 1.0) / 2.0;
  // quadratic phase strength in pi units; B is a smaller, strongly
  // defocused aperture
  double quad = kind == "B" ? 5.0 + 2.0 * unit(rng) : 1.5 + unit(rng);
  double cut = kind == "B" ? 0.3 : 0.35;
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) {
      double dr = (static_cast<double>(r) - cx) / s;
      double dc = (static_cast<double>(c) - cx) / s;
      double rad = std::sqrt(dr * dr + dc * dc);
      double mag = rad <= cut ? 1.0 : 0.0;
      double phase = std::numbers::pi * quad * rad * rad;
      probe.grid.at(r, c) = mag * cdouble(std::cos(phase), std::sin(phase));
    }
  }
  if (max_abs2_reduce(probe.grid) <= 0.0)
    throw ContractError("make_probe: empty aperture");
  return probe;
}

RealTensor lambda_map(const Probe &probe, const ScanGrid &grid, double kappa) {
  if (kappa < 0.0) throw ContractError("lambda_map: kappa must be >= 0");
  RealTensor absp = abs(probe.grid, 0.0);
  RealTensor out({grid.image_height, grid.image_width});
  std::size_t s = grid.patch_side;
  for (std::size_t i = 0; i < grid.count(); ++i) {
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < s; ++c)
        out.at(r0 + r, c0 + c) += std::pow(absp.at(r, c), kappa);
  }
  return out;
}

RealTensor coverage_map(const ScanGrid &grid) {
  RealTensor out({grid.image_height, grid.image_width});
  std::size_t s = grid.patch_side;
  for (std::size_t i = 0; i < grid.count(); ++i) {
    auto [r0, c0] = grid.locations[i];
    for (std::size_t r = 0; r < s; ++r)
      for (std::size_t c = 0; c < s; ++c) out.at(r0 + r, c0 + c) += 1.0;
  }
  return out;
}

double data_fidelity(const ComplexGrid &x, const DiffractionSet &data,
                     const Probe &probe, const ScanGrid &grid, double sigma) {
  if (sigma <= 0.0) throw ContractError("data_fidelity: sigma must be > 0");
  if (data.count() != grid.count())
    throw DimensionError("data_fidelity: pattern count mismatch");
  const std::size_t n = grid.count();
  std::vector<double> parts(n, 0.0);
#pragma omp parallel for schedule(static) if (par::enabled())
  for (long long ii = 0; ii < static_cast<long long>(n); ++ii) {
    std::size_t i = static_cast<std::size_t>(ii);
    ComplexGrid mi = fft2(mul(probe.grid, extract_patch(x, grid, i)));
    RealTensor mag = abs(mi, 0.0);
    const RealTensor &yi = data.amplitudes[i];
    if (!mag.same_shape(yi)) throw DimensionError("data_fidelity: amplitude shape");
    double s = 0.0;
    for (std::size_t j = 0; j < mag.size(); ++j) {
      double d = yi.data[j] - mag.data[j];
      s += d * d;
    }
    parts[i] = s;
  }
  double total = 0.0;
  for (double p : parts) total += p;  // fixed reduction order
  return total / (2.0 * sigma * sigma);
}

}  // namespace ptycholab
