#include "ptycholab/tensor.hpp"

#include <cmath>
#include <numbers>

namespace ptycholab {

RealTensor::RealTensor(std::vector<std::size_t> dims, double fill) : shape(std::move(dims)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  data.assign(n, fill);
}

bool is_pow2(std::size_t n) { return n > 0 && (n & (n - 1)) == 0; }

namespace {

// In-place radix-2 FFT over `n` elements at stride `stride`. sign = -1
// forward, +1 inverse. No normalization here.
void fft1d(cdouble *x, std::size_t n, std::size_t stride, int sign) {
  // bit-reversal permutation
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i * stride], x[j * stride]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    cdouble wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      cdouble w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        cdouble u = x[(i + k) * stride];
        cdouble v = x[(i + k + len / 2) * stride] * w;
        x[(i + k) * stride] = u + v;
        x[(i + k + len / 2) * stride] = u - v;
        w *= wl;
      }
    }
  }
}

ComplexGrid fft2_impl(const ComplexGrid &g, int sign) {
  if (!is_pow2(g.height) || !is_pow2(g.width))
    throw DimensionError("fft2: dims must be powers of two");
  ComplexGrid out = g;
  for (std::size_t r = 0; r < out.height; ++r)
    fft1d(out.data.data() + r * out.width, out.width, 1, sign);
  for (std::size_t c = 0; c < out.width; ++c)
    fft1d(out.data.data() + c, out.height, out.width, sign);
  double s = 1.0 / std::sqrt(static_cast<double>(out.height * out.width));
  for (auto &v : out.data) v *= s;
  return out;
}

void check_same(const ComplexGrid &a, const ComplexGrid &b) {
  if (!a.same_shape(b)) throw DimensionError("elementwise op: shape mismatch");
}

}  // namespace

ComplexGrid fft2(const ComplexGrid &g) { return fft2_impl(g, -1); }
ComplexGrid ifft2(const ComplexGrid &g) { return fft2_impl(g, +1); }

ComplexGrid add(const ComplexGrid &a, const ComplexGrid &b) {
  check_same(a, b);
  ComplexGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

ComplexGrid sub(const ComplexGrid &a, const ComplexGrid &b) {
  check_same(a, b);
  ComplexGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

ComplexGrid mul(const ComplexGrid &a, const ComplexGrid &b) {
  check_same(a, b);
  ComplexGrid out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

ComplexGrid conj_mul(const ComplexGrid &a, const ComplexGrid &b) {
  check_same(a, b);
  ComplexGrid out(a.height, a.width);
  for (std::size_t i = 0; i < out.size(); ++i)
    out.data[i] = std::conj(a.data[i]) * b.data[i];
  return out;
}

RealTensor abs(const ComplexGrid &g, double eps) {
  RealTensor out({g.height, g.width});
  for (std::size_t i = 0; i < g.size(); ++i) {
    double re = g.data[i].real(), im = g.data[i].imag();
    out.data[i] = std::sqrt(re * re + im * im + eps * eps);
  }
  return out;
}

ComplexGrid phase_unit(const ComplexGrid &g, double eps) {
  ComplexGrid out(g.height, g.width);
  for (std::size_t i = 0; i < g.size(); ++i) {
    double re = g.data[i].real(), im = g.data[i].imag();
    double a = std::sqrt(re * re + im * im + eps * eps);
    out.data[i] = g.data[i] / a;
  }
  return out;
}

ComplexGrid scale(const ComplexGrid &g, cdouble s) {
  ComplexGrid out = g;
  for (auto &v : out.data) v *= s;
  return out;
}

ComplexGrid mul_real(const ComplexGrid &g, const RealTensor &m) {
  if (m.shape.size() != 2 || m.rows() != g.height || m.cols() != g.width)
    throw DimensionError("mul_real: shape mismatch");
  ComplexGrid out = g;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= m.data[i];
  return out;
}

double max_abs2_reduce(const ComplexGrid &g) {
  double m = 0.0;
  for (const auto &v : g.data) m = std::max(m, std::norm(v));
  return m;
}

double norm2(const ComplexGrid &g) {
  double s = 0.0;
  for (const auto &v : g.data) s += std::norm(v);
  return std::sqrt(s);
}

cdouble inner(const ComplexGrid &a, const ComplexGrid &b) {
  check_same(a, b);
  cdouble s(0.0, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) s += std::conj(a.data[i]) * b.data[i];
  return s;
}

double norm2(const RealTensor &t) {
  double s = 0.0;
  for (double v : t.data) s += v * v;
  return std::sqrt(s);
}

}  // namespace ptycholab
